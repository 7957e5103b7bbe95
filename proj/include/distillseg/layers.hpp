#pragma once

#include <Eigen/Core>

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "distillseg/random.hpp"
#include "distillseg/tensor.hpp"

namespace distillseg::nn {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
struct Parameter {
    std::string name;
    Tensor<Scalar> value;
    Tensor<Scalar> grad;
    /// Buffers (running statistics) are saved with the network but never updated by optimizers.
    bool trainable = true;

    Parameter(std::string n, Shape shape, bool train = true)
        : name(std::move(n)), value(shape), grad(train ? shape : Shape{0}), trainable(train) {}
};

/// A differentiable layer. `forward` records what `backward` needs; `infer`
/// is a pure evaluation that touches no member state.
template <typename Scalar>
class Module {
public:
    using T = Tensor<Scalar>;

    virtual ~Module() = default;
    virtual T forward(const T& x) = 0;
    virtual T infer(const T& x) const = 0;
    /// Accumulates parameter gradients and returns the input gradient.
    virtual T backward(const T& grad_out) = 0;
    virtual void collect(std::vector<Parameter<Scalar>*>& /*out*/) {}
};

namespace detail {

struct ConvGeometry {
    Index in_c, d, h, w;
    Index kernel, stride, pad;
    Index od, oh, ow;

    Index out_voxels() const { return od * oh * ow; }
    Index cols() const { return in_c * kernel * kernel * kernel; }
};

/// Fills `cols` (out_voxels x in_c*k^3, column-major): column j holds the
/// input sample under kernel tap j for every output voxel.
template <typename Scalar>
void im2col(const Scalar* x, const ConvGeometry& g, Scalar* cols) {
    const Index nv = g.out_voxels();
    const Index k = g.kernel;
    Index j = 0;
    for (Index c = 0; c < g.in_c; ++c)
        for (Index kz = 0; kz < k; ++kz)
            for (Index ky = 0; ky < k; ++ky)
                for (Index kx = 0; kx < k; ++kx, ++j) {
                    Scalar* col = cols + j * nv;
                    const Index x_lo = std::max<Index>(0, (g.pad - kx + g.stride - 1) / g.stride);
                    const Index x_hi = std::min<Index>(g.ow, (g.w + g.pad - kx + g.stride - 1) / g.stride);
                    for (Index oz = 0; oz < g.od; ++oz) {
                        const Index iz = oz * g.stride + kz - g.pad;
                        for (Index oy = 0; oy < g.oh; ++oy, col += g.ow) {
                            const Index iy = oy * g.stride + ky - g.pad;
                            if (iz < 0 || iz >= g.d || iy < 0 || iy >= g.h || x_hi <= x_lo) {
                                std::fill(col, col + g.ow, Scalar(0));
                                continue;
                            }
                            const Scalar* row = x + ((c * g.d + iz) * g.h + iy) * g.w;
                            std::fill(col, col + x_lo, Scalar(0));
                            if (g.stride == 1) {
                                std::copy(row + x_lo + kx - g.pad, row + x_hi + kx - g.pad, col + x_lo);
                            } else {
                                for (Index ox = x_lo; ox < x_hi; ++ox) col[ox] = row[ox * g.stride + kx - g.pad];
                            }
                            std::fill(col + x_hi, col + g.ow, Scalar(0));
                        }
                    }
                }
}

/// Adjoint of im2col: scatter-adds column entries back into `dx`.
template <typename Scalar>
void col2im(const Scalar* cols, const ConvGeometry& g, Scalar* dx) {
    const Index nv = g.out_voxels();
    const Index k = g.kernel;
    Index j = 0;
    for (Index c = 0; c < g.in_c; ++c)
        for (Index kz = 0; kz < k; ++kz)
            for (Index ky = 0; ky < k; ++ky)
                for (Index kx = 0; kx < k; ++kx, ++j) {
                    const Scalar* col = cols + j * nv;
                    const Index x_lo = std::max<Index>(0, (g.pad - kx + g.stride - 1) / g.stride);
                    const Index x_hi = std::min<Index>(g.ow, (g.w + g.pad - kx + g.stride - 1) / g.stride);
                    for (Index oz = 0; oz < g.od; ++oz) {
                        const Index iz = oz * g.stride + kz - g.pad;
                        for (Index oy = 0; oy < g.oh; ++oy, col += g.ow) {
                            const Index iy = oy * g.stride + ky - g.pad;
                            if (iz < 0 || iz >= g.d || iy < 0 || iy >= g.h) continue;
                            Scalar* row = dx + ((c * g.d + iz) * g.h + iy) * g.w;
                            for (Index ox = x_lo; ox < x_hi; ++ox) row[ox * g.stride + kx - g.pad] += col[ox];
                        }
                    }
                }
}

/// Per-thread scratch for column matrices; reused across calls.
template <typename Scalar>
Matrix<Scalar>& workspace(int slot) {
    thread_local Matrix<Scalar> buffers[2];
    return buffers[slot];
}

/// Interpolation taps for 2x linear upsampling with half-pixel centers.
struct UpsampleTaps {
    std::vector<Index> lo, hi;
    std::vector<double> w_hi;

    explicit UpsampleTaps(Index n) {
        for (Index j = 0; j < 2 * n; ++j) {
            double src = (static_cast<double>(j) + 0.5) / 2.0 - 0.5;
            if (src < 0) src = 0;
            const auto i0 = static_cast<Index>(std::floor(src));
            lo.push_back(i0);
            hi.push_back(std::min(i0 + 1, n - 1));
            w_hi.push_back(src - static_cast<double>(i0));
        }
    }
};

/// Linear 2x upsampling along one axis of a tensor viewed as (outer, n, inner).
template <typename Scalar>
Tensor<Scalar> upsample_axis(const Tensor<Scalar>& x, std::size_t axis) {
    std::vector<Index> dims = x.shape().dims();
    const Index n = dims[axis];
    const Index inner = x.shape().stride(axis);
    const Index outer = x.size() / (n * inner);
    dims[axis] = 2 * n;
    Tensor<Scalar> out{Shape(dims)};
    const UpsampleTaps taps(n);
    for (Index o = 0; o < outer; ++o) {
        const Scalar* src = x.data() + o * n * inner;
        Scalar* dst = out.data() + o * 2 * n * inner;
        for (Index j = 0; j < 2 * n; ++j) {
            const auto w1 = static_cast<Scalar>(taps.w_hi[j]);
            const Scalar w0 = Scalar(1) - w1;
            const Scalar* a = src + taps.lo[j] * inner;
            const Scalar* b = src + taps.hi[j] * inner;
            Scalar* d = dst + j * inner;
            for (Index i = 0; i < inner; ++i) d[i] = w0 * a[i] + w1 * b[i];
        }
    }
    return out;
}

template <typename Scalar>
Tensor<Scalar> upsample_axis_adjoint(const Tensor<Scalar>& g, std::size_t axis) {
    std::vector<Index> dims = g.shape().dims();
    const Index n = dims[axis] / 2;
    const Index inner = g.shape().stride(axis);
    const Index outer = g.size() / (2 * n * inner);
    dims[axis] = n;
    Tensor<Scalar> out{Shape(dims)};
    const UpsampleTaps taps(n);
    for (Index o = 0; o < outer; ++o) {
        const Scalar* src = g.data() + o * 2 * n * inner;
        Scalar* dst = out.data() + o * n * inner;
        for (Index j = 0; j < 2 * n; ++j) {
            const auto w1 = static_cast<Scalar>(taps.w_hi[j]);
            const Scalar w0 = Scalar(1) - w1;
            Scalar* a = dst + taps.lo[j] * inner;
            Scalar* b = dst + taps.hi[j] * inner;
            const Scalar* s = src + j * inner;
            for (Index i = 0; i < inner; ++i) {
                a[i] += w0 * s[i];
                b[i] += w1 * s[i];
            }
        }
    }
    return out;
}

}  // namespace detail

/// 3-D convolution with cubic kernel, "same" padding and optional stride.
template <typename Scalar>
class Conv3d final : public Module<Scalar> {
public:
    using T = Tensor<Scalar>;

    Conv3d(const std::string& name, Index in_c, Index out_c, Index kernel, Index stride = 1)
        : in_c_(in_c), out_c_(out_c), kernel_(kernel), stride_(stride),
          weight_(name + ".weight", Shape{out_c, in_c, kernel, kernel, kernel}),
          bias_(name + ".bias", Shape{out_c}) {}

    Index in_channels() const { return in_c_; }
    Index out_channels() const { return out_c_; }
    Parameter<Scalar>& weight() { return weight_; }
    Parameter<Scalar>& bias() { return bias_; }

    /// Normal init with standard deviation gain / sqrt(fan_in); zero bias.
    void init(Rng& rng, double gain) {
        const double sd = gain / std::sqrt(static_cast<double>(in_c_ * kernel_ * kernel_ * kernel_));
        for (auto& w : weight_.value) w = static_cast<Scalar>(sd * rng.normal());
        bias_.value.set_zero();
    }

    T forward(const T& x) override {
        input_ = x;
        return infer(x);
    }

    T infer(const T& x) const override {
        const auto g = geometry(x);
        const Index batch = x.dim(0), nv = g.out_voxels(), in_vox = g.d * g.h * g.w;
        T y(Shape{batch, out_c_, g.od, g.oh, g.ow});
        const Eigen::Map<const Matrix<Scalar>> wt(weight_.value.data(), g.cols(), out_c_);
        const auto bias = bias_row();
        for (Index b = 0; b < batch; ++b) {
            Eigen::Map<Matrix<Scalar>> out(y.data() + b * out_c_ * nv, nv, out_c_);
            if (is_pointwise()) {
                const Eigen::Map<const Matrix<Scalar>> cols(x.data() + b * in_c_ * in_vox, nv, in_c_);
                out.noalias() = cols * wt;
            } else {
                auto& cols = detail::workspace<Scalar>(0);
                cols.resize(nv, g.cols());
                detail::im2col(x.data() + b * in_c_ * in_vox, g, cols.data());
                out.noalias() = cols * wt;
            }
            out.rowwise() += bias;
        }
        return y;
    }

    T backward(const T& gy) override {
        const T& x = input_;
        const auto g = geometry(x);
        const Index batch = x.dim(0), nv = g.out_voxels(), in_vox = g.d * g.h * g.w;
        T gx(x.shape());
        const Eigen::Map<const Matrix<Scalar>> wt(weight_.value.data(), g.cols(), out_c_);
        Eigen::Map<Matrix<Scalar>> gwt(weight_.grad.data(), g.cols(), out_c_);
        Eigen::Map<Eigen::Matrix<Scalar, 1, Eigen::Dynamic>> gb(bias_.grad.data(), out_c_);
        for (Index b = 0; b < batch; ++b) {
            const Eigen::Map<const Matrix<Scalar>> go(gy.data() + b * out_c_ * nv, nv, out_c_);
            gb += go.colwise().sum();
            if (is_pointwise()) {
                const Eigen::Map<const Matrix<Scalar>> cols(x.data() + b * in_c_ * in_vox, nv, in_c_);
                gwt.noalias() += cols.transpose() * go;
                Eigen::Map<Matrix<Scalar>> gcols(gx.data() + b * in_c_ * in_vox, nv, in_c_);
                gcols.noalias() = go * wt.transpose();
            } else {
                auto& cols = detail::workspace<Scalar>(0);
                cols.resize(nv, g.cols());
                detail::im2col(x.data() + b * in_c_ * in_vox, g, cols.data());
                gwt.noalias() += cols.transpose() * go;
                auto& gcols = detail::workspace<Scalar>(1);
                gcols.resize(nv, g.cols());
                gcols.noalias() = go * wt.transpose();
                detail::col2im(gcols.data(), g, gx.data() + b * in_c_ * in_vox);
            }
        }
        return gx;
    }

    void collect(std::vector<Parameter<Scalar>*>& out) override {
        out.push_back(&weight_);
        out.push_back(&bias_);
    }

private:
    bool is_pointwise() const { return kernel_ == 1 && stride_ == 1; }

    Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>> bias_row() const {
        return Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(bias_.value.data(), out_c_);
    }

    detail::ConvGeometry geometry(const T& x) const {
        if (x.rank() != 5 || x.dim(1) != in_c_)
            throw ShapeError("conv expects (B, " + std::to_string(in_c_) + ", D, H, W), got " + x.shape().str());
        const Index pad = kernel_ / 2;
        auto out = [&](Index n) { return (n + 2 * pad - kernel_) / stride_ + 1; };
        return {in_c_, x.dim(2), x.dim(3), x.dim(4), kernel_, stride_, pad,
                out(x.dim(2)), out(x.dim(3)), out(x.dim(4))};
    }

    Index in_c_, out_c_, kernel_, stride_;
    Parameter<Scalar> weight_, bias_;
    T input_;
};

/// Group normalization with per-channel affine; groups == channels gives
/// instance normalization. Statistics are per sample, so there is no state.
template <typename Scalar>
class GroupNorm final : public Module<Scalar> {
public:
    using T = Tensor<Scalar>;

    GroupNorm(const std::string& name, Index channels, Index groups, double eps = 1e-5)
        : channels_(channels), groups_(groups), eps_(eps),
          gamma_(name + ".gamma", Shape{channels}), beta_(name + ".beta", Shape{channels}) {
        if (groups <= 0 || channels % groups != 0)
            throw ParameterError("group count " + std::to_string(groups) + " does not divide " +
                                 std::to_string(channels) + " channels");
        gamma_.value.array().setOnes();
    }

    Index groups() const { return groups_; }
    Parameter<Scalar>& gamma() { return gamma_; }
    Parameter<Scalar>& beta() { return beta_; }

    T forward(const T& x) override { return run(x, &normalized_, &inv_std_); }
    T infer(const T& x) const override { return run(x, nullptr, nullptr); }

    T backward(const T& gy) override {
        const T& xhat = normalized_;
        const Index batch = gy.dim(0), per_c = gy.shape().stride(1), cg = channels_ / groups_;
        const auto m = static_cast<double>(cg * per_c);
        T gx(gy.shape());
        for (Index b = 0; b < batch; ++b)
            for (Index g = 0; g < groups_; ++g) {
                double sum_d = 0, sum_dx = 0;
                for (Index c = g * cg; c < (g + 1) * cg; ++c) {
                    const Index off = (b * channels_ + c) * per_c;
                    const Scalar gam = gamma_.value[c];
                    double sg = 0, sgx = 0;
                    for (Index i = 0; i < per_c; ++i) {
                        const double dy = gy[off + i];
                        sg += dy;
                        sgx += dy * xhat[off + i];
                    }
                    gamma_.grad[c] += static_cast<Scalar>(sgx);
                    beta_.grad[c] += static_cast<Scalar>(sg);
                    sum_d += gam * sg;
                    sum_dx += gam * sgx;
                }
                const double inv = inv_std_[b * groups_ + g];
                const double mean_d = sum_d / m, mean_dx = sum_dx / m;
                for (Index c = g * cg; c < (g + 1) * cg; ++c) {
                    const Index off = (b * channels_ + c) * per_c;
                    const double gam = gamma_.value[c];
                    for (Index i = 0; i < per_c; ++i)
                        gx[off + i] = static_cast<Scalar>(
                            inv * (gam * gy[off + i] - mean_d - xhat[off + i] * mean_dx));
                }
            }
        return gx;
    }

    void collect(std::vector<Parameter<Scalar>*>& out) override {
        out.push_back(&gamma_);
        out.push_back(&beta_);
    }

private:
    T run(const T& x, T* xhat_out, std::vector<double>* inv_out) const {
        if (x.rank() < 3 || x.dim(1) != channels_)
            throw ShapeError("norm expects " + std::to_string(channels_) + " channels, got " + x.shape().str());
        const Index batch = x.dim(0), per_c = x.shape().stride(1), cg = channels_ / groups_;
        const Index block = cg * per_c;
        T y(x.shape());
        if (xhat_out) *xhat_out = T(x.shape());
        if (inv_out) inv_out->assign(static_cast<std::size_t>(batch * groups_), 0.0);
        for (Index b = 0; b < batch; ++b)
            for (Index g = 0; g < groups_; ++g) {
                const Index off = (b * channels_ + g * cg) * per_c;
                double sum = 0;
                for (Index i = 0; i < block; ++i) sum += x[off + i];
                const double mean = sum / static_cast<double>(block);
                double ss = 0;
                for (Index i = 0; i < block; ++i) ss += (x[off + i] - mean) * (x[off + i] - mean);
                const double inv = 1.0 / std::sqrt(ss / static_cast<double>(block) + eps_);
                if (inv_out) (*inv_out)[static_cast<std::size_t>(b * groups_ + g)] = inv;
                for (Index c = 0; c < cg; ++c) {
                    const Index ch = g * cg + c;
                    const double gam = gamma_.value[ch], bet = beta_.value[ch];
                    for (Index i = 0; i < per_c; ++i) {
                        const Index k = off + c * per_c + i;
                        const double xn = (x[k] - mean) * inv;
                        if (xhat_out) (*xhat_out)[k] = static_cast<Scalar>(xn);
                        y[k] = static_cast<Scalar>(gam * xn + bet);
                    }
                }
            }
        return y;
    }

    Index channels_, groups_;
    double eps_;
    Parameter<Scalar> gamma_, beta_;
    T normalized_;
    std::vector<double> inv_std_;
};

/// Batch normalization; training uses batch statistics and updates the
/// running estimates, inference uses the running estimates.
template <typename Scalar>
class BatchNorm final : public Module<Scalar> {
public:
    using T = Tensor<Scalar>;

    BatchNorm(const std::string& name, Index channels, double momentum = 0.1, double eps = 1e-5)
        : channels_(channels), momentum_(momentum), eps_(eps),
          gamma_(name + ".gamma", Shape{channels}), beta_(name + ".beta", Shape{channels}),
          running_mean_(name + ".running_mean", Shape{channels}, false),
          running_var_(name + ".running_var", Shape{channels}, false) {
        gamma_.value.array().setOnes();
        running_var_.value.array().setOnes();
    }

    T forward(const T& x) override {
        check(x);
        const Index batch = x.dim(0), per_c = x.shape().stride(1);
        const auto m = static_cast<double>(batch * per_c);
        normalized_ = T(x.shape());
        inv_std_.assign(static_cast<std::size_t>(channels_), 0.0);
        T y(x.shape());
        for (Index c = 0; c < channels_; ++c) {
            double sum = 0, ss = 0;
            for (Index b = 0; b < batch; ++b)
                for (Index i = 0; i < per_c; ++i) sum += x[(b * channels_ + c) * per_c + i];
            const double mean = sum / m;
            for (Index b = 0; b < batch; ++b)
                for (Index i = 0; i < per_c; ++i) {
                    const double d = x[(b * channels_ + c) * per_c + i] - mean;
                    ss += d * d;
                }
            const double var = ss / m;
            const double inv = 1.0 / std::sqrt(var + eps_);
            inv_std_[static_cast<std::size_t>(c)] = inv;
            running_mean_.value[c] = static_cast<Scalar>((1 - momentum_) * running_mean_.value[c] + momentum_ * mean);
            running_var_.value[c] = static_cast<Scalar>((1 - momentum_) * running_var_.value[c] + momentum_ * var);
            for (Index b = 0; b < batch; ++b)
                for (Index i = 0; i < per_c; ++i) {
                    const Index k = (b * channels_ + c) * per_c + i;
                    const double xn = (x[k] - mean) * inv;
                    normalized_[k] = static_cast<Scalar>(xn);
                    y[k] = static_cast<Scalar>(gamma_.value[c] * xn + beta_.value[c]);
                }
        }
        return y;
    }

    T infer(const T& x) const override {
        check(x);
        const Index batch = x.dim(0), per_c = x.shape().stride(1);
        T y(x.shape());
        for (Index c = 0; c < channels_; ++c) {
            const double inv = 1.0 / std::sqrt(double(running_var_.value[c]) + eps_);
            const double mean = running_mean_.value[c];
            for (Index b = 0; b < batch; ++b)
                for (Index i = 0; i < per_c; ++i) {
                    const Index k = (b * channels_ + c) * per_c + i;
                    y[k] = static_cast<Scalar>(gamma_.value[c] * (x[k] - mean) * inv + beta_.value[c]);
                }
        }
        return y;
    }

    T backward(const T& gy) override {
        const Index batch = gy.dim(0), per_c = gy.shape().stride(1);
        const auto m = static_cast<double>(batch * per_c);
        T gx(gy.shape());
        for (Index c = 0; c < channels_; ++c) {
            double sg = 0, sgx = 0;
            for (Index b = 0; b < batch; ++b)
                for (Index i = 0; i < per_c; ++i) {
                    const Index k = (b * channels_ + c) * per_c + i;
                    sg += gy[k];
                    sgx += gy[k] * normalized_[k];
                }
            gamma_.grad[c] += static_cast<Scalar>(sgx);
            beta_.grad[c] += static_cast<Scalar>(sg);
            const double gam = gamma_.value[c], inv = inv_std_[static_cast<std::size_t>(c)];
            for (Index b = 0; b < batch; ++b)
                for (Index i = 0; i < per_c; ++i) {
                    const Index k = (b * channels_ + c) * per_c + i;
                    gx[k] = static_cast<Scalar>(gam * inv * (gy[k] - sg / m - normalized_[k] * sgx / m));
                }
        }
        return gx;
    }

    void collect(std::vector<Parameter<Scalar>*>& out) override {
        out.push_back(&gamma_);
        out.push_back(&beta_);
        out.push_back(&running_mean_);
        out.push_back(&running_var_);
    }

private:
    void check(const T& x) const {
        if (x.rank() < 3 || x.dim(1) != channels_)
            throw ShapeError("batch norm expects " + std::to_string(channels_) + " channels, got " + x.shape().str());
    }

    Index channels_;
    double momentum_, eps_;
    Parameter<Scalar> gamma_, beta_, running_mean_, running_var_;
    T normalized_;
    std::vector<double> inv_std_;
};

/// ReLU for slope 0, leaky ReLU otherwise.
template <typename Scalar>
class Activation final : public Module<Scalar> {
public:
    using T = Tensor<Scalar>;

    explicit Activation(double slope) : slope_(static_cast<Scalar>(slope)) {}

    T forward(const T& x) override {
        input_ = x;
        return infer(x);
    }
    T infer(const T& x) const override {
        T y(x.shape());
        y.array() = (x.array() > Scalar(0)).select(x.array(), slope_ * x.array());
        return y;
    }
    T backward(const T& gy) override {
        T gx(gy.shape());
        gx.array() = (input_.array() > Scalar(0)).select(gy.array(), slope_ * gy.array());
        return gx;
    }

private:
    Scalar slope_;
    T input_;
};

/// Trilinear 2x upsampling of the three spatial axes (half-pixel centers,
/// edge-clamped), implemented as three separable linear passes.
template <typename Scalar>
class Upsample final : public Module<Scalar> {
public:
    using T = Tensor<Scalar>;

    T forward(const T& x) override { return infer(x); }
    T infer(const T& x) const override {
        if (x.rank() != 5) throw ShapeError("upsample expects (B, C, D, H, W)");
        return detail::upsample_axis(detail::upsample_axis(detail::upsample_axis(x, 2), 3), 4);
    }
    T backward(const T& gy) override {
        return detail::upsample_axis_adjoint(
            detail::upsample_axis_adjoint(detail::upsample_axis_adjoint(gy, 4), 3), 2);
    }
};

template <typename Scalar>
class Sequential final : public Module<Scalar> {
public:
    using T = Tensor<Scalar>;

    template <typename M, typename... Args>
    M& add(Args&&... args) {
        auto m = std::make_unique<M>(std::forward<Args>(args)...);
        M& ref = *m;
        layers_.push_back(std::move(m));
        return ref;
    }
    void add(std::unique_ptr<Module<Scalar>> m) { layers_.push_back(std::move(m)); }

    std::size_t size() const { return layers_.size(); }
    Module<Scalar>& at(std::size_t i) { return *layers_[i]; }

    T forward(const T& x) override {
        T h = x;
        for (auto& l : layers_) h = l->forward(h);
        return h;
    }
    T infer(const T& x) const override {
        T h = x;
        for (const auto& l : layers_) h = l->infer(h);
        return h;
    }
    T backward(const T& gy) override {
        T g = gy;
        for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
        return g;
    }
    void collect(std::vector<Parameter<Scalar>*>& out) override {
        for (auto& l : layers_) l->collect(out);
    }

private:
    std::vector<std::unique_ptr<Module<Scalar>>> layers_;
};

/// out = act(x + branch(x)); the branch is conv-norm-act-conv-norm.
template <typename Scalar>
class ResidualBlock final : public Module<Scalar> {
public:
    using T = Tensor<Scalar>;

    ResidualBlock(Sequential<Scalar> branch, double slope) : branch_(std::move(branch)), post_(slope) {}

    Sequential<Scalar>& branch() { return branch_; }

    T forward(const T& x) override {
        T sum = branch_.forward(x);
        sum.array() += x.array();
        return post_.forward(sum);
    }
    T infer(const T& x) const override {
        T sum = branch_.infer(x);
        sum.array() += x.array();
        return post_.infer(sum);
    }
    T backward(const T& gy) override {
        T g = post_.backward(gy);
        T gx = branch_.backward(g);
        gx.array() += g.array();
        return gx;
    }
    void collect(std::vector<Parameter<Scalar>*>& out) override { branch_.collect(out); }

private:
    Sequential<Scalar> branch_;
    Activation<Scalar> post_;
};

/// Concatenates two (B, C, ...) tensors along the channel axis.
template <typename Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    const Index batch = a.dim(0), per_c = a.shape().stride(1);
    if (b.dim(0) != batch || b.shape().stride(1) != per_c)
        throw ShapeError("cannot concatenate " + a.shape().str() + " and " + b.shape().str());
    std::vector<Index> dims = a.shape().dims();
    dims[1] = a.dim(1) + b.dim(1);
    Tensor<Scalar> out{Shape(dims)};
    const Index na = a.dim(1) * per_c, nb = b.dim(1) * per_c;
    for (Index i = 0; i < batch; ++i) {
        std::copy(a.data() + i * na, a.data() + (i + 1) * na, out.data() + i * (na + nb));
        std::copy(b.data() + i * nb, b.data() + (i + 1) * nb, out.data() + i * (na + nb) + na);
    }
    return out;
}

/// Channels [first, first + count) of a (B, C, ...) tensor.
template <typename Scalar>
Tensor<Scalar> slice_channels(const Tensor<Scalar>& x, Index first, Index count) {
    const Index batch = x.dim(0), per_c = x.shape().stride(1), channels = x.dim(1);
    std::vector<Index> dims = x.shape().dims();
    dims[1] = count;
    Tensor<Scalar> out{Shape(dims)};
    for (Index i = 0; i < batch; ++i) {
        const Scalar* src = x.data() + (i * channels + first) * per_c;
        std::copy(src, src + count * per_c, out.data() + i * count * per_c);
    }
    return out;
}

/// Adds `g` into channels [first, first + g.channels) of `acc`.
template <typename Scalar>
void accumulate_channels(Tensor<Scalar>& acc, const Tensor<Scalar>& g, Index first) {
    const Index batch = acc.dim(0), per_c = acc.shape().stride(1), channels = acc.dim(1), count = g.dim(1);
    for (Index i = 0; i < batch; ++i) {
        Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>> dst(acc.data() + (i * channels + first) * per_c,
                                                                count * per_c);
        dst += Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>(g.data() + i * count * per_c,
                                                                         count * per_c);
    }
}

}  // namespace distillseg::nn
