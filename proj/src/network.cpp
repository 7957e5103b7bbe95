#include "distillseg/network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace distillseg {

std::string kind_name(NetworkKind k) {
    switch (k) {
        case NetworkKind::UNet3D: return "unet";
        case NetworkKind::ResidualUNet3D: return "residual_unet";
        case NetworkKind::CascadedUNet3D: return "cascaded_unet";
    }
    return "?";
}

std::string kind_label(NetworkKind k) {
    switch (k) {
        case NetworkKind::UNet3D: return "UNet";
        case NetworkKind::ResidualUNet3D: return "Residual UNet";
        case NetworkKind::CascadedUNet3D: return "Cascaded UNet";
    }
    return "?";
}

NetworkKind parse_kind(const std::string& s) {
    if (s == "unet" || s == "UNet3D") return NetworkKind::UNet3D;
    if (s == "residual_unet" || s == "ResidualUNet3D") return NetworkKind::ResidualUNet3D;
    if (s == "cascaded_unet" || s == "CascadedUNet3D") return NetworkKind::CascadedUNet3D;
    throw ConfigError("unknown network kind '" + s + "'");
}

std::vector<Index> NetworkConfig::widths() const {
    std::vector<Index> w;
    for (Index l = 0; l < depth; ++l) w.push_back(base_channels << l);
    return w;
}

std::vector<Index> NetworkConfig::branch_widths() const {
    std::vector<Index> w;
    for (Index c : widths()) w.push_back(std::max<Index>(1, c / 2));
    return w;
}

NetworkConfig default_network_config(NetworkKind kind, bool paper_scale) {
    NetworkConfig c;
    c.kind = kind;
    c.depth = paper_scale ? 5 : 3;
    c.base_channels = paper_scale ? 16 : 8;
    switch (kind) {
        case NetworkKind::UNet3D:
            c.norm = NormKind::Instance;
            c.activation = ActivationKind::LeakyReLU;
            break;
        case NetworkKind::ResidualUNet3D:
            c.norm = NormKind::Group;
            c.activation = ActivationKind::ReLU;
            break;
        case NetworkKind::CascadedUNet3D:
            c.norm = NormKind::Instance;
            c.activation = ActivationKind::ReLU;
            break;
    }
    return c;
}

void validate(const NetworkConfig& c) {
    if (c.depth < 2) throw ParameterError("network depth must be >= 2");
    if (c.base_channels < 2) throw ParameterError("base_channels must be >= 2");
    if (c.in_channels != 4) throw ParameterError("networks take exactly 4 input modalities");
    if (c.out_regions != 3) throw ParameterError("networks emit exactly 3 regions");
    if (c.leaky_slope < 0) throw ParameterError("leaky slope must be non-negative");
    if (c.vae_branch) throw ParameterError("the variational auto-encoder branch is not implemented");
    if (c.norm == NormKind::Group) {
        std::vector<Index> normalized = c.kind == NetworkKind::CascadedUNet3D ? c.branch_widths() : c.widths();
        if (c.kind == NetworkKind::CascadedUNet3D) {
            const auto w = c.widths();
            normalized.insert(normalized.end(), w.begin(), w.end());
        }
        for (Index ch : normalized)
            if (c.num_groups <= 0 || ch % c.num_groups != 0)
                throw ParameterError("num_groups " + std::to_string(c.num_groups) + " does not divide " +
                                     std::to_string(ch) + " channels");
    }
}

namespace {

const char* norm_name(NormKind n) {
    switch (n) {
        case NormKind::Instance: return "instance";
        case NormKind::Group: return "group";
        case NormKind::Batch: return "batch";
    }
    return "?";
}

}  // namespace

void to_json(nlohmann::json& j, const NetworkConfig& c) {
    j = nlohmann::json{{"kind", kind_name(c.kind)},
                       {"base_channels", c.base_channels},
                       {"depth", c.depth},
                       {"norm", norm_name(c.norm)},
                       {"num_groups", c.num_groups},
                       {"activation", c.activation == ActivationKind::ReLU ? "relu" : "leaky_relu"},
                       {"leaky_slope", c.leaky_slope},
                       {"upsampling", c.upsampling == UpsamplingKind::Trilinear ? "trilinear" : "transposed_conv"},
                       {"in_channels", c.in_channels},
                       {"out_regions", c.out_regions},
                       {"vae_branch", c.vae_branch}};
}

void from_json(const nlohmann::json& j, NetworkConfig& c) {
    if (j.contains("kind")) c.kind = parse_kind(j.at("kind").get<std::string>());
    c.base_channels = j.value("base_channels", c.base_channels);
    c.depth = j.value("depth", c.depth);
    if (j.contains("norm")) {
        const auto n = j.at("norm").get<std::string>();
        if (n == "instance") c.norm = NormKind::Instance;
        else if (n == "group") c.norm = NormKind::Group;
        else if (n == "batch") c.norm = NormKind::Batch;
        else throw ConfigError("unknown norm '" + n + "'");
    }
    c.num_groups = j.value("num_groups", c.num_groups);
    if (j.contains("activation")) {
        const auto a = j.at("activation").get<std::string>();
        if (a == "relu") c.activation = ActivationKind::ReLU;
        else if (a == "leaky_relu") c.activation = ActivationKind::LeakyReLU;
        else throw ConfigError("unknown activation '" + a + "'");
    }
    c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
    if (j.contains("upsampling")) {
        const auto u = j.at("upsampling").get<std::string>();
        if (u == "trilinear") c.upsampling = UpsamplingKind::Trilinear;
        else if (u == "transposed_conv") c.upsampling = UpsamplingKind::TransposedConv;
        else throw ConfigError("unknown upsampling '" + u + "'");
    }
    c.in_channels = j.value("in_channels", c.in_channels);
    c.out_regions = j.value("out_regions", c.out_regions);
    c.vae_branch = j.value("vae_branch", c.vae_branch);
}

namespace nn {

template <typename Scalar>
TransposedConv2x<Scalar>::TransposedConv2x(const std::string& name, Index in_c, Index out_c)
    : in_c_(in_c), out_c_(out_c), weight_(name + ".weight", Shape{in_c, out_c, 2, 2, 2}),
      bias_(name + ".bias", Shape{out_c}) {}

template <typename Scalar>
void TransposedConv2x<Scalar>::init(Rng& rng, double gain) {
    const double sd = gain / std::sqrt(static_cast<double>(in_c_));
    for (auto& w : weight_.value) w = static_cast<Scalar>(sd * rng.normal());
    bias_.value.set_zero();
}

template <typename Scalar>
Tensor<Scalar> TransposedConv2x<Scalar>::forward(const T& x) {
    input_ = x;
    return infer(x);
}

template <typename Scalar>
Tensor<Scalar> TransposedConv2x<Scalar>::infer(const T& x) const {
    if (x.rank() != 5 || x.dim(1) != in_c_) throw ShapeError("transposed conv got " + x.shape().str());
    const Index batch = x.dim(0), d = x.dim(2), h = x.dim(3), w = x.dim(4), nv = d * h * w;
    T y(Shape{batch, out_c_, 2 * d, 2 * h, 2 * w});
    const Eigen::Map<const Matrix<Scalar>> wm(weight_.value.data(), out_c_ * 8, in_c_);
    Matrix<Scalar> cols;
    for (Index b = 0; b < batch; ++b) {
        const Eigen::Map<const Matrix<Scalar>> xb(x.data() + b * in_c_ * nv, nv, in_c_);
        cols.noalias() = xb * wm.transpose();
        for (Index co = 0; co < out_c_; ++co)
            for (Index k = 0; k < 8; ++k) {
                const Index kz = k >> 2, ky = (k >> 1) & 1, kx = k & 1;
                const Scalar* src = cols.data() + (co * 8 + k) * nv;
                Index v = 0;
                for (Index z = 0; z < d; ++z)
                    for (Index yy = 0; yy < h; ++yy)
                        for (Index xx = 0; xx < w; ++xx, ++v)
                            y(b, co, 2 * z + kz, 2 * yy + ky, 2 * xx + kx) = src[v] + bias_.value[co];
            }
    }
    return y;
}

template <typename Scalar>
Tensor<Scalar> TransposedConv2x<Scalar>::backward(const T& gy) {
    const T& x = input_;
    const Index batch = x.dim(0), d = x.dim(2), h = x.dim(3), w = x.dim(4), nv = d * h * w;
    T gx(x.shape());
    const Eigen::Map<const Matrix<Scalar>> wm(weight_.value.data(), out_c_ * 8, in_c_);
    Eigen::Map<Matrix<Scalar>> gwm(weight_.grad.data(), out_c_ * 8, in_c_);
    Matrix<Scalar> g8(nv, out_c_ * 8);
    for (Index b = 0; b < batch; ++b) {
        for (Index co = 0; co < out_c_; ++co) {
            for (Index k = 0; k < 8; ++k) {
                const Index kz = k >> 2, ky = (k >> 1) & 1, kx = k & 1;
                Scalar* dst = g8.data() + (co * 8 + k) * nv;
                Index v = 0;
                for (Index z = 0; z < d; ++z)
                    for (Index yy = 0; yy < h; ++yy)
                        for (Index xx = 0; xx < w; ++xx, ++v) dst[v] = gy(b, co, 2 * z + kz, 2 * yy + ky, 2 * xx + kx);
            }
            bias_.grad[co] += g8.middleCols(co * 8, 8).sum();
        }
        const Eigen::Map<const Matrix<Scalar>> xb(x.data() + b * in_c_ * nv, nv, in_c_);
        gwm.noalias() += g8.transpose() * xb;
        Eigen::Map<Matrix<Scalar>> gxb(gx.data() + b * in_c_ * nv, nv, in_c_);
        gxb.noalias() = g8 * wm;
    }
    return gx;
}

template <typename Scalar>
void TransposedConv2x<Scalar>::collect(std::vector<Parameter<Scalar>*>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
}

template class TransposedConv2x<float>;
template class TransposedConv2x<double>;

}  // namespace nn

namespace {

template <typename Scalar>
using SeqPtr = std::unique_ptr<nn::Sequential<Scalar>>;

template <typename Scalar>
std::unique_ptr<nn::Module<Scalar>> make_norm(const NetworkConfig& c, const std::string& name, Index ch) {
    switch (c.norm) {
        case NormKind::Instance: return std::make_unique<nn::GroupNorm<Scalar>>(name, ch, ch);
        case NormKind::Group: return std::make_unique<nn::GroupNorm<Scalar>>(name, ch, c.num_groups);
        case NormKind::Batch: return std::make_unique<nn::BatchNorm<Scalar>>(name, ch);
    }
    throw ParameterError("unknown norm kind");
}

double act_gain(const NetworkConfig& c) { return std::sqrt(2.0 / (1.0 + c.slope() * c.slope())); }

template <typename Scalar>
void add_conv(nn::Sequential<Scalar>& seq, const NetworkConfig& c, const std::string& name, Index in, Index out,
              Index kernel, Index stride, Rng& rng) {
    seq.template add<nn::Conv3d<Scalar>>(name, in, out, kernel, stride).init(rng, act_gain(c));
}

template <typename Scalar>
void add_conv_norm_act(nn::Sequential<Scalar>& seq, const NetworkConfig& c, const std::string& name, Index in,
                       Index out, Index kernel, Index stride, Rng& rng) {
    add_conv(seq, c, name + ".conv", in, out, kernel, stride, rng);
    seq.add(make_norm<Scalar>(c, name + ".norm", out));
    seq.template add<nn::Activation<Scalar>>(c.slope());
}

template <typename Scalar>
void add_residual_block(nn::Sequential<Scalar>& seq, const NetworkConfig& c, const std::string& name, Index ch,
                        Rng& rng) {
    nn::Sequential<Scalar> branch;
    add_conv(branch, c, name + ".conv1", ch, ch, 3, 1, rng);
    branch.add(make_norm<Scalar>(c, name + ".norm1", ch));
    branch.template add<nn::Activation<Scalar>>(c.slope());
    add_conv(branch, c, name + ".conv2", ch, ch, 3, 1, rng);
    branch.add(make_norm<Scalar>(c, name + ".norm2", ch));
    seq.template add<nn::ResidualBlock<Scalar>>(std::move(branch), c.slope());
}

template <typename Scalar>
Index count_trainable(nn::Sequential<Scalar>& seq) {
    std::vector<nn::Parameter<Scalar>*> ps;
    seq.collect(ps);
    Index n = 0;
    for (auto* p : ps)
        if (p->trainable) n += p->value.size();
    return n;
}

}  // namespace

template <typename Scalar>
Network<Scalar>::Network(NetworkConfig config, std::uint64_t seed) : config_(std::move(config)) {
    validate(config_);
    Rng rng(derive_seed(seed, {0x1417}));
    const auto& c = config_;
    const bool cascaded = c.kind == NetworkKind::CascadedUNet3D;
    const auto widths = c.widths();
    const auto enc_widths = cascaded ? c.branch_widths() : widths;
    const Index branches = cascaded ? 4 : 1;

    for (Index br = 0; br < branches; ++br) {
        std::vector<SeqPtr<Scalar>> levels;
        for (Index l = 0; l < c.depth; ++l) {
            auto seq = std::make_unique<nn::Sequential<Scalar>>();
            const std::string name = (cascaded ? "branch" + std::to_string(br) + "." : std::string()) + "enc" +
                                     std::to_string(l);
            const Index in = l == 0 ? (cascaded ? 1 : c.in_channels) : enc_widths[l - 1];
            const Index out = enc_widths[l];
            const Index stride = l == 0 ? 1 : 2;
            if (c.kind == NetworkKind::UNet3D) {
                add_conv_norm_act(*seq, c, name + ".block0", in, out, 3, stride, rng);
                add_conv_norm_act(*seq, c, name + ".block1", out, out, 3, 1, rng);
            } else {
                add_conv(*seq, c, name + ".conv", in, out, 3, stride, rng);
                add_residual_block(*seq, c, name + ".res", out, rng);
            }
            levels.push_back(std::move(seq));
        }
        encoders_.push_back(std::move(levels));
    }

    if (cascaded)
        for (Index l = 0; l < c.depth; ++l) {
            auto seq = std::make_unique<nn::Sequential<Scalar>>();
            add_conv_norm_act(*seq, c, "fuse" + std::to_string(l), 4 * enc_widths[l], widths[l], 1, 1, rng);
            fuse_.push_back(std::move(seq));
        }

    for (Index l = 0; l + 1 < c.depth; ++l) {
        auto up = std::make_unique<nn::Sequential<Scalar>>();
        const std::string uname = "up" + std::to_string(l);
        if (c.upsampling == UpsamplingKind::Trilinear) {
            up->template add<nn::Upsample<Scalar>>();
            add_conv(*up, c, uname + ".conv", widths[l + 1], widths[l], 1, 1, rng);
        } else {
            up->template add<nn::TransposedConv2x<Scalar>>(uname + ".tconv", widths[l + 1], widths[l])
                .init(rng, act_gain(c));
        }
        up_.push_back(std::move(up));

        auto dec = std::make_unique<nn::Sequential<Scalar>>();
        const std::string dname = "dec" + std::to_string(l);
        if (c.kind == NetworkKind::UNet3D) {
            add_conv_norm_act(*dec, c, dname + ".block0", 2 * widths[l], widths[l], 3, 1, rng);
            add_conv_norm_act(*dec, c, dname + ".block1", widths[l], widths[l], 3, 1, rng);
        } else {
            add_conv(*dec, c, dname + ".reduce", 2 * widths[l], widths[l], 1, 1, rng);
            add_residual_block(*dec, c, dname + ".res", widths[l], rng);
        }
        decoders_.push_back(std::move(dec));
    }

    head_ = std::make_unique<nn::Conv3d<Scalar>>("head", widths[0], c.out_regions, 1, 1);
    head_->init(rng, 1.0);
}

template <typename Scalar>
void Network<Scalar>::check_input(const T& x) const {
    if (x.rank() != 5 || x.dim(1) != config_.in_channels)
        throw ShapeError("network input must be (B, 4, D, H, W), got " + x.shape().str());
    for (std::size_t a = 2; a < 5; ++a)
        if (x.dim(a) <= 0 || x.dim(a) % size_divisor() != 0)
            throw ShapeError("spatial extent " + std::to_string(x.dim(a)) + " is not divisible by " +
                             std::to_string(size_divisor()));
}

template <typename Scalar>
template <bool Training>
Tensor<Scalar> Network<Scalar>::run(const T& x) {
    check_input(x);
    auto call = [](auto& module, const T& in) {
        if constexpr (Training) return module.forward(in);
        else return std::as_const(module).infer(in);
    };
    const Index depth = config_.depth;
    std::vector<T> skips(static_cast<std::size_t>(depth));

    if (encoders_.size() == 1) {
        T h = x;
        for (Index l = 0; l < depth; ++l) skips[l] = h = call(*encoders_[0][l], h);
    } else {
        std::vector<T> fused(static_cast<std::size_t>(depth));
        for (std::size_t br = 0; br < encoders_.size(); ++br) {
            T h = nn::slice_channels(x, static_cast<Index>(br), 1);
            for (Index l = 0; l < depth; ++l) {
                h = call(*encoders_[br][l], h);
                fused[l] = br == 0 ? h : nn::concat_channels(fused[l], h);
            }
        }
        for (Index l = 0; l < depth; ++l) skips[l] = call(*fuse_[l], fused[l]);
    }

    if constexpr (Training) {
        skip_channels_.clear();
        for (const auto& s : skips) skip_channels_.push_back(s.dim(1));
    }

    T y = skips[depth - 1];
    for (Index l = depth - 2; l >= 0; --l) {
        const T u = call(*up_[l], y);
        y = call(*decoders_[l], nn::concat_channels(u, skips[l]));
    }
    T p = call(*head_, y);
    constexpr Scalar eps = std::numeric_limits<Scalar>::epsilon();
    p.array() = (Scalar(1) / (Scalar(1) + (-p.array()).exp())).max(eps).min(Scalar(1) - eps);
    if constexpr (Training) probabilities_ = p;
    return p;
}

template <typename Scalar>
Tensor<Scalar> Network<Scalar>::forward(const T& inputs) {
    return run<true>(inputs);
}

template <typename Scalar>
Tensor<Scalar> Network<Scalar>::predict(const T& inputs) const {
    // run<false> only calls const infer() on the modules and writes no member.
    return const_cast<Network*>(this)->template run<false>(inputs);
}

template <typename Scalar>
void Network<Scalar>::backward(const T& grad_probabilities) {
    if (!(grad_probabilities.shape() == probabilities_.shape()))
        throw ShapeError("backward gradient shape " + grad_probabilities.shape().str() + " does not match output " +
                         probabilities_.shape().str());
    const Index depth = config_.depth;
    T gz(probabilities_.shape());
    gz.array() = grad_probabilities.array() * probabilities_.array() * (Scalar(1) - probabilities_.array());
    T g = head_->backward(gz);

    std::vector<T> gskips(static_cast<std::size_t>(depth));
    for (Index l = 0; l + 1 < depth; ++l) {
        const T gc = decoders_[l]->backward(g);
        const Index up_c = gc.dim(1) - skip_channels_[l];
        gskips[l] = nn::slice_channels(gc, up_c, skip_channels_[l]);
        g = up_[l]->backward(nn::slice_channels(gc, 0, up_c));
    }
    gskips[depth - 1] = std::move(g);

    if (encoders_.size() == 1) {
        T carry;
        for (Index l = depth - 1; l >= 0; --l) {
            T gl = std::move(gskips[l]);
            if (!carry.empty()) gl.array() += carry.array();
            carry = encoders_[0][l]->backward(gl);
        }
        return;
    }
    std::vector<T> gfused(static_cast<std::size_t>(depth));
    for (Index l = 0; l < depth; ++l) gfused[l] = fuse_[l]->backward(gskips[l]);
    const auto bw = config_.branch_widths();
    for (std::size_t br = 0; br < encoders_.size(); ++br) {
        T carry;
        for (Index l = depth - 1; l >= 0; --l) {
            T gl = nn::slice_channels(gfused[l], static_cast<Index>(br) * bw[l], bw[l]);
            if (!carry.empty()) gl.array() += carry.array();
            carry = encoders_[br][l]->backward(gl);
        }
    }
}

template <typename Scalar>
std::vector<nn::Parameter<Scalar>*> Network<Scalar>::parameters() {
    std::vector<Param*> out;
    for (auto& branch : encoders_)
        for (auto& level : branch) level->collect(out);
    for (auto& f : fuse_) f->collect(out);
    for (auto& u : up_) u->collect(out);
    for (auto& d : decoders_) d->collect(out);
    head_->collect(out);
    return out;
}

template <typename Scalar>
std::vector<const nn::Parameter<Scalar>*> Network<Scalar>::parameters() const {
    auto ps = const_cast<Network*>(this)->parameters();
    return {ps.begin(), ps.end()};
}

template <typename Scalar>
void Network<Scalar>::zero_grad() {
    for (auto* p : parameters())
        if (p->trainable) p->grad.set_zero();
}

template <typename Scalar>
Index Network<Scalar>::parameter_count() const {
    Index n = 0;
    for (const auto* p : parameters())
        if (p->trainable) n += p->value.size();
    return n;
}

template <typename Scalar>
std::vector<Index> Network<Scalar>::branch_parameter_counts() const {
    std::vector<Index> counts;
    for (const auto& branch : encoders_) {
        Index n = 0;
        for (const auto& level : branch) n += count_trainable(*level);
        counts.push_back(n);
    }
    return counts;
}

template class Network<float>;
template class Network<double>;

namespace {

Network<float> build_checked(const NetworkConfig& config, NetworkKind expected, std::uint64_t seed) {
    if (config.kind != expected)
        throw ParameterError("builder for " + kind_name(expected) + " got config of kind " + kind_name(config.kind));
    return Network<float>(config, seed);
}

}  // namespace

Network<float> build_unet(const NetworkConfig& config, std::uint64_t seed) {
    return build_checked(config, NetworkKind::UNet3D, seed);
}
Network<float> build_residual_unet(const NetworkConfig& config, std::uint64_t seed) {
    return build_checked(config, NetworkKind::ResidualUNet3D, seed);
}
Network<float> build_cascaded_unet(const NetworkConfig& config, std::uint64_t seed) {
    return build_checked(config, NetworkKind::CascadedUNet3D, seed);
}
Network<float> build_network(const NetworkConfig& config, std::uint64_t seed) { return Network<float>(config, seed); }

}  // namespace distillseg
