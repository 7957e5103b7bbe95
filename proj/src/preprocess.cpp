#include "distillseg/preprocess.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <numbers>

#include "distillseg/random.hpp"

namespace distillseg {

RegionMask::RegionMask(Tensor<std::uint8_t> data) : data_(std::move(data)) {
    if (data_.rank() != 4 || data_.dim(0) != kNumRegions)
        throw ShapeError("region mask must be (3, D, H, W), got " + data_.shape().str());
    for (auto v : data_)
        if (v > 1) throw IntegrityError("region mask must be binary");
}

bool RegionMask::is_nested() const {
    const Index n = data_.shape().stride(0);
    const std::uint8_t* et = data_.data();
    const std::uint8_t* tc = et + n;
    const std::uint8_t* wt = tc + n;
    for (Index i = 0; i < n; ++i)
        if (et[i] > tc[i] || tc[i] > wt[i]) return false;
    return true;
}

ModalityVolume normalize_nonzero(const ModalityVolume& volume) {
    const TensorF& in = volume.data();
    double sum = 0.0;
    Index count = 0;
    for (float v : in)
        if (v != 0.0f) {
            sum += v;
            ++count;
        }
    if (count < 2)
        throw NormalizationError("normalize_nonzero: fewer than 2 nonzero voxels in " +
                                 std::string(modality_name(volume.tag())));
    const double mean = sum / static_cast<double>(count);
    double ss = 0.0;
    for (float v : in)
        if (v != 0.0f) ss += (v - mean) * (v - mean);
    const double var = ss / static_cast<double>(count);
    if (!(var > 0.0))
        throw NormalizationError("normalize_nonzero: zero variance over foreground of " +
                                 std::string(modality_name(volume.tag())));
    const double inv_std = 1.0 / std::sqrt(var);

    TensorF out(in.shape());
    for (Index i = 0; i < in.size(); ++i)
        out[i] = in[i] == 0.0f ? 0.0f : static_cast<float>((in[i] - mean) * inv_std);
    return ModalityVolume(volume.tag(), std::move(out));
}

MultiModalCase normalize_case(const MultiModalCase& c) {
    const auto& m = c.modalities();
    return c.with_modalities({normalize_nonzero(m[0]), normalize_nonzero(m[1]), normalize_nonzero(m[2]),
                              normalize_nonzero(m[3])});
}

RegionMask labels_to_regions(const LabelMask& mask) {
    const auto s = mask.shape();
    Tensor<std::uint8_t> out(Shape{kNumRegions, s[0], s[1], s[2]});
    const Index n = mask.data().size();
    for (Index i = 0; i < n; ++i) {
        const std::uint8_t v = mask.data()[i];
        out[kET * n + i] = v == kEnhancing;
        out[kTC * n + i] = v == kEnhancing || v == kNecroticCore;
        out[kWT * n + i] = v != kBackground;
    }
    return RegionMask(std::move(out));
}

LabelMask regions_to_labels(const RegionMask& regions) {
    if (!regions.is_nested()) throw IntegrityError("regions_to_labels: mask violates ET <= TC <= WT");
    const auto s = regions.shape();
    Tensor<std::uint8_t> out(Shape{s[0], s[1], s[2]});
    const Index n = out.size();
    const auto& r = regions.data();
    for (Index i = 0; i < n; ++i) {
        if (r[kET * n + i]) out[i] = kEnhancing;
        else if (r[kTC * n + i]) out[i] = kNecroticCore;
        else if (r[kWT * n + i]) out[i] = kEdema;
    }
    return LabelMask(std::move(out));
}

TensorF stack_modalities(const MultiModalCase& c) {
    const auto s = c.shape();
    TensorF out(Shape{4, s[0], s[1], s[2]});
    for (int m = 0; m < 4; ++m) out.slab(m) = c.modalities()[m].data().array();
    return out;
}

template <typename T>
Tensor<T> crop_window(const Tensor<T>& src, const std::array<Index, 3>& origin, const std::array<Index, 3>& size) {
    const Index channels = src.dim(0), d = src.dim(1), h = src.dim(2), w = src.dim(3);
    Tensor<T> out(Shape{channels, size[0], size[1], size[2]});
    for (Index c = 0; c < channels; ++c)
        for (Index z = 0; z < size[0]; ++z) {
            const Index sz = origin[0] + z;
            if (sz < 0 || sz >= d) continue;
            for (Index y = 0; y < size[1]; ++y) {
                const Index sy = origin[1] + y;
                if (sy < 0 || sy >= h) continue;
                const Index x0 = std::max<Index>(0, -origin[2]);
                const Index x1 = std::min<Index>(size[2], w - origin[2]);
                if (x1 <= x0) continue;
                const T* s = &src(c, sz, sy, origin[2] + x0);
                std::copy(s, s + (x1 - x0), &out(c, z, y, x0));
            }
        }
    return out;
}

template Tensor<float> crop_window(const Tensor<float>&, const std::array<Index, 3>&, const std::array<Index, 3>&);
template Tensor<double> crop_window(const Tensor<double>&, const std::array<Index, 3>&, const std::array<Index, 3>&);
template Tensor<std::uint8_t> crop_window(const Tensor<std::uint8_t>&, const std::array<Index, 3>&,
                                          const std::array<Index, 3>&);

Patch extract_patch(const MultiModalCase& c, Index patch_size, std::uint64_t seed, bool with_targets) {
    if (patch_size <= 0) throw ParameterError("patch size must be positive");
    if (with_targets && !c.has_label())
        throw ContractError("extract_patch: targets requested for unlabeled case " + c.id());

    Rng rng(derive_seed(seed, {0x9a7c}));
    const auto s = c.shape();
    Patch p;
    for (int a = 0; a < 3; ++a) {
        if (s[a] >= patch_size) {
            p.origin[a] = static_cast<Index>(rng.below(static_cast<std::uint64_t>(s[a] - patch_size + 1)));
        } else {
            p.origin[a] = -((patch_size - s[a]) / 2);
        }
    }
    const std::array<Index, 3> size{patch_size, patch_size, patch_size};
    p.inputs = crop_window(stack_modalities(c), p.origin, size);
    if (with_targets) p.targets = crop_window(labels_to_regions(*c.label()).data(), p.origin, size);
    return p;
}

AugmentationParams draw_augmentation(const AugmentationRanges& r, std::uint64_t seed) {
    AugmentationParams p;
    p.seed = seed;
    if (!r.enabled) return p;
    if (r.scale_min <= 0 || r.scale_max < r.scale_min) throw ParameterError("invalid scale range");
    Rng rng(derive_seed(seed, {0xa06}));
    const double max_rad = r.max_rotation_deg * std::numbers::pi / 180.0;
    for (auto& a : p.rotation_rad) a = rng.uniform(-max_rad, max_rad);
    p.scale = rng.uniform(r.scale_min, r.scale_max);
    for (auto&& m : p.mirror) m = rng.bernoulli(r.mirror_probability);
    for (auto& c : p.contrast) c = rng.uniform(r.contrast_min, r.contrast_max);
    for (auto& s : p.shift) s = rng.uniform(-r.shift_max, r.shift_max);
    return p;
}

namespace {

template <typename T>
void mirror_axis(Tensor<T>& t, int axis) {
    const Index channels = t.dim(0), d = t.dim(1), h = t.dim(2), w = t.dim(3);
    for (Index c = 0; c < channels; ++c)
        for (Index z = 0; z < d; ++z)
            for (Index y = 0; y < h; ++y)
                for (Index x = 0; x < w; ++x) {
                    Index z2 = z, y2 = y, x2 = x;
                    if (axis == 0) z2 = d - 1 - z;
                    if (axis == 1) y2 = h - 1 - y;
                    if (axis == 2) x2 = w - 1 - x;
                    // swap each pair once
                    if (std::tie(z2, y2, x2) > std::tie(z, y, x)) std::swap(t(c, z, y, x), t(c, z2, y2, x2));
                }
}

void resample(TensorF& inputs, Tensor<std::uint8_t>& targets, const Eigen::Matrix3d& inverse) {
    const Index d = inputs.dim(1), h = inputs.dim(2), w = inputs.dim(3);
    const Eigen::Vector3d center((d - 1) / 2.0, (h - 1) / 2.0, (w - 1) / 2.0);
    TensorF in_out(inputs.shape());
    Tensor<std::uint8_t> tg_out(targets.shape());
    const Index channels = inputs.dim(0), regions = targets.dim(0);

    for (Index z = 0; z < d; ++z)
        for (Index y = 0; y < h; ++y)
            for (Index x = 0; x < w; ++x) {
                const Eigen::Vector3d q = center + inverse * (Eigen::Vector3d(z, y, x) - center);

                const Index nz = static_cast<Index>(std::lround(q[0]));
                const Index ny = static_cast<Index>(std::lround(q[1]));
                const Index nx = static_cast<Index>(std::lround(q[2]));
                if (nz >= 0 && nz < d && ny >= 0 && ny < h && nx >= 0 && nx < w)
                    for (Index r = 0; r < regions; ++r) tg_out(r, z, y, x) = targets(r, nz, ny, nx);

                const Index z0 = static_cast<Index>(std::floor(q[0]));
                const Index y0 = static_cast<Index>(std::floor(q[1]));
                const Index x0 = static_cast<Index>(std::floor(q[2]));
                const double fz = q[0] - z0, fy = q[1] - y0, fx = q[2] - x0;
                for (Index c = 0; c < channels; ++c) {
                    double acc = 0.0;
                    for (int dz = 0; dz < 2; ++dz)
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx) {
                                const Index sz = z0 + dz, sy = y0 + dy, sx = x0 + dx;
                                if (sz < 0 || sz >= d || sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
                                const double wgt =
                                    (dz ? fz : 1 - fz) * (dy ? fy : 1 - fy) * (dx ? fx : 1 - fx);
                                acc += wgt * inputs(c, sz, sy, sx);
                            }
                    in_out(c, z, y, x) = static_cast<float>(acc);
                }
            }
    inputs = std::move(in_out);
    targets = std::move(tg_out);
}

}  // namespace

void apply_augmentation(TensorF& inputs, Tensor<std::uint8_t>& targets, const AugmentationParams& params) {
    if (inputs.rank() != 4 || targets.rank() != 4)
        throw ShapeError("apply_augmentation expects (C, D, H, W) inputs and targets");
    for (std::size_t a = 1; a < 4; ++a)
        if (inputs.dim(a) != targets.dim(a)) throw ShapeError("inputs and targets differ spatially");
    if (!(params.scale > 0)) throw ParameterError("augmentation scale must be positive");
    if (inputs.dim(0) > 4) throw ShapeError("at most 4 input channels");

    const auto& ang = params.rotation_rad;
    if (ang[0] != 0 || ang[1] != 0 || ang[2] != 0 || params.scale != 1.0) {
        using Eigen::AngleAxisd;
        const Eigen::Matrix3d rot = (AngleAxisd(ang[0], Eigen::Vector3d::UnitX()) *
                                     AngleAxisd(ang[1], Eigen::Vector3d::UnitY()) *
                                     AngleAxisd(ang[2], Eigen::Vector3d::UnitZ()))
                                        .toRotationMatrix();
        resample(inputs, targets, rot.transpose() / params.scale);
    }
    for (int a = 0; a < 3; ++a)
        if (params.mirror[a]) {
            mirror_axis(inputs, a);
            mirror_axis(targets, a);
        }
    for (Index c = 0; c < inputs.dim(0); ++c) {
        const auto contrast = static_cast<float>(params.contrast[c]);
        const auto shift = static_cast<float>(params.shift[c]);
        if (contrast == 1.0f && shift == 0.0f) continue;
        inputs.slab(c) = inputs.slab(c) * contrast + shift;
    }
}

}  // namespace distillseg
