#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "distillseg/volume.hpp"

namespace distillseg {

enum Region : int { kET = 0, kTC = 1, kWT = 2 };
inline constexpr int kNumRegions = 3;
inline constexpr std::array<const char*, 3> kRegionNames{"ET", "TC", "WT"};

/// Binary (3, D, H, W) supervision target, channels ordered ET, TC, WT.
class RegionMask {
public:
    explicit RegionMask(Tensor<std::uint8_t> data);

    const Tensor<std::uint8_t>& data() const { return data_; }
    VolumeShape shape() const { return {data_.dim(1), data_.dim(2), data_.dim(3)}; }
    /// ET <= TC <= WT at every voxel.
    bool is_nested() const;

private:
    Tensor<std::uint8_t> data_;
};

/// Zero-mean, unit (population) variance over the voxels that are nonzero;
/// zero voxels stay exactly zero.
ModalityVolume normalize_nonzero(const ModalityVolume& volume);
MultiModalCase normalize_case(const MultiModalCase& c);

/// ET = {4}, TC = {1, 4}, WT = {1, 2, 4}.
RegionMask labels_to_regions(const LabelMask& mask);
/// Inverse of `labels_to_regions` for nested masks.
LabelMask regions_to_labels(const RegionMask& regions);

struct Patch {
    TensorF inputs;                                ///< (4, P, P, P), modality order T1, T1Gd, T2, FLAIR
    std::optional<Tensor<std::uint8_t>> targets;   ///< (3, P, P, P)
    std::array<Index, 3> origin{};                 ///< corner in unpadded volume coordinates
};

/// Stacks the four modalities into a (4, D, H, W) tensor.
TensorF stack_modalities(const MultiModalCase& c);

/// Extracts a (P, P, P) patch at a uniformly drawn corner. Axes shorter than P
/// are zero-padded symmetrically first, so origins may be negative there.
Patch extract_patch(const MultiModalCase& c, Index patch_size, std::uint64_t seed, bool with_targets = true);

/// Copies the window [origin, origin + size) of a (C, D, H, W) tensor, zero
/// outside the volume.
template <typename T>
Tensor<T> crop_window(const Tensor<T>& src, const std::array<Index, 3>& origin, const std::array<Index, 3>& size);

struct AugmentationRanges {
    double max_rotation_deg = 15.0;
    double scale_min = 0.85;
    double scale_max = 1.15;
    double mirror_probability = 0.5;
    double contrast_min = 0.75;
    double contrast_max = 1.25;
    double shift_max = 0.1;
    bool enabled = true;
};

struct AugmentationParams {
    std::array<double, 3> rotation_rad{0, 0, 0};  ///< about the D, H and W axes
    double scale = 1.0;
    std::array<bool, 3> mirror{false, false, false};
    std::array<double, 4> contrast{1, 1, 1, 1};
    std::array<double, 4> shift{0, 0, 0, 0};
    std::uint64_t seed = 0;

    static AugmentationParams identity() { return {}; }
};

AugmentationParams draw_augmentation(const AugmentationRanges& ranges, std::uint64_t seed);

/// Applies rotation and scaling about the patch center (trilinear for inputs,
/// nearest-neighbor for targets, resampled back onto the same grid), then
/// mirroring, then per-channel contrast and intensity shift on inputs only.
void apply_augmentation(TensorF& inputs, Tensor<std::uint8_t>& targets, const AugmentationParams& params);

}  // namespace distillseg
