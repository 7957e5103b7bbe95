#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "distillseg/tensor.hpp"

namespace distillseg {

enum class Modality { T1 = 0, T1Gd = 1, T2 = 2, FLAIR = 3 };

inline constexpr std::array<Modality, 4> kModalities{Modality::T1, Modality::T1Gd, Modality::T2,
                                                     Modality::FLAIR};

std::string_view modality_name(Modality m);
/// BraTS filename suffix without extension: `_t1`, `_t1ce`, `_t2`, `_flair`.
std::string_view modality_suffix(Modality m);

/// Label values of the BraTS convention.
enum Label : std::uint8_t {
    kBackground = 0,
    kNecroticCore = 1,
    kEdema = 2,
    kEnhancing = 4,
};

inline constexpr bool is_valid_label(std::uint8_t v) {
    return v == kBackground || v == kNecroticCore || v == kEdema || v == kEnhancing;
}

using VolumeShape = std::array<Index, 3>;

inline Shape to_shape(const VolumeShape& s) { return Shape{s[0], s[1], s[2]}; }

/// One MRI modality as a (D, H, W) float volume.
class ModalityVolume {
public:
    ModalityVolume(Modality tag, TensorF data);

    Modality tag() const { return tag_; }
    const TensorF& data() const { return data_; }
    VolumeShape shape() const { return {data_.dim(0), data_.dim(1), data_.dim(2)}; }

private:
    Modality tag_;
    TensorF data_;
};

/// Integer (D, H, W) label volume restricted to {0, 1, 2, 4}.
class LabelMask {
public:
    explicit LabelMask(Tensor<std::uint8_t> data);

    const Tensor<std::uint8_t>& data() const { return data_; }
    VolumeShape shape() const { return {data_.dim(0), data_.dim(1), data_.dim(2)}; }

private:
    Tensor<std::uint8_t> data_;
};

enum class CaseSource { Real, Phantom, PseudoLabeled };

std::string_view source_name(CaseSource s);

class MultiModalCase {
public:
    MultiModalCase(std::string case_id, std::array<ModalityVolume, 4> modalities,
                   std::optional<LabelMask> label, CaseSource source);

    const std::string& id() const { return id_; }
    const ModalityVolume& modality(Modality m) const { return modalities_[static_cast<int>(m)]; }
    const std::array<ModalityVolume, 4>& modalities() const { return modalities_; }
    const std::optional<LabelMask>& label() const { return label_; }
    bool has_label() const { return label_.has_value(); }
    CaseSource source() const { return source_; }
    VolumeShape shape() const { return modalities_[0].shape(); }

    /// Copy with the label removed.
    MultiModalCase without_label() const;
    MultiModalCase with_modalities(std::array<ModalityVolume, 4> modalities) const;
    MultiModalCase with_label(LabelMask label, CaseSource source) const;

private:
    std::string id_;
    std::array<ModalityVolume, 4> modalities_;
    std::optional<LabelMask> label_;
    CaseSource source_;
};

}  // namespace distillseg
