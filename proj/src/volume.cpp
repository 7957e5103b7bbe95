#include "distillseg/volume.hpp"

#include <cmath>

namespace distillseg {

std::string_view modality_name(Modality m) {
    switch (m) {
        case Modality::T1: return "T1";
        case Modality::T1Gd: return "T1Gd";
        case Modality::T2: return "T2";
        case Modality::FLAIR: return "FLAIR";
    }
    return "?";
}

std::string_view modality_suffix(Modality m) {
    switch (m) {
        case Modality::T1: return "_t1";
        case Modality::T1Gd: return "_t1ce";
        case Modality::T2: return "_t2";
        case Modality::FLAIR: return "_flair";
    }
    return "";
}

std::string_view source_name(CaseSource s) {
    switch (s) {
        case CaseSource::Real: return "real";
        case CaseSource::Phantom: return "phantom";
        case CaseSource::PseudoLabeled: return "pseudo_labeled";
    }
    return "?";
}

ModalityVolume::ModalityVolume(Modality tag, TensorF data) : tag_(tag), data_(std::move(data)) {
    if (data_.rank() != 3) throw IntegrityError("modality volume must be 3-D, got " + data_.shape().str());
    for (std::size_t a = 0; a < 3; ++a)
        if (data_.dim(a) <= 0) throw IntegrityError("modality volume has empty axis");
    if (!data_.array().isFinite().all())
        throw IntegrityError("modality " + std::string(modality_name(tag)) + " contains non-finite values");
}

LabelMask::LabelMask(Tensor<std::uint8_t> data) : data_(std::move(data)) {
    if (data_.rank() != 3) throw IntegrityError("label mask must be 3-D, got " + data_.shape().str());
    for (auto v : data_)
        if (!is_valid_label(v))
            throw IntegrityError("label value " + std::to_string(int(v)) + " outside {0,1,2,4}");
}

MultiModalCase::MultiModalCase(std::string case_id, std::array<ModalityVolume, 4> modalities,
                               std::optional<LabelMask> label, CaseSource source)
    : id_(std::move(case_id)), modalities_(std::move(modalities)), label_(std::move(label)), source_(source) {
    for (std::size_t i = 0; i < 4; ++i) {
        if (modalities_[i].tag() != kModalities[i])
            throw IntegrityError("case " + id_ + ": modalities must be ordered T1, T1Gd, T2, FLAIR");
        if (modalities_[i].shape() != modalities_[0].shape())
            throw IntegrityError("case " + id_ + ": modality shapes differ");
    }
    if (label_ && label_->shape() != modalities_[0].shape())
        throw IntegrityError("case " + id_ + ": label shape differs from modality shape");
}

MultiModalCase MultiModalCase::without_label() const {
    return MultiModalCase(id_, modalities_, std::nullopt, source_);
}

MultiModalCase MultiModalCase::with_modalities(std::array<ModalityVolume, 4> modalities) const {
    return MultiModalCase(id_, std::move(modalities), label_, source_);
}

MultiModalCase MultiModalCase::with_label(LabelMask label, CaseSource source) const {
    return MultiModalCase(id_, modalities_, std::move(label), source);
}

}  // namespace distillseg
