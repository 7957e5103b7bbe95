#include "distillseg/volume_io.hpp"

#include <optional>
#include <vector>

#include "distillseg/nifti.hpp"

namespace fs = std::filesystem;

namespace distillseg {
namespace {

bool ends_with(std::string_view s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

/// Finds the single file whose stem ends with `suffix` (e.g. `_t1` matches
/// `case_t1.nii.gz` but not `case_t1ce.nii.gz`).
std::optional<fs::path> find_volume(const fs::path& dir, std::string_view suffix) {
    std::optional<fs::path> found;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string name = entry.path().filename().string();
        for (std::string_view ext : {".nii.gz", ".nii"}) {
            if (!ends_with(name, ext)) continue;
            const std::string_view stem = std::string_view(name).substr(0, name.size() - ext.size());
            if (ends_with(stem, suffix)) {
                if (found) throw LoadError("ambiguous " + std::string(suffix) + " volume in " + dir.string());
                found = entry.path();
            }
            break;
        }
    }
    return found;
}

}  // namespace

MultiModalCase load_case(const fs::path& directory) {
    if (!fs::is_directory(directory)) throw LoadError("case directory not found: " + directory.string());

    std::vector<ModalityVolume> volumes;
    for (Modality m : kModalities) {
        const auto file = find_volume(directory, modality_suffix(m));
        if (!file)
            throw LoadError("missing " + std::string(modality_name(m)) + " volume (*" +
                            std::string(modality_suffix(m)) + ".nii.gz) in " + directory.string());
        volumes.emplace_back(m, nifti::read_float(*file));
        if (volumes.back().shape() != volumes.front().shape())
            throw IntegrityError("shape mismatch: " + file->string() + " is " +
                                 volumes.back().data().shape().str() + ", expected " +
                                 volumes.front().data().shape().str());
    }

    std::optional<LabelMask> label;
    if (const auto seg = find_volume(directory, "_seg")) {
        label.emplace(nifti::read_u8(*seg));
        if (label->shape() != volumes.front().shape())
            throw IntegrityError("label shape mismatch in " + directory.string());
    }

    std::string id = directory.filename().string();
    if (id.empty()) id = directory.parent_path().filename().string();
    return MultiModalCase(std::move(id), {volumes[0], volumes[1], volumes[2], volumes[3]}, std::move(label),
                          CaseSource::Real);
}

void save_case(const MultiModalCase& c, const fs::path& directory) {
    std::error_code ec;
    fs::create_directories(directory, ec);
    if (ec) throw IoError("cannot create " + directory.string() + ": " + ec.message());
    for (const auto& vol : c.modalities())
        nifti::write(directory / (c.id() + std::string(modality_suffix(vol.tag())) + ".nii.gz"), vol.data());
    if (c.label()) save_mask(*c.label(), directory / (c.id() + "_seg.nii.gz"));
}

void save_mask(const LabelMask& mask, const fs::path& path) { nifti::write(path, mask.data()); }

LabelMask load_mask(const fs::path& path) { return LabelMask(nifti::read_u8(path)); }

}  // namespace distillseg
