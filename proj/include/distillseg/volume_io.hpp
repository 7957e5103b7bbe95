#pragma once

#include <filesystem>

#include "distillseg/volume.hpp"

namespace distillseg {

/// Loads one case from a BraTS-style directory holding `<id>_t1`, `_t1ce`,
/// `_t2`, `_flair` and optionally `_seg` volumes (`.nii.gz` or `.nii`).
/// The case id is the directory name.
MultiModalCase load_case(const std::filesystem::path& directory);

/// Writes a case in the same layout `load_case` reads, creating `directory`.
void save_case(const MultiModalCase& c, const std::filesystem::path& directory);

void save_mask(const LabelMask& mask, const std::filesystem::path& path);
LabelMask load_mask(const std::filesystem::path& path);

}  // namespace distillseg
