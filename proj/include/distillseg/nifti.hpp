#pragma once

#include <cstdint>
#include <filesystem>

#include "distillseg/tensor.hpp"

namespace distillseg::nifti {

/// Reads a single-volume NIfTI-1 file (`.nii` or `.nii.gz`) into a (D, H, W)
/// tensor, where W is the file's fastest axis. Intensity scaling is applied.
TensorF read_float(const std::filesystem::path& path);

/// Reads an integer-valued NIfTI-1 volume; fails on non-integral or
/// out-of-range voxels.
Tensor<std::uint8_t> read_u8(const std::filesystem::path& path);

void write(const std::filesystem::path& path, const TensorF& volume);
void write(const std::filesystem::path& path, const Tensor<std::uint8_t>& volume);

}  // namespace distillseg::nifti
