#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "distillseg/volume.hpp"

namespace distillseg {

/// Parameters of a synthetic brain-with-tumor case. Radii are fractions of the
/// volume extent along each axis (D, H, W).
struct TumorSpec {
    std::array<double, 3> whole_tumor{0.25, 0.25, 0.25};
    std::array<double, 3> tumor_core{0.16, 0.16, 0.16};
    std::array<double, 3> enhancing{0.10, 0.10, 0.10};
    /// Brain (foreground) semi-axes as fractions of the extent.
    std::array<double, 3> brain{0.42, 0.44, 0.40};
    /// Relative half-width of the uniform radius scaling draw.
    double radius_jitter = 0.15;
    /// Fraction of the free space inside the brain the tumor center may move.
    double center_jitter = 0.6;
    /// Gaussian noise standard deviation relative to healthy-tissue intensity.
    double noise = 0.08;
};

void validate(const TumorSpec& spec);

struct Ellipsoid {
    std::array<double, 3> center{};
    std::array<double, 3> radii{};

    /// Voxel centers at integer coordinates; a zero radius contains nothing.
    bool contains(double z, double y, double x) const {
        if (radii[0] <= 0 || radii[1] <= 0 || radii[2] <= 0) return false;
        const double dz = (z - center[0]) / radii[0];
        const double dy = (y - center[1]) / radii[1];
        const double dx = (x - center[2]) / radii[2];
        return dz * dz + dy * dy + dx * dx <= 1.0;
    }
};

/// The ellipsoids a phantom is rasterized from, drawn deterministically.
struct PhantomGeometry {
    Ellipsoid brain;
    Ellipsoid whole_tumor;
    Ellipsoid tumor_core;
    Ellipsoid enhancing;
};

PhantomGeometry phantom_geometry(std::uint64_t seed, const VolumeShape& shape, const TumorSpec& spec);

/// Brain-like ellipsoid with zero background and concentric tumor shells
/// labeled 4 (enhancing), 1 (core) and 2 (edema). Deterministic in `seed`.
MultiModalCase generate_phantom(std::uint64_t seed, const VolumeShape& shape, const TumorSpec& spec = {},
                                std::string case_id = {});

}  // namespace distillseg
