#include "distillseg/phantom.hpp"

#include <algorithm>
#include <cmath>

#include "distillseg/random.hpp"

namespace distillseg {
namespace {

enum Tissue { kBrain = 0, kEdemaTissue = 1, kCoreTissue = 2, kEnhancingTissue = 3 };

// Mean intensity per (modality, tissue), healthy tissue normalized to 1.
constexpr double kProfile[4][4] = {
    // brain, edema, necrotic core, enhancing
    {1.00, 0.78, 0.55, 0.80},  // T1
    {1.00, 0.85, 0.50, 1.90},  // T1Gd
    {1.00, 1.70, 1.95, 1.35},  // T2
    {1.00, 1.85, 1.20, 1.55},  // FLAIR
};

}  // namespace

void validate(const TumorSpec& spec) {
    for (int a = 0; a < 3; ++a) {
        const double et = spec.enhancing[a], tc = spec.tumor_core[a], wt = spec.whole_tumor[a];
        if (et < 0 || tc < 0 || wt < 0) throw ParameterError("tumor radii must be non-negative");
        if (!(et <= tc && tc <= wt))
            throw ParameterError("tumor radii must nest: enhancing <= tumor core <= whole tumor on every axis");
        if (spec.brain[a] <= 0 || spec.brain[a] > 0.5) throw ParameterError("brain radii must lie in (0, 0.5]");
    }
    if (spec.radius_jitter < 0 || spec.radius_jitter >= 1) throw ParameterError("radius_jitter must be in [0, 1)");
    if (spec.center_jitter < 0 || spec.center_jitter > 1) throw ParameterError("center_jitter must be in [0, 1]");
    if (spec.noise < 0) throw ParameterError("noise must be non-negative");
}

PhantomGeometry phantom_geometry(std::uint64_t seed, const VolumeShape& shape, const TumorSpec& spec) {
    validate(spec);
    for (Index s : shape)
        if (s < 16) throw ParameterError("phantom extents must be >= 16");

    Rng rng(derive_seed(seed, {0x9a47}));
    PhantomGeometry g;
    const double scale = rng.uniform(1.0 - spec.radius_jitter, 1.0 + spec.radius_jitter);
    for (int a = 0; a < 3; ++a) {
        const double extent = static_cast<double>(shape[a]);
        const double aniso = rng.uniform(0.92, 1.08);
        g.brain.center[a] = (extent - 1.0) / 2.0;
        g.brain.radii[a] = spec.brain[a] * extent;
        g.whole_tumor.radii[a] = spec.whole_tumor[a] * extent * scale * aniso;
        g.tumor_core.radii[a] = spec.tumor_core[a] * extent * scale * aniso;
        g.enhancing.radii[a] = spec.enhancing[a] * extent * scale * aniso;
        const double room = std::max(0.0, g.brain.radii[a] - g.whole_tumor.radii[a] - 1.0);
        const double center = g.brain.center[a] + rng.uniform(-1.0, 1.0) * spec.center_jitter * room;
        g.whole_tumor.center[a] = g.tumor_core.center[a] = g.enhancing.center[a] = center;
    }
    return g;
}

MultiModalCase generate_phantom(std::uint64_t seed, const VolumeShape& shape, const TumorSpec& spec,
                                std::string case_id) {
    const PhantomGeometry g = phantom_geometry(seed, shape, spec);
    Rng rng(derive_seed(seed, {0x1e75}));

    std::array<double, 4> gain{};
    for (auto& v : gain) v = rng.uniform(0.8, 1.25);

    const Shape s = to_shape(shape);
    std::array<TensorF, 4> vols{TensorF(s), TensorF(s), TensorF(s), TensorF(s)};
    Tensor<std::uint8_t> labels(s);

    Index i = 0;
    for (Index z = 0; z < shape[0]; ++z)
        for (Index y = 0; y < shape[1]; ++y)
            for (Index x = 0; x < shape[2]; ++x, ++i) {
                const double fz = double(z), fy = double(y), fx = double(x);
                int tissue = -1;
                if (g.enhancing.contains(fz, fy, fx)) {
                    tissue = kEnhancingTissue;
                    labels[i] = kEnhancing;
                } else if (g.tumor_core.contains(fz, fy, fx)) {
                    tissue = kCoreTissue;
                    labels[i] = kNecroticCore;
                } else if (g.whole_tumor.contains(fz, fy, fx)) {
                    tissue = kEdemaTissue;
                    labels[i] = kEdema;
                } else if (g.brain.contains(fz, fy, fx)) {
                    tissue = kBrain;
                }
                if (tissue < 0) continue;
                for (int m = 0; m < 4; ++m) {
                    const double v = gain[m] * (kProfile[m][tissue] + spec.noise * rng.normal());
                    vols[m][i] = static_cast<float>(std::max(v, 0.05));
                }
            }

    if (case_id.empty()) case_id = "phantom_" + std::to_string(seed);
    return MultiModalCase(std::move(case_id),
                          {ModalityVolume(Modality::T1, std::move(vols[0])),
                           ModalityVolume(Modality::T1Gd, std::move(vols[1])),
                           ModalityVolume(Modality::T2, std::move(vols[2])),
                           ModalityVolume(Modality::FLAIR, std::move(vols[3]))},
                          LabelMask(std::move(labels)), CaseSource::Phantom);
}

}  // namespace distillseg
