#pragma once

#include <span>
#include <vector>

#include "distillseg/network.hpp"
#include "distillseg/objectives.hpp"
#include "distillseg/volume.hpp"

namespace distillseg {

struct SlidingWindow {
    Index patch_size = 32;
    /// Fraction of the patch shared by neighboring windows, in [0, 1).
    double overlap = 0.5;
};

/// Window corners along one axis: a regular grid with stride
/// floor(P * (1 - overlap)) plus a final window flush with the far edge.
/// Axes shorter than the patch get one centered (zero-padded) window.
std::vector<Index> window_origins(Index extent, const SlidingWindow& window);

/// Full-volume (3, D, H, W) probabilities from overlapping windows, each voxel
/// the mean of every window covering it.
TensorF predict_case(const NetworkF& network, const MultiModalCase& c, const SlidingWindow& window);

/// Per case: binarize at `threshold`, region dice against the case label;
/// then per-region means over cases.
DiceReport evaluate_model(const NetworkF& network, std::span<const MultiModalCase> cases, double threshold,
                          const SlidingWindow& window);

/// Same aggregation for precomputed probability maps.
DiceReport evaluate_probabilities(std::span<const TensorF> probabilities, std::span<const MultiModalCase> cases,
                                  double threshold);

}  // namespace distillseg
