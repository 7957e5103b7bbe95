#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>

#include "distillseg/preprocess.hpp"
#include "distillseg/tensor.hpp"
#include "json.hpp"

namespace distillseg {

/// Smoothing added to numerator and denominator of the soft dice.
inline constexpr double kDiceSmooth = 1e-5;
/// Probability clamp for the cross-entropy.
inline constexpr double kBceClamp = 1e-7;

struct LossBreakdown {
    double dice_similarity = 0;
    double dice_loss = 0;
    double bce = 0;
    double total = 0;
};

void to_json(nlohmann::json& j, const LossBreakdown& l);
void from_json(const nlohmann::json& j, LossBreakdown& l);

/// Per-region dice scores (ET, TC, WT), averaged over cases.
struct DiceReport {
    std::array<double, 3> per_region{0, 0, 0};
    double mean = 0;
    int n_cases = 0;

    static DiceReport from_regions(const std::array<double, 3>& scores, int n_cases);
    double operator[](int region) const { return per_region[static_cast<std::size_t>(region)]; }
    bool operator==(const DiceReport&) const = default;
};

void to_json(nlohmann::json& j, const DiceReport& r);
void from_json(const nlohmann::json& j, DiceReport& r);

namespace detail {

template <typename Scalar>
void check_pair(const Tensor<Scalar>& pred, const Tensor<Scalar>& target) {
    if (!(pred.shape() == target.shape()))
        throw ContractError("prediction " + pred.shape().str() + " and target " + target.shape().str() +
                            " shapes differ");
    if (pred.rank() < 2) throw ContractError("expected (B, K, ...) tensors");
}

}  // namespace detail

/// (1/K) sum_k (2 sum p g + eps) / (sum p^2 + sum g^2 + eps), sums over
/// batch and voxels of region k (axis 1).
template <typename Scalar>
double soft_dice_similarity(const Tensor<Scalar>& pred, const Tensor<Scalar>& target) {
    detail::check_pair(pred, target);
    const Index batch = pred.dim(0), regions = pred.dim(1), n = pred.shape().stride(1);
    double acc = 0;
    for (Index k = 0; k < regions; ++k) {
        double inter = 0, denom = 0;
        for (Index b = 0; b < batch; ++b) {
            const Index off = (b * regions + k) * n;
            for (Index i = 0; i < n; ++i) {
                const double p = pred[off + i], g = target[off + i];
                inter += p * g;
                denom += p * p + g * g;
            }
        }
        acc += (2 * inter + kDiceSmooth) / (denom + kDiceSmooth);
    }
    return acc / static_cast<double>(regions);
}

/// Mean binary cross-entropy over all outputs, predictions clamped to
/// [kBceClamp, 1 - kBceClamp].
template <typename Scalar>
double bce_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& target) {
    detail::check_pair(pred, target);
    double acc = 0;
    for (Index i = 0; i < pred.size(); ++i) {
        const double p = std::clamp<double>(pred[i], kBceClamp, 1 - kBceClamp);
        const double g = target[i];
        acc += g * std::log(p) + (1 - g) * std::log(1 - p);
    }
    return -acc / static_cast<double>(pred.size());
}

template <typename Scalar>
LossBreakdown total_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& target) {
    LossBreakdown l;
    l.dice_similarity = soft_dice_similarity(pred, target);
    l.dice_loss = 1.0 - l.dice_similarity;
    l.bce = bce_loss(pred, target);
    l.total = l.dice_loss + l.bce;
    return l;
}

/// total_loss plus its gradient with respect to `pred` (zero where the BCE
/// clamp is active).
template <typename Scalar>
LossBreakdown total_loss_with_grad(const Tensor<Scalar>& pred, const Tensor<Scalar>& target, Tensor<Scalar>& grad) {
    const LossBreakdown l = total_loss(pred, target);
    grad = Tensor<Scalar>(pred.shape());
    const Index batch = pred.dim(0), regions = pred.dim(1), n = pred.shape().stride(1);
    const double inv_n = 1.0 / static_cast<double>(pred.size());
    for (Index k = 0; k < regions; ++k) {
        double inter = 0, denom = 0;
        for (Index b = 0; b < batch; ++b) {
            const Index off = (b * regions + k) * n;
            for (Index i = 0; i < n; ++i) {
                const double p = pred[off + i], g = target[off + i];
                inter += p * g;
                denom += p * p + g * g;
            }
        }
        const double num = 2 * inter + kDiceSmooth, den = denom + kDiceSmooth;
        for (Index b = 0; b < batch; ++b) {
            const Index off = (b * regions + k) * n;
            for (Index i = 0; i < n; ++i) {
                const double p = pred[off + i], g = target[off + i];
                // d(1 - similarity)/dp, similarity averaged over regions
                double d = -(2 * g / den - num * 2 * p / (den * den)) / static_cast<double>(regions);
                if (p > kBceClamp && p < 1 - kBceClamp) d += -inv_n * (g / p - (1 - g) / (1 - p));
                grad[off + i] = static_cast<Scalar>(d);
            }
        }
    }
    return l;
}

/// 2|P n G| / (|P| + |G|) over nonzero entries; 1 when both are empty.
double dice_metric(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> target);
double dice_metric(const Tensor<std::uint8_t>& pred, const Tensor<std::uint8_t>& target);

/// Thresholds a (3, D, H, W) probability map into a region mask.
RegionMask binarize(const TensorF& probabilities, double threshold);

/// Per-region dice of a predicted region mask against the truth.
std::array<double, 3> region_dice(const RegionMask& pred, const RegionMask& truth);

}  // namespace distillseg
