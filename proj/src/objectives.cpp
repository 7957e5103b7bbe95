#include "distillseg/objectives.hpp"

namespace distillseg {

void to_json(nlohmann::json& j, const LossBreakdown& l) {
    j = nlohmann::json{{"dice_similarity", l.dice_similarity},
                       {"dice_loss", l.dice_loss},
                       {"bce", l.bce},
                       {"total", l.total}};
}

void from_json(const nlohmann::json& j, LossBreakdown& l) {
    j.at("dice_similarity").get_to(l.dice_similarity);
    j.at("dice_loss").get_to(l.dice_loss);
    j.at("bce").get_to(l.bce);
    j.at("total").get_to(l.total);
}

DiceReport DiceReport::from_regions(const std::array<double, 3>& scores, int n_cases) {
    DiceReport r;
    r.per_region = scores;
    r.mean = (scores[0] + scores[1] + scores[2]) / 3.0;
    r.n_cases = n_cases;
    return r;
}

void to_json(nlohmann::json& j, const DiceReport& r) {
    j = nlohmann::json{{"ET", r.per_region[0]},
                       {"TC", r.per_region[1]},
                       {"WT", r.per_region[2]},
                       {"mean", r.mean},
                       {"n_cases", r.n_cases}};
}

void from_json(const nlohmann::json& j, DiceReport& r) {
    r = DiceReport::from_regions({j.at("ET").get<double>(), j.at("TC").get<double>(), j.at("WT").get<double>()},
                                 j.at("n_cases").get<int>());
}

double dice_metric(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> target) {
    if (pred.size() != target.size()) throw ContractError("dice_metric: mask sizes differ");
    std::size_t p = 0, g = 0, both = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool a = pred[i] != 0, b = target[i] != 0;
        p += a;
        g += b;
        both += a && b;
    }
    if (p + g == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

double dice_metric(const Tensor<std::uint8_t>& pred, const Tensor<std::uint8_t>& target) {
    if (!(pred.shape() == target.shape()))
        throw ContractError("dice_metric: shapes " + pred.shape().str() + " and " + target.shape().str() + " differ");
    return dice_metric(std::span(pred.data(), static_cast<std::size_t>(pred.size())),
                       std::span(target.data(), static_cast<std::size_t>(target.size())));
}

RegionMask binarize(const TensorF& probabilities, double threshold) {
    Tensor<std::uint8_t> out(probabilities.shape());
    for (Index i = 0; i < probabilities.size(); ++i) out[i] = probabilities[i] > threshold;
    return RegionMask(std::move(out));
}

std::array<double, 3> region_dice(const RegionMask& pred, const RegionMask& truth) {
    if (!(pred.data().shape() == truth.data().shape())) throw ContractError("region_dice: shapes differ");
    const auto n = static_cast<std::size_t>(pred.data().shape().stride(0));
    std::array<double, 3> out{};
    for (std::size_t k = 0; k < 3; ++k)
        out[k] = dice_metric(std::span(pred.data().data() + k * n, n), std::span(truth.data().data() + k * n, n));
    return out;
}

}  // namespace distillseg
