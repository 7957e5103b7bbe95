#include "distillseg/inference.hpp"

#include <algorithm>
#include <cmath>

#include "distillseg/preprocess.hpp"

namespace distillseg {

std::vector<Index> window_origins(Index extent, const SlidingWindow& window) {
    const Index p = window.patch_size;
    if (extent <= p) return {-((p - extent) / 2)};
    const Index step = std::max<Index>(1, static_cast<Index>(std::floor(static_cast<double>(p) * (1.0 - window.overlap))));
    std::vector<Index> out;
    for (Index o = 0; o + p < extent; o += step) out.push_back(o);
    out.push_back(extent - p);
    return out;
}

TensorF predict_case(const NetworkF& network, const MultiModalCase& c, const SlidingWindow& window) {
    if (window.overlap < 0 || window.overlap >= 1) throw ParameterError("overlap must lie in [0, 1)");
    if (window.patch_size <= 0 || window.patch_size % network.size_divisor() != 0)
        throw ShapeError("patch size " + std::to_string(window.patch_size) + " is not divisible by " +
                         std::to_string(network.size_divisor()));

    const auto s = c.shape();
    const TensorF volume = stack_modalities(c);
    const Index p = window.patch_size;
    const Index regions = network.config().out_regions;
    TensorF sum(Shape{regions, s[0], s[1], s[2]});
    Tensor<float> count(Shape{s[0], s[1], s[2]});

    const auto oz = window_origins(s[0], window), oy = window_origins(s[1], window), ox = window_origins(s[2], window);
    for (Index z0 : oz)
        for (Index y0 : oy)
            for (Index x0 : ox) {
                TensorF in = crop_window(volume, {z0, y0, x0}, {p, p, p});
                in.reshape(Shape{1, 4, p, p, p});
                const TensorF out = network.predict(in);
                for (Index z = std::max<Index>(0, -z0); z < std::min(p, s[0] - z0); ++z)
                    for (Index y = std::max<Index>(0, -y0); y < std::min(p, s[1] - y0); ++y)
                        for (Index x = std::max<Index>(0, -x0); x < std::min(p, s[2] - x0); ++x) {
                            count(z0 + z, y0 + y, x0 + x) += 1.0f;
                            for (Index r = 0; r < regions; ++r) sum(r, z0 + z, y0 + y, x0 + x) += out(0, r, z, y, x);
                        }
            }

    for (Index r = 0; r < regions; ++r) sum.slab(r) /= count.array();
    return sum;
}

DiceReport evaluate_probabilities(std::span<const TensorF> probabilities, std::span<const MultiModalCase> cases,
                                  double threshold) {
    if (cases.empty()) throw ContractError("evaluation needs at least one case");
    if (probabilities.size() != cases.size()) throw ContractError("one probability map per case required");
    std::array<double, 3> acc{0, 0, 0};
    for (std::size_t i = 0; i < cases.size(); ++i) {
        if (!cases[i].has_label()) throw ContractError("evaluation case " + cases[i].id() + " has no label");
        const auto d = region_dice(binarize(probabilities[i], threshold), labels_to_regions(*cases[i].label()));
        for (int k = 0; k < 3; ++k) acc[k] += d[k];
    }
    for (auto& a : acc) a /= static_cast<double>(cases.size());
    return DiceReport::from_regions(acc, static_cast<int>(cases.size()));
}

DiceReport evaluate_model(const NetworkF& network, std::span<const MultiModalCase> cases, double threshold,
                          const SlidingWindow& window) {
    if (cases.empty()) throw ContractError("evaluation needs at least one case");
    std::vector<TensorF> maps;
    maps.reserve(cases.size());
    for (const auto& c : cases) {
        if (!c.has_label()) throw ContractError("evaluation case " + c.id() + " has no label");
        maps.push_back(predict_case(network, c, window));
    }
    return evaluate_probabilities(maps, cases, threshold);
}

}  // namespace distillseg
