#include "distillseg/distillation.hpp"

#include <algorithm>
#include <set>

#include "distillseg/random.hpp"

namespace distillseg {

std::string fusion_name(Fusion f) { return f == Fusion::Average ? "average" : "majority"; }

Fusion parse_fusion(const std::string& s) {
    if (s == "average") return Fusion::Average;
    if (s == "majority") return Fusion::Majority;
    throw ConfigError("unknown fusion '" + s + "'");
}

void validate(const EnsembleSpec& spec) {
    if (spec.members.size() < 2)
        throw ParameterError("an ensemble needs at least 2 members, got " + std::to_string(spec.members.size()));
    for (const auto* m : spec.members) {
        if (!m) throw ParameterError("null ensemble member");
        if (m->config().out_regions != spec.members[0]->config().out_regions ||
            m->config().in_channels != spec.members[0]->config().in_channels)
            throw ParameterError("ensemble members disagree on channel layout");
    }
}

TensorF fuse(std::span<const TensorF> maps, Fusion fusion, double member_threshold) {
    if (maps.empty()) throw ParameterError("nothing to fuse");
    for (const auto& m : maps)
        if (!(m.shape() == maps[0].shape())) throw ShapeError("member maps differ in shape");
    TensorF out(maps[0].shape());
    if (fusion == Fusion::Average) {
        Eigen::ArrayXd acc = Eigen::ArrayXd::Zero(out.size());
        for (const auto& m : maps) acc += m.array().cast<double>();
        out.array() = (acc / static_cast<double>(maps.size())).cast<float>();
        return out;
    }
    Eigen::ArrayXi votes = Eigen::ArrayXi::Zero(out.size());
    for (const auto& m : maps) votes += (m.array() > static_cast<float>(member_threshold)).cast<int>();
    out.array() = (2 * votes > static_cast<int>(maps.size())).cast<float>();
    return out;
}

TensorF ensemble_predict(const EnsembleSpec& spec, const MultiModalCase& c) {
    validate(spec);
    std::vector<TensorF> maps;
    maps.reserve(spec.members.size());
    for (const auto* m : spec.members) maps.push_back(predict_case(*m, c, spec.window));
    return fuse(maps, spec.fusion, spec.member_threshold);
}

UnlabeledPool::UnlabeledPool(std::vector<MultiModalCase> cases) {
    for (auto& c : cases) {
        if (c.has_label()) truth_.emplace(c.id(), *c.label());
        view_.push_back(c.without_label());
    }
}

const LabelMask& UnlabeledPool::audit_truth(const std::string& id) const {
    ++truth_reads_;
    const auto it = truth_.find(id);
    if (it == truth_.end()) throw ContractError("no withheld truth for case " + id);
    return it->second;
}

Index repair_nesting(Tensor<std::uint8_t>& regions) {
    if (regions.rank() != 4 || regions.dim(0) != kNumRegions) throw ShapeError("expected (3, D, H, W) regions");
    const Index n = regions.shape().stride(0);
    auto et = regions.slab(kET), tc = regions.slab(kTC);
    const auto wt = regions.slab(kWT);
    Index cleared = 0;
    for (Index i = 0; i < n; ++i) {
        if (tc[i] && !wt[i]) tc[i] = 0, ++cleared;
        if (et[i] && !tc[i]) et[i] = 0, ++cleared;
    }
    return cleared;
}

double mean_confidence(const TensorF& p) {
    if (p.size() == 0) return 0;
    return p.array().cast<double>().max(1.0 - p.array().cast<double>()).mean();
}

std::vector<PseudoLabeledCase> pseudo_label(const EnsembleSpec& spec, std::span<const MultiModalCase> pool,
                                            double threshold) {
    validate(spec);
    if (pool.empty()) throw ContractError("pseudo_label: empty pool");
    std::vector<PseudoLabeledCase> out;
    for (const auto& c : pool) {
        if (c.has_label()) throw ContractError("pool case " + c.id() + " exposes its label");
        const TensorF prob = ensemble_predict(spec, c);
        Tensor<std::uint8_t> regions = binarize(prob, threshold).data();
        const Index repaired = repair_nesting(regions);
        RegionMask target(std::move(regions));
        LabelMask label = regions_to_labels(target);
        out.push_back({c.with_label(std::move(label), CaseSource::PseudoLabeled), std::move(target),
                       mean_confidence(prob), repaired});
    }
    return out;
}

DiceReport audit_pseudo_labels(std::span<const PseudoLabeledCase> pseudo, const UnlabeledPool& pool) {
    if (pseudo.empty()) throw ContractError("audit: no pseudo-labels");
    std::array<double, 3> acc{0, 0, 0};
    for (const auto& p : pseudo) {
        const auto scores = region_dice(p.region_target, labels_to_regions(pool.audit_truth(p.case_data.id())));
        for (int r = 0; r < 3; ++r) acc[r] += scores[r];
    }
    const double n = static_cast<double>(pseudo.size());
    return DiceReport::from_regions({acc[0] / n, acc[1] / n, acc[2] / n}, static_cast<int>(pseudo.size()));
}

std::vector<MultiModalCase> build_distill_set(std::span<const MultiModalCase> original,
                                              std::span<const PseudoLabeledCase> pseudo) {
    std::vector<MultiModalCase> out;
    std::set<std::string> seen;
    auto add = [&](const MultiModalCase& c) {
        if (!seen.insert(c.id()).second) throw ContractError("case id collision: " + c.id());
        if (!c.has_label()) throw ContractError("distill set case " + c.id() + " has no label");
        out.push_back(c);
    };
    for (const auto& c : original) add(c);
    for (const auto& p : pseudo) add(p.case_data);
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id() < b.id(); });
    return out;
}

TrainedModel distill(const NetworkConfig& student, std::span<const MultiModalCase> distill_set,
                     std::span<const MultiModalCase> val_cases, const TrainConfig& config, TrainOptions options) {
    TrainConfig cfg = config;
    cfg.seed = derive_seed(config.seed, {0x57d0});
    options.meta["role"] = "student";
    return train_model(student, distill_set, val_cases, cfg, options);
}

TrainedModel distill(NetworkKind best_kind, std::span<const MultiModalCase> distill_set,
                     std::span<const MultiModalCase> val_cases, const TrainConfig& config, TrainOptions options) {
    return distill(default_network_config(best_kind), distill_set, val_cases, config, std::move(options));
}

}  // namespace distillseg
