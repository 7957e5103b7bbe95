#include "distillseg/split.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "distillseg/error.hpp"
#include "distillseg/random.hpp"

namespace distillseg {
namespace {

std::size_t floor_share(std::size_t n, double share) {
    // Absorb representation error such as 0.2 * 15 = 3.0000000000000004 or 0.7 * 10 = 6.999...
    return static_cast<std::size_t>(std::floor(static_cast<double>(n) * share + 1e-9));
}

}  // namespace

DatasetSplit make_split(const std::vector<std::string>& case_ids, const SplitFractions& fractions,
                        const UnlabeledRule& rule, std::uint64_t seed) {
    if (case_ids.empty()) throw ContractError("make_split: no case ids");
    if (std::set<std::string>(case_ids.begin(), case_ids.end()).size() != case_ids.size())
        throw ContractError("make_split: case ids are not unique");
    if (fractions.train < 0 || fractions.validation < 0 || fractions.test < 0)
        throw ConfigError("split fractions must be non-negative");
    if (std::abs(fractions.train + fractions.validation + fractions.test - 1.0) > 1e-9)
        throw ConfigError("split fractions must sum to 1");
    if (rule.enabled && (rule.validation_share < 0 || rule.validation_share > 1 || rule.test_share < 0 ||
                         rule.test_share > 1))
        throw ConfigError("unlabeled shares must lie in [0, 1]");

    std::vector<std::string> ids = case_ids;
    Rng rng(derive_seed(seed, {0x5b17}));
    rng.shuffle(ids);

    const std::size_t n = ids.size();
    const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * fractions.validation));
    const auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * fractions.test));
    if (n_val + n_test > n) throw ConfigError("split fractions leave no room for training cases");

    DatasetSplit split;
    split.seed = seed;
    auto it = ids.begin();
    split.train.assign(it, it + static_cast<std::ptrdiff_t>(n - n_val - n_test));
    it += static_cast<std::ptrdiff_t>(n - n_val - n_test);
    split.validation.assign(it, it + static_cast<std::ptrdiff_t>(n_val));
    it += static_cast<std::ptrdiff_t>(n_val);
    split.test.assign(it, ids.end());

    if (rule.enabled) {
        auto take = [&](std::vector<std::string>& from, std::size_t k) {
            split.unlabeled_pool.insert(split.unlabeled_pool.end(), from.begin(),
                                        from.begin() + static_cast<std::ptrdiff_t>(k));
            from.erase(from.begin(), from.begin() + static_cast<std::ptrdiff_t>(k));
        };
        take(split.validation, floor_share(split.validation.size(), rule.validation_share));
        take(split.test, floor_share(split.test.size(), rule.test_share));
    }

    for (auto* part : {&split.train, &split.validation, &split.test, &split.unlabeled_pool})
        std::sort(part->begin(), part->end());
    return split;
}

void to_json(nlohmann::json& j, const DatasetSplit& s) {
    j = nlohmann::json{{"train", s.train},
                       {"validation", s.validation},
                       {"test", s.test},
                       {"unlabeled_pool", s.unlabeled_pool},
                       {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, DatasetSplit& s) {
    j.at("train").get_to(s.train);
    j.at("validation").get_to(s.validation);
    j.at("test").get_to(s.test);
    j.at("unlabeled_pool").get_to(s.unlabeled_pool);
    j.at("seed").get_to(s.seed);
}

}  // namespace distillseg
