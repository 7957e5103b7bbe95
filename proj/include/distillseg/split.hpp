#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace distillseg {

struct SplitFractions {
    double train = 0.6;
    double validation = 0.2;
    double test = 0.2;
};

/// Which share of the validation and test partitions is set aside as
/// unlabeled data. Counts are floored; the remainder stays in place.
struct UnlabeledRule {
    bool enabled = true;
    double validation_share = 0.5;
    double test_share = 0.2;
};

struct DatasetSplit {
    std::vector<std::string> train;
    std::vector<std::string> validation;
    std::vector<std::string> test;
    std::vector<std::string> unlabeled_pool;
    std::uint64_t seed = 0;

    bool operator==(const DatasetSplit&) const = default;
};

DatasetSplit make_split(const std::vector<std::string>& case_ids, const SplitFractions& fractions,
                        const UnlabeledRule& rule, std::uint64_t seed);

void to_json(nlohmann::json& j, const DatasetSplit& s);
void from_json(const nlohmann::json& j, DatasetSplit& s);

}  // namespace distillseg
