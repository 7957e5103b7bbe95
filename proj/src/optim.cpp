#include "distillseg/optim.hpp"

#include <cmath>

#include "distillseg/error.hpp"

namespace distillseg {

void validate(const OptimizerSpec& s) {
    if (!(s.initial_lr > 0)) throw ConfigError("initial_lr must be > 0");
    if (!(s.decay_rate > 0 && s.decay_rate <= 1)) throw ConfigError("decay_rate must lie in (0, 1]");
    if (s.decay_interval_epochs < 1) throw ConfigError("decay_interval_epochs must be >= 1");
    if (s.momentum < 0 || s.momentum >= 1) throw ConfigError("momentum must lie in [0, 1)");
}

double lr_at(const OptimizerSpec& spec, int epoch) {
    if (epoch < 0) throw ContractError("epoch must be non-negative");
    return spec.initial_lr * std::pow(spec.decay_rate, epoch / spec.decay_interval_epochs);
}

void to_json(nlohmann::json& j, const OptimizerSpec& s) {
    j = nlohmann::json{{"kind", s.kind == OptimizerKind::Adam ? "adam" : "sgd"},
                       {"initial_lr", s.initial_lr},
                       {"decay_rate", s.decay_rate},
                       {"decay_interval_epochs", s.decay_interval_epochs},
                       {"momentum", s.momentum},
                       {"beta1", s.beta1},
                       {"beta2", s.beta2},
                       {"epsilon", s.epsilon}};
}

void from_json(const nlohmann::json& j, OptimizerSpec& s) {
    if (j.contains("kind")) {
        const auto k = j.at("kind").get<std::string>();
        if (k == "adam") s.kind = OptimizerKind::Adam;
        else if (k == "sgd") s.kind = OptimizerKind::SGD;
        else throw ConfigError("unknown optimizer '" + k + "'");
    }
    s.initial_lr = j.value("initial_lr", s.initial_lr);
    s.decay_rate = j.value("decay_rate", s.decay_rate);
    s.decay_interval_epochs = j.value("decay_interval_epochs", s.decay_interval_epochs);
    s.momentum = j.value("momentum", s.momentum);
    s.beta1 = j.value("beta1", s.beta1);
    s.beta2 = j.value("beta2", s.beta2);
    s.epsilon = j.value("epsilon", s.epsilon);
}

}  // namespace distillseg
