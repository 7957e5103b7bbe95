#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "distillseg/layers.hpp"
#include "json.hpp"

namespace distillseg {

enum class OptimizerKind { Adam, SGD };

struct OptimizerSpec {
    OptimizerKind kind = OptimizerKind::Adam;
    double initial_lr = 2e-4;
    double decay_rate = 0.60;
    int decay_interval_epochs = 56;
    /// SGD only.
    double momentum = 0.9;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    bool operator==(const OptimizerSpec&) const = default;
};

void validate(const OptimizerSpec& spec);
void to_json(nlohmann::json& j, const OptimizerSpec& s);
void from_json(const nlohmann::json& j, OptimizerSpec& s);

/// Stepwise geometric decay: initial_lr * decay_rate^floor(epoch / interval).
double lr_at(const OptimizerSpec& spec, int epoch);

/// Adam or SGD with momentum over a network's trainable parameters. State
/// slots follow the parameter order.
template <typename Scalar>
class Optimizer {
public:
    using Param = nn::Parameter<Scalar>;

    explicit Optimizer(OptimizerSpec spec) : spec_(spec) { validate(spec_); }

    const OptimizerSpec& spec() const { return spec_; }
    std::int64_t steps() const { return step_; }

    void step(const std::vector<Param*>& params, double lr) {
        ensure_state(params);
        ++step_;
        std::size_t slot = 0;
        for (Param* p : params) {
            if (!p->trainable) continue;
            const auto& g = p->grad.array();
            auto& m = first_[slot];
            if (spec_.kind == OptimizerKind::SGD) {
                m.array() = Scalar(spec_.momentum) * m.array() + g;
                p->value.array() -= Scalar(lr) * m.array();
            } else {
                auto& v = second_[slot];
                m.array() = Scalar(spec_.beta1) * m.array() + Scalar(1 - spec_.beta1) * g;
                v.array() = Scalar(spec_.beta2) * v.array() + Scalar(1 - spec_.beta2) * g * g;
                const double c1 = 1 - std::pow(spec_.beta1, double(step_));
                const double c2 = 1 - std::pow(spec_.beta2, double(step_));
                p->value.array() -= Scalar(lr / c1) * m.array() / ((v.array() / Scalar(c2)).sqrt() + Scalar(spec_.epsilon));
            }
            ++slot;
        }
    }

    /// Named state tensors for checkpointing: "m/<param>", "v/<param>".
    std::vector<std::pair<std::string, Tensor<Scalar>*>> state(const std::vector<Param*>& params) {
        ensure_state(params);
        std::vector<std::pair<std::string, Tensor<Scalar>*>> out;
        std::size_t slot = 0;
        for (Param* p : params) {
            if (!p->trainable) continue;
            out.emplace_back("m/" + p->name, &first_[slot]);
            if (spec_.kind == OptimizerKind::Adam) out.emplace_back("v/" + p->name, &second_[slot]);
            ++slot;
        }
        return out;
    }

    void set_steps(std::int64_t steps) { step_ = steps; }

private:
    void ensure_state(const std::vector<Param*>& params) {
        if (!first_.empty()) return;
        for (Param* p : params) {
            if (!p->trainable) continue;
            first_.emplace_back(p->value.shape());
            if (spec_.kind == OptimizerKind::Adam) second_.emplace_back(p->value.shape());
        }
    }

    OptimizerSpec spec_;
    std::int64_t step_ = 0;
    std::vector<Tensor<Scalar>> first_, second_;
};

}  // namespace distillseg
