#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "distillseg/inference.hpp"
#include "distillseg/network.hpp"
#include "distillseg/objectives.hpp"
#include "distillseg/optim.hpp"
#include "distillseg/preprocess.hpp"
#include "json.hpp"

namespace distillseg {

struct TrainConfig {
    int epochs = 280;
    int batch_size = 2;
    Index patch_size = 128;
    /// 0 means ceil(|train cases| / batch_size), one patch per case per epoch.
    int steps_per_epoch = 0;
    std::uint64_t seed = 0;
    OptimizerSpec optimizer;
    AugmentationRanges augmentation;
    int checkpoint_every = 10;
    int validate_every = 1;
    double overlap = 0.5;
    double threshold = 0.5;
};

void validate(const TrainConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Training schedule per kind: Adam, lr 2e-4, decay 0.60, batch 2 for the
/// UNet and Residual UNet; SGD, lr 0.1, decay 0.85, batch 4 for the Cascaded
/// UNet; 280 epochs, decay every 56 epochs, 128^3 patches.
TrainConfig default_config(NetworkKind kind);

struct EpochRecord {
    int epoch = 0;
    double lr = 0;
    LossBreakdown train;
    std::optional<DiceReport> validation;
};

void to_json(nlohmann::json& j, const EpochRecord& r);
void from_json(const nlohmann::json& j, EpochRecord& r);

struct TrainedModel {
    NetworkF network;
    std::vector<EpochRecord> history;
    std::filesystem::path final_checkpoint;
};

struct TrainOptions {
    /// Where `epoch_<n>.ckpt` and `history.json` go; empty disables persistence.
    std::filesystem::path checkpoint_dir;
    /// Continue from the newest checkpoint in `checkpoint_dir` if present.
    bool resume = true;
    /// Stop after this many epochs in total (for resumption tests); < 0 runs all.
    int stop_after_epoch = -1;
    std::function<void(const EpochRecord&)> on_epoch;
    nlohmann::json meta = nlohmann::json::object();
};

/// Minimizes total_loss on augmented random patches of the (normalized,
/// labeled) training cases. Deterministic in `config.seed`.
TrainedModel train_model(const NetworkConfig& network, std::span<const MultiModalCase> train_cases,
                         std::span<const MultiModalCase> val_cases, const TrainConfig& config,
                         const TrainOptions& options = {});

/// Assembles the augmented patch batch for one optimization step.
struct PatchBatch {
    TensorF inputs;   ///< (B, 4, P, P, P)
    TensorF targets;  ///< (B, 3, P, P, P), binary
    std::vector<std::string> case_ids;
    std::vector<std::array<Index, 3>> patch_origins;
};

PatchBatch make_batch(std::span<const MultiModalCase> cases, std::span<const std::size_t> indices,
                      const TrainConfig& config, int epoch, int step);

/// Most regions won outright; ties by mean dice, then UNet, Residual UNet,
/// Cascaded UNet.
NetworkKind select_best(const std::map<NetworkKind, DiceReport>& reports);

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, int epoch);
/// Newest `epoch_<n>.ckpt` in `dir`, if any.
std::optional<std::pair<int, std::filesystem::path>> latest_checkpoint(const std::filesystem::path& dir);

}  // namespace distillseg
