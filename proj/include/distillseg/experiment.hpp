#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "distillseg/distillation.hpp"
#include "distillseg/network.hpp"
#include "distillseg/phantom.hpp"
#include "distillseg/split.hpp"
#include "distillseg/training.hpp"
#include "json.hpp"

namespace distillseg {

inline constexpr int kManifestSchemaVersion = 1;

enum class DataSource { Phantom, Directory };

struct DataConfig {
    DataSource source = DataSource::Phantom;
    /// Directory of case subdirectories (source = directory).
    std::filesystem::path path;
    int phantom_count = 20;
    VolumeShape phantom_shape{48, 48, 48};
    TumorSpec phantom_spec;
};

struct ModelSettings {
    NetworkConfig network;
    TrainConfig training;
};

struct ExperimentConfig {
    std::string run_id = "default";
    std::uint64_t seed = 0;
    std::filesystem::path output_dir = "runs";
    /// "desk" or "paper": picks the defaults every unspecified field falls back to.
    std::string scale = "desk";
    DataConfig data;
    SplitFractions split;
    UnlabeledRule unlabeled;
    std::map<NetworkKind, ModelSettings> models;
    /// Student training schedule; the network follows the selected kind.
    std::optional<TrainConfig> student_training;
    Fusion fusion = Fusion::Average;
    SlidingWindow window{32, 0.5};
    double threshold = 0.5;
    double pseudo_label_threshold = 0.5;

    std::filesystem::path run_dir() const { return output_dir / run_id; }
    TrainConfig student_config(NetworkKind kind) const;
};

/// Reduced schedule for CPU runs: 30 epochs on 32^3 patches, Adam at 5e-3
/// (UNet, Residual UNet) or SGD at 0.1 (Cascaded UNet), decay every 6 epochs.
TrainConfig desk_config(NetworkKind kind);

ExperimentConfig default_experiment(const std::string& scale = "desk");

/// Parses a JSON experiment file; every field is optional and overrides the
/// defaults of the chosen scale. Relative paths resolve against `base_dir`.
ExperimentConfig parse_experiment(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& c);

/// Throws ConfigError on anything that would fail later (missing data, bad
/// fractions, invalid networks or schedules).
void validate(const ExperimentConfig& c);

/// Applies DISTILLSEG_SEED if set.
void apply_seed_override(ExperimentConfig& c);

/// FNV-1a over the canonical JSON dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& j);

/// Pipeline stages in execution order.
inline const std::vector<std::string> kStages{
    "data",          "split",           "train/unet",          "train/residual_unet", "train/cascaded_unet",
    "evaluate/unet", "evaluate/residual_unet", "evaluate/cascaded_unet", "select_best",  "evaluate/ensemble",
    "pseudo_label",  "distill",         "evaluate/student"};

struct PipelineOptions {
    /// Last stage to run (inclusive); empty runs everything.
    std::string until;
    /// Write table and plots after the last stage.
    bool emit_report = true;
    std::function<void(const std::string&)> log;
};

struct PipelineResult {
    nlohmann::json manifest;
    std::vector<std::string> executed;
    std::vector<std::string> reused;
};

/// Runs (or resumes) the experiment in `config.run_dir()`. A stage is reused
/// when the manifest records it with the same config hash, its artifacts
/// exist, and none of its inputs were recomputed in this invocation.
PipelineResult run_pipeline(const ExperimentConfig& config, const PipelineOptions& options = {});

std::filesystem::path manifest_path(const ExperimentConfig& config);
nlohmann::json read_manifest(const std::filesystem::path& path);
/// Atomic (temp file + rename). Every checkpoint the manifest references must exist.
void write_manifest(const std::filesystem::path& path, const nlohmann::json& manifest);

/// Loads the case list the data stage produced, normalized.
std::vector<MultiModalCase> load_cases(const ExperimentConfig& config, const std::vector<std::string>& ids);

}  // namespace distillseg
