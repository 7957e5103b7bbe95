#include "distillseg/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <regex>
#include <sstream>

#include "distillseg/checkpoint.hpp"
#include "distillseg/random.hpp"

namespace fs = std::filesystem;

namespace distillseg {

void validate(const TrainConfig& c) {
    if (c.epochs < 1) throw ConfigError("epochs must be >= 1");
    if (c.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (c.patch_size < 1) throw ConfigError("patch_size must be >= 1");
    if (c.steps_per_epoch < 0) throw ConfigError("steps_per_epoch must be >= 0");
    if (c.checkpoint_every < 1) throw ConfigError("checkpoint_every must be >= 1");
    if (c.validate_every < 1) throw ConfigError("validate_every must be >= 1");
    validate(c.optimizer);
}

TrainConfig default_config(NetworkKind kind) {
    TrainConfig c;
    c.epochs = 280;
    c.patch_size = 128;
    c.optimizer.decay_interval_epochs = c.epochs / 5;
    switch (kind) {
        case NetworkKind::UNet3D:
        case NetworkKind::ResidualUNet3D:
            c.batch_size = 2;
            c.optimizer.kind = OptimizerKind::Adam;
            c.optimizer.initial_lr = 2e-4;
            c.optimizer.decay_rate = 0.60;
            break;
        case NetworkKind::CascadedUNet3D:
            c.batch_size = 4;
            c.optimizer.kind = OptimizerKind::SGD;
            c.optimizer.initial_lr = 0.1;
            c.optimizer.decay_rate = 0.85;
            c.optimizer.momentum = 0.9;
            break;
    }
    return c;
}

namespace {

nlohmann::json ranges_json(const AugmentationRanges& r) {
    return {{"enabled", r.enabled},
            {"max_rotation_deg", r.max_rotation_deg},
            {"scale_min", r.scale_min},
            {"scale_max", r.scale_max},
            {"mirror_probability", r.mirror_probability},
            {"contrast_min", r.contrast_min},
            {"contrast_max", r.contrast_max},
            {"shift_max", r.shift_max}};
}

AugmentationRanges ranges_from(const nlohmann::json& j, AugmentationRanges r) {
    r.enabled = j.value("enabled", r.enabled);
    r.max_rotation_deg = j.value("max_rotation_deg", r.max_rotation_deg);
    r.scale_min = j.value("scale_min", r.scale_min);
    r.scale_max = j.value("scale_max", r.scale_max);
    r.mirror_probability = j.value("mirror_probability", r.mirror_probability);
    r.contrast_min = j.value("contrast_min", r.contrast_min);
    r.contrast_max = j.value("contrast_max", r.contrast_max);
    r.shift_max = j.value("shift_max", r.shift_max);
    return r;
}

}  // namespace

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"epochs", c.epochs},
                       {"batch_size", c.batch_size},
                       {"patch_size", c.patch_size},
                       {"steps_per_epoch", c.steps_per_epoch},
                       {"seed", c.seed},
                       {"optimizer", c.optimizer},
                       {"augmentation", ranges_json(c.augmentation)},
                       {"checkpoint_every", c.checkpoint_every},
                       {"validate_every", c.validate_every},
                       {"overlap", c.overlap},
                       {"threshold", c.threshold}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.patch_size = j.value("patch_size", c.patch_size);
    c.steps_per_epoch = j.value("steps_per_epoch", c.steps_per_epoch);
    c.seed = j.value("seed", c.seed);
    if (j.contains("optimizer")) {
        OptimizerSpec s = c.optimizer;
        from_json(j.at("optimizer"), s);
        c.optimizer = s;
    }
    if (j.contains("augmentation")) c.augmentation = ranges_from(j.at("augmentation"), c.augmentation);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.validate_every = j.value("validate_every", c.validate_every);
    c.overlap = j.value("overlap", c.overlap);
    c.threshold = j.value("threshold", c.threshold);
}

void to_json(nlohmann::json& j, const EpochRecord& r) {
    j = nlohmann::json{{"epoch", r.epoch}, {"lr", r.lr}, {"train", r.train}};
    j["validation"] = r.validation ? nlohmann::json(*r.validation) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, EpochRecord& r) {
    r.epoch = j.at("epoch").get<int>();
    r.lr = j.at("lr").get<double>();
    r.train = j.at("train").get<LossBreakdown>();
    if (j.contains("validation") && !j.at("validation").is_null()) r.validation = j.at("validation").get<DiceReport>();
}

fs::path checkpoint_path(const fs::path& dir, int epoch) { return dir / ("epoch_" + std::to_string(epoch) + ".ckpt"); }

std::optional<std::pair<int, fs::path>> latest_checkpoint(const fs::path& dir) {
    if (dir.empty() || !fs::is_directory(dir)) return std::nullopt;
    static const std::regex pattern(R"(epoch_(\d+)\.ckpt)");
    std::optional<std::pair<int, fs::path>> best;
    for (const auto& e : fs::directory_iterator(dir)) {
        std::smatch m;
        const std::string name = e.path().filename().string();
        if (!std::regex_match(name, m, pattern)) continue;
        const int epoch = std::stoi(m[1]);
        if (!best || epoch > best->first) best = {epoch, e.path()};
    }
    return best;
}

PatchBatch make_batch(std::span<const MultiModalCase> cases, std::span<const std::size_t> indices,
                      const TrainConfig& config, int epoch, int step) {
    const Index p = config.patch_size, b = static_cast<Index>(indices.size());
    PatchBatch batch;
    batch.inputs = TensorF(Shape{b, 4, p, p, p});
    batch.targets = TensorF(Shape{b, 3, p, p, p});
    for (Index i = 0; i < b; ++i) {
        const auto& c = cases[indices[static_cast<std::size_t>(i)]];
        const auto tags = {std::uint64_t(epoch), std::uint64_t(step), std::uint64_t(i)};
        Patch patch = extract_patch(c, p, derive_seed(config.seed, {0xba7c, derive_seed(0, tags)}));
        const auto params = draw_augmentation(config.augmentation, derive_seed(config.seed, {0xa114, derive_seed(0, tags)}));
        apply_augmentation(patch.inputs, *patch.targets, params);
        batch.inputs.slab(i) = patch.inputs.array();
        batch.targets.slab(i) = patch.targets->array().cast<float>();
        batch.case_ids.push_back(c.id());
        batch.patch_origins.push_back(patch.origin);
    }
    return batch;
}

namespace {

void write_history(const fs::path& dir, const std::vector<EpochRecord>& history) {
    const fs::path tmp = dir / "history.json.tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw IoError("cannot write " + tmp.string());
        out << nlohmann::json(history).dump(2) << '\n';
    }
    fs::rename(tmp, dir / "history.json");
}

std::vector<EpochRecord> read_history(const fs::path& dir) {
    std::ifstream in(dir / "history.json");
    if (!in) return {};
    return nlohmann::json::parse(in).get<std::vector<EpochRecord>>();
}

}  // namespace

TrainedModel train_model(const NetworkConfig& network_config, std::span<const MultiModalCase> train_cases,
                         std::span<const MultiModalCase> val_cases, const TrainConfig& config,
                         const TrainOptions& options) {
    validate(config);
    if (train_cases.empty()) throw ContractError("train_model: no training cases");
    for (const auto& c : train_cases)
        if (!c.has_label()) throw ContractError("train_model: training case " + c.id() + " is unlabeled");

    NetworkF net(network_config, derive_seed(config.seed, {0x1a17}));
    if (config.patch_size % net.size_divisor() != 0)
        throw ConfigError("patch size " + std::to_string(config.patch_size) + " not divisible by " +
                          std::to_string(net.size_divisor()));
    Optimizer<float> opt(config.optimizer);
    std::vector<EpochRecord> history;
    int start = 0;

    const bool persist = !options.checkpoint_dir.empty();
    if (persist) {
        std::error_code ec;
        fs::create_directories(options.checkpoint_dir, ec);
        if (ec) throw IoError("cannot create " + options.checkpoint_dir.string());
        if (options.resume)
            if (auto latest = latest_checkpoint(options.checkpoint_dir); latest && latest->first <= config.epochs) {
                const Checkpoint ckpt = read_checkpoint(latest->second);
                if (ckpt.network == network_config) {
                    restore(ckpt, net, &opt);
                    history = read_history(options.checkpoint_dir);
                    history.resize(static_cast<std::size_t>(std::min<int>(latest->first, int(history.size()))));
                    start = latest->first;
                }
            }
    }

    const auto n = train_cases.size();
    const int steps = config.steps_per_epoch > 0
                          ? config.steps_per_epoch
                          : static_cast<int>((n + static_cast<std::size_t>(config.batch_size) - 1) /
                                             static_cast<std::size_t>(config.batch_size));
    const int last = options.stop_after_epoch >= 0 ? std::min(config.epochs, options.stop_after_epoch) : config.epochs;
    fs::path final_ckpt;
    if (persist && start > 0) final_ckpt = checkpoint_path(options.checkpoint_dir, start);

    for (int epoch = start; epoch < last; ++epoch) {
        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr_at(config.optimizer, epoch);

        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        Rng order_rng(derive_seed(config.seed, {0x0de5, std::uint64_t(epoch)}));
        order_rng.shuffle(order);

        for (int step = 0; step < steps; ++step) {
            std::vector<std::size_t> idx;
            for (int i = 0; i < config.batch_size; ++i)
                idx.push_back(order[(static_cast<std::size_t>(step) * config.batch_size + i) % n]);
            const PatchBatch batch = make_batch(train_cases, idx, config, epoch, step);

            net.zero_grad();
            const TensorF prob = net.forward(batch.inputs);
            TensorF grad;
            const LossBreakdown loss = total_loss_with_grad(prob, batch.targets, grad);
            if (!std::isfinite(loss.total)) {
                std::ostringstream os;
                os << "non-finite loss at epoch " << epoch << " step " << step << " (cases:";
                for (const auto& id : batch.case_ids) os << ' ' << id;
                os << ")";
                throw TrainingError(os.str());
            }
            net.backward(grad);
            opt.step(net.parameters(), rec.lr);

            rec.train.dice_similarity += loss.dice_similarity / steps;
            rec.train.dice_loss += loss.dice_loss / steps;
            rec.train.bce += loss.bce / steps;
            rec.train.total += loss.total / steps;
        }

        const bool final_epoch = epoch + 1 == config.epochs;
        if (!val_cases.empty() && ((epoch + 1) % config.validate_every == 0 || final_epoch))
            rec.validation = evaluate_model(net, val_cases, config.threshold, {config.patch_size, config.overlap});
        history.push_back(rec);
        if (options.on_epoch) options.on_epoch(rec);

        if (persist && ((epoch + 1) % config.checkpoint_every == 0 || final_epoch || epoch + 1 == last)) {
            final_ckpt = checkpoint_path(options.checkpoint_dir, epoch + 1);
            save_checkpoint(final_ckpt, net, &opt, epoch + 1, options.meta);
            write_history(options.checkpoint_dir, history);
        }
    }
    return TrainedModel{std::move(net), std::move(history), final_ckpt};
}

NetworkKind select_best(const std::map<NetworkKind, DiceReport>& reports) {
    if (reports.size() < 2) throw ContractError("select_best needs at least two reports");
    std::map<NetworkKind, int> wins;
    for (int r = 0; r < 3; ++r)
        for (const auto& [kind, rep] : reports) {
            bool strictly_best = true;
            for (const auto& [other, orep] : reports)
                if (other != kind && !(rep[r] > orep[r])) strictly_best = false;
            if (strictly_best) ++wins[kind];
        }
    std::optional<NetworkKind> best;
    for (NetworkKind k : kNetworkKinds) {
        const auto it = reports.find(k);
        if (it == reports.end()) continue;
        if (!best) {
            best = k;
            continue;
        }
        const int wk = wins[k], wb = wins[*best];
        if (wk > wb || (wk == wb && it->second.mean > reports.at(*best).mean)) best = k;
    }
    return *best;
}

}  // namespace distillseg
