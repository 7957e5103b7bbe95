#include "distillseg/experiment.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "distillseg/checkpoint.hpp"
#include "distillseg/report.hpp"
#include "distillseg/volume_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace distillseg {

TrainConfig desk_config(NetworkKind kind) {
    TrainConfig c = default_config(kind);
    c.epochs = 30;
    c.patch_size = 32;
    c.checkpoint_every = 10;
    c.validate_every = 5;
    c.optimizer.decay_interval_epochs = c.epochs / 5;
    if (c.optimizer.kind == OptimizerKind::Adam) c.optimizer.initial_lr = 5e-3;
    return c;
}

TrainConfig ExperimentConfig::student_config(NetworkKind kind) const {
    return student_training ? *student_training : models.at(kind).training;
}

ExperimentConfig default_experiment(const std::string& scale) {
    if (scale != "desk" && scale != "paper") throw ConfigError("scale must be 'desk' or 'paper', got '" + scale + "'");
    ExperimentConfig c;
    c.scale = scale;
    const bool paper = scale == "paper";
    for (auto kind : kNetworkKinds)
        c.models[kind] = {default_network_config(kind, paper), paper ? default_config(kind) : desk_config(kind)};
    if (paper) {
        c.window = {128, 0.5};
        c.data.source = DataSource::Directory;
    }
    return c;
}

namespace {

std::array<double, 3> triple(const json& j) {
    const auto v = j.get<std::vector<double>>();
    if (v.size() != 3) throw ConfigError("expected three values");
    return {v[0], v[1], v[2]};
}

fs::path resolve(const fs::path& p, const fs::path& base) {
    if (p.empty() || p.is_absolute() || base.empty()) return p;
    return base / p;
}

}  // namespace

ExperimentConfig parse_experiment(const json& j, const fs::path& base_dir) {
    try {
        ExperimentConfig c = default_experiment(j.value("scale", std::string("desk")));
        c.run_id = j.value("run_id", c.run_id);
        c.seed = j.value("seed", c.seed);
        if (j.contains("output_dir")) c.output_dir = resolve(j.at("output_dir").get<std::string>(), base_dir);
        if (j.contains("data")) {
            const auto& d = j.at("data");
            if (d.contains("source")) {
                const auto s = d.at("source").get<std::string>();
                if (s == "phantom") c.data.source = DataSource::Phantom;
                else if (s == "directory") c.data.source = DataSource::Directory;
                else throw ConfigError("unknown data source '" + s + "'");
            }
            if (d.contains("path")) c.data.path = resolve(d.at("path").get<std::string>(), base_dir);
            if (d.contains("phantom")) {
                const auto& p = d.at("phantom");
                c.data.phantom_count = p.value("count", c.data.phantom_count);
                if (p.contains("shape")) {
                    const auto s = p.at("shape").get<std::vector<Index>>();
                    if (s.size() != 3) throw ConfigError("phantom shape needs three extents");
                    c.data.phantom_shape = {s[0], s[1], s[2]};
                }
                auto& t = c.data.phantom_spec;
                if (p.contains("whole_tumor")) t.whole_tumor = triple(p.at("whole_tumor"));
                if (p.contains("tumor_core")) t.tumor_core = triple(p.at("tumor_core"));
                if (p.contains("enhancing")) t.enhancing = triple(p.at("enhancing"));
                if (p.contains("brain")) t.brain = triple(p.at("brain"));
                t.radius_jitter = p.value("radius_jitter", t.radius_jitter);
                t.center_jitter = p.value("center_jitter", t.center_jitter);
                t.noise = p.value("noise", t.noise);
            }
        }
        if (j.contains("split")) {
            const auto& s = j.at("split");
            c.split.train = s.value("train", c.split.train);
            c.split.validation = s.value("validation", c.split.validation);
            c.split.test = s.value("test", c.split.test);
            if (s.contains("unlabeled")) {
                const auto& u = s.at("unlabeled");
                c.unlabeled.enabled = u.value("enabled", c.unlabeled.enabled);
                c.unlabeled.validation_share = u.value("validation_share", c.unlabeled.validation_share);
                c.unlabeled.test_share = u.value("test_share", c.unlabeled.test_share);
            }
        }
        if (j.contains("models")) {
            for (const auto& [name, m] : j.at("models").items()) {
                const NetworkKind kind = parse_kind(name);
                auto& settings = c.models.at(kind);
                if (m.contains("network")) from_json(m.at("network"), settings.network);
                settings.network.kind = kind;
                if (m.contains("training")) from_json(m.at("training"), settings.training);
            }
        }
        if (j.contains("student") && j.at("student").contains("training")) {
            TrainConfig t = c.scale == "paper" ? default_config(NetworkKind::ResidualUNet3D)
                                               : desk_config(NetworkKind::ResidualUNet3D);
            from_json(j.at("student").at("training"), t);
            c.student_training = t;
        }
        if (j.contains("ensemble")) c.fusion = parse_fusion(j.at("ensemble").value("fusion", std::string("average")));
        if (j.contains("evaluation")) {
            const auto& e = j.at("evaluation");
            c.window.patch_size = e.value("patch_size", c.window.patch_size);
            c.window.overlap = e.value("overlap", c.window.overlap);
            c.threshold = e.value("threshold", c.threshold);
        }
        if (j.contains("pseudo_label")) c.pseudo_label_threshold = j.at("pseudo_label").value("threshold", c.pseudo_label_threshold);
        return c;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed experiment config: ") + e.what());
    }
}

ExperimentConfig load_experiment(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return parse_experiment(j, path.parent_path());
}

json to_json(const ExperimentConfig& c) {
    json models = json::object();
    for (const auto& [kind, m] : c.models) models[kind_name(kind)] = {{"network", m.network}, {"training", m.training}};
    const auto& t = c.data.phantom_spec;
    json j = {
        {"run_id", c.run_id},
        {"seed", c.seed},
        {"output_dir", c.output_dir.string()},
        {"scale", c.scale},
        {"data",
         {{"source", c.data.source == DataSource::Phantom ? "phantom" : "directory"},
          {"path", c.data.path.string()},
          {"phantom",
           {{"count", c.data.phantom_count},
            {"shape", c.data.phantom_shape},
            {"whole_tumor", t.whole_tumor},
            {"tumor_core", t.tumor_core},
            {"enhancing", t.enhancing},
            {"brain", t.brain},
            {"radius_jitter", t.radius_jitter},
            {"center_jitter", t.center_jitter},
            {"noise", t.noise}}}}},
        {"split",
         {{"train", c.split.train},
          {"validation", c.split.validation},
          {"test", c.split.test},
          {"unlabeled",
           {{"enabled", c.unlabeled.enabled},
            {"validation_share", c.unlabeled.validation_share},
            {"test_share", c.unlabeled.test_share}}}}},
        {"models", models},
        {"ensemble", {{"fusion", fusion_name(c.fusion)}}},
        {"evaluation", {{"patch_size", c.window.patch_size}, {"overlap", c.window.overlap}, {"threshold", c.threshold}}},
        {"pseudo_label", {{"threshold", c.pseudo_label_threshold}}}};
    j["student"] = c.student_training ? json{{"training", *c.student_training}} : json::object();
    return j;
}

void validate(const ExperimentConfig& c) {
    if (c.run_id.empty() || c.run_id.find('/') != std::string::npos || c.run_id == "." || c.run_id == "..")
        throw ConfigError("run_id must be a plain, non-empty name");
    if (c.data.source == DataSource::Directory) {
        if (c.data.path.empty()) throw ConfigError("data.path is required when phantoms are disabled");
        if (!fs::is_directory(c.data.path)) throw ConfigError("data.path " + c.data.path.string() + " is not a directory");
    } else {
        if (c.data.phantom_count < 3) throw ConfigError("phantom count must be >= 3");
        try {
            validate(c.data.phantom_spec);
        } catch (const ParameterError& e) {
            throw ConfigError(e.what());
        }
        for (Index e : c.data.phantom_shape)
            if (e < 16) throw ConfigError("phantom extents must be >= 16");
    }
    const double sum = c.split.train + c.split.validation + c.split.test;
    if (c.split.train <= 0 || c.split.validation < 0 || c.split.test <= 0 || std::abs(sum - 1.0) > 1e-9)
        throw ConfigError("split fractions must be non-negative, with train and test > 0, summing to 1");
    if (c.models.size() != 3) throw ConfigError("all three model kinds must be configured");
    for (const auto& [kind, m] : c.models) {
        try {
            validate(m.network);
        } catch (const ParameterError& e) {
            throw ConfigError(kind_name(kind) + ": " + e.what());
        }
        validate(m.training);
        const Index div = Index{1} << (m.network.depth - 1);
        if (m.training.patch_size % div != 0)
            throw ConfigError(kind_name(kind) + ": patch size must be divisible by " + std::to_string(div));
        if (c.window.patch_size % div != 0)
            throw ConfigError("evaluation patch size must be divisible by " + std::to_string(div));
    }
    if (c.student_training) validate(*c.student_training);
    if (!(c.window.overlap >= 0 && c.window.overlap < 1)) throw ConfigError("overlap must lie in [0, 1)");
    if (!(c.threshold > 0 && c.threshold < 1)) throw ConfigError("threshold must lie in (0, 1)");
    if (!(c.pseudo_label_threshold > 0 && c.pseudo_label_threshold < 1))
        throw ConfigError("pseudo-label threshold must lie in (0, 1)");
}

void apply_seed_override(ExperimentConfig& c) {
    const char* env = std::getenv("DISTILLSEG_SEED");
    if (!env || !*env) return;
    try {
        std::size_t used = 0;
        const auto v = std::stoull(env, &used);
        if (used != std::string(env).size()) throw std::invalid_argument(env);
        c.seed = v;
    } catch (const std::exception&) {
        throw ConfigError(std::string("DISTILLSEG_SEED is not an unsigned integer: ") + env);
    }
}

std::string config_hash(const json& j) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : j.dump()) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

fs::path manifest_path(const ExperimentConfig& config) { return config.run_dir() / "manifest.json"; }

json read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot read manifest " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw LoadError("manifest " + path.string() + " is not valid JSON: " + e.what());
    }
}

namespace {

void collect_checkpoints(const json& j, std::vector<std::string>& out) {
    if (j.is_object()) {
        for (const auto& [k, v] : j.items()) {
            if (k == "checkpoint" && v.is_string()) out.push_back(v.get<std::string>());
            else collect_checkpoints(v, out);
        }
    } else if (j.is_array()) {
        for (const auto& v : j) collect_checkpoints(v, out);
    }
}

}  // namespace

void write_manifest(const fs::path& path, const json& manifest) {
    std::vector<std::string> ckpts;
    collect_checkpoints(manifest, ckpts);
    for (const auto& c : ckpts) {
        const fs::path p = fs::path(c).is_absolute() ? fs::path(c) : path.parent_path() / c;
        if (!fs::exists(p)) throw IntegrityError("manifest references missing checkpoint " + p.string());
    }
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out << manifest.dump(2) << '\n';
        if (!out) throw IoError("failed writing " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move manifest into place: " + ec.message());
}

std::vector<MultiModalCase> load_cases(const ExperimentConfig& config, const std::vector<std::string>& ids) {
    const fs::path root = config.data.source == DataSource::Phantom ? config.run_dir() / "data" : config.data.path;
    std::vector<MultiModalCase> out;
    out.reserve(ids.size());
    for (const auto& id : ids) out.push_back(normalize_case(load_case(root / id)));
    return out;
}

namespace {

std::string now_utc() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

std::string train_stage(NetworkKind k) { return "train/" + kind_name(k); }
std::string eval_stage(NetworkKind k) { return "evaluate/" + kind_name(k); }

std::uint64_t kind_tag(NetworkKind k) { return static_cast<std::uint64_t>(k) + 1; }

/// Stage bookkeeping shared by every step of one pipeline invocation.
class Runner {
public:
    Runner(const ExperimentConfig& config, const PipelineOptions& options)
        : cfg_(config), opts_(options), dir_(config.run_dir()), path_(manifest_path(config)) {
        if (fs::exists(path_)) {
            manifest_ = read_manifest(path_);
            if (manifest_.value("schema_version", 0) != kManifestSchemaVersion)
                throw LoadError("manifest " + path_.string() + " has an unsupported schema version");
        }
        const std::string created = manifest_.contains("timestamps")
                                        ? manifest_["timestamps"].value("created", now_utc())
                                        : now_utc();
        manifest_["schema_version"] = kManifestSchemaVersion;
        manifest_["run_id"] = cfg_.run_id;
        manifest_["seed"] = cfg_.seed;
        manifest_["config"] = to_json(cfg_);
        manifest_["timestamps"]["created"] = created;
        if (!manifest_.contains("stages")) manifest_["stages"] = json::object();
        manifest_["status"] = {{"state", "running"}};
    }

    json& manifest() { return manifest_; }
    const fs::path& dir() const { return dir_; }
    PipelineResult& result() { return result_; }

    void log(const std::string& msg) const {
        if (opts_.log) opts_.log(msg);
    }

    bool wanted(const std::string& stage) const {
        if (opts_.until.empty()) return true;
        const auto it = std::find(kStages.begin(), kStages.end(), opts_.until);
        const auto st = std::find(kStages.begin(), kStages.end(), stage);
        return st <= it;
    }

    /// Runs `body` unless the stage can be reused; returns the stage hash.
    std::string stage(const std::string& name, const json& key, const std::vector<std::string>& deps,
                      const std::function<bool()>& artifacts_ok, const std::function<void(const std::string&)>& body) {
        json full = key;
        for (const auto& d : deps) full["deps"][d] = hashes_.at(d);
        const std::string h = config_hash(full);
        hashes_[name] = h;

        const bool dep_ran = std::any_of(deps.begin(), deps.end(), [&](const std::string& d) {
            return std::find(result_.executed.begin(), result_.executed.end(), d) != result_.executed.end();
        });
        const auto& rec = manifest_["stages"];
        const bool recorded = rec.contains(name) && rec[name].value("hash", "") == h &&
                              rec[name].value("status", "") == "completed";
        if (recorded && !dep_ran && artifacts_ok()) {
            result_.reused.push_back(name);
            log("stage " + name + ": up to date");
            return h;
        }
        log("stage " + name + ": running");
        manifest_["stages"][name] = {{"hash", h}, {"status", "running"}, {"started_at", now_utc()}};
        try {
            body(h);
        } catch (const std::exception& e) {
            manifest_["stages"][name]["status"] = "failed";
            manifest_["stages"][name]["error"] = e.what();
            manifest_["status"] = {{"state", "failed"}, {"failed_stage", name}, {"error", e.what()}};
            manifest_["timestamps"]["updated"] = now_utc();
            write_manifest(path_, manifest_);
            throw;
        }
        manifest_["stages"][name]["status"] = "completed";
        manifest_["stages"][name]["completed_at"] = now_utc();
        manifest_["timestamps"]["updated"] = now_utc();
        result_.executed.push_back(name);
        write_manifest(path_, manifest_);
        return h;
    }

    void finish(bool complete) {
        manifest_["status"] = {{"state", complete ? "complete" : "partial"}};
        manifest_["timestamps"]["updated"] = now_utc();
        write_manifest(path_, manifest_);
        result_.manifest = manifest_;
    }

private:
    const ExperimentConfig& cfg_;
    const PipelineOptions& opts_;
    fs::path dir_, path_;
    json manifest_ = json::object();
    std::map<std::string, std::string> hashes_;
    PipelineResult result_;
};

json history_json(const std::vector<EpochRecord>& h) { return json(h); }

}  // namespace

PipelineResult run_pipeline(const ExperimentConfig& input_config, const PipelineOptions& options) {
    ExperimentConfig cfg = input_config;
    validate(cfg);
    if (!options.until.empty() && std::find(kStages.begin(), kStages.end(), options.until) == kStages.end())
        throw ConfigError("unknown stage '" + options.until + "'");
    fs::create_directories(cfg.run_dir());
    Runner run(cfg, options);
    json& m = run.manifest();
    const fs::path dir = run.dir();
    auto rel = [&](const fs::path& p) { return fs::relative(p, dir).generic_string(); };
    auto abs = [&](const std::string& p) { return dir / p; };

    // data
    std::vector<std::string> all_ids;
    {
        json key = {{"seed", cfg.seed}, {"data", to_json(cfg)["data"]}};
        if (cfg.data.source == DataSource::Directory) key["data"].erase("phantom");
        else key["data"].erase("path");
        auto list_ids = [&] { return m.contains("cases") ? m["cases"].get<std::vector<std::string>>() : std::vector<std::string>{}; };
        run.stage(
            "data", key, {},
            [&] {
                const auto ids = list_ids();
                if (ids.empty()) return false;
                const fs::path root = cfg.data.source == DataSource::Phantom ? dir / "data" : cfg.data.path;
                return std::all_of(ids.begin(), ids.end(), [&](const auto& id) { return fs::is_directory(root / id); });
            },
            [&](const std::string&) {
                std::vector<std::string> ids;
                if (cfg.data.source == DataSource::Phantom) {
                    fs::remove_all(dir / "data");
                    for (int i = 0; i < cfg.data.phantom_count; ++i) {
                        std::ostringstream id;
                        id << "phantom_" << std::setw(3) << std::setfill('0') << i;
                        const auto c = generate_phantom(derive_seed(cfg.seed, {0xda7a, std::uint64_t(i)}),
                                                        cfg.data.phantom_shape, cfg.data.phantom_spec, id.str());
                        save_case(c, dir / "data" / id.str());
                        ids.push_back(id.str());
                    }
                } else {
                    for (const auto& e : fs::directory_iterator(cfg.data.path))
                        if (e.is_directory()) ids.push_back(e.path().filename().string());
                    std::sort(ids.begin(), ids.end());
                    if (ids.size() < 3) throw ConfigError("data.path holds fewer than 3 case directories");
                }
                m["cases"] = ids;
            });
        all_ids = list_ids();
    }
    if (!run.wanted("split")) {
        run.finish(false);
        return run.result();
    }

    // split
    DatasetSplit split;
    run.stage(
        "split", {{"seed", cfg.seed}, {"split", to_json(cfg)["split"]}}, {"data"}, [&] { return m.contains("split"); },
        [&](const std::string&) {
            m["split"] = make_split(all_ids, cfg.split, cfg.unlabeled, derive_seed(cfg.seed, {0x5b11}));
        });
    split = m["split"].get<DatasetSplit>();
    m["test_case_ids"] = split.test;

    // lazily loaded inputs
    std::optional<std::vector<MultiModalCase>> train_cases, val_cases, test_cases;
    auto train_set = [&]() -> const std::vector<MultiModalCase>& {
        if (!train_cases) train_cases = load_cases(cfg, split.train);
        return *train_cases;
    };
    auto val_set = [&]() -> const std::vector<MultiModalCase>& {
        if (!val_cases) val_cases = load_cases(cfg, split.validation);
        return *val_cases;
    };
    auto test_set = [&]() -> const std::vector<MultiModalCase>& {
        if (!test_cases) test_cases = load_cases(cfg, split.test);
        return *test_cases;
    };
    std::map<NetworkKind, std::unique_ptr<NetworkF>> nets;
    auto net_of = [&](NetworkKind k) -> const NetworkF& {
        if (!nets[k]) nets[k] = std::make_unique<NetworkF>(load_network(abs(m["models"][kind_name(k)]["checkpoint"])));
        return *nets[k];
    };
    auto effective_training = [&](const TrainConfig& t, std::uint64_t tag) {
        TrainConfig out = t;
        out.seed = derive_seed(cfg.seed, {0x7a1, tag});
        return out;
    };
    auto train_into = [&](const fs::path& ckdir, const NetworkConfig& net, std::span<const MultiModalCase> train,
                          const TrainConfig& tc, const std::string& hash, const std::string& label, bool student) {
        if (auto latest = latest_checkpoint(ckdir)) {
            const auto ck = read_checkpoint(latest->second);
            if (ck.meta.value("stage_hash", "") != hash) fs::remove_all(ckdir);
        }
        TrainOptions to;
        to.checkpoint_dir = ckdir;
        to.meta = {{"stage_hash", hash}, {"run_id", cfg.run_id}};
        to.on_epoch = [&](const EpochRecord& r) {
            std::ostringstream os;
            os << label << " epoch " << r.epoch + 1 << "/" << tc.epochs << " loss " << std::fixed << std::setprecision(5)
               << r.train.total;
            if (r.validation) os << " val ET/TC/WT " << r.validation->per_region[0] << "/" << r.validation->per_region[1]
                                 << "/" << r.validation->per_region[2];
            run.log(os.str());
        };
        return student ? distill(net, train, val_set(), tc, to) : train_model(net, train, val_set(), tc, to);
    };

    const auto trains = {NetworkKind::UNet3D, NetworkKind::ResidualUNet3D, NetworkKind::CascadedUNet3D};
    for (auto k : trains) {
        if (!run.wanted(train_stage(k))) break;
        const auto& settings = cfg.models.at(k);
        const TrainConfig tc = effective_training(settings.training, kind_tag(k));
        run.stage(
            train_stage(k), {{"network", settings.network}, {"training", tc}}, {"split"},
            [&] {
                const auto& r = m["models"][kind_name(k)];
                return r.contains("checkpoint") && fs::exists(abs(r["checkpoint"]));
            },
            [&](const std::string& h) {
                auto trained = train_into(dir / kind_name(k), settings.network, train_set(), tc, h, kind_name(k), false);
                auto& r = m["models"][kind_name(k)];
                r = {{"kind", kind_name(k)},
                     {"network", settings.network},
                     {"training", tc},
                     {"checkpoint", rel(trained.final_checkpoint)},
                     {"history", history_json(trained.history)}};
                nets[k] = std::make_unique<NetworkF>(std::move(trained.network));
            });
    }

    for (auto k : trains) {
        if (!run.wanted(eval_stage(k))) break;
        run.stage(
            eval_stage(k), {{"window", {cfg.window.patch_size, cfg.window.overlap}}, {"threshold", cfg.threshold}},
            {train_stage(k), "split"}, [&] { return m["models"][kind_name(k)].contains("report"); },
            [&](const std::string&) {
                m["models"][kind_name(k)]["report"] = evaluate_model(net_of(k), test_set(), cfg.threshold, cfg.window);
            });
    }

    if (run.wanted("select_best")) {
        run.stage(
            "select_best", json::object(), {eval_stage(NetworkKind::UNet3D), eval_stage(NetworkKind::ResidualUNet3D),
                                            eval_stage(NetworkKind::CascadedUNet3D)},
            [&] { return m.contains("best_kind"); },
            [&](const std::string&) {
                std::map<NetworkKind, DiceReport> reports;
                for (auto k : trains) reports[k] = m["models"][kind_name(k)]["report"].get<DiceReport>();
                m["best_kind"] = kind_name(select_best(reports));
            });
    }

    auto ensemble_spec = [&] {
        EnsembleSpec spec;
        for (auto k : trains) spec.members.push_back(&net_of(k));
        spec.fusion = cfg.fusion;
        spec.window = cfg.window;
        return spec;
    };
    const std::vector<std::string> member_stages{train_stage(NetworkKind::UNet3D), train_stage(NetworkKind::ResidualUNet3D),
                                                 train_stage(NetworkKind::CascadedUNet3D)};
    if (run.wanted("evaluate/ensemble")) {
        auto deps = member_stages;
        deps.push_back("split");
        run.stage(
            "evaluate/ensemble",
            {{"fusion", fusion_name(cfg.fusion)},
             {"window", {cfg.window.patch_size, cfg.window.overlap}},
             {"threshold", cfg.threshold}},
            deps, [&] { return m.contains("ensemble") && m["ensemble"].contains("report"); },
            [&](const std::string&) {
                const auto spec = ensemble_spec();
                std::vector<TensorF> probs;
                for (const auto& c : test_set()) probs.push_back(ensemble_predict(spec, c));
                json members = json::array();
                for (auto k : trains) members.push_back({{"kind", kind_name(k)}, {"checkpoint", m["models"][kind_name(k)]["checkpoint"]}});
                m["ensemble"] = {{"fusion", fusion_name(cfg.fusion)},
                                 {"members", members},
                                 {"report", evaluate_probabilities(probs, test_set(), cfg.threshold)}};
            });
    }

    if (run.wanted("pseudo_label")) {
        auto deps = member_stages;
        deps.push_back("split");
        run.stage(
            "pseudo_label",
            {{"fusion", fusion_name(cfg.fusion)},
             {"window", {cfg.window.patch_size, cfg.window.overlap}},
             {"threshold", cfg.pseudo_label_threshold}},
            deps,
            [&] {
                if (!m.contains("pseudo_labels")) return false;
                for (const auto& c : m["pseudo_labels"]["cases"])
                    if (!fs::exists(abs(c["mask"]))) return false;
                return true;
            },
            [&](const std::string&) {
                json record = {{"threshold", cfg.pseudo_label_threshold},
                               {"source_ensemble", {{"fusion", fusion_name(cfg.fusion)}, {"members", member_stages}}},
                               {"cases", json::array()}};
                fs::remove_all(dir / "pseudo_labels");
                if (!split.unlabeled_pool.empty()) {
                    fs::create_directories(dir / "pseudo_labels");
                    UnlabeledPool pool(load_cases(cfg, split.unlabeled_pool));
                    const auto pseudo = pseudo_label(ensemble_spec(), pool.view(), cfg.pseudo_label_threshold);
                    for (const auto& p : pseudo) {
                        const fs::path mask = dir / "pseudo_labels" / (p.case_data.id() + "_seg.nii.gz");
                        save_mask(*p.case_data.label(), mask);
                        record["cases"].push_back({{"id", p.case_data.id()},
                                                   {"mask", rel(mask)},
                                                   {"mean_confidence", p.mean_confidence},
                                                   {"repaired_voxels", p.repaired_voxels}});
                    }
                    // audited only after every label is final
                    record["audit"] = audit_pseudo_labels(pseudo, pool);
                }
                m["pseudo_labels"] = record;
            });
    }

    if (run.wanted("distill")) {
        run.stage(
            "distill",
            [&] {
                const auto best = parse_kind(m["best_kind"].get<std::string>());
                return json{{"kind", kind_name(best)},
                            {"network", cfg.models.at(best).network},
                            {"training", effective_training(cfg.student_config(best), 0x57)}};
            }(),
            {"select_best", "pseudo_label", "split"},
            [&] { return m.contains("student") && fs::exists(abs(m["student"].value("checkpoint", ""))); },
            [&](const std::string& h) {
                const auto best = parse_kind(m["best_kind"].get<std::string>());
                const TrainConfig tc = effective_training(cfg.student_config(best), 0x57);
                std::vector<PseudoLabeledCase> pseudo;
                const auto pool_view = load_cases(cfg, split.unlabeled_pool);
                for (const auto& rec : m["pseudo_labels"]["cases"]) {
                    const auto id = rec["id"].get<std::string>();
                    const auto it = std::find_if(pool_view.begin(), pool_view.end(), [&](const auto& c) { return c.id() == id; });
                    if (it == pool_view.end()) throw IntegrityError("pseudo-label for unknown pool case " + id);
                    LabelMask label = load_mask(abs(rec["mask"].get<std::string>()));
                    RegionMask regions = labels_to_regions(label);
                    pseudo.push_back({it->without_label().with_label(std::move(label), CaseSource::PseudoLabeled),
                                      std::move(regions), rec["mean_confidence"].get<double>(),
                                      rec["repaired_voxels"].get<Index>()});
                }
                const auto set = build_distill_set(train_set(), pseudo);
                auto trained = train_into(dir / "student", cfg.models.at(best).network, set, tc, h, "student", true);
                std::vector<std::string> ids;
                for (const auto& c : set) ids.push_back(c.id());
                m["student"] = {{"kind", kind_name(best)},
                                {"network", cfg.models.at(best).network},
                                {"training", tc},
                                {"training_case_ids", ids},
                                {"n_pseudo_labeled", pseudo.size()},
                                {"checkpoint", rel(trained.final_checkpoint)},
                                {"history", history_json(trained.history)}};
            });
    }

    if (run.wanted("evaluate/student")) {
        run.stage(
            "evaluate/student", {{"window", {cfg.window.patch_size, cfg.window.overlap}}, {"threshold", cfg.threshold}},
            {"distill", "split"}, [&] { return m["student"].contains("report"); },
            [&](const std::string&) {
                const NetworkF student = load_network(abs(m["student"]["checkpoint"].get<std::string>()));
                m["student"]["report"] = evaluate_model(student, test_set(), cfg.threshold, cfg.window);
            });
    }

    const bool complete = run.wanted("evaluate/student") && options.until.empty();
    run.finish(complete || (m.contains("student") && m["student"].contains("report")));
    if (options.emit_report && m.contains("models")) {
        emit_report(m, dir / "report");
        run.log("report written to " + (dir / "report").string());
    }
    return run.result();
}

}  // namespace distillseg
