// distillseg command-line front end. Every subcommand reads the same
// experiment config and resumes from whatever the run directory holds.

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "distillseg/error.hpp"
#include "distillseg/experiment.hpp"
#include "distillseg/report.hpp"

using namespace distillseg;

namespace {

struct Common {
    std::string config;
    std::string run_id;
    std::optional<std::uint64_t> seed;
    bool quiet = false;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config,-c", c.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    app->add_option("--run-id", c.run_id, "Override the config's run_id");
    app->add_option("--seed", c.seed, "Override the config seed (takes precedence over DISTILLSEG_SEED)");
    app->add_flag("--quiet,-q", c.quiet, "Only print errors and the final table");
}

ExperimentConfig resolve(const Common& c) {
    ExperimentConfig cfg = load_experiment(c.config);
    apply_seed_override(cfg);
    if (c.seed) cfg.seed = *c.seed;
    if (!c.run_id.empty()) cfg.run_id = c.run_id;
    return cfg;
}

int run_until(const Common& common, const std::string& until, bool print_table) {
    const ExperimentConfig cfg = resolve(common);
    PipelineOptions opts;
    opts.until = until;
    if (!common.quiet) opts.log = [](const std::string& msg) { std::clog << "[distillseg] " << msg << std::endl; };
    const auto result = run_pipeline(cfg, opts);
    if (!common.quiet) {
        std::clog << "[distillseg] executed " << result.executed.size() << " stage(s), reused " << result.reused.size()
                  << "; manifest " << manifest_path(cfg).string() << std::endl;
    }
    if (print_table) std::cout << emit_table(result.manifest, TableFormat::Text);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Brain-tumor segmentation with ensemble pseudo-labeling and model distillation"};
    app.require_subcommand(1);

    struct Sub {
        const char* name;
        const char* help;
        const char* until;
        bool table;
    };
    const Sub subs[] = {
        {"gen-data", "Generate phantoms (or index the data directory)", "data", false},
        {"split", "Build the train/validation/test/unlabeled split", "split", false},
        {"train", "Train the three stand-alone models", "train/cascaded_unet", false},
        {"evaluate", "Evaluate stand-alone models on the test split and select the best", "select_best", true},
        {"ensemble", "Evaluate the averaged ensemble", "evaluate/ensemble", true},
        {"pseudo-label", "Pseudo-label the unlabeled pool with the ensemble", "pseudo_label", false},
        {"distill", "Train and evaluate the student on original plus pseudo-labeled cases", "evaluate/student", true},
        {"run", "Run the whole pipeline", "", true},
    };
    Common common;
    std::string chosen_until;
    bool chosen_table = false;
    for (const auto& s : subs) {
        auto* sc = app.add_subcommand(s.name, s.help);
        add_common(sc, common);
        sc->callback([&, s] {
            chosen_until = s.until;
            chosen_table = s.table;
        });
    }
    auto* report = app.add_subcommand("report", "Render tables and plots from an existing manifest");
    add_common(report, common);
    std::string format = "text";
    report->add_option("--format", format, "Table printed to stdout")->check(CLI::IsMember({"text", "markdown", "csv"}));

    CLI11_PARSE(app, argc, argv);

    try {
        if (report->parsed()) {
            const ExperimentConfig cfg = resolve(common);
            const auto manifest = read_manifest(manifest_path(cfg));
            emit_report(manifest, cfg.run_dir() / "report");
            const TableFormat f = format == "csv"        ? TableFormat::Csv
                                  : format == "markdown" ? TableFormat::Markdown
                                                         : TableFormat::Text;
            std::cout << emit_table(manifest, f);
            return 0;
        }
        return run_until(common, chosen_until, chosen_table);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
