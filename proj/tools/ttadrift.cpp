// ttadrift: pretrain source models, run test-time adaptation across variants
// and seeds, export embeddings, and run the built-in invariant suites.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "ttadrift/harness/config.hpp"
#include "ttadrift/harness/export.hpp"
#include "ttadrift/harness/report.hpp"
#include "ttadrift/harness/runner.hpp"
#include "ttadrift/testing/suites.hpp"
#include "ttadrift/version.hpp"

namespace fs = std::filesystem;
using namespace ttadrift;
using namespace ttadrift::harness;

namespace {

struct CommonOptions {
    std::string config_path;
    std::string preset;
    std::string out;
    std::size_t workers = 1;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
    cmd->add_option("--config", o.config_path, "experiment config (JSON)");
    cmd->add_option("--preset", o.preset, "benchmark preset")->check(CLI::IsMember({"mild", "severe", "collapse"}));
    cmd->add_option("--out", o.out, "output directory (default: config output_dir)");
    cmd->add_option("--workers", o.workers, "concurrent runs")->check(CLI::Range(1, 256));
}

ExperimentConfig resolve_config(const CommonOptions& o) {
    if (!o.config_path.empty() && !o.preset.empty()) {
        throw ValidationError("--config and --preset are mutually exclusive");
    }
    ExperimentConfig cfg = o.config_path.empty() ? preset_config(o.preset.empty() ? "severe" : o.preset)
                                                 : parse_config(read_file(o.config_path));
    cfg.validate();
    return cfg;
}

fs::path output_dir(const CommonOptions& o, const ExperimentConfig& cfg) {
    return o.out.empty() ? fs::path(cfg.output_dir) : fs::path(o.out);
}

int cmd_pretrain(const CommonOptions& o) {
    const auto cfg = resolve_config(o);
    const auto dir = output_dir(o, cfg);
    ensure_directory(dir / "checkpoints");
    const auto seeds = prepare_seeds(cfg, o.workers);

    json summary;
    summary["code_version"] = code_version();
    summary["config"] = to_json(cfg);
    summary["sources"] = json::array();
    for (const auto& ctx : seeds) {
        ctx.model->save((dir / "checkpoints" / checkpoint_name(ctx.seed)).string());
        summary["sources"].push_back({{"seed", ctx.seed},
                                      {"holdout_accuracy", ctx.pretrain.holdout_accuracy},
                                      {"final_loss", ctx.pretrain.final_loss}});
        std::cout << "seed " << ctx.seed << " holdout_accuracy " << fmt(ctx.pretrain.holdout_accuracy) << '\n';
    }
    write_file((dir / "config.json").string(), serialize_config(cfg));
    write_file((dir / "pretrain.json").string(), summary.dump(2) + "\n");
    std::cout << "wrote " << (dir / "checkpoints").string() << '\n';
    return 0;
}

int cmd_adapt(const CommonOptions& o, const std::string& checkpoint) {
    const auto cfg = resolve_config(o);
    const auto dir = output_dir(o, cfg);
    std::optional<fs::path> ckdir;
    if (!checkpoint.empty()) ckdir = fs::path(checkpoint);
    const auto res = run_experiment(cfg, o.workers, ckdir);
    write_reports(res, dir);
    for (const auto& agg : aggregate(res)) {
        std::cout << to_string(agg.variant);
        for (std::size_t i = 0; i < metric_names().size(); ++i) {
            std::cout << ' ' << metric_names()[i] << '=' << fmt(agg.metrics[i]);
        }
        std::cout << '\n';
    }
    std::cout << "wrote " << dir.string() << '\n';
    return 0;
}

int cmd_generate(const CommonOptions& o, std::uint64_t seed) {
    const auto cfg = resolve_config(o);
    const auto dir = output_dir(o, cfg);
    ensure_directory(dir);
    const auto data = generate_scenario(cfg.scenario, SeedPlan::from(seed));
    const std::string stem = "seed-" + std::to_string(seed);
    for (const auto& [name, ds] : {std::pair{"train", &data.train}, std::pair{"holdout", &data.holdout},
                                   std::pair{"target", &data.target}}) {
        save_dataset((dir / (stem + "-" + name + ".ttds")).string(), *ds);
        write_file((dir / (stem + "-" + name + ".csv")).string(), dataset_csv(*ds));
    }
    std::cout << "wrote " << dir.string() << '\n';
    return 0;
}

int cmd_export(const CommonOptions& o, const std::string& checkpoint, const std::string& dataset,
               std::uint64_t seed) {
    const auto cfg = resolve_config(o);
    const auto dir = output_dir(o, cfg);
    ensure_directory(dir);
    std::optional<fs::path> ckdir;
    if (!checkpoint.empty()) ckdir = fs::path(checkpoint);
    const auto ctx = prepare_seed(cfg, seed, ckdir);

    std::string csv;
    if (!dataset.empty()) {
        const auto ds = load_dataset(dataset);
        csv = embeddings_csv(*ctx.model, {{fs::path(dataset).stem().string(), &ds}});
    } else {
        csv = embeddings_csv(*ctx.model, {{"source", &ctx.data.holdout}, {"target", &ctx.data.target}});
    }
    const auto path = dir / ("embeddings_seed" + std::to_string(seed) + ".csv");
    write_file(path.string(), csv);
    std::cout << "wrote " << path.string() << '\n';
    return 0;
}

int cmd_selftest() {
    using namespace ttadrift::testing;
    const std::pair<const char*, Outcome (*)()> suites[] = {
        {"gradient-oracle", [] { return check_gradient_oracle(); }},
        {"loss-bounds", [] { return check_loss_bounds(10000); }},
        {"clustering-oracle", [] { return check_clustering_oracle(200); }},
        {"momentum-contraction", [] { return check_momentum_contraction(); }},
        {"metric-oracles", [] { return check_metric_oracles(1000); }},
        {"determinism-hygiene", [] { return check_determinism_hygiene(); }},
    };
    bool ok = true;
    for (const auto& [name, run] : suites) {
        const auto r = run();
        std::cout << (r.pass ? "PASS " : "FAIL ") << name << ": " << r.detail << '\n';
        ok = ok && r.pass;
    }
    return ok ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"test-time adaptation under synthetic semantic drift"};
    app.set_version_flag("--version", code_version());
    app.require_subcommand(1);

    CommonOptions common;
    std::string checkpoint, dataset;
    std::uint64_t seed = 0;

    auto* pretrain = app.add_subcommand("pretrain", "train one source model per seed and write checkpoints");
    add_common(pretrain, common);

    auto* adapt = app.add_subcommand("adapt", "adapt every variant on every seed and write reports");
    add_common(adapt, common);
    adapt->add_option("--checkpoint", checkpoint, "directory of seed-S.ckpt files (default: pretrain in place)");

    auto* generate = app.add_subcommand("generate", "write the synthetic splits for one seed (binary + CSV)");
    add_common(generate, common);
    generate->add_option("--seed", seed, "run seed");

    auto* exporter = app.add_subcommand("export-embeddings", "write mean modality embeddings as CSV");
    add_common(exporter, common);
    exporter->add_option("--checkpoint", checkpoint, "directory of seed-S.ckpt files");
    exporter->add_option("--dataset", dataset, "dataset file (default: source holdout and target splits)");
    exporter->add_option("--seed", seed, "run seed");

    auto* selftest = app.add_subcommand("selftest", "run the invariant suites");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error E_USAGE: " << e.what() << '\n';
        return 2;
    }

    try {
        if (*pretrain) return cmd_pretrain(common);
        if (*adapt) return cmd_adapt(common, checkpoint);
        if (*generate) return cmd_generate(common, seed);
        if (*exporter) return cmd_export(common, checkpoint, dataset, seed);
        if (*selftest) return cmd_selftest();
    } catch (const Error& e) {
        std::cerr << "error " << e.code() << ": " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error E_INTERNAL: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
