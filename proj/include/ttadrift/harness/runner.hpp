#pragma once

// Experiment orchestration: one pretrained source model per seed, then one
// adaptation run per (variant, seed). Runs are independent and execute on a
// small thread pool; results land in fixed slots so output order never
// depends on scheduling.

#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "ttadrift/harness/config.hpp"
#include "ttadrift/metrics.hpp"
#include "ttadrift/scenario.hpp"
#include "ttadrift/ttaloop.hpp"

namespace ttadrift::harness {

// Runs f(0..n-1) on up to `workers` threads. The first exception (by index)
// is rethrown after all threads finish.
template <typename F>
void parallel_for(std::size_t n, std::size_t workers, F&& f) {
    workers = std::max<std::size_t>(1, std::min(workers, n));
    std::vector<std::exception_ptr> errors(n);
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) {
            try {
                f(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < n; i = next++) {
                    try {
                        f(i);
                    } catch (...) {
                        errors[i] = std::current_exception();
                    }
                }
            });
        }
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

struct SeedContext {
    std::uint64_t seed = 0;
    SeedPlan plan;
    ScenarioData data;
    std::optional<SourceModel> model;
    PretrainResult pretrain;
    bool from_checkpoint = false;
};

inline std::string checkpoint_name(std::uint64_t seed) { return "seed-" + std::to_string(seed) + ".ckpt"; }

inline void check_compatible(const SourceModel& model, const ExperimentConfig& cfg, const std::string& origin) {
    const auto& m = model.config();
    if (m.d_in != cfg.model.d_in || m.d_h != cfg.model.d_h || m.classes != cfg.model.classes) {
        throw CompatibilityError(origin + ": checkpoint dims (d_in=" + std::to_string(m.d_in) +
                                 ", d_h=" + std::to_string(m.d_h) + ", classes=" + std::to_string(m.classes) +
                                 ") do not match config (d_in=" + std::to_string(cfg.model.d_in) +
                                 ", d_h=" + std::to_string(cfg.model.d_h) +
                                 ", classes=" + std::to_string(cfg.model.classes) + ")");
    }
}

// Generates the seed's data and either pretrains a source model or loads
// one from checkpoint_dir.
inline SeedContext prepare_seed(const ExperimentConfig& cfg, std::uint64_t seed,
                                const std::optional<std::filesystem::path>& checkpoint_dir = std::nullopt) {
    SeedContext ctx;
    ctx.seed = seed;
    ctx.plan = SeedPlan::from(seed);
    ctx.data = generate_scenario(cfg.scenario, ctx.plan);
    if (checkpoint_dir) {
        const auto path = *checkpoint_dir / checkpoint_name(seed);
        ctx.model = SourceModel::load(path.string());
        check_compatible(*ctx.model, cfg, path.string());
        ctx.model->set_inference_mode();
        ctx.pretrain.holdout_accuracy = holdout_accuracy(*ctx.model, ctx.data.holdout.labeled());
        ctx.pretrain.final_loss = std::numeric_limits<double>::quiet_NaN();
        ctx.from_checkpoint = true;
    } else {
        ctx.model.emplace(cfg.model, ctx.plan.model);
        PretrainConfig pc = cfg.pretrain;
        pc.seed = ctx.plan.pretrain;
        ctx.pretrain = pretrain_source(*ctx.model, ctx.data.train.labeled(), ctx.data.holdout.labeled(), pc);
    }
    return ctx;
}

inline std::vector<SeedContext> prepare_seeds(const ExperimentConfig& cfg, std::size_t workers,
                                              const std::optional<std::filesystem::path>& checkpoint_dir = {}) {
    std::vector<SeedContext> out(cfg.seeds.size());
    parallel_for(cfg.seeds.size(), workers,
                 [&](std::size_t i) { out[i] = prepare_seed(cfg, cfg.seeds[i], checkpoint_dir); });
    return out;
}

struct StepRecord {
    std::size_t tau = 0;
    LossValues losses;
    double gradient_norm = 0.0;
    double align_gradient_norm = 0.0;
    double mean_entropy = 0.0;
    bool stepped = false;
    bool diverged = false;
    // Predicted-positive ratio per modality and cluster ([m * k + j]); NaN
    // where the cluster is empty or the variant keeps no centroids.
    std::vector<double> cluster_positive_ratio;
};

struct RunRecord {
    MethodVariant variant = MethodVariant::SOURCE;
    std::uint64_t seed = 0;
    RunMetrics metrics;
    std::vector<StepRecord> steps;
    std::vector<ClusterEntropy> entropy;
    std::size_t diverged_steps = 0;
    double max_gradient_norm = 0.0;
    double max_align_gradient_norm = 0.0;
    bool traces_finite = true;
    std::vector<int> online_predictions;
    std::vector<int> final_predictions;
    ArrayMap final_state;  // adapted model, banks and optimizer
};

inline std::vector<double> batch_cluster_ratios(const BatchResult& r, std::size_t k) {
    std::vector<double> out(kModalities * k, std::numeric_limits<double>::quiet_NaN());
    for (std::size_t m = 0; m < kModalities; ++m) {
        const auto& a = r.assignment[m];
        if (a.size() != r.predictions.size()) continue;
        std::vector<std::size_t> members(k, 0), positive(k, 0);
        for (std::size_t i = 0; i < a.size(); ++i) {
            ++members[a[i]];
            positive[a[i]] += r.predictions[i] == 1;
        }
        for (std::size_t j = 0; j < k; ++j) {
            if (members[j] > 0) {
                out[m * k + j] = static_cast<double>(positive[j]) / static_cast<double>(members[j]);
            }
        }
    }
    return out;
}

// One adaptation run. Only the unlabeled target stream reaches the adaptation
// loop; labels are used afterwards by evaluate_run.
inline RunRecord run_variant(const ExperimentConfig& cfg, const SeedContext& ctx, MethodVariant variant) {
    AdaptConfig acfg = cfg.adapt;
    acfg.variant = variant;
    acfg.seed = ctx.plan.adapt;
    const auto stream = make_stream(ctx.data.target, acfg.batch_size);
    auto result = run_stream(*ctx.model, stream, acfg);

    RunRecord rec;
    rec.variant = variant;
    rec.seed = ctx.seed;
    rec.metrics = evaluate_run(result, ctx.data.target.labels, cfg.model.classes, acfg.k);
    rec.entropy = result.initial_entropy;
    rec.diverged_steps = result.diverged_steps;
    for (const auto& b : result.batches) {
        StepRecord s;
        s.tau = b.tau;
        s.losses = b.losses;
        s.gradient_norm = b.gradient_norm;
        s.align_gradient_norm = b.align_gradient_norm;
        s.mean_entropy = b.mean_entropy;
        s.stepped = b.stepped;
        s.diverged = b.diverged;
        s.cluster_positive_ratio = batch_cluster_ratios(b, acfg.k);
        if (std::isfinite(b.gradient_norm)) {
            rec.max_gradient_norm = std::max(rec.max_gradient_norm, b.gradient_norm);
        } else {
            rec.traces_finite = false;
        }
        if (std::isfinite(b.align_gradient_norm)) {
            rec.max_align_gradient_norm = std::max(rec.max_align_gradient_norm, b.align_gradient_norm);
        } else {
            rec.traces_finite = false;
        }
        if (!std::isfinite(b.losses.total)) rec.traces_finite = false;
        rec.steps.push_back(std::move(s));
    }
    rec.online_predictions = std::move(result.online_predictions);
    rec.final_predictions = std::move(result.final_predictions);
    rec.final_state = std::move(result.final_state);
    return rec;
}

struct SeedSummary {
    std::uint64_t seed = 0;
    double holdout_accuracy = 0.0;
    double final_loss = 0.0;
    bool from_checkpoint = false;
};

struct ExperimentResult {
    ExperimentConfig config;
    std::vector<SeedSummary> sources;
    std::vector<RunRecord> runs;  // variant-major, in config order
};

inline ExperimentResult run_experiment(const ExperimentConfig& cfg, std::size_t workers,
                                       const std::optional<std::filesystem::path>& checkpoint_dir = {}) {
    cfg.validate();
    const auto seeds = prepare_seeds(cfg, workers, checkpoint_dir);
    ExperimentResult out;
    out.config = cfg;
    for (const auto& ctx : seeds) {
        out.sources.push_back({ctx.seed, ctx.pretrain.holdout_accuracy, ctx.pretrain.final_loss, ctx.from_checkpoint});
    }
    const std::size_t n_seeds = seeds.size();
    out.runs.resize(cfg.variants.size() * n_seeds);
    parallel_for(out.runs.size(), workers, [&](std::size_t job) {
        out.runs[job] = run_variant(cfg, seeds[job % n_seeds], cfg.variants[job / n_seeds]);
    });
    return out;
}

} // namespace ttadrift::harness
