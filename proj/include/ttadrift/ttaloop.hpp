#pragma once

// Online test-time adaptation over a stream of unlabeled batches.
//
// Per batch, for the centroid variants (CAN, SCAN, SCANNER):
//   1. forward pass; predictions are logged from this pre-update pass
//   2. assignment + max cosine similarity per modality (bank initialized by
//      k-means++ on the first batch)
//   3. variant loss, 4. backward, 5. gradient norm over trainable parameters
//   6. AdamW step on the trainable subset (skipped and flagged if non-finite)
//   7. momentum update of each bank from the detached step-1 features
// Baselines: SOURCE (no update), NORM (input-statistics EMA), ST (confident
// pseudo-label cross-entropy), TENT_EM (entropy minimization only).

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ttadrift/centroids.hpp"
#include "ttadrift/diagnostics.hpp"
#include "ttadrift/errors.hpp"
#include "ttadrift/metrics.hpp"
#include "ttadrift/model.hpp"
#include "ttadrift/objectives.hpp"
#include "ttadrift/optim.hpp"

namespace ttadrift {

enum class MethodVariant { SOURCE, NORM, ST, TENT_EM, CAN, SCAN, SCANNER };

inline constexpr std::array<MethodVariant, 7> kAllVariants = {
    MethodVariant::SOURCE, MethodVariant::NORM, MethodVariant::ST,      MethodVariant::TENT_EM,
    MethodVariant::CAN,    MethodVariant::SCAN, MethodVariant::SCANNER};

inline std::string_view to_string(MethodVariant v) {
    switch (v) {
        case MethodVariant::SOURCE: return "SOURCE";
        case MethodVariant::NORM: return "NORM";
        case MethodVariant::ST: return "ST";
        case MethodVariant::TENT_EM: return "TENT_EM";
        case MethodVariant::CAN: return "CAN";
        case MethodVariant::SCAN: return "SCAN";
        case MethodVariant::SCANNER: return "SCANNER";
    }
    return "?";
}

inline MethodVariant parse_variant(std::string_view name) {
    for (auto v : kAllVariants)
        if (to_string(v) == name) return v;
    throw ConfigError("unknown method variant '" + std::string(name) + "'");
}

inline bool uses_centroids(MethodVariant v) {
    return v == MethodVariant::CAN || v == MethodVariant::SCAN || v == MethodVariant::SCANNER;
}

inline bool uses_gradients(MethodVariant v) {
    return v != MethodVariant::SOURCE && v != MethodVariant::NORM;
}

struct AdaptConfig {
    MethodVariant variant = MethodVariant::SCANNER;
    std::size_t k = 4;
    double gamma = 0.9;
    LossWeights weights{};
    AdamWConfig optimizer{};
    std::size_t batch_size = 128;
    double st_confidence = 0.9;
    double norm_momentum = 0.1;
    std::size_t kmeans_restarts = 5;
    std::size_t kmeans_max_iterations = 100;
    std::uint64_t seed = 0;

    bool operator==(const AdaptConfig&) const = default;

    void validate() const {
        if (k == 0) throw ConfigError("k must be positive");
        if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
        if (!(weights.beta >= 0.0)) throw ConfigError("beta must be non-negative");
        if (batch_size == 0) throw ConfigError("batch_size must be positive");
        if (!(st_confidence > 0.5 && st_confidence <= 1.0)) throw ConfigError("st_confidence must lie in (0.5, 1]");
        if (!(norm_momentum > 0.0 && norm_momentum <= 1.0)) throw ConfigError("norm_momentum must lie in (0, 1]");
        if (!(optimizer.lr > 0.0)) throw ConfigError("learning rate must be positive");
    }
};

struct LossValues {
    double em = 0.0;
    double align = 0.0;  // CAN or SCAN sum over modalities
    double div = 0.0;
    double total = 0.0;
    std::array<double, kModalities> align_terms{};
    std::array<double, kModalities> div_terms{};
};

struct BatchResult {
    std::size_t tau = 0;
    std::vector<int> predictions;
    std::vector<double> entropies;
    double mean_entropy = 0.0;
    LossValues losses;
    double gradient_norm = 0.0;
    double align_gradient_norm = 0.0;  // lambda-weighted alignment term alone, centroid variants only
    bool stepped = false;   // an optimizer step was applied
    bool diverged = false;  // non-finite loss or gradient; step skipped
    std::array<std::vector<std::size_t>, kModalities> assignment;  // centroid variants only
};

class AdaptState {
public:
    AdaptState(SourceModel model, AdaptConfig cfg) : model_(std::move(model)), cfg_(cfg) {
        cfg_.validate();
        if (uses_gradients(cfg_.variant)) {
            model_.set_adaptation_mode();
            optimizer_.emplace(model_.trainable_parameters(), cfg_.optimizer);
        } else {
            model_.set_inference_mode();
        }
        for (std::size_t m = 0; m < kModalities; ++m) {
            banks_[m] = CentroidBank(m, cfg_.k, model_.config().d_h, cfg_.gamma);
        }
    }

    SourceModel& model() { return model_; }
    const SourceModel& model() const { return model_; }
    const AdaptConfig& config() const { return cfg_; }
    std::array<CentroidBank, kModalities>& banks() { return banks_; }
    const std::array<CentroidBank, kModalities>& banks() const { return banks_; }
    const std::optional<AdamW>& optimizer() const { return optimizer_; }
    std::optional<AdamW>& optimizer() { return optimizer_; }
    std::size_t tau() const { return tau_; }
    void advance() { ++tau_; }

    // Bank entropy diagnostics captured when the banks were initialized.
    std::vector<ClusterEntropy>& initial_entropy() { return initial_entropy_; }
    const std::vector<ClusterEntropy>& initial_entropy() const { return initial_entropy_; }

    // Model, banks and optimizer moments for resumable runs.
    ArrayMap to_arrays() const {
        ArrayMap out = model_.to_arrays();
        for (std::size_t m = 0; m < kModalities; ++m) {
            banks_[m].save_state(out, std::string("bank.") + modality_tag(m) + ".");
        }
        if (optimizer_) optimizer_->save_state(out, "optim.");
        out["state.tau"] = Array{{}, {static_cast<double>(tau_)}};
        return out;
    }

    void from_arrays(const ArrayMap& in) {
        model_.from_arrays(in);
        if (uses_gradients(cfg_.variant)) {
            model_.set_adaptation_mode();
            optimizer_.emplace(model_.trainable_parameters(), cfg_.optimizer);
            if (in.contains("optim.step")) optimizer_->load_state(in, "optim.");
        } else {
            model_.set_inference_mode();
        }
        for (std::size_t m = 0; m < kModalities; ++m) {
            banks_[m] = CentroidBank::load_state(in, std::string("bank.") + modality_tag(m) + ".");
        }
        tau_ = static_cast<std::size_t>(in.at("state.tau").values.at(0));
    }

private:
    SourceModel model_;
    AdaptConfig cfg_;
    std::array<CentroidBank, kModalities> banks_;
    std::optional<AdamW> optimizer_;
    std::size_t tau_ = 0;
    std::vector<ClusterEntropy> initial_entropy_;
};

namespace detail {

inline void record_predictions(BatchResult& r, const Tensor& fused_logits) {
    r.predictions = argmax_rows(fused_logits);
    r.entropies = row_entropies(fused_logits);
    double total = 0.0;
    for (double h : r.entropies) total += h;
    r.mean_entropy = r.entropies.empty() ? 0.0 : total / static_cast<double>(r.entropies.size());
}

// Backward, gradient norm and guarded optimizer step.
inline void apply_gradient_step(AdaptState& state, const Tensor& loss, BatchResult& r) {
    auto& opt = *state.optimizer();
    opt.zero_grad();
    r.losses.total = loss.item();
    if (!std::isfinite(r.losses.total)) {
        r.diverged = true;
        r.gradient_norm = std::numeric_limits<double>::quiet_NaN();
        return;
    }
    backward(loss);
    r.gradient_norm = gradient_norm(opt.params());
    if (!std::isfinite(r.gradient_norm)) {
        r.diverged = true;
        opt.zero_grad();
        return;
    }
    opt.step();
    opt.zero_grad();
    r.stepped = true;
}

inline void initialize_banks(AdaptState& state, const ForwardOutput& fwd) {
    const auto& cfg = state.config();
    KMeansOptions opts;
    opts.gamma = cfg.gamma;
    opts.max_iterations = cfg.kmeans_max_iterations;
    for (std::size_t m = 0; m < kModalities; ++m) {
        opts.modality = m;
        const auto points = normalized_rows(fwd.features[m].detach());
        state.banks()[m] = init_kmeanspp_best_of(points, cfg.k, Rng::mix(cfg.seed, 100 + m), cfg.kmeans_restarts, opts);
        const auto assignment = assign(state.banks()[m], fwd.features[m]);
        auto rows = entropy_diag(state.banks()[m], state.model(), fwd.features[m], assignment.cluster);
        state.initial_entropy().insert(state.initial_entropy().end(), rows.begin(), rows.end());
    }
}

} // namespace detail

// Re-estimates the input standardization statistics from the batch by an
// exponential moving average; no gradient step.
inline void norm_update_statistics(SourceModel& model, const ModalityBatch& batch, double momentum) {
    batch.validate();
    for (std::size_t m = 0; m < kModalities; ++m) {
        const auto& x = batch.inputs[m];
        auto& enc = model.encoders()[m];
        const double n = static_cast<double>(x.rows());
        for (std::size_t j = 0; j < x.cols(); ++j) {
            double mu = 0.0;
            for (std::size_t i = 0; i < x.rows(); ++i) mu += x.at(i, j);
            mu /= n;
            double var = 0.0;
            for (std::size_t i = 0; i < x.rows(); ++i) var += (x.at(i, j) - mu) * (x.at(i, j) - mu);
            var /= n;
            enc.input_mean[j] = (1.0 - momentum) * enc.input_mean[j] + momentum * mu;
            enc.input_var[j] = (1.0 - momentum) * enc.input_var[j] + momentum * var;
        }
    }
}

// Test-time normalization: statistics are refreshed first, so the batch is
// predicted with normalization that already includes it.
inline BatchResult baseline_norm(AdaptState& state, const ModalityBatch& batch) {
    BatchResult r;
    r.tau = state.tau();
    norm_update_statistics(state.model(), batch, state.config().norm_momentum);
    detail::record_predictions(r, state.model().forward_full(batch).fused_logits);
    state.advance();
    return r;
}

inline BatchResult baseline_source(AdaptState& state, const ModalityBatch& batch) {
    BatchResult r;
    r.tau = state.tau();
    detail::record_predictions(r, state.model().forward_full(batch).fused_logits);
    state.advance();
    return r;
}

// Self-training on confident pseudo-labels (argmax of the fused prediction).
inline BatchResult baseline_st(AdaptState& state, const ModalityBatch& batch) {
    BatchResult r;
    r.tau = state.tau();
    const auto fwd = state.model().forward_full(batch);
    detail::record_predictions(r, fwd.fused_logits);
    std::vector<std::size_t> confident;
    std::vector<int> pseudo;
    const Tensor probs = row_softmax(fwd.fused_logits.detach());
    for (std::size_t i = 0; i < probs.rows(); ++i) {
        double best = 0.0;
        for (std::size_t c = 0; c < probs.cols(); ++c) best = std::max(best, probs.at(i, c));
        if (best >= state.config().st_confidence) {
            confident.push_back(i);
            pseudo.push_back(r.predictions[i]);
        }
    }
    if (!confident.empty()) {
        Tensor loss = cross_entropy(gather_rows(fwd.fused_logits, confident), pseudo);
        r.losses.em = 0.0;
        detail::apply_gradient_step(state, loss, r);
    }
    state.advance();
    return r;
}

// Entropy minimization on fused predictions only.
inline BatchResult baseline_tent(AdaptState& state, const ModalityBatch& batch) {
    BatchResult r;
    r.tau = state.tau();
    const auto fwd = state.model().forward_full(batch);
    detail::record_predictions(r, fwd.fused_logits);
    Tensor em = em_loss(fwd.fused_logits);
    r.losses.em = em.item();
    detail::apply_gradient_step(state, affine(em, state.config().weights.em), r);
    state.advance();
    return r;
}

inline AlignVariant align_variant_of(MethodVariant v) {
    switch (v) {
        case MethodVariant::CAN: return AlignVariant::CAN;
        case MethodVariant::SCAN: return AlignVariant::SCAN;
        case MethodVariant::SCANNER: return AlignVariant::SCANNER;
        default: throw ConfigError("variant " + std::string(to_string(v)) + " has no alignment objective");
    }
}

// Centroid-aligned adaptation step (CAN / SCAN / SCANNER).
inline BatchResult adapt_centroid(AdaptState& state, const ModalityBatch& batch) {
    const auto& cfg = state.config();
    BatchResult r;
    r.tau = state.tau();
    const auto fwd = state.model().forward_full(batch);
    detail::record_predictions(r, fwd.fused_logits);
    if (!state.banks()[0].initialized()) detail::initialize_banks(state, fwd);

    LossInputs inputs;
    inputs.fused_logits = fwd.fused_logits;
    const auto variant = align_variant_of(cfg.variant);
    for (std::size_t m = 0; m < kModalities; ++m) {
        auto sim = max_similarity(state.banks()[m], fwd.features[m]);
        inputs.similarity[m] = sim.scores;
        r.assignment[m] = std::move(sim.index);
        if (variant == AlignVariant::SCANNER) {
            inputs.cluster_probs[m] = cluster_avg_probs(fwd.modality_logits[m], r.assignment[m], cfg.k);
        }
    }
    const auto breakdown = total_loss(inputs, cfg.weights, variant);
    r.losses.em = breakdown.em.item();
    r.losses.align = breakdown.align.total.item();
    for (std::size_t m = 0; m < kModalities; ++m) r.losses.align_terms[m] = breakdown.align.terms[m].item();
    if (breakdown.div) {
        r.losses.div = breakdown.div->total.item();
        for (std::size_t m = 0; m < kModalities; ++m) r.losses.div_terms[m] = breakdown.div->terms[m].item();
    }
    if (std::isfinite(r.losses.align) && cfg.weights.align > 0.0) {
        auto& opt = *state.optimizer();
        opt.zero_grad();
        backward(affine(breakdown.align.total, cfg.weights.align));
        r.align_gradient_norm = gradient_norm(opt.params());
    }
    detail::apply_gradient_step(state, breakdown.total, r);

    for (std::size_t m = 0; m < kModalities; ++m) {
        const auto points = normalized_rows(fwd.features[m].detach());
        momentum_update(state.banks()[m], batch_means(points, r.assignment[m], state.banks()[m]));
    }
    state.advance();
    return r;
}

// One online step of the configured method. The batch carries no labels.
inline BatchResult adapt_batch(AdaptState& state, const ModalityBatch& batch) {
    if (batch.size() == 0) throw ContractError("adapt_batch on empty batch");
    switch (state.config().variant) {
        case MethodVariant::SOURCE: return baseline_source(state, batch);
        case MethodVariant::NORM: return baseline_norm(state, batch);
        case MethodVariant::ST: return baseline_st(state, batch);
        case MethodVariant::TENT_EM: return baseline_tent(state, batch);
        case MethodVariant::CAN:
        case MethodVariant::SCAN:
        case MethodVariant::SCANNER: return adapt_centroid(state, batch);
    }
    throw ConfigError("unhandled variant");
}

// Splits an unlabeled dataset view into consecutive disjoint batches.
template <typename Source>
std::vector<ModalityBatch> make_stream(const Source& data, std::size_t batch_size) {
    std::vector<ModalityBatch> out;
    for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
        out.push_back(data.batch(begin, std::min(data.size(), begin + batch_size)));
    }
    return out;
}

struct StreamResult {
    std::vector<BatchResult> batches;
    std::vector<int> online_predictions;  // logged before each batch's update
    std::vector<int> final_predictions;   // second pass with the adapted model
    std::array<std::vector<std::size_t>, kModalities> final_assignment;
    std::array<CentroidBank, kModalities> banks;
    std::vector<ClusterEntropy> initial_entropy;
    ArrayMap final_state;
    std::size_t diverged_steps = 0;
};

// Runs the stream once, in order. Only unlabeled batches reach adaptation.
inline StreamResult run_stream(const SourceModel& model, std::span<const ModalityBatch> stream,
                               const AdaptConfig& cfg) {
    if (stream.empty()) throw ContractError("run_stream on empty stream");
    AdaptState state(model.clone(), cfg);
    StreamResult out;
    for (const auto& batch : stream) {
        auto r = adapt_batch(state, batch);
        out.online_predictions.insert(out.online_predictions.end(), r.predictions.begin(), r.predictions.end());
        out.diverged_steps += r.diverged;
        out.batches.push_back(std::move(r));
    }
    // Diagnostic banks for variants that do not maintain their own.
    const bool own_banks = state.banks()[0].initialized();
    std::array<std::vector<double>, kModalities> all_features;
    for (const auto& batch : stream) {
        const auto fwd = state.model().forward_full(batch);
        const auto preds = argmax_rows(fwd.fused_logits);
        out.final_predictions.insert(out.final_predictions.end(), preds.begin(), preds.end());
        for (std::size_t m = 0; m < kModalities; ++m) {
            if (own_banks) {
                const auto a = assign(state.banks()[m], fwd.features[m]);
                out.final_assignment[m].insert(out.final_assignment[m].end(), a.cluster.begin(), a.cluster.end());
            }
            all_features[m].insert(all_features[m].end(), fwd.features[m].data().begin(), fwd.features[m].data().end());
        }
    }
    if (!own_banks) {
        const std::size_t d = model.config().d_h;
        KMeansOptions opts;
        opts.gamma = cfg.gamma;
        for (std::size_t m = 0; m < kModalities; ++m) {
            opts.modality = m;
            const Tensor feats({all_features[m].size() / d, d}, all_features[m]);
            state.banks()[m] = init_kmeanspp_best_of(normalized_rows(feats), cfg.k, Rng::mix(cfg.seed, 200 + m),
                                                     cfg.kmeans_restarts, opts);
            out.final_assignment[m] = assign(state.banks()[m], feats).cluster;
        }
    }
    out.banks = state.banks();
    out.initial_entropy = state.initial_entropy();
    out.final_state = state.to_arrays();
    return out;
}

struct RunMetrics {
    double online_accuracy = 0.0;
    double online_macro_f1 = 0.0;
    double final_accuracy = 0.0;
    double final_macro_f1 = 0.0;
    std::vector<ClusterRatio> cluster_ratios;  // final pass, per modality per cluster
    double mean_ratio_gap = 0.0;
};

// The only place target labels are consumed.
inline RunMetrics evaluate_run(const StreamResult& run, std::span<const int> labels, std::size_t classes,
                               std::size_t k) {
    RunMetrics out;
    out.online_accuracy = accuracy(run.online_predictions, labels);
    out.online_macro_f1 = macro_f1(run.online_predictions, labels, classes);
    out.final_accuracy = accuracy(run.final_predictions, labels);
    out.final_macro_f1 = macro_f1(run.final_predictions, labels, classes);
    for (std::size_t m = 0; m < kModalities; ++m) {
        auto rows = cluster_ratio_diag(m, run.final_assignment[m], run.final_predictions, labels, k);
        out.cluster_ratios.insert(out.cluster_ratios.end(), rows.begin(), rows.end());
    }
    out.mean_ratio_gap = mean_ratio_gap(out.cluster_ratios);
    return out;
}

} // namespace ttadrift
