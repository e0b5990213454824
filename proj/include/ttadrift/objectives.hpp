#pragma once

// Adaptation objectives. Every loss takes per-modality inputs and returns the
// summed total together with the per-modality terms, all as graph tensors.

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ttadrift/errors.hpp"
#include "ttadrift/gradcore.hpp"
#include "ttadrift/model.hpp"

namespace ttadrift {

inline constexpr double kLogFloor = 1e-12;

struct ModalityLoss {
    Tensor total;
    std::array<Tensor, kModalities> terms;
};

using ModalityScores = std::array<Tensor, kModalities>;

namespace detail {

inline void require_nonempty(const Tensor& s, const char* op) {
    if (s.numel() == 0) throw ContractError(std::string(op) + ": empty batch");
}

inline ModalityLoss sum_terms(std::array<Tensor, kModalities> terms) {
    return {add_n(terms), std::move(terms)};
}

} // namespace detail

// Sum over modalities of (1 - mean_i s_i).
inline ModalityLoss can_loss(const ModalityScores& s) {
    std::array<Tensor, kModalities> terms;
    for (std::size_t m = 0; m < kModalities; ++m) {
        detail::require_nonempty(s[m], "can_loss");
        terms[m] = 1.0 - mean(s[m]);
    }
    return detail::sum_terms(std::move(terms));
}

// softmax(beta * s) over the batch.
inline Tensor adaptive_weights(const Tensor& s, double beta) {
    detail::require_nonempty(s, "adaptive_weights");
    if (!(beta >= 0.0) || !std::isfinite(beta)) {
        throw ConfigError("adaptive weight temperature beta must be finite and >= 0");
    }
    return softmax(s, beta);
}

// Sum over modalities of (1 - sum_i w_i s_i) with w = softmax(beta * s).
inline ModalityLoss scan_loss(const ModalityScores& s, double beta) {
    std::array<Tensor, kModalities> terms;
    for (std::size_t m = 0; m < kModalities; ++m) {
        terms[m] = 1.0 - dot(adaptive_weights(s[m], beta), s[m]);
    }
    return detail::sum_terms(std::move(terms));
}

// Mean softmax probability of each cluster's members; clusters with no
// members in the batch are skipped (nullopt).
inline std::vector<std::optional<Tensor>> cluster_avg_probs(const Tensor& logits,
                                                            const std::vector<std::size_t>& assignment,
                                                            std::size_t k) {
    if (logits.rank() != 2 || assignment.size() != logits.rows()) {
        throw ContractError("cluster_avg_probs: assignment does not match logits " + shape_str(logits.shape()));
    }
    std::vector<std::vector<std::size_t>> members(k);
    for (std::size_t i = 0; i < assignment.size(); ++i) {
        if (assignment[i] >= k) throw ContractError("cluster_avg_probs: assignment index out of range");
        members[assignment[i]].push_back(i);
    }
    Tensor probs = row_softmax(logits);
    std::vector<std::optional<Tensor>> out(k);
    for (std::size_t j = 0; j < k; ++j) {
        if (!members[j].empty()) out[j] = mean_rows(gather_rows(probs, members[j]));
    }
    return out;
}

using ClusterProbs = std::vector<std::optional<Tensor>>;

// Sum over modalities of (1/k) * sum_n sum_c p log p. This is negative entropy,
// so minimizing it pushes every cluster-average distribution toward uniform.
inline ModalityLoss div_loss(const std::array<ClusterProbs, kModalities>& cluster_probs) {
    std::array<Tensor, kModalities> terms;
    for (std::size_t m = 0; m < kModalities; ++m) {
        const auto& clusters = cluster_probs[m];
        if (clusters.empty()) throw ContractError("div_loss: no clusters");
        std::vector<Tensor> parts;
        for (const auto& p : clusters) {
            if (p) parts.push_back(dot(*p, log_clamped(*p, kLogFloor)));
        }
        const double inv_k = 1.0 / static_cast<double>(clusters.size());
        terms[m] = parts.empty() ? Tensor::scalar(0.0) : affine(add_n(parts), inv_k);
    }
    return detail::sum_terms(std::move(terms));
}

// Batch-mean Shannon entropy of softmax(logits).
inline Tensor em_loss(const Tensor& logits) {
    if (logits.rank() != 2 || logits.rows() == 0) throw ContractError("em_loss: need a non-empty logit matrix");
    Tensor p = row_softmax(logits);
    return affine(sum(mul(p, log_clamped(p, kLogFloor))), -1.0 / static_cast<double>(logits.rows()));
}

enum class AlignVariant { CAN, SCAN, SCANNER };

inline std::string_view to_string(AlignVariant v) {
    switch (v) {
        case AlignVariant::CAN: return "CAN";
        case AlignVariant::SCAN: return "SCAN";
        case AlignVariant::SCANNER: return "SCANNER";
    }
    return "?";
}

inline AlignVariant parse_align_variant(std::string_view name) {
    if (name == "CAN") return AlignVariant::CAN;
    if (name == "SCAN") return AlignVariant::SCAN;
    if (name == "SCANNER") return AlignVariant::SCANNER;
    throw ConfigError("unknown alignment variant '" + std::string(name) + "'");
}

struct LossWeights {
    double em = 1.0;     // epsilon
    double align = 1.0;  // lambda
    double div = 1.0;    // alpha
    double beta = 10.0;  // adaptive-weight temperature

    bool operator==(const LossWeights&) const = default;
};

struct LossInputs {
    ModalityScores similarity;                          // s_{m,i}
    std::array<ClusterProbs, kModalities> cluster_probs;  // cluster-average probabilities
    Tensor fused_logits;
};

struct LossBreakdown {
    AlignVariant variant = AlignVariant::SCANNER;
    Tensor em;
    ModalityLoss align;  // CAN or SCAN terms, depending on variant
    std::optional<ModalityLoss> div;
    double em_weight = 0.0, align_weight = 0.0, div_weight = 0.0;
    Tensor total;
};

// epsilon * EM + lambda * (CAN | SCAN) + alpha * DIV, where alpha is forced
// to zero for the CAN and SCAN variants.
inline LossBreakdown total_loss(const LossInputs& in, const LossWeights& w, AlignVariant variant) {
    for (double x : {w.em, w.align, w.div}) {
        if (!std::isfinite(x) || x < 0.0) throw ConfigError("loss weights must be finite and non-negative");
    }
    LossBreakdown out;
    out.variant = variant;
    out.em = em_loss(in.fused_logits);
    out.em_weight = w.em;
    out.align_weight = w.align;
    out.align = variant == AlignVariant::CAN ? can_loss(in.similarity) : scan_loss(in.similarity, w.beta);
    Tensor total = add(affine(out.em, w.em), affine(out.align.total, w.align));
    if (variant == AlignVariant::SCANNER) {
        out.div = div_loss(in.cluster_probs);
        out.div_weight = w.div;
        total = add(total, affine(out.div->total, w.div));
    }
    out.total = total;
    return out;
}

} // namespace ttadrift
