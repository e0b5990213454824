#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ttadrift/errors.hpp"

namespace ttadrift {

inline void require_aligned(std::size_t a, std::size_t b, const char* what) {
    if (a != b) {
        throw ContractError(std::string(what) + ": length mismatch " + std::to_string(a) + " vs " +
                            std::to_string(b));
    }
}

inline double accuracy(std::span<const int> preds, std::span<const int> labels) {
    require_aligned(preds.size(), labels.size(), "accuracy");
    if (preds.empty()) throw ContractError("accuracy of empty prediction set");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == labels[i];
    return static_cast<double>(hits) / static_cast<double>(preds.size());
}

// Unweighted mean of per-class F1 over classes [0, classes). A class with no
// true positives (including one absent from both predictions and labels)
// contributes F1 = 0.
inline double macro_f1(std::span<const int> preds, std::span<const int> labels, std::size_t classes) {
    require_aligned(preds.size(), labels.size(), "macro_f1");
    if (classes == 0) throw ContractError("macro_f1 needs at least one class");
    std::vector<std::size_t> tp(classes, 0), fp(classes, 0), fn(classes, 0);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const auto p = static_cast<std::size_t>(preds[i]);
        const auto y = static_cast<std::size_t>(labels[i]);
        if (p >= classes || y >= classes) throw ContractError("macro_f1: class index out of range");
        if (p == y) {
            ++tp[p];
        } else {
            ++fp[p];
            ++fn[y];
        }
    }
    double total = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
        // 2PR/(P+R) == 2TP/(2TP+FP+FN), with 0/0 -> 0.
        const double denom = static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
        total += denom > 0.0 ? 2.0 * static_cast<double>(tp[c]) / denom : 0.0;
    }
    return total / static_cast<double>(classes);
}

struct ClusterRatio {
    std::size_t modality = 0;
    std::size_t cluster = 0;
    std::size_t members = 0;
    double predicted_ratio = 0.0;  // predicted-positive fraction
    double true_ratio = 0.0;       // ground-truth positive fraction
};

// Predicted vs. true positive-class ratio for every non-empty cluster.
inline std::vector<ClusterRatio> cluster_ratio_diag(std::size_t modality, std::span<const std::size_t> assignment,
                                                    std::span<const int> preds, std::span<const int> labels,
                                                    std::size_t k, int positive = 1) {
    require_aligned(assignment.size(), preds.size(), "cluster_ratio_diag");
    require_aligned(preds.size(), labels.size(), "cluster_ratio_diag");
    std::vector<std::size_t> count(k, 0), pred_pos(k, 0), true_pos(k, 0);
    for (std::size_t i = 0; i < assignment.size(); ++i) {
        const auto j = assignment[i];
        if (j >= k) throw ContractError("cluster_ratio_diag: cluster index out of range");
        ++count[j];
        pred_pos[j] += preds[i] == positive;
        true_pos[j] += labels[i] == positive;
    }
    std::vector<ClusterRatio> out;
    for (std::size_t j = 0; j < k; ++j) {
        if (count[j] == 0) continue;
        const double n = static_cast<double>(count[j]);
        out.push_back({modality, j, count[j], static_cast<double>(pred_pos[j]) / n,
                       static_cast<double>(true_pos[j]) / n});
    }
    return out;
}

// Mean over clusters of |predicted ratio - true ratio|.
inline double mean_ratio_gap(std::span<const ClusterRatio> rows) {
    if (rows.empty()) return 0.0;
    double total = 0.0;
    for (const auto& r : rows) total += std::abs(r.predicted_ratio - r.true_ratio);
    return total / static_cast<double>(rows.size());
}

} // namespace ttadrift
