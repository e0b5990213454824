#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "ttadrift/centroids.hpp"
#include "ttadrift/model.hpp"

namespace ttadrift {

// Shannon entropy of softmax(logits[row]).
inline double row_entropy(const Tensor& logits, std::size_t row) {
    const std::size_t c = logits.cols();
    double peak = -INFINITY;
    for (std::size_t j = 0; j < c; ++j) peak = std::max(peak, logits.at(row, j));
    double z = 0.0;
    std::vector<double> p(c);
    for (std::size_t j = 0; j < c; ++j) z += (p[j] = std::exp(logits.at(row, j) - peak));
    double h = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
        p[j] /= z;
        if (p[j] > 0.0) h -= p[j] * std::log(p[j]);
    }
    return h;
}

inline std::vector<double> row_entropies(const Tensor& logits) {
    std::vector<double> out(logits.rows());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = row_entropy(logits, i);
    return out;
}

struct ClusterEntropy {
    std::size_t modality = 0;
    std::size_t cluster = 0;
    std::size_t members = 0;
    double centroid_entropy = 0.0;
    double member_entropy = 0.0;  // mean over members
};

// Prediction entropy of each centroid against the mean prediction entropy of
// its members. Bank centroids live in normalized feature space, so each one
// is rescaled to the mean norm of its members before being classified.
inline std::vector<ClusterEntropy> entropy_diag(const CentroidBank& bank, const SourceModel& model,
                                                const Tensor& features, const std::vector<std::size_t>& assignment) {
    const std::size_t k = bank.k(), d = bank.dim();
    if (features.rows() != assignment.size()) throw ContractError("entropy_diag: assignment does not match features");
    const Tensor member_logits = model.classify(features.detach());
    std::vector<double> norm_sum(k, 0.0), ent_sum(k, 0.0);
    std::vector<std::size_t> count(k, 0);
    for (std::size_t i = 0; i < assignment.size(); ++i) {
        const auto j = assignment[i];
        double n2 = 0.0;
        for (std::size_t t = 0; t < d; ++t) n2 += features.at(i, t) * features.at(i, t);
        norm_sum[j] += std::sqrt(n2);
        ent_sum[j] += row_entropy(member_logits, i);
        ++count[j];
    }
    std::vector<ClusterEntropy> out;
    for (std::size_t j = 0; j < k; ++j) {
        if (count[j] == 0) continue;
        const auto c = bank.centroid(j);
        double cn = 0.0;
        for (double x : c) cn += x * x;
        cn = std::sqrt(cn);
        const double target = norm_sum[j] / static_cast<double>(count[j]);
        std::vector<double> scaled(c.begin(), c.end());
        for (auto& x : scaled) x *= cn > 0.0 ? target / cn : 0.0;
        const Tensor logits = model.classify(Tensor({1, d}, std::move(scaled)));
        out.push_back({bank.modality(), j, count[j], row_entropy(logits, 0),
                       ent_sum[j] / static_cast<double>(count[j])});
    }
    return out;
}

} // namespace ttadrift
