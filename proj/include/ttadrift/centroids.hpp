#pragma once

// Per-modality centroid banks: k-means++ / Lloyd initialization on
// L2-normalized features, online assignment by maximum cosine similarity,
// and momentum blending of per-batch cluster means into the bank.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ttadrift/checkpoint.hpp"
#include "ttadrift/errors.hpp"
#include "ttadrift/gradcore.hpp"
#include "ttadrift/rng.hpp"

namespace ttadrift {

// Row-major point set, each row of length `dim`.
struct PointSet {
    std::size_t count = 0;
    std::size_t dim = 0;
    std::vector<double> values;

    std::span<const double> row(std::size_t i) const { return {values.data() + i * dim, dim}; }
};

// Copies the rows of a [B x d] tensor scaled to unit length.
inline PointSet normalized_rows(const Tensor& features) {
    if (features.rank() != 2) throw DimensionError("expected a feature matrix, got " + shape_str(features.shape()));
    PointSet out{features.rows(), features.cols(), std::vector<double>(features.values())};
    for (std::size_t i = 0; i < out.count; ++i) {
        double norm = 0.0;
        for (std::size_t j = 0; j < out.dim; ++j) norm += out.values[i * out.dim + j] * out.values[i * out.dim + j];
        norm = std::sqrt(norm);
        if (norm == 0.0) throw DegenerateError("zero-norm feature row " + std::to_string(i));
        for (std::size_t j = 0; j < out.dim; ++j) out.values[i * out.dim + j] /= norm;
    }
    return out;
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) acc += (a[j] - b[j]) * (a[j] - b[j]);
    return acc;
}

class CentroidBank {
public:
    CentroidBank() = default;
    CentroidBank(std::size_t modality, std::size_t k, std::size_t dim, double gamma)
        : modality_(modality), k_(k), dim_(dim), gamma_(gamma), centroids_(k * dim, 0.0) {
        if (!(gamma >= 0.0 && gamma < 1.0)) {
            throw ConfigError("momentum gamma must lie in [0, 1), got " + std::to_string(gamma));
        }
        if (k == 0) throw ConfigError("cluster count k must be positive");
    }

    std::size_t modality() const { return modality_; }
    std::size_t k() const { return k_; }
    std::size_t dim() const { return dim_; }
    double gamma() const { return gamma_; }
    bool initialized() const { return initialized_; }
    std::size_t tau() const { return tau_; }

    std::span<const double> centroid(std::size_t j) const { return {centroids_.data() + j * dim_, dim_}; }
    std::span<double> centroid(std::size_t j) { return {centroids_.data() + j * dim_, dim_}; }
    const std::vector<double>& values() const { return centroids_; }

    // Constant [k x d] tensor; centroids never take part in differentiation.
    Tensor as_tensor() const { return Tensor({k_, dim_}, centroids_, false); }

    void set_centroids(std::vector<double> values) {
        if (values.size() != k_ * dim_) throw DimensionError("centroid buffer has wrong size");
        centroids_ = std::move(values);
        initialized_ = true;
    }

    void advance() { ++tau_; }

    void save_state(ArrayMap& out, const std::string& prefix) const {
        out[prefix + "centroids"] = Array{{k_, dim_}, centroids_};
        out[prefix + "meta"] = Array{{5},
                                     {static_cast<double>(modality_), gamma_, initialized_ ? 1.0 : 0.0,
                                      static_cast<double>(tau_), static_cast<double>(k_)}};
    }

    static CentroidBank load_state(const ArrayMap& in, const std::string& prefix) {
        const auto& c = in.at(prefix + "centroids");
        const auto& meta = in.at(prefix + "meta").values;
        if (c.shape.size() != 2) throw CompatibilityError("centroid array must be a matrix");
        CentroidBank bank(static_cast<std::size_t>(meta.at(0)), c.shape[0], c.shape[1], meta.at(1));
        bank.centroids_ = c.values;
        bank.initialized_ = meta.at(2) != 0.0;
        bank.tau_ = static_cast<std::size_t>(meta.at(3));
        return bank;
    }

    bool operator==(const CentroidBank&) const = default;

private:
    std::size_t modality_ = 0;
    std::size_t k_ = 0;
    std::size_t dim_ = 0;
    double gamma_ = 0.9;
    bool initialized_ = false;
    std::size_t tau_ = 0;
    std::vector<double> centroids_;
};

struct Assignment {
    std::vector<std::size_t> cluster;  // 0-based index into the bank
    std::vector<double> similarity;    // cosine to the assigned centroid
    std::size_t size() const { return cluster.size(); }
};

// Index of the Euclidean-nearest centroid; ties go to the lowest index.
inline std::size_t nearest_centroid(const CentroidBank& bank, std::span<const double> point, double* dist = nullptr) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < bank.k(); ++j) {
        const double d = squared_distance(point, bank.centroid(j));
        if (d < best_d) {
            best_d = d;
            best = j;
        }
    }
    if (dist) *dist = best_d;
    return best;
}

// Within-cluster sum of squared distances under nearest-centroid assignment.
inline double clustering_sse(const CentroidBank& bank, const PointSet& points) {
    double total = 0.0;
    for (std::size_t i = 0; i < points.count; ++i) {
        double d;
        nearest_centroid(bank, points.row(i), &d);
        total += d;
    }
    return total;
}

struct LloydStep {
    double sse = 0.0;
    bool changed = false;  // any centroid moved
    std::vector<std::size_t> assignment;
};

namespace detail {

inline LloydStep lloyd_step(CentroidBank& bank, const PointSet& points) {
    const std::size_t k = bank.k(), d = bank.dim();
    LloydStep step;
    step.assignment.resize(points.count);
    std::vector<double> dist(points.count);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < points.count; ++i) {
        step.assignment[i] = nearest_centroid(bank, points.row(i), &dist[i]);
        ++counts[step.assignment[i]];
    }
    // An empty cluster takes the point farthest from its current centroid,
    // drawn from a cluster that can spare a member.
    for (std::size_t j = 0; j < k; ++j) {
        if (counts[j] != 0) continue;
        std::size_t far = points.count;
        double far_d = -1.0;
        for (std::size_t i = 0; i < points.count; ++i) {
            if (counts[step.assignment[i]] > 1 && dist[i] > far_d) {
                far_d = dist[i];
                far = i;
            }
        }
        if (far == points.count) break;
        --counts[step.assignment[far]];
        step.assignment[far] = j;
        dist[far] = 0.0;
        counts[j] = 1;
    }
    std::vector<double> means(k * d, 0.0);
    for (std::size_t i = 0; i < points.count; ++i) {
        const auto p = points.row(i);
        for (std::size_t t = 0; t < d; ++t) means[step.assignment[i] * d + t] += p[t];
    }
    for (std::size_t j = 0; j < k; ++j) {
        if (counts[j] == 0) {
            std::copy(bank.centroid(j).begin(), bank.centroid(j).end(), means.begin() + j * d);
            continue;
        }
        for (std::size_t t = 0; t < d; ++t) means[j * d + t] /= static_cast<double>(counts[j]);
    }
    step.changed = means != bank.values();
    bank.set_centroids(std::move(means));
    for (std::size_t i = 0; i < points.count; ++i) {
        step.sse += squared_distance(points.row(i), bank.centroid(step.assignment[i]));
    }
    return step;
}

inline std::size_t count_distinct(const PointSet& points, std::size_t stop_at) {
    std::vector<std::size_t> reps;
    for (std::size_t i = 0; i < points.count && reps.size() < stop_at; ++i) {
        bool dup = false;
        for (auto r : reps) {
            if (squared_distance(points.row(i), points.row(r)) == 0.0) {
                dup = true;
                break;
            }
        }
        if (!dup) reps.push_back(i);
    }
    return reps.size();
}

// Hartigan refinement: moves single points to another cluster while that
// lowers the SSE, updating the two affected means after each move. Lloyd
// fixed points can isolate an outlier in its own cluster; a transfer escapes
// that. Any partition this leaves is itself a Lloyd fixed point.
inline bool transfer_points(CentroidBank& bank, const PointSet& points, std::vector<std::size_t>& assignment,
                            std::size_t max_passes = 100) {
    const std::size_t k = bank.k(), d = bank.dim();
    std::vector<double> means(bank.values());
    std::vector<std::size_t> counts(k, 0);
    for (auto a : assignment) ++counts[a];
    bool any = false;
    for (std::size_t pass = 0; pass < max_passes; ++pass) {
        bool moved = false;
        for (std::size_t i = 0; i < points.count; ++i) {
            const std::size_t a = assignment[i];
            if (counts[a] < 2) continue;
            const auto x = points.row(i);
            const std::span<const double> ca(means.data() + a * d, d);
            const double na = static_cast<double>(counts[a]);
            const double remove_gain = na / (na - 1.0) * squared_distance(x, ca);
            std::size_t best = a;
            double best_cost = remove_gain;
            for (std::size_t b = 0; b < k; ++b) {
                if (b == a) continue;
                const double nb = static_cast<double>(counts[b]);
                const double cost = nb / (nb + 1.0) * squared_distance(x, {means.data() + b * d, d});
                if (cost < best_cost * (1.0 - 1e-12)) {
                    best_cost = cost;
                    best = b;
                }
            }
            if (best == a) continue;
            const double nb = static_cast<double>(counts[best]);
            for (std::size_t t = 0; t < d; ++t) {
                means[a * d + t] = (na * means[a * d + t] - x[t]) / (na - 1.0);
                means[best * d + t] = (nb * means[best * d + t] + x[t]) / (nb + 1.0);
            }
            --counts[a];
            ++counts[best];
            assignment[i] = best;
            moved = any = true;
        }
        if (!moved) break;
    }
    if (any) bank.set_centroids(std::move(means));
    return any;
}

} // namespace detail

// One Lloyd iteration (assignment + mean update) on the L2-normalized rows of
// `features`. Returns the within-cluster SSE after the update.
inline double lloyd_iterate(CentroidBank& bank, const Tensor& features) {
    if (!bank.initialized()) throw ContractError("lloyd_iterate on uninitialized bank");
    return detail::lloyd_step(bank, normalized_rows(features)).sse;
}

struct KMeansOptions {
    std::size_t max_iterations = 100;
    bool refine = true;  // single-point transfers after Lloyd converges
    double gamma = 0.9;
    std::size_t modality = 0;
};

// Chooses k distinct seeds by k-means++ D^2 weighting, then runs Lloyd to an
// assignment fixed point or the iteration cap.
inline CentroidBank init_kmeanspp(const PointSet& points, std::size_t k, std::uint64_t seed,
                                  const KMeansOptions& opts = {}) {
    if (k == 0) throw ConfigError("cluster count k must be positive");
    if (points.count < k) {
        throw ConfigError("k-means needs at least k=" + std::to_string(k) + " points, got " +
                          std::to_string(points.count));
    }
    if (detail::count_distinct(points, k) < k) {
        throw DegenerateError("fewer than k=" + std::to_string(k) + " distinct feature vectors");
    }
    const std::size_t d = points.dim;
    CentroidBank bank(opts.modality, k, d, opts.gamma);
    Rng rng(seed);
    std::vector<std::size_t> chosen{static_cast<std::size_t>(rng.index(points.count))};
    std::vector<double> d2(points.count);
    for (std::size_t i = 0; i < points.count; ++i) d2[i] = squared_distance(points.row(i), points.row(chosen[0]));
    while (chosen.size() < k) {
        double total = 0.0;
        for (double v : d2) total += v;
        if (!(total > 0.0)) throw DegenerateError("k-means++ ran out of distinct seeds");
        double target = rng.uniform() * total;
        std::size_t pick = points.count;
        for (std::size_t i = 0; i < points.count; ++i) {
            if (d2[i] <= 0.0) continue;
            pick = i;
            target -= d2[i];
            if (target < 0.0) break;
        }
        chosen.push_back(pick);
        for (std::size_t i = 0; i < points.count; ++i) {
            d2[i] = std::min(d2[i], squared_distance(points.row(i), points.row(pick)));
        }
    }
    std::vector<double> seeds;
    for (auto c : chosen) seeds.insert(seeds.end(), points.row(c).begin(), points.row(c).end());
    bank.set_centroids(std::move(seeds));

    auto lloyd = [&] {
        std::vector<std::size_t> previous;
        for (std::size_t it = 0; it < opts.max_iterations; ++it) {
            auto step = detail::lloyd_step(bank, points);
            if (step.assignment == previous) break;
            previous = std::move(step.assignment);
        }
        return previous;
    };
    auto assignment = lloyd();
    if (opts.refine && !assignment.empty() && detail::transfer_points(bank, points, assignment)) lloyd();
    return bank;
}

inline CentroidBank init_kmeanspp(const Tensor& features, std::size_t k, std::uint64_t seed,
                                  const KMeansOptions& opts = {}) {
    return init_kmeanspp(normalized_rows(features), k, seed, opts);
}

// Lowest-SSE bank over `restarts` independently seeded k-means++ runs.
inline CentroidBank init_kmeanspp_best_of(const PointSet& points, std::size_t k, std::uint64_t seed,
                                          std::size_t restarts, const KMeansOptions& opts = {}) {
    CentroidBank best;
    double best_sse = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < std::max<std::size_t>(restarts, 1); ++r) {
        auto bank = init_kmeanspp(points, k, Rng::mix(seed, r), opts);
        const double sse = clustering_sse(bank, points);
        if (sse < best_sse) {
            best_sse = sse;
            best = std::move(bank);
        }
    }
    return best;
}

struct SimilarityResult {
    Tensor scores;                   // [B], differentiable w.r.t. the features only
    std::vector<std::size_t> index;  // argmax centroid per row
};

// Maximum cosine similarity of each feature row to the bank's centroids.
// Ties resolve to the lowest centroid index.
inline SimilarityResult max_similarity(const CentroidBank& bank, const Tensor& features) {
    if (!bank.initialized()) throw ContractError("max_similarity on uninitialized bank");
    Tensor cos = cosine_rows(features, bank.as_tensor());
    SimilarityResult out;
    out.index.resize(cos.rows());
    for (std::size_t i = 0; i < cos.rows(); ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < cos.cols(); ++j)
            if (cos.at(i, j) > cos.at(i, best)) best = j;
        out.index[i] = best;
    }
    out.scores = pick(cos, out.index);
    return out;
}

inline Assignment assign(const CentroidBank& bank, const Tensor& features) {
    auto sim = max_similarity(bank, features.detach());
    return {sim.index, sim.scores.values()};
}

struct ClusterMeans {
    std::vector<double> means;  // [k x d]
    std::vector<bool> carried;  // cluster had no members; previous centroid kept
};

// Per-cluster mean of the given rows. Empty clusters carry the bank's current
// centroid forward and are flagged.
inline ClusterMeans batch_means(const PointSet& points, const std::vector<std::size_t>& assignment,
                                const CentroidBank& bank) {
    if (assignment.size() != points.count) throw ContractError("assignment length does not match batch");
    const std::size_t k = bank.k(), d = bank.dim();
    if (points.dim != d) throw DimensionError("feature dim does not match bank");
    ClusterMeans out{std::vector<double>(k * d, 0.0), std::vector<bool>(k, false)};
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < points.count; ++i) {
        const auto j = assignment[i];
        if (j >= k) throw ContractError("assignment index out of range");
        ++counts[j];
        const auto p = points.row(i);
        for (std::size_t t = 0; t < d; ++t) out.means[j * d + t] += p[t];
    }
    for (std::size_t j = 0; j < k; ++j) {
        if (counts[j] == 0) {
            out.carried[j] = true;
            std::copy(bank.centroid(j).begin(), bank.centroid(j).end(), out.means.begin() + j * d);
        } else {
            for (std::size_t t = 0; t < d; ++t) out.means[j * d + t] /= static_cast<double>(counts[j]);
        }
    }
    return out;
}

// c <- gamma * c + (1 - gamma) * batch_mean, index-aligned; tau advances.
// A blend that would land on the zero vector keeps the previous centroid.
inline void momentum_update(CentroidBank& bank, const ClusterMeans& batch) {
    if (!bank.initialized()) throw ContractError("momentum_update on uninitialized bank");
    if (batch.means.size() != bank.values().size()) throw DimensionError("batch means do not match bank");
    const double g = bank.gamma();
    if (!(g >= 0.0 && g < 1.0)) throw ConfigError("momentum gamma must lie in [0, 1)");
    std::vector<double> next(bank.values());
    const std::size_t d = bank.dim();
    for (std::size_t j = 0; j < bank.k(); ++j) {
        double norm = 0.0;
        std::vector<double> blended(d);
        for (std::size_t t = 0; t < d; ++t) {
            blended[t] = g * next[j * d + t] + (1.0 - g) * batch.means[j * d + t];
            norm += blended[t] * blended[t];
        }
        if (norm > 0.0 && std::isfinite(norm)) std::copy(blended.begin(), blended.end(), next.begin() + j * d);
    }
    bank.set_centroids(std::move(next));
    bank.advance();
}

} // namespace ttadrift
