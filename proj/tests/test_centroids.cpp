#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "ttadrift/centroids.hpp"
#include "ttadrift/testing/oracles.hpp"

using namespace ttadrift;

namespace {

Tensor random_features(std::uint64_t seed, std::size_t n, std::size_t d) {
    Rng rng(seed);
    std::vector<double> v(n * d);
    for (auto& x : v) x = rng.normal();
    return Tensor({n, d}, std::move(v));
}

CentroidBank bank_with(std::vector<double> values, std::size_t k, std::size_t d, double gamma = 0.9) {
    CentroidBank bank(0, k, d, gamma);
    bank.set_centroids(std::move(values));
    return bank;
}

} // namespace

TEST(KMeans, SingleClusterIsMeanOfNormalizedRows) {
    const Tensor f = random_features(1, 20, 5);
    const auto pts = normalized_rows(f);
    const auto bank = init_kmeanspp(f, 1, 7);
    for (std::size_t t = 0; t < 5; ++t) {
        double mean = 0.0;
        for (std::size_t i = 0; i < 20; ++i) mean += pts.row(i)[t];
        EXPECT_NEAR(bank.centroid(0)[t], mean / 20.0, 1e-14);
    }
}

TEST(KMeans, OneClusterPerPointHasZeroSse) {
    const Tensor f = random_features(2, 6, 3);
    const auto bank = init_kmeanspp(f, 6, 3);
    EXPECT_NEAR(clustering_sse(bank, normalized_rows(f)), 0.0, 1e-24);
}

TEST(KMeans, SeparatedBlobsReachOptimalPartition) {
    Rng rng(4);
    PointSet pts{8, 2, {}};
    for (int i = 0; i < 8; ++i) {
        pts.values.push_back((i < 4 ? 5.0 : -5.0) + rng.normal(0.0, 0.3));
        pts.values.push_back(rng.normal(0.0, 0.3));
    }
    const auto bank = init_kmeanspp_best_of(pts, 2, 9, 10);
    EXPECT_NEAR(clustering_sse(bank, pts), ttadrift::testing::oracle_optimal_sse(pts.values, 2, 2), 1e-9);
}

TEST(KMeans, SmallInstancesMatchExhaustiveOptimum) {
    for (std::uint64_t t = 0; t < 60; ++t) {
        Rng rng(t);
        const std::size_t n = 3 + rng.index(6), d = 1 + rng.index(3);
        PointSet pts{n, d, {}};
        for (std::size_t i = 0; i < n * d; ++i) pts.values.push_back(rng.normal(0.0, 1.0 + 4.0 * rng.uniform()));
        const auto bank = init_kmeanspp_best_of(pts, 2, Rng::mix(t, 9), 10);
        EXPECT_LE(clustering_sse(bank, pts), ttadrift::testing::oracle_optimal_sse(pts.values, d, 2) + 1e-9) << "instance " << t;
    }
}

TEST(KMeans, RejectsTooFewDistinctPoints) {
    EXPECT_THROW(init_kmeanspp(random_features(1, 3, 2), 4, 0), ConfigError);
    const Tensor dup = Tensor::matrix(3, 2, {1, 0, 2, 0, 3, 0});
    EXPECT_THROW(init_kmeanspp(dup, 2, 0), DegenerateError);
    EXPECT_THROW(normalized_rows(Tensor::matrix(2, 2, {0, 0, 1, 0})), DegenerateError);
}

TEST(KMeans, SeedDeterminism) {
    const Tensor f = random_features(5, 40, 4);
    EXPECT_EQ(init_kmeanspp(f, 3, 11).values(), init_kmeanspp(f, 3, 11).values());
}

TEST(Lloyd, ConvergedBankIsFixedPoint) {
    const Tensor f = random_features(6, 30, 4);
    auto bank = init_kmeanspp(f, 3, 2);
    const auto before = bank.values();
    const double sse = clustering_sse(bank, normalized_rows(f));
    EXPECT_NEAR(lloyd_iterate(bank, f), sse, 1e-12);
    EXPECT_EQ(bank.values(), before);
}

TEST(Lloyd, CollinearPairsConvergeFast) {
    const PointSet pts{4, 1, {0.0, 1.0, 10.0, 11.0}};
    auto bank = bank_with({0.0, 11.0}, 2, 1);
    auto first = detail::lloyd_step(bank, pts);
    auto second = detail::lloyd_step(bank, pts);
    EXPECT_EQ(first.assignment, second.assignment);
    EXPECT_FALSE(second.changed);
    EXPECT_DOUBLE_EQ(bank.centroid(0)[0], 0.5);
    EXPECT_DOUBLE_EQ(bank.centroid(1)[0], 10.5);
}

TEST(Lloyd, SseNeverIncreases) {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const Tensor f = random_features(seed, 25, 3);
        auto bank = init_kmeanspp(normalized_rows(f), 3, seed, KMeansOptions{0, false});
        double prev = clustering_sse(bank, normalized_rows(f));
        for (int it = 0; it < 10; ++it) {
            const double sse = lloyd_iterate(bank, f);
            EXPECT_LE(sse, prev + 1e-9);
            prev = sse;
        }
    }
}

TEST(BatchMeans, Examples) {
    const PointSet pts{4, 2, {1, 0, 0, 1, 3, 4, -2, 6}};
    const auto bank = bank_with({0, 0, 1, 1, 9, 9}, 3, 2);
    const auto bm = batch_means(pts, {0, 0, 1, 0}, bank);
    EXPECT_NEAR(bm.means[0], (1 + 0 - 2) / 3.0, 1e-15);
    EXPECT_NEAR(bm.means[1], (0 + 1 + 6) / 3.0, 1e-15);
    EXPECT_EQ(bm.means[2], 3.0);
    EXPECT_EQ(bm.means[3], 4.0);
    EXPECT_TRUE(bm.carried[2]);
    EXPECT_EQ(bm.means[4], 9.0);

    const auto pair = batch_means(PointSet{2, 2, {1, 2, 3, -2}}, {1, 1}, bank_with({1, 0, 0, 1}, 2, 2));
    EXPECT_EQ(pair.means[2], 2.0);
    EXPECT_EQ(pair.means[3], 0.0);
}

TEST(Momentum, Examples) {
    auto bank = bank_with({1.0, 0.0}, 1, 2, 0.9);
    momentum_update(bank, ClusterMeans{{0.0, 1.0}, {false}});
    EXPECT_NEAR(bank.centroid(0)[0], 0.9, 1e-15);
    EXPECT_NEAR(bank.centroid(0)[1], 0.1, 1e-15);
    EXPECT_EQ(bank.tau(), 1u);

    auto replace = bank_with({1.0, 0.0}, 1, 2, 0.0);
    momentum_update(replace, ClusterMeans{{0.3, -0.4}, {false}});
    EXPECT_EQ(replace.values(), (std::vector<double>{0.3, -0.4}));

    auto fixed = bank_with({0.6, 0.8}, 1, 2, 0.5);
    momentum_update(fixed, ClusterMeans{{0.6, 0.8}, {false}});
    EXPECT_EQ(fixed.values(), (std::vector<double>{0.6, 0.8}));
}

TEST(Momentum, ContractsGeometrically) {
    const double gamma = 0.7;
    auto bank = bank_with({2.0, -1.0, 0.5}, 1, 3, gamma);
    const std::vector<double> target{-0.3, 0.4, 1.0};
    double prev = std::sqrt(squared_distance(bank.centroid(0), target));
    for (int step = 0; step < 30; ++step) {
        momentum_update(bank, ClusterMeans{target, {false}});
        const double dist = std::sqrt(squared_distance(bank.centroid(0), target));
        EXPECT_NEAR(dist, gamma * prev, 1e-12);
        prev = dist;
    }
}

TEST(Momentum, RejectsGammaOutsideRange) {
    EXPECT_THROW(CentroidBank(0, 2, 3, 1.0), ConfigError);
    EXPECT_THROW(CentroidBank(0, 2, 3, -0.1), ConfigError);
}

TEST(Similarity, Examples) {
    const auto bank = bank_with({0.0, 1.0, 1.0 / std::numbers::sqrt2, 1.0 / std::numbers::sqrt2}, 2, 2);
    const auto r = max_similarity(bank, Tensor::matrix(2, 2, {1.0, 0.0, 0.0, 2.0}));
    EXPECT_NEAR(r.scores[0], 1.0 / std::numbers::sqrt2, 1e-15);
    EXPECT_EQ(r.index[0], 1u);
    EXPECT_NEAR(r.scores[1], 1.0, 1e-15);
    EXPECT_EQ(r.index[1], 0u);

    const auto single = bank_with({3.0, 4.0}, 1, 2);
    const auto s = max_similarity(single, Tensor::matrix(1, 2, {1.0, 0.0}));
    EXPECT_NEAR(s.scores[0], 0.6, 1e-15);
}

TEST(Similarity, CentroidsReceiveNoGradient) {
    auto bank = bank_with({1.0, 0.5, -0.2, 0.9}, 2, 2);
    Tensor f = Tensor::matrix(3, 2, {0.3, 1.0, -1.0, 0.2, 0.5, 0.5}, true);
    const auto r = max_similarity(bank, f);
    backward(sum(r.scores));
    EXPECT_TRUE(f.has_grad());
    const Tensor c = bank.as_tensor();
    EXPECT_FALSE(c.requires_grad());
}

TEST(Bank, StateRoundTrip) {
    auto bank = bank_with({1, 2, 3, 4}, 2, 2, 0.8);
    bank.advance();
    ArrayMap state;
    bank.save_state(state, "b.");
    EXPECT_EQ(CentroidBank::load_state(state, "b."), bank);
}
