#include <cmath>

#include <gtest/gtest.h>

#include "ttadrift/objectives.hpp"
#include "ttadrift/testing/oracles.hpp"

using namespace ttadrift;
namespace oracle = ttadrift::testing;

namespace {

ModalityScores scores(std::vector<double> a, std::vector<double> b, std::vector<double> c) {
    return {Tensor::vector(std::move(a), true), Tensor::vector(std::move(b), true), Tensor::vector(std::move(c), true)};
}

ModalityScores same_scores(const std::vector<double>& s) { return scores(s, s, s); }

std::vector<double> random_similarities(Rng& rng, std::size_t n) {
    std::vector<double> s(n);
    for (auto& x : s) x = rng.uniform(-1.0, 1.0);
    return s;
}

ClusterProbs probs_of(std::vector<std::vector<double>> rows) {
    ClusterProbs out;
    for (auto& r : rows) {
        if (r.empty()) {
            out.emplace_back();
        } else {
            out.emplace_back(Tensor::vector(std::move(r)));
        }
    }
    return out;
}

} // namespace

TEST(Can, Examples) {
    EXPECT_NEAR(can_loss(same_scores({1, 1, 1})).total.item(), 0.0, 1e-15);
    EXPECT_NEAR(can_loss(same_scores({0, 0})).total.item(), 3.0, 1e-15);
    const auto l = can_loss(scores({0.5, 0.7}, {1.0}, {1.0}));
    EXPECT_NEAR(l.terms[0].item(), 0.4, 1e-15);
    EXPECT_NEAR(l.total.item(), 0.4, 1e-15);
    EXPECT_THROW(can_loss(scores({}, {1.0}, {1.0})), ContractError);
}

TEST(AdaptiveWeights, Examples) {
    const Tensor even = adaptive_weights(Tensor::vector({0.3, 0.3, 0.3, 0.3}), 10.0);
    for (double x : even.values()) EXPECT_NEAR(x, 0.25, 1e-15);
    const Tensor flat = adaptive_weights(Tensor::vector({0.9, -0.3, 0.1}), 0.0);
    for (double x : flat.values()) EXPECT_NEAR(x, 1.0 / 3.0, 1e-15);
    const auto w = adaptive_weights(Tensor::vector({0.0, std::log(2.0)}), 1.0);
    EXPECT_NEAR(w[0], 1.0 / 3.0, 1e-15);
    EXPECT_NEAR(w[1], 2.0 / 3.0, 1e-15);
    EXPECT_THROW(adaptive_weights(Tensor::vector({0.1}), -1.0), ConfigError);
}

TEST(AdaptiveWeights, ShiftInvariant) {
    Rng rng(2);
    for (int t = 0; t < 200; ++t) {
        auto s = random_similarities(rng, 1 + rng.index(10));
        auto shifted = s;
        const double c = rng.uniform(-3.0, 3.0);
        for (auto& x : shifted) x += c;
        const auto a = adaptive_weights(Tensor::vector(s), 10.0), b = adaptive_weights(Tensor::vector(shifted), 10.0);
        for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
    }
}

TEST(Scan, Examples) {
    const auto equal = scan_loss(same_scores({0.4, 0.4, 0.4}), 10.0);
    EXPECT_NEAR(equal.terms[1].item(), 0.6, 1e-15);
    EXPECT_NEAR(equal.total.item(), can_loss(same_scores({0.4, 0.4, 0.4})).total.item(), 1e-14);
    EXPECT_NEAR(scan_loss(same_scores({0.2, 0.9}), 200.0).terms[0].item(), 0.1, 1e-12);
    EXPECT_NEAR(scan_loss(same_scores({0.0, std::log(2.0)}), 1.0).terms[2].item(), 1.0 - 2.0 / 3.0 * std::log(2.0),
                1e-15);
}

TEST(Scan, MatchesOracleAndIsDominatedByCan) {
    Rng rng(3);
    for (int t = 0; t < 1000; ++t) {
        const auto s = random_similarities(rng, 1 + rng.index(16));
        const double beta = rng.uniform(0.0, 30.0);
        const double scan = scan_loss(same_scores(s), beta).terms[0].item();
        const double can = can_loss(same_scores(s)).terms[0].item();
        EXPECT_NEAR(scan, oracle::oracle_scan_term(s, beta), 1e-12);
        EXPECT_NEAR(can, oracle::oracle_can_term(s), 1e-12);
        EXPECT_LE(scan, can + 1e-12);
        EXPECT_GE(scan, 1.0 - *std::max_element(s.begin(), s.end()) - 1e-12);
        EXPECT_GE(can, 0.0);
        EXPECT_LE(can, 2.0);
    }
}

TEST(ClusterAvgProbs, Examples) {
    const Tensor logits = Tensor::matrix(4, 2, {2.0, -2.0, -2.0, 2.0, 0.3, 1.1, 0.0, 0.0});
    const auto p = cluster_avg_probs(logits, {0, 0, 1, 2}, 4);
    EXPECT_NEAR((*p[0])[0], 0.5, 1e-15);
    EXPECT_NEAR((*p[0])[1], 0.5, 1e-15);
    const auto single = oracle::oracle_softmax_row({0.3, 1.1});
    EXPECT_NEAR((*p[1])[0], single[0], 1e-15);
    EXPECT_FALSE(p[3].has_value());
    EXPECT_THROW(cluster_avg_probs(logits, {0, 1}, 2), ContractError);
    EXPECT_THROW(cluster_avg_probs(logits, {0, 1, 2, 5}, 4), ContractError);
}

TEST(ClusterAvgProbs, MatchesNaiveOracle) {
    Rng rng(4);
    std::vector<double> v(6);
    for (auto& x : v) x = rng.normal(0.0, 2.0);
    const auto p = cluster_avg_probs(Tensor::matrix(3, 2, v), {0, 0, 0}, 1);
    std::vector<double> expect(2, 0.0);
    for (int i = 0; i < 3; ++i) {
        const auto row = oracle::oracle_softmax_row({v[2 * i], v[2 * i + 1]});
        for (int c = 0; c < 2; ++c) expect[c] += row[c] / 3.0;
    }
    EXPECT_NEAR((*p[0])[0], expect[0], 1e-15);
    EXPECT_NEAR((*p[0])[1], expect[1], 1e-15);
}

TEST(Div, Examples) {
    const auto one_hot = probs_of({{1.0, 0.0}, {0.0, 1.0}});
    EXPECT_NEAR(div_loss({one_hot, one_hot, one_hot}).total.item(), 0.0, 1e-10);
    const auto uniform = probs_of({{0.5, 0.5}, {0.5, 0.5}});
    const auto u = div_loss({uniform, uniform, uniform});
    EXPECT_NEAR(u.terms[0].item(), -std::log(2.0), 1e-15);
    EXPECT_NEAR(u.total.item(), -3.0 * std::log(2.0), 1e-14);
    const auto mixed = probs_of({{0.5, 0.5}, {1.0, 0.0}});
    EXPECT_NEAR(div_loss({mixed, one_hot, one_hot}).terms[0].item(), -0.5 * std::log(2.0), 1e-15);
    // An empty cluster contributes nothing but still counts in 1/k.
    const auto sparse = probs_of({{0.5, 0.5}, {}});
    EXPECT_NEAR(div_loss({sparse, sparse, sparse}).terms[0].item(), -0.5 * std::log(2.0), 1e-15);
}

TEST(Div, UniformIsTheArgmin) {
    double best = 1e9, best_p = -1.0;
    for (int i = 0; i <= 1000; ++i) {
        const double p = i / 1000.0;
        const auto c = probs_of({{p, 1.0 - p}});
        const double v = div_loss({c, c, c}).terms[0].item();
        EXPECT_LE(v, 1e-12);
        EXPECT_GE(v, -std::log(2.0) - 1e-12);
        if (v < best) best = v, best_p = p;
    }
    EXPECT_DOUBLE_EQ(best_p, 0.5);
}

TEST(Div, MatchesOracleOnRandomLogits) {
    Rng rng(5);
    for (int t = 0; t < 100; ++t) {
        const std::size_t n = 2 + rng.index(10), k = 1 + rng.index(4);
        std::vector<double> logits(n * 2);
        for (auto& x : logits) x = rng.normal(0.0, 3.0);
        std::vector<std::size_t> assignment(n);
        for (auto& a : assignment) a = rng.index(k);
        const auto cp = cluster_avg_probs(Tensor::matrix(n, 2, logits), assignment, k);
        EXPECT_NEAR(div_loss({cp, cp, cp}).terms[0].item(), oracle::oracle_div_term(logits, 2, assignment, k), 1e-12);
    }
}

TEST(Em, Examples) {
    EXPECT_NEAR(em_loss(Tensor::matrix(2, 2, {20, -20, -20, 20})).item(), 0.0, 1e-15);
    EXPECT_NEAR(em_loss(Tensor::matrix(3, 2, {0, 0, 0, 0, 0, 0})).item(), std::log(2.0), 1e-15);
    EXPECT_NEAR(em_loss(Tensor::matrix(1, 2, {std::log(3.0), 0.0})).item(),
                -(0.75 * std::log(0.75) + 0.25 * std::log(0.25)), 1e-15);
}

TEST(Em, BoundedAndMatchesOracle) {
    Rng rng(6);
    for (int t = 0; t < 300; ++t) {
        const std::size_t n = 1 + rng.index(8);
        std::vector<double> logits(n * 2);
        for (auto& x : logits) x = rng.normal(0.0, 5.0);
        const double em = em_loss(Tensor::matrix(n, 2, logits)).item();
        EXPECT_NEAR(em, oracle::oracle_em(logits, 2), 1e-12);
        EXPECT_GE(em, -1e-15);
        EXPECT_LE(em, std::log(2.0) + 1e-15);
    }
}

namespace {

LossInputs fixture(std::uint64_t seed) {
    Rng rng(seed);
    LossInputs in;
    std::vector<double> logits(8 * 2);
    for (auto& x : logits) x = rng.normal(0.0, 2.0);
    in.fused_logits = Tensor::matrix(8, 2, logits, true);
    for (std::size_t m = 0; m < kModalities; ++m) {
        in.similarity[m] = Tensor::vector(random_similarities(rng, 8), true);
        std::vector<double> ml(8 * 2);
        for (auto& x : ml) x = rng.normal();
        std::vector<std::size_t> a(8);
        for (auto& x : a) x = rng.index(3);
        in.cluster_probs[m] = cluster_avg_probs(Tensor::matrix(8, 2, ml, true), a, 3);
    }
    return in;
}

} // namespace

TEST(Total, ZeroWeightsGiveZeroLossAndGradient) {
    const auto in = fixture(1);
    const auto b = total_loss(in, LossWeights{0, 0, 0, 10}, AlignVariant::SCANNER);
    EXPECT_EQ(b.total.item(), 0.0);
    backward(b.total);
    for (double g : in.fused_logits.grad()) EXPECT_EQ(g, 0.0);
    for (const auto& s : in.similarity)
        for (double g : s.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Total, AlignOnlyEqualsScan) {
    const auto in = fixture(2);
    const auto b = total_loss(in, LossWeights{0, 1, 0, 10}, AlignVariant::SCAN);
    EXPECT_NEAR(b.total.item(), scan_loss(in.similarity, 10).total.item(), 1e-15);
    EXPECT_FALSE(b.div.has_value());
}

TEST(Total, SumOfIndependentTerms) {
    const auto in = fixture(3);
    const auto b = total_loss(in, LossWeights{1, 1, 1, 10}, AlignVariant::SCANNER);
    const double expect = em_loss(in.fused_logits).item() + scan_loss(in.similarity, 10).total.item() +
                          div_loss(in.cluster_probs).total.item();
    EXPECT_NEAR(b.total.item(), expect, 1e-14);
    const auto c = total_loss(in, LossWeights{0.5, 2, 7, 10}, AlignVariant::CAN);
    EXPECT_NEAR(c.total.item(), 0.5 * em_loss(in.fused_logits).item() + 2 * can_loss(in.similarity).total.item(),
                1e-14);
}

TEST(Total, RejectsNegativeWeights) {
    EXPECT_THROW(total_loss(fixture(4), LossWeights{1, -1, 1, 10}, AlignVariant::SCAN), ConfigError);
}

TEST(Total, VariantNamesRoundTrip) {
    for (auto v : {AlignVariant::CAN, AlignVariant::SCAN, AlignVariant::SCANNER})
        EXPECT_EQ(parse_align_variant(to_string(v)), v);
    EXPECT_THROW(parse_align_variant("SCANNNER"), ConfigError);
}
