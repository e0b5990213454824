#include <cmath>

#include <gtest/gtest.h>

#include "ttadrift/diagnostics.hpp"
#include "ttadrift/metrics.hpp"
#include "ttadrift/testing/oracles.hpp"

using namespace ttadrift;
namespace oracle = ttadrift::testing;

TEST(Accuracy, Examples) {
    const std::vector<int> labels{0, 1, 1, 0};
    EXPECT_EQ(accuracy(labels, labels), 1.0);
    EXPECT_EQ(accuracy(std::vector<int>{1, 0, 0, 1}, labels), 0.0);
    EXPECT_EQ(accuracy(std::vector<int>{0, 1, 0, 0}, labels), 0.75);
    EXPECT_THROW(accuracy(std::vector<int>{0}, labels), ContractError);
}

TEST(MacroF1, Examples) {
    const std::vector<int> labels{0, 1, 1, 0};
    EXPECT_EQ(macro_f1(labels, labels, 2), 1.0);
    EXPECT_NEAR(macro_f1(std::vector<int>{1, 1, 1, 1}, labels, 2), 1.0 / 3.0, 1e-15);
}

TEST(Metrics, MatchConfusionMatrixOracle) {
    Rng rng(1);
    for (int t = 0; t < 1000; ++t) {
        const std::size_t n = 1 + rng.index(50), classes = 2 + rng.index(3);
        std::vector<int> p(n), y(n);
        for (std::size_t i = 0; i < n; ++i) {
            p[i] = static_cast<int>(rng.index(classes));
            y[i] = static_cast<int>(rng.index(classes));
        }
        EXPECT_DOUBLE_EQ(accuracy(p, y), oracle::oracle_accuracy(p, y, classes));
        EXPECT_NEAR(macro_f1(p, y, classes), oracle::oracle_macro_f1(p, y, classes), 1e-15);
    }
}

TEST(ClusterRatio, Examples) {
    const std::vector<std::size_t> one{0, 0, 0, 0};
    const auto perfect = cluster_ratio_diag(0, one, std::vector<int>{1, 1, 1, 1}, std::vector<int>{1, 1, 1, 1}, 2);
    ASSERT_EQ(perfect.size(), 1u);
    EXPECT_EQ(perfect[0].predicted_ratio, 1.0);
    EXPECT_EQ(perfect[0].true_ratio, 1.0);

    const auto collapsed = cluster_ratio_diag(1, one, std::vector<int>{0, 0, 0, 0}, std::vector<int>{1, 0, 1, 0}, 1);
    EXPECT_EQ(collapsed[0].predicted_ratio, 0.0);
    EXPECT_EQ(collapsed[0].true_ratio, 0.5);
    EXPECT_EQ(collapsed[0].modality, 1u);

    const auto counted = cluster_ratio_diag(0, one, std::vector<int>{1, 0, 1, 0}, std::vector<int>{1, 1, 1, 0}, 1);
    EXPECT_EQ(counted[0].predicted_ratio, 0.5);
    EXPECT_EQ(counted[0].true_ratio, 0.75);
    EXPECT_EQ(mean_ratio_gap(counted), 0.25);
}

TEST(ClusterRatio, SkipsEmptyClustersAndChecksRange) {
    const auto rows = cluster_ratio_diag(0, std::vector<std::size_t>{2, 2}, std::vector<int>{1, 0},
                                         std::vector<int>{1, 1}, 3);
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_EQ(rows[0].cluster, 2u);
    EXPECT_EQ(rows[0].members, 2u);
    EXPECT_THROW(cluster_ratio_diag(0, std::vector<std::size_t>{3}, std::vector<int>{1}, std::vector<int>{1}, 3),
                 ContractError);
}

TEST(Entropy, RowEntropy) {
    const Tensor logits = Tensor::matrix(2, 2, {0.0, 0.0, 30.0, -30.0});
    EXPECT_NEAR(row_entropy(logits, 0), std::log(2.0), 1e-15);
    EXPECT_NEAR(row_entropy(logits, 1), 0.0, 1e-20);
}

TEST(Entropy, MembersAtCentroidMatchCentroidEntropy) {
    SourceModel model(ModelConfig{4, 3, 2, 1e-5}, 0);
    const std::vector<double> row{0.6, -0.8, 0.0};
    CentroidBank bank(0, 1, 3, 0.9);
    bank.set_centroids(row);
    const Tensor features = Tensor::matrix(3, 3, {0.6, -0.8, 0.0, 0.6, -0.8, 0.0, 0.6, -0.8, 0.0});
    const auto rows = entropy_diag(bank, model, features, {0, 0, 0});
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_NEAR(rows[0].centroid_entropy, rows[0].member_entropy, 1e-14);
}

TEST(Entropy, SaturatedClassifierGivesZeroEntropies) {
    SourceModel model(ModelConfig{4, 2, 2, 1e-5}, 0);
    auto& w = model.classifier().weight;
    std::fill(w.data().begin(), w.data().end(), 0.0);
    model.classifier().bias.data()[0] = 60.0;
    CentroidBank bank(0, 2, 2, 0.9);
    bank.set_centroids({1.0, 0.0, 0.0, 1.0});
    const auto rows = entropy_diag(bank, model, Tensor::matrix(2, 2, {2.0, 0.1, 0.1, 3.0}), {0, 1});
    for (const auto& r : rows) {
        EXPECT_NEAR(r.centroid_entropy, 0.0, 1e-20);
        EXPECT_NEAR(r.member_entropy, 0.0, 1e-20);
    }
}
