#include <cmath>
#include <type_traits>

#include <gtest/gtest.h>

#include "ttadrift/testing/suites.hpp"
#include "ttadrift/ttaloop.hpp"

using namespace ttadrift;

namespace {

ModalityBatch random_batch(std::uint64_t seed, std::size_t rows, std::size_t d_in, double shift = 0.0) {
    Rng rng(seed);
    ModalityBatch b;
    for (auto& x : b.inputs) {
        std::vector<double> v(rows * d_in);
        for (auto& e : v) e = rng.normal() + shift;
        x = Tensor({rows, d_in}, std::move(v));
    }
    return b;
}

SourceModel small_model(std::uint64_t seed = 1) { return SourceModel(ModelConfig{4, 6, 2, 1e-5}, seed); }

AdaptConfig config_for(MethodVariant v, std::size_t k = 2) {
    AdaptConfig cfg;
    cfg.variant = v;
    cfg.k = k;
    cfg.seed = 5;
    return cfg;
}

std::vector<std::vector<double>> values_of(const SourceModel& m) {
    std::vector<std::vector<double>> out;
    for (const auto& p : m.parameters()) out.push_back(p.tensor.values());
    return out;
}

} // namespace

TEST(Adapt, SourceVariantIsPureInference) {
    const auto model = small_model();
    AdaptState state(model.clone(), config_for(MethodVariant::SOURCE));
    const auto batch = random_batch(2, 10, 4);
    const auto r = adapt_batch(state, batch);
    EXPECT_EQ(values_of(state.model()), values_of(model));
    EXPECT_EQ(r.predictions, predict(model, batch));
    EXPECT_FALSE(r.stepped);
}

TEST(Adapt, ZeroWeightsStillApplyDecoupledDecay) {
    const auto model = small_model();
    auto cfg = config_for(MethodVariant::SCANNER);
    cfg.weights = LossWeights{0.0, 0.0, 0.0, 10.0};
    AdaptState state(model.clone(), cfg);
    const auto r = adapt_batch(state, random_batch(3, 12, 4));
    EXPECT_EQ(r.gradient_norm, 0.0);
    EXPECT_TRUE(r.stepped);
    const double decay = 1.0 - cfg.optimizer.lr * cfg.optimizer.weight_decay;
    const auto before = model.parameters(), after = state.model().parameters();
    for (std::size_t i = 0; i < before.size(); ++i) {
        for (std::size_t j = 0; j < before[i].tensor.numel(); ++j) {
            const double expect = before[i].trainable ? before[i].tensor[j] * decay : before[i].tensor[j];
            EXPECT_DOUBLE_EQ(after[i].tensor[j], expect) << before[i].name;
        }
    }
}

TEST(Adapt, GammaZeroCentroidsEqualBatchMeans) {
    auto cfg = config_for(MethodVariant::CAN);
    cfg.gamma = 0.0;
    AdaptState state(small_model(), cfg);
    const auto batch = random_batch(4, 20, 4);
    adapt_batch(state, batch);
    // Assignment and means for the second batch come from the pre-step model.
    const auto fwd = state.model().forward_full(batch);
    std::array<ClusterMeans, kModalities> expect;
    for (std::size_t m = 0; m < kModalities; ++m) {
        const auto a = assign(state.banks()[m], fwd.features[m]);
        expect[m] = batch_means(normalized_rows(fwd.features[m]), a.cluster, state.banks()[m]);
    }
    adapt_batch(state, batch);
    for (std::size_t m = 0; m < kModalities; ++m) {
        for (std::size_t i = 0; i < expect[m].means.size(); ++i)
            EXPECT_NEAR(state.banks()[m].values()[i], expect[m].means[i], 1e-15);
    }
}

TEST(Adapt, FrozenParametersNeverMoveForAnyVariant) {
    const auto model = small_model();
    for (auto v : kAllVariants) {
        auto cfg = config_for(v);
        cfg.st_confidence = 0.51;
        std::vector<ModalityBatch> stream;
        for (std::uint64_t s = 0; s < 4; ++s) stream.push_back(random_batch(s, 16, 4, 0.5));
        const auto run = run_stream(model, stream, cfg);
        SourceModel adapted;
        adapted.from_arrays(run.final_state);
        const auto before = model.parameters(), after = adapted.parameters();
        for (std::size_t i = 0; i < before.size(); ++i) {
            if (!before[i].trainable) {
                EXPECT_EQ(before[i].tensor.values(), after[i].tensor.values()) << to_string(v);
            }
        }
    }
}

TEST(Adapt, TentEqualsScannerWithoutAlignment) {
    auto tent_cfg = config_for(MethodVariant::TENT_EM);
    auto scanner_cfg = config_for(MethodVariant::SCANNER);
    scanner_cfg.weights.align = 0.0;
    scanner_cfg.weights.div = 0.0;
    AdaptState tent(small_model(), tent_cfg), scanner(small_model(), scanner_cfg);
    for (std::uint64_t s = 0; s < 3; ++s) {
        const auto batch = random_batch(10 + s, 16, 4);
        const auto a = adapt_batch(tent, batch);
        const auto b = adapt_batch(scanner, batch);
        EXPECT_EQ(a.predictions, b.predictions);
        EXPECT_NEAR(a.losses.total, b.losses.total, 1e-15);
    }
    const auto ta = values_of(tent.model()), sa = values_of(scanner.model());
    for (std::size_t i = 0; i < ta.size(); ++i)
        for (std::size_t j = 0; j < ta[i].size(); ++j) EXPECT_NEAR(ta[i][j], sa[i][j], 1e-15);
}

TEST(Adapt, TentLowersEntropyOfUniformBatch) {
    // With a zero classifier every prediction is uniform; a bias nudge makes
    // the entropy gradient nonzero, and one step must reduce it.
    auto model = small_model();
    auto& w = model.classifier().weight;
    for (std::size_t i = 0; i < w.numel(); ++i) w.data()[i] = i % 2 ? 0.01 : -0.01;
    AdaptState state(model.clone(), config_for(MethodVariant::TENT_EM));
    const auto batch = random_batch(6, 32, 4);
    const auto r = adapt_batch(state, batch);
    EXPECT_NEAR(r.losses.em, std::log(2.0), 1e-3);
    EXPECT_LT(em_loss(state.model().forward_full(batch).fused_logits).item(), r.losses.em);
}

TEST(Adapt, ConfidentBatchHasSmallTentGradient) {
    auto model = small_model();
    for (auto& x : model.classifier().weight.data()) x = 0.0;
    model.classifier().bias.data()[0] = 30.0;
    AdaptState state(model.clone(), config_for(MethodVariant::TENT_EM));
    const auto r = adapt_batch(state, random_batch(7, 16, 4));
    EXPECT_LT(r.gradient_norm, 1e-10);
}

TEST(Adapt, SelfTrainingWithUnreachableThresholdIsNoOp) {
    const auto model = small_model();
    auto cfg = config_for(MethodVariant::ST);
    cfg.st_confidence = 1.0;
    AdaptState state(model.clone(), cfg);
    const auto r = adapt_batch(state, random_batch(8, 16, 4));
    EXPECT_FALSE(r.stepped);
    EXPECT_EQ(values_of(state.model()), values_of(model));
}

TEST(Adapt, SelfTrainingLossFallsOnConfidentData) {
    auto model = small_model();
    for (std::size_t i = 0; i < model.classifier().weight.numel(); ++i)
        model.classifier().weight.data()[i] = i % 2 ? 3.0 : -3.0;
    auto cfg = config_for(MethodVariant::ST);
    cfg.st_confidence = 0.6;
    cfg.optimizer.lr = 1e-2;
    AdaptState state(model.clone(), cfg);
    const auto batch = random_batch(9, 32, 4);
    std::vector<double> losses;
    for (int i = 0; i < 5; ++i) losses.push_back(adapt_batch(state, batch).losses.total);
    EXPECT_LT(losses.back(), losses.front());
}

TEST(Norm, StatisticsFollowBatches) {
    auto model = small_model();
    const auto batch = random_batch(1, 8, 4, 2.0);
    const auto x = batch.inputs[0];
    norm_update_statistics(model, batch, 0.25);
    norm_update_statistics(model, batch, 0.25);
    double mu = 0.0;
    for (std::size_t i = 0; i < 8; ++i) mu += x.at(i, 0) / 8.0;
    // Two EMA steps from mean 0: mu * (1 - 0.75^2).
    EXPECT_NEAR(model.encoders()[0].input_mean[0], mu * (1 - 0.75 * 0.75), 1e-14);

    auto fixed = small_model();
    for (auto& e : fixed.encoders()) e.input_var.assign(4, 0.0);
    const auto constant = random_batch(1, 1, 4);
    for (auto& e : fixed.encoders()) std::copy(constant.inputs[0].values().begin(), constant.inputs[0].values().end(), e.input_mean.begin());
    ModalityBatch same;
    for (auto& t : same.inputs) t = constant.inputs[0];
    norm_update_statistics(fixed, same, 0.5);
    EXPECT_EQ(fixed.encoders()[0].input_mean, std::vector<double>(constant.inputs[0].values()));
    EXPECT_EQ(fixed.encoders()[0].input_var, std::vector<double>(4, 0.0));
}

TEST(Stream, SourceMatchesBatchwiseInference) {
    const auto model = small_model();
    std::vector<ModalityBatch> stream{random_batch(1, 5, 4), random_batch(2, 7, 4)};
    const auto run = run_stream(model, stream, config_for(MethodVariant::SOURCE));
    std::vector<int> expect;
    for (const auto& b : stream) {
        const auto p = predict(model, b);
        expect.insert(expect.end(), p.begin(), p.end());
    }
    EXPECT_EQ(run.online_predictions, expect);
    EXPECT_EQ(run.final_predictions, expect);
}

TEST(Stream, OnlinePredictionsPrecedeEachUpdate) {
    const auto model = small_model();
    const auto batch = random_batch(3, 16, 4);
    const auto run = run_stream(model, std::vector<ModalityBatch>{batch}, config_for(MethodVariant::SCANNER));
    EXPECT_EQ(run.online_predictions, predict(model, batch));
    EXPECT_EQ(run.batches.size(), 1u);
    EXPECT_TRUE(run.batches[0].stepped);
}

TEST(Stream, DeterministicForFixedSeed) {
    const auto model = small_model();
    std::vector<ModalityBatch> stream;
    for (std::uint64_t s = 0; s < 3; ++s) stream.push_back(random_batch(s, 16, 4));
    const auto cfg = config_for(MethodVariant::SCANNER, 3);
    const auto a = run_stream(model, stream, cfg), b = run_stream(model, stream, cfg);
    EXPECT_EQ(encode_arrays(a.final_state), encode_arrays(b.final_state));
    EXPECT_EQ(a.online_predictions, b.online_predictions);
    EXPECT_THROW(run_stream(model, std::vector<ModalityBatch>{}, cfg), ContractError);
}

TEST(Stream, SingleDiagnosticBankForNonCentroidVariants) {
    const auto model = small_model();
    std::vector<ModalityBatch> stream{random_batch(1, 20, 4)};
    const auto run = run_stream(model, stream, config_for(MethodVariant::TENT_EM, 3));
    for (const auto& bank : run.banks) EXPECT_TRUE(bank.initialized());
    for (const auto& a : run.final_assignment) EXPECT_EQ(a.size(), 20u);
}

TEST(Stream, StateResumesFromArrays) {
    const auto model = small_model();
    const auto cfg = config_for(MethodVariant::SCANNER);
    AdaptState a(model.clone(), cfg);
    adapt_batch(a, random_batch(1, 16, 4));
    AdaptState b(model.clone(), cfg);
    b.from_arrays(a.to_arrays());
    const auto next = random_batch(2, 16, 4);
    const auto ra = adapt_batch(a, next), rb = adapt_batch(b, next);
    EXPECT_EQ(ra.losses.total, rb.losses.total);
    EXPECT_EQ(encode_arrays(a.to_arrays()), encode_arrays(b.to_arrays()));
}

TEST(Config, Validation) {
    auto cfg = config_for(MethodVariant::SCAN);
    cfg.gamma = 1.0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = config_for(MethodVariant::SCAN);
    cfg.k = 0;
    EXPECT_THROW(AdaptState(small_model(), cfg), ConfigError);
    for (auto v : kAllVariants) EXPECT_EQ(parse_variant(to_string(v)), v);
    EXPECT_THROW(parse_variant("BOGUS"), ConfigError);
}

// Adaptation entry points accept only unlabeled batches.
static_assert(std::is_invocable_r_v<BatchResult, decltype(&adapt_batch), AdaptState&, const ModalityBatch&>);
static_assert(!std::is_invocable_v<decltype(&adapt_batch), AdaptState&, const LabeledData&>);

TEST(GradientOracle, EveryLossOnRandomSmallModels) {
    const auto r = ttadrift::testing::check_gradient_oracle();
    EXPECT_TRUE(r.pass) << r.detail;
}
