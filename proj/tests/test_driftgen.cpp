#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "ttadrift/driftgen.hpp"
#include "ttadrift/scenario.hpp"

using namespace ttadrift;

namespace {

DomainSpec target_of(const DomainSpec& source, double severity) {
    DomainSpec t = source;
    t.severity = severity;
    return t;
}

double positive_fraction(const SyntheticDataset& ds) {
    double pos = 0.0;
    for (int y : ds.labels) pos += y;
    return pos / static_cast<double>(ds.size());
}

} // namespace

TEST(Generate, SeverityZeroReproducesSource) {
    const auto sc = scenario_preset("severe");
    DomainSpec target = sc.target;
    target.severity = 0.0;
    EXPECT_EQ(generate_domain(sc.core, sc.source, 300, 5), generate_domain(sc.core, target, 300, 5));
}

TEST(Generate, DeterministicPerSeed) {
    const auto sc = scenario_preset("severe");
    EXPECT_EQ(generate_domain(sc.core, sc.target, 200, 8), generate_domain(sc.core, sc.target, 200, 8));
    EXPECT_NE(generate_domain(sc.core, sc.target, 200, 8), generate_domain(sc.core, sc.target, 200, 9));
}

TEST(Generate, DeterministicLabelsWithoutNoise) {
    CoreSpec core;
    core.hate_prob = {1.0, 0.0, 1.0, 0.0};
    const auto ds = generate_domain(core, DomainSpec{}, 500, 2);
    for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_EQ(ds.labels[i], ds.cores[i] % 2 == 0 ? 1 : 0);
}

TEST(Generate, PositiveRatioMatchesMixture) {
    CoreSpec core;
    core.hate_prob = {0.9, 0.1, 0.6, 0.3};
    core.core_weight = {1.0, 2.0, 1.0, 4.0};
    core.label_noise = 0.1;
    const auto ds = generate_domain(core, DomainSpec{}, 100000, 3);
    EXPECT_NEAR(positive_fraction(ds), core.positive_ratio(), 0.01);
}

// Labels come from the core and label streams only, so any manifestation
// change leaves them untouched.
TEST(Generate, LabelsIndependentOfManifestation) {
    const auto sc = scenario_preset("severe");
    const auto base = generate_domain(sc.core, sc.source, 1000, 4);
    DomainSpec other = sc.target;
    other.nuisance = 2.0;
    other.map_seed = 99;
    other.outlier_fraction = 0.3;
    const auto drifted = generate_domain(sc.core, other, 1000, 4);
    EXPECT_EQ(base.labels, drifted.labels);
    EXPECT_EQ(base.cores, drifted.cores);
    EXPECT_NE(base.features, drifted.features);
}

TEST(Generate, DriftGrowsWithSeverity) {
    const auto sc = scenario_preset("mild");
    const auto src = generate_domain(sc.core, sc.source, 400, 6);
    double prev = 0.0;
    for (double s : {0.25, 0.5, 1.0, 2.0}) {
        const auto tgt = generate_domain(sc.core, target_of(sc.source, s), 400, 6);
        double mean_shift = 0.0;
        for (std::size_t r = 0; r < sc.source.d_in; ++r) {
            double a = 0.0, b = 0.0;
            for (std::size_t i = 0; i < 400; ++i) {
                a += src.features[0][i * sc.source.d_in + r];
                b += tgt.features[0][i * sc.source.d_in + r];
            }
            mean_shift += std::abs(a - b) / 400.0;
        }
        EXPECT_GT(mean_shift, prev);
        prev = mean_shift;
    }
}

TEST(Generate, OutliersOnlyInSecondHalfOfPeriod) {
    CoreSpec core;
    DomainSpec dom;
    dom.severity = 1.0;
    dom.outlier_fraction = 0.4;
    dom.outlier_scale = 1000.0;
    dom.outlier_period = 64;
    const auto ds = generate_domain(core, dom, 640, 2);
    std::size_t early = 0, late = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const bool far = std::abs(ds.features[0][i * dom.d_in]) > 100.0;
        ((i % 64) < 32 ? early : late) += far;
    }
    EXPECT_EQ(early, 0u);
    EXPECT_GT(late, 100u);
}

TEST(Generate, ValidatesKnobs) {
    CoreSpec core;
    DomainSpec dom;
    dom.class_bias = {1.0, 2.0};
    EXPECT_THROW(generate_domain(core, dom, 10, 0), ConfigError);
    dom.class_bias.clear();
    dom.nuisance = -1.0;
    EXPECT_THROW(generate_domain(core, dom, 10, 0), ConfigError);
    dom.nuisance = 0.0;
    dom.outlier_fraction = 1.0;
    EXPECT_THROW(generate_domain(core, dom, 10, 0), ConfigError);
    dom.outlier_fraction = 0.0;
    EXPECT_THROW(generate_domain(core, dom, 0, 0), ContractError);
    core.hate_prob = {1.5};
    EXPECT_THROW(generate_domain(core, dom, 10, 0), ConfigError);
}

TEST(Scenario, PresetsValidateAndDiffer) {
    for (const auto& name : preset_names()) {
        const auto sc = scenario_preset(name);
        EXPECT_NO_THROW(sc.validate()) << name;
        EXPECT_EQ(sc.source.severity, 0.0);
    }
    EXPECT_LT(scenario_preset("mild").target.severity, scenario_preset("severe").target.severity);
    EXPECT_GT(scenario_preset("severe").target.outlier_fraction, 0.0);
    EXPECT_THROW(scenario_preset("extreme"), ConfigError);
}

TEST(Scenario, SeedPlanSeparatesStreams) {
    const auto a = SeedPlan::from(3), b = SeedPlan::from(4);
    EXPECT_NE(a.train, a.target);
    EXPECT_NE(a.model, b.model);
    const auto sc = scenario_preset("mild");
    const auto data = generate_scenario(sc, a);
    EXPECT_EQ(data.train.size(), sc.train_size);
    EXPECT_EQ(data.holdout.size(), sc.holdout_size);
    EXPECT_EQ(data.target.size(), sc.target_size);
    EXPECT_EQ(generate_scenario(sc, a).target, data.target);
}

TEST(DatasetFile, BinaryRoundTripIsBitExact) {
    const auto sc = scenario_preset("severe");
    const auto ds = generate_domain(sc.core, sc.target, 150, 1);
    const auto path = (std::filesystem::temp_directory_path() / "ttadrift_ds_test.ttds").string();
    save_dataset(path, ds);
    EXPECT_EQ(load_dataset(path), ds);
    std::filesystem::remove(path);
    EXPECT_THROW(decode_dataset("not a dataset"), Error);
    auto bytes = encode_dataset(ds);
    bytes.push_back('x');
    EXPECT_THROW(decode_dataset(bytes), IoError);
}

TEST(DatasetFile, CsvHasHeaderAndOneRowPerSample) {
    const auto sc = scenario_preset("mild");
    const auto ds = generate_domain(sc.core, sc.source, 7, 1);
    const auto csv = dataset_csv(ds);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 8);
    EXPECT_TRUE(csv.starts_with("sample,label,core,v0,"));
}
