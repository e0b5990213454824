#pragma once

// Benchmark scenarios: a core spec, a source and a target manifestation, and
// the sample sizes of each split. A run seed expands into every seed the
// generator and model need, so one integer reproduces a whole replicate.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "ttadrift/driftgen.hpp"
#include "ttadrift/errors.hpp"
#include "ttadrift/rng.hpp"

namespace ttadrift {

struct Scenario {
    std::string name = "custom";
    CoreSpec core;
    DomainSpec source;
    DomainSpec target;
    std::size_t train_size = 2000;
    std::size_t holdout_size = 500;
    std::size_t target_size = 4096;

    bool operator==(const Scenario&) const = default;

    void validate() const {
        core.validate();
        source.validate();
        target.validate();
        if (source.d_in != target.d_in) throw ConfigError("source and target d_in differ");
        if (source.severity != 0.0) throw ConfigError("source domain must have severity 0");
        if (train_size == 0 || holdout_size == 0 || target_size == 0) {
            throw ConfigError("scenario split sizes must be positive");
        }
        for (const auto* dom : {&source, &target}) {
            if (!dom->class_bias.empty() && dom->class_bias.size() != core.cores()) {
                throw ConfigError("class_bias needs one entry per core");
            }
        }
    }
};

inline const std::vector<std::string>& preset_names() {
    static const std::vector<std::string> names{"mild", "severe", "collapse"};
    return names;
}

// Shipped scenarios. All share four cores of mixed labels that sit far apart
// relative to the within-core class offset, so clusters follow cores rather
// than labels.
inline Scenario scenario_preset(std::string_view name) {
    Scenario sc;
    sc.name = std::string(name);
    sc.core.hate_prob = {0.5, 0.5, 0.5, 0.5};
    sc.core.separation = 8.0;
    sc.core.class_signal = 1.5;
    sc.core.jitter = 0.5;
    sc.target.offset_drift = 0.2;
    sc.target.map_drift = 0.5;
    sc.target.class_bias = {1.5, -1.5, 0.75, -0.75};
    if (name == "mild") {
        sc.target.severity = 0.3;
    } else if (name == "severe") {
        // Bursts of near-duplicate junk from one source: clean first half of
        // every 512 samples, then outliers at twice the base rate.
        sc.target.severity = 1.0;
        sc.target.outlier_fraction = 0.1;
        sc.target.outlier_sources = 1;
        sc.target.outlier_spread = 0.5;
        sc.target.outlier_period = 512;
    } else if (name == "collapse") {
        sc.target.severity = 1.0;
    } else {
        throw ConfigError("unknown preset '" + std::string(name) + "' (expected mild, severe or collapse)");
    }
    return sc;
}

// Every seed a replicate needs, derived from one run seed.
struct SeedPlan {
    std::uint64_t core = 0;
    std::uint64_t maps = 0;
    std::uint64_t drift = 0;
    std::uint64_t train = 0;
    std::uint64_t holdout = 0;
    std::uint64_t target = 0;
    std::uint64_t model = 0;
    std::uint64_t pretrain = 0;
    std::uint64_t adapt = 0;

    static SeedPlan from(std::uint64_t run_seed) {
        return {Rng::mix(run_seed, 11), Rng::mix(run_seed, 12), Rng::mix(run_seed, 13),
                Rng::mix(run_seed, 21), Rng::mix(run_seed, 22), Rng::mix(run_seed, 23),
                Rng::mix(run_seed, 31), Rng::mix(run_seed, 32), Rng::mix(run_seed, 41)};
    }
};

struct ScenarioData {
    SyntheticDataset train;
    SyntheticDataset holdout;
    SyntheticDataset target;
};

// Core geometry and manifestation maps are shared by the three splits; only
// the sampling seed differs between them.
inline ScenarioData generate_scenario(const Scenario& sc, const SeedPlan& plan) {
    sc.validate();
    CoreSpec core = sc.core;
    core.seed = plan.core;
    DomainSpec source = sc.source;
    DomainSpec target = sc.target;
    for (auto* dom : {&source, &target}) {
        dom->map_seed = plan.maps;
        dom->drift_seed = plan.drift;
    }
    return {generate_domain(core, source, sc.train_size, plan.train),
            generate_domain(core, source, sc.holdout_size, plan.holdout),
            generate_domain(core, target, sc.target_size, plan.target)};
}

} // namespace ttadrift
