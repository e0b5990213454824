#pragma once

// Experiment configuration and its JSON form. Parsing is strict: every field
// must be present, so a saved config fully determines a run. A missing or
// mistyped field raises a ValidationError that names its path.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "ttadrift/errors.hpp"
#include "ttadrift/model.hpp"
#include "ttadrift/scenario.hpp"
#include "ttadrift/ttaloop.hpp"

namespace ttadrift::harness {

using json = nlohmann::ordered_json;

inline constexpr int kConfigVersion = 1;

struct ExperimentConfig {
    std::string preset = "severe";  // informational once resolved
    Scenario scenario = scenario_preset("severe");
    ModelConfig model{};
    PretrainConfig pretrain{};
    AdaptConfig adapt{};  // variant and seed are set per run
    std::vector<MethodVariant> variants{kAllVariants.begin(), kAllVariants.end()};
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    std::string output_dir = "runs";

    bool operator==(const ExperimentConfig&) const = default;

    void validate() const {
        scenario.validate();
        adapt.validate();
        if (model.d_in != scenario.source.d_in) {
            throw ValidationError("model.d_in (" + std::to_string(model.d_in) + ") does not match scenario d_in (" +
                                  std::to_string(scenario.source.d_in) + ")");
        }
        if (model.classes != 2) throw ValidationError("model.classes must be 2 for the binary benchmark");
        if (variants.empty()) throw ValidationError("variants must not be empty");
        if (seeds.empty()) throw ValidationError("seeds must not be empty");
        if (pretrain.batch_size == 0) throw ValidationError("pretrain.batch_size must be positive");
    }
};

inline ExperimentConfig preset_config(const std::string& name) {
    ExperimentConfig cfg;
    cfg.preset = name;
    cfg.scenario = scenario_preset(name);
    cfg.output_dir = "runs/" + name;
    return cfg;
}

// ---------------------------------------------------------------------------
// Serialization

inline json to_json(const AdamWConfig& c) {
    return {{"lr", c.lr}, {"weight_decay", c.weight_decay}, {"beta1", c.beta1}, {"beta2", c.beta2}, {"eps", c.eps}};
}

inline json to_json(const CoreSpec& c) {
    return {{"latent_dim", c.latent_dim}, {"hate_prob", c.hate_prob},     {"core_weight", c.core_weight},
            {"separation", c.separation}, {"class_signal", c.class_signal}, {"jitter", c.jitter},
            {"label_noise", c.label_noise}};
}

inline json to_json(const DomainSpec& d) {
    return {{"d_in", d.d_in},
            {"style_noise", d.style_noise},
            {"severity", d.severity},
            {"map_drift", d.map_drift},
            {"offset_drift", d.offset_drift},
            {"noise_growth", d.noise_growth},
            {"class_bias", d.class_bias},
            {"nuisance", d.nuisance},
            {"outlier_fraction", d.outlier_fraction},
            {"outlier_scale", d.outlier_scale},
            {"outlier_sources", d.outlier_sources},
            {"outlier_spread", d.outlier_spread},
            {"outlier_period", d.outlier_period}};
}

inline json to_json(const Scenario& s) {
    return {{"name", s.name},
            {"cores", to_json(s.core)},
            {"source", to_json(s.source)},
            {"target", to_json(s.target)},
            {"train_size", s.train_size},
            {"holdout_size", s.holdout_size},
            {"target_size", s.target_size}};
}

inline json to_json(const ExperimentConfig& c) {
    json variants = json::array();
    for (auto v : c.variants) variants.push_back(std::string(to_string(v)));
    const auto& a = c.adapt;
    return {{"version", kConfigVersion},
            {"preset", c.preset},
            {"scenario", to_json(c.scenario)},
            {"model", {{"d_in", c.model.d_in}, {"d_h", c.model.d_h}, {"classes", c.model.classes},
                       {"norm_eps", c.model.norm_eps}}},
            {"pretrain", {{"epochs", c.pretrain.epochs}, {"batch_size", c.pretrain.batch_size},
                          {"optimizer", to_json(c.pretrain.optimizer)}}},
            {"adapt", {{"k", a.k},
                       {"gamma", a.gamma},
                       {"weights", {{"em", a.weights.em}, {"align", a.weights.align}, {"div", a.weights.div},
                                    {"beta", a.weights.beta}}},
                       {"optimizer", to_json(a.optimizer)},
                       {"batch_size", a.batch_size},
                       {"st_confidence", a.st_confidence},
                       {"norm_momentum", a.norm_momentum},
                       {"kmeans_restarts", a.kmeans_restarts},
                       {"kmeans_max_iterations", a.kmeans_max_iterations}}},
            {"variants", variants},
            {"seeds", c.seeds},
            {"output_dir", c.output_dir}};
}

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

class Fields {
public:
    Fields(const json& node, std::string path) : node_(node), path_(std::move(path)) {
        if (!node_.is_object()) throw ValidationError("field '" + display() + "' must be an object");
    }

    Fields object(const char* key) const { return Fields(at(key), join(key)); }

    double number(const char* key) const {
        const auto& v = at(key);
        if (!v.is_number()) throw ValidationError("field '" + join(key) + "' must be a number");
        return v.get<double>();
    }

    std::size_t count(const char* key) const {
        const auto& v = at(key);
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
            throw ValidationError("field '" + join(key) + "' must be a non-negative integer");
        }
        return v.get<std::size_t>();
    }

    std::string text(const char* key) const {
        const auto& v = at(key);
        if (!v.is_string()) throw ValidationError("field '" + join(key) + "' must be a string");
        return v.get<std::string>();
    }

    std::vector<double> numbers(const char* key) const {
        const auto& v = at(key);
        if (!v.is_array()) throw ValidationError("field '" + join(key) + "' must be an array of numbers");
        std::vector<double> out;
        for (const auto& x : v) {
            if (!x.is_number()) throw ValidationError("field '" + join(key) + "' must be an array of numbers");
            out.push_back(x.get<double>());
        }
        return out;
    }

    const json& at(const char* key) const {
        const auto it = node_.find(key);
        if (it == node_.end()) throw ValidationError("missing field '" + join(key) + "'");
        return *it;
    }

    std::string join(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

private:
    std::string display() const { return path_.empty() ? "<root>" : path_; }

    const json& node_;
    std::string path_;
};

inline AdamWConfig parse_adamw(const Fields& f) {
    AdamWConfig c;
    c.lr = f.number("lr");
    c.weight_decay = f.number("weight_decay");
    c.beta1 = f.number("beta1");
    c.beta2 = f.number("beta2");
    c.eps = f.number("eps");
    return c;
}

inline CoreSpec parse_core(const Fields& f) {
    CoreSpec c;
    c.latent_dim = f.count("latent_dim");
    c.hate_prob = f.numbers("hate_prob");
    c.core_weight = f.numbers("core_weight");
    c.separation = f.number("separation");
    c.class_signal = f.number("class_signal");
    c.jitter = f.number("jitter");
    c.label_noise = f.number("label_noise");
    return c;
}

inline DomainSpec parse_domain(const Fields& f) {
    DomainSpec d;
    d.d_in = f.count("d_in");
    d.style_noise = f.number("style_noise");
    d.severity = f.number("severity");
    d.map_drift = f.number("map_drift");
    d.offset_drift = f.number("offset_drift");
    d.noise_growth = f.number("noise_growth");
    d.class_bias = f.numbers("class_bias");
    d.nuisance = f.number("nuisance");
    d.outlier_fraction = f.number("outlier_fraction");
    d.outlier_scale = f.number("outlier_scale");
    d.outlier_sources = f.count("outlier_sources");
    d.outlier_spread = f.number("outlier_spread");
    d.outlier_period = f.count("outlier_period");
    return d;
}

} // namespace detail

inline ExperimentConfig config_from_json(const json& doc) {
    const detail::Fields root(doc, "");
    if (const auto v = root.count("version"); v != static_cast<std::size_t>(kConfigVersion)) {
        throw CompatibilityError("unsupported config version " + std::to_string(v));
    }
    ExperimentConfig c;
    c.preset = root.text("preset");

    const auto sc = root.object("scenario");
    c.scenario.name = sc.text("name");
    c.scenario.core = detail::parse_core(sc.object("cores"));
    c.scenario.source = detail::parse_domain(sc.object("source"));
    c.scenario.target = detail::parse_domain(sc.object("target"));
    c.scenario.train_size = sc.count("train_size");
    c.scenario.holdout_size = sc.count("holdout_size");
    c.scenario.target_size = sc.count("target_size");

    const auto m = root.object("model");
    c.model.d_in = m.count("d_in");
    c.model.d_h = m.count("d_h");
    c.model.classes = m.count("classes");
    c.model.norm_eps = m.number("norm_eps");

    const auto p = root.object("pretrain");
    c.pretrain.epochs = p.count("epochs");
    c.pretrain.batch_size = p.count("batch_size");
    c.pretrain.optimizer = detail::parse_adamw(p.object("optimizer"));

    const auto a = root.object("adapt");
    c.adapt.k = a.count("k");
    c.adapt.gamma = a.number("gamma");
    const auto w = a.object("weights");
    c.adapt.weights.em = w.number("em");
    c.adapt.weights.align = w.number("align");
    c.adapt.weights.div = w.number("div");
    c.adapt.weights.beta = w.number("beta");
    c.adapt.optimizer = detail::parse_adamw(a.object("optimizer"));
    c.adapt.batch_size = a.count("batch_size");
    c.adapt.st_confidence = a.number("st_confidence");
    c.adapt.norm_momentum = a.number("norm_momentum");
    c.adapt.kmeans_restarts = a.count("kmeans_restarts");
    c.adapt.kmeans_max_iterations = a.count("kmeans_max_iterations");

    const auto& variants = root.at("variants");
    if (!variants.is_array()) throw ValidationError("field 'variants' must be an array of strings");
    c.variants.clear();
    for (const auto& v : variants) {
        if (!v.is_string()) throw ValidationError("field 'variants' must be an array of strings");
        try {
            c.variants.push_back(parse_variant(v.get<std::string>()));
        } catch (const ConfigError& e) {
            throw ValidationError(std::string("field 'variants': ") + e.what());
        }
    }
    const auto& seeds = root.at("seeds");
    if (!seeds.is_array()) throw ValidationError("field 'seeds' must be an array of integers");
    c.seeds.clear();
    for (const auto& s : seeds) {
        if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<std::int64_t>() >= 0)) {
            throw ValidationError("field 'seeds' must be an array of non-negative integers");
        }
        c.seeds.push_back(s.get<std::uint64_t>());
    }
    c.output_dir = root.text("output_dir");
    try {
        c.validate();
    } catch (const ConfigError& e) {
        throw ValidationError(e.what());
    }
    return c;
}

inline std::string serialize_config(const ExperimentConfig& c) { return to_json(c).dump(2) + "\n"; }

inline ExperimentConfig parse_config(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("config is not valid JSON: ") + e.what());
    }
    return config_from_json(doc);
}

} // namespace ttadrift::harness
