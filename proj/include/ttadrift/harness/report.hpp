#pragma once

// Report emission. Everything written here is a pure function of the
// ExperimentResult, so identical configs give byte-identical files.
//
//   report.json                 config, code version, source summary, every
//                               run with its traces, aggregate mean and std
//   metrics.csv                 one row per run plus one aggregate row per variant
//   ablation.csv                component table (only when CAN/SCAN/SCANNER ran)
//   diagnostics/<v>_seed<s>.csv per-step losses, norms, entropy, cluster ratios

#include <charconv>
#include <cmath>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ttadrift/checkpoint.hpp"
#include "ttadrift/harness/runner.hpp"
#include "ttadrift/version.hpp"

namespace ttadrift::harness {

// Shortest round-trip decimal; "nan" and "inf" spelled out for CSV.
inline std::string fmt(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, r.ptr);
}

struct Summary {
    double mean = 0.0;
    double std = 0.0;  // sample std (n - 1); 0 for a single value
    std::size_t n = 0;
};

inline Summary summarize(const std::vector<double>& xs) {
    Summary s;
    s.n = xs.size();
    if (xs.empty()) return s;
    for (double x : xs) s.mean += x;
    s.mean /= static_cast<double>(s.n);
    if (s.n > 1) {
        double ss = 0.0;
        for (double x : xs) ss += (x - s.mean) * (x - s.mean);
        s.std = std::sqrt(ss / static_cast<double>(s.n - 1));
    }
    return s;
}

inline std::string fmt(const Summary& s) { return fmt(s.mean) + "±" + fmt(s.std); }

// Per-run scalar columns, shared by metrics.csv and the aggregates.
inline const std::vector<std::string>& metric_names() {
    static const std::vector<std::string> names{"online_accuracy", "online_macro_f1",   "final_accuracy",
                                                "final_macro_f1",  "mean_ratio_gap",    "max_gradient_norm",
                                                "max_align_gradient_norm"};
    return names;
}

inline std::vector<double> metric_values(const RunRecord& r) {
    return {r.metrics.online_accuracy, r.metrics.online_macro_f1, r.metrics.final_accuracy, r.metrics.final_macro_f1,
            r.metrics.mean_ratio_gap,  r.max_gradient_norm,      r.max_align_gradient_norm};
}

struct VariantAggregate {
    MethodVariant variant = MethodVariant::SOURCE;
    std::vector<Summary> metrics;  // aligned with metric_names()
};

inline std::vector<VariantAggregate> aggregate(const ExperimentResult& res) {
    std::vector<VariantAggregate> out;
    for (auto v : res.config.variants) {
        std::vector<std::vector<double>> cols(metric_names().size());
        for (const auto& r : res.runs) {
            if (r.variant != v) continue;
            const auto vals = metric_values(r);
            for (std::size_t i = 0; i < vals.size(); ++i) cols[i].push_back(vals[i]);
        }
        VariantAggregate a{v, {}};
        for (const auto& c : cols) a.metrics.push_back(summarize(c));
        out.push_back(std::move(a));
    }
    return out;
}

inline const VariantAggregate* find_aggregate(const std::vector<VariantAggregate>& aggs, MethodVariant v) {
    for (const auto& a : aggs)
        if (a.variant == v) return &a;
    return nullptr;
}

// ---------------------------------------------------------------------------
// report.json

inline json run_json(const RunRecord& r) {
    json steps = json::object();
    std::vector<double> em, align, div, total, gnorm, anorm, ent;
    std::vector<int> stepped, diverged;
    for (const auto& s : r.steps) {
        em.push_back(s.losses.em);
        align.push_back(s.losses.align);
        div.push_back(s.losses.div);
        total.push_back(s.losses.total);
        gnorm.push_back(s.gradient_norm);
        anorm.push_back(s.align_gradient_norm);
        ent.push_back(s.mean_entropy);
        stepped.push_back(s.stepped);
        diverged.push_back(s.diverged);
    }
    json ratios = json::array();
    for (const auto& c : r.metrics.cluster_ratios) {
        ratios.push_back({{"modality", c.modality}, {"cluster", c.cluster}, {"members", c.members},
                          {"predicted_ratio", c.predicted_ratio}, {"true_ratio", c.true_ratio}});
    }
    json entropy = json::array();
    for (const auto& e : r.entropy) {
        entropy.push_back({{"modality", e.modality}, {"cluster", e.cluster}, {"members", e.members},
                           {"centroid_entropy", e.centroid_entropy}, {"member_entropy", e.member_entropy}});
    }
    return {{"variant", std::string(to_string(r.variant))},
            {"seed", r.seed},
            {"metrics", {{"online_accuracy", r.metrics.online_accuracy},
                         {"online_macro_f1", r.metrics.online_macro_f1},
                         {"final_accuracy", r.metrics.final_accuracy},
                         {"final_macro_f1", r.metrics.final_macro_f1},
                         {"mean_ratio_gap", r.metrics.mean_ratio_gap}}},
            {"max_gradient_norm", r.max_gradient_norm},
            {"max_align_gradient_norm", r.max_align_gradient_norm},
            {"diverged_steps", r.diverged_steps},
            {"traces_finite", r.traces_finite},
            {"traces", {{"loss_em", em},
                        {"loss_align", align},
                        {"loss_div", div},
                        {"loss_total", total},
                        {"gradient_norm", gnorm},
                        {"align_gradient_norm", anorm},
                        {"mean_entropy", ent},
                        {"stepped", stepped},
                        {"diverged", diverged}}},
            {"cluster_ratios", ratios},
            {"initial_centroid_entropy", entropy},
            {"online_predictions", r.online_predictions},
            {"final_predictions", r.final_predictions}};
}

inline json report_json(const ExperimentResult& res) {
    json sources = json::array();
    for (const auto& s : res.sources) {
        sources.push_back({{"seed", s.seed},
                           {"holdout_accuracy", s.holdout_accuracy},
                           {"final_loss", s.final_loss},
                           {"from_checkpoint", s.from_checkpoint}});
    }
    json runs = json::array();
    for (const auto& r : res.runs) runs.push_back(run_json(r));
    json agg = json::array();
    for (const auto& a : aggregate(res)) {
        json m = json::object();
        for (std::size_t i = 0; i < a.metrics.size(); ++i) {
            m[metric_names()[i]] = {{"mean", a.metrics[i].mean}, {"std", a.metrics[i].std}, {"n", a.metrics[i].n}};
        }
        agg.push_back({{"variant", std::string(to_string(a.variant))}, {"metrics", m}});
    }
    return {{"code_version", code_version()},
            {"config", to_json(res.config)},
            {"source", sources},
            {"runs", runs},
            {"aggregate", agg}};
}

// ---------------------------------------------------------------------------
// CSV tables

inline std::string metrics_csv(const ExperimentResult& res) {
    std::ostringstream out;
    out << "variant,seed";
    for (const auto& n : metric_names()) out << ',' << n;
    out << ",diverged_steps\n";
    for (const auto& r : res.runs) {
        out << to_string(r.variant) << ',' << r.seed;
        for (double v : metric_values(r)) out << ',' << fmt(v);
        out << ',' << r.diverged_steps << '\n';
    }
    for (const auto& a : aggregate(res)) {
        out << to_string(a.variant) << ",mean±std";
        for (const auto& s : a.metrics) out << ',' << fmt(s);
        out << ",\n";
    }
    return out.str();
}

inline bool wants_ablation(const std::vector<MethodVariant>& variants) {
    for (auto v : variants)
        if (uses_centroids(v)) return true;
    return false;
}

// Component table: which loss terms each variant enables, with its scores.
inline std::string ablation_csv(const ExperimentResult& res) {
    const auto aggs = aggregate(res);
    std::ostringstream out;
    out << "variant,em,can,scan,div,online_accuracy,online_macro_f1,final_accuracy,final_macro_f1\n";
    struct Row {
        MethodVariant v;
        const char* em;
        const char* can;
        const char* scan;
        const char* div;
    };
    static const Row rows[] = {{MethodVariant::SOURCE, "", "", "", ""},
                               {MethodVariant::TENT_EM, "x", "", "", ""},
                               {MethodVariant::CAN, "x", "x", "", ""},
                               {MethodVariant::SCAN, "x", "", "x", ""},
                               {MethodVariant::SCANNER, "x", "", "x", "x"}};
    for (const auto& row : rows) {
        const auto* a = find_aggregate(aggs, row.v);
        if (!a) continue;
        out << to_string(row.v) << ',' << row.em << ',' << row.can << ',' << row.scan << ',' << row.div;
        for (std::size_t i = 0; i < 4; ++i) out << ',' << fmt(a->metrics[i]);
        out << '\n';
    }
    return out.str();
}

inline std::string diagnostics_csv(const RunRecord& r, std::size_t k) {
    std::ostringstream out;
    out << "tau,loss_em,loss_align,loss_div,loss_total,gradient_norm,align_gradient_norm,mean_entropy,stepped,diverged";
    static const char* tags[kModalities] = {"v", "t", "a"};
    for (std::size_t m = 0; m < kModalities; ++m)
        for (std::size_t j = 0; j < k; ++j) out << ",pos_ratio_" << tags[m] << j;
    out << '\n';
    for (const auto& s : r.steps) {
        out << s.tau << ',' << fmt(s.losses.em) << ',' << fmt(s.losses.align) << ',' << fmt(s.losses.div) << ','
            << fmt(s.losses.total) << ',' << fmt(s.gradient_norm) << ',' << fmt(s.align_gradient_norm) << ','
            << fmt(s.mean_entropy) << ',' << s.stepped << ',' << s.diverged;
        for (std::size_t i = 0; i < kModalities * k; ++i) {
            out << ',';
            if (i < s.cluster_positive_ratio.size() && !std::isnan(s.cluster_positive_ratio[i])) {
                out << fmt(s.cluster_positive_ratio[i]);
            }
        }
        out << '\n';
    }
    return out.str();
}

inline std::string diagnostics_name(const RunRecord& r) {
    return std::string(to_string(r.variant)) + "_seed" + std::to_string(r.seed) + ".csv";
}

inline void ensure_directory(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) {
        throw IoError("cannot create directory '" + dir.string() + "'" + (ec ? ": " + ec.message() : ""));
    }
}

inline void write_reports(const ExperimentResult& res, const std::filesystem::path& dir) {
    ensure_directory(dir / "diagnostics");
    write_file((dir / "report.json").string(), report_json(res).dump(2) + "\n");
    write_file((dir / "metrics.csv").string(), metrics_csv(res));
    if (wants_ablation(res.config.variants)) write_file((dir / "ablation.csv").string(), ablation_csv(res));
    for (const auto& r : res.runs) {
        write_file((dir / "diagnostics" / diagnostics_name(r)).string(), diagnostics_csv(r, res.config.adapt.k));
    }
}

} // namespace ttadrift::harness
