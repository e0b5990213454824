#pragma once

// Synthetic multimodal semantic-drift benchmark.
//
// Each sample belongs to a latent core g (the invariant "what the content is
// about"). Its label is drawn from the core alone: y ~ Bernoulli(p_hate[g]),
// then flipped with the label-noise rate. The latent vector is the core
// embedding plus an optional label-aligned offset and jitter; each modality
// then renders it through a domain-specific linear manifestation map with
// style noise. Drift severity perturbs the maps, shifts their offsets and
// inflates style noise; severity 0 reproduces the source domain exactly.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ttadrift/checkpoint.hpp"
#include "ttadrift/errors.hpp"
#include "ttadrift/model.hpp"
#include "ttadrift/rng.hpp"

namespace ttadrift {

struct CoreSpec {
    std::size_t latent_dim = 8;
    std::vector<double> hate_prob{0.9, 0.1, 0.8, 0.2};  // one entry per core
    std::vector<double> core_weight;                     // empty = uniform
    double separation = 3.0;    // minimum pairwise distance between core embeddings
    double class_signal = 0.0;  // latent offset along a shared direction, signed by label
    double jitter = 0.5;        // within-core latent noise
    double label_noise = 0.0;   // probability of flipping the observed label
    std::uint64_t seed = 1;     // seeds core embeddings and the class direction

    bool operator==(const CoreSpec&) const = default;

    std::size_t cores() const { return hate_prob.size(); }

    // Expected positive-label fraction after label noise.
    double positive_ratio() const {
        double total = 0.0;
        for (std::size_t g = 0; g < cores(); ++g) {
            const double p = hate_prob[g] * (1.0 - label_noise) + (1.0 - hate_prob[g]) * label_noise;
            total += weight(g) * p;
        }
        return total;
    }

    double weight(std::size_t g) const {
        if (core_weight.empty()) return 1.0 / static_cast<double>(cores());
        double sum = 0.0;
        for (double w : core_weight) sum += w;
        return core_weight[g] / sum;
    }

    void validate() const {
        if (hate_prob.empty()) throw ConfigError("core spec needs at least one core");
        for (double p : hate_prob)
            if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("core hate probability outside [0, 1]");
        if (!core_weight.empty() && core_weight.size() != hate_prob.size()) {
            throw ConfigError("core_weight length does not match number of cores");
        }
        if (!(label_noise >= 0.0 && label_noise <= 0.5)) throw ConfigError("label noise outside [0, 0.5]");
        if (latent_dim == 0) throw ConfigError("latent_dim must be positive");
    }
};

struct DomainSpec {
    std::size_t d_in = 16;
    double style_noise = 0.3;     // additive observation noise at severity 0
    double severity = 0.0;        // 0 = source manifestation
    double map_drift = 0.8;       // relative perturbation of each map per unit severity
    double offset_drift = 1.0;    // offset magnitude per unit severity
    double noise_growth = 1.0;    // style-noise multiplier growth per unit severity
    // Per-core shift along the source rendering of the class direction, per
    // unit severity: the core's content starts to look more (or less)
    // hateful without its labels changing. Empty = no shift.
    std::vector<double> class_bias;
    // Per-sample random style factor along a fixed direction that half
    // overlaps the class rendering (45 degrees), per unit severity. It is
    // class-independent, so it only adds confusable variance.
    double nuisance = 0.0;
    double outlier_fraction = 0.0;  // samples replaced by off-manifold noise
    double outlier_scale = 3.0;
    std::size_t outlier_sources = 0;  // 0 = independent noise; otherwise noise around this many fixed points
    double outlier_spread = 0.1;      // spread around an outlier source, relative to outlier_scale
    std::size_t outlier_period = 0;   // 0 = outliers anywhere; otherwise only in the second half of each period
    std::uint64_t map_seed = 7;    // seeds the source maps
    std::uint64_t drift_seed = 11;  // seeds the drift direction

    bool operator==(const DomainSpec&) const = default;

    void validate() const {
        if (d_in == 0) throw ConfigError("d_in must be positive");
        if (!(severity >= 0.0)) throw ConfigError("severity must be non-negative");
        if (!(outlier_fraction >= 0.0 && outlier_fraction < 1.0)) throw ConfigError("outlier fraction outside [0, 1)");
        if (!(style_noise >= 0.0)) throw ConfigError("style noise must be non-negative");
        if (!(outlier_scale >= 0.0 && outlier_spread >= 0.0)) throw ConfigError("outlier scale and spread must be non-negative");
        if (!(nuisance >= 0.0)) throw ConfigError("nuisance must be non-negative");
    }
};

struct SyntheticDataset {
    std::size_t d_in = 0;
    std::array<std::vector<double>, kModalities> features;  // [n x d_in] each
    std::vector<int> labels;
    std::vector<int> cores;  // latent core index, diagnostics only

    std::size_t size() const { return labels.size(); }

    ModalityBatch batch() const {
        ModalityBatch out;
        for (std::size_t m = 0; m < kModalities; ++m) out.inputs[m] = Tensor({size(), d_in}, features[m]);
        return out;
    }

    // Rows [begin, end) as an unlabeled batch.
    ModalityBatch batch(std::size_t begin, std::size_t end) const {
        ModalityBatch out;
        for (std::size_t m = 0; m < kModalities; ++m) {
            out.inputs[m] = Tensor({end - begin, d_in},
                                   std::vector<double>(features[m].begin() + begin * d_in,
                                                       features[m].begin() + end * d_in));
        }
        return out;
    }

    LabeledData labeled() const { return {batch(), labels}; }

    SyntheticDataset subset(std::size_t begin, std::size_t end) const {
        SyntheticDataset out;
        out.d_in = d_in;
        for (std::size_t m = 0; m < kModalities; ++m) {
            out.features[m].assign(features[m].begin() + begin * d_in, features[m].begin() + end * d_in);
        }
        out.labels.assign(labels.begin() + begin, labels.begin() + end);
        out.cores.assign(cores.begin() + begin, cores.begin() + end);
        return out;
    }

    bool operator==(const SyntheticDataset&) const = default;
};

namespace detail {

struct CoreGeometry {
    std::vector<std::vector<double>> embeddings;
    std::vector<double> class_direction;
};

inline CoreGeometry core_geometry(const CoreSpec& spec) {
    Rng rng(Rng::mix(spec.seed, 0xC0DE));
    CoreGeometry geo;
    const std::size_t dz = spec.latent_dim;
    // Scale so typical pairwise distances exceed the margin, then reject
    // draws that violate it.
    const double radius = spec.separation;
    for (std::size_t g = 0; g < spec.cores(); ++g) {
        for (int attempt = 0;; ++attempt) {
            if (attempt > 10000) throw ConfigError("cannot place cores with the requested separation");
            std::vector<double> e(dz);
            for (auto& x : e) x = rng.normal() * radius / std::sqrt(static_cast<double>(dz)) * 1.2;
            bool ok = true;
            for (const auto& other : geo.embeddings) {
                double d2 = 0.0;
                for (std::size_t j = 0; j < dz; ++j) d2 += (e[j] - other[j]) * (e[j] - other[j]);
                if (std::sqrt(d2) < spec.separation) {
                    ok = false;
                    break;
                }
            }
            if (ok) {
                geo.embeddings.push_back(std::move(e));
                break;
            }
        }
    }
    geo.class_direction.resize(dz);
    double norm = 0.0;
    for (auto& x : geo.class_direction) {
        x = rng.normal();
        norm += x * x;
    }
    for (auto& x : geo.class_direction) x /= std::sqrt(norm);
    return geo;
}

struct Manifestation {
    std::vector<double> map;       // [d_in x d_z]
    std::vector<double> offset;    // [d_in]
    std::vector<double> class_axis;  // [d_in] source rendering of the class direction, times severity
    std::vector<double> nuisance_axis;  // [d_in] empty when there is no nuisance factor
    double noise = 0.0;
};

inline std::array<Manifestation, kModalities> manifestations(const DomainSpec& dom, std::size_t dz,
                                                              const std::vector<double>& class_direction) {
    std::array<Manifestation, kModalities> out;
    Rng base(Rng::mix(dom.map_seed, 0xBA5E));
    Rng drift(Rng::mix(dom.drift_seed, 0xD21F));
    const double scale = 1.0 / std::sqrt(static_cast<double>(dz));
    for (std::size_t m = 0; m < kModalities; ++m) {
        auto& mf = out[m];
        mf.map.resize(dom.d_in * dz);
        mf.offset.assign(dom.d_in, 0.0);
        for (auto& x : mf.map) x = base.normal() * scale;
        // Drift draws are always consumed so severity only rescales them.
        std::vector<double> delta(dom.d_in * dz);
        for (auto& x : delta) x = drift.normal() * scale;
        std::vector<double> shift(dom.d_in);
        for (auto& x : shift) x = drift.normal();
        const double s = dom.severity;
        if (s > 0.0) {
            mf.class_axis.assign(dom.d_in, 0.0);
            for (std::size_t r = 0; r < dom.d_in; ++r) {
                for (std::size_t j = 0; j < dz; ++j) mf.class_axis[r] += s * mf.map[r * dz + j] * class_direction[j];
                mf.offset[r] = s * dom.offset_drift * shift[r];
            }
            if (dom.nuisance > 0.0) {
                std::vector<double> r(dom.d_in);
                for (auto& x : r) x = drift.normal();
                const double cn = norm2(mf.class_axis), rn = norm2(r);
                mf.nuisance_axis.resize(dom.d_in);
                for (std::size_t t = 0; t < dom.d_in; ++t) mf.nuisance_axis[t] = mf.class_axis[t] / cn + r[t] / rn;
                const double vn = norm2(mf.nuisance_axis);
                for (auto& x : mf.nuisance_axis) x *= s * dom.nuisance / vn;
            }
            for (std::size_t i = 0; i < mf.map.size(); ++i) mf.map[i] += s * dom.map_drift * delta[i];
        }
        mf.noise = dom.style_noise * (1.0 + s * dom.noise_growth);
    }
    return out;
}

} // namespace detail

// Draws n samples. Three independent streams keep the label path isolated:
// one for (core, label), one for latent jitter, one for manifestation noise
// and outliers.
inline SyntheticDataset generate_domain(const CoreSpec& core, const DomainSpec& domain, std::size_t n,
                                        std::uint64_t seed) {
    core.validate();
    domain.validate();
    if (!domain.class_bias.empty() && domain.class_bias.size() != core.cores()) {
        throw ConfigError("class_bias needs one entry per core");
    }
    if (n == 0) throw ContractError("generate_domain needs n >= 1");
    const auto geo = detail::core_geometry(core);
    const auto maps = detail::manifestations(domain, core.latent_dim, geo.class_direction);
    std::vector<std::vector<double>> sources(domain.outlier_sources * kModalities);
    {
        Rng rng(Rng::mix(domain.drift_seed, 0x0071));
        for (auto& src : sources) {
            src.resize(domain.d_in);
            for (auto& x : src) x = domain.outlier_scale * rng.normal();
        }
    }
    Rng label_rng(Rng::mix(seed, 1));
    Rng latent_rng(Rng::mix(seed, 2));
    Rng style_rng(Rng::mix(seed, 3));

    SyntheticDataset ds;
    ds.d_in = domain.d_in;
    for (auto& f : ds.features) f.reserve(n * domain.d_in);
    const std::size_t dz = core.latent_dim;
    std::vector<double> z(dz);
    for (std::size_t i = 0; i < n; ++i) {
        double u = label_rng.uniform();
        std::size_t g = 0;
        while (g + 1 < core.cores() && u >= core.weight(g)) {
            u -= core.weight(g);
            ++g;
        }
        const bool clean = label_rng.bernoulli(core.hate_prob[g]);
        const bool flip = label_rng.bernoulli(core.label_noise);
        ds.cores.push_back(static_cast<int>(g));
        ds.labels.push_back((clean != flip) ? 1 : 0);

        const double sign = clean ? 1.0 : -1.0;
        for (std::size_t j = 0; j < dz; ++j) {
            z[j] = geo.embeddings[g][j] + core.class_signal * sign * geo.class_direction[j] +
                   core.jitter * latent_rng.normal();
        }
        const bool in_window = domain.outlier_period == 0 || (i % domain.outlier_period) * 2 >= domain.outlier_period;
        const double rate = domain.outlier_period == 0 ? domain.outlier_fraction
                                                       : std::min(1.0, 2.0 * domain.outlier_fraction);
        // Outliers are part of the drift, so severity 0 never has any.
        const bool outlier = domain.severity > 0.0 && domain.outlier_fraction > 0.0 &&
                             style_rng.bernoulli(in_window ? rate : 0.0);
        const std::size_t source = outlier && !sources.empty() ? style_rng.index(domain.outlier_sources) : 0;
        const double style_factor = maps[0].nuisance_axis.empty() ? 0.0 : style_rng.normal();
        for (std::size_t m = 0; m < kModalities; ++m) {
            const auto& mf = maps[m];
            for (std::size_t r = 0; r < domain.d_in; ++r) {
                double x;
                if (outlier && sources.empty()) {
                    x = domain.outlier_scale * style_rng.normal();
                } else if (outlier) {
                    x = sources[source * kModalities + m][r] +
                        domain.outlier_spread * domain.outlier_scale * style_rng.normal();
                } else {
                    x = mf.offset[r];
                    if (!domain.class_bias.empty() && !mf.class_axis.empty()) x += domain.class_bias[g] * mf.class_axis[r];
                    if (!mf.nuisance_axis.empty()) x += style_factor * mf.nuisance_axis[r];
                    for (std::size_t j = 0; j < dz; ++j) x += mf.map[r * dz + j] * z[j];
                    x += mf.noise * style_rng.normal();
                }
                ds.features[m].push_back(x);
            }
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Dataset files
//
// Binary layout, little-endian:
//   char[8] magic "TTADDSET"
//   u32     version (1)
//   u64     sample count n
//   u32     d_in
//   u32     modality count (3)
//   n records of: f64[d_in] visual, f64[d_in] text, f64[d_in] audio,
//                 i32 label, i32 core

inline constexpr char kDatasetMagic[8] = {'T', 'T', 'A', 'D', 'D', 'S', 'E', 'T'};
inline constexpr std::uint32_t kDatasetVersion = 1;

inline std::string encode_dataset(const SyntheticDataset& ds) {
    std::string out(kDatasetMagic, sizeof(kDatasetMagic));
    detail::put<std::uint32_t>(out, kDatasetVersion);
    detail::put<std::uint64_t>(out, ds.size());
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.d_in));
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(kModalities));
    for (std::size_t i = 0; i < ds.size(); ++i) {
        for (std::size_t m = 0; m < kModalities; ++m)
            for (std::size_t j = 0; j < ds.d_in; ++j) detail::put<double>(out, ds.features[m][i * ds.d_in + j]);
        detail::put<std::int32_t>(out, ds.labels[i]);
        detail::put<std::int32_t>(out, ds.cores[i]);
    }
    return out;
}

inline SyntheticDataset decode_dataset(const std::string& bytes) {
    detail::Reader in(bytes);
    if (in.str(sizeof(kDatasetMagic)) != std::string(kDatasetMagic, sizeof(kDatasetMagic))) {
        throw IoError("not a dataset file (bad magic)");
    }
    if (const auto v = in.get<std::uint32_t>(); v != kDatasetVersion) {
        throw CompatibilityError("unsupported dataset version " + std::to_string(v));
    }
    const auto n = in.get<std::uint64_t>();
    SyntheticDataset ds;
    ds.d_in = in.get<std::uint32_t>();
    if (in.get<std::uint32_t>() != kModalities) throw CompatibilityError("dataset modality count is not 3");
    for (std::uint64_t i = 0; i < n; ++i) {
        for (std::size_t m = 0; m < kModalities; ++m)
            for (std::size_t j = 0; j < ds.d_in; ++j) ds.features[m].push_back(in.get<double>());
        ds.labels.push_back(in.get<std::int32_t>());
        ds.cores.push_back(in.get<std::int32_t>());
    }
    if (!in.done()) throw IoError("trailing bytes after dataset records");
    return ds;
}

inline void save_dataset(const std::string& path, const SyntheticDataset& ds) {
    write_file(path, encode_dataset(ds));
}

inline SyntheticDataset load_dataset(const std::string& path) { return decode_dataset(read_file(path)); }

// Inspection export: sample, label, core, then v0.., t0.., a0.. columns.
inline std::string dataset_csv(const SyntheticDataset& ds) {
    std::ostringstream os;
    os.precision(17);
    os << "sample,label,core";
    for (std::size_t m = 0; m < kModalities; ++m)
        for (std::size_t j = 0; j < ds.d_in; ++j) os << ',' << modality_tag(m) << j;
    os << '\n';
    for (std::size_t i = 0; i < ds.size(); ++i) {
        os << i << ',' << ds.labels[i] << ',' << ds.cores[i];
        for (std::size_t m = 0; m < kModalities; ++m)
            for (std::size_t j = 0; j < ds.d_in; ++j) os << ',' << ds.features[m][i * ds.d_in + j];
        os << '\n';
    }
    return os.str();
}

} // namespace ttadrift
