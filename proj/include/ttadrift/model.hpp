#pragma once

// Multimodal source model: one encoder per modality (input standardization,
// linear layer, layer normalization with affine parameters, GELU), a single
// position-free self-attention fusion layer with mean pooling, and one shared
// linear classifier used for both per-modality and fused logits.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ttadrift/checkpoint.hpp"
#include "ttadrift/errors.hpp"
#include "ttadrift/gradcore.hpp"
#include "ttadrift/optim.hpp"
#include "ttadrift/rng.hpp"

namespace ttadrift {

inline constexpr std::size_t kModalities = 3;

enum class Modality : std::size_t { Visual = 0, Text = 1, Audio = 2 };

inline const char* modality_tag(std::size_t m) {
    static constexpr const char* tags[kModalities] = {"v", "t", "a"};
    return tags[m];
}

// Unlabeled multimodal inputs: one [B x d_in] matrix per modality. There is
// deliberately no label field; adaptation code only ever sees this type.
struct ModalityBatch {
    std::array<Tensor, kModalities> inputs;

    std::size_t size() const { return inputs[0].rows(); }

    void validate() const {
        for (std::size_t m = 0; m < kModalities; ++m) {
            if (inputs[m].rank() != 2) {
                throw ContractError(std::string("modality ") + modality_tag(m) + " input must be a matrix");
            }
            if (inputs[m].rows() != inputs[0].rows()) {
                throw ContractError("mismatched batch sizes across modalities: " +
                                    shape_str(inputs[0].shape()) + " vs " + shape_str(inputs[m].shape()));
            }
        }
    }
};

struct ModelConfig {
    std::size_t d_in = 16;
    std::size_t d_h = 32;
    std::size_t classes = 2;
    double norm_eps = 1e-5;

    bool operator==(const ModelConfig&) const = default;
};

struct ModalityEncoder {
    Modality modality{};
    // Input standardization statistics: buffers, never trained by gradient.
    std::vector<double> input_mean;
    std::vector<double> input_var;
    Tensor weight;   // [d_in x d_h]
    Tensor bias;     // [d_h]
    Tensor ln_gain;  // [d_h]
    Tensor ln_bias;  // [d_h]
};

struct FusionBlock {
    Tensor query;  // [d_h x d_h]
    Tensor key;
    Tensor value;
};

struct Classifier {
    Tensor weight;  // [d_h x classes]
    Tensor bias;    // [classes]
};

struct NamedParameter {
    std::string name;
    Tensor tensor;
    bool trainable;  // adapted at test time
};

struct ForwardOutput {
    std::array<Tensor, kModalities> features;         // [B x d_h]
    std::array<Tensor, kModalities> modality_logits;  // [B x classes]
    Tensor fused_logits;                              // [B x classes]
};

inline constexpr double kInputStdFloor = 1e-5;

class SourceModel {
public:
    SourceModel() = default;

    SourceModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        if (cfg.d_in == 0 || cfg.d_h == 0 || cfg.classes < 2) {
            throw ConfigError("model dimensions must be positive with at least two classes");
        }
        Rng rng(seed);
        auto gaussian = [&rng](Shape shape, double stddev) {
            std::vector<double> v(shape_numel(shape));
            for (auto& x : v) x = rng.normal(0.0, stddev);
            return Tensor(std::move(shape), std::move(v));
        };
        for (std::size_t m = 0; m < kModalities; ++m) {
            auto& enc = encoders_[m];
            enc.modality = static_cast<Modality>(m);
            enc.input_mean.assign(cfg.d_in, 0.0);
            enc.input_var.assign(cfg.d_in, 1.0);
            enc.weight = gaussian({cfg.d_in, cfg.d_h}, 1.0 / std::sqrt(static_cast<double>(cfg.d_in)));
            enc.bias = Tensor::zeros({cfg.d_h});
            enc.ln_gain = Tensor::full({cfg.d_h}, 1.0);
            enc.ln_bias = Tensor::zeros({cfg.d_h});
        }
        const double fs = 1.0 / std::sqrt(static_cast<double>(cfg.d_h));
        fusion_.query = gaussian({cfg.d_h, cfg.d_h}, fs);
        fusion_.key = gaussian({cfg.d_h, cfg.d_h}, fs);
        fusion_.value = gaussian({cfg.d_h, cfg.d_h}, fs);
        classifier_.weight = gaussian({cfg.d_h, cfg.classes}, fs);
        classifier_.bias = Tensor::zeros({cfg.classes});
    }

    const ModelConfig& config() const { return cfg_; }
    std::array<ModalityEncoder, kModalities>& encoders() { return encoders_; }
    const std::array<ModalityEncoder, kModalities>& encoders() const { return encoders_; }
    FusionBlock& fusion() { return fusion_; }
    const FusionBlock& fusion() const { return fusion_; }
    Classifier& classifier() { return classifier_; }
    const Classifier& classifier() const { return classifier_; }

    // Standardizes raw inputs with the stored statistics (constant, no graph).
    Tensor standardize(std::size_t m, const Tensor& x) const {
        const auto& enc = encoders_[m];
        if (x.rank() != 2 || x.cols() != cfg_.d_in) {
            throw DimensionError(std::string("modality ") + modality_tag(m) + " input " +
                                 shape_str(x.shape()) + " does not have " + std::to_string(cfg_.d_in) +
                                 " columns");
        }
        std::vector<double> out(x.numel());
        for (std::size_t i = 0; i < x.rows(); ++i) {
            for (std::size_t j = 0; j < cfg_.d_in; ++j) {
                out[i * cfg_.d_in + j] = (x.at(i, j) - enc.input_mean[j]) /
                                         std::sqrt(std::max(enc.input_var[j], 0.0) + kInputStdFloor);
            }
        }
        return Tensor(x.shape(), std::move(out));
    }

    Tensor encode_modality(std::size_t m, const Tensor& x) const {
        const auto& enc = encoders_[m];
        Tensor h = add_rowwise(matmul(standardize(m, x), enc.weight), enc.bias);
        return gelu(layernorm_affine(h, enc.ln_gain, enc.ln_bias, cfg_.norm_eps));
    }

    std::array<Tensor, kModalities> encode(const ModalityBatch& batch) const {
        batch.validate();
        std::array<Tensor, kModalities> out;
        for (std::size_t m = 0; m < kModalities; ++m) out[m] = encode_modality(m, batch.inputs[m]);
        return out;
    }

    // Self-attention over the three modality tokens of each sample, with a
    // residual connection, mean-pooled to one [B x d_h] representation.
    Tensor fuse(const std::array<Tensor, kModalities>& features) const {
        const double scale = 1.0 / std::sqrt(static_cast<double>(cfg_.d_h));
        std::array<Tensor, kModalities> q, k, v;
        for (std::size_t m = 0; m < kModalities; ++m) {
            q[m] = matmul(features[m], fusion_.query);
            k[m] = matmul(features[m], fusion_.key);
            v[m] = matmul(features[m], fusion_.value);
        }
        std::vector<Tensor> tokens;
        for (std::size_t m = 0; m < kModalities; ++m) {
            std::array<Tensor, kModalities> scores;
            for (std::size_t n = 0; n < kModalities; ++n) scores[n] = affine(rowwise_dot(q[m], k[n]), scale);
            Tensor attn = row_softmax(stack_columns(scores));
            Tensor out = features[m];
            for (std::size_t n = 0; n < kModalities; ++n) out = add(out, scale_rows(v[n], column(attn, n)));
            tokens.push_back(out);
        }
        return affine(add_n(tokens), 1.0 / static_cast<double>(kModalities));
    }

    Tensor classify(const Tensor& features) const {
        return add_rowwise(matmul(features, classifier_.weight), classifier_.bias);
    }

    ForwardOutput forward_full(const ModalityBatch& batch) const {
        ForwardOutput out;
        out.features = encode(batch);
        for (std::size_t m = 0; m < kModalities; ++m) out.modality_logits[m] = classify(out.features[m]);
        out.fused_logits = classify(fuse(out.features));
        return out;
    }

    // Registry of every learnable tensor in a fixed order.
    std::vector<NamedParameter> parameters() const {
        std::vector<NamedParameter> out;
        for (std::size_t m = 0; m < kModalities; ++m) {
            const auto& e = encoders_[m];
            const std::string p = std::string("encoder.") + modality_tag(m) + ".";
            out.push_back({p + "weight", e.weight, true});
            out.push_back({p + "bias", e.bias, true});
            out.push_back({p + "ln_gain", e.ln_gain, true});
            out.push_back({p + "ln_bias", e.ln_bias, true});
        }
        out.push_back({"fusion.query", fusion_.query, false});
        out.push_back({"fusion.key", fusion_.key, false});
        out.push_back({"fusion.value", fusion_.value, false});
        out.push_back({"classifier.weight", classifier_.weight, false});
        out.push_back({"classifier.bias", classifier_.bias, false});
        return out;
    }

    // The test-time-trainable subset: encoder linear layers and normalization
    // affine parameters. Fusion and classifier stay frozen.
    std::vector<Tensor> trainable_parameters() const {
        std::vector<Tensor> out;
        for (const auto& p : parameters())
            if (p.trainable) out.push_back(p.tensor);
        return out;
    }

    std::vector<Tensor> all_parameters() const {
        std::vector<Tensor> out;
        for (const auto& p : parameters()) out.push_back(p.tensor);
        return out;
    }

    // Gradients are tracked only for the trainable subset.
    void set_adaptation_mode() {
        for (auto& p : parameters()) {
            p.tensor.zero_grad();
            p.tensor.set_requires_grad(p.trainable);
        }
    }

    void set_training_mode() {
        for (auto& p : parameters()) {
            p.tensor.zero_grad();
            p.tensor.set_requires_grad(true);
        }
    }

    void set_inference_mode() {
        for (auto& p : parameters()) {
            p.tensor.zero_grad();
            p.tensor.set_requires_grad(false);
        }
    }

    // Sets the input standardization statistics from a data matrix per modality.
    void fit_input_statistics(const ModalityBatch& data) {
        data.validate();
        for (std::size_t m = 0; m < kModalities; ++m) {
            const auto& x = data.inputs[m];
            auto& enc = encoders_[m];
            const double n = static_cast<double>(x.rows());
            for (std::size_t j = 0; j < cfg_.d_in; ++j) {
                double mu = 0.0;
                for (std::size_t i = 0; i < x.rows(); ++i) mu += x.at(i, j);
                mu /= n;
                double var = 0.0;
                for (std::size_t i = 0; i < x.rows(); ++i) var += (x.at(i, j) - mu) * (x.at(i, j) - mu);
                enc.input_mean[j] = mu;
                enc.input_var[j] = var / n;
            }
        }
    }

    SourceModel clone() const {
        SourceModel copy;
        copy.from_arrays(to_arrays());
        return copy;
    }

    ArrayMap to_arrays() const {
        ArrayMap out;
        out["meta.dims"] = Array{{4},
                                 {static_cast<double>(cfg_.d_in), static_cast<double>(cfg_.d_h),
                                  static_cast<double>(cfg_.classes), cfg_.norm_eps}};
        for (const auto& p : parameters()) out["param." + p.name] = Array::from(p.tensor);
        for (std::size_t m = 0; m < kModalities; ++m) {
            const std::string p = std::string("buffer.") + modality_tag(m) + ".";
            out[p + "input_mean"] = Array{{cfg_.d_in}, encoders_[m].input_mean};
            out[p + "input_var"] = Array{{cfg_.d_in}, encoders_[m].input_var};
        }
        return out;
    }

    void from_arrays(const ArrayMap& in) {
        const auto it = in.find("meta.dims");
        if (it == in.end() || it->second.values.size() != 4) {
            throw CompatibilityError("checkpoint has no model dimensions");
        }
        const auto& d = it->second.values;
        ModelConfig cfg{static_cast<std::size_t>(d[0]), static_cast<std::size_t>(d[1]),
                        static_cast<std::size_t>(d[2]), d[3]};
        *this = SourceModel(cfg, 0);
        for (auto& p : parameters()) {
            const auto found = in.find("param." + p.name);
            if (found == in.end()) throw CompatibilityError("checkpoint is missing '" + p.name + "'");
            if (found->second.shape != p.tensor.shape()) {
                throw CompatibilityError("checkpoint shape mismatch for '" + p.name + "': " +
                                         shape_str(found->second.shape) + " vs " + shape_str(p.tensor.shape()));
            }
            std::copy(found->second.values.begin(), found->second.values.end(), p.tensor.data().begin());
        }
        for (std::size_t m = 0; m < kModalities; ++m) {
            const std::string p = std::string("buffer.") + modality_tag(m) + ".";
            encoders_[m].input_mean = in.at(p + "input_mean").values;
            encoders_[m].input_var = in.at(p + "input_var").values;
        }
    }

    void save(const std::string& path) const { save_arrays(path, to_arrays()); }

    static SourceModel load(const std::string& path) {
        SourceModel model;
        model.from_arrays(load_arrays(path));
        return model;
    }

private:
    ModelConfig cfg_;
    std::array<ModalityEncoder, kModalities> encoders_;
    FusionBlock fusion_;
    Classifier classifier_;
};

// ---------------------------------------------------------------------------
// Source-domain supervised training

struct LabeledData {
    ModalityBatch features;
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
};

inline ModalityBatch slice_rows(const ModalityBatch& batch, const std::vector<std::size_t>& rows) {
    ModalityBatch out;
    for (std::size_t m = 0; m < kModalities; ++m) out.inputs[m] = gather_rows(batch.inputs[m], rows).detach();
    return out;
}

// Mean cross-entropy of row logits against integer labels.
inline Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    std::vector<std::size_t> idx(labels.begin(), labels.end());
    return -mean(pick(log_clamped(row_softmax(logits)), std::move(idx)));
}

inline std::vector<int> argmax_rows(const Tensor& logits) {
    std::vector<int> out(logits.rows());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < logits.cols(); ++c)
            if (logits.at(i, c) > logits.at(i, best)) best = c;
        out[i] = static_cast<int>(best);
    }
    return out;
}

struct PretrainConfig {
    std::size_t epochs = 50;
    std::size_t batch_size = 128;
    AdamWConfig optimizer{};
    std::uint64_t seed = 0;

    bool operator==(const PretrainConfig&) const = default;
};

struct PretrainResult {
    double holdout_accuracy = 0.0;
    double final_loss = 0.0;
};

inline std::vector<int> predict(const SourceModel& model, const ModalityBatch& data) {
    return argmax_rows(model.forward_full(data).fused_logits);
}

inline double holdout_accuracy(const SourceModel& model, const LabeledData& data) {
    if (data.size() == 0) return 0.0;
    const auto preds = predict(model, data.features);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == data.labels[i];
    return static_cast<double>(hits) / static_cast<double>(preds.size());
}

// Cross-entropy training of every parameter on fused logits, followed by a
// held-out accuracy measurement. The model is left in inference mode.
inline PretrainResult pretrain_source(SourceModel& model, const LabeledData& train, const LabeledData& holdout,
                                      const PretrainConfig& cfg) {
    for (int y : train.labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= model.config().classes) {
            throw ContractError("training label " + std::to_string(y) + " out of range");
        }
    }
    PretrainResult result;
    if (cfg.epochs > 0) {
        model.fit_input_statistics(train.features);
        model.set_training_mode();
        AdamW opt(model.all_parameters(), cfg.optimizer);
        Rng rng(cfg.seed);
        std::vector<std::size_t> order(train.size());
        for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
            std::iota(order.begin(), order.end(), std::size_t{0});
            for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
            double epoch_loss = 0.0;
            std::size_t batches = 0;
            for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
                const std::size_t end = std::min(order.size(), start + cfg.batch_size);
                std::vector<std::size_t> rows(order.begin() + start, order.begin() + end);
                std::vector<int> labels;
                for (auto r : rows) labels.push_back(train.labels[r]);
                opt.zero_grad();
                Tensor loss = cross_entropy(model.forward_full(slice_rows(train.features, rows)).fused_logits, labels);
                if (!std::isfinite(loss.item())) {
                    throw DivergenceError("source pretraining diverged at epoch " + std::to_string(epoch));
                }
                backward(loss);
                opt.step();
                epoch_loss += loss.item();
                ++batches;
            }
            result.final_loss = epoch_loss / static_cast<double>(std::max<std::size_t>(batches, 1));
        }
    }
    model.set_inference_mode();
    result.holdout_accuracy = holdout_accuracy(model, holdout);
    return result;
}

} // namespace ttadrift
