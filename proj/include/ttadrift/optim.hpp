#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ttadrift/checkpoint.hpp"
#include "ttadrift/errors.hpp"
#include "ttadrift/gradcore.hpp"

namespace ttadrift {

struct AdamWConfig {
    double lr = 1e-3;
    double weight_decay = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    bool operator==(const AdamWConfig&) const = default;
};

struct MomentBuffers {
    std::vector<double> first;
    std::vector<double> second;
};

// One decoupled-weight-decay Adam update of `param` in place. `step` is the
// 1-based step count used for bias correction.
inline void adamw_update(std::span<double> param, std::span<const double> grad, MomentBuffers& moments,
                         std::size_t step, const AdamWConfig& cfg) {
    if (grad.size() != param.size() || moments.first.size() != param.size() ||
        moments.second.size() != param.size()) {
        throw ContractError("adamw_update: parameter, gradient and moment sizes differ");
    }
    if (step == 0) throw ContractError("adamw_update: step count is 1-based");
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    const double decay = 1.0 - cfg.lr * cfg.weight_decay;
    for (std::size_t i = 0; i < param.size(); ++i) {
        auto& m = moments.first[i];
        auto& v = moments.second[i];
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad[i];
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad[i] * grad[i];
        const double m_hat = m / bc1;
        const double v_hat = v / bc2;
        param[i] *= decay;
        param[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
}

// AdamW over a fixed list of parameter tensors. Moment buffers exist only for
// the tensors it was constructed with.
class AdamW {
public:
    AdamW(std::vector<Tensor> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
        for (const auto& p : params_) {
            moments_.push_back({std::vector<double>(p.numel(), 0.0), std::vector<double>(p.numel(), 0.0)});
        }
    }

    // Applies one update using each parameter's accumulated gradient; a
    // parameter without a gradient buffer is treated as having zero gradient.
    void step() {
        ++step_;
        std::vector<double> zeros;
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i];
            std::span<const double> g;
            if (p.has_grad()) {
                g = p.grad();
            } else {
                zeros.assign(p.numel(), 0.0);
                g = zeros;
            }
            adamw_update(p.data(), g, moments_[i], step_, cfg_);
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    std::size_t step_count() const { return step_; }
    const AdamWConfig& config() const { return cfg_; }
    std::span<const Tensor> params() const { return params_; }
    std::span<const MomentBuffers> moments() const { return moments_; }

    // Serializes moments and step count under `prefix` for resumable runs.
    void save_state(ArrayMap& out, const std::string& prefix) const {
        out[prefix + "step"] = Array{{}, {static_cast<double>(step_)}};
        for (std::size_t i = 0; i < params_.size(); ++i) {
            out[prefix + std::to_string(i) + ".m"] = Array{params_[i].shape(), moments_[i].first};
            out[prefix + std::to_string(i) + ".v"] = Array{params_[i].shape(), moments_[i].second};
        }
    }

    void load_state(const ArrayMap& in, const std::string& prefix) {
        step_ = static_cast<std::size_t>(in.at(prefix + "step").values.at(0));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            const auto& m = in.at(prefix + std::to_string(i) + ".m");
            const auto& v = in.at(prefix + std::to_string(i) + ".v");
            if (m.values.size() != params_[i].numel() || v.values.size() != params_[i].numel()) {
                throw CompatibilityError("optimizer state does not match parameter " + std::to_string(i));
            }
            moments_[i] = {m.values, v.values};
        }
    }

private:
    std::vector<Tensor> params_;
    std::vector<MomentBuffers> moments_;
    AdamWConfig cfg_;
    std::size_t step_ = 0;
};

// l2 norm over the gradients of the given tensors (missing gradients count as zero).
inline double gradient_norm(std::span<const Tensor> params) {
    double acc = 0.0;
    for (const auto& p : params) {
        for (double g : p.grad()) acc += g * g;
    }
    return std::sqrt(acc);
}

} // namespace ttadrift
