#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sdgzsl/errors.hpp"
#include "sdgzsl/tensor.hpp"

namespace sdgzsl {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Moments for one parameter tensor.
template <class T>
struct AdamState {
    std::vector<T> m, v;
};

// Single bias-corrected Adam update over a named parameter group. Grads are
// read from the tensors and left in place; call zero_grad() before the next
// forward. Parameters with no grad (never reached by backward) are skipped.
template <class T>
class AdamOptimizer {
public:
    AdamOptimizer() = default;
    AdamOptimizer(std::vector<std::pair<std::string, Tensor<T>>> params, AdamConfig cfg)
        : params_(std::move(params)), cfg_(cfg) {
        states_.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            states_[i].m.assign(params_[i].second.numel(), T{0});
            states_[i].v.assign(params_[i].second.numel(), T{0});
        }
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& [name, p] = params_[i];
            if (!p.has_grad()) continue;
            const auto& g = p.grad();
            for (T gv : g)
                if (!std::isfinite(static_cast<double>(gv)))
                    throw NumericError("adam: non-finite gradient in parameter group '" + name + "'");
            auto& st = states_[i];
            auto& w = p.val_mut();
            for (std::size_t j = 0; j < w.size(); ++j) {
                st.m[j] = static_cast<T>(cfg_.beta1 * st.m[j] + (1.0 - cfg_.beta1) * g[j]);
                st.v[j] = static_cast<T>(cfg_.beta2 * st.v[j] + (1.0 - cfg_.beta2) * g[j] * g[j]);
                const double mhat = st.m[j] / bc1;
                const double vhat = st.v[j] / bc2;
                w[j] -= static_cast<T>(cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
            }
        }
    }

    void zero_grad() {
        for (auto& [name, p] : params_) p.zero_grad();
    }

    std::int64_t step_count() const { return t_; }
    void set_step_count(std::int64_t t) { t_ = t; }
    const AdamConfig& config() const { return cfg_; }
    void set_lr(double lr) { cfg_.lr = lr; }

    const std::vector<std::pair<std::string, Tensor<T>>>& params() const { return params_; }
    AdamState<T>& state(std::size_t i) { return states_[i]; }
    const AdamState<T>& state(std::size_t i) const { return states_[i]; }

private:
    std::vector<std::pair<std::string, Tensor<T>>> params_;
    std::vector<AdamState<T>> states_;
    AdamConfig cfg_;
    std::int64_t t_ = 0;
};

} // namespace sdgzsl
