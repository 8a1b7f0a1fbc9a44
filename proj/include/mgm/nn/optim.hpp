#pragma once

#include <cmath>
#include <vector>

#include "mgm/nn/graph.hpp"

namespace mgm::nn {

struct AdamWConfig {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    double clip_norm = 1.0;  // global gradient-norm clip; <= 0 disables
};

// Adam with decoupled weight decay. Moment buffers follow the store's
// registration order, so the store must not gain parameters after the first step.
template <typename T>
class AdamW {
public:
    AdamW(ParameterStore<T>& store, AdamWConfig config) : store_(store), config_(config) {
        for (auto& p : store_) {
            m_.push_back(Matrix<T>::Zero(p.value.rows(), p.value.cols()));
            v_.push_back(Matrix<T>::Zero(p.value.rows(), p.value.cols()));
        }
    }

    void set_lr(double lr) { config_.lr = lr; }
    double lr() const { return config_.lr; }
    long steps() const { return step_; }

    // Returns the pre-clip global gradient norm. Gradients are scaled by
    // `grad_scale` first (e.g. 1 / batch tokens).
    double step(double grad_scale = 1.0) {
        double sq = 0;
        for (auto& p : store_) sq += static_cast<double>(p.grad.squaredNorm());
        const double norm = std::sqrt(sq) * grad_scale;
        double factor = grad_scale;
        if (config_.clip_norm > 0 && norm > config_.clip_norm) factor *= config_.clip_norm / norm;
        ++step_;
        const double bc1 = 1 - std::pow(config_.beta1, static_cast<double>(step_));
        const double bc2 = 1 - std::pow(config_.beta2, static_cast<double>(step_));
        const T b1 = T(config_.beta1), b2 = T(config_.beta2);
        std::size_t i = 0;
        for (auto& p : store_) {
            Matrix<T>& m = m_[i];
            Matrix<T>& v = v_[i];
            ++i;
            const auto g = (p.grad.array() * T(factor)).eval();
            m.array() = b1 * m.array() + (T(1) - b1) * g;
            v.array() = b2 * v.array() + (T(1) - b2) * g.square();
            if (config_.weight_decay > 0) p.value *= T(1 - config_.lr * config_.weight_decay);
            p.value.array() -= T(config_.lr) * (m.array() / T(bc1)) /
                               ((v.array() / T(bc2)).sqrt() + T(config_.eps));
        }
        store_.zero_grad();
        return norm;
    }

private:
    ParameterStore<T>& store_;
    AdamWConfig config_;
    std::vector<Matrix<T>> m_, v_;
    long step_ = 0;
};

}  // namespace mgm::nn
