#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "microcustom/tensor.hpp"

namespace mc {

// Decoupled weight decay Adam. One instance owns the moment buffers for a
// fixed parameter list; the step counter is shared across all of them.
template <typename T>
class AdamW {
public:
    struct Config {
        double lr = 1e-3;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double weight_decay = 0.0;
    };

    AdamW() = default;
    explicit AdamW(Config cfg) : cfg_(cfg) {}

    Config& config() { return cfg_; }
    const Config& config() const { return cfg_; }
    int64_t step_count() const { return step_; }

    // Moments are allocated lazily on the first step so the caller does not
    // have to pre-register shapes.
    void step(std::vector<Tensor<T>*> params, const std::vector<const Tensor<T>*>& grads) {
        if (params.size() != grads.size()) throw std::runtime_error("adamw: param/grad count mismatch");
        for (size_t i = 0; i < params.size(); ++i) {
            if (params[i]->numel() != grads[i]->numel())
                throw std::runtime_error("adamw: param/grad shape mismatch");
            if (!grads[i]->all_finite())
                throw std::runtime_error("adamw: non-finite gradient, step rejected");
        }
        if (m_.empty()) {
            for (auto* p : params) {
                m_.push_back(Tensor<T>::zeros(p->shape));
                v_.push_back(Tensor<T>::zeros(p->shape));
            }
        }
        if (m_.size() != params.size()) throw std::runtime_error("adamw: parameter list changed");
        ++step_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (size_t i = 0; i < params.size(); ++i) {
            Tensor<T>& p = *params[i];
            const Tensor<T>& g = *grads[i];
            Tensor<T>& m = m_[i];
            Tensor<T>& v = v_[i];
            for (int64_t j = 0; j < p.numel(); ++j) {
                const double gj = static_cast<double>(g.data[j]);
                const double mj = cfg_.beta1 * static_cast<double>(m.data[j]) + (1.0 - cfg_.beta1) * gj;
                const double vj = cfg_.beta2 * static_cast<double>(v.data[j]) + (1.0 - cfg_.beta2) * gj * gj;
                m.data[j] = static_cast<T>(mj);
                v.data[j] = static_cast<T>(vj);
                const double mhat = mj / bc1;
                const double vhat = vj / bc2;
                double pj = static_cast<double>(p.data[j]);
                pj -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * pj);
                p.data[j] = static_cast<T>(pj);
            }
        }
    }

    std::vector<Tensor<T>>& first_moments() { return m_; }
    std::vector<Tensor<T>>& second_moments() { return v_; }
    void set_step_count(int64_t s) { step_ = s; }

private:
    Config cfg_;
    std::vector<Tensor<T>> m_;
    std::vector<Tensor<T>> v_;
    int64_t step_ = 0;
};

}  // namespace mc
