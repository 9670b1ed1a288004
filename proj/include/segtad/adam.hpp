#pragma once

#include <cmath>
#include <vector>

#include "segtad/params.hpp"
#include "segtad/tensor.hpp"

namespace segtad {

// Adam with bias correction. One state slot (first/second moment) per
// trainable parameter; step order follows the registry order.
class Adam {
public:
    explicit Adam(std::vector<Tensor> params, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8)
        : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i].numel(), 0.0);
            v_[i].assign(params_[i].numel(), 0.0);
        }
    }

    void zero_grad() { segtad::zero_grad(params_); }

    void step(double lr) {
        check(lr > 0.0, "adam: learning rate must be positive, got ", lr);
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i].values();
            const auto& g = params_[i].grad();
            if (g.empty()) continue;
            for (size_t j = 0; j < p.size(); ++j) {
                m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g[j];
                v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g[j] * g[j];
                const double mhat = m_[i][j] / bc1;
                const double vhat = v_[i][j] / bc2;
                p[j] -= lr * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

    int64_t step_count() const { return t_; }

private:
    std::vector<Tensor> params_;
    double beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

}  // namespace segtad
