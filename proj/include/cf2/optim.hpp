#pragma once

#include <cmath>
#include <vector>

#include "cf2/error.hpp"
#include "cf2/tensor.hpp"

namespace cf2 {

/// Adaptive-moment gradient descent over a fixed list of matrices.
class Adam {
public:
    explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
        if (!(learning_rate > 0.0)) throw UsageError("adam: learning rate must be positive");
    }

    void step(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads) {
        if (params.size() != grads.size()) throw UsageError("adam: parameter/gradient count mismatch");
        if (m_.empty()) {
            for (const Matrix* p : params) {
                m_.emplace_back(p->rows(), p->cols());
                v_.emplace_back(p->rows(), p->cols());
            }
        }
        if (m_.size() != params.size()) throw UsageError("adam: parameter list changed between steps");
        ++t_;
        const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t k = 0; k < params.size(); ++k) {
            require_same_shape(*params[k], *grads[k], "adam");
            auto p = params[k]->data();
            auto g = grads[k]->data();
            auto m = m_[k].data();
            auto v = v_[k].data();
            for (std::size_t i = 0; i < p.size(); ++i) {
                m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
                v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
                p[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
            }
        }
    }

    std::size_t steps() const noexcept { return t_; }

private:
    double lr_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
    std::vector<Matrix> m_, v_;
};

}  // namespace cf2
