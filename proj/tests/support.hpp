#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "cf2/rng.hpp"
#include "cf2/tape.hpp"
#include "cf2/tensor.hpp"

namespace cf2::testing {

inline Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
    Matrix m(r, c);
    for (double& v : m.data()) v = rng.uniform(lo, hi);
    return m;
}

/// Builds a scalar loss from parameter variables on a fresh tape.
using LossBuilder = std::function<Var(Tape&, const std::vector<Var>&)>;

inline double eval_loss(const LossBuilder& build, const std::vector<Matrix>& params) {
    Tape t;
    std::vector<Var> vs;
    for (const auto& p : params) vs.push_back(t.constant(p));
    return build(t, vs).value()(0, 0);
}

/// Largest relative error between the tape gradient and central differences,
/// with |a-b| / max(1, |a|, |b|) per entry.
inline double gradient_error(const LossBuilder& build, const std::vector<Matrix>& params, double h = 1e-6) {
    Tape t;
    std::vector<Var> vs;
    for (const auto& p : params) vs.push_back(t.parameter(p));
    auto grads = t.backward(build(t, vs));
    double worst = 0.0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        const Matrix& g = grads[vs[k]];
        for (std::size_t i = 0; i < params[k].size(); ++i) {
            auto plus = params;
            auto minus = params;
            plus[k].data()[i] += h;
            minus[k].data()[i] -= h;
            const double fd = (eval_loss(build, plus) - eval_loss(build, minus)) / (2.0 * h);
            const double an = g.data()[i];
            worst = std::max(worst, std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)}));
        }
    }
    return worst;
}

}  // namespace cf2::testing
