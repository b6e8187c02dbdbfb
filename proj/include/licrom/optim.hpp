#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include <Eigen/Core>

#include "licrom/errors.hpp"

namespace licrom {

struct AdamState {
    Eigen::VectorXd m, v;
    std::int64_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static AdamState zeros(Eigen::Index n) {
        AdamState s;
        s.m = Eigen::VectorXd::Zero(n);
        s.v = Eigen::VectorXd::Zero(n);
        return s;
    }
};

// One bias-corrected Adam update in place.
inline void adam_step(Eigen::VectorXd &params, const Eigen::VectorXd &grad, AdamState &s, double lr) {
    if (grad.size() != params.size() || s.m.size() != params.size() || s.v.size() != params.size())
        throw ValidationError("Adam state, gradient and parameter lengths differ");
    for (Eigen::Index i = 0; i < grad.size(); ++i)
        if (!std::isfinite(grad[i]))
            throw DivergenceError("non-finite gradient entry " + std::to_string(i) + " (value " + std::to_string(grad[i]) + ")",
                                  static_cast<int>(s.step));
    ++s.step;
    s.m = s.beta1 * s.m + (1.0 - s.beta1) * grad;
    s.v = s.beta2 * s.v + (1.0 - s.beta2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
    params.array() -= lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + s.eps);
}

} // namespace licrom
