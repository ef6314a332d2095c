#pragma once

#include <cmath>

namespace fusionrl::nn {

struct LossGrad {
    double loss = 0.0;
    double grad = 0.0; ///< d loss / d prediction
};

/// Smooth Huber surrogate: quadratic near zero, linear with slope delta in
/// the tails, so the gradient never exceeds delta in magnitude.
inline LossGrad pseudo_huber(double prediction, double target, double delta = 1.0) {
    const double e = prediction - target;
    const double ratio = e / delta;
    const double root = std::sqrt(1.0 + ratio * ratio);
    return {delta * delta * (root - 1.0), e / root};
}

inline LossGrad squared_error(double prediction, double target) {
    const double e = prediction - target;
    return {e * e, 2.0 * e};
}

} // namespace fusionrl::nn
