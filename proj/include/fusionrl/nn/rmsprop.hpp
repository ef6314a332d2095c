#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "../errors.hpp"
#include "layers.hpp"

namespace fusionrl::nn {

struct RmsPropConfig {
    double learning_rate = 1e-4;
    double decay = 0.95; ///< alpha
    double epsilon = 1e-6;
};

/// Plain RMSProp without momentum:
///   acc <- alpha * acc + (1 - alpha) * g^2
///   p   <- p - lr * g / (sqrt(acc) + eps)
/// Accumulators that decay below the smallest normal value are flushed to
/// zero; next to eps they cannot change an update, and subnormal arithmetic
/// is slow.
template <typename T>
class RmsProp {
public:
    explicit RmsProp(RmsPropConfig cfg = {}) : cfg_(cfg) {}

    const RmsPropConfig& config() const { return cfg_; }
    void set_learning_rate(double lr) { cfg_.learning_rate = lr; }

    void step(const std::vector<ParamRef<T>>& params) {
        if (acc_.empty()) {
            acc_.reserve(params.size());
            for (const auto& p : params) acc_.emplace_back(p.value.size(), T{0});
        }
        if (acc_.size() != params.size()) throw ShapeError("RmsProp: parameter block count changed");
        const T alpha = static_cast<T>(cfg_.decay);
        const T one_minus = static_cast<T>(1.0 - cfg_.decay);
        const T lr = static_cast<T>(cfg_.learning_rate);
        const T eps = static_cast<T>(cfg_.epsilon);
        const T tiny = std::numeric_limits<T>::min();
        for (std::size_t b = 0; b < params.size(); ++b) {
            auto& acc = acc_[b];
            const auto& p = params[b];
            if (acc.size() != p.value.size() || p.grad.size() != p.value.size())
                throw ShapeError("RmsProp: accumulator / parameter shape mismatch");
            for (std::size_t i = 0; i < acc.size(); ++i) {
                const T g = p.grad[i];
                const T a = alpha * acc[i] + one_minus * g * g;
                acc[i] = a < tiny ? T{0} : a;
                p.value[i] -= lr * g / (std::sqrt(acc[i]) + eps);
            }
        }
    }

    const std::vector<std::vector<T>>& accumulators() const { return acc_; }

private:
    RmsPropConfig cfg_;
    std::vector<std::vector<T>> acc_;
};

} // namespace fusionrl::nn
