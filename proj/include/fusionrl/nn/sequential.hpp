#pragma once

#include <cstdint>
#include <variant>
#include <vector>

#include "layers.hpp"

namespace fusionrl::nn {

/// A chain of layers. Also satisfies the trainer's Q-network interface with
/// Input = Tensor<T>, which is how the tabular sanity checks drive it.
template <typename T>
class Sequential {
public:
    using Scalar = T;
    using Input = Tensor<T>;

    Sequential() = default;
    explicit Sequential(std::vector<Layer<T>> layers) : layers_(std::move(layers)) {}

    template <typename L>
    Sequential& add(L layer) {
        layers_.emplace_back(std::move(layer));
        return *this;
    }

    std::size_t size() const { return layers_.size(); }
    const std::vector<Layer<T>>& layers() const { return layers_; }

    void init(Rng& rng) {
        for (auto& l : layers_) std::visit([&](auto& x) { x.init(rng); }, l);
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& l : layers_) n += std::visit([](const auto& x) { return x.param_count(); }, l);
        return n;
    }

    Tensor<T> infer(const Tensor<T>& x) const {
        Tensor<T> h = x;
        for (const auto& l : layers_) h = std::visit([&](const auto& layer) { return layer.infer(h); }, l);
        return h;
    }

    Tensor<T> forward(const Tensor<T>& x, Mode mode) {
        if (mode == Mode::Eval) return infer(x);
        Tensor<T> h = x;
        for (auto& l : layers_) h = std::visit([&](auto& layer) { return layer.forward(h); }, l);
        trained_ = true;
        return h;
    }

    Tensor<T> backward(const Tensor<T>& grad_out) {
        if (!trained_) throw ContractViolation("backward() called without a Train-mode forward");
        Tensor<T> g = grad_out;
        for (auto it = layers_.rbegin(); it != layers_.rend(); ++it)
            g = std::visit([&](auto& layer) { return layer.backward(g); }, *it);
        return g;
    }

    std::vector<ParamRef<T>> parameters() {
        std::vector<ParamRef<T>> out;
        for (auto& l : layers_)
            for (auto& p : std::visit([](auto& x) { return x.parameters(); }, l)) out.push_back(p);
        return out;
    }

    void zero_grad() {
        for (auto& p : parameters()) std::fill(p.grad.begin(), p.grad.end(), T{0});
    }

    /// Concatenated ReLU masks from the last Train-mode forward.
    std::vector<std::uint8_t> activation_pattern() const {
        std::vector<std::uint8_t> out;
        for (const auto& l : layers_)
            if (const auto* r = std::get_if<ReLU<T>>(&l)) out.insert(out.end(), r->mask().begin(), r->mask().end());
        return out;
    }

private:
    std::vector<Layer<T>> layers_;
    bool trained_ = false;
};

/// Copies parameter values between two networks of identical topology.
template <typename Net>
void copy_parameters(Net& dst, Net& src) {
    auto d = dst.parameters();
    auto s = src.parameters();
    if (d.size() != s.size()) throw ShapeError("copy_parameters: topology mismatch");
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (d[i].shape != s[i].shape) throw ShapeError("copy_parameters: block shape mismatch");
        std::copy(s[i].value.begin(), s[i].value.end(), d[i].value.begin());
    }
}

} // namespace fusionrl::nn
