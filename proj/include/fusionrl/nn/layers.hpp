#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "../errors.hpp"
#include "../random.hpp"
#include "tensor.hpp"

namespace fusionrl::nn {

enum class Mode { Eval, Train };

/// Mutable view of one parameter block and its gradient accumulator.
template <typename T>
struct ParamRef {
    Shape shape;
    std::span<T> value;
    std::span<T> grad;
};

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstRowMap = Eigen::Map<const RowMat<T>>;

template <typename T>
void init_uniform(std::span<T> v, double bound, Rng& rng) {
    for (auto& x : v) x = static_cast<T>(uniform(rng, -bound, bound));
}

} // namespace detail

/// 1-D convolution over [batch, in_channels, length] with explicit zero
/// padding. Weights are laid out [out_channels, in_channels, kernel].
template <typename T>
class Conv1D {
public:
    Conv1D(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride = 1,
           std::size_t padding = 0)
        : in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride), pad_(padding),
          weight_(out_channels * in_channels * kernel, T{0}), bias_(out_channels, T{0}),
          grad_weight_(weight_.size(), T{0}), grad_bias_(bias_.size(), T{0}) {
        if (in_ == 0 || out_ == 0 || kernel_ == 0 || stride_ == 0) throw ShapeError("Conv1D dimensions must be positive");
    }

    std::size_t in_channels() const { return in_; }
    std::size_t out_channels() const { return out_; }
    std::size_t kernel() const { return kernel_; }
    std::size_t stride() const { return stride_; }
    std::size_t padding() const { return pad_; }

    std::size_t output_length(std::size_t in_len) const {
        if (in_len + 2 * pad_ < kernel_) throw ShapeError("Conv1D input shorter than kernel");
        return (in_len + 2 * pad_ - kernel_) / stride_ + 1;
    }
    std::size_t param_count() const { return out_ * in_ * kernel_ + out_; }

    void init(Rng& rng) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in_ * kernel_));
        detail::init_uniform<T>(weight_, bound, rng);
        detail::init_uniform<T>(bias_, bound, rng);
    }

    Tensor<T> infer(const Tensor<T>& x) const {
        detail::RowMat<T> col;
        return apply(x, col);
    }

    Tensor<T> forward(const Tensor<T>& x) {
        Tensor<T> y = apply(x, col_);
        in_shape_ = x.shape();
        cached_ = true;
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        if (!cached_) throw ContractViolation("Conv1D::backward without a Train-mode forward");
        const std::size_t n = in_shape_[0], len = in_shape_[2], lo = output_length(len);
        if (gy.shape() != Shape{n, out_, lo}) throw ShapeError("Conv1D::backward gradient shape mismatch");
        detail::RowMat<T> g(out_, n * lo);
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t o = 0; o < out_; ++o)
                for (std::size_t p = 0; p < lo; ++p) g(o, b * lo + p) = gy.at(b, o, p);
        detail::RowMap<T> gw(grad_weight_.data(), out_, in_ * kernel_);
        detail::ConstRowMap<T> w(weight_.data(), out_, in_ * kernel_);
        gw.noalias() += g * col_.transpose();
        for (std::size_t o = 0; o < out_; ++o) grad_bias_[o] += g.row(o).sum();
        const detail::RowMat<T> gcol = w.transpose() * g;
        Tensor<T> gx(in_shape_);
        for (std::size_t c = 0; c < in_; ++c)
            for (std::size_t k = 0; k < kernel_; ++k) {
                const std::size_t row = c * kernel_ + k;
                for (std::size_t b = 0; b < n; ++b)
                    for (std::size_t p = 0; p < lo; ++p) {
                        const auto src = static_cast<std::ptrdiff_t>(p * stride_ + k) - static_cast<std::ptrdiff_t>(pad_);
                        if (src >= 0 && src < static_cast<std::ptrdiff_t>(len))
                            gx.at(b, c, static_cast<std::size_t>(src)) += gcol(row, b * lo + p);
                    }
            }
        return gx;
    }

    std::vector<ParamRef<T>> parameters() {
        return {{{out_, in_, kernel_}, weight_, grad_weight_}, {{out_}, bias_, grad_bias_}};
    }
    std::span<const T> weight() const { return weight_; }
    std::span<const T> bias() const { return bias_; }

private:
    // im2col: rows (channel, tap), columns (batch, output position).
    Tensor<T> apply(const Tensor<T>& x, detail::RowMat<T>& col) const {
        if (x.rank() != 3 || x.dim(1) != in_)
            throw ShapeError("Conv1D expects [N," + std::to_string(in_) + ",L], got " + shape_string(x.shape()));
        const std::size_t n = x.dim(0), len = x.dim(2), lo = output_length(len);
        col.setZero(in_ * kernel_, n * lo);
        for (std::size_t c = 0; c < in_; ++c)
            for (std::size_t k = 0; k < kernel_; ++k) {
                const std::size_t row = c * kernel_ + k;
                for (std::size_t b = 0; b < n; ++b)
                    for (std::size_t p = 0; p < lo; ++p) {
                        const auto src = static_cast<std::ptrdiff_t>(p * stride_ + k) - static_cast<std::ptrdiff_t>(pad_);
                        if (src >= 0 && src < static_cast<std::ptrdiff_t>(len))
                            col(row, b * lo + p) = x.at(b, c, static_cast<std::size_t>(src));
                    }
            }
        detail::ConstRowMap<T> w(weight_.data(), out_, in_ * kernel_);
        const detail::RowMat<T> prod = w * col;
        Tensor<T> y({n, out_, lo});
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t o = 0; o < out_; ++o) {
                T* dst = &y.at(b, o, 0);
                for (std::size_t p = 0; p < lo; ++p) dst[p] = prod(o, b * lo + p) + bias_[o];
            }
        return y;
    }

    std::size_t in_, out_, kernel_, stride_, pad_;
    std::vector<T> weight_, bias_, grad_weight_, grad_bias_;
    detail::RowMat<T> col_;
    Shape in_shape_;
    bool cached_ = false;
};

/// y = x W^T + b with W laid out [out, in].
template <typename T>
class FullyConnected {
public:
    FullyConnected(std::size_t in, std::size_t out)
        : in_(in), out_(out), weight_(in * out, T{0}), bias_(out, T{0}), grad_weight_(weight_.size(), T{0}),
          grad_bias_(out, T{0}) {
        if (in_ == 0 || out_ == 0) throw ShapeError("FullyConnected dimensions must be positive");
    }

    std::size_t in_features() const { return in_; }
    std::size_t out_features() const { return out_; }
    std::size_t param_count() const { return in_ * out_ + out_; }

    void init(Rng& rng) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in_));
        detail::init_uniform<T>(weight_, bound, rng);
        detail::init_uniform<T>(bias_, bound, rng);
    }

    Tensor<T> infer(const Tensor<T>& x) const {
        if (x.rank() != 2 || x.dim(1) != in_)
            throw ShapeError("FullyConnected expects [N," + std::to_string(in_) + "], got " + shape_string(x.shape()));
        const std::size_t n = x.dim(0);
        Tensor<T> y({n, out_});
        detail::ConstRowMap<T> xm(x.data(), n, in_);
        detail::ConstRowMap<T> w(weight_.data(), out_, in_);
        detail::RowMap<T> ym(y.data(), n, out_);
        ym.noalias() = xm * w.transpose();
        Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias_.data(), out_);
        ym.rowwise() += b;
        return y;
    }

    Tensor<T> forward(const Tensor<T>& x) {
        Tensor<T> y = infer(x);
        input_ = x;
        cached_ = true;
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        if (!cached_) throw ContractViolation("FullyConnected::backward without a Train-mode forward");
        const std::size_t n = input_.dim(0);
        if (gy.shape() != Shape{n, out_}) throw ShapeError("FullyConnected::backward gradient shape mismatch");
        detail::ConstRowMap<T> g(gy.data(), n, out_);
        detail::ConstRowMap<T> xm(input_.data(), n, in_);
        detail::ConstRowMap<T> w(weight_.data(), out_, in_);
        detail::RowMap<T> gw(grad_weight_.data(), out_, in_);
        gw.noalias() += g.transpose() * xm;
        for (std::size_t o = 0; o < out_; ++o) grad_bias_[o] += g.col(o).sum();
        Tensor<T> gx({n, in_});
        detail::RowMap<T> gxm(gx.data(), n, in_);
        gxm.noalias() = g * w;
        return gx;
    }

    std::vector<ParamRef<T>> parameters() {
        return {{{out_, in_}, weight_, grad_weight_}, {{out_}, bias_, grad_bias_}};
    }
    std::span<const T> weight() const { return weight_; }
    std::span<const T> bias() const { return bias_; }

private:
    std::size_t in_, out_;
    std::vector<T> weight_, bias_, grad_weight_, grad_bias_;
    Tensor<T> input_;
    bool cached_ = false;
};

template <typename T>
class ReLU {
public:
    std::size_t param_count() const { return 0; }
    void init(Rng&) {}

    Tensor<T> infer(const Tensor<T>& x) const {
        Tensor<T> y = x;
        for (auto& v : y.values()) v = v > T{0} ? v : T{0};
        return y;
    }
    Tensor<T> forward(const Tensor<T>& x) {
        mask_.assign(x.size(), 0);
        for (std::size_t i = 0; i < x.size(); ++i) mask_[i] = x[i] > T{0};
        cached_ = true;
        return infer(x);
    }
    Tensor<T> backward(const Tensor<T>& gy) {
        if (!cached_) throw ContractViolation("ReLU::backward without a Train-mode forward");
        if (gy.size() != mask_.size()) throw ShapeError("ReLU::backward gradient shape mismatch");
        Tensor<T> gx = gy;
        for (std::size_t i = 0; i < gx.size(); ++i)
            if (!mask_[i]) gx[i] = T{0};
        return gx;
    }
    std::vector<ParamRef<T>> parameters() { return {}; }
    /// Which units were active in the last Train-mode forward.
    const std::vector<std::uint8_t>& mask() const { return mask_; }

private:
    std::vector<std::uint8_t> mask_;
    bool cached_ = false;
};

/// [N, C, L] -> [N, C*L].
template <typename T>
class Flatten {
public:
    std::size_t param_count() const { return 0; }
    void init(Rng&) {}

    Tensor<T> infer(const Tensor<T>& x) const {
        Tensor<T> y = x;
        y.reshape({x.dim(0), x.size() / x.dim(0)});
        return y;
    }
    Tensor<T> forward(const Tensor<T>& x) {
        in_shape_ = x.shape();
        cached_ = true;
        return infer(x);
    }
    Tensor<T> backward(const Tensor<T>& gy) {
        if (!cached_) throw ContractViolation("Flatten::backward without a Train-mode forward");
        Tensor<T> gx = gy;
        gx.reshape(in_shape_);
        return gx;
    }
    std::vector<ParamRef<T>> parameters() { return {}; }

private:
    Shape in_shape_;
    bool cached_ = false;
};

template <typename T>
using Layer = std::variant<Conv1D<T>, FullyConnected<T>, ReLU<T>, Flatten<T>>;

} // namespace fusionrl::nn
