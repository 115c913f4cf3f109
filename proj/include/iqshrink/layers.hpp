#ifndef IQSHRINK_LAYERS_HPP
#define IQSHRINK_LAYERS_HPP

#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "iqshrink/init.hpp"
#include "iqshrink/linear.hpp"
#include "iqshrink/ops.hpp"

namespace iqshrink {

template <typename Real>
using NamedBuffer = std::pair<std::string, Tensor<Real>*>;

template <typename Real>
struct DenseLayer {
    Parameter<Real> w, b;
    bool use_bias = true;

    DenseLayer() = default;
    DenseLayer(std::int64_t in, std::int64_t out, const std::string& prefix, Rng& rng,
               bool bias = true)
        : w(Shape{in, out}, prefix + "w", true), b(Shape{out}, prefix + "b"), use_bias(bias) {
        init_glorot_uniform(w.value, in, out, rng);
    }

    Tensor<Real> forward(const Tensor<Real>& x) {
        x_ = x;
        return linear(x, w.value, use_bias ? &b.value : nullptr);
    }

    Tensor<Real> backward(const Tensor<Real>& dy) {
        Tensor<Real> dx(x_.shape());
        linear_backward(x_, w.value, dy, dx, w.grad, use_bias ? &b.grad : nullptr);
        return dx;
    }

    std::vector<Parameter<Real>*> parameters() {
        if (use_bias) return {&w, &b};
        return {&w};
    }

private:
    Tensor<Real> x_;
};

template <typename Real>
struct Conv2dLayer {
    Parameter<Real> kernel;
    int stride = 1;
    Padding padding = Padding::Same;

    Conv2dLayer() = default;
    Conv2dLayer(std::int64_t kh, std::int64_t kw, std::int64_t cin, std::int64_t cout, int s,
                Padding pad, const std::string& prefix, Rng& rng)
        : kernel(Shape{kh, kw, cin, cout}, prefix + "kernel", true), stride(s), padding(pad) {
        init_glorot_uniform(kernel.value, kh * kw * cin, kh * kw * cout, rng);
    }

    Tensor<Real> forward(const Tensor<Real>& x) {
        x_ = x;
        return conv2d(x, kernel.value, stride, padding);
    }

    Tensor<Real> backward(const Tensor<Real>& dy) {
        Tensor<Real> dx(x_.shape());
        conv2d_backward(x_, kernel.value, stride, padding, dy, dx, kernel.grad);
        return dx;
    }

    std::vector<Parameter<Real>*> parameters() { return {&kernel}; }

private:
    Tensor<Real> x_;
};

template <typename Real>
struct BatchNormLayer {
    Parameter<Real> scale, offset;
    Tensor<Real> running_mean, running_var;
    Real momentum = Real(0.9);
    Real eps = Real(1e-5);
    std::string name;

    BatchNormLayer() = default;
    BatchNormLayer(std::int64_t channels, const std::string& prefix)
        : scale(Shape{channels}, prefix + "scale"),
          offset(Shape{channels}, prefix + "offset"),
          running_mean(Shape{channels}),
          running_var(Shape{channels}),
          name(prefix) {
        scale.value.fill(Real(1));
        running_var.fill(Real(1));
    }

    Tensor<Real> forward(const Tensor<Real>& x, Mode mode) {
        // eval-mode forwards are inference-only; skip the backward cache
        return batch_norm(x, scale.value, offset.value, running_mean, running_var, mode, momentum,
                          eps, mode == Mode::Eval ? nullptr : &cache_);
    }

    Tensor<Real> backward(const Tensor<Real>& dy) {
        Tensor<Real> dx(cache_.xhat.shape());
        batch_norm_backward(cache_, scale.value, dy, dx, scale.grad, offset.grad);
        return dx;
    }

    std::vector<Parameter<Real>*> parameters() { return {&scale, &offset}; }
    std::vector<NamedBuffer<Real>> buffers() {
        return {{name + "running_mean", &running_mean}, {name + "running_var", &running_var}};
    }

private:
    BatchNormCache<Real> cache_;
};

template <typename Real>
struct ActivationLayer {
    Activation kind = Activation::Relu;

    ActivationLayer() = default;
    explicit ActivationLayer(Activation k) : kind(k) {}

    Tensor<Real> forward(const Tensor<Real>& x) {
        // relu, sigmoid and tanh derivatives are recoverable from the output;
        // only gelu needs the pre-activation kept around
        if (kind == Activation::Relu) {
            Tensor<Real> y(x.shape());
            Real margin = std::numeric_limits<Real>::max();
            for (std::int64_t i = 0; i < x.numel(); ++i) {
                const Real v = x[i];
                y[i] = v > Real(0) ? v : Real(0);
                margin = std::min(margin, std::abs(v));
            }
            kink_margin_ = margin;
            y_ = std::move(y);
            return y_;
        }
        if (kind == Activation::Gelu) x_ = x;
        y_ = pointwise_activation(x, kind);
        return y_;
    }

    Tensor<Real> backward(const Tensor<Real>& dy) {
        Tensor<Real> dx(y_.shape());
        if (kind == Activation::Relu) {
            for (std::int64_t i = 0; i < y_.numel(); ++i) {
                dx[i] = y_[i] > Real(0) ? dy[i] : Real(0);
            }
            return dx;
        }
        pointwise_activation_backward(x_, y_, dy, kind, dx);
        return dx;
    }

    // distance of the last pre-activation from the relu kink; finite
    // differences misbehave when any input sits on it
    Real min_abs_input() const { return kink_margin_; }

private:
    Tensor<Real> x_, y_;
    Real kink_margin_ = std::numeric_limits<Real>::max();
};

}  // namespace iqshrink

#endif
