#ifndef IQSHRINK_SHRINKAGE_HPP
#define IQSHRINK_SHRINKAGE_HPP

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "iqshrink/layers.hpp"
#include "iqshrink/ops.hpp"

namespace iqshrink {

// Additive constant in the garrote denominator. Applied to x as printed, not
// to |x|, which leaves a ~1e-6 asymmetry between the two signs.
constexpr double kGarroteEps = 1e-6;

template <typename Real>
inline Real garrote_scalar(Real x, Real t) {
    if (std::abs(x) < t) return Real(0);
    if (t == Real(0)) return x;  // second term vanishes exactly
    return x - (t * t) / (x + Real(kGarroteEps));
}

template <typename Real>
inline Real garrote_deriv_scalar(Real x, Real t) {
    if (std::abs(x) < t) return Real(0);
    if (t == Real(0)) return Real(1);
    const Real denom = x + Real(kGarroteEps);
    return Real(1) + (t * t) / (denom * denom);
}

namespace detail {

// Threshold lookup handles both a per-channel vector [C] and a per-sample
// matrix [B x C] broadcast over the spatial extent.
template <typename Real>
inline Real threshold_at(const Tensor<Real>& threshold, std::int64_t b, std::int64_t c) {
    if (threshold.rank() == 2) return threshold.at2(b, c);
    return threshold[c];
}

template <typename Real>
inline void check_threshold(const Tensor<Real>& x, const Tensor<Real>& threshold) {
    if (x.rank() != 4) throw contract_error("garrote expects rank-4 input, got " + x.shape().str());
    const std::int64_t C = x.dim(3);
    if (threshold.rank() == 2) {
        if (threshold.dim(0) != x.dim(0) || threshold.dim(1) != C) {
            throw contract_error("garrote threshold shape " + threshold.shape().str() +
                                 " does not match input " + x.shape().str());
        }
    } else if (threshold.numel() != C) {
        throw contract_error("garrote threshold length must equal channel extent " +
                             std::to_string(C));
    }
    for (std::int64_t i = 0; i < threshold.numel(); ++i) {
        if (threshold[i] < Real(0)) throw contract_error("garrote threshold must be non-negative");
    }
}

}  // namespace detail

template <typename Real>
Tensor<Real> garrote_apply(const Tensor<Real>& x, const Tensor<Real>& threshold) {
    detail::check_threshold(x, threshold);
    const std::int64_t B = x.dim(0), HW = x.dim(1) * x.dim(2), C = x.dim(3);
    Tensor<Real> y(x.shape());
    for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t p = 0; p < HW; ++p) {
            const Real* in = x.data() + (b * HW + p) * C;
            Real* out = y.data() + (b * HW + p) * C;
            for (std::int64_t c = 0; c < C; ++c) {
                out[c] = garrote_scalar(in[c], detail::threshold_at(threshold, b, c));
            }
        }
    }
    y.check_finite("garrote_apply");
    return y;
}

template <typename Real>
Tensor<Real> garrote_derivative(const Tensor<Real>& x, const Tensor<Real>& threshold) {
    detail::check_threshold(x, threshold);
    const std::int64_t B = x.dim(0), HW = x.dim(1) * x.dim(2), C = x.dim(3);
    Tensor<Real> y(x.shape());
    for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t p = 0; p < HW; ++p) {
            const Real* in = x.data() + (b * HW + p) * C;
            Real* out = y.data() + (b * HW + p) * C;
            for (std::int64_t c = 0; c < C; ++c) {
                out[c] = garrote_deriv_scalar(in[c], detail::threshold_at(threshold, b, c));
            }
        }
    }
    y.check_finite("garrote_derivative");
    return y;
}

// dx += dy .* dgarrote/dx, dthreshold += dy .* dgarrote/dt (summed spatially)
template <typename Real>
void garrote_backward(const Tensor<Real>& x, const Tensor<Real>& threshold, const Tensor<Real>& dy,
                      Tensor<Real>& dx, Tensor<Real>& dthreshold) {
    const std::int64_t B = x.dim(0), HW = x.dim(1) * x.dim(2), C = x.dim(3);
    for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t p = 0; p < HW; ++p) {
            const std::int64_t base = (b * HW + p) * C;
            for (std::int64_t c = 0; c < C; ++c) {
                const Real xv = x[base + c];
                const Real t = detail::threshold_at(threshold, b, c);
                if (std::abs(xv) < t || t == Real(0)) {
                    if (t == Real(0)) dx[base + c] += dy[base + c];
                    continue;
                }
                const Real denom = xv + Real(kGarroteEps);
                dx[base + c] += dy[base + c] * (Real(1) + (t * t) / (denom * denom));
                dthreshold.at2(b, c) += dy[base + c] * (Real(-2) * t / denom);
            }
        }
    }
}

// One coefficient path of the dual-path threshold subnetwork:
// dense C->C, batch norm, ReLU, dense C->C, sigmoid.
template <typename Real>
struct CoefficientPath {
    DenseLayer<Real> fc1, fc2;
    BatchNormLayer<Real> bn;
    ActivationLayer<Real> relu{Activation::Relu};

    CoefficientPath() = default;
    CoefficientPath(std::int64_t channels, const std::string& prefix, Rng& rng)
        : fc1(channels, channels, prefix + "fc1.", rng),
          fc2(channels, channels, prefix + "fc2.", rng),
          bn(channels, prefix + "bn.") {}

    Tensor<Real> forward(const Tensor<Real>& pooled, Mode mode) {
        Tensor<Real> h = relu.forward(bn.forward(fc1.forward(pooled), mode));
        sig_ = pointwise_activation(fc2.forward(h), Activation::Sigmoid);
        return sig_;
    }

    Tensor<Real> backward(const Tensor<Real>& dcoef) {
        Tensor<Real> dpre(sig_.shape());
        pointwise_activation_backward(sig_, sig_, dcoef, Activation::Sigmoid, dpre);
        return fc1.backward(bn.backward(relu.backward(fc2.backward(dpre))));
    }

    Real relu_kink_margin() const { return relu.min_abs_input(); }

    std::vector<Parameter<Real>*> parameters() {
        std::vector<Parameter<Real>*> out;
        for (auto* p : fc1.parameters()) out.push_back(p);
        for (auto* p : bn.parameters()) out.push_back(p);
        for (auto* p : fc2.parameters()) out.push_back(p);
        return out;
    }
    std::vector<NamedBuffer<Real>> buffers() { return bn.buffers(); }

private:
    Tensor<Real> sig_;
};

// Learnable adaptive threshold: kappa * (gamma * alpha + (1 - gamma) * beta)
// with alpha from the GAP path and beta from the GMP path, both computed on
// the absolute feature map. gamma and kappa are stored unconstrained and
// mapped through logistic/softplus so the convex combination stays valid.
template <typename Real>
struct ShrinkageState {
    Parameter<Real> gamma_raw, kappa_raw;
    CoefficientPath<Real> gap_path, gmp_path;

    ShrinkageState() = default;
    ShrinkageState(std::int64_t channels, const std::string& prefix, Rng& rng)
        : gamma_raw(Shape{1}, prefix + "gamma_raw"),
          kappa_raw(Shape{1}, prefix + "kappa_raw"),
          gap_path(channels, prefix + "gap.", rng),
          gmp_path(channels, prefix + "gmp.", rng) {
        // gamma = 0.5, kappa = 1
        gamma_raw.value[0] = Real(0);
        kappa_raw.value[0] = Real(0.54132485461292);  // softplus^-1(1)
    }

    Real gamma() const { return sigmoid_scalar(gamma_raw.value[0]); }
    Real kappa() const {
        const Real x = kappa_raw.value[0];
        return std::log1p(std::exp(-std::abs(x))) + std::max(x, Real(0));
    }

    // features: B x H x W x C; returns per-sample thresholds B x C. GAP and
    // GMP of the absolute map are computed in a single pass without
    // materializing |features|.
    Tensor<Real> adaptive_threshold(const Tensor<Real>& features, Mode mode) {
        features_shape_ = features.shape();
        const std::int64_t B = features.dim(0), HW = features.dim(1) * features.dim(2),
                           C = features.dim(3);
        Tensor<Real> gap(Shape{B, C});
        Tensor<Real> gmp(Shape{B, C});
        max_index_.assign(static_cast<std::size_t>(B * C), 0);
        for (std::int64_t b = 0; b < B; ++b) {
            Real* avg = gap.data() + b * C;
            Real* mx = gmp.data() + b * C;
            std::int64_t* arg = max_index_.data() + b * C;
            for (std::int64_t c = 0; c < C; ++c) mx[c] = Real(-1);
            for (std::int64_t p = 0; p < HW; ++p) {
                const Real* row = features.data() + (b * HW + p) * C;
                for (std::int64_t c = 0; c < C; ++c) {
                    const Real a = std::abs(row[c]);
                    avg[c] += a;
                    if (a > mx[c]) {
                        mx[c] = a;
                        arg[c] = p;
                    }
                }
            }
            for (std::int64_t c = 0; c < C; ++c) avg[c] /= Real(HW);
        }
        alpha_ = gap_path.forward(gap, mode);
        beta_ = gmp_path.forward(gmp, mode);
        const Real g = gamma(), k = kappa();
        Tensor<Real> t(alpha_.shape());
        for (std::int64_t i = 0; i < t.numel(); ++i) {
            t[i] = k * (g * alpha_[i] + (Real(1) - g) * beta_[i]);
        }
        t.check_finite("adaptive_threshold");
        return t;
    }

    // dthreshold: B x C; features must be the tensor passed to the matching
    // adaptive_threshold call (the caller owns that cache). Returns the
    // gradient w.r.t. the feature map.
    Tensor<Real> backward(const Tensor<Real>& dthreshold, const Tensor<Real>& features) {
        const Real g = gamma(), k = kappa();
        const Real dsig_gamma = g * (Real(1) - g);
        const Real dsoftplus_kappa = sigmoid_scalar(kappa_raw.value[0]);
        Tensor<Real> dalpha(alpha_.shape()), dbeta(beta_.shape());
        for (std::int64_t i = 0; i < dthreshold.numel(); ++i) {
            const Real dt = dthreshold[i];
            kappa_raw.grad[0] += dt * (g * alpha_[i] + (Real(1) - g) * beta_[i]) * dsoftplus_kappa;
            gamma_raw.grad[0] += dt * k * (alpha_[i] - beta_[i]) * dsig_gamma;
            dalpha[i] = dt * k * g;
            dbeta[i] = dt * k * (Real(1) - g);
        }
        Tensor<Real> dgap = gap_path.backward(dalpha);
        Tensor<Real> dgmp = gmp_path.backward(dbeta);
        const std::int64_t B = features_shape_[0], HW = features_shape_[1] * features_shape_[2],
                           C = features_shape_[3];
        Tensor<Real> dfeatures(features_shape_);
        for (std::int64_t b = 0; b < B; ++b) {
            const Real* ggap = dgap.data() + b * C;
            for (std::int64_t p = 0; p < HW; ++p) {
                const Real* frow = features.data() + (b * HW + p) * C;
                Real* out = dfeatures.data() + (b * HW + p) * C;
                for (std::int64_t c = 0; c < C; ++c) {
                    const Real sign = frow[c] > Real(0) ? Real(1) : (frow[c] < Real(0) ? Real(-1) : Real(0));
                    out[c] = ggap[c] / Real(HW) * sign;
                }
            }
            for (std::int64_t c = 0; c < C; ++c) {
                const std::int64_t p = max_index_[static_cast<std::size_t>(b * C + c)];
                const Real v = features[(b * HW + p) * C + c];
                const Real sign = v > Real(0) ? Real(1) : (v < Real(0) ? Real(-1) : Real(0));
                dfeatures[(b * HW + p) * C + c] += dgmp.at2(b, c) * sign;
            }
        }
        return dfeatures;
    }

    Real relu_kink_margin() const {
        return std::min(gap_path.relu_kink_margin(), gmp_path.relu_kink_margin());
    }

    std::vector<Parameter<Real>*> parameters() {
        std::vector<Parameter<Real>*> out{&gamma_raw, &kappa_raw};
        for (auto* p : gap_path.parameters()) out.push_back(p);
        for (auto* p : gmp_path.parameters()) out.push_back(p);
        return out;
    }
    std::vector<NamedBuffer<Real>> buffers() {
        auto out = gap_path.buffers();
        for (auto& b : gmp_path.buffers()) out.push_back(b);
        return out;
    }

private:
    Shape features_shape_;
    Tensor<Real> alpha_, beta_;
    std::vector<std::int64_t> max_index_;
};

namespace detail {

// smallest distance of the last forward from the sites where finite
// differences of the shrinkage stack degrade: the garrote dead-zone edge
// |.|u.| - t|, the gap between the top two |u| values per channel (max-pool
// argmax switch), and small active-branch denominators |u| where the
// t^2/(u + eps) term has extreme curvature
template <typename Real>
Real garrote_and_gmp_margin(const Tensor<Real>& u, const Tensor<Real>& threshold) {
    Real margin = std::numeric_limits<Real>::max();
    const std::int64_t B = u.dim(0), HW = u.dim(1) * u.dim(2), C = u.dim(3);
    for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t c = 0; c < C; ++c) {
            const Real t = threshold.at2(b, c);
            Real top1 = Real(-1), top2 = Real(-1);
            for (std::int64_t p = 0; p < HW; ++p) {
                const Real a = std::abs(u[(b * HW + p) * C + c]);
                margin = std::min(margin, std::abs(a - t));
                if (a >= t) margin = std::min(margin, a);
                if (a > top1) {
                    top2 = top1;
                    top1 = a;
                } else if (a > top2) {
                    top2 = a;
                }
            }
            if (HW > 1) margin = std::min(margin, top1 - top2);
        }
    }
    return margin;
}

}  // namespace detail

// Denoising block A: identity-shortcut residual block whose conv-path output
// is garrote-thresholded before the residual add. Shape preserving. The conv
// path narrows to floor(C/2) between the two 3x3 convolutions.
template <typename Real>
class ShrinkBlockA {
public:
    Conv2dLayer<Real> conv1, conv2;
    BatchNormLayer<Real> bn1, bn2;
    ActivationLayer<Real> relu{Activation::Relu};
    ShrinkageState<Real> state;

    ShrinkBlockA() = default;
    ShrinkBlockA(std::int64_t channels, const std::string& prefix, Rng& rng)
        : conv1(3, 3, channels, mid_width(channels), 1, Padding::Same, prefix + "conv1.", rng),
          conv2(3, 3, mid_width(channels), channels, 1, Padding::Same, prefix + "conv2.", rng),
          bn1(mid_width(channels), prefix + "bn1."),
          bn2(channels, prefix + "bn2."),
          state(channels, prefix + "thresh.", rng) {}

    static std::int64_t mid_width(std::int64_t channels) { return std::max<std::int64_t>(1, channels / 2); }

    Tensor<Real> forward(const Tensor<Real>& x, Mode mode) {
        x_ = x;
        u_ = bn2.forward(conv2.forward(relu.forward(bn1.forward(conv1.forward(x), mode))), mode);
        threshold_ = state.adaptive_threshold(u_, mode);
        Tensor<Real> y = garrote_apply(u_, threshold_);
        for (std::int64_t i = 0; i < y.numel(); ++i) y[i] += x[i];
        return y;
    }

    Tensor<Real> backward(const Tensor<Real>& dy) {
        Tensor<Real> du(u_.shape());
        Tensor<Real> dthreshold(threshold_.shape());
        garrote_backward(u_, threshold_, dy, du, dthreshold);
        Tensor<Real> du_thresh = state.backward(dthreshold, u_);
        for (std::int64_t i = 0; i < du.numel(); ++i) du[i] += du_thresh[i];
        Tensor<Real> dx = conv1.backward(bn1.backward(relu.backward(conv2.backward(bn2.backward(du)))));
        for (std::int64_t i = 0; i < dx.numel(); ++i) dx[i] += dy[i];
        return dx;
    }

    // distance of the last forward from every non-differentiable site (garrote
    // dead zone, max-pool argmax switches, relu kinks); gradient checks
    // resample inputs until this is comfortably positive
    Real breakpoint_margin() const {
        return std::min({detail::garrote_and_gmp_margin(u_, threshold_), relu.min_abs_input(),
                         state.relu_kink_margin()});
    }

    const Tensor<Real>& last_threshold() const { return threshold_; }

    std::vector<Parameter<Real>*> parameters() {
        std::vector<Parameter<Real>*> out;
        for (auto* p : conv1.parameters()) out.push_back(p);
        for (auto* p : bn1.parameters()) out.push_back(p);
        for (auto* p : conv2.parameters()) out.push_back(p);
        for (auto* p : bn2.parameters()) out.push_back(p);
        for (auto* p : state.parameters()) out.push_back(p);
        return out;
    }
    std::vector<NamedBuffer<Real>> buffers() {
        auto out = bn1.buffers();
        for (auto& b : bn2.buffers()) out.push_back(b);
        for (auto& b : state.buffers()) out.push_back(b);
        return out;
    }

private:
    Tensor<Real> x_, u_, threshold_;
};

// Denoising block B: strided downsampling variant. The main path starts with
// a stride-2 conv doubling the channels; the shortcut is a 1x1 stride-2 conv.
// Maps B x H x W x C -> B x ceil(H/2) x ceil(W/2) x 2C.
template <typename Real>
class ShrinkBlockB {
public:
    Conv2dLayer<Real> conv1, conv2, shortcut;
    BatchNormLayer<Real> bn1, bn2;
    ActivationLayer<Real> relu{Activation::Relu};
    ShrinkageState<Real> state;

    ShrinkBlockB() = default;
    ShrinkBlockB(std::int64_t channels, const std::string& prefix, Rng& rng)
        : conv1(3, 3, channels, 2 * channels, 2, Padding::Same, prefix + "conv1.", rng),
          conv2(3, 3, 2 * channels, 2 * channels, 1, Padding::Same, prefix + "conv2.", rng),
          shortcut(1, 1, channels, 2 * channels, 2, Padding::Same, prefix + "shortcut.", rng),
          bn1(2 * channels, prefix + "bn1."),
          bn2(2 * channels, prefix + "bn2."),
          state(2 * channels, prefix + "thresh.", rng) {}

    Tensor<Real> forward(const Tensor<Real>& x, Mode mode) {
        if (x.dim(1) < 2 || x.dim(2) < 2) {
            throw contract_error("shrink block B needs spatial extents >= 2, got " + x.shape().str());
        }
        u_ = bn2.forward(conv2.forward(relu.forward(bn1.forward(conv1.forward(x), mode))), mode);
        short_ = shortcut.forward(x);
        threshold_ = state.adaptive_threshold(u_, mode);
        Tensor<Real> y = garrote_apply(u_, threshold_);
        for (std::int64_t i = 0; i < y.numel(); ++i) y[i] += short_[i];
        return y;
    }

    Tensor<Real> backward(const Tensor<Real>& dy) {
        Tensor<Real> du(u_.shape());
        Tensor<Real> dthreshold(threshold_.shape());
        garrote_backward(u_, threshold_, dy, du, dthreshold);
        Tensor<Real> du_thresh = state.backward(dthreshold, u_);
        for (std::int64_t i = 0; i < du.numel(); ++i) du[i] += du_thresh[i];
        Tensor<Real> dx = conv1.backward(bn1.backward(relu.backward(conv2.backward(bn2.backward(du)))));
        Tensor<Real> dx_short = shortcut.backward(dy);
        for (std::int64_t i = 0; i < dx.numel(); ++i) dx[i] += dx_short[i];
        return dx;
    }

    Real breakpoint_margin() const {
        return std::min({detail::garrote_and_gmp_margin(u_, threshold_), relu.min_abs_input(),
                         state.relu_kink_margin()});
    }

    const Tensor<Real>& last_threshold() const { return threshold_; }

    std::vector<Parameter<Real>*> parameters() {
        std::vector<Parameter<Real>*> out;
        for (auto* p : conv1.parameters()) out.push_back(p);
        for (auto* p : bn1.parameters()) out.push_back(p);
        for (auto* p : conv2.parameters()) out.push_back(p);
        for (auto* p : bn2.parameters()) out.push_back(p);
        for (auto* p : shortcut.parameters()) out.push_back(p);
        for (auto* p : state.parameters()) out.push_back(p);
        return out;
    }
    std::vector<NamedBuffer<Real>> buffers() {
        auto out = bn1.buffers();
        for (auto& b : bn2.buffers()) out.push_back(b);
        for (auto& b : state.buffers()) out.push_back(b);
        return out;
    }

private:
    Tensor<Real> u_, short_, threshold_;
};

}  // namespace iqshrink

#endif
