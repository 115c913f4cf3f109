#ifndef IQSHRINK_OPS_HPP
#define IQSHRINK_OPS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "iqshrink/tensor.hpp"

namespace iqshrink {

enum class Mode {
    Train,  // batch statistics, running stats updated
    Eval,   // running statistics only
    Check,  // batch statistics, no side effects (gradient checking)
};

enum class Activation { Gelu, Relu, Sigmoid, Tanh };
enum class Padding { Same, Valid };
enum class PoolKind { Average, Max };

// Deterministic lane-blocked dot product: eight independent partial sums
// combined in a fixed tree. The summation order never depends on thread
// count or scheduling, so results stay bitwise reproducible while the lanes
// let the loop vectorize.
template <typename Real>
inline Real dot_lanes(const Real* a, const Real* b, std::int64_t n) {
    Real lane[8] = {Real(0), Real(0), Real(0), Real(0), Real(0), Real(0), Real(0), Real(0)};
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        for (int l = 0; l < 8; ++l) lane[l] += a[i + l] * b[i + l];
    }
    for (int l = 0; i < n; ++i, ++l) lane[l] += a[i] * b[i];
    return ((lane[0] + lane[1]) + (lane[2] + lane[3])) + ((lane[4] + lane[5]) + (lane[6] + lane[7]));
}

// strided variant for stride-2 convolution rows
template <typename Real>
inline Real dot_lanes_stride2(const Real* a, const Real* b, std::int64_t n) {
    Real lane[8] = {Real(0), Real(0), Real(0), Real(0), Real(0), Real(0), Real(0), Real(0)};
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        for (int l = 0; l < 8; ++l) lane[l] += a[2 * (i + l)] * b[i + l];
    }
    for (int l = 0; i < n; ++i, ++l) lane[l] += a[2 * i] * b[i];
    return ((lane[0] + lane[1]) + (lane[2] + lane[3])) + ((lane[4] + lane[5]) + (lane[6] + lane[7]));
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw contract_error("matmul shape mismatch: " + a.shape().str() + " * " + b.shape().str());
    }
    const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<Real> c(Shape{m, n});
    for (std::int64_t i = 0; i < m; ++i) {
        const Real* arow = a.data() + i * k;
        Real* crow = c.data() + i * n;
        for (std::int64_t p = 0; p < k; ++p) {
            const Real av = arow[p];
            const Real* brow = b.data() + p * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    c.check_finite("matmul");
    return c;
}

// dA += dC * B^T, dB += A^T * dC
template <typename Real>
void matmul_backward(const Tensor<Real>& a, const Tensor<Real>& b, const Tensor<Real>& dc,
                     Tensor<Real>& da, Tensor<Real>& db) {
    const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    for (std::int64_t i = 0; i < m; ++i) {
        const Real* dcrow = dc.data() + i * n;
        Real* darow = da.data() + i * k;
        for (std::int64_t p = 0; p < k; ++p) {
            darow[p] += dot_lanes(dcrow, b.data() + p * n, n);
        }
        const Real* arow = a.data() + i * k;
        for (std::int64_t p = 0; p < k; ++p) {
            const Real av = arow[p];
            Real* dbrow = db.data() + p * n;
            for (std::int64_t j = 0; j < n; ++j) dbrow[j] += av * dcrow[j];
        }
    }
}

// ---------------------------------------------------------------------------
// softmax over the last dimension
// ---------------------------------------------------------------------------

template <typename Real>
Tensor<Real> softmax_lastdim(const Tensor<Real>& x) {
    if (x.rank() < 1 || x.dim(x.rank() - 1) < 1) {
        throw contract_error("softmax_lastdim needs last dimension >= 1, got " + x.shape().str());
    }
    const std::int64_t d = x.dim(x.rank() - 1);
    const std::int64_t rows = x.numel() / d;
    Tensor<Real> y(x.shape());
    for (std::int64_t r = 0; r < rows; ++r) {
        const Real* in = x.data() + r * d;
        Real* out = y.data() + r * d;
        Real mx = in[0];
        for (std::int64_t j = 1; j < d; ++j) mx = std::max(mx, in[j]);
        Real sum = Real(0);
        for (std::int64_t j = 0; j < d; ++j) {
            out[j] = std::exp(in[j] - mx);
            sum += out[j];
        }
        const Real inv = Real(1) / sum;
        for (std::int64_t j = 0; j < d; ++j) out[j] *= inv;
    }
    y.check_finite("softmax_lastdim");
    return y;
}

// dx from cached output y: dx = y .* (dy - sum(dy .* y)) per slice
template <typename Real>
void softmax_lastdim_backward(const Tensor<Real>& y, const Tensor<Real>& dy, Tensor<Real>& dx) {
    const std::int64_t d = y.dim(y.rank() - 1);
    const std::int64_t rows = y.numel() / d;
    for (std::int64_t r = 0; r < rows; ++r) {
        const Real* yv = y.data() + r * d;
        const Real* g = dy.data() + r * d;
        Real* out = dx.data() + r * d;
        Real dot = Real(0);
        for (std::int64_t j = 0; j < d; ++j) dot += g[j] * yv[j];
        for (std::int64_t j = 0; j < d; ++j) out[j] += yv[j] * (g[j] - dot);
    }
}

// ---------------------------------------------------------------------------
// layer normalization over the last dimension
// ---------------------------------------------------------------------------

template <typename Real>
struct LayerNormCache {
    Tensor<Real> xhat;
    std::vector<Real> inv_std;  // one per normalized slice
};

template <typename Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gain, const Tensor<Real>& bias,
                        Real eps, LayerNormCache<Real>* cache = nullptr) {
    const std::int64_t d = x.dim(x.rank() - 1);
    if (gain.numel() != d || bias.numel() != d) {
        throw contract_error("layer_norm gain/bias length must equal last extent " + std::to_string(d));
    }
    if (!(eps > Real(0))) throw contract_error("layer_norm eps must be positive");
    const std::int64_t rows = x.numel() / d;
    Tensor<Real> y(x.shape());
    if (cache) {
        cache->xhat = Tensor<Real>(x.shape());
        cache->inv_std.assign(static_cast<std::size_t>(rows), Real(0));
    }
    for (std::int64_t r = 0; r < rows; ++r) {
        const Real* in = x.data() + r * d;
        Real* out = y.data() + r * d;
        Real mean = Real(0);
        for (std::int64_t j = 0; j < d; ++j) mean += in[j];
        mean /= Real(d);
        Real var = Real(0);
        for (std::int64_t j = 0; j < d; ++j) {
            const Real t = in[j] - mean;
            var += t * t;
        }
        var /= Real(d);
        const Real inv = Real(1) / std::sqrt(var + eps);
        for (std::int64_t j = 0; j < d; ++j) {
            const Real xh = (in[j] - mean) * inv;
            out[j] = gain[j] * xh + bias[j];
            if (cache) cache->xhat.data()[r * d + j] = xh;
        }
        if (cache) cache->inv_std[static_cast<std::size_t>(r)] = inv;
    }
    y.check_finite("layer_norm");
    return y;
}

template <typename Real>
void layer_norm_backward(const LayerNormCache<Real>& cache, const Tensor<Real>& gain,
                         const Tensor<Real>& dy, Tensor<Real>& dx, Tensor<Real>& dgain,
                         Tensor<Real>& dbias) {
    const std::int64_t d = cache.xhat.dim(cache.xhat.rank() - 1);
    const std::int64_t rows = cache.xhat.numel() / d;
    for (std::int64_t r = 0; r < rows; ++r) {
        const Real* xh = cache.xhat.data() + r * d;
        const Real* g = dy.data() + r * d;
        Real* out = dx.data() + r * d;
        const Real inv = cache.inv_std[static_cast<std::size_t>(r)];
        Real sum_dyg = Real(0), sum_dyg_xh = Real(0);
        for (std::int64_t j = 0; j < d; ++j) {
            const Real dyg = g[j] * gain[j];
            sum_dyg += dyg;
            sum_dyg_xh += dyg * xh[j];
            dgain[j] += g[j] * xh[j];
            dbias[j] += g[j];
        }
        const Real m1 = sum_dyg / Real(d);
        const Real m2 = sum_dyg_xh / Real(d);
        for (std::int64_t j = 0; j < d; ++j) {
            const Real dyg = g[j] * gain[j];
            out[j] += inv * (dyg - m1 - xh[j] * m2);
        }
    }
}

// ---------------------------------------------------------------------------
// pointwise activations
// ---------------------------------------------------------------------------

template <typename Real>
inline Real gelu_scalar(Real x) {
    // exact Gaussian CDF form: x * Phi(x)
    const Real phi = Real(0.5) * std::erfc(-x * Real(0.70710678118654752440));
    return x * phi;
}

template <typename Real>
inline Real gelu_grad_scalar(Real x) {
    const Real phi = Real(0.5) * std::erfc(-x * Real(0.70710678118654752440));
    const Real pdf = Real(0.39894228040143267794) * std::exp(Real(-0.5) * x * x);
    return phi + x * pdf;
}

template <typename Real>
inline Real sigmoid_scalar(Real x) {
    if (x >= Real(0)) {
        return Real(1) / (Real(1) + std::exp(-x));
    }
    const Real e = std::exp(x);
    return e / (Real(1) + e);
}

template <typename Real>
Tensor<Real> pointwise_activation(const Tensor<Real>& x, Activation kind) {
    Tensor<Real> y(x.shape());
    const std::int64_t n = x.numel();
    switch (kind) {
        case Activation::Gelu:
            for (std::int64_t i = 0; i < n; ++i) y[i] = gelu_scalar(x[i]);
            break;
        case Activation::Relu:
            for (std::int64_t i = 0; i < n; ++i) y[i] = x[i] > Real(0) ? x[i] : Real(0);
            break;
        case Activation::Sigmoid:
            for (std::int64_t i = 0; i < n; ++i) y[i] = sigmoid_scalar(x[i]);
            break;
        case Activation::Tanh:
            for (std::int64_t i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
            break;
    }
    y.check_finite("pointwise_activation");
    return y;
}

// dx += dy .* f'(x); sigmoid/tanh reuse the cached output y.
template <typename Real>
void pointwise_activation_backward(const Tensor<Real>& x, const Tensor<Real>& y,
                                   const Tensor<Real>& dy, Activation kind, Tensor<Real>& dx) {
    const std::int64_t n = x.numel();
    switch (kind) {
        case Activation::Gelu:
            for (std::int64_t i = 0; i < n; ++i) dx[i] += dy[i] * gelu_grad_scalar(x[i]);
            break;
        case Activation::Relu:
            for (std::int64_t i = 0; i < n; ++i) dx[i] += x[i] > Real(0) ? dy[i] : Real(0);
            break;
        case Activation::Sigmoid:
            for (std::int64_t i = 0; i < n; ++i) dx[i] += dy[i] * y[i] * (Real(1) - y[i]);
            break;
        case Activation::Tanh:
            for (std::int64_t i = 0; i < n; ++i) dx[i] += dy[i] * (Real(1) - y[i] * y[i]);
            break;
    }
}

// ---------------------------------------------------------------------------
// conv2d, NHWC input, kernel [kh][kw][Cin][Cout]
// ---------------------------------------------------------------------------

struct ConvGeometry {
    std::int64_t out_h = 0, out_w = 0;
    std::int64_t pad_top = 0, pad_left = 0;
};

inline ConvGeometry conv_geometry(std::int64_t h, std::int64_t w, std::int64_t kh, std::int64_t kw,
                                  int stride, Padding pad) {
    ConvGeometry g;
    if (pad == Padding::Same) {
        g.out_h = (h + stride - 1) / stride;
        g.out_w = (w + stride - 1) / stride;
        const std::int64_t pad_h = std::max<std::int64_t>(0, (g.out_h - 1) * stride + kh - h);
        const std::int64_t pad_w = std::max<std::int64_t>(0, (g.out_w - 1) * stride + kw - w);
        // extra padding goes on the high side when the total is odd
        g.pad_top = pad_h / 2;
        g.pad_left = pad_w / 2;
    } else {
        if (h < kh || w < kw) throw contract_error("conv2d valid padding: input smaller than kernel");
        g.out_h = (h - kh) / stride + 1;
        g.out_w = (w - kw) / stride + 1;
    }
    return g;
}

namespace conv_detail {

// The compute kernel runs on a channel-major scratch copy with the LONGER
// spatial axis contiguous, so the innermost loops vectorize even for narrow
// channel counts and narrow widths. The per-output-element accumulation
// order (ci, then kernel taps) is independent of the packing choice.
struct Axes {
    std::int64_t s0, s1;        // outer, inner spatial extents
    std::int64_t k0, k1;        // kernel extents along outer, inner
    std::int64_t p0, p1;        // pads along outer, inner
    std::int64_t o0, o1;        // output extents along outer, inner
    bool inner_is_h;            // true when the H axis is the contiguous one
};

inline Axes choose_axes(std::int64_t h, std::int64_t w, std::int64_t kh, std::int64_t kw,
                        const ConvGeometry& g) {
    Axes a;
    a.inner_is_h = h >= w;
    if (a.inner_is_h) {
        a.s0 = w;
        a.s1 = h;
        a.k0 = kw;
        a.k1 = kh;
        a.p0 = g.pad_left;
        a.p1 = g.pad_top;
        a.o0 = g.out_w;
        a.o1 = g.out_h;
    } else {
        a.s0 = h;
        a.s1 = w;
        a.k0 = kh;
        a.k1 = kw;
        a.p0 = g.pad_top;
        a.p1 = g.pad_left;
        a.o0 = g.out_h;
        a.o1 = g.out_w;
    }
    return a;
}

// flat kernel index for (tap0, tap1) under the chosen axes
inline std::int64_t kernel_index(const Axes& a, std::int64_t t0, std::int64_t t1, std::int64_t kw,
                                 std::int64_t cin, std::int64_t cout, std::int64_t ci,
                                 std::int64_t co) {
    const std::int64_t ky = a.inner_is_h ? t1 : t0;
    const std::int64_t kx = a.inner_is_h ? t0 : t1;
    return ((ky * kw + kx) * cin + ci) * cout + co;
}

template <typename Real>
void pack(const Real* nhwc, Real* packed, std::int64_t h, std::int64_t w, std::int64_t c,
          bool inner_is_h) {
    if (inner_is_h) {
        for (std::int64_t ch = 0; ch < c; ++ch) {
            for (std::int64_t x = 0; x < w; ++x) {
                Real* dst = packed + (ch * w + x) * h;
                const Real* src = nhwc + x * c + ch;
                for (std::int64_t y = 0; y < h; ++y) dst[y] = src[y * w * c];
            }
        }
    } else {
        for (std::int64_t ch = 0; ch < c; ++ch) {
            Real* dst = packed + ch * h * w;
            const Real* src = nhwc + ch;
            for (std::int64_t p = 0; p < h * w; ++p) dst[p] = src[p * c];
        }
    }
}

template <typename Real>
void unpack_assign(const Real* packed, Real* nhwc, std::int64_t h, std::int64_t w, std::int64_t c,
                   bool inner_is_h) {
    if (inner_is_h) {
        for (std::int64_t ch = 0; ch < c; ++ch) {
            for (std::int64_t x = 0; x < w; ++x) {
                const Real* src = packed + (ch * w + x) * h;
                Real* dst = nhwc + x * c + ch;
                for (std::int64_t y = 0; y < h; ++y) dst[y * w * c] = src[y];
            }
        }
    } else {
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const Real* src = packed + ch * h * w;
            Real* dst = nhwc + ch;
            for (std::int64_t p = 0; p < h * w; ++p) dst[p * c] = src[p];
        }
    }
}

template <typename Real>
void unpack_accumulate(const Real* packed, Real* nhwc, std::int64_t h, std::int64_t w,
                       std::int64_t c, bool inner_is_h) {
    if (inner_is_h) {
        for (std::int64_t ch = 0; ch < c; ++ch) {
            for (std::int64_t x = 0; x < w; ++x) {
                const Real* src = packed + (ch * w + x) * h;
                Real* dst = nhwc + x * c + ch;
                for (std::int64_t y = 0; y < h; ++y) dst[y * w * c] += src[y];
            }
        }
    } else {
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const Real* src = packed + ch * h * w;
            Real* dst = nhwc + ch;
            for (std::int64_t p = 0; p < h * w; ++p) dst[p * c] += src[p];
        }
    }
}

// Valid output bounds along one axis for kernel tap k: positions o with
// i = o*stride + k - pad inside [0, extent).
inline void tap_bounds(std::int64_t k, std::int64_t pad, std::int64_t extent, int stride,
                       std::int64_t out_extent, std::int64_t& lo, std::int64_t& hi) {
    lo = 0;
    while (lo < out_extent && lo * stride + k - pad < 0) ++lo;
    hi = out_extent;
    while (hi > lo && (hi - 1) * stride + k - pad >= extent) --hi;
}

}  // namespace conv_detail

template <typename Real>
Tensor<Real> conv2d(const Tensor<Real>& x, const Tensor<Real>& kernel, int stride, Padding pad) {
    if (x.rank() != 4 || kernel.rank() != 4) {
        throw contract_error("conv2d expects rank-4 input and kernel, got " + x.shape().str() +
                             " and " + kernel.shape().str());
    }
    if (x.dim(3) != kernel.dim(2)) {
        throw contract_error("conv2d channel mismatch: input " + x.shape().str() + " vs kernel " +
                             kernel.shape().str());
    }
    if (stride != 1 && stride != 2) throw contract_error("conv2d stride must be 1 or 2");
    if (kernel.dim(0) % 2 == 0 || kernel.dim(1) % 2 == 0) {
        throw contract_error("conv2d kernel extents must be odd, got " + kernel.shape().str());
    }
    const std::int64_t B = x.dim(0), H = x.dim(1), W = x.dim(2), Cin = x.dim(3);
    const std::int64_t kh = kernel.dim(0), kw = kernel.dim(1), Cout = kernel.dim(3);
    const ConvGeometry g = conv_geometry(H, W, kh, kw, stride, pad);
    const std::int64_t HW = H * W, OHW = g.out_h * g.out_w;
    const conv_detail::Axes a = conv_detail::choose_axes(H, W, kh, kw, g);
    Tensor<Real> y(Shape{B, g.out_h, g.out_w, Cout});

    std::vector<Real> in_c(static_cast<std::size_t>(Cin * HW));
    std::vector<Real> out_c(static_cast<std::size_t>(Cout * OHW));
    for (std::int64_t b = 0; b < B; ++b) {
        conv_detail::pack(x.data() + b * HW * Cin, in_c.data(), H, W, Cin, a.inner_is_h);
        std::fill(out_c.begin(), out_c.end(), Real(0));
        for (std::int64_t co = 0; co < Cout; ++co) {
            Real* acc = out_c.data() + co * OHW;
            for (std::int64_t ci = 0; ci < Cin; ++ci) {
                const Real* in = in_c.data() + ci * HW;
                for (std::int64_t t0 = 0; t0 < a.k0; ++t0) {
                    std::int64_t lo0, hi0;
                    conv_detail::tap_bounds(t0, a.p0, a.s0, stride, a.o0, lo0, hi0);
                    for (std::int64_t t1 = 0; t1 < a.k1; ++t1) {
                        std::int64_t lo1, hi1;
                        conv_detail::tap_bounds(t1, a.p1, a.s1, stride, a.o1, lo1, hi1);
                        const Real kv =
                            kernel[conv_detail::kernel_index(a, t0, t1, kw, Cin, Cout, ci, co)];
                        if (kv == Real(0)) continue;
                        const std::int64_t n = hi1 - lo1;
                        for (std::int64_t o0 = lo0; o0 < hi0; ++o0) {
                            const std::int64_t i0 = o0 * stride + t0 - a.p0;
                            Real* arow = acc + o0 * a.o1 + lo1;
                            const Real* irow = in + i0 * a.s1 + (lo1 * stride + t1 - a.p1);
                            if (stride == 1) {
                                for (std::int64_t i = 0; i < n; ++i) arow[i] += kv * irow[i];
                            } else {
                                for (std::int64_t i = 0; i < n; ++i) arow[i] += kv * irow[2 * i];
                            }
                        }
                    }
                }
            }
        }
        conv_detail::unpack_assign(out_c.data(), y.data() + b * OHW * Cout, g.out_h, g.out_w, Cout,
                                   a.inner_is_h);
    }
    y.check_finite("conv2d");
    return y;
}

template <typename Real>
void conv2d_backward(const Tensor<Real>& x, const Tensor<Real>& kernel, int stride, Padding pad,
                     const Tensor<Real>& dy, Tensor<Real>& dx, Tensor<Real>& dkernel) {
    const std::int64_t B = x.dim(0), H = x.dim(1), W = x.dim(2), Cin = x.dim(3);
    const std::int64_t kh = kernel.dim(0), kw = kernel.dim(1), Cout = kernel.dim(3);
    const ConvGeometry g = conv_geometry(H, W, kh, kw, stride, pad);
    const std::int64_t HW = H * W, OHW = g.out_h * g.out_w;
    const conv_detail::Axes a = conv_detail::choose_axes(H, W, kh, kw, g);

    std::vector<Real> in_c(static_cast<std::size_t>(Cin * HW));
    std::vector<Real> din_c(static_cast<std::size_t>(Cin * HW));
    std::vector<Real> dout_c(static_cast<std::size_t>(Cout * OHW));
    for (std::int64_t b = 0; b < B; ++b) {
        conv_detail::pack(x.data() + b * HW * Cin, in_c.data(), H, W, Cin, a.inner_is_h);
        conv_detail::pack(dy.data() + b * OHW * Cout, dout_c.data(), g.out_h, g.out_w, Cout,
                          a.inner_is_h);
        std::fill(din_c.begin(), din_c.end(), Real(0));
        for (std::int64_t co = 0; co < Cout; ++co) {
            const Real* gout = dout_c.data() + co * OHW;
            for (std::int64_t ci = 0; ci < Cin; ++ci) {
                const Real* in = in_c.data() + ci * HW;
                Real* gin = din_c.data() + ci * HW;
                for (std::int64_t t0 = 0; t0 < a.k0; ++t0) {
                    std::int64_t lo0, hi0;
                    conv_detail::tap_bounds(t0, a.p0, a.s0, stride, a.o0, lo0, hi0);
                    for (std::int64_t t1 = 0; t1 < a.k1; ++t1) {
                        std::int64_t lo1, hi1;
                        conv_detail::tap_bounds(t1, a.p1, a.s1, stride, a.o1, lo1, hi1);
                        const std::int64_t kidx =
                            conv_detail::kernel_index(a, t0, t1, kw, Cin, Cout, ci, co);
                        const Real kv = kernel[kidx];
                        Real kgrad = Real(0);
                        const std::int64_t n = hi1 - lo1;
                        for (std::int64_t o0 = lo0; o0 < hi0; ++o0) {
                            const std::int64_t i0 = o0 * stride + t0 - a.p0;
                            const Real* grow = gout + o0 * a.o1 + lo1;
                            const Real* irow = in + i0 * a.s1 + (lo1 * stride + t1 - a.p1);
                            Real* girow = gin + i0 * a.s1 + (lo1 * stride + t1 - a.p1);
                            if (stride == 1) {
                                kgrad += dot_lanes(irow, grow, n);
                                for (std::int64_t i = 0; i < n; ++i) girow[i] += kv * grow[i];
                            } else {
                                kgrad += dot_lanes_stride2(irow, grow, n);
                                for (std::int64_t i = 0; i < n; ++i) girow[2 * i] += kv * grow[i];
                            }
                        }
                        dkernel[kidx] += kgrad;
                    }
                }
            }
        }
        conv_detail::unpack_accumulate(din_c.data(), dx.data() + b * HW * Cin, H, W, Cin,
                                       a.inner_is_h);
    }
}

// ---------------------------------------------------------------------------
// global pooling over the spatial extent
// ---------------------------------------------------------------------------

template <typename Real>
struct PoolCache {
    std::vector<std::int64_t> argmax;  // flat spatial index per (b, c), max pooling only
};

template <typename Real>
Tensor<Real> pool_global(const Tensor<Real>& x, PoolKind kind, PoolCache<Real>* cache = nullptr) {
    if (x.rank() != 4) throw contract_error("pool_global expects rank-4 input, got " + x.shape().str());
    const std::int64_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    if (H * W < 1) throw contract_error("pool_global needs a non-empty spatial extent");
    Tensor<Real> y(Shape{B, C});
    if (cache) cache->argmax.assign(static_cast<std::size_t>(B * C), 0);
    const std::int64_t HW = H * W;
    for (std::int64_t b = 0; b < B; ++b) {
        Real* out = y.data() + b * C;
        if (kind == PoolKind::Average) {
            for (std::int64_t p = 0; p < HW; ++p) {
                const Real* row = x.data() + (b * HW + p) * C;
                for (std::int64_t c = 0; c < C; ++c) out[c] += row[c];
            }
            for (std::int64_t c = 0; c < C; ++c) out[c] /= Real(HW);
        } else {
            std::int64_t* arg = cache ? cache->argmax.data() + b * C : nullptr;
            for (std::int64_t c = 0; c < C; ++c) out[c] = x[(b * HW) * C + c];
            for (std::int64_t p = 1; p < HW; ++p) {
                const Real* row = x.data() + (b * HW + p) * C;
                for (std::int64_t c = 0; c < C; ++c) {
                    if (row[c] > out[c]) {  // strict: first maximum in scan order wins
                        out[c] = row[c];
                        if (arg) arg[c] = p;
                    }
                }
            }
        }
    }
    y.check_finite("pool_global");
    return y;
}

template <typename Real>
void pool_global_backward(const Shape& input_shape, PoolKind kind, const PoolCache<Real>& cache,
                          const Tensor<Real>& dy, Tensor<Real>& dx) {
    const std::int64_t B = input_shape[0], H = input_shape[1], W = input_shape[2], C = input_shape[3];
    const std::int64_t HW = H * W;
    for (std::int64_t b = 0; b < B; ++b) {
        if (kind == PoolKind::Average) {
            const Real* g = dy.data() + b * C;
            for (std::int64_t p = 0; p < HW; ++p) {
                Real* row = dx.data() + (b * HW + p) * C;
                for (std::int64_t c = 0; c < C; ++c) row[c] += g[c] / Real(HW);
            }
        } else {
            for (std::int64_t c = 0; c < C; ++c) {
                const std::int64_t p = cache.argmax[static_cast<std::size_t>(b * C + c)];
                dx[(b * HW + p) * C + c] += dy.at2(b, c);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// batch normalization over the channel (last) dimension
// ---------------------------------------------------------------------------

template <typename Real>
struct BatchNormCache {
    Tensor<Real> xhat;
    std::vector<Real> inv_std;  // per channel
    Mode mode = Mode::Train;
};

template <typename Real>
Tensor<Real> batch_norm(const Tensor<Real>& x, const Tensor<Real>& scale, const Tensor<Real>& offset,
                        Tensor<Real>& running_mean, Tensor<Real>& running_var, Mode mode,
                        Real momentum, Real eps, BatchNormCache<Real>* cache = nullptr) {
    const std::int64_t C = x.dim(x.rank() - 1);
    if (scale.numel() != C || offset.numel() != C || running_mean.numel() != C ||
        running_var.numel() != C) {
        throw contract_error("batch_norm statistics vectors must match channel extent " +
                             std::to_string(C));
    }
    if (!(momentum > Real(0) && momentum < Real(1))) {
        throw contract_error("batch_norm momentum must lie in (0,1)");
    }
    const std::int64_t N = x.numel() / C;
    Tensor<Real> y(x.shape());
    if (cache) {
        cache->xhat = Tensor<Real>(x.shape());
        cache->inv_std.assign(static_cast<std::size_t>(C), Real(0));
        cache->mode = mode;
    }
    std::vector<Real> mean(static_cast<std::size_t>(C), Real(0));
    std::vector<Real> var(static_cast<std::size_t>(C), Real(0));
    if (mode == Mode::Eval) {
        for (std::int64_t c = 0; c < C; ++c) {
            mean[static_cast<std::size_t>(c)] = running_mean[c];
            var[static_cast<std::size_t>(c)] = running_var[c];
        }
    } else {
        for (std::int64_t r = 0; r < N; ++r) {
            const Real* row = x.data() + r * C;
            for (std::int64_t c = 0; c < C; ++c) mean[static_cast<std::size_t>(c)] += row[c];
        }
        for (std::int64_t c = 0; c < C; ++c) mean[static_cast<std::size_t>(c)] /= Real(N);
        for (std::int64_t r = 0; r < N; ++r) {
            const Real* row = x.data() + r * C;
            for (std::int64_t c = 0; c < C; ++c) {
                const Real t = row[c] - mean[static_cast<std::size_t>(c)];
                var[static_cast<std::size_t>(c)] += t * t;
            }
        }
        for (std::int64_t c = 0; c < C; ++c) var[static_cast<std::size_t>(c)] /= Real(N);
        if (mode == Mode::Train) {
            for (std::int64_t c = 0; c < C; ++c) {
                running_mean[c] = momentum * running_mean[c] +
                                  (Real(1) - momentum) * mean[static_cast<std::size_t>(c)];
                running_var[c] = momentum * running_var[c] +
                                 (Real(1) - momentum) * var[static_cast<std::size_t>(c)];
            }
        }
    }
    std::vector<Real> inv(static_cast<std::size_t>(C));
    for (std::int64_t c = 0; c < C; ++c) {
        inv[static_cast<std::size_t>(c)] = Real(1) / std::sqrt(var[static_cast<std::size_t>(c)] + eps);
    }
    for (std::int64_t r = 0; r < N; ++r) {
        const Real* row = x.data() + r * C;
        Real* yrow = y.data() + r * C;
        Real* xhrow = cache ? cache->xhat.data() + r * C : nullptr;
        for (std::int64_t c = 0; c < C; ++c) {
            const std::size_t cc = static_cast<std::size_t>(c);
            const Real xh = (row[c] - mean[cc]) * inv[cc];
            yrow[c] = scale[c] * xh + offset[c];
            if (xhrow) xhrow[c] = xh;
        }
    }
    if (cache) cache->inv_std = inv;
    y.check_finite("batch_norm");
    return y;
}

template <typename Real>
void batch_norm_backward(const BatchNormCache<Real>& cache, const Tensor<Real>& scale,
                         const Tensor<Real>& dy, Tensor<Real>& dx, Tensor<Real>& dscale,
                         Tensor<Real>& doffset) {
    const std::int64_t C = cache.xhat.dim(cache.xhat.rank() - 1);
    const std::int64_t N = cache.xhat.numel() / C;
    std::vector<Real> sum_dy(static_cast<std::size_t>(C), Real(0));
    std::vector<Real> sum_dy_xh(static_cast<std::size_t>(C), Real(0));
    for (std::int64_t r = 0; r < N; ++r) {
        const Real* grow = dy.data() + r * C;
        const Real* xhrow = cache.xhat.data() + r * C;
        for (std::int64_t c = 0; c < C; ++c) {
            sum_dy[static_cast<std::size_t>(c)] += grow[c];
            sum_dy_xh[static_cast<std::size_t>(c)] += grow[c] * xhrow[c];
        }
    }
    for (std::int64_t c = 0; c < C; ++c) {
        dscale[c] += sum_dy_xh[static_cast<std::size_t>(c)];
        doffset[c] += sum_dy[static_cast<std::size_t>(c)];
    }
    if (cache.mode == Mode::Eval) {
        // statistics are constants in eval mode
        for (std::int64_t r = 0; r < N; ++r) {
            const Real* grow = dy.data() + r * C;
            Real* out = dx.data() + r * C;
            for (std::int64_t c = 0; c < C; ++c) {
                out[c] += grow[c] * scale[c] * cache.inv_std[static_cast<std::size_t>(c)];
            }
        }
        return;
    }
    std::vector<Real> m1(static_cast<std::size_t>(C)), m2(static_cast<std::size_t>(C));
    for (std::int64_t c = 0; c < C; ++c) {
        m1[static_cast<std::size_t>(c)] = sum_dy[static_cast<std::size_t>(c)] / Real(N);
        m2[static_cast<std::size_t>(c)] = sum_dy_xh[static_cast<std::size_t>(c)] / Real(N);
    }
    for (std::int64_t r = 0; r < N; ++r) {
        const Real* grow = dy.data() + r * C;
        const Real* xhrow = cache.xhat.data() + r * C;
        Real* out = dx.data() + r * C;
        for (std::int64_t c = 0; c < C; ++c) {
            const std::size_t cc = static_cast<std::size_t>(c);
            out[c] += scale[c] * cache.inv_std[cc] * (grow[c] - m1[cc] - xhrow[c] * m2[cc]);
        }
    }
}

}  // namespace iqshrink

#endif
