#ifndef IQSHRINK_LINEAR_HPP
#define IQSHRINK_LINEAR_HPP

#include <cstdint>

#include "iqshrink/ops.hpp"
#include "iqshrink/tensor.hpp"

namespace iqshrink {

inline Shape replace_last(const Shape& s, std::int64_t n) {
    Shape out = s;
    out.dim[static_cast<std::size_t>(s.rank - 1)] = n;
    return out;
}

// y = x . w (+ bias), applied to every row of the flattened leading dims.
template <typename Real>
Tensor<Real> linear(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>* bias) {
    const std::int64_t k = x.dim(x.rank() - 1);
    if (w.rank() != 2 || w.dim(0) != k) {
        throw contract_error("linear shape mismatch: " + x.shape().str() + " * " + w.shape().str());
    }
    const std::int64_t n = w.dim(1);
    const std::int64_t rows = x.numel() / k;
    Tensor<Real> y(replace_last(x.shape(), n));
    for (std::int64_t r = 0; r < rows; ++r) {
        const Real* in = x.data() + r * k;
        Real* out = y.data() + r * n;
        if (bias) {
            for (std::int64_t j = 0; j < n; ++j) out[j] = (*bias)[j];
        }
        for (std::int64_t p = 0; p < k; ++p) {
            const Real v = in[p];
            const Real* wrow = w.data() + p * n;
            for (std::int64_t j = 0; j < n; ++j) out[j] += v * wrow[j];
        }
    }
    y.check_finite("linear");
    return y;
}

template <typename Real>
void linear_backward(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& dy,
                     Tensor<Real>& dx, Tensor<Real>& dw, Tensor<Real>* dbias) {
    const std::int64_t k = x.dim(x.rank() - 1);
    const std::int64_t n = w.dim(1);
    const std::int64_t rows = x.numel() / k;
    for (std::int64_t r = 0; r < rows; ++r) {
        const Real* in = x.data() + r * k;
        const Real* g = dy.data() + r * n;
        Real* gin = dx.data() + r * k;
        for (std::int64_t p = 0; p < k; ++p) {
            const Real* wrow = w.data() + p * n;
            Real* dwrow = dw.data() + p * n;
            const Real v = in[p];
            gin[p] += dot_lanes(g, wrow, n);
            for (std::int64_t j = 0; j < n; ++j) dwrow[j] += v * g[j];
        }
        if (dbias) {
            for (std::int64_t j = 0; j < n; ++j) (*dbias)[j] += g[j];
        }
    }
}

}  // namespace iqshrink

#endif
