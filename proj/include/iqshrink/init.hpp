#ifndef IQSHRINK_INIT_HPP
#define IQSHRINK_INIT_HPP

#include <cmath>
#include <cstdint>
#include <vector>

#include "iqshrink/rng.hpp"
#include "iqshrink/tensor.hpp"

namespace iqshrink {

template <typename Real>
void init_glorot_uniform(Tensor<Real>& t, std::int64_t fan_in, std::int64_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        t[i] = static_cast<Real>(rng.uniform(-limit, limit));
    }
}

// Orthogonal rows for a wide matrix (rows <= cols): draws a Gaussian
// cols x rows matrix, orthonormalizes its columns by modified Gram-Schmidt,
// and transposes.
template <typename Real>
void init_orthogonal_rows(Tensor<Real>& t, Rng& rng) {
    const std::int64_t rows = t.dim(0), cols = t.dim(1);
    const std::int64_t m = cols, n = rows;  // tall working matrix m x n, m >= n
    std::vector<double> a(static_cast<std::size_t>(m * n));
    for (auto& v : a) v = rng.normal();
    for (std::int64_t j = 0; j < n; ++j) {
        for (std::int64_t k = 0; k < j; ++k) {
            double dot = 0.0;
            for (std::int64_t i = 0; i < m; ++i) {
                dot += a[static_cast<std::size_t>(i * n + k)] * a[static_cast<std::size_t>(i * n + j)];
            }
            for (std::int64_t i = 0; i < m; ++i) {
                a[static_cast<std::size_t>(i * n + j)] -= dot * a[static_cast<std::size_t>(i * n + k)];
            }
        }
        double norm = 0.0;
        for (std::int64_t i = 0; i < m; ++i) {
            const double v = a[static_cast<std::size_t>(i * n + j)];
            norm += v * v;
        }
        norm = std::sqrt(norm);
        if (norm < 1e-12) norm = 1.0;  // astronomically unlikely; keeps the init defined
        for (std::int64_t i = 0; i < m; ++i) a[static_cast<std::size_t>(i * n + j)] /= norm;
    }
    for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t c = 0; c < cols; ++c) {
            t.at2(r, c) = static_cast<Real>(a[static_cast<std::size_t>(c * rows + r)]);
        }
    }
}

}  // namespace iqshrink

#endif
