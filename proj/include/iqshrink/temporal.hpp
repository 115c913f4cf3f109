#ifndef IQSHRINK_TEMPORAL_HPP
#define IQSHRINK_TEMPORAL_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "iqshrink/init.hpp"
#include "iqshrink/tensor.hpp"

namespace iqshrink {

// Standard LSTM over B x T x 2 input, returning the full hidden sequence
// B x T x Units. Gate order in the fused kernels: input, forget, cell, output.
// Zero initial hidden and cell state.
template <typename Real>
class LstmLayer {
public:
    Parameter<Real> w_in;   // 2 x 4U
    Parameter<Real> w_rec;  // U x 4U
    Parameter<Real> bias;   // 4U, forget-gate slice initialized to 1

    LstmLayer() = default;
    LstmLayer(std::int64_t units, const std::string& prefix, Rng& rng)
        : w_in(Shape{2, 4 * units}, prefix + "w_in"),
          w_rec(Shape{units, 4 * units}, prefix + "w_rec"),
          bias(Shape{4 * units}, prefix + "bias"),
          units_(units) {
        init_glorot_uniform(w_in.value, 2, 4 * units, rng);
        init_orthogonal_rows(w_rec.value, rng);
        for (std::int64_t j = units; j < 2 * units; ++j) bias.value[j] = Real(1);
    }

    std::int64_t units() const { return units_; }

    Tensor<Real> forward(const Tensor<Real>& x) {
        if (x.rank() != 3 || x.dim(2) != 2) {
            throw contract_error("lstm expects B x T x 2 input, got " + x.shape().str());
        }
        x_ = x;
        const std::int64_t B = x.dim(0), T = x.dim(1), U = units_;
        gates_ = Tensor<Real>(Shape{B, T, 4 * U});  // post-activation gate values
        cells_ = Tensor<Real>(Shape{B, T, U});
        tanh_c_ = Tensor<Real>(Shape{B, T, U});
        Tensor<Real> h(Shape{B, T, U});
        std::vector<Real> hprev(static_cast<std::size_t>(U));
        std::vector<Real> cprev(static_cast<std::size_t>(U));
        std::vector<Real> z(static_cast<std::size_t>(4 * U));
        for (std::int64_t b = 0; b < B; ++b) {
            std::fill(hprev.begin(), hprev.end(), Real(0));
            std::fill(cprev.begin(), cprev.end(), Real(0));
            for (std::int64_t t = 0; t < T; ++t) {
                const Real x0 = x.at3(b, t, 0), x1 = x.at3(b, t, 1);
                for (std::int64_t j = 0; j < 4 * U; ++j) {
                    z[static_cast<std::size_t>(j)] =
                        bias.value[j] + x0 * w_in.value.at2(0, j) + x1 * w_in.value.at2(1, j);
                }
                for (std::int64_t u = 0; u < U; ++u) {
                    const Real hv = hprev[static_cast<std::size_t>(u)];
                    if (hv == Real(0)) continue;
                    const Real* wrow = w_rec.value.data() + u * 4 * U;
                    for (std::int64_t j = 0; j < 4 * U; ++j) z[static_cast<std::size_t>(j)] += hv * wrow[j];
                }
                Real* g = gates_.data() + (b * T + t) * 4 * U;
                for (std::int64_t u = 0; u < U; ++u) {
                    const Real gi = sigmoid_scalar(z[static_cast<std::size_t>(u)]);
                    const Real gf = sigmoid_scalar(z[static_cast<std::size_t>(U + u)]);
                    const Real gg = std::tanh(z[static_cast<std::size_t>(2 * U + u)]);
                    const Real go = sigmoid_scalar(z[static_cast<std::size_t>(3 * U + u)]);
                    const Real c = gf * cprev[static_cast<std::size_t>(u)] + gi * gg;
                    const Real tc = std::tanh(c);
                    g[u] = gi;
                    g[U + u] = gf;
                    g[2 * U + u] = gg;
                    g[3 * U + u] = go;
                    cells_.at3(b, t, u) = c;
                    tanh_c_.at3(b, t, u) = tc;
                    h.at3(b, t, u) = go * tc;
                    hprev[static_cast<std::size_t>(u)] = go * tc;
                    cprev[static_cast<std::size_t>(u)] = c;
                }
            }
        }
        h.check_finite("lstm_forward");
        h_ = h;
        return h;
    }

    // Backpropagation through time; returns dx (B x T x 2).
    Tensor<Real> backward(const Tensor<Real>& dh_seq) {
        const std::int64_t B = x_.dim(0), T = x_.dim(1), U = units_;
        Tensor<Real> dx(x_.shape());
        std::vector<Real> dh(static_cast<std::size_t>(U));
        std::vector<Real> dc(static_cast<std::size_t>(U));
        std::vector<Real> dz(static_cast<std::size_t>(4 * U));
        for (std::int64_t b = 0; b < B; ++b) {
            std::fill(dh.begin(), dh.end(), Real(0));
            std::fill(dc.begin(), dc.end(), Real(0));
            for (std::int64_t t = T - 1; t >= 0; --t) {
                const Real* g = gates_.data() + (b * T + t) * 4 * U;
                for (std::int64_t u = 0; u < U; ++u) {
                    const Real gi = g[u], gf = g[U + u], gg = g[2 * U + u], go = g[3 * U + u];
                    const Real tc = tanh_c_.at3(b, t, u);
                    const Real dout = dh[static_cast<std::size_t>(u)] + dh_seq.at3(b, t, u);
                    const Real dct = dc[static_cast<std::size_t>(u)] + dout * go * (Real(1) - tc * tc);
                    const Real cprev = t > 0 ? cells_.at3(b, t - 1, u) : Real(0);
                    dz[static_cast<std::size_t>(u)] = dct * gg * gi * (Real(1) - gi);
                    dz[static_cast<std::size_t>(U + u)] = dct * cprev * gf * (Real(1) - gf);
                    dz[static_cast<std::size_t>(2 * U + u)] = dct * gi * (Real(1) - gg * gg);
                    dz[static_cast<std::size_t>(3 * U + u)] = dout * tc * go * (Real(1) - go);
                    dc[static_cast<std::size_t>(u)] = dct * gf;
                }
                const Real x0 = x_.at3(b, t, 0), x1 = x_.at3(b, t, 1);
                Real dx0 = Real(0), dx1 = Real(0);
                for (std::int64_t j = 0; j < 4 * U; ++j) {
                    const Real dzj = dz[static_cast<std::size_t>(j)];
                    dx0 += dzj * w_in.value.at2(0, j);
                    dx1 += dzj * w_in.value.at2(1, j);
                    w_in.grad.at2(0, j) += dzj * x0;
                    w_in.grad.at2(1, j) += dzj * x1;
                    bias.grad[j] += dzj;
                }
                dx.at3(b, t, 0) += dx0;
                dx.at3(b, t, 1) += dx1;
                if (t > 0) {
                    for (std::int64_t u = 0; u < U; ++u) {
                        const Real hprev = h_.at3(b, t - 1, u);
                        const Real* wrow = w_rec.value.data() + u * 4 * U;
                        Real* gwrow = w_rec.grad.data() + u * 4 * U;
                        Real acc = Real(0);
                        for (std::int64_t j = 0; j < 4 * U; ++j) {
                            const Real dzj = dz[static_cast<std::size_t>(j)];
                            acc += dzj * wrow[j];
                            gwrow[j] += dzj * hprev;
                        }
                        dh[static_cast<std::size_t>(u)] = acc;
                    }
                } else {
                    std::fill(dh.begin(), dh.end(), Real(0));
                }
            }
        }
        return dx;
    }

    std::vector<Parameter<Real>*> parameters() { return {&w_in, &w_rec, &bias}; }

private:
    std::int64_t units_ = 0;
    Tensor<Real> x_, gates_, cells_, tanh_c_, h_;
};

// Zero-pad the width axis from 2 to Units. The original token rows occupy
// width indices 0 and 1.
template <typename Real>
Tensor<Real> pad_width(const Tensor<Real>& f, std::int64_t units) {
    if (units < 2) throw contract_error("pad_width requires Units >= 2");
    if (f.rank() != 4 || f.dim(2) != 2) {
        throw contract_error("pad_width expects B x T x 2 x C input, got " + f.shape().str());
    }
    const std::int64_t B = f.dim(0), T = f.dim(1), C = f.dim(3);
    Tensor<Real> out(Shape{B, T, units, C});
    for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t t = 0; t < T; ++t) {
            for (std::int64_t tok = 0; tok < 2; ++tok) {
                const Real* src = f.data() + ((b * T + t) * 2 + tok) * C;
                Real* dst = out.data() + ((b * T + t) * units + tok) * C;
                for (std::int64_t c = 0; c < C; ++c) dst[c] = src[c];
            }
        }
    }
    return out;
}

template <typename Real>
Tensor<Real> pad_width_backward(const Tensor<Real>& dout, std::int64_t channels) {
    const std::int64_t B = dout.dim(0), T = dout.dim(1), units = dout.dim(2);
    Tensor<Real> df(Shape{B, T, 2, channels});
    for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t t = 0; t < T; ++t) {
            for (std::int64_t tok = 0; tok < 2; ++tok) {
                const Real* src = dout.data() + ((b * T + t) * units + tok) * channels;
                Real* dst = df.data() + ((b * T + t) * 2 + tok) * channels;
                for (std::int64_t c = 0; c < channels; ++c) dst[c] = src[c];
            }
        }
    }
    return df;
}

// Concatenate the padded attention features with the LSTM hidden sequence
// along the channel axis. The LSTM contributes the last channel.
template <typename Real>
Tensor<Real> fuse_branches(const Tensor<Real>& f_padded, const Tensor<Real>& h_lstm) {
    if (f_padded.rank() != 4 || h_lstm.rank() != 3 || f_padded.dim(0) != h_lstm.dim(0) ||
        f_padded.dim(1) != h_lstm.dim(1) || f_padded.dim(2) != h_lstm.dim(2)) {
        throw contract_error("fuse_branches extent mismatch: " + f_padded.shape().str() + " vs " +
                             h_lstm.shape().str());
    }
    const std::int64_t B = f_padded.dim(0), T = f_padded.dim(1), U = f_padded.dim(2),
                       C = f_padded.dim(3);
    Tensor<Real> out(Shape{B, T, U, C + 1});
    for (std::int64_t r = 0; r < B * T * U; ++r) {
        const Real* src = f_padded.data() + r * C;
        Real* dst = out.data() + r * (C + 1);
        for (std::int64_t c = 0; c < C; ++c) dst[c] = src[c];
        dst[C] = h_lstm[r];
    }
    return out;
}

template <typename Real>
void fuse_branches_backward(const Tensor<Real>& dout, Tensor<Real>& df_padded,
                            Tensor<Real>& dh_lstm) {
    const std::int64_t C = dout.dim(3) - 1;
    const std::int64_t rows = dout.numel() / (C + 1);
    for (std::int64_t r = 0; r < rows; ++r) {
        const Real* src = dout.data() + r * (C + 1);
        Real* dst = df_padded.data() + r * C;
        for (std::int64_t c = 0; c < C; ++c) dst[c] = src[c];
        dh_lstm[r] = src[C];
    }
}

}  // namespace iqshrink

#endif
