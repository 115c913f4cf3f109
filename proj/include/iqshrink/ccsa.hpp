#ifndef IQSHRINK_CCSA_HPP
#define IQSHRINK_CCSA_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "iqshrink/init.hpp"
#include "iqshrink/linear.hpp"
#include "iqshrink/ops.hpp"
#include "iqshrink/tensor.hpp"

namespace iqshrink {

struct AttentionConfig {
    std::int64_t d = 32;      // embedding dimension
    std::int64_t heads = 2;   // attention heads
    std::int64_t depth = 2;   // stacked blocks
    std::int64_t channels = 8;  // post-projection channel count

    std::int64_t d_k() const { return d / heads; }
    std::int64_t d_ff() const { return 4 * d; }

    void validate() const {
        if (d < 1 || heads < 1 || depth < 1 || channels < 1) {
            throw config_error("attention config extents must be positive");
        }
        if (d % heads != 0) {
            throw config_error("head count " + std::to_string(heads) +
                               " must divide embedding dimension " + std::to_string(d));
        }
    }
};

// Scalar-token embedding: H[b,t,tok,:] = x[b,t,tok] * w + b, a 1x1 projection
// lifting each I/Q sample into d dimensions.
template <typename Real>
struct TokenEmbedding {
    Parameter<Real> w, b;

    TokenEmbedding() = default;
    TokenEmbedding(std::int64_t d, const std::string& prefix, Rng& rng)
        : w(Shape{1, d}, prefix + "w", true), b(Shape{d}, prefix + "b") {
        init_glorot_uniform(w.value, 1, d, rng);
    }

    Tensor<Real> forward(const Tensor<Real>& x) {
        if (x.rank() != 3 || x.dim(2) != 2) {
            throw contract_error("token embedding expects B x T x 2 input, got " + x.shape().str());
        }
        x_ = x;
        const std::int64_t n = x.numel(), d = w.value.dim(1);
        Tensor<Real> h(Shape{x.dim(0), x.dim(1), 2, d});
        for (std::int64_t i = 0; i < n; ++i) {
            const Real v = x[i];
            Real* out = h.data() + i * d;
            for (std::int64_t j = 0; j < d; ++j) out[j] = v * w.value[j] + b.value[j];
        }
        h.check_finite("token embedding");
        return h;
    }

    Tensor<Real> backward(const Tensor<Real>& dh) {
        const std::int64_t n = x_.numel(), d = w.value.dim(1);
        Tensor<Real> dx(x_.shape());
        for (std::int64_t i = 0; i < n; ++i) {
            const Real* g = dh.data() + i * d;
            const Real v = x_[i];
            Real acc = Real(0);
            for (std::int64_t j = 0; j < d; ++j) {
                acc += g[j] * w.value[j];
                w.grad[j] += v * g[j];
                b.grad[j] += g[j];
            }
            dx[i] = acc;
        }
        return dx;
    }

    std::vector<Parameter<Real>*> parameters() { return {&w, &b}; }

private:
    Tensor<Real> x_;
};

// One cross-channel self-attention block: two-token multi-head attention over
// the (I, Q) pair at every time step, feed-forward expansion, and two
// residual + layer-norm stages. Shape preserved: B x T x 2 x d.
template <typename Real>
class CcsaBlock {
public:
    Parameter<Real> w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o;
    Parameter<Real> w1, b1, w2, b2;
    Parameter<Real> ln1_g, ln1_b, ln2_g, ln2_b;

    CcsaBlock() = default;
    CcsaBlock(const AttentionConfig& cfg, const std::string& prefix, Rng& rng)
        : w_q(Shape{cfg.d, cfg.d}, prefix + "wq", true),
          b_q(Shape{cfg.d}, prefix + "bq"),
          w_k(Shape{cfg.d, cfg.d}, prefix + "wk", true),
          b_k(Shape{cfg.d}, prefix + "bk"),
          w_v(Shape{cfg.d, cfg.d}, prefix + "wv", true),
          b_v(Shape{cfg.d}, prefix + "bv"),
          w_o(Shape{cfg.d, cfg.d}, prefix + "wo", true),
          b_o(Shape{cfg.d}, prefix + "bo"),
          w1(Shape{cfg.d, cfg.d_ff()}, prefix + "ffn.w1", true),
          b1(Shape{cfg.d_ff()}, prefix + "ffn.b1"),
          w2(Shape{cfg.d_ff(), cfg.d}, prefix + "ffn.w2", true),
          b2(Shape{cfg.d}, prefix + "ffn.b2"),
          ln1_g(Shape{cfg.d}, prefix + "ln1.g"),
          ln1_b(Shape{cfg.d}, prefix + "ln1.b"),
          ln2_g(Shape{cfg.d}, prefix + "ln2.g"),
          ln2_b(Shape{cfg.d}, prefix + "ln2.b"),
          d_(cfg.d),
          heads_(cfg.heads) {
        init_glorot_uniform(w_q.value, cfg.d, cfg.d, rng);
        init_glorot_uniform(w_k.value, cfg.d, cfg.d, rng);
        init_glorot_uniform(w_v.value, cfg.d, cfg.d, rng);
        init_glorot_uniform(w_o.value, cfg.d, cfg.d, rng);
        init_glorot_uniform(w1.value, cfg.d, cfg.d_ff(), rng);
        init_glorot_uniform(w2.value, cfg.d_ff(), cfg.d, rng);
        ln1_g.value.fill(Real(1));
        ln2_g.value.fill(Real(1));
    }

    // Attention sublayer alone: per-head two-token scaled dot-product
    // attention, heads concatenated, output projection. Exposed for oracle
    // tests; forward() adds the residual/norm/FFN stages around it.
    Tensor<Real> two_token_mhsa(const Tensor<Real>& h) {
        h_ = h;
        q_ = linear(h, w_q.value, &b_q.value);
        k_ = linear(h, w_k.value, &b_k.value);
        v_ = linear(h, w_v.value, &b_v.value);

        const std::int64_t pairs = h.numel() / (2 * d_);
        const std::int64_t dk = d_ / heads_;
        const Real inv_sqrt_dk = Real(1) / std::sqrt(Real(dk));
        attn_ = Tensor<Real>(Shape{pairs, heads_, 2, 2});
        headcat_ = Tensor<Real>(h.shape());
        for (std::int64_t p = 0; p < pairs; ++p) {
            const Real* q0 = q_.data() + (2 * p) * d_;
            const Real* q1 = q0 + d_;
            const Real* k0 = k_.data() + (2 * p) * d_;
            const Real* k1 = k0 + d_;
            const Real* v0 = v_.data() + (2 * p) * d_;
            const Real* v1 = v0 + d_;
            Real* o0 = headcat_.data() + (2 * p) * d_;
            Real* o1 = o0 + d_;
            for (std::int64_t hh = 0; hh < heads_; ++hh) {
                const std::int64_t off = hh * dk;
                Real l00 = 0, l01 = 0, l10 = 0, l11 = 0;
                for (std::int64_t j = 0; j < dk; ++j) {
                    l00 += q0[off + j] * k0[off + j];
                    l01 += q0[off + j] * k1[off + j];
                    l10 += q1[off + j] * k0[off + j];
                    l11 += q1[off + j] * k1[off + j];
                }
                l00 *= inv_sqrt_dk;
                l01 *= inv_sqrt_dk;
                l10 *= inv_sqrt_dk;
                l11 *= inv_sqrt_dk;
                Real* a = attn_.data() + ((p * heads_ + hh) * 2) * 2;
                row_softmax2(l00, l01, a[0], a[1]);
                row_softmax2(l10, l11, a[2], a[3]);
                // self-token term first: the expression is then identical for
                // both rows, which keeps the I/Q swap equivariance exact down
                // to the last bit even under FMA contraction
                for (int r = 0; r < 2; ++r) {
                    const Real a_self = a[r * 2 + r];
                    const Real a_other = a[r * 2 + (1 - r)];
                    const Real* v_self = r == 0 ? v0 : v1;
                    const Real* v_other = r == 0 ? v1 : v0;
                    Real* o = r == 0 ? o0 : o1;
                    for (std::int64_t j = 0; j < dk; ++j) {
                        o[off + j] = a_self * v_self[off + j] + a_other * v_other[off + j];
                    }
                }
            }
        }
        attn_.check_finite("two-token attention");
        mhsa_ = linear(headcat_, w_o.value, &b_o.value);
        return mhsa_;
    }

    Tensor<Real> forward(const Tensor<Real>& h) {
        if (h.rank() != 4 || h.dim(2) != 2 || h.dim(3) != d_) {
            throw contract_error("ccsa block expects B x T x 2 x d input, got " + h.shape().str());
        }
        two_token_mhsa(h);
        Tensor<Real> res1(h.shape());
        for (std::int64_t i = 0; i < h.numel(); ++i) res1[i] = h[i] + mhsa_[i];
        htilde_ = layer_norm(res1, ln1_g.value, ln1_b.value, ln_eps_, &ln1_cache_);

        hid_pre_ = linear(htilde_, w1.value, &b1.value);
        hid_ = pointwise_activation(hid_pre_, Activation::Gelu);
        Tensor<Real> ffn = linear(hid_, w2.value, &b2.value);
        Tensor<Real> res2(h.shape());
        for (std::int64_t i = 0; i < h.numel(); ++i) res2[i] = htilde_[i] + ffn[i];
        return layer_norm(res2, ln2_g.value, ln2_b.value, ln_eps_, &ln2_cache_);
    }

    Tensor<Real> backward(const Tensor<Real>& dz) {
        Tensor<Real> d_res2(dz.shape());
        layer_norm_backward(ln2_cache_, ln2_g.value, dz, d_res2, ln2_g.grad, ln2_b.grad);

        // FFN branch
        Tensor<Real> dhid(hid_.shape());
        linear_backward(hid_, w2.value, d_res2, dhid, w2.grad, &b2.grad);
        Tensor<Real> dhid_pre(hid_pre_.shape());
        pointwise_activation_backward(hid_pre_, hid_, dhid, Activation::Gelu, dhid_pre);
        Tensor<Real> dhtilde = d_res2;  // residual path
        linear_backward(htilde_, w1.value, dhid_pre, dhtilde, w1.grad, &b1.grad);

        Tensor<Real> d_res1(dz.shape());
        layer_norm_backward(ln1_cache_, ln1_g.value, dhtilde, d_res1, ln1_g.grad, ln1_b.grad);

        // attention branch
        Tensor<Real> dheadcat(headcat_.shape());
        linear_backward(headcat_, w_o.value, d_res1, dheadcat, w_o.grad, &b_o.grad);

        Tensor<Real> dq(q_.shape()), dk_t(k_.shape()), dv(v_.shape());
        const std::int64_t pairs = h_.numel() / (2 * d_);
        const std::int64_t dk = d_ / heads_;
        const Real inv_sqrt_dk = Real(1) / std::sqrt(Real(dk));
        for (std::int64_t p = 0; p < pairs; ++p) {
            const Real* go0 = dheadcat.data() + (2 * p) * d_;
            const Real* go1 = go0 + d_;
            const Real* q0 = q_.data() + (2 * p) * d_;
            const Real* q1 = q0 + d_;
            const Real* k0 = k_.data() + (2 * p) * d_;
            const Real* k1 = k0 + d_;
            const Real* v0 = v_.data() + (2 * p) * d_;
            const Real* v1 = v0 + d_;
            Real* gq0 = dq.data() + (2 * p) * d_;
            Real* gq1 = gq0 + d_;
            Real* gk0 = dk_t.data() + (2 * p) * d_;
            Real* gk1 = gk0 + d_;
            Real* gv0 = dv.data() + (2 * p) * d_;
            Real* gv1 = gv0 + d_;
            for (std::int64_t hh = 0; hh < heads_; ++hh) {
                const std::int64_t off = hh * dk;
                const Real* a = attn_.data() + ((p * heads_ + hh) * 2) * 2;
                Real da00 = 0, da01 = 0, da10 = 0, da11 = 0;
                for (std::int64_t j = 0; j < dk; ++j) {
                    da00 += go0[off + j] * v0[off + j];
                    da01 += go0[off + j] * v1[off + j];
                    da10 += go1[off + j] * v0[off + j];
                    da11 += go1[off + j] * v1[off + j];
                    gv0[off + j] += a[0] * go0[off + j] + a[2] * go1[off + j];
                    gv1[off + j] += a[1] * go0[off + j] + a[3] * go1[off + j];
                }
                // softmax backward per row, then the 1/sqrt(dk) scale
                const Real dot0 = da00 * a[0] + da01 * a[1];
                const Real dl00 = a[0] * (da00 - dot0) * inv_sqrt_dk;
                const Real dl01 = a[1] * (da01 - dot0) * inv_sqrt_dk;
                const Real dot1 = da10 * a[2] + da11 * a[3];
                const Real dl10 = a[2] * (da10 - dot1) * inv_sqrt_dk;
                const Real dl11 = a[3] * (da11 - dot1) * inv_sqrt_dk;
                for (std::int64_t j = 0; j < dk; ++j) {
                    gq0[off + j] += dl00 * k0[off + j] + dl01 * k1[off + j];
                    gq1[off + j] += dl10 * k0[off + j] + dl11 * k1[off + j];
                    gk0[off + j] += dl00 * q0[off + j] + dl10 * q1[off + j];
                    gk1[off + j] += dl01 * q0[off + j] + dl11 * q1[off + j];
                }
            }
        }

        Tensor<Real> dh = d_res1;  // residual path
        linear_backward(h_, w_q.value, dq, dh, w_q.grad, &b_q.grad);
        linear_backward(h_, w_k.value, dk_t, dh, w_k.grad, &b_k.grad);
        linear_backward(h_, w_v.value, dv, dh, w_v.grad, &b_v.grad);
        return dh;
    }

    // attention weights from the last forward, laid out pairs x heads x 2 x 2
    const Tensor<Real>& attention_weights() const { return attn_; }

    std::vector<Parameter<Real>*> parameters() {
        return {&w_q, &b_q, &w_k, &b_k, &w_v, &b_v, &w_o, &b_o,
                &w1,  &b1,  &w2,  &b2,  &ln1_g, &ln1_b, &ln2_g, &ln2_b};
    }

private:
    static void row_softmax2(Real l0, Real l1, Real& s0, Real& s1) {
        const Real m = std::max(l0, l1);
        const Real e0 = std::exp(l0 - m);
        const Real e1 = std::exp(l1 - m);
        const Real inv = Real(1) / (e0 + e1);
        s0 = e0 * inv;
        s1 = e1 * inv;
    }

    std::int64_t d_ = 0, heads_ = 0;
    static constexpr Real ln_eps_ = Real(1e-5);
    Tensor<Real> h_, q_, k_, v_, attn_, headcat_, mhsa_, htilde_, hid_pre_, hid_;
    LayerNormCache<Real> ln1_cache_, ln2_cache_;
};

// Final projection of the attention stack to C channels (Z . w_p, no bias).
template <typename Real>
struct ChannelProjection {
    Parameter<Real> w;

    ChannelProjection() = default;
    ChannelProjection(std::int64_t d, std::int64_t channels, const std::string& prefix, Rng& rng)
        : w(Shape{d, channels}, prefix + "w", true) {
        init_glorot_uniform(w.value, d, channels, rng);
    }

    Tensor<Real> forward(const Tensor<Real>& z) {
        z_ = z;
        return linear(z, w.value, static_cast<const Tensor<Real>*>(nullptr));
    }

    Tensor<Real> backward(const Tensor<Real>& df) {
        Tensor<Real> dz(z_.shape());
        linear_backward(z_, w.value, df, dz, w.grad, static_cast<Tensor<Real>*>(nullptr));
        return dz;
    }

    std::vector<Parameter<Real>*> parameters() { return {&w}; }

private:
    Tensor<Real> z_;
};

}  // namespace iqshrink

#endif
