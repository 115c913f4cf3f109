#ifndef IQSHRINK_MODEL_HPP
#define IQSHRINK_MODEL_HPP

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "iqshrink/ccsa.hpp"
#include "iqshrink/config.hpp"
#include "iqshrink/shrinkage.hpp"
#include "iqshrink/signals.hpp"
#include "iqshrink/temporal.hpp"

namespace iqshrink {

struct ModelConfig {
    std::int64_t units = 16;       // LSTM width
    std::int64_t d = 32;           // embedding dimension
    std::int64_t heads = 2;        // attention heads
    std::int64_t ccsa_depth = 2;   // stacked attention blocks
    std::int64_t depth_a = 3;      // denoising blocks A
    std::int64_t depth_b = 3;      // denoising blocks B
    std::int64_t channels = 8;     // post-projection channels C
    std::int64_t num_classes = 24;
    std::int64_t frame_len = 1024;  // T
    double l2 = 1e-4;
    std::uint64_t seed = 1;

    // Interleaving after fusion: (A, B) pairs, A first; leftover depth appends
    // the remaining A blocks before the remaining B blocks.
    std::vector<char> block_order() const {
        std::vector<char> order;
        const std::int64_t pairs = std::min(depth_a, depth_b);
        for (std::int64_t i = 0; i < pairs; ++i) {
            order.push_back('A');
            order.push_back('B');
        }
        for (std::int64_t i = pairs; i < depth_a; ++i) order.push_back('A');
        for (std::int64_t i = pairs; i < depth_b; ++i) order.push_back('B');
        return order;
    }

    void validate() const {
        if (units < 2) throw config_error("invalid config: units must be >= 2");
        if (d < 1) throw config_error("invalid config: d must be positive");
        if (heads < 1) throw config_error("invalid config: heads must be positive");
        if (d % heads != 0) throw config_error("invalid config: heads must divide d");
        if (ccsa_depth < 1) throw config_error("invalid config: ccsa_depth must be >= 1");
        if (depth_a < 0 || depth_b < 0) throw config_error("invalid config: denoise depths must be >= 0");
        if (channels < 1) throw config_error("invalid config: C must be positive");
        if (num_classes < 2) throw config_error("invalid config: num_classes must be >= 2");
        if (frame_len < 1) throw config_error("invalid config: T must be positive");
        if (l2 < 0) throw config_error("invalid config: l2 must be non-negative");
        std::int64_t h = frame_len, w = units;
        for (char kind : block_order()) {
            if (kind == 'B') {
                if (h < 2 || w < 2) {
                    throw config_error(
                        "invalid config: depth_b too large for T x units; a downsampling block "
                        "would see spatial extent < 2");
                }
                h = (h + 1) / 2;
                w = (w + 1) / 2;
            }
        }
    }
};

inline ModelConfig model_config_from(KvReader& kv) {
    ModelConfig c;
    c.units = kv.get_i64("units", c.units);
    c.d = kv.get_i64("d", c.d);
    c.heads = kv.get_i64("heads", c.heads);
    c.ccsa_depth = kv.get_i64("ccsa_depth", c.ccsa_depth);
    c.depth_a = kv.get_i64("depth_a", c.depth_a);
    c.depth_b = kv.get_i64("depth_b", c.depth_b);
    c.channels = kv.get_i64("C", c.channels);
    c.num_classes = kv.get_i64("num_classes", c.num_classes);
    c.frame_len = kv.get_i64("T", c.frame_len);
    c.l2 = kv.get_double("l2", c.l2);
    c.seed = kv.get_u64("seed", c.seed);
    c.validate();
    return c;
}

inline std::string model_config_to_text(const ModelConfig& c) {
    std::ostringstream os;
    os << "units = " << c.units << '\n'
       << "d = " << c.d << '\n'
       << "heads = " << c.heads << '\n'
       << "ccsa_depth = " << c.ccsa_depth << '\n'
       << "depth_a = " << c.depth_a << '\n'
       << "depth_b = " << c.depth_b << '\n'
       << "C = " << c.channels << '\n'
       << "num_classes = " << c.num_classes << '\n'
       << "T = " << c.frame_len << '\n'
       << "l2 = " << c.l2 << '\n'
       << "seed = " << c.seed << '\n';
    return os.str();
}

struct TrainConfig {
    std::int64_t batch_size = 128;
    double lr_init = 1e-3;
    double lr_min = 1e-8;
    double lr_factor = 0.5;
    std::int64_t lr_patience = 5;
    std::int64_t early_stop_patience = 30;
    std::int64_t max_epochs = 200;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const {
        if (batch_size < 1) throw config_error("invalid config: batch_size must be positive");
        if (!(lr_min > 0.0) || lr_min > lr_init) {
            throw config_error("invalid config: need 0 < lr_min <= lr_init");
        }
        if (!(lr_factor > 0.0 && lr_factor < 1.0)) {
            throw config_error("invalid config: lr_factor must lie in (0,1)");
        }
        if (lr_patience < 1 || early_stop_patience < 1) {
            throw config_error("invalid config: patience values must be >= 1");
        }
        if (max_epochs < 1) throw config_error("invalid config: max_epochs must be positive");
    }
};

inline TrainConfig train_config_from(KvReader& kv) {
    TrainConfig c;
    c.batch_size = kv.get_i64("batch_size", c.batch_size);
    c.lr_init = kv.get_double("lr_init", c.lr_init);
    c.lr_min = kv.get_double("lr_min", c.lr_min);
    c.lr_factor = kv.get_double("lr_factor", c.lr_factor);
    c.lr_patience = kv.get_i64("lr_patience", c.lr_patience);
    c.early_stop_patience = kv.get_i64("early_stop_patience", c.early_stop_patience);
    c.max_epochs = kv.get_i64("max_epochs", c.max_epochs);
    c.adam_beta1 = kv.get_double("adam_beta1", c.adam_beta1);
    c.adam_beta2 = kv.get_double("adam_beta2", c.adam_beta2);
    c.adam_eps = kv.get_double("adam_eps", c.adam_eps);
    c.validate();
    return c;
}

struct ParamCount {
    std::int64_t total = 0;
    std::map<std::string, std::int64_t> by_module;
};

struct FlopCount {
    std::int64_t embed = 0, ccsa = 0, project = 0, lstm = 0, shrink = 0, head = 0;
    std::int64_t total() const { return embed + ccsa + project + lstm + shrink + head; }
};

// Dual-branch classifier: token embedding -> stacked cross-channel attention
// -> channel projection -> width padding, fused with an LSTM over the raw
// sequence, then a cascade of denoising shrink blocks and a pooled softmax
// head.
template <typename Real>
class Model {
public:
    explicit Model(const ModelConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(cfg_.seed);
        embed_ = TokenEmbedding<Real>(cfg_.d, "embed.", rng);
        AttentionConfig acfg{cfg_.d, cfg_.heads, cfg_.ccsa_depth, cfg_.channels};
        acfg.validate();
        ccsa_.reserve(static_cast<std::size_t>(cfg_.ccsa_depth));
        for (std::int64_t i = 0; i < cfg_.ccsa_depth; ++i) {
            ccsa_.emplace_back(acfg, "ccsa" + std::to_string(i) + ".", rng);
        }
        project_ = ChannelProjection<Real>(cfg_.d, cfg_.channels, "project.", rng);
        lstm_ = LstmLayer<Real>(cfg_.units, "lstm.", rng);

        order_ = cfg_.block_order();
        std::int64_t ch = cfg_.channels + 1;
        blocks_a_.reserve(order_.size());
        blocks_b_.reserve(order_.size());
        int idx = 0;
        for (char kind : order_) {
            const std::string prefix = "shrink" + std::to_string(idx++) + ".";
            if (kind == 'A') {
                blocks_a_.emplace_back(ch, prefix + "a.", rng);
            } else {
                blocks_b_.emplace_back(ch, prefix + "b.", rng);
                ch *= 2;
            }
        }
        final_channels_ = ch;
        head_bn_ = BatchNormLayer<Real>(ch, "head.bn.");
        head_fc_ = DenseLayer<Real>(ch, cfg_.num_classes, "head.fc.", rng);
        collect_parameters();
    }

    // the parameter registry holds pointers into the layer storage
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    const ModelConfig& config() const { return cfg_; }
    std::int64_t final_channels() const { return final_channels_; }

    // x: B x T x 2 -> per-class probabilities B x num_classes
    Tensor<Real> forward(const Tensor<Real>& x, Mode mode) {
        if (x.rank() != 3 || x.dim(1) != cfg_.frame_len || x.dim(2) != 2) {
            throw contract_error("model expects B x " + std::to_string(cfg_.frame_len) +
                                 " x 2 input, got " + x.shape().str());
        }
        Tensor<Real> h = embed_.forward(x);
        for (auto& block : ccsa_) h = block.forward(h);
        Tensor<Real> f = project_.forward(h);
        Tensor<Real> fp = pad_width(f, cfg_.units);
        Tensor<Real> hl = lstm_.forward(x);
        Tensor<Real> z = fuse_branches(fp, hl);

        std::size_t ai = 0, bi = 0;
        for (char kind : order_) {
            z = (kind == 'A') ? blocks_a_[ai++].forward(z, mode) : blocks_b_[bi++].forward(z, mode);
        }
        pre_head_shape_ = z.shape();
        z = head_relu_.forward(head_bn_.forward(z, mode));
        Tensor<Real> pooled = pool_global(z, PoolKind::Average);
        logits_ = head_fc_.forward(pooled);
        probs_ = softmax_lastdim(logits_);
        return probs_;
    }

    // Fused softmax + cross-entropy gradient from the cached forward, plus the
    // L2 penalty gradient on regularizable kernels.
    void backward(const std::vector<int>& labels) {
        const std::int64_t B = probs_.dim(0), K = probs_.dim(1);
        if (static_cast<std::int64_t>(labels.size()) != B) {
            throw contract_error("label count does not match batch size");
        }
        Tensor<Real> dlogits(probs_.shape());
        const Real invb = Real(1) / Real(B);
        for (std::int64_t b = 0; b < B; ++b) {
            const int y = labels[static_cast<std::size_t>(b)];
            if (y < 0 || y >= K) {
                throw contract_error("label " + std::to_string(y) + " outside [0, " +
                                     std::to_string(K) + ")");
            }
            for (std::int64_t k = 0; k < K; ++k) {
                dlogits.at2(b, k) = (probs_.at2(b, k) - (k == y ? Real(1) : Real(0))) * invb;
            }
        }
        Tensor<Real> dpool = head_fc_.backward(dlogits);
        Tensor<Real> dz(pre_head_shape_);
        pool_global_backward(pre_head_shape_, PoolKind::Average, PoolCache<Real>{}, dpool, dz);
        dz = head_bn_.backward(head_relu_.backward(dz));

        std::size_t ai = blocks_a_.size(), bi = blocks_b_.size();
        for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
            dz = (*it == 'A') ? blocks_a_[--ai].backward(dz) : blocks_b_[--bi].backward(dz);
        }

        Tensor<Real> dfp(Shape{dz.dim(0), dz.dim(1), cfg_.units, cfg_.channels});
        Tensor<Real> dhl(Shape{dz.dim(0), dz.dim(1), cfg_.units});
        fuse_branches_backward(dz, dfp, dhl);
        lstm_.backward(dhl);
        Tensor<Real> df = pad_width_backward(dfp, cfg_.channels);
        Tensor<Real> dh = project_.backward(df);
        for (auto it = ccsa_.rbegin(); it != ccsa_.rend(); ++it) dh = it->backward(dh);
        embed_.backward(dh);

        if (cfg_.l2 > 0.0) add_l2_grads();
    }

    void add_l2_grads() {
        const Real two_lambda = Real(2) * static_cast<Real>(cfg_.l2);
        for (Parameter<Real>* p : params_) {
            if (!p->regularizable) continue;
            for (std::int64_t i = 0; i < p->numel(); ++i) p->grad[i] += two_lambda * p->value[i];
        }
    }

    double l2_penalty() const {
        double acc = 0.0;
        for (const Parameter<Real>* p : params_) {
            if (!p->regularizable) continue;
            for (std::int64_t i = 0; i < p->numel(); ++i) {
                const double v = static_cast<double>(p->value[i]);
                acc += v * v;
            }
        }
        return cfg_.l2 * acc;
    }

    void zero_grads() {
        for (Parameter<Real>* p : params_) p->zero_grad();
    }

    std::vector<Parameter<Real>*>& parameters() { return params_; }

    std::vector<NamedBuffer<Real>> buffers() {
        std::vector<NamedBuffer<Real>> out;
        std::size_t ai = 0, bi = 0;
        for (char kind : order_) {
            auto bs = (kind == 'A') ? blocks_a_[ai++].buffers() : blocks_b_[bi++].buffers();
            for (auto& b : bs) out.push_back(b);
        }
        for (auto& b : head_bn_.buffers()) out.push_back(b);
        return out;
    }

    // distance of the last forward from every non-differentiable site in the
    // shrink stack and the head relu
    Real min_breakpoint_margin() const {
        Real margin = head_relu_.min_abs_input();
        for (const auto& b : blocks_a_) margin = std::min(margin, b.breakpoint_margin());
        for (const auto& b : blocks_b_) margin = std::min(margin, b.breakpoint_margin());
        return margin;
    }

    std::vector<const Tensor<Real>*> last_thresholds() const {
        std::vector<const Tensor<Real>*> out;
        for (const auto& b : blocks_a_) out.push_back(&b.last_threshold());
        for (const auto& b : blocks_b_) out.push_back(&b.last_threshold());
        return out;
    }

    std::vector<Real> shrink_kappas() const {
        std::vector<Real> out;
        for (const auto& b : blocks_a_) out.push_back(b.state.kappa());
        for (const auto& b : blocks_b_) out.push_back(b.state.kappa());
        return out;
    }

    ParamCount count_params() const {
        ParamCount pc;
        for (const Parameter<Real>* p : params_) {
            pc.total += p->numel();
            pc.by_module[module_of(p->name)] += p->numel();
        }
        return pc;
    }

    // Forward-pass FLOPs for one frame (batch 1). Convention: one
    // multiply-accumulate = 2 FLOPs; elementwise op costs are fixed small
    // constants per element (relu/add/abs 1, batch norm 4, layer norm 8,
    // sigmoid/tanh 4, gelu 8, softmax 5, garrote 4).
    FlopCount count_flops() const {
        FlopCount fc;
        const std::int64_t T = cfg_.frame_len, d = cfg_.d, U = cfg_.units, C = cfg_.channels;
        const std::int64_t rows = 2 * T;
        fc.embed = rows * (2 * d + d);  // scalar-to-d projection plus bias add
        const std::int64_t dff = 4 * d, dk = d / cfg_.heads;
        std::int64_t per_block = 0;
        per_block += 4 * rows * (2 * d * d + d);             // Q, K, V, O projections
        per_block += T * cfg_.heads * (2 * (2 * 2 * dk));    // attention logits
        per_block += T * cfg_.heads * 4;                     // 1/sqrt(dk) scaling
        per_block += T * cfg_.heads * 2 * 2 * 5;             // row softmax
        per_block += T * cfg_.heads * (2 * (2 * 2 * dk));    // attention-weighted values
        per_block += rows * (2 * d * dff + dff);             // FFN expand
        per_block += rows * dff * 8;                         // gelu
        per_block += rows * (2 * dff * d + d);               // FFN contract
        per_block += 2 * rows * d;                           // residual adds
        per_block += 2 * rows * d * 8;                       // two layer norms
        fc.ccsa = cfg_.ccsa_depth * per_block;
        fc.project = rows * 2 * d * C;
        std::int64_t per_step = 2 * 2 * (4 * U) + 2 * U * (4 * U) + 4 * U;  // gate preactivations
        per_step += 3 * U * 4 + U * 4;  // gate activations
        per_step += 3 * U;              // cell update
        per_step += U * 4 + U;          // tanh(c) and output gate product
        fc.lstm = T * per_step;

        std::int64_t h = T, w = U, ch = C + 1;
        for (char kind : order_) {
            if (kind == 'A') {
                const std::int64_t mid = ShrinkBlockA<Real>::mid_width(ch);
                fc.shrink += 2 * 9 * ch * mid * h * w + h * w * mid * 4  // conv1 + bn1
                             + h * w * mid                               // relu
                             + 2 * 9 * mid * ch * h * w + h * w * ch * 4;  // conv2 + bn2
                fc.shrink += threshold_flops(h, w, ch);
                fc.shrink += h * w * ch * 4 + h * w * ch;  // garrote + residual add
            } else {
                const std::int64_t oh = (h + 1) / 2, ow = (w + 1) / 2;
                fc.shrink += 2 * 9 * ch * 2 * ch * oh * ow + oh * ow * 2 * ch * 4  // conv1 + bn1
                             + oh * ow * 2 * ch                                     // relu
                             + 2 * 9 * 2 * ch * 2 * ch * oh * ow + oh * ow * 2 * ch * 4  // conv2 + bn2
                             + 2 * ch * 2 * ch * oh * ow;                           // 1x1 shortcut
                fc.shrink += threshold_flops(oh, ow, 2 * ch);
                fc.shrink += oh * ow * 2 * ch * 4 + oh * ow * 2 * ch;  // garrote + residual add
                h = oh;
                w = ow;
                ch *= 2;
            }
        }
        fc.head = h * w * ch * 4 + h * w * ch        // batch norm + relu
                  + h * w * ch                        // global average pool
                  + 2 * ch * cfg_.num_classes + cfg_.num_classes  // dense + bias
                  + cfg_.num_classes * 5;             // softmax
        return fc;
    }

private:
    static std::int64_t threshold_flops(std::int64_t h, std::int64_t w, std::int64_t ch) {
        std::int64_t f = h * w * ch;  // absolute values
        f += 2 * h * w * ch;          // GAP and GMP reductions
        // two coefficient paths: dense, bn, relu, dense, sigmoid on one row
        f += 2 * (2 * ch * ch + ch + ch * 4 + ch + 2 * ch * ch + ch + ch * 4);
        f += ch * 4;  // convex combination and kappa scale
        return f;
    }

    static std::string module_of(const std::string& name) {
        const std::size_t dot = name.find('.');
        std::string head = dot == std::string::npos ? name : name.substr(0, dot);
        while (!head.empty() && head.back() >= '0' && head.back() <= '9') head.pop_back();
        return head;
    }

    void collect_parameters() {
        params_.clear();
        auto add = [this](const std::vector<Parameter<Real>*>& ps) {
            for (auto* p : ps) params_.push_back(p);
        };
        add(embed_.parameters());
        for (auto& b : ccsa_) add(b.parameters());
        add(project_.parameters());
        add(lstm_.parameters());
        std::size_t ai = 0, bi = 0;
        for (char kind : order_) {
            add((kind == 'A') ? blocks_a_[ai++].parameters() : blocks_b_[bi++].parameters());
        }
        add(head_bn_.parameters());
        add(head_fc_.parameters());
        std::set<std::string> names;
        for (auto* p : params_) {
            if (!names.insert(p->name).second) {
                throw contract_error("duplicate parameter name: " + p->name);
            }
        }
    }

    ModelConfig cfg_;
    TokenEmbedding<Real> embed_;
    std::vector<CcsaBlock<Real>> ccsa_;
    ChannelProjection<Real> project_;
    LstmLayer<Real> lstm_;
    std::vector<char> order_;
    std::vector<ShrinkBlockA<Real>> blocks_a_;
    std::vector<ShrinkBlockB<Real>> blocks_b_;
    BatchNormLayer<Real> head_bn_;
    ActivationLayer<Real> head_relu_{Activation::Relu};
    DenseLayer<Real> head_fc_;
    std::int64_t final_channels_ = 0;
    Shape pre_head_shape_;
    Tensor<Real> logits_, probs_;
    std::vector<Parameter<Real>*> params_;
};

// Mean cross-entropy (probabilities clamped at 1e-12) plus the L2 penalty on
// convolution and dense kernels.
template <typename Real>
double loss_with_l2(const Tensor<Real>& probs, const std::vector<int>& labels, Model<Real>& model,
                    double lambda) {
    const std::int64_t B = probs.dim(0), K = probs.dim(1);
    if (static_cast<std::int64_t>(labels.size()) != B) {
        throw contract_error("label count does not match batch size");
    }
    double ce = 0.0;
    for (std::int64_t b = 0; b < B; ++b) {
        const int y = labels[static_cast<std::size_t>(b)];
        if (y < 0 || y >= K) {
            throw contract_error("label " + std::to_string(y) + " outside [0, " + std::to_string(K) + ")");
        }
        const double p = std::max(static_cast<double>(probs.at2(b, y)), 1e-12);
        ce -= std::log(p);
    }
    ce /= static_cast<double>(B);
    double reg = 0.0;
    if (lambda > 0.0) {
        for (const Parameter<Real>* p : model.parameters()) {
            if (!p->regularizable) continue;
            for (std::int64_t i = 0; i < p->numel(); ++i) {
                const double v = static_cast<double>(p->value[i]);
                reg += v * v;
            }
        }
        reg *= lambda;
    }
    return ce + reg;
}

template <typename Real>
struct AdamState {
    std::vector<Tensor<Real>> m, v;
    std::int64_t step = 0;

    void init(const std::vector<Parameter<Real>*>& params) {
        m.clear();
        v.clear();
        for (const Parameter<Real>* p : params) {
            m.emplace_back(p->value.shape());
            v.emplace_back(p->value.shape());
        }
        step = 0;
    }
};

template <typename Real>
void adam_step(std::vector<Parameter<Real>*>& params, AdamState<Real>& state, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
    if (state.m.size() != params.size()) {
        throw contract_error("adam state does not match parameter list");
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Parameter<Real>* p = params[pi];
        Tensor<Real>& m = state.m[pi];
        Tensor<Real>& v = state.v[pi];
        for (std::int64_t i = 0; i < p->numel(); ++i) {
            const double g = static_cast<double>(p->grad[i]);
            if (!std::isfinite(g)) {
                throw numeric_error("non-finite gradient in parameter '" + p->name + "' at index " +
                                    std::to_string(i));
            }
            const double mn = beta1 * static_cast<double>(m[i]) + (1.0 - beta1) * g;
            const double vn = beta2 * static_cast<double>(v[i]) + (1.0 - beta2) * g * g;
            m[i] = static_cast<Real>(mn);
            v[i] = static_cast<Real>(vn);
            const double mhat = mn / bc1;
            const double vhat = vn / bc2;
            p->value[i] = static_cast<Real>(static_cast<double>(p->value[i]) -
                                            lr * mhat / (std::sqrt(vhat) + eps));
        }
    }
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

// Validation-plateau schedule shared by the LR reducer and early stopping.
// "Improved" means strictly below the best seen so far minus an absolute
// tolerance. The two patience counters run independently: both reset on
// improvement, and the LR counter also resets after a reduction fires.
class PlateauScheduler {
public:
    PlateauScheduler(double lr_init, double lr_factor, double lr_min, std::int64_t lr_patience,
                     std::int64_t stop_patience, double improve_tol = 1e-6)
        : lr_(lr_init),
          factor_(lr_factor),
          min_(lr_min),
          lr_patience_(lr_patience),
          stop_patience_(stop_patience),
          tol_(improve_tol) {}

    struct Decision {
        bool improved = false;
        bool reduced = false;  // reduction fired at this observation
        bool stop = false;     // early stop fired at this observation
    };

    Decision observe(double val_loss) {
        Decision d;
        if (val_loss < best_ - tol_) {
            best_ = val_loss;
            lr_wait_ = 0;
            es_wait_ = 0;
            d.improved = true;
            return d;
        }
        ++lr_wait_;
        ++es_wait_;
        if (es_wait_ >= stop_patience_) {
            d.stop = true;
            return d;
        }
        if (lr_wait_ >= lr_patience_) {
            lr_ = std::max(lr_ * factor_, min_);
            lr_wait_ = 0;
            d.reduced = true;
        }
        return d;
    }

    double lr() const { return lr_; }
    double best() const { return best_; }

private:
    double lr_;
    double factor_, min_;
    std::int64_t lr_patience_, stop_patience_;
    double tol_;
    double best_ = std::numeric_limits<double>::infinity();
    std::int64_t lr_wait_ = 0, es_wait_ = 0;
};

struct EpochLog {
    int epoch = 0;  // 1-based
    double train_loss = 0.0, train_acc = 0.0;
    double val_loss = 0.0, val_acc = 0.0;
    double lr = 0.0;  // learning rate used during this epoch
};

struct TrainingLog {
    std::vector<EpochLog> epochs;
    int stopped_epoch = 0;  // 0 when max_epochs was reached
    int best_epoch = 0;
    double best_val_loss = 0.0;
    std::vector<int> lr_drop_epochs;  // epochs whose end triggered a reduction
    double final_lr = 0.0;
};

template <typename Real>
Tensor<Real> make_batch(const Dataset& ds, const std::vector<std::int64_t>& idx, std::int64_t lo,
                        std::int64_t hi) {
    const std::int64_t B = hi - lo, T = ds.frame_len;
    Tensor<Real> x(Shape{B, T, 2});
    for (std::int64_t b = 0; b < B; ++b) {
        const auto& f = ds.frames[static_cast<std::size_t>(idx[static_cast<std::size_t>(lo + b)])];
        for (std::int64_t i = 0; i < 2 * T; ++i) {
            x[b * 2 * T + i] = static_cast<Real>(f.samples[static_cast<std::size_t>(i)]);
        }
    }
    return x;
}

inline std::vector<int> batch_labels(const Dataset& ds, const std::vector<std::int64_t>& idx,
                                     std::int64_t lo, std::int64_t hi) {
    std::vector<int> labels(static_cast<std::size_t>(hi - lo));
    for (std::int64_t b = lo; b < hi; ++b) {
        labels[static_cast<std::size_t>(b - lo)] =
            static_cast<int>(ds.frames[static_cast<std::size_t>(idx[static_cast<std::size_t>(b)])].class_id);
    }
    return labels;
}

template <typename Real>
struct Snapshot {
    std::vector<std::vector<Real>> params;
    std::vector<std::vector<Real>> buffers;

    static Snapshot take(Model<Real>& model) {
        Snapshot s;
        for (auto* p : model.parameters()) s.params.push_back(p->value.vec());
        for (auto& [name, buf] : model.buffers()) s.buffers.push_back(buf->vec());
        return s;
    }
    void restore(Model<Real>& model) const {
        auto& params = model.parameters();
        for (std::size_t i = 0; i < params.size(); ++i) params[i]->value.vec() = this->params[i];
        auto bufs = model.buffers();
        for (std::size_t i = 0; i < bufs.size(); ++i) *bufs[i].second = Tensor<Real>(bufs[i].second->shape(), buffers[i]);
    }
};

template <typename Real>
std::pair<double, double> evaluate_loss_acc(Model<Real>& model, const Dataset& ds,
                                            const std::vector<std::int64_t>& idx,
                                            std::int64_t batch_size) {
    const std::int64_t n = static_cast<std::int64_t>(idx.size());
    double loss_sum = 0.0;
    std::int64_t correct = 0;
    for (std::int64_t lo = 0; lo < n; lo += batch_size) {
        const std::int64_t hi = std::min(n, lo + batch_size);
        Tensor<Real> x = make_batch<Real>(ds, idx, lo, hi);
        std::vector<int> labels = batch_labels(ds, idx, lo, hi);
        Tensor<Real> probs = model.forward(x, Mode::Eval);
        loss_sum += loss_with_l2(probs, labels, model, model.config().l2) * static_cast<double>(hi - lo);
        for (std::int64_t b = 0; b < hi - lo; ++b) {
            std::int64_t best = 0;
            for (std::int64_t k = 1; k < probs.dim(1); ++k) {
                if (probs.at2(b, k) > probs.at2(b, best)) best = k;
            }
            if (static_cast<int>(best) == labels[static_cast<std::size_t>(b)]) ++correct;
        }
    }
    return {loss_sum / static_cast<double>(n), static_cast<double>(correct) / static_cast<double>(n)};
}

// Validation-plateau schedule: the learning rate halves once the validation
// loss has failed to improve (by more than 1e-6 absolute) for lr_patience
// consecutive epochs; training stops after early_stop_patience stagnant
// epochs. Both counters reset on improvement; the LR counter also resets
// after a reduction. The best-validation parameter snapshot is restored at
// the end.
template <typename Real>
TrainingLog fit(Model<Real>& model, const Dataset& ds, const std::vector<std::int64_t>& train_idx,
                const std::vector<std::int64_t>& val_idx, const TrainConfig& tc,
                AdamState<Real>* opt_state = nullptr, Rng* shuffle_rng = nullptr) {
    tc.validate();
    if (train_idx.empty() || val_idx.empty()) {
        throw contract_error("fit requires non-empty train and validation sets");
    }
    AdamState<Real> local_state;
    AdamState<Real>& state = opt_state ? *opt_state : local_state;
    if (state.m.empty()) state.init(model.parameters());
    Rng local_rng = Rng::derive(model.config().seed, 0xf17, 0);
    Rng& rng = shuffle_rng ? *shuffle_rng : local_rng;

    TrainingLog log;
    PlateauScheduler sched(tc.lr_init, tc.lr_factor, tc.lr_min, tc.lr_patience,
                           tc.early_stop_patience);
    Snapshot<Real> best_snapshot = Snapshot<Real>::take(model);
    log.best_epoch = 0;

    std::vector<std::int64_t> order = train_idx;
    const std::int64_t n = static_cast<std::int64_t>(order.size());
    for (int epoch = 1; epoch <= tc.max_epochs; ++epoch) {
        const double lr = sched.lr();
        for (std::int64_t i = n - 1; i > 0; --i) {
            const std::int64_t j = static_cast<std::int64_t>(rng.uniform_index(static_cast<std::uint64_t>(i + 1)));
            std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
        }
        double train_loss_sum = 0.0;
        std::int64_t train_correct = 0;
        std::int64_t batch_no = 0;
        for (std::int64_t lo = 0; lo < n; lo += tc.batch_size, ++batch_no) {
            const std::int64_t hi = std::min(n, lo + tc.batch_size);
            try {
                Tensor<Real> x = make_batch<Real>(ds, order, lo, hi);
                std::vector<int> labels = batch_labels(ds, order, lo, hi);
                Tensor<Real> probs = model.forward(x, Mode::Train);
                const double batch_loss = loss_with_l2(probs, labels, model, model.config().l2);
                if (!std::isfinite(batch_loss)) {
                    throw numeric_error("non-finite training loss");
                }
                train_loss_sum += batch_loss * static_cast<double>(hi - lo);
                for (std::int64_t b = 0; b < hi - lo; ++b) {
                    std::int64_t bestk = 0;
                    for (std::int64_t k = 1; k < probs.dim(1); ++k) {
                        if (probs.at2(b, k) > probs.at2(b, bestk)) bestk = k;
                    }
                    if (static_cast<int>(bestk) == labels[static_cast<std::size_t>(b)]) ++train_correct;
                }
                model.zero_grads();
                model.backward(labels);
                adam_step(model.parameters(), state, lr, tc.adam_beta1, tc.adam_beta2, tc.adam_eps);
            } catch (const numeric_error& e) {
                throw numeric_error("epoch " + std::to_string(epoch) + ", batch " +
                                    std::to_string(batch_no) + ": " + e.what());
            }
        }

        auto [val_loss, val_acc] = evaluate_loss_acc(model, ds, val_idx, tc.batch_size);
        EpochLog el;
        el.epoch = epoch;
        el.train_loss = train_loss_sum / static_cast<double>(n);
        el.train_acc = static_cast<double>(train_correct) / static_cast<double>(n);
        el.val_loss = val_loss;
        el.val_acc = val_acc;
        el.lr = lr;
        log.epochs.push_back(el);

        const PlateauScheduler::Decision decision = sched.observe(val_loss);
        if (decision.improved) {
            log.best_epoch = epoch;
            best_snapshot = Snapshot<Real>::take(model);
        }
        if (decision.stop) {
            log.stopped_epoch = epoch;
            break;
        }
        if (decision.reduced) log.lr_drop_epochs.push_back(epoch);
    }
    best_snapshot.restore(model);
    log.best_val_loss = sched.best();
    log.final_lr = sched.lr();
    return log;
}

}  // namespace iqshrink

#endif
