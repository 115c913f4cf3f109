#ifndef IQSHRINK_CHECKS_HPP
#define IQSHRINK_CHECKS_HPP

#include <cstdint>
#include <functional>

#include "iqshrink/gradcheck.hpp"
#include "iqshrink/model.hpp"

namespace iqshrink {

// Block-level finite-difference checks in 64-bit mode. Each returns the max
// relative error over all parameters of the block (and its input, where the
// input is wrapped as a parameter).

inline double check_ccsa_block(std::uint64_t seed, std::int64_t d = 4, std::int64_t heads = 2) {
    Rng rng(seed);
    AttentionConfig cfg{d, heads, 1, 1};
    CcsaBlock<double> block(cfg, "blk.", rng);
    Parameter<double> x(Shape{2, 3, 2, d}, "x");
    for (std::int64_t i = 0; i < x.numel(); ++i) x.value[i] = rng.uniform(-1.0, 1.0);
    Tensor<double> w(x.value.shape());
    for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-1.0, 1.0);

    auto loss = [&] {
        Tensor<double> y = block.forward(x.value);
        double s = 0.0;
        for (std::int64_t i = 0; i < y.numel(); ++i) s += y[i] * w[i];
        return s;
    };
    loss();
    Tensor<double> dx = block.backward(w);
    x.grad = dx;
    std::vector<Parameter<double>*> params = block.parameters();
    params.push_back(&x);
    return grad_check<double>(params, loss).max_rel_err;
}

inline double check_lstm(std::uint64_t seed, std::int64_t units = 3, std::int64_t steps = 3) {
    Rng rng(seed);
    LstmLayer<double> lstm(units, "lstm.", rng);
    Parameter<double> x(Shape{2, steps, 2}, "x");
    for (std::int64_t i = 0; i < x.numel(); ++i) x.value[i] = rng.uniform(-1.0, 1.0);
    Tensor<double> w(Shape{2, steps, units});
    for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-1.0, 1.0);

    auto loss = [&] {
        Tensor<double> y = lstm.forward(x.value);
        double s = 0.0;
        for (std::int64_t i = 0; i < y.numel(); ++i) s += y[i] * w[i];
        return s;
    };
    loss();
    x.grad = lstm.backward(w);
    std::vector<Parameter<double>*> params = lstm.parameters();
    params.push_back(&x);
    return grad_check<double>(params, loss).max_rel_err;
}

namespace check_detail {

// Retries f with fresh seeds until the shrinkage inputs sit at least `margin`
// away from every garrote breakpoint, then runs the check.
template <typename MarginFn, typename CheckFn>
double with_breakpoint_margin(std::uint64_t seed, double margin, const MarginFn& forward_margin,
                              const CheckFn& check) {
    for (int attempt = 0; attempt < 64; ++attempt) {
        const std::uint64_t s = seed + 1000003ULL * static_cast<std::uint64_t>(attempt);
        if (forward_margin(s) >= margin) return check(s);
    }
    throw numeric_error("could not find a breakpoint-free input after 64 resamples");
}

}  // namespace check_detail

inline double check_shrink_block_a(std::uint64_t seed, std::int64_t channels = 3) {
    ShrinkBlockA<double> block;
    Parameter<double> x;
    Tensor<double> w;
    auto build_and_margin = [&](std::uint64_t s) {
        Rng rng(s);
        block = ShrinkBlockA<double>(channels, "a.", rng);
        x = Parameter<double>(Shape{2, 4, 4, channels}, "x");
        for (std::int64_t i = 0; i < x.numel(); ++i) x.value[i] = rng.uniform(-1.5, 1.5);
        w = Tensor<double>(x.value.shape());
        Rng wrng(s ^ 0x9e3779b9ULL);
        for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = wrng.uniform(-1.0, 1.0);
        block.forward(x.value, Mode::Check);
        return static_cast<double>(block.breakpoint_margin());
    };
    return check_detail::with_breakpoint_margin(
        seed, 5e-3, build_and_margin,
        [&](std::uint64_t) {
            auto loss = [&] {
                Tensor<double> y = block.forward(x.value, Mode::Check);
                double acc = 0.0;
                for (std::int64_t i = 0; i < y.numel(); ++i) acc += y[i] * w[i];
                return acc;
            };
            loss();
            x.zero_grad();
            for (auto* p : block.parameters()) p->zero_grad();
            x.grad = block.backward(w);
            std::vector<Parameter<double>*> params = block.parameters();
            params.push_back(&x);
            return grad_check<double>(params, loss, 1e-6).max_rel_err;
        });
}

inline double check_shrink_block_b(std::uint64_t seed, std::int64_t channels = 2) {
    ShrinkBlockB<double> block;
    Parameter<double> x;
    Tensor<double> w;
    auto build_and_margin = [&](std::uint64_t s) {
        Rng rng(s);
        block = ShrinkBlockB<double>(channels, "b.", rng);
        x = Parameter<double>(Shape{2, 4, 4, channels}, "x");
        for (std::int64_t i = 0; i < x.numel(); ++i) x.value[i] = rng.uniform(-1.5, 1.5);
        Tensor<double> y = block.forward(x.value, Mode::Check);
        w = Tensor<double>(y.shape());
        Rng wrng(s ^ 0x9e3779b9ULL);
        for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = wrng.uniform(-1.0, 1.0);
        return static_cast<double>(block.breakpoint_margin());
    };
    return check_detail::with_breakpoint_margin(
        seed, 5e-3, build_and_margin,
        [&](std::uint64_t) {
            auto loss = [&] {
                Tensor<double> y = block.forward(x.value, Mode::Check);
                double acc = 0.0;
                for (std::int64_t i = 0; i < y.numel(); ++i) acc += y[i] * w[i];
                return acc;
            };
            loss();
            x.zero_grad();
            for (auto* p : block.parameters()) p->zero_grad();
            block.forward(x.value, Mode::Check);
            x.grad = block.backward(w);
            std::vector<Parameter<double>*> params = block.parameters();
            params.push_back(&x);
            return grad_check<double>(params, loss, 1e-6).max_rel_err;
        });
}

// Tiny end-to-end model: forward + cross-entropy, all parameters checked.
inline double check_full_model(std::uint64_t seed) {
    ModelConfig cfg;
    cfg.units = 4;
    cfg.d = 4;
    cfg.heads = 2;
    cfg.ccsa_depth = 1;
    cfg.depth_a = 1;
    cfg.depth_b = 1;
    cfg.channels = 2;
    cfg.num_classes = 3;
    cfg.frame_len = 16;
    cfg.l2 = 0.0;  // pure cross-entropy keeps the finite-difference oracle simple

    for (int attempt = 0; attempt < 64; ++attempt) {
        cfg.seed = seed + 1000003ULL * static_cast<std::uint64_t>(attempt);
        Model<double> model(cfg);
        Rng rng(cfg.seed ^ 0xabcdef);
        Tensor<double> x(Shape{2, cfg.frame_len, 2});
        for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform(-1.5, 1.5);
        std::vector<int> labels{0, 2};

        model.forward(x, Mode::Check);
        if (static_cast<double>(model.min_breakpoint_margin()) < 1e-3) continue;

        auto loss = [&] {
            Tensor<double> probs = model.forward(x, Mode::Check);
            double ce = 0.0;
            for (std::int64_t b = 0; b < 2; ++b) {
                ce -= std::log(std::max(static_cast<double>(probs.at2(b, labels[static_cast<std::size_t>(b)])), 1e-12));
            }
            return ce / 2.0;
        };
        model.zero_grads();
        loss();
        model.backward(labels);
        return grad_check<double>(model.parameters(), loss, 1e-6).max_rel_err;
    }
    throw numeric_error("could not find a breakpoint-free model input after 64 resamples");
}

}  // namespace iqshrink

#endif
