#include <doctest.h>

#include <cmath>
#include <vector>

#include "iqshrink/checks.hpp"
#include "iqshrink/temporal.hpp"

using namespace iqshrink;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("all-zero weights give an all-zero hidden sequence") {
    Rng rng(1);
    LstmLayer<double> lstm(3, "l.", rng);
    lstm.w_in.value.fill(0.0);
    lstm.w_rec.value.fill(0.0);
    lstm.bias.value.fill(0.0);
    Tensor<double> x(Shape{2, 4, 2});
    for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform(-1.0, 1.0);
    Tensor<double> h = lstm.forward(x);
    CHECK(h.shape() == Shape{2, 4, 3});
    for (std::int64_t i = 0; i < h.numel(); ++i) CHECK(h[i] == 0.0);
}

TEST_CASE("single-step scalar oracle") {
    Rng rng(2);
    LstmLayer<double> lstm(1, "l.", rng);
    lstm.w_in.value.fill(1.0);
    lstm.w_rec.value.fill(1.0);
    lstm.bias.value.fill(0.0);
    // x = (1, 0) so the gate preactivations are all 1
    Tensor<double> x(Shape{1, 1, 2}, {1.0, 0.0});
    Tensor<double> h = lstm.forward(x);

    const double gi = sigmoid(1.0), gf = sigmoid(1.0), gg = std::tanh(1.0), go = sigmoid(1.0);
    const double c = gf * 0.0 + gi * gg;
    const double expected = go * std::tanh(c);
    CHECK(gi == doctest::Approx(0.731059).epsilon(1e-6));
    CHECK(gg == doctest::Approx(0.761594).epsilon(1e-6));
    CHECK(c == doctest::Approx(0.556770).epsilon(1e-5));
    CHECK(h[0] == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("multi-step scalar oracle walks the recurrence") {
    Rng rng(3);
    const std::int64_t U = 2, T = 5;
    LstmLayer<double> lstm(U, "l.", rng);
    Tensor<double> x(Shape{1, T, 2});
    for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform(-1.0, 1.0);
    Tensor<double> h = lstm.forward(x);

    // independent step-through
    std::vector<double> hprev(U, 0.0), cprev(U, 0.0);
    for (std::int64_t t = 0; t < T; ++t) {
        std::vector<double> z(4 * U, 0.0);
        for (std::int64_t j = 0; j < 4 * U; ++j) {
            z[static_cast<std::size_t>(j)] = lstm.bias.value[j] +
                                             x.at3(0, t, 0) * lstm.w_in.value.at2(0, j) +
                                             x.at3(0, t, 1) * lstm.w_in.value.at2(1, j);
            for (std::int64_t u = 0; u < U; ++u) {
                z[static_cast<std::size_t>(j)] += hprev[static_cast<std::size_t>(u)] * lstm.w_rec.value.at2(u, j);
            }
        }
        for (std::int64_t u = 0; u < U; ++u) {
            const double gi = sigmoid(z[static_cast<std::size_t>(u)]);
            const double gf = sigmoid(z[static_cast<std::size_t>(U + u)]);
            const double gg = std::tanh(z[static_cast<std::size_t>(2 * U + u)]);
            const double go = sigmoid(z[static_cast<std::size_t>(3 * U + u)]);
            const double c = gf * cprev[static_cast<std::size_t>(u)] + gi * gg;
            cprev[static_cast<std::size_t>(u)] = c;
            hprev[static_cast<std::size_t>(u)] = go * std::tanh(c);
            CHECK(h.at3(0, t, u) == doctest::Approx(hprev[static_cast<std::size_t>(u)]).epsilon(1e-12));
        }
    }
}

TEST_CASE("causality: perturbing time t leaves earlier outputs untouched") {
    Rng rng(4);
    LstmLayer<double> lstm(3, "l.", rng);
    Tensor<double> x(Shape{1, 6, 2});
    for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform(-1.0, 1.0);
    Tensor<double> h1 = lstm.forward(x);
    const std::int64_t t_perturb = 3;
    x.at3(0, t_perturb, 0) += 0.5;
    Tensor<double> h2 = lstm.forward(x);
    for (std::int64_t t = 0; t < t_perturb; ++t) {
        for (std::int64_t u = 0; u < 3; ++u) CHECK(h1.at3(0, t, u) == h2.at3(0, t, u));
    }
    bool changed = false;
    for (std::int64_t t = t_perturb; t < 6; ++t) {
        for (std::int64_t u = 0; u < 3; ++u) changed |= h1.at3(0, t, u) != h2.at3(0, t, u);
    }
    CHECK(changed);
}

TEST_CASE("hidden states are bounded by 1 in magnitude") {
    Rng rng(5);
    LstmLayer<double> lstm(4, "l.", rng);
    Tensor<double> x(Shape{2, 20, 2});
    for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform(-10.0, 10.0);
    Tensor<double> h = lstm.forward(x);
    for (std::int64_t i = 0; i < h.numel(); ++i) CHECK(std::fabs(h[i]) <= 1.0);
}

TEST_CASE("recurrent kernel rows are orthonormal at initialization") {
    Rng rng(6);
    LstmLayer<double> lstm(4, "l.", rng);
    const std::int64_t U = 4;
    for (std::int64_t r1 = 0; r1 < U; ++r1) {
        for (std::int64_t r2 = 0; r2 < U; ++r2) {
            double dot = 0.0;
            for (std::int64_t j = 0; j < 4 * U; ++j) {
                dot += lstm.w_rec.value.at2(r1, j) * lstm.w_rec.value.at2(r2, j);
            }
            CHECK(dot == doctest::Approx(r1 == r2 ? 1.0 : 0.0).epsilon(1e-10));
        }
    }
}

TEST_CASE("three-step gradient check") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        CHECK(check_lstm(seed) <= 1e-6);
    }
}

TEST_CASE("pad_width layout, degenerate case, and sum preservation") {
    Tensor<double> f(Shape{1, 1, 2, 1}, {3.5, -1.25});
    Tensor<double> p2 = pad_width(f, 2);
    CHECK(p2.shape() == Shape{1, 1, 2, 1});
    CHECK(p2[0] == 3.5);
    CHECK(p2[1] == -1.25);

    Tensor<double> p4 = pad_width(f, 4);
    CHECK(p4.shape() == Shape{1, 1, 4, 1});
    CHECK(p4.at4(0, 0, 0, 0) == 3.5);
    CHECK(p4.at4(0, 0, 1, 0) == -1.25);
    CHECK(p4.at4(0, 0, 2, 0) == 0.0);
    CHECK(p4.at4(0, 0, 3, 0) == 0.0);

    Rng rng(7);
    Tensor<double> big(Shape{2, 3, 2, 4});
    for (std::int64_t i = 0; i < big.numel(); ++i) big[i] = rng.uniform(-1.0, 1.0);
    Tensor<double> padded = pad_width(big, 7);
    double sum_before = 0.0, sum_after = 0.0;
    for (std::int64_t i = 0; i < big.numel(); ++i) sum_before += big[i];
    for (std::int64_t i = 0; i < padded.numel(); ++i) sum_after += padded[i];
    CHECK(sum_before == doctest::Approx(sum_after).epsilon(1e-12));

    CHECK_THROWS_AS(pad_width(f, 1), contract_error);
}

TEST_CASE("fusion concatenates with the LSTM channel last") {
    Tensor<double> fp(Shape{1, 1, 2, 1}, {1.0, 2.0});
    Tensor<double> hl(Shape{1, 1, 2}, {3.0, 4.0});
    Tensor<double> fused = fuse_branches(fp, hl);
    CHECK(fused.shape() == Shape{1, 1, 2, 2});
    CHECK(fused.at4(0, 0, 0, 0) == 1.0);
    CHECK(fused.at4(0, 0, 0, 1) == 3.0);
    CHECK(fused.at4(0, 0, 1, 0) == 2.0);
    CHECK(fused.at4(0, 0, 1, 1) == 4.0);

    // slicing recovers both branches exactly
    Rng rng(8);
    Tensor<double> f2(Shape{2, 3, 4, 5});
    for (std::int64_t i = 0; i < f2.numel(); ++i) f2[i] = rng.uniform(-1.0, 1.0);
    Tensor<double> h2(Shape{2, 3, 4});
    for (std::int64_t i = 0; i < h2.numel(); ++i) h2[i] = rng.uniform(-1.0, 1.0);
    Tensor<double> fused2 = fuse_branches(f2, h2);
    CHECK(fused2.shape() == Shape{2, 3, 4, 6});
    for (std::int64_t r = 0; r < 2 * 3 * 4; ++r) {
        for (std::int64_t c = 0; c < 5; ++c) CHECK(fused2[r * 6 + c] == f2[r * 5 + c]);
        CHECK(fused2[r * 6 + 5] == h2[r]);
    }

    Tensor<double> wrong(Shape{1, 1, 3});
    CHECK_THROWS_AS(fuse_branches(fp, wrong), contract_error);
}
