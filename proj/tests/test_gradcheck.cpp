#include <doctest.h>

#include <cmath>
#include <limits>

#include "iqshrink/gradcheck.hpp"
#include "iqshrink/rng.hpp"

using namespace iqshrink;

TEST_CASE("quadratic closed form: analytic 2w matches finite differences") {
    Rng rng(1);
    Parameter<double> w(Shape{6}, "w");
    for (std::int64_t i = 0; i < 6; ++i) w.value[i] = rng.uniform(-2.0, 2.0);
    for (std::int64_t i = 0; i < 6; ++i) w.grad[i] = 2.0 * w.value[i];
    auto res = grad_check<double>({&w}, [&] {
        double s = 0.0;
        for (std::int64_t i = 0; i < 6; ++i) s += w.value[i] * w.value[i];
        return s;
    });
    CHECK(res.max_rel_err < 1e-9);
}

TEST_CASE("linear function: finite differences exact up to rounding") {
    Parameter<double> w(Shape{4}, "w");
    const double c[4] = {0.5, -1.25, 2.0, 3.5};
    for (std::int64_t i = 0; i < 4; ++i) {
        w.value[i] = 0.1 * static_cast<double>(i);
        w.grad[i] = c[i];
    }
    auto res = grad_check<double>({&w}, [&] {
        double s = 0.0;
        for (std::int64_t i = 0; i < 4; ++i) s += c[i] * w.value[i];
        return s;
    });
    CHECK(res.max_rel_err < 1e-10);
}

TEST_CASE("corrupted gradient (x2) reports relative error near 0.5") {
    Parameter<double> w(Shape{1}, "w");
    w.value[0] = 1.0;
    w.grad[0] = 4.0;  // true gradient of w^2 at 1 is 2
    auto res = grad_check<double>({&w}, [&] { return w.value[0] * w.value[0]; });
    CHECK(res.max_rel_err == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(res.worst_param == "w");
}

TEST_CASE("non-finite loss aborts naming the parameter") {
    Parameter<double> w(Shape{1}, "poisoned");
    w.value[0] = 1.0;
    w.grad[0] = 1.0;
    try {
        grad_check<double>({&w}, [&]() -> double { return std::numeric_limits<double>::quiet_NaN(); });
        FAIL("expected numeric_error");
    } catch (const numeric_error& e) {
        CHECK(std::string(e.what()).find("poisoned") != std::string::npos);
    }
}
