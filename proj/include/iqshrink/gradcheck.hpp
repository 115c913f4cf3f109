#ifndef IQSHRINK_GRADCHECK_HPP
#define IQSHRINK_GRADCHECK_HPP

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "iqshrink/tensor.hpp"

namespace iqshrink {

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::int64_t worst_index = -1;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

// Central finite differences against already-populated analytic gradients.
//
// The caller runs its forward+backward once so every param.grad holds the
// analytic gradient, then hands over a pure forward `loss` functor. The
// checker perturbs one element at a time; the computation must be
// deterministic and free of side effects (Mode::Check for anything with
// running statistics).
template <typename Real>
GradCheckResult grad_check(const std::vector<Parameter<Real>*>& params,
                           const std::function<double()>& loss, double step = 1e-5) {
    GradCheckResult res;
    for (Parameter<Real>* p : params) {
        for (std::int64_t i = 0; i < p->numel(); ++i) {
            const Real saved = p->value[i];
            p->value[i] = saved + static_cast<Real>(step);
            double up;
            try {
                up = loss();
            } catch (const numeric_error& e) {
                p->value[i] = saved;
                throw numeric_error("grad_check aborted at parameter '" + p->name + "' index " +
                                    std::to_string(i) + ": " + e.what());
            }
            p->value[i] = saved - static_cast<Real>(step);
            double down;
            try {
                down = loss();
            } catch (const numeric_error& e) {
                p->value[i] = saved;
                throw numeric_error("grad_check aborted at parameter '" + p->name + "' index " +
                                    std::to_string(i) + ": " + e.what());
            }
            p->value[i] = saved;
            if (!std::isfinite(up) || !std::isfinite(down)) {
                throw numeric_error("grad_check aborted: non-finite loss while perturbing '" +
                                    p->name + "' index " + std::to_string(i));
            }
            const double numeric = (up - down) / (2.0 * step);
            const double analytic = static_cast<double>(p->grad[i]);
            const double denom = std::max({1.0, std::fabs(analytic), std::fabs(numeric)});
            const double rel = std::fabs(analytic - numeric) / denom;
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst_param = p->name;
                res.worst_index = i;
                res.worst_analytic = analytic;
                res.worst_numeric = numeric;
            }
        }
    }
    return res;
}

}  // namespace iqshrink

#endif
