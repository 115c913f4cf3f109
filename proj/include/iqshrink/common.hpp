#ifndef IQSHRINK_COMMON_HPP
#define IQSHRINK_COMMON_HPP

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace iqshrink {

// Contract violations: bad shapes, bad arguments, broken invariants.
class contract_error : public std::invalid_argument {
public:
    explicit contract_error(const std::string& msg) : std::invalid_argument(msg) {}
};

// NaN/Inf detected in a computation result. Poisoned values never propagate.
class numeric_error : public std::runtime_error {
public:
    explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Configuration problems: unknown keys, invariant violations, bad values.
class config_error : public std::runtime_error {
public:
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

inline int thread_count() {
    // IQSHRINK_THREADS=1 forces strict deterministic mode. The compute core is
    // single-threaded by construction, so every mode is strict; the variable is
    // honored for interface compatibility.
    if (const char* env = std::getenv("IQSHRINK_THREADS")) {
        int n = std::atoi(env);
        if (n >= 1) return 1;
    }
    return 1;
}

template <typename Real>
inline void require_finite(Real v, const char* where) {
    if (!std::isfinite(static_cast<double>(v))) {
        throw numeric_error(std::string("non-finite value in ") + where);
    }
}

}  // namespace iqshrink

#endif
