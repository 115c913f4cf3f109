#ifndef IQSHRINK_RNG_HPP
#define IQSHRINK_RNG_HPP

#include <cmath>
#include <cstdint>

namespace iqshrink {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Deterministic generator with explicit state; identical across platforms and
// independent of the standard library's distribution internals.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

    std::uint64_t next_u64() { return splitmix64(state_); }

    std::uint64_t state() const { return state_; }
    void set_state(std::uint64_t s) { state_ = s; }

    // [0, 1) with 53 random bits
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    std::uint64_t uniform_index(std::uint64_t n) {
        // modulo bias negligible for n << 2^64
        return next_u64() % n;
    }

    // Box-Muller; consumes exactly two uniforms per call.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        return r * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Substream derivation: mixes the ids into a fresh state so streams for
    // different (cell, frame, purpose) tuples never collide regardless of
    // evaluation order.
    static Rng derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                      std::uint64_t c = 0) {
        std::uint64_t s = seed;
        std::uint64_t h = splitmix64(s);
        s = h ^ (a + 0x9e3779b97f4a7c15ULL);
        h = splitmix64(s);
        s = h ^ (b + 0xc2b2ae3d27d4eb4fULL);
        h = splitmix64(s);
        s = h ^ (c + 0x165667b19e3779f9ULL);
        splitmix64(s);
        return Rng(s);
    }

private:
    std::uint64_t state_;
};

}  // namespace iqshrink

#endif
