#pragma once
// Deterministic random number generation.
//
// Engine: std::mt19937_64, whose output stream is fixed by the C++ standard
// and therefore identical on every platform for a given seed.  Normal
// variates are produced by the Box-Muller transform on 53-bit uniforms;
// std::normal_distribution is avoided because its algorithm is
// implementation-defined and would break cross-platform determinism.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

namespace covarcast {

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform on [0, 1): top 53 bits scaled by 2^-53.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal, Box-Muller: z0 = sqrt(-2 ln u1) cos(2 pi u2),
    // z1 = sqrt(-2 ln u1) sin(2 pi u2), with u1 in (0,1] so the log is finite.
    // The sine variate is cached and returned on the next call.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = static_cast<double>((engine_() >> 11) + 1) * 0x1.0p-53;
        const double u2 = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    // Unbiased integer in [0, n) by rejection.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
        std::uint64_t x, r;
        do {
            x = engine_();
            r = x % n;
        } while (x - r > std::uint64_t(0) - n);
        return r;
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// Fisher-Yates shuffle, deterministic given the Rng state.
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.below(i));
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace covarcast
