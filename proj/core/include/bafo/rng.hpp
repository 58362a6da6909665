#pragma once

#include <cmath>
#include <cstdint>

namespace bafo {

// Permuted-congruential generator (XSH-RR variant, 64-bit state, 32-bit
// output). All randomness in the toolkit flows through this generator so
// that every run is reproducible from its seed alone, independent of the
// standard library's distribution implementations.
//
// Constants: multiplier 6364136223846793005, default increment
// 1442695040888963407 (must be odd).
class Pcg32 {
public:
    explicit Pcg32(std::uint64_t seed, std::uint64_t stream = 0) {
        state_ = 0u;
        inc_ = (stream << 1u) | 1u;
        next_u32();
        state_ += seed;
        next_u32();
    }

    std::uint32_t next_u32() {
        std::uint64_t old = state_;
        state_ = old * 6364136223846793005ULL + inc_;
        std::uint32_t xorshifted =
            static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
        std::uint32_t rot = static_cast<std::uint32_t>(old >> 59u);
        return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
    }

    std::uint64_t next_u64() {
        std::uint64_t hi = next_u32();
        return (hi << 32) | next_u32();
    }

    // Uniform in [0, 1). 32 bits of resolution is plenty for sampling and
    // shuffling; Gaussian draws combine two of these.
    double next_double() {
        return next_u32() * (1.0 / 4294967296.0);
    }

    // Uniform integer in [0, bound) without modulo bias.
    std::uint32_t next_below(std::uint32_t bound) {
        std::uint32_t threshold = (-bound) % bound;
        for (;;) {
            std::uint32_t r = next_u32();
            if (r >= threshold) return r % bound;
        }
    }

    // Standard normal via Box-Muller. Consumes two uniforms per draw.
    double next_gaussian() {
        double u1 = (static_cast<double>(next_u32()) + 0.5) * (1.0 / 4294967296.0);
        double u2 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * 3.14159265358979323846 * u2);
    }

private:
    std::uint64_t state_ = 0;
    std::uint64_t inc_ = 0;
};

}  // namespace bafo
