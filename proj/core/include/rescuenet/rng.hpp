#pragma once

#include <cmath>
#include <cstdint>

namespace rescuenet {

// SplitMix64 generator (Steele, Lea, Flood 2014). Chosen because the whole
// state is one u64, the output function is pure integer arithmetic (so the
// stream is identical on every platform), and independent child streams can
// be split off cheaply. Constants are the published ones:
//   gamma  = 0x9E3779B97F4A7C15 (2^64 / golden ratio)
//   mix1   = 0xBF58476D1CE4E5B9
//   mix2   = 0x94D049BB133111EB
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed = 0) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Independent child stream; advances this stream by one draw.
    SplitMix64 split() { return SplitMix64(next()); }

    std::uint64_t state() const { return state_; }
    void set_state(std::uint64_t s) { state_ = s; }

    // Uniform in [0, 1) with 53 random bits.
    double next_double() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // Uniform in [0, 1) with 24 random bits; exactly representable in float.
    float next_float() { return static_cast<float>(next() >> 40) * 0x1.0p-24f; }

    // Unbiased uniform integer in [0, n). Rejection sampling on the top of
    // the range keeps the result platform independent.
    std::uint64_t next_below(std::uint64_t n) {
        if (n <= 1) return 0;
        const std::uint64_t limit = ~0ull - ~0ull % n;
        std::uint64_t r;
        do {
            r = next();
        } while (r >= limit);
        return r % n;
    }

    // Integer in [lo, hi] inclusive.
    std::int64_t next_in_range(std::int64_t lo, std::int64_t hi) {
        return lo + static_cast<std::int64_t>(next_below(static_cast<std::uint64_t>(hi - lo + 1)));
    }

    // Standard normal via Box-Muller. Two draws per value.
    double next_normal() {
        double u1 = next_double();
        double u2 = next_double();
        if (u1 < 0x1.0p-60) u1 = 0x1.0p-60;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

private:
    std::uint64_t state_;
};

// Stateless mix of up to four values into a u64; used for per-pixel texture
// noise so the result does not depend on pixel visit order.
inline std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0,
                                  std::uint64_t d = 0) {
    SplitMix64 h(a);
    h.set_state(h.next() ^ b);
    h.set_state(h.next() ^ c);
    h.set_state(h.next() ^ d);
    return h.next();
}

// Uniform float in [0,1) derived from a stateless hash.
inline float hash_float(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0,
                        std::uint64_t d = 0) {
    return static_cast<float>(hash_combine(a, b, c, d) >> 40) * 0x1.0p-24f;
}

}  // namespace rescuenet
