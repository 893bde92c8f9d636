#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace rescuenet {

// Exact accumulator for IEEE-754 doubles. Summands are decomposed into
// 32-bit limbs of a wide fixed-point register, so the accumulated value is
// the mathematically exact sum and, in particular, independent of the order
// in which values are added. Loss reductions use this so that permuting the
// pixel stream leaves the reduced value bit-identical.
//
// Limb i holds limbs_[i] * 2^(kMinExp + 32*i). kMinExp sits below the least
// significant bit of the smallest double subnormal, the top limb has enough
// headroom for 2^30 summands of the largest magnitude.
class ExactSum {
public:
    ExactSum() = default;

    void add(double v) {
        if (v == 0.0) return;
        if (!std::isfinite(v)) {
            if (std::isnan(v)) {
                nan_ = true;
            } else if (v > 0) {
                ++pos_inf_;
            } else {
                ++neg_inf_;
            }
            return;
        }
        int exp = 0;
        const double mant = std::frexp(v, &exp);  // v = mant * 2^exp, |mant| in [0.5, 1)
        const auto sig = static_cast<std::int64_t>(mant * 9007199254740992.0);  // * 2^53
        const int bitpos = (exp - 53) - kMinExp;
        const int limb = bitpos >> 5;
        const int shift = bitpos & 31;
        const auto mag = static_cast<std::uint64_t>(sig < 0 ? -sig : sig);
        const unsigned __int128 t = static_cast<unsigned __int128>(mag) << shift;
        const auto c0 = static_cast<std::int64_t>(static_cast<std::uint32_t>(t));
        const auto c1 = static_cast<std::int64_t>(static_cast<std::uint32_t>(t >> 32));
        const auto c2 = static_cast<std::int64_t>(static_cast<std::uint32_t>(t >> 64));
        if (sig >= 0) {
            limbs_[limb] += c0;
            limbs_[limb + 1] += c1;
            limbs_[limb + 2] += c2;
        } else {
            limbs_[limb] -= c0;
            limbs_[limb + 1] -= c1;
            limbs_[limb + 2] -= c2;
        }
        if (++adds_since_normalize_ >= (1 << 30)) normalize();
    }

    void add(float v) { add(static_cast<double>(v)); }

    // Exact total, rounded once to double. A pure function of the multiset
    // of added values.
    double value() const {
        if (nan_ || (pos_inf_ > 0 && neg_inf_ > 0)) return std::nan("");
        if (pos_inf_ > 0) return HUGE_VAL;
        if (neg_inf_ > 0) return -HUGE_VAL;

        std::array<std::int64_t, kLimbs> canon = limbs_;
        carry_propagate(canon);
        bool negative = false;
        if (canon[kLimbs - 1] < 0) {
            negative = true;
            for (auto& l : canon) l = -l;
            carry_propagate(canon);
        }
        int top = kLimbs - 1;
        while (top > 0 && canon[top] == 0) --top;
        const int lo = top - 3 > 0 ? top - 3 : 0;
        double r = 0.0;
        for (int i = top; i >= lo; --i) {
            r = r * 4294967296.0 + static_cast<double>(canon[i]);
        }
        r = std::ldexp(r, kMinExp + 32 * lo);
        return negative ? -r : r;
    }

    void reset() {
        limbs_.fill(0);
        adds_since_normalize_ = 0;
        nan_ = false;
        pos_inf_ = neg_inf_ = 0;
    }

private:
    static constexpr int kMinExp = -1152;
    static constexpr int kLimbs = 72;  // covers up to 2^(-1152 + 72*32) = 2^1152

    void normalize() {
        carry_propagate(limbs_);
        adds_since_normalize_ = 0;
    }

    static void carry_propagate(std::array<std::int64_t, kLimbs>& limbs) {
        for (int i = 0; i < kLimbs - 1; ++i) {
            const std::int64_t carry = limbs[i] >> 32;  // arithmetic shift: floor division
            limbs[i] -= carry << 32;
            limbs[i + 1] += carry;
        }
    }

    std::array<std::int64_t, kLimbs> limbs_{};
    int adds_since_normalize_ = 0;
    bool nan_ = false;
    std::uint64_t pos_inf_ = 0;
    std::uint64_t neg_inf_ = 0;
};

}  // namespace rescuenet
