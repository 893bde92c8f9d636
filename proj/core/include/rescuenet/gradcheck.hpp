#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rescuenet/tape.hpp"

namespace rescuenet {

// A scalar-valued function of one tensor, evaluated through a tape so its
// analytic gradient can be compared against central differences. Gradient
// checking always runs in 64-bit: 32-bit finite differences are too noisy
// for tight tolerances.
using ScalarFn64 = std::function<TensorT<double>(TapeT<double>&, const TensorT<double>&)>;

// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
// An absent analytic gradient counts as zero. NaN anywhere yields +inf so the
// check fails loudly.
double finite_difference_check(const ScalarFn64& f, const TensorT<double>& x, double h = 1e-5);

struct OpCheckResult {
    std::string name;
    double max_rel_err = 0.0;
    int trials = 0;
};

// Randomized finite-difference sweep over every differentiable op and every
// loss. Inputs are sampled away from the non-smooth points of relu/clamp.
// Deterministic given the seed.
std::vector<OpCheckResult> run_gradcheck_suite(int trials_per_op, std::uint64_t seed);

}  // namespace rescuenet
