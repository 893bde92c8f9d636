#include "rescuenet/gradcheck.hpp"

#include <cmath>
#include <limits>

namespace rescuenet {

double finite_difference_check(const ScalarFn64& f, const TensorT<double>& x, double h) {
    TensorT<double> probe = x.clone();
    probe.set_requires_grad(true);
    TapeT<double> tape;
    TensorT<double> loss = f(tape, probe);
    if (loss.numel() != 1) throw ValueError("finite_difference_check requires a scalar function");
    tape.backward(loss);

    std::vector<double> analytic(static_cast<std::size_t>(x.numel()), 0.0);
    if (probe.has_grad()) analytic = probe.grad();

    double max_err = 0.0;
    TensorT<double> shifted = x.clone();
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        const double orig = shifted.data()[i];
        shifted.data()[i] = orig + h;
        TapeT<double> tp(false);
        const double fp = f(tp, shifted).item();
        shifted.data()[i] = orig - h;
        TapeT<double> tm(false);
        const double fm = f(tm, shifted).item();
        shifted.data()[i] = orig;
        const double numeric = (fp - fm) / (2.0 * h);
        const double a = analytic[static_cast<std::size_t>(i)];
        if (!std::isfinite(numeric) || !std::isfinite(a)) {
            return std::numeric_limits<double>::infinity();
        }
        const double denom = std::abs(a) > 1.0 ? std::abs(a) : 1.0;
        const double err = std::abs(a - numeric) / denom;
        if (err > max_err) max_err = err;
    }
    return max_err;
}

}  // namespace rescuenet
