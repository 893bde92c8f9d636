#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "rescuenet/exact_sum.hpp"
#include "rescuenet/gradcheck.hpp"
#include "rescuenet/rng.hpp"
#include "rescuenet/tape.hpp"

using namespace rescuenet;

namespace {

TensorT<double> rand_tensor(Shape shape, SplitMix64& rng, double lo = -2.0, double hi = 2.0) {
    TensorT<double> t(shape);
    for (auto& v : t.values()) v = lo + (hi - lo) * rng.next_double();
    return t;
}

}  // namespace

TEST_CASE("elementwise examples") {
    Tape tape(false);
    Tensor a({3}, {1.f, 2.f, 3.f});
    Tensor b({3}, {1.f, 1.f, 1.f});
    CHECK(tape.add(a, b).values() == std::vector<float>{2.f, 3.f, 4.f});

    Tensor one({1}, {1.f});
    CHECK(tape.log(one).item() == doctest::Approx(0.0));

    Tensor c({2}, {2.f, 4.f});
    CHECK(tape.mul_scalar(c, 0.5f).values() == std::vector<float>{1.f, 2.f});
}

TEST_CASE("elementwise shape mismatch names both shapes") {
    Tape tape(false);
    Tensor a({2, 3});
    Tensor b({4});
    CHECK_THROWS_WITH_AS(tape.add(a, b), doctest::Contains("[2,3]"), ShapeError);
    try {
        tape.add(a, b);
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("[4]") != std::string::npos);
    }
}

TEST_CASE("broadcasting follows the trailing-dimension rule") {
    // Independent oracle for the documented rule, compared on many pairs.
    auto oracle = [](const Shape& a, const Shape& b) -> Shape {
        Shape out;
        const int ra = (int)a.size(), rb = (int)b.size();
        const int r = std::max(ra, rb);
        for (int i = r - 1; i >= 0; --i) {
            const int da = i < ra ? a[ra - 1 - (r - 1 - i)] : 1;  // right-aligned
            const int db = i < rb ? b[rb - 1 - (r - 1 - i)] : 1;
            (void)da;
            (void)db;
        }
        // simpler construction: right-align and take per-dim max
        out.assign(r, 1);
        for (int i = 0; i < r; ++i) {
            const int da = (r - 1 - i) < ra ? a[ra - 1 - (r - 1 - i)] : 1;
            const int db = (r - 1 - i) < rb ? b[rb - 1 - (r - 1 - i)] : 1;
            out[i] = std::max(da, db);
        }
        std::reverse(out.begin(), out.end());
        std::reverse(out.begin(), out.end());
        return out;
    };
    const std::vector<std::pair<Shape, Shape>> cases = {
        {{2, 3}, {3}},      {{2, 1}, {1, 3}}, {{4, 1, 5}, {3, 1}}, {{1}, {2, 2, 2}},
        {{5, 4}, {1}},      {{3, 3}, {3, 3}}, {{2, 1, 4}, {1, 3, 1}},
    };
    for (const auto& [a, b] : cases) {
        const Shape got = broadcast_shape(a, b);
        CHECK(got == oracle(a, b));
        CHECK(got == broadcast_shape(b, a));
    }
    // and the result actually comes out of an op
    Tape tape(false);
    Tensor x({2, 1}, {1.f, 2.f});
    Tensor y({1, 3}, {10.f, 20.f, 30.f});
    Tensor z = tape.add(x, y);
    CHECK(z.shape() == Shape{2, 3});
    CHECK(z.values() == std::vector<float>{11.f, 21.f, 31.f, 12.f, 22.f, 32.f});
}

TEST_CASE("matmul examples") {
    Tape tape(false);
    Tensor eye({2, 2}, {1.f, 0.f, 0.f, 1.f});
    Tensor m({2, 2}, {1.f, 2.f, 3.f, 4.f});
    CHECK(tape.matmul(eye, m).values() == m.values());

    Tensor r({1, 2}, {1.f, 2.f});
    Tensor c({2, 1}, {3.f, 4.f});
    CHECK(tape.matmul(r, c).item() == doctest::Approx(11.0));

    Tensor z({2, 3});
    Tensor any({3, 4}, std::vector<float>(12, 7.f));
    Tensor out = tape.matmul(z, any);
    CHECK(out.shape() == Shape{2, 4});
    for (float v : out.values()) CHECK(v == 0.f);

    Tensor bad({3, 3});
    CHECK_THROWS_AS(tape.matmul(r, bad), ShapeError);
}

TEST_CASE("activation examples") {
    Tape tape(false);
    CHECK(tape.sigmoid(Tensor({1}, {0.f})).item() == doctest::Approx(0.5));

    Tensor u({4}, {0.f, 0.f, 0.f, 0.f});
    Tensor sm = tape.softmax(u, 0);
    for (float v : sm.values()) CHECK(v == doctest::Approx(0.25));

    Tensor rl = tape.relu(Tensor({2}, {-1.f, 2.f}));
    CHECK(rl.values() == std::vector<float>{0.f, 2.f});

    CHECK_THROWS_AS(tape.softmax(u, 3), ValueError);
}

TEST_CASE("softmax slices sum to one and sigmoid stays inside (0,1)") {
    SplitMix64 rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        TensorT<double> x = rand_tensor({3, 5, 4}, rng, -12.0, 12.0);
        TensorT<float> xf = x.cast<float>();
        Tape tape(false);
        const int axis = (int)(trial % 3);
        Tensor sm = tape.softmax(xf, axis);
        // sum over the softmax axis must be 1 within 1e-6
        TapeT<float> t2(false);
        Tensor sums = t2.sum_axes(sm, {axis}, false);
        for (float s : sums.values()) CHECK(std::abs(s - 1.f) <= 1e-6f);

        Tensor sg = tape.sigmoid(xf);
        for (float v : sg.values()) {
            CHECK(v > 0.f);
            CHECK(v < 1.f);
        }
    }
}

TEST_CASE("backward examples") {
    {
        Tape tape;
        Tensor x({3}, {5.f, -1.f, 2.f});
        x.set_requires_grad(true);
        Tensor loss = tape.sum(x);
        tape.backward(loss);
        CHECK(x.grad() == std::vector<float>{1.f, 1.f, 1.f});
    }
    {
        Tape tape;
        Tensor x({1}, {2.f});
        x.set_requires_grad(true);
        Tensor loss = tape.sum(tape.mul(x, x));
        tape.backward(loss);
        CHECK(x.grad()[0] == doctest::Approx(4.0));
    }
    {
        Tape tape;
        Tensor x({1}, {0.f});
        x.set_requires_grad(true);
        Tensor loss = tape.sum(tape.sigmoid(x));
        tape.backward(loss);
        CHECK(x.grad()[0] == doctest::Approx(0.25));
    }
}

TEST_CASE("backward rejects non-scalar loss and consumed tape") {
    Tape tape;
    Tensor x({2}, {1.f, 2.f});
    x.set_requires_grad(true);
    Tensor y = tape.mul(x, x);
    CHECK_THROWS_AS(tape.backward(y), ValueError);
    Tensor loss = tape.sum(y);
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), ValueError);

    Tape other;
    Tensor foreign = Tensor::scalar(1.f);
    CHECK_THROWS_AS(other.backward(foreign), ValueError);
}

TEST_CASE("backward of independent subgraphs matches isolated runs") {
    SplitMix64 rng(7);
    TensorT<double> a64 = rand_tensor({4}, rng);
    TensorT<double> b64 = rand_tensor({4}, rng);
    Tensor a = a64.cast<float>(), b = b64.cast<float>();
    Tensor a2 = a.clone(), b2 = b.clone();
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    a2.set_requires_grad(true);
    b2.set_requires_grad(true);

    Tape joint;
    Tensor la = joint.sum(joint.mul(a, a));
    Tensor lb = joint.sum(joint.sigmoid(b));
    joint.backward(joint.add(la, lb));

    Tape ta;
    ta.backward(ta.sum(ta.mul(a2, a2)));
    Tape tb;
    tb.backward(tb.sum(tb.sigmoid(b2)));

    CHECK(a.grad() == a2.grad());
    CHECK(b.grad() == b2.grad());
}

TEST_CASE("finite difference examples") {
    SplitMix64 rng(21);
    {
        auto f = [](TapeT<double>& t, const TensorT<double>& x) { return t.sum(t.mul(x, x)); };
        const double err = finite_difference_check(f, rand_tensor({4}, rng), 1e-5);
        CHECK(err <= 1e-6);
    }
    {
        // keep all coordinates at least 1e-2 away from relu's kink
        TensorT<double> x = rand_tensor({6}, rng);
        for (auto& v : x.values()) {
            if (std::abs(v) < 1e-2) v = v < 0 ? v - 1e-2 : v + 1e-2;
        }
        auto f = [](TapeT<double>& t, const TensorT<double>& xx) { return t.sum(t.relu(xx)); };
        CHECK(finite_difference_check(f, x, 1e-5) <= 1e-6);
    }
    {
        // constant function: gradient must be exactly zero
        TensorT<double> c({3}, {1.0, 2.0, 3.0});
        auto f = [c](TapeT<double>& t, const TensorT<double>&) { return t.sum(c); };
        CHECK(finite_difference_check(f, rand_tensor({3}, rng), 1e-5) == 0.0);
    }
}

TEST_CASE("randomized gradient checks per op") {
    // 100 randomized small-shape trials per op in 64-bit mode, 1e-4 bound.
    SplitMix64 rng(123);
    const int trials = 100;

    auto check = [&](const char* name, auto make_fn, double lo, double hi) {
        double worst = 0.0;
        for (int i = 0; i < trials; ++i) {
            Shape shape{(int)rng.next_in_range(1, 3), (int)rng.next_in_range(1, 4)};
            TensorT<double> x = rand_tensor(shape, rng, lo, hi);
            TensorT<double> w = rand_tensor(shape, rng, -1.0, 1.0);  // random output weighting
            auto f = make_fn(w);
            worst = std::max(worst, finite_difference_check(f, x, 1e-5));
        }
        INFO(name);
        CHECK(worst <= 1e-4);
    };

    check("add", [](TensorT<double> w) {
        return [w](TapeT<double>& t, const TensorT<double>& x) {
            return t.sum(t.mul(t.add(x, x), w));
        };
    }, -2.0, 2.0);
    check("mul", [](TensorT<double> w) {
        return [w](TapeT<double>& t, const TensorT<double>& x) {
            return t.sum(t.mul(t.mul(x, x), w));
        };
    }, -2.0, 2.0);
    check("div", [](TensorT<double> w) {
        return [w](TapeT<double>& t, const TensorT<double>& x) {
            return t.sum(t.mul(t.div(w, x), w));
        };
    }, 0.5, 2.0);
    check("log", [](TensorT<double> w) {
        return [w](TapeT<double>& t, const TensorT<double>& x) {
            return t.sum(t.mul(t.log(x), w));
        };
    }, 0.2, 3.0);
    check("exp", [](TensorT<double> w) {
        return [w](TapeT<double>& t, const TensorT<double>& x) {
            return t.sum(t.mul(t.exp(x), w));
        };
    }, -2.0, 2.0);
    check("sqrt", [](TensorT<double> w) {
        return [w](TapeT<double>& t, const TensorT<double>& x) {
            return t.sum(t.mul(t.sqrt(x), w));
        };
    }, 0.1, 4.0);
    check("sigmoid", [](TensorT<double> w) {
        return [w](TapeT<double>& t, const TensorT<double>& x) {
            return t.sum(t.mul(t.sigmoid(x), w));
        };
    }, -4.0, 4.0);
    check("softmax", [](TensorT<double> w) {
        return [w](TapeT<double>& t, const TensorT<double>& x) {
            return t.sum(t.mul(t.softmax(x, 1), w));
        };
    }, -3.0, 3.0);
    check("log_softmax", [](TensorT<double> w) {
        return [w](TapeT<double>& t, const TensorT<double>& x) {
            return t.sum(t.mul(t.log_softmax(x, 0), w));
        };
    }, -3.0, 3.0);
    check("sum_axes", [](TensorT<double> w) {
        return [w](TapeT<double>& t, const TensorT<double>& x) {
            TensorT<double> s = t.sum_axes(x, {0}, true);
            return t.sum(t.mul(t.mul(s, s), t.sum_axes(w, {0}, true)));
        };
    }, -2.0, 2.0);

    // relu sampled away from the kink
    {
        double worst = 0.0;
        for (int i = 0; i < trials; ++i) {
            TensorT<double> x = rand_tensor({2, 3}, rng);
            for (auto& v : x.values()) {
                if (std::abs(v) < 1e-2) v += v < 0 ? -1e-2 : 1e-2;
            }
            auto f = [](TapeT<double>& t, const TensorT<double>& xx) {
                return t.sum(t.mul(t.relu(xx), t.exp(t.relu(xx))));
            };
            worst = std::max(worst, finite_difference_check(f, x, 1e-5));
        }
        CHECK(worst <= 1e-4);
    }

    // matmul, both operands
    {
        double worst = 0.0;
        for (int i = 0; i < trials; ++i) {
            const int m = (int)rng.next_in_range(1, 3), k = (int)rng.next_in_range(1, 3),
                      n = (int)rng.next_in_range(1, 3);
            TensorT<double> a = rand_tensor({m, k}, rng);
            TensorT<double> b = rand_tensor({k, n}, rng);
            auto fa = [b](TapeT<double>& t, const TensorT<double>& x) {
                return t.sum(t.matmul(x, b));
            };
            auto fb = [a](TapeT<double>& t, const TensorT<double>& x) {
                return t.sum(t.matmul(a, x));
            };
            worst = std::max(worst, finite_difference_check(fa, a, 1e-5));
            worst = std::max(worst, finite_difference_check(fb, b, 1e-5));
        }
        CHECK(worst <= 1e-4);
    }

    // broadcasted binary ops
    {
        double worst = 0.0;
        for (int i = 0; i < trials; ++i) {
            TensorT<double> x = rand_tensor({3, 1, 2}, rng, 0.5, 2.0);
            TensorT<double> y = rand_tensor({4, 1}, rng, 0.5, 2.0);
            auto f = [y](TapeT<double>& t, const TensorT<double>& xx) {
                return t.sum(t.div(t.mul(xx, y), t.add(xx, y)));
            };
            worst = std::max(worst, finite_difference_check(f, x, 1e-5));
        }
        CHECK(worst <= 1e-4);
    }

    // concat / slice / reshape / broadcast_to
    {
        double worst = 0.0;
        for (int i = 0; i < trials; ++i) {
            TensorT<double> x = rand_tensor({2, 3}, rng);
            TensorT<double> y = rand_tensor({2, 2}, rng);
            auto f = [y](TapeT<double>& t, const TensorT<double>& xx) {
                TensorT<double> c = t.concat({xx, y}, 1);
                TensorT<double> s = t.slice(c, 1, 1, 3);
                TensorT<double> r = t.reshape(s, {6});
                TensorT<double> b = t.broadcast_to(t.reshape(t.sum(r), Shape{1, 1}), {2, 2});
                return t.sum(t.mul(b, y));
            };
            worst = std::max(worst, finite_difference_check(f, x, 1e-5));
        }
        CHECK(worst <= 1e-4);
    }
}

TEST_CASE("exact sum is order invariant") {
    SplitMix64 rng(99);
    std::vector<double> vals;
    for (int i = 0; i < 300; ++i) {
        const double mag = std::pow(10.0, rng.next_double() * 20.0 - 10.0);
        vals.push_back((rng.next_double() - 0.5) * mag);
    }
    ExactSum fwd;
    for (double v : vals) fwd.add(v);
    const double ref = fwd.value();

    std::mt19937 shuffler(4242);
    for (int round = 0; round < 20; ++round) {
        std::shuffle(vals.begin(), vals.end(), shuffler);
        ExactSum s;
        for (double v : vals) s.add(v);
        CHECK(s.value() == ref);
    }

    // exact cancellation
    ExactSum c;
    c.add(1e300);
    c.add(1.5);
    c.add(-1e300);
    CHECK(c.value() == 1.5);

    // small integer case is exact
    ExactSum d;
    for (int i = 1; i <= 1000; ++i) d.add((double)i);
    CHECK(d.value() == 500500.0);

    // tape.sum goes through the exact accumulator: permutation leaves the
    // value bit-identical
    Tape t1(false), t2(false);
    std::vector<float> fv;
    for (int i = 0; i < 257; ++i) fv.push_back((float)((i % 17) * 0.37 - 2.0));
    Tensor a({257}, fv);
    std::shuffle(fv.begin(), fv.end(), shuffler);
    Tensor b({257}, fv);
    CHECK(t1.sum(a).item() == t2.sum(b).item());
}

TEST_CASE("gradients of unreachable tensors remain absent") {
    Tape tape;
    Tensor x({2}, {1.f, 2.f});
    Tensor y({2}, {3.f, 4.f});
    x.set_requires_grad(true);
    y.set_requires_grad(true);
    Tensor used = tape.mul(x, x);
    Tensor unused = tape.mul(y, y);
    (void)unused;
    tape.backward(tape.sum(used));
    CHECK(x.has_grad());
    CHECK_FALSE(y.has_grad());
}
