#include "rescuenet/tape.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "rescuenet/exact_sum.hpp"

namespace rescuenet {

namespace {

// Row-major strides of `shape` as seen from an output of shape `out`,
// right-aligned; broadcast dimensions get stride 0.
std::vector<std::int64_t> strides_in(const Shape& shape, const Shape& out) {
    std::vector<std::int64_t> natural(shape.size());
    std::int64_t acc = 1;
    for (int i = static_cast<int>(shape.size()) - 1; i >= 0; --i) {
        natural[static_cast<std::size_t>(i)] = acc;
        acc *= shape[static_cast<std::size_t>(i)];
    }
    std::vector<std::int64_t> s(out.size(), 0);
    const std::size_t off = out.size() - shape.size();
    for (std::size_t i = 0; i < shape.size(); ++i) {
        s[off + i] = shape[i] == 1 ? 0 : natural[i];
    }
    return s;
}

// Walks an output shape in row-major order while tracking offsets into two
// (possibly broadcast) operands.
class PairIter {
public:
    PairIter(const Shape& out, const Shape& a, const Shape& b)
        : shape_(out), idx_(out.size(), 0), sa_(strides_in(a, out)), sb_(strides_in(b, out)) {}

    std::int64_t a_off() const { return aoff_; }
    std::int64_t b_off() const { return boff_; }

    void advance() {
        for (int d = static_cast<int>(shape_.size()) - 1; d >= 0; --d) {
            const auto ud = static_cast<std::size_t>(d);
            ++idx_[ud];
            aoff_ += sa_[ud];
            boff_ += sb_[ud];
            if (idx_[ud] < shape_[ud]) return;
            idx_[ud] = 0;
            aoff_ -= sa_[ud] * shape_[ud];
            boff_ -= sb_[ud] * shape_[ud];
        }
    }

private:
    Shape shape_;
    std::vector<int> idx_;
    std::vector<std::int64_t> sa_, sb_;
    std::int64_t aoff_ = 0, boff_ = 0;
};

template <typename T>
using EigenMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

int normalize_axis(int axis, int rank) {
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) {
        throw ValueError("axis " + std::to_string(axis) + " invalid for rank " +
                         std::to_string(rank));
    }
    return axis;
}

template <typename T>
TensorT<T> tape_finish(TapeT<T>& tape, std::vector<TensorT<T>> inputs, TensorT<T> output,
                       typename TapeT<T>::BackwardFn backward) {
    tape.record(std::move(inputs), output, std::move(backward));
    return output;
}

}  // namespace

template <typename T>
TensorT<T> TapeT<T>::finish(std::vector<TensorT<T>> inputs, TensorT<T> output, BackwardFn backward) {
    if (consumed_) throw ValueError("tape already consumed by backward()");
    if (recording_) {
        output.set_requires_grad(true);
        outputs_.insert(output.buffer_id());
        ops_.push_back(OpRecord{std::move(inputs), output, std::move(backward)});
    }
    return output;
}

template <typename T>
void TapeT<T>::record(std::vector<TensorT<T>> inputs, TensorT<T>& output, BackwardFn backward) {
    output = finish(std::move(inputs), std::move(output), std::move(backward));
}

template <typename T>
void TapeT<T>::backward(const TensorT<T>& loss) {
    if (consumed_) throw ValueError("tape already consumed by backward()");
    if (loss.numel() != 1) {
        throw ValueError("backward() requires a scalar loss, got shape " + shape_str(loss.shape()));
    }
    if (!recording_ || outputs_.find(loss.buffer_id()) == outputs_.end()) {
        throw ValueError("loss tensor was not produced on this tape");
    }
    TensorT<T> seed = loss;
    const T one = T(1);
    seed.accumulate_grad(&one, 1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
        if (it->output.has_grad()) it->backward(it->output, it->inputs);
    }
    consumed_ = true;
    ops_.clear();
    outputs_.clear();
}

// ---- binary elementwise -----------------------------------------------

namespace {

// fwd(a, b) -> value; dfa/dfb give local partials as functions of (a, b).
template <typename T, typename F, typename DA, typename DB>
TensorT<T> binary_op(TapeT<T>& tape, const TensorT<T>& a, const TensorT<T>& b, F fwd, DA dfa,
                     DB dfb) {
    const Shape oshape = broadcast_shape(a.shape(), b.shape());
    TensorT<T> out(oshape);
    const std::int64_t n = out.numel();
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    if (a.shape() == oshape && b.shape() == oshape) {
        for (std::int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i], pb[i]);
    } else {
        PairIter it(oshape, a.shape(), b.shape());
        for (std::int64_t i = 0; i < n; ++i, it.advance()) {
            po[i] = fwd(pa[it.a_off()], pb[it.b_off()]);
        }
    }
    auto bwd = [oshape, dfa, dfb](const TensorT<T>& o, std::vector<TensorT<T>>& ins) {
        const std::vector<T>& g = o.grad();
        TensorT<T>& ia = ins[0];
        TensorT<T>& ib = ins[1];
        const T* pa2 = ia.data();
        const T* pb2 = ib.data();
        std::vector<T> ga(ia.requires_grad() ? static_cast<std::size_t>(ia.numel()) : 0, T(0));
        std::vector<T> gb(ib.requires_grad() ? static_cast<std::size_t>(ib.numel()) : 0, T(0));
        PairIter it(oshape, ia.shape(), ib.shape());
        const auto n2 = static_cast<std::int64_t>(g.size());
        for (std::int64_t i = 0; i < n2; ++i, it.advance()) {
            const T av = pa2[it.a_off()];
            const T bv = pb2[it.b_off()];
            if (!ga.empty()) ga[static_cast<std::size_t>(it.a_off())] += g[static_cast<std::size_t>(i)] * dfa(av, bv);
            if (!gb.empty()) gb[static_cast<std::size_t>(it.b_off())] += g[static_cast<std::size_t>(i)] * dfb(av, bv);
        }
        if (!ga.empty()) TapeT<T>::accumulate(ia, ga);
        if (!gb.empty()) TapeT<T>::accumulate(ib, gb);
    };
    return tape_finish(tape, {a, b}, std::move(out), std::move(bwd));
}

}  // namespace

template <typename T>
TensorT<T> TapeT<T>::add(const TensorT<T>& a, const TensorT<T>& b) {
    return binary_op(*this, a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
                     [](T, T) { return T(1); });
}

template <typename T>
TensorT<T> TapeT<T>::sub(const TensorT<T>& a, const TensorT<T>& b) {
    return binary_op(*this, a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
                     [](T, T) { return T(-1); });
}

template <typename T>
TensorT<T> TapeT<T>::mul(const TensorT<T>& a, const TensorT<T>& b) {
    return binary_op(*this, a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
                     [](T x, T) { return x; });
}

template <typename T>
TensorT<T> TapeT<T>::div(const TensorT<T>& a, const TensorT<T>& b) {
    return binary_op(*this, a, b, [](T x, T y) { return x / y; },
                     [](T, T y) { return T(1) / y; },
                     [](T x, T y) { return -x / (y * y); });
}

// ---- unary elementwise -------------------------------------------------

namespace {

template <typename T, typename F, typename D>
TensorT<T> unary_op(TapeT<T>& tape, const TensorT<T>& a, F fwd, D dfdx) {
    TensorT<T> out(a.shape());
    const std::int64_t n = a.numel();
    const T* pa = a.data();
    T* po = out.data();
    for (std::int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i]);
    auto bwd = [dfdx](const TensorT<T>& o, std::vector<TensorT<T>>& ins) {
        if (!ins[0].requires_grad()) return;
        const std::vector<T>& g = o.grad();
        const T* px = ins[0].data();
        const T* py = o.data();
        std::vector<T> gx(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * dfdx(px[i], py[i]);
        TapeT<T>::accumulate(ins[0], gx);
    };
    return tape_finish(tape, {a}, std::move(out), std::move(bwd));
}

}  // namespace

template <typename T>
TensorT<T> TapeT<T>::add_scalar(const TensorT<T>& a, T c) {
    return unary_op(*this, a, [c](T x) { return x + c; }, [](T, T) { return T(1); });
}

template <typename T>
TensorT<T> TapeT<T>::mul_scalar(const TensorT<T>& a, T c) {
    return unary_op(*this, a, [c](T x) { return x * c; }, [c](T, T) { return c; });
}

template <typename T>
TensorT<T> TapeT<T>::div_scalar(const TensorT<T>& a, T c) {
    return unary_op(*this, a, [c](T x) { return x / c; }, [c](T, T) { return T(1) / c; });
}

template <typename T>
TensorT<T> TapeT<T>::rsub_scalar(T c, const TensorT<T>& a) {
    return unary_op(*this, a, [c](T x) { return c - x; }, [](T, T) { return T(-1); });
}

template <typename T>
TensorT<T> TapeT<T>::neg(const TensorT<T>& a) {
    return unary_op(*this, a, [](T x) { return -x; }, [](T, T) { return T(-1); });
}

template <typename T>
TensorT<T> TapeT<T>::log(const TensorT<T>& a) {
    return unary_op(*this, a, [](T x) { return std::log(x); },
                    [](T x, T) { return T(1) / x; });
}

template <typename T>
TensorT<T> TapeT<T>::exp(const TensorT<T>& a) {
    return unary_op(*this, a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
TensorT<T> TapeT<T>::sqrt(const TensorT<T>& a) {
    return unary_op(*this, a, [](T x) { return std::sqrt(x); },
                    [](T, T y) { return T(0.5) / y; });
}

template <typename T>
TensorT<T> TapeT<T>::relu(const TensorT<T>& a) {
    return unary_op(*this, a, [](T x) { return x > T(0) ? x : T(0); },
                    [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
TensorT<T> TapeT<T>::sigmoid(const TensorT<T>& a) {
    auto fwd = [](T x) {
        if (x >= T(0)) {
            return T(1) / (T(1) + std::exp(-x));
        }
        const T e = std::exp(x);
        return e / (T(1) + e);
    };
    return unary_op(*this, a, fwd, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
TensorT<T> TapeT<T>::clamp(const TensorT<T>& a, T lo, T hi) {
    return unary_op(*this, a,
                    [lo, hi](T x) { return x < lo ? lo : (x > hi ? hi : x); },
                    [lo, hi](T x, T) { return (x > lo && x < hi) ? T(1) : T(0); });
}

// ---- matmul -------------------------------------------------------------

template <typename T>
TensorT<T> TapeT<T>::matmul(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw ShapeError("matmul requires rank-2 tensors, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    }
    const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2) {
        throw ShapeError("matmul inner dimensions disagree: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    TensorT<T> out(Shape{m, n});
    Eigen::Map<const EigenMat<T>> ma(a.data(), m, k);
    Eigen::Map<const EigenMat<T>> mb(b.data(), k, n);
    Eigen::Map<EigenMat<T>> mo(out.data(), m, n);
    mo.noalias() = ma * mb;
    auto bwd = [m, k, n](const TensorT<T>& o, std::vector<TensorT<T>>& ins) {
        Eigen::Map<const EigenMat<T>> g(o.grad().data(), m, n);
        if (ins[0].requires_grad()) {
            std::vector<T> ga(static_cast<std::size_t>(m) * k);
            Eigen::Map<const EigenMat<T>> rb(ins[1].data(), k, n);
            Eigen::Map<EigenMat<T>> mga(ga.data(), m, k);
            mga.noalias() = g * rb.transpose();
            TapeT<T>::accumulate(ins[0], ga);
        }
        if (ins[1].requires_grad()) {
            std::vector<T> gb(static_cast<std::size_t>(k) * n);
            Eigen::Map<const EigenMat<T>> ra(ins[0].data(), m, k);
            Eigen::Map<EigenMat<T>> mgb(gb.data(), k, n);
            mgb.noalias() = ra.transpose() * g;
            TapeT<T>::accumulate(ins[1], gb);
        }
    };
    return finish({a, b}, std::move(out), std::move(bwd));
}

// ---- reductions and shape ops -------------------------------------------

template <typename T>
TensorT<T> TapeT<T>::sum(const TensorT<T>& a) {
    ExactSum acc;
    const T* pa = a.data();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) acc.add(pa[i]);
    TensorT<T> out = TensorT<T>::scalar(static_cast<T>(acc.value()));
    auto bwd = [](const TensorT<T>& o, std::vector<TensorT<T>>& ins) {
        if (!ins[0].requires_grad()) return;
        const T g = o.grad()[0];
        std::vector<T> gx(static_cast<std::size_t>(ins[0].numel()), g);
        TapeT<T>::accumulate(ins[0], gx);
    };
    return finish({a}, std::move(out), std::move(bwd));
}

template <typename T>
TensorT<T> TapeT<T>::mean(const TensorT<T>& a) {
    TensorT<T> s = sum(a);
    return unary_op(*this, s, [n = a.numel()](T x) { return x / static_cast<T>(n); },
                    [n = a.numel()](T, T) { return T(1) / static_cast<T>(n); });
}

template <typename T>
TensorT<T> TapeT<T>::sum_axes(const TensorT<T>& a, const std::vector<int>& axes, bool keepdims) {
    const int rank = a.rank();
    std::vector<bool> reduce(static_cast<std::size_t>(rank), false);
    for (int ax : axes) reduce[static_cast<std::size_t>(normalize_axis(ax, rank))] = true;
    Shape kept = a.shape();
    for (int i = 0; i < rank; ++i) {
        if (reduce[static_cast<std::size_t>(i)]) kept[static_cast<std::size_t>(i)] = 1;
    }
    Shape oshape;
    if (keepdims) {
        oshape = kept;
    } else {
        for (int i = 0; i < rank; ++i) {
            if (!reduce[static_cast<std::size_t>(i)]) oshape.push_back(a.dim(i));
        }
        if (oshape.empty()) oshape = Shape{1};
    }
    // Iterate the input; `kept` (stride 0 on reduced dims) maps each element
    // to its accumulator slot.
    std::vector<double> acc(static_cast<std::size_t>(shape_numel(kept)), 0.0);
    {
        PairIter it(a.shape(), a.shape(), kept);
        const T* pa = a.data();
        const std::int64_t n = a.numel();
        for (std::int64_t i = 0; i < n; ++i, it.advance()) {
            acc[static_cast<std::size_t>(it.b_off())] += static_cast<double>(pa[i]);
        }
    }
    std::vector<T> ov(acc.size());
    for (std::size_t i = 0; i < acc.size(); ++i) ov[i] = static_cast<T>(acc[i]);
    TensorT<T> out(oshape, std::move(ov));
    auto bwd = [kept, ishape = a.shape()](const TensorT<T>& o, std::vector<TensorT<T>>& ins) {
        if (!ins[0].requires_grad()) return;
        const std::vector<T>& g = o.grad();
        std::vector<T> gx(static_cast<std::size_t>(ins[0].numel()));
        PairIter it(ishape, ishape, kept);
        for (std::size_t i = 0; i < gx.size(); ++i, it.advance()) {
            gx[i] = g[static_cast<std::size_t>(it.b_off())];
        }
        TapeT<T>::accumulate(ins[0], gx);
    };
    return finish({a}, std::move(out), std::move(bwd));
}

template <typename T>
TensorT<T> TapeT<T>::broadcast_to(const TensorT<T>& a, const Shape& shape) {
    const Shape check = broadcast_shape(a.shape(), shape);
    if (check != shape) {
        throw ShapeError("cannot broadcast " + shape_str(a.shape()) + " to " + shape_str(shape));
    }
    TensorT<T> out(shape);
    const T* pa = a.data();
    T* po = out.data();
    PairIter it(shape, a.shape(), a.shape());
    const std::int64_t n = out.numel();
    for (std::int64_t i = 0; i < n; ++i, it.advance()) po[i] = pa[it.a_off()];
    auto bwd = [shape](const TensorT<T>& o, std::vector<TensorT<T>>& ins) {
        if (!ins[0].requires_grad()) return;
        const std::vector<T>& g = o.grad();
        std::vector<T> gx(static_cast<std::size_t>(ins[0].numel()), T(0));
        PairIter it(shape, ins[0].shape(), ins[0].shape());
        for (std::size_t i = 0; i < g.size(); ++i, it.advance()) {
            gx[static_cast<std::size_t>(it.a_off())] += g[i];
        }
        TapeT<T>::accumulate(ins[0], gx);
    };
    return finish({a}, std::move(out), std::move(bwd));
}

template <typename T>
TensorT<T> TapeT<T>::reshape(const TensorT<T>& a, const Shape& shape) {
    if (shape_numel(shape) != a.numel()) {
        throw ShapeError("reshape " + shape_str(a.shape()) + " to " + shape_str(shape) +
                         " changes element count");
    }
    TensorT<T> out(shape, a.values());
    auto bwd = [](const TensorT<T>& o, std::vector<TensorT<T>>& ins) {
        if (!ins[0].requires_grad()) return;
        TapeT<T>::accumulate(ins[0], o.grad());
    };
    return finish({a}, std::move(out), std::move(bwd));
}

template <typename T>
TensorT<T> TapeT<T>::concat(const std::vector<TensorT<T>>& parts, int axis) {
    if (parts.empty()) throw ValueError("concat of zero tensors");
    const int rank = parts[0].rank();
    const int ax = normalize_axis(axis, rank);
    Shape oshape = parts[0].shape();
    int total = 0;
    for (const auto& p : parts) {
        if (p.rank() != rank) throw ShapeError("concat rank mismatch");
        for (int d = 0; d < rank; ++d) {
            if (d != ax && p.dim(d) != oshape[static_cast<std::size_t>(d)]) {
                throw ShapeError("concat shape mismatch: " + shape_str(p.shape()) + " vs " +
                                 shape_str(parts[0].shape()));
            }
        }
        total += p.dim(ax);
    }
    oshape[static_cast<std::size_t>(ax)] = total;
    TensorT<T> out(oshape);
    std::int64_t lead = 1, trail = 1;
    for (int d = 0; d < ax; ++d) lead *= oshape[static_cast<std::size_t>(d)];
    for (int d = ax + 1; d < rank; ++d) trail *= oshape[static_cast<std::size_t>(d)];
    T* po = out.data();
    std::int64_t axis_off = 0;
    for (const auto& p : parts) {
        const T* pp = p.data();
        const std::int64_t block = p.dim(ax) * trail;
        for (std::int64_t l = 0; l < lead; ++l) {
            std::copy(pp + l * block, pp + (l + 1) * block,
                      po + l * (static_cast<std::int64_t>(total) * trail) + axis_off * trail);
        }
        axis_off += p.dim(ax);
    }
    auto bwd = [ax, lead, trail, total](const TensorT<T>& o, std::vector<TensorT<T>>& ins) {
        const std::vector<T>& g = o.grad();
        std::int64_t axis_off2 = 0;
        for (auto& in : ins) {
            const std::int64_t block = in.dim(ax) * trail;
            if (in.requires_grad()) {
                std::vector<T> gx(static_cast<std::size_t>(in.numel()));
                for (std::int64_t l = 0; l < lead; ++l) {
                    const T* src = g.data() + l * (static_cast<std::int64_t>(total) * trail) +
                                   axis_off2 * trail;
                    std::copy(src, src + block, gx.data() + l * block);
                }
                TapeT<T>::accumulate(in, gx);
            }
            axis_off2 += in.dim(ax);
        }
    };
    return finish(parts, std::move(out), std::move(bwd));
}

template <typename T>
TensorT<T> TapeT<T>::slice(const TensorT<T>& a, int axis, int start, int len) {
    const int rank = a.rank();
    const int ax = normalize_axis(axis, rank);
    if (start < 0 || len <= 0 || start + len > a.dim(ax)) {
        throw ShapeError("slice [" + std::to_string(start) + "," + std::to_string(start + len) +
                         ") out of range for axis " + std::to_string(ax) + " of " +
                         shape_str(a.shape()));
    }
    Shape oshape = a.shape();
    oshape[static_cast<std::size_t>(ax)] = len;
    std::int64_t lead = 1, trail = 1;
    for (int d = 0; d < ax; ++d) lead *= a.dim(d);
    for (int d = ax + 1; d < rank; ++d) trail *= a.dim(d);
    const std::int64_t in_block = a.dim(ax) * trail;
    const std::int64_t out_block = static_cast<std::int64_t>(len) * trail;
    TensorT<T> out(oshape);
    const T* pa = a.data();
    T* po = out.data();
    for (std::int64_t l = 0; l < lead; ++l) {
        const T* src = pa + l * in_block + static_cast<std::int64_t>(start) * trail;
        std::copy(src, src + out_block, po + l * out_block);
    }
    auto bwd = [lead, trail, in_block, out_block, start](const TensorT<T>& o,
                                                         std::vector<TensorT<T>>& ins) {
        if (!ins[0].requires_grad()) return;
        const std::vector<T>& g = o.grad();
        std::vector<T> gx(static_cast<std::size_t>(ins[0].numel()), T(0));
        for (std::int64_t l = 0; l < lead; ++l) {
            const T* src = g.data() + l * out_block;
            std::copy(src, src + out_block,
                      gx.data() + l * in_block + static_cast<std::int64_t>(start) * trail);
        }
        TapeT<T>::accumulate(ins[0], gx);
    };
    return finish({a}, std::move(out), std::move(bwd));
}

// ---- softmax compositions -------------------------------------------------

template <typename T>
TensorT<T> max_axis(const TensorT<T>& a, int axis) {
    const int rank = a.rank();
    const int ax = normalize_axis(axis, rank);
    Shape kept = a.shape();
    kept[static_cast<std::size_t>(ax)] = 1;
    TensorT<T> out = TensorT<T>::full(kept, std::numeric_limits<T>::lowest());
    PairIter it(a.shape(), a.shape(), kept);
    const T* pa = a.data();
    T* po = out.data();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i, it.advance()) {
        T& m = po[it.b_off()];
        if (pa[i] > m) m = pa[i];
    }
    return out;
}

template <typename T>
TensorT<T> TapeT<T>::softmax(const TensorT<T>& a, int axis) {
    const int ax = normalize_axis(axis, a.rank());
    const TensorT<T> m = max_axis(a, ax);  // constant shift, gradient-free
    TensorT<T> e = exp(sub(a, m));
    TensorT<T> s = sum_axes(e, {ax}, true);
    return div(e, s);
}

template <typename T>
TensorT<T> TapeT<T>::log_softmax(const TensorT<T>& a, int axis) {
    const int ax = normalize_axis(axis, a.rank());
    const TensorT<T> m = max_axis(a, ax);
    TensorT<T> z = sub(a, m);
    TensorT<T> s = sum_axes(exp(z), {ax}, true);
    return sub(z, log(s));
}

template class TapeT<float>;
template class TapeT<double>;
template TensorT<float> max_axis<float>(const TensorT<float>&, int);
template TensorT<double> max_axis<double>(const TensorT<double>&, int);

}  // namespace rescuenet
