#pragma once

#include <functional>
#include <unordered_set>
#include <vector>

#include "rescuenet/tensor.hpp"

namespace rescuenet {

// Reverse-mode autodiff over a dynamically recorded operation tape.
//
// Every op executed through a recording tape appends one entry holding
// copies of its input and output tensors (cheap: buffers are shared) and a
// backward rule. backward() seeds the loss gradient with 1 and replays the
// tape in exact reverse recording order; rules accumulate into the gradient
// slots of inputs that require grad. A tape serves exactly one backward
// pass; afterwards it is consumed and a fresh tape must be recorded.
//
// A tape and the tensors it references belong to one thread for the span of
// forward + backward. Construct with recording=false for inference to skip
// all bookkeeping.
template <typename T>
class TapeT {
public:
    explicit TapeT(bool recording = true) : recording_(recording) {}

    TapeT(const TapeT&) = delete;
    TapeT& operator=(const TapeT&) = delete;

    bool recording() const { return recording_; }
    std::size_t size() const { return ops_.size(); }
    bool consumed() const { return consumed_; }

    // ---- elementwise binary, trailing-dimension broadcasting ----
    TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b);
    TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b);
    TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b);
    TensorT<T> div(const TensorT<T>& a, const TensorT<T>& b);

    // ---- elementwise with plain scalar (no gradient for the scalar) ----
    TensorT<T> add_scalar(const TensorT<T>& a, T c);
    TensorT<T> mul_scalar(const TensorT<T>& a, T c);
    TensorT<T> div_scalar(const TensorT<T>& a, T c);
    TensorT<T> rsub_scalar(T c, const TensorT<T>& a);  // c - a

    // ---- elementwise unary ----
    TensorT<T> neg(const TensorT<T>& a);
    TensorT<T> log(const TensorT<T>& a);
    TensorT<T> exp(const TensorT<T>& a);
    TensorT<T> sqrt(const TensorT<T>& a);
    TensorT<T> relu(const TensorT<T>& a);     // subgradient at 0 is 0
    TensorT<T> sigmoid(const TensorT<T>& a);  // numerically stable two-branch form
    TensorT<T> clamp(const TensorT<T>& a, T lo, T hi);

    // ---- linear algebra ----
    TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b);  // [M,K]x[K,N]

    // ---- reductions / shape ----
    // Full sum to a {1}-shaped scalar. Uses an exact (order-invariant)
    // accumulator, so permuting the input elements leaves the value
    // bit-identical.
    TensorT<T> sum(const TensorT<T>& a);
    TensorT<T> mean(const TensorT<T>& a);
    TensorT<T> sum_axes(const TensorT<T>& a, const std::vector<int>& axes, bool keepdims);
    TensorT<T> broadcast_to(const TensorT<T>& a, const Shape& shape);
    TensorT<T> reshape(const TensorT<T>& a, const Shape& shape);
    TensorT<T> concat(const std::vector<TensorT<T>>& parts, int axis);
    TensorT<T> slice(const TensorT<T>& a, int axis, int start, int len);

    // ---- compositions ----
    TensorT<T> softmax(const TensorT<T>& a, int axis);
    TensorT<T> log_softmax(const TensorT<T>& a, int axis);

    // Record a custom op: `output` was computed from `inputs` by the caller;
    // `backward` receives the recorded output (its grad populated) and the
    // recorded inputs, and must push gradients via accumulate(). Used by the
    // layers module for convolution and interpolation kernels.
    using BackwardFn = std::function<void(const TensorT<T>& out, std::vector<TensorT<T>>& ins)>;
    void record(std::vector<TensorT<T>> inputs, TensorT<T>& output, BackwardFn backward);

    // Seeds d(loss)/d(loss) = 1 and runs all recorded rules in reverse.
    // `loss` must be a scalar produced on this tape; one call per tape.
    void backward(const TensorT<T>& loss);

    // Helper for backward rules: accumulate g into t iff t requires grad.
    static void accumulate(TensorT<T>& t, const std::vector<T>& g) {
        if (t.requires_grad()) t.accumulate_grad(g.data(), static_cast<std::int64_t>(g.size()));
    }

private:
    struct OpRecord {
        std::vector<TensorT<T>> inputs;
        TensorT<T> output;
        BackwardFn backward;
    };

    TensorT<T> finish(std::vector<TensorT<T>> inputs, TensorT<T> output, BackwardFn backward);

    std::vector<OpRecord> ops_;
    std::unordered_set<const void*> outputs_;
    bool recording_;
    bool consumed_ = false;
};

using Tape = TapeT<float>;

// Non-recorded helpers -------------------------------------------------

// Per-slice max along `axis` (keepdims). Not differentiable, not recorded;
// used to stabilize softmax (the subtracted max acts as a constant).
template <typename T>
TensorT<T> max_axis(const TensorT<T>& a, int axis);

extern template class TapeT<float>;
extern template class TapeT<double>;
extern template TensorT<float> max_axis<float>(const TensorT<float>&, int);
extern template TensorT<double> max_axis<double>(const TensorT<double>&, int);

}  // namespace rescuenet
