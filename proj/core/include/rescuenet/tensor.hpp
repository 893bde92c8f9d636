#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "rescuenet/errors.hpp"

namespace rescuenet {

// Dimension sizes, outermost first. Scalars are shape {1}; rank 0 is not used.
using Shape = std::vector<int>;

std::int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Trailing-dimension broadcast: shapes are right-aligned, each pair of dims
// must be equal or one of them 1 (missing leading dims count as 1).
// Throws ShapeError naming both shapes when incompatible.
Shape broadcast_shape(const Shape& a, const Shape& b);

// Dense n-d array of T in row-major order. Copies are cheap handles sharing
// the same buffer; the gradient slot is likewise shared, so a backward pass
// run by a tape is visible through every copy of the tensor it touched.
// Treat tensors as immutable snapshots once they enter a computation; only
// the optimizer and data loaders mutate buffers in place, between steps.
template <typename T>
class TensorT {
public:
    TensorT() : TensorT(Shape{1}) {}

    explicit TensorT(Shape shape)
        : shape_(std::move(shape)),
          data_(std::make_shared<std::vector<T>>(checked_numel(shape_), T(0))) {}

    TensorT(Shape shape, std::vector<T> values) : shape_(std::move(shape)) {
        if (static_cast<std::int64_t>(values.size()) != checked_numel(shape_)) {
            throw ShapeError("value count " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape_));
        }
        data_ = std::make_shared<std::vector<T>>(std::move(values));
    }

    static TensorT zeros(Shape shape) { return TensorT(std::move(shape)); }

    static TensorT full(Shape shape, T v) {
        TensorT t(std::move(shape));
        for (auto& x : *t.data_) x = v;
        return t;
    }

    static TensorT ones(Shape shape) { return full(std::move(shape), T(1)); }

    static TensorT scalar(T v) { return TensorT(Shape{1}, std::vector<T>{v}); }

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_->size()); }

    const std::vector<T>& values() const { return *data_; }
    std::vector<T>& values() { return *data_; }
    const T* data() const { return data_->data(); }
    T* data() { return data_->data(); }

    T item() const {
        if (numel() != 1) {
            throw ShapeError("item() requires a scalar, got shape " + shape_str(shape_));
        }
        return (*data_)[0];
    }

    // Element access by multi-index (row-major); test convenience.
    T at(const std::vector<int>& idx) const {
        if (idx.size() != shape_.size()) {
            throw ShapeError("index rank mismatch for shape " + shape_str(shape_));
        }
        std::int64_t off = 0;
        for (std::size_t i = 0; i < idx.size(); ++i) {
            off = off * shape_[i] + idx[i];
        }
        return (*data_)[static_cast<std::size_t>(off)];
    }

    bool requires_grad() const { return grad_ != nullptr; }

    TensorT& set_requires_grad(bool on) {
        if (on && !grad_) {
            grad_ = std::make_shared<GradSlot>();
        } else if (!on) {
            grad_ = nullptr;
        }
        return *this;
    }

    bool has_grad() const { return grad_ && grad_->present; }

    const std::vector<T>& grad() const {
        if (!has_grad()) throw ValueError("tensor has no gradient");
        return grad_->values;
    }

    void accumulate_grad(const T* g, std::int64_t n) {
        if (!grad_) throw InternalError("accumulate_grad on tensor without grad slot");
        if (n != numel()) {
            throw ShapeError("gradient size " + std::to_string(n) + " does not match shape " +
                             shape_str(shape_));
        }
        if (!grad_->present) {
            grad_->values.assign(static_cast<std::size_t>(n), T(0));
            grad_->present = true;
        }
        T* dst = grad_->values.data();
        for (std::int64_t i = 0; i < n; ++i) dst[i] += g[i];
    }

    void zero_grad() {
        if (grad_) {
            grad_->present = false;
            grad_->values.clear();
        }
    }

    // Same buffer, no gradient tracking.
    TensorT detached() const {
        TensorT t;
        t.shape_ = shape_;
        t.data_ = data_;
        return t;
    }

    // Deep copy of the buffer; drops the gradient.
    TensorT clone() const {
        TensorT t;
        t.shape_ = shape_;
        t.data_ = std::make_shared<std::vector<T>>(*data_);
        return t;
    }

    template <typename U>
    TensorT<U> cast() const {
        std::vector<U> out(data_->size());
        for (std::size_t i = 0; i < data_->size(); ++i) out[i] = static_cast<U>((*data_)[i]);
        TensorT<U> t(shape_, std::move(out));
        if (requires_grad()) t.set_requires_grad(true);
        return t;
    }

    // Stable identity of the underlying buffer; the tape uses this to
    // recognize a tensor it has already recorded.
    const void* buffer_id() const { return data_.get(); }

private:
    struct GradSlot {
        std::vector<T> values;
        bool present = false;
    };

    static std::int64_t checked_numel(const Shape& s) {
        if (s.empty()) throw ShapeError("rank-0 shapes are not supported");
        std::int64_t n = 1;
        for (int d : s) {
            if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(s));
            n *= d;
        }
        return n;
    }

    Shape shape_;
    std::shared_ptr<std::vector<T>> data_;
    std::shared_ptr<GradSlot> grad_;
};

using Tensor = TensorT<float>;

}  // namespace rescuenet
