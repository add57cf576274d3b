#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace dwic {

// Dense row-major n-d array. Instantiated with float for training and
// double for finite-difference verification. Public operations are pure
// and reject non-finite results; training-path layer code works on the
// raw buffers directly.
template <typename T>
class TensorT {
public:
    TensorT() = default;

    explicit TensorT(std::vector<std::size_t> shape)
        : shape_(std::move(shape)), data_(checked_size(shape_), T(0)) {}

    TensorT(std::vector<std::size_t> shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (checked_size(shape_) != data_.size())
            throw std::invalid_argument("tensor: shape/data size mismatch");
    }

    static TensorT zeros(std::vector<std::size_t> shape) { return TensorT(std::move(shape)); }

    static TensorT full(std::vector<std::size_t> shape, T value) {
        TensorT t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), value);
        return t;
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    const T& at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

    T& at(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    const T& at(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    T& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
        return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }
    const T& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
        return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }

    // scalar value of a single-element tensor
    T item() const {
        if (data_.size() != 1) throw std::invalid_argument("tensor: item() on non-scalar");
        return data_[0];
    }

    // same data, new shape; bit-exact round trip
    TensorT reshape(std::vector<std::size_t> new_shape) const {
        if (checked_size(new_shape) != data_.size())
            throw std::invalid_argument("tensor: reshape size mismatch");
        return TensorT(std::move(new_shape), data_);
    }

    bool all_finite() const {
        for (const T v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

private:
    // empty shape = rank-0 scalar holding one value
    static std::size_t checked_size(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t d : shape) {
            if (d == 0) throw std::invalid_argument("tensor: zero dimension");
            n *= d;
        }
        return n;
    }

    std::vector<std::size_t> shape_;
    std::vector<T> data_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

namespace detail {

template <typename T>
void ensure_finite(const TensorT<T>& t, const char* op) {
    if (!t.all_finite())
        throw std::domain_error(std::string("tensor: non-finite value produced by ") + op);
}

template <typename T>
void ensure_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string("tensor: shape mismatch in ") + op);
}

template <typename T>
void ensure_nonempty(const TensorT<T>& t, const char* op) {
    if (t.empty())
        throw std::invalid_argument(std::string("tensor: empty operand in ") + op);
}

}  // namespace detail

template <typename T, typename F>
TensorT<T> zip_elementwise(const TensorT<T>& a, const TensorT<T>& b, F f, const char* op) {
    detail::ensure_nonempty(a, op);
    detail::ensure_same_shape(a, b, op);
    TensorT<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
    detail::ensure_finite(out, op);
    return out;
}

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    return zip_elementwise(a, b, [](T x, T y) { return x + y; }, "add");
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    return zip_elementwise(a, b, [](T x, T y) { return x - y; }, "sub");
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    return zip_elementwise(a, b, [](T x, T y) { return x * y; }, "mul");
}

template <typename T>
TensorT<T> add(const TensorT<T>& a, T s) {
    detail::ensure_nonempty(a, "add_scalar");
    TensorT<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + s;
    detail::ensure_finite(out, "add_scalar");
    return out;
}

template <typename T>
TensorT<T> scale(const TensorT<T>& a, T s) {
    detail::ensure_nonempty(a, "scale");
    TensorT<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
    detail::ensure_finite(out, "scale");
    return out;
}

enum class ReduceOp { kSum, kMean, kMax, kMin };

// Reduction over a set of axes; reduced axes are removed from the shape
// (full reduction yields a rank-0 scalar tensor). Accumulation order is
// fixed left-to-right over the flattened input.
template <typename T>
TensorT<T> reduce(ReduceOp op, const TensorT<T>& t, const std::vector<std::size_t>& axes) {
    detail::ensure_nonempty(t, "reduce");
    std::vector<bool> reduced(t.rank(), false);
    for (std::size_t a : axes) {
        if (a >= t.rank()) throw std::invalid_argument("tensor: reduce axis out of range");
        reduced[a] = true;
    }

    std::vector<std::size_t> out_shape;
    for (std::size_t a = 0; a < t.rank(); ++a)
        if (!reduced[a]) out_shape.push_back(t.dim(a));

    std::size_t out_size = 1;
    for (std::size_t d : out_shape) out_size *= d;

    std::size_t group = 1;  // elements folded into each output cell
    for (std::size_t a = 0; a < t.rank(); ++a)
        if (reduced[a]) group *= t.dim(a);

    const T init = op == ReduceOp::kMax   ? std::numeric_limits<T>::lowest()
                   : op == ReduceOp::kMin ? std::numeric_limits<T>::max()
                                          : T(0);
    std::vector<T> acc(out_size, init);

    // strides of the output index within the input iteration
    std::vector<std::size_t> in_strides(t.rank(), 1);
    for (std::size_t a = t.rank(); a-- > 1;) in_strides[a - 1] = in_strides[a] * t.dim(a);

    std::vector<std::size_t> out_strides(t.rank(), 0);
    {
        std::size_t s = 1;
        for (std::size_t a = t.rank(); a-- > 0;) {
            if (!reduced[a]) {
                out_strides[a] = s;
                s *= t.dim(a);
            }
        }
    }

    std::vector<std::size_t> idx(t.rank(), 0);
    for (std::size_t flat = 0; flat < t.size(); ++flat) {
        std::size_t rem = flat;
        std::size_t out_i = 0;
        for (std::size_t a = 0; a < t.rank(); ++a) {
            const std::size_t coord = rem / in_strides[a];
            rem %= in_strides[a];
            out_i += coord * out_strides[a];
        }
        const T v = t[flat];
        switch (op) {
            case ReduceOp::kSum:
            case ReduceOp::kMean: acc[out_i] += v; break;
            case ReduceOp::kMax: acc[out_i] = std::max(acc[out_i], v); break;
            case ReduceOp::kMin: acc[out_i] = std::min(acc[out_i], v); break;
        }
    }
    if (op == ReduceOp::kMean)
        for (T& v : acc) v /= static_cast<T>(group);

    TensorT<T> out(std::move(out_shape), std::move(acc));
    detail::ensure_finite(out, "reduce");
    return out;
}

template <typename T>
T reduce_all(ReduceOp op, const TensorT<T>& t) {
    std::vector<std::size_t> axes(t.rank());
    std::iota(axes.begin(), axes.end(), std::size_t(0));
    return reduce(op, t, axes).item();
}

template <typename T>
T sum(const TensorT<T>& t) { return reduce_all(ReduceOp::kSum, t); }
template <typename T>
T mean(const TensorT<T>& t) { return reduce_all(ReduceOp::kMean, t); }
template <typename T>
T max_value(const TensorT<T>& t) { return reduce_all(ReduceOp::kMax, t); }
template <typename T>
T min_value(const TensorT<T>& t) { return reduce_all(ReduceOp::kMin, t); }

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw std::invalid_argument("tensor: matmul expects rank-2 operands");
    if (a.dim(1) != b.dim(0))
        throw std::invalid_argument("tensor: matmul inner dimension mismatch");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    TensorT<T> out({m, n});
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const T av = pa[i * k + p];
            const T* brow = pb + p * n;
            T* orow = po + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    detail::ensure_finite(out, "matmul");
    return out;
}

}  // namespace dwic
