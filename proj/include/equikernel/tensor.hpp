#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace equikernel {

using Shape = std::vector<std::size_t>;

inline std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t element_count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

/// Raised whenever tensor extents do not fit an operation. The message names
/// every shape involved so the failing call site can be read off directly.
class ShapeError : public std::invalid_argument {
public:
    ShapeError(const std::string& op, const Shape& a, const std::string& detail)
        : std::invalid_argument(op + ": " + detail + " (got " + to_string(a) + ")") {}
    ShapeError(const std::string& op, const Shape& a, const Shape& b, const std::string& detail)
        : std::invalid_argument(op + ": " + detail + " (got " + to_string(a) + " and " + to_string(b) + ")") {}
};

class NumericError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Dense row-major tensor with value semantics. Axis meaning is positional:
/// spatial operations read the trailing axes as [..., C, H, W] and treat every
/// leading axis as batch (frames, sequences).
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() : data_(1) {}
    explicit Tensor(Shape shape, T fill = T{}) : shape_(std::move(shape)), data_(element_count(shape_), fill) {}
    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != element_count(shape_))
            throw ShapeError("Tensor", shape_, "element count " + std::to_string(data_.size()) + " does not match");
    }

    static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    /// Extent of axis `axis`; negative values count from the back.
    std::size_t dim(int axis) const {
        const int r = static_cast<int>(shape_.size());
        const int a = axis < 0 ? axis + r : axis;
        if (a < 0 || a >= r) throw ShapeError("Tensor::dim", shape_, "axis " + std::to_string(axis) + " out of range");
        return shape_[static_cast<std::size_t>(a)];
    }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    T* raw() noexcept { return data_.data(); }
    const T* raw() const noexcept { return data_.data(); }
    std::vector<T>& storage() noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    template <typename... I>
    T& at(I... idx) { return data_[offset({static_cast<std::size_t>(idx)...})]; }
    template <typename... I>
    const T& at(I... idx) const { return data_[offset({static_cast<std::size_t>(idx)...})]; }

    T item() const {
        if (data_.size() != 1) throw ShapeError("Tensor::item", shape_, "expected a single element");
        return data_[0];
    }

    Tensor reshaped(Shape shape) const {
        if (element_count(shape) != data_.size()) throw ShapeError("reshape", shape_, shape, "element count differs");
        return Tensor(std::move(shape), data_);
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.size());
        std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
        return Tensor<U>(shape_, std::move(out));
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

private:
    std::size_t offset(std::initializer_list<std::size_t> idx) const {
        if (idx.size() != shape_.size()) throw ShapeError("Tensor::at", shape_, "index rank mismatch");
        std::size_t off = 0;
        std::size_t axis = 0;
        for (std::size_t i : idx) {
            off = off * shape_[axis] + i;
            ++axis;
        }
        return off;
    }

    Shape shape_;
    std::vector<T> data_;
};

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) throw ShapeError("max_abs_diff", a.shape(), b.shape(), "shapes differ");
    T m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

template <typename T>
T l2_norm(const Tensor<T>& a) {
    long double s = 0;
    for (T v : a.data()) s += static_cast<long double>(v) * v;
    return static_cast<T>(std::sqrt(s));
}

/// Product of all axes before the last `trailing` ones.
inline std::size_t leading_count(const Shape& shape, std::size_t trailing) {
    if (shape.size() < trailing) return 0;
    return element_count(Shape(shape.begin(), shape.end() - static_cast<std::ptrdiff_t>(trailing)));
}

}  // namespace equikernel
