#pragma once

#include <cmath>
#include <optional>
#include <type_traits>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "equikernel/conv.hpp"
#include "equikernel/tape.hpp"
#include "equikernel/tensor.hpp"

namespace equikernel {

enum class Activation { relu, sigmoid, softsign };

namespace detail {

inline void require_same(const char* op, const Shape& a, const Shape& b) {
    if (a != b) throw ShapeError(op, a, b, "shapes must match");
}

inline std::size_t normalize_axis(const char* op, const Shape& s, int axis) {
    const int r = static_cast<int>(s.size());
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) throw ShapeError(op, s, "axis " + std::to_string(axis) + " out of range");
    return static_cast<std::size_t>(a);
}

template <typename T>
Tensor<T> map(const Tensor<T>& x, auto&& fn) {
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = fn(x[i]);
    return out;
}

}  // namespace detail

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    detail::require_same("add", a.shape(), b.shape());
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
    return a.tape().record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& go) {
        t.accumulate(a, go);
        t.accumulate(b, go);
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    detail::require_same("sub", a.shape(), b.shape());
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
    return a.tape().record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& go) {
        t.accumulate(a, go);
        if (auto* gb = t.grad_target(b))
            for (std::size_t i = 0; i < go.size(); ++i) (*gb)[i] -= go[i];
    });
}

/// Element-wise product.
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    detail::require_same("mul", a.shape(), b.shape());
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
    return a.tape().record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& go) {
        if (auto* ga = t.grad_target(a))
            for (std::size_t i = 0; i < go.size(); ++i) (*ga)[i] += go[i] * b.value()[i];
        if (auto* gb = t.grad_target(b))
            for (std::size_t i = 0; i < go.size(); ++i) (*gb)[i] += go[i] * a.value()[i];
    });
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
    Tensor<T> out = detail::map(x.value(), [factor](T v) { return v * factor; });
    return x.tape().record(std::move(out), {x}, [x, factor](Tape<T>& t, const Tensor<T>& go) {
        if (auto* gx = t.grad_target(x))
            for (std::size_t i = 0; i < go.size(); ++i) (*gx)[i] += go[i] * factor;
    });
}

/// Multiplies every slice x[b, ...] by s[b]; `s` holds one value per leading index.
template <typename T>
Var<T> scale_rows(const Var<T>& x, const Var<T>& s) {
    const std::size_t rows = s.value().size();
    if (x.shape().empty() || x.shape()[0] != rows) throw ShapeError("scale_rows", x.shape(), s.shape(), "one factor per leading index");
    const std::size_t inner = x.value().size() / rows;
    Tensor<T> out(x.shape());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < inner; ++i) out[r * inner + i] = x.value()[r * inner + i] * s.value()[r];
    return x.tape().record(std::move(out), {x, s}, [x, s, rows, inner](Tape<T>& t, const Tensor<T>& go) {
        if (auto* gx = t.grad_target(x))
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t i = 0; i < inner; ++i) (*gx)[r * inner + i] += go[r * inner + i] * s.value()[r];
        if (auto* gs = t.grad_target(s))
            for (std::size_t r = 0; r < rows; ++r) {
                T acc = 0;
                for (std::size_t i = 0; i < inner; ++i) acc += go[r * inner + i] * x.value()[r * inner + i];
                (*gs)[r] += acc;
            }
    });
}

/// Element-wise maximum; ties route the gradient to `a`.
template <typename T>
Var<T> maximum(const Var<T>& a, const Var<T>& b) {
    detail::require_same("maximum", a.shape(), b.shape());
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(a.value()[i], b.value()[i]);
    return a.tape().record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& go) {
        auto* ga = t.grad_target(a);
        auto* gb = t.grad_target(b);
        for (std::size_t i = 0; i < go.size(); ++i) {
            if (a.value()[i] >= b.value()[i]) {
                if (ga) (*ga)[i] += go[i];
            } else if (gb) {
                (*gb)[i] += go[i];
            }
        }
    });
}

template <typename T>
T activate(Activation kind, T v) {
    switch (kind) {
        case Activation::relu: return v > T{0} ? v : T{0};
        case Activation::sigmoid: return T{1} / (T{1} + std::exp(-v));
        case Activation::softsign: return v / (T{1} + std::abs(v));
    }
    return v;
}

template <typename T>
Var<T> pointwise(const Var<T>& x, Activation kind) {
    Tensor<T> out = detail::map(x.value(), [kind](T v) { return activate(kind, v); });
    return x.tape().record(out, {x}, [x, kind, y = out](Tape<T>& t, const Tensor<T>& go) {
        auto* gx = t.grad_target(x);
        if (!gx) return;
        for (std::size_t i = 0; i < go.size(); ++i) {
            const T v = x.value()[i];
            T d = 0;
            switch (kind) {
                case Activation::relu: d = v > T{0} ? T{1} : T{0}; break;
                case Activation::sigmoid: d = y[i] * (T{1} - y[i]); break;
                case Activation::softsign: {
                    const T den = T{1} + std::abs(v);
                    d = T{1} / (den * den);
                    break;
                }
            }
            (*gx)[i] += go[i] * d;
        }
    });
}

template <typename T> Var<T> relu(const Var<T>& x) { return pointwise(x, Activation::relu); }
template <typename T> Var<T> sigmoid(const Var<T>& x) { return pointwise(x, Activation::sigmoid); }
template <typename T> Var<T> softsign(const Var<T>& x) { return pointwise(x, Activation::softsign); }

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
    Tensor<T> out = x.value().reshaped(std::move(shape));
    return x.tape().record(std::move(out), {x}, [x](Tape<T>& t, const Tensor<T>& go) {
        if (auto* gx = t.grad_target(x))
            for (std::size_t i = 0; i < go.size(); ++i) (*gx)[i] += go[i];
    });
}

/// Swaps the last two axes: [..., M, N] -> [..., N, M].
template <typename T>
Var<T> transpose_last2(const Var<T>& x) {
    const Shape& s = x.shape();
    if (s.size() < 2) throw ShapeError("transpose_last2", s, "needs rank >= 2");
    const std::size_t m = s[s.size() - 2], n = s[s.size() - 1], b = leading_count(s, 2);
    Shape os = s;
    std::swap(os[os.size() - 1], os[os.size() - 2]);
    Tensor<T> out(os);
    for (std::size_t k = 0; k < b; ++k)
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) out[k * m * n + j * m + i] = x.value()[k * m * n + i * n + j];
    return x.tape().record(std::move(out), {x}, [x, m, n, b](Tape<T>& t, const Tensor<T>& go) {
        if (auto* gx = t.grad_target(x))
            for (std::size_t k = 0; k < b; ++k)
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) (*gx)[k * m * n + i * n + j] += go[k * m * n + j * m + i];
    });
}

/// Exchanges the first two axes: [A, B, ...] -> [B, A, ...].
template <typename T>
Var<T> swap_leading_axes(const Var<T>& x) {
    const Shape& s = x.shape();
    if (s.size() < 2) throw ShapeError("swap_leading_axes", s, "needs rank >= 2");
    const std::size_t a = s[0], b = s[1], inner = x.value().size() / (a * b);
    Shape os = s;
    std::swap(os[0], os[1]);
    Tensor<T> out(os);
    for (std::size_t i = 0; i < a; ++i)
        for (std::size_t j = 0; j < b; ++j)
            std::copy_n(x.value().raw() + (i * b + j) * inner, inner, out.raw() + (j * a + i) * inner);
    return x.tape().record(std::move(out), {x}, [x, a, b, inner](Tape<T>& t, const Tensor<T>& go) {
        if (auto* gx = t.grad_target(x))
            for (std::size_t i = 0; i < a; ++i)
                for (std::size_t j = 0; j < b; ++j)
                    for (std::size_t k = 0; k < inner; ++k) (*gx)[(i * b + j) * inner + k] += go[(j * a + i) * inner + k];
    });
}

/// Concatenates along `axis`; all other extents must agree.
template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    const std::size_t ax = detail::normalize_axis("concat", s0, axis);
    Shape os = s0;
    os[ax] = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != s0.size()) throw ShapeError("concat", s0, s, "rank mismatch");
        for (std::size_t i = 0; i < s.size(); ++i)
            if (i != ax && s[i] != s0[i]) throw ShapeError("concat", s0, s, "non-concatenated extents differ");
        os[ax] += s[ax];
    }
    const std::size_t outer = element_count(Shape(s0.begin(), s0.begin() + static_cast<std::ptrdiff_t>(ax)));
    const std::size_t inner = element_count(Shape(s0.begin() + static_cast<std::ptrdiff_t>(ax) + 1, s0.end()));
    Tensor<T> out(os);
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const std::size_t len = p.shape()[ax] * inner;
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(p.value().raw() + o * len, len, out.raw() + o * os[ax] * inner + off);
        off += len;
    }
    const std::size_t row = os[ax] * inner;
    return parts[0].tape().record(std::move(out), parts, [parts, offsets, outer, inner, ax, row](Tape<T>& t, const Tensor<T>& go) {
        for (std::size_t k = 0; k < parts.size(); ++k) {
            auto* g = t.grad_target(parts[k]);
            if (!g) continue;
            const std::size_t len = parts[k].shape()[ax] * inner;
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t i = 0; i < len; ++i) (*g)[o * len + i] += go[o * row + offsets[k] + i];
        }
    });
}

/// Sub-range [begin, end) of `axis`.
template <typename T>
Var<T> slice(const Var<T>& x, int axis, std::size_t begin, std::size_t end) {
    const Shape& s = x.shape();
    const std::size_t ax = detail::normalize_axis("slice", s, axis);
    if (begin >= end || end > s[ax]) throw ShapeError("slice", s, "range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid");
    const std::size_t outer = element_count(Shape(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(ax)));
    const std::size_t inner = element_count(Shape(s.begin() + static_cast<std::ptrdiff_t>(ax) + 1, s.end()));
    Shape os = s;
    os[ax] = end - begin;
    Tensor<T> out(os);
    const std::size_t len = (end - begin) * inner, row = s[ax] * inner, off = begin * inner;
    for (std::size_t o = 0; o < outer; ++o) std::copy_n(x.value().raw() + o * row + off, len, out.raw() + o * len);
    return x.tape().record(std::move(out), {x}, [x, outer, len, row, off](Tape<T>& t, const Tensor<T>& go) {
        if (auto* gx = t.grad_target(x))
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t i = 0; i < len; ++i) (*gx)[o * row + off + i] += go[o * len + i];
    });
}

/// Reverses the last (width) axis.
template <typename T>
Tensor<T> mirror_w(const Tensor<T>& x) {
    const std::size_t w = x.dim(-1), rows = x.size() / w;
    Tensor<T> out(x.shape());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < w; ++j) out[r * w + j] = x[r * w + (w - 1 - j)];
    return out;
}

template <typename T>
Var<T> mirror_w(const Var<T>& x) {
    return x.tape().record(mirror_w(x.value()), {x}, [x](Tape<T>& t, const Tensor<T>& go) {
        if (t.grad_target(x)) t.accumulate(x, mirror_w(go));
    });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
    T acc = 0;
    for (T v : x.value().data()) acc += v;
    return x.tape().record(Tensor<T>::scalar(acc), {x}, [x](Tape<T>& t, const Tensor<T>& go) {
        if (auto* gx = t.grad_target(x))
            for (auto& v : gx->data()) v += go[0];
    });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
    return scale(sum(x), T{1} / static_cast<T>(x.value().size()));
}

/// Affine map along the last axis: y = x W^T + b, W is [D_out, D_in].
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const std::type_identity_t<std::optional<Var<T>>>& bias = std::nullopt) {
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    if (xs.empty() || ws.size() != 2 || xs.back() != ws[1]) throw ShapeError("linear", xs, ws, "inner dimensions disagree");
    if (bias && (bias->shape().size() != 1 || bias->shape()[0] != ws[0]))
        throw ShapeError("linear", bias->shape(), ws, "bias must be [D_out]");
    const auto n = static_cast<Eigen::Index>(leading_count(xs, 1));
    const auto din = static_cast<Eigen::Index>(ws[1]), dout = static_cast<Eigen::Index>(ws[0]);
    Shape os = xs;
    os.back() = ws[0];
    Tensor<T> out(os);
    detail::MatMap<T> om(out.raw(), n, dout);
    om.noalias() = detail::ConstMatMap<T>(x.value().raw(), n, din) * detail::ConstMatMap<T>(w.value().raw(), dout, din).transpose();
    if (bias) om.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias->value().raw(), dout);
    std::vector<Var<T>> inputs{x, w};
    if (bias) inputs.push_back(*bias);
    return x.tape().record(std::move(out), inputs, [x, w, bias, n, din, dout](Tape<T>& t, const Tensor<T>& go) {
        detail::ConstMatMap<T> g(go.raw(), n, dout);
        if (auto* gx = t.grad_target(x))
            detail::MatMap<T>(gx->raw(), n, din).noalias() += g * detail::ConstMatMap<T>(w.value().raw(), dout, din);
        if (auto* gw = t.grad_target(w))
            detail::MatMap<T>(gw->raw(), dout, din).noalias() += g.transpose() * detail::ConstMatMap<T>(x.value().raw(), n, din);
        if (bias)
            if (auto* gb = t.grad_target(*bias))
                Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(gb->raw(), dout) += g.colwise().sum();
    });
}

/// Batched matrix product over leading axes: [B,M,K] x [B,K,N] -> [B,M,N], or
/// [B,M,K] x [B,N,K]^T when `transpose_b` is set.
template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b, bool transpose_b = false) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    if (as.size() < 2 || bs.size() != as.size()) throw ShapeError("bmm", as, bs, "rank mismatch");
    const std::size_t batch = leading_count(as, 2);
    if (leading_count(bs, 2) != batch) throw ShapeError("bmm", as, bs, "batch extents differ");
    const auto M = static_cast<Eigen::Index>(as[as.size() - 2]), K = static_cast<Eigen::Index>(as.back());
    const auto bk = static_cast<Eigen::Index>(transpose_b ? bs.back() : bs[bs.size() - 2]);
    const auto N = static_cast<Eigen::Index>(transpose_b ? bs[bs.size() - 2] : bs.back());
    if (bk != K) throw ShapeError("bmm", as, bs, "contraction extents differ");
    Shape os = as;
    os.back() = static_cast<std::size_t>(N);
    Tensor<T> out(os);
    const auto sa = static_cast<std::size_t>(M * K), sb = static_cast<std::size_t>(K * N), so = static_cast<std::size_t>(M * N);
    for (std::size_t i = 0; i < batch; ++i) {
        detail::ConstMatMap<T> am(a.value().raw() + i * sa, M, K);
        detail::MatMap<T> om(out.raw() + i * so, M, N);
        if (transpose_b)
            om.noalias() = am * detail::ConstMatMap<T>(b.value().raw() + i * sb, N, K).transpose();
        else
            om.noalias() = am * detail::ConstMatMap<T>(b.value().raw() + i * sb, K, N);
    }
    return a.tape().record(std::move(out), {a, b}, [a, b, transpose_b, batch, M, K, N, sa, sb, so](Tape<T>& t, const Tensor<T>& go) {
        auto* ga = t.grad_target(a);
        auto* gb = t.grad_target(b);
        for (std::size_t i = 0; i < batch; ++i) {
            detail::ConstMatMap<T> g(go.raw() + i * so, M, N);
            detail::ConstMatMap<T> am(a.value().raw() + i * sa, M, K);
            if (transpose_b) {
                detail::ConstMatMap<T> bm(b.value().raw() + i * sb, N, K);
                if (ga) detail::MatMap<T>(ga->raw() + i * sa, M, K).noalias() += g * bm;
                if (gb) detail::MatMap<T>(gb->raw() + i * sb, N, K).noalias() += g.transpose() * am;
            } else {
                detail::ConstMatMap<T> bm(b.value().raw() + i * sb, K, N);
                if (ga) detail::MatMap<T>(ga->raw() + i * sa, M, K).noalias() += g * bm.transpose();
                if (gb) detail::MatMap<T>(gb->raw() + i * sb, K, N).noalias() += am.transpose() * g;
            }
        }
    });
}

/// Row-max-shifted softmax over the last axis.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
    const std::size_t n = x.dim(-1), rows = x.size() / n;
    Tensor<T> out(x.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* src = x.raw() + r * n;
        T* dst = out.raw() + r * n;
        const T m = *std::max_element(src, src + n);
        T z = 0;
        for (std::size_t i = 0; i < n; ++i) z += (dst[i] = std::exp(src[i] - m));
        for (std::size_t i = 0; i < n; ++i) dst[i] /= z;
    }
    return out;
}

template <typename T>
Var<T> softmax(const Var<T>& x) {
    Tensor<T> y = softmax(x.value());
    return x.tape().record(y, {x}, [x, y](Tape<T>& t, const Tensor<T>& go) {
        auto* gx = t.grad_target(x);
        if (!gx) return;
        const std::size_t n = y.dim(-1), rows = y.size() / n;
        for (std::size_t r = 0; r < rows; ++r) {
            T dot = 0;
            for (std::size_t i = 0; i < n; ++i) dot += go[r * n + i] * y[r * n + i];
            for (std::size_t i = 0; i < n; ++i) (*gx)[r * n + i] += y[r * n + i] * (go[r * n + i] - dot);
        }
    });
}

}  // namespace equikernel
