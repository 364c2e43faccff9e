#pragma once

#include <algorithm>
#include <optional>
#include <utility>
#include <type_traits>
#include <string>

#include <Eigen/Core>

#include "equikernel/tape.hpp"
#include "equikernel/tensor.hpp"

namespace equikernel {

/// Geometry of a square 2-D cross-correlation.
struct ConvSpec {
    std::size_t kernel = 3;
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t dilation = 1;

    static ConvSpec same(std::size_t k, std::size_t stride = 1, std::size_t dilation = 1) {
        return ConvSpec{k, stride, dilation * (k - 1) / 2, dilation};
    }

    std::size_t span() const noexcept { return dilation * (kernel - 1) + 1; }

    /// floor((in + 2p - d(k-1) - 1) / s) + 1; zero when the window does not fit.
    std::size_t out_extent(std::size_t in) const noexcept {
        const std::size_t padded = in + 2 * padding;
        if (padded < span()) return 0;
        return (padded - span()) / stride + 1;
    }

    void validate(const std::string& op) const {
        if (kernel == 0 || kernel % 2 == 0)
            throw std::invalid_argument(op + ": kernel size must be odd, got " + std::to_string(kernel));
        if (stride == 0) throw std::invalid_argument(op + ": stride must be >= 1");
        if (dilation == 0) throw std::invalid_argument(op + ": dilation must be >= 1");
    }
};

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

struct ConvGeometry {
    std::size_t batch, c_in, h, w, c_out, ho, wo;
    ConvSpec spec;
    std::size_t patch() const { return c_in * spec.kernel * spec.kernel; }
    std::size_t out_plane() const { return ho * wo; }
    bool pointwise() const { return spec.kernel == 1 && spec.stride == 1 && spec.padding == 0; }
};

inline ConvGeometry conv_geometry(const Shape& x, const Shape& w, const ConvSpec& spec) {
    spec.validate("conv2d");
    if (x.size() < 3) throw ShapeError("conv2d", x, "input needs at least [C,H,W]");
    if (w.size() != 4 || w[2] != w[3]) throw ShapeError("conv2d", w, "weights must be [C_out,C_in,k,k]");
    const std::size_t r = x.size();
    if (x[r - 3] != w[1]) throw ShapeError("conv2d", x, w, "input channels disagree with weights");
    if (w[2] != spec.kernel) throw ShapeError("conv2d", w, "kernel extent disagrees with ConvSpec");
    ConvGeometry g{leading_count(x, 3), x[r - 3], x[r - 2], x[r - 1], w[0], 0, 0, spec};
    g.ho = spec.out_extent(g.h);
    g.wo = spec.out_extent(g.w);
    if (g.ho == 0 || g.wo == 0) throw ShapeError("conv2d", x, w, "kernel window exceeds padded input");
    return g;
}

/// Output columns [lo, hi) whose input column ox * stride + off lies inside [0, w).
inline std::pair<std::size_t, std::size_t> valid_columns(std::ptrdiff_t off, std::size_t stride, std::size_t w, std::size_t wo) {
    const auto st = static_cast<std::ptrdiff_t>(stride);
    std::ptrdiff_t lo = off >= 0 ? 0 : (-off + st - 1) / st;
    std::ptrdiff_t hi = static_cast<std::ptrdiff_t>(w) - off <= 0 ? 0 : (static_cast<std::ptrdiff_t>(w) - 1 - off) / st + 1;
    hi = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(wo));
    lo = std::min<std::ptrdiff_t>(lo, hi);
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

/// Unfolds one [C,H,W] plane into a [C*k*k, Ho*Wo] patch matrix.
template <typename T>
void im2col(const T* src, const ConvGeometry& g, T* cols) {
    const auto k = g.spec.kernel, s = g.spec.stride, d = g.spec.dilation;
    const auto pad = static_cast<std::ptrdiff_t>(g.spec.padding);
    for (std::size_t c = 0; c < g.c_in; ++c) {
        const T* plane = src + c * g.h * g.w;
        for (std::size_t ki = 0; ki < k; ++ki) {
            for (std::size_t kj = 0; kj < k; ++kj) {
                T* row = cols + ((c * k + ki) * k + kj) * g.out_plane();
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * s + ki * d) - pad;
                    T* dst = row + oy * g.wo;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
                        std::fill(dst, dst + g.wo, T{0});
                        continue;
                    }
                    const T* line = plane + static_cast<std::size_t>(iy) * g.w;
                    const auto off = static_cast<std::ptrdiff_t>(kj * d) - pad;
                    const auto [lo, hi] = valid_columns(off, s, g.w, g.wo);
                    std::fill(dst, dst + lo, T{0});
                    std::fill(dst + hi, dst + g.wo, T{0});
                    if (s == 1 && lo < hi)
                        std::copy_n(line + (static_cast<std::ptrdiff_t>(lo) + off), hi - lo, dst + lo);
                    else
                        for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] = line[static_cast<std::ptrdiff_t>(ox * s) + off];
                }
            }
        }
    }
}

/// Adjoint of im2col: scatters-adds a patch matrix back into a [C,H,W] plane.
template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* dst) {
    const auto k = g.spec.kernel, s = g.spec.stride, d = g.spec.dilation;
    const auto pad = static_cast<std::ptrdiff_t>(g.spec.padding);
    for (std::size_t c = 0; c < g.c_in; ++c) {
        T* plane = dst + c * g.h * g.w;
        for (std::size_t ki = 0; ki < k; ++ki) {
            for (std::size_t kj = 0; kj < k; ++kj) {
                const T* row = cols + ((c * k + ki) * k + kj) * g.out_plane();
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * s + ki * d) - pad;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                    T* line = plane + static_cast<std::size_t>(iy) * g.w;
                    const T* src = row + oy * g.wo;
                    const auto off = static_cast<std::ptrdiff_t>(kj * d) - pad;
                    const auto [lo, hi] = valid_columns(off, s, g.w, g.wo);
                    if (s == 1 && lo < hi) {
                        T* to = line + (static_cast<std::ptrdiff_t>(lo) + off);
                        for (std::size_t i = 0; i < hi - lo; ++i) to[i] += src[lo + i];
                    } else {
                        for (std::size_t ox = lo; ox < hi; ++ox) line[static_cast<std::ptrdiff_t>(ox * s) + off] += src[ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail

/// Cross-correlation (no kernel flip) with zero padding over the trailing
/// [C,H,W] axes; leading axes are independent samples.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, const ConvSpec& spec) {
    const auto g = detail::conv_geometry(x.shape(), w.shape(), spec);
    if (bias && (bias->rank() != 1 || bias->dim(0) != g.c_out))
        throw ShapeError("conv2d", bias->shape(), w.shape(), "bias must be [C_out]");
    Shape out_shape(x.shape().begin(), x.shape().end() - 3);
    out_shape.insert(out_shape.end(), {g.c_out, g.ho, g.wo});
    Tensor<T> out(out_shape);

    const detail::ConstMatMap<T> wm(w.raw(), static_cast<Eigen::Index>(g.c_out), static_cast<Eigen::Index>(g.patch()));
    std::vector<T> cols(g.pointwise() ? 0 : g.patch() * g.out_plane());
    const auto plane_in = g.c_in * g.h * g.w;
    const auto plane_out = g.c_out * g.out_plane();
    const auto P = static_cast<Eigen::Index>(g.out_plane());
    for (std::size_t n = 0; n < g.batch; ++n) {
        const T* src = x.raw() + n * plane_in;
        if (!g.pointwise()) {
            detail::im2col(src, g, cols.data());
            src = cols.data();
        }
        detail::ConstMatMap<T> cm(src, static_cast<Eigen::Index>(g.patch()), P);
        detail::MatMap<T> om(out.raw() + n * plane_out, static_cast<Eigen::Index>(g.c_out), P);
        om.noalias() = wm * cm;
        if (bias) om.colwise() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(bias->raw(), om.rows());
    }
    return out;
}

/// Accumulates input/weight/bias gradients of conv2d_forward. Null targets are skipped.
template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& grad_out, const ConvSpec& spec,
                     Tensor<T>* gx, Tensor<T>* gw, Tensor<T>* gb) {
    const auto g = detail::conv_geometry(x.shape(), w.shape(), spec);
    const auto plane_in = g.c_in * g.h * g.w;
    const auto plane_out = g.c_out * g.out_plane();
    const auto P = static_cast<Eigen::Index>(g.out_plane());
    const auto K = static_cast<Eigen::Index>(g.patch());
    const auto Co = static_cast<Eigen::Index>(g.c_out);
    const detail::ConstMatMap<T> wm(w.raw(), Co, K);
    std::vector<T> cols(g.pointwise() || !gw ? 0 : g.patch() * g.out_plane());
    std::vector<T> dcols(g.pointwise() || !gx ? 0 : g.patch() * g.out_plane());
    detail::RowMatrix<T> gw_acc;
    if (gw) gw_acc = detail::RowMatrix<T>::Zero(Co, K);

    for (std::size_t n = 0; n < g.batch; ++n) {
        detail::ConstMatMap<T> go(grad_out.raw() + n * plane_out, Co, P);
        if (gb) {
            for (Eigen::Index o = 0; o < Co; ++o) (*gb)[static_cast<std::size_t>(o)] += go.row(o).sum();
        }
        if (gw) {
            const T* src = x.raw() + n * plane_in;
            if (!g.pointwise()) {
                detail::im2col(src, g, cols.data());
                src = cols.data();
            }
            detail::ConstMatMap<T> cm(src, K, P);
            gw_acc.noalias() += go * cm.transpose();
        }
        if (gx) {
            if (g.pointwise()) {
                detail::MatMap<T> dx(gx->raw() + n * plane_in, K, P);
                dx.noalias() += wm.transpose() * go;
            } else {
                detail::MatMap<T> dc(dcols.data(), K, P);
                dc.noalias() = wm.transpose() * go;
                detail::col2im_add(dcols.data(), g, gx->raw() + n * plane_in);
            }
        }
    }
    if (gw) detail::MatMap<T>(gw->raw(), Co, K) += gw_acc;
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const std::type_identity_t<std::optional<Var<T>>>& bias, const ConvSpec& spec) {
    Tape<T>& tape = x.tape();
    Tensor<T> out = conv2d_forward(x.value(), w.value(), bias ? &bias->value() : nullptr, spec);
    std::vector<Var<T>> inputs{x, w};
    if (bias) inputs.push_back(*bias);
    return tape.record(std::move(out), inputs, [x, w, bias, spec](Tape<T>& t, const Tensor<T>& go) {
        conv2d_backward(x.value(), w.value(), go, spec, t.grad_target(x), t.grad_target(w),
                        bias ? t.grad_target(*bias) : nullptr);
    });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const ConvSpec& spec) {
    return conv2d(x, w, std::optional<Var<T>>{}, spec);
}

/// Multiply-accumulate count of one conv2d application on a single [C,H,W] plane.
inline std::size_t conv2d_macs(std::size_t c_in, std::size_t c_out, std::size_t h, std::size_t w, const ConvSpec& spec) {
    return c_in * c_out * spec.kernel * spec.kernel * spec.out_extent(h) * spec.out_extent(w);
}

}  // namespace equikernel
