#pragma once

#include <cmath>
#include <vector>

#include "equikernel/tape.hpp"
#include "equikernel/tensor.hpp"

namespace equikernel {

namespace detail {

/// Source taps of one align-corners output coordinate.
struct LerpTap {
    std::size_t lo, hi;
    double frac;
};

inline std::vector<LerpTap> align_corners_taps(std::size_t in, std::size_t out) {
    std::vector<LerpTap> taps(out);
    const double ratio = out > 1 ? static_cast<double>(in - 1) / static_cast<double>(out - 1) : 0.0;
    for (std::size_t i = 0; i < out; ++i) {
        const double src = static_cast<double>(i) * ratio;
        auto lo = static_cast<std::size_t>(std::floor(src));
        if (lo > in - 1) lo = in - 1;
        const std::size_t hi = std::min(lo + 1, in - 1);
        taps[i] = LerpTap{lo, hi, src - static_cast<double>(lo)};
    }
    return taps;
}

}  // namespace detail

/// Bilinear resampling of the trailing [H, W] axes with align-corners mapping,
/// so a same-size target reproduces the input exactly.
template <typename T>
Var<T> bilinear_resize(const Var<T>& x, std::size_t out_h, std::size_t out_w) {
    const Shape& s = x.shape();
    if (s.size() < 2) throw ShapeError("bilinear_resize", s, "needs trailing [H,W]");
    if (out_h == 0 || out_w == 0) throw ShapeError("bilinear_resize", s, "target extents must be >= 1");
    const std::size_t h = s[s.size() - 2], w = s[s.size() - 1], planes = leading_count(s, 2);
    if (h == 0 || w == 0) throw ShapeError("bilinear_resize", s, "empty spatial extent");
    const auto ty = detail::align_corners_taps(h, out_h);
    const auto tx = detail::align_corners_taps(w, out_w);
    Shape os(s.begin(), s.end() - 2);
    os.insert(os.end(), {out_h, out_w});
    Tensor<T> out(os);
    for (std::size_t p = 0; p < planes; ++p) {
        const T* src = x.value().raw() + p * h * w;
        T* dst = out.raw() + p * out_h * out_w;
        for (std::size_t i = 0; i < out_h; ++i) {
            const auto& a = ty[i];
            const T fy = static_cast<T>(a.frac);
            for (std::size_t j = 0; j < out_w; ++j) {
                const auto& b = tx[j];
                const T fx = static_cast<T>(b.frac);
                const T top = src[a.lo * w + b.lo] * (T{1} - fx) + src[a.lo * w + b.hi] * fx;
                const T bot = src[a.hi * w + b.lo] * (T{1} - fx) + src[a.hi * w + b.hi] * fx;
                dst[i * out_w + j] = top * (T{1} - fy) + bot * fy;
            }
        }
    }
    return x.tape().record(std::move(out), {x}, [x, ty, tx, planes, h, w, out_h, out_w](Tape<T>& t, const Tensor<T>& go) {
        auto* gx = t.grad_target(x);
        if (!gx) return;
        for (std::size_t p = 0; p < planes; ++p) {
            T* dst = gx->raw() + p * h * w;
            const T* g = go.raw() + p * out_h * out_w;
            for (std::size_t i = 0; i < out_h; ++i) {
                const T fy = static_cast<T>(ty[i].frac);
                for (std::size_t j = 0; j < out_w; ++j) {
                    const T fx = static_cast<T>(tx[j].frac);
                    const T v = g[i * out_w + j];
                    dst[ty[i].lo * w + tx[j].lo] += v * (T{1} - fy) * (T{1} - fx);
                    dst[ty[i].lo * w + tx[j].hi] += v * (T{1} - fy) * fx;
                    dst[ty[i].hi * w + tx[j].lo] += v * fy * (T{1} - fx);
                    dst[ty[i].hi * w + tx[j].hi] += v * fy * fx;
                }
            }
        }
    });
}

}  // namespace equikernel
