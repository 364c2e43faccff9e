#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "equikernel/tape.hpp"
#include "equikernel/tensor.hpp"

namespace equikernel {

enum class PoolMode { temporal_max, global_avg, region_max, region_mean };

/// Half-open spatial window rows [top, bottom) x cols [left, right).
struct Region {
    std::size_t top = 0, bottom = 0, left = 0, right = 0;
    std::size_t area() const { return (bottom - top) * (right - left); }
};

/// Per-element maximum over the T axis of [..., T, C, H, W].
template <typename T>
Var<T> temporal_max(const Var<T>& x) {
    const Shape& s = x.shape();
    if (s.size() < 4) throw ShapeError("temporal_max", s, "needs a [T,C,H,W] tail");
    const std::size_t frames = s[s.size() - 4];
    if (frames == 0) throw ShapeError("temporal_max", s, "empty sequence");
    const std::size_t inner = s[s.size() - 3] * s[s.size() - 2] * s[s.size() - 1];
    const std::size_t outer = leading_count(s, 4);
    Shape os(s.begin(), s.end() - 4);
    os.insert(os.end(), s.end() - 3, s.end());
    Tensor<T> out(os);
    std::vector<std::uint32_t> arg(out.size(), 0);
    for (std::size_t o = 0; o < outer; ++o) {
        const T* src = x.value().raw() + o * frames * inner;
        T* dst = out.raw() + o * inner;
        std::uint32_t* a = arg.data() + o * inner;
        std::copy_n(src, inner, dst);
        for (std::size_t f = 1; f < frames; ++f)
            for (std::size_t i = 0; i < inner; ++i)
                if (src[f * inner + i] > dst[i]) {
                    dst[i] = src[f * inner + i];
                    a[i] = static_cast<std::uint32_t>(f);
                }
    }
    return x.tape().record(std::move(out), {x}, [x, arg = std::move(arg), frames, inner, outer](Tape<T>& t, const Tensor<T>& go) {
        auto* gx = t.grad_target(x);
        if (!gx) return;
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < inner; ++i)
                (*gx)[(o * frames + arg[o * inner + i]) * inner + i] += go[o * inner + i];
    });
}

/// Pools every [H, W] plane within `r` down to one value: [..., H, W] -> [...].
template <typename T>
Var<T> region_pool(const Var<T>& x, const Region& r, bool use_max) {
    const Shape& s = x.shape();
    if (s.size() < 2) throw ShapeError("region_pool", s, "needs trailing [H,W]");
    const std::size_t h = s[s.size() - 2], w = s[s.size() - 1];
    if (r.top >= r.bottom || r.left >= r.right || r.bottom > h || r.right > w)
        throw ShapeError("region_pool", s, "region outside the spatial extent");
    const std::size_t planes = leading_count(s, 2);
    Tensor<T> out(Shape(s.begin(), s.end() - 2));
    std::vector<std::size_t> arg(use_max ? planes : 0);
    for (std::size_t p = 0; p < planes; ++p) {
        const T* src = x.value().raw() + p * h * w;
        T acc = use_max ? -std::numeric_limits<T>::infinity() : T{0};
        std::size_t best = 0;
        for (std::size_t i = r.top; i < r.bottom; ++i)
            for (std::size_t j = r.left; j < r.right; ++j) {
                const T v = src[i * w + j];
                if (!use_max) {
                    acc += v;
                } else if (v > acc) {
                    acc = v;
                    best = i * w + j;
                }
            }
        out[p] = use_max ? acc : acc / static_cast<T>(r.area());
        if (use_max) arg[p] = best;
    }
    return x.tape().record(std::move(out), {x}, [x, r, use_max, arg = std::move(arg), planes, h, w](Tape<T>& t, const Tensor<T>& go) {
        auto* gx = t.grad_target(x);
        if (!gx) return;
        const T inv = T{1} / static_cast<T>(r.area());
        for (std::size_t p = 0; p < planes; ++p) {
            T* dst = gx->raw() + p * h * w;
            if (use_max) {
                dst[arg[p]] += go[p];
                continue;
            }
            for (std::size_t i = r.top; i < r.bottom; ++i)
                for (std::size_t j = r.left; j < r.right; ++j) dst[i * w + j] += go[p] * inv;
        }
    });
}

template <typename T>
Var<T> global_avg(const Var<T>& x) {
    const Shape& s = x.shape();
    if (s.size() < 2) throw ShapeError("global_avg", s, "needs trailing [H,W]");
    return region_pool(x, Region{0, s[s.size() - 2], 0, s[s.size() - 1]}, false);
}

/// Dispatches the pooling modes; region modes require a window.
template <typename T>
Var<T> pool(const Var<T>& x, PoolMode mode, std::optional<Region> region = std::nullopt) {
    switch (mode) {
        case PoolMode::temporal_max: return temporal_max(x);
        case PoolMode::global_avg: return global_avg(x);
        case PoolMode::region_max:
        case PoolMode::region_mean:
            if (!region) throw std::invalid_argument("pool: region mode needs a window");
            return region_pool(x, *region, mode == PoolMode::region_max);
    }
    throw std::invalid_argument("pool: unknown mode");
}

/// Row ranges of `parts` horizontal strips over `height` rows: equal strips of
/// floor(height / parts), the remainder going to the last strip.
inline std::vector<std::pair<std::size_t, std::size_t>> strip_bounds(std::size_t height, std::size_t parts) {
    if (parts == 0 || parts > height)
        throw std::invalid_argument("horizontal_pool: " + std::to_string(parts) + " parts over " + std::to_string(height) + " rows");
    const std::size_t base = height / parts;
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t p = 0; p < parts; ++p) out.emplace_back(p * base, p + 1 == parts ? height : (p + 1) * base);
    return out;
}

/// Horizontal Pooling: [..., C, H, W] -> [..., P, C]. Each strip spans the full
/// width and is reduced by max (+ mean when `add_mean`), which makes the result
/// invariant to width reflection of the map.
template <typename T>
Var<T> horizontal_pool(const Var<T>& x, std::size_t parts, bool add_mean = true) {
    const Shape& s = x.shape();
    if (s.size() < 3) throw ShapeError("horizontal_pool", s, "needs trailing [C,H,W]");
    const std::size_t c = s[s.size() - 3], h = s[s.size() - 2], w = s[s.size() - 1];
    const auto strips = strip_bounds(h, parts);
    const std::size_t outer = leading_count(s, 3);
    Shape os(s.begin(), s.end() - 3);
    os.insert(os.end(), {parts, c});
    Tensor<T> out(os);
    std::vector<std::size_t> arg(out.size());
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const T* plane = x.value().raw() + (o * c + ch) * h * w;
            for (std::size_t p = 0; p < parts; ++p) {
                const auto [r0, r1] = strips[p];
                T best = -std::numeric_limits<T>::infinity(), acc = 0;
                std::size_t at = r0 * w;
                for (std::size_t i = r0 * w; i < r1 * w; ++i) {
                    acc += plane[i];
                    if (plane[i] > best) {
                        best = plane[i];
                        at = i;
                    }
                }
                const std::size_t k = (o * parts + p) * c + ch;
                out[k] = best + (add_mean ? acc / static_cast<T>((r1 - r0) * w) : T{0});
                arg[k] = at;
            }
        }
    return x.tape().record(std::move(out), {x}, [x, strips, arg = std::move(arg), outer, c, h, w, parts, add_mean](Tape<T>& t, const Tensor<T>& go) {
        auto* gx = t.grad_target(x);
        if (!gx) return;
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t ch = 0; ch < c; ++ch) {
                T* plane = gx->raw() + (o * c + ch) * h * w;
                for (std::size_t p = 0; p < parts; ++p) {
                    const std::size_t k = (o * parts + p) * c + ch;
                    plane[arg[k]] += go[k];
                    if (!add_mean) continue;
                    const auto [r0, r1] = strips[p];
                    const T share = go[k] / static_cast<T>((r1 - r0) * w);
                    for (std::size_t i = r0 * w; i < r1 * w; ++i) plane[i] += share;
                }
            }
    });
}

}  // namespace equikernel
