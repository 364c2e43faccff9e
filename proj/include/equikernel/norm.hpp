#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "equikernel/tape.hpp"
#include "equikernel/tensor.hpp"

namespace equikernel {

enum class NormKind { batch_norm, layer_norm };
enum class NormMode { train, eval };

/// Affine parameters plus running statistics of one normalization layer.
/// `tie` > 1 shares one parameter/statistic slot across channels c, c+C, ...
/// (C = channels / tie); reflect blocks use tie = 2 so paired channels stay
/// interchangeable.
template <typename T>
struct NormState {
    Parameter<T> gamma;
    Parameter<T> beta;
    Tensor<T> running_mean;
    Tensor<T> running_var;
    std::size_t tie = 1;
    T momentum = T(0.9);
    T eps = T(1e-5);

    NormState() = default;
    NormState(const std::string& name, std::size_t channels, std::size_t tie_factor = 1)
        : gamma(name + ".gamma", Tensor<T>({channels}, T{1})),
          beta(name + ".beta", Tensor<T>({channels}, T{0})),
          running_mean({channels}, T{0}),
          running_var({channels}, T{1}),
          tie(tie_factor) {}

    std::size_t channels() const { return gamma.value.size(); }
};

namespace detail {

struct ChannelLayout {
    std::size_t outer, channels, inner;
};

inline ChannelLayout bn_layout(const Shape& s) {
    if (s.size() >= 3) return {leading_count(s, 3), s[s.size() - 3], s[s.size() - 2] * s[s.size() - 1]};
    if (s.size() == 2) return {s[0], s[1], 1};
    throw ShapeError("batch_norm", s, "expects [N,C] or [...,C,H,W]");
}

}  // namespace detail

/// Batch normalization over the channel axis (axis -3 for spatial maps, the
/// last axis for [N, C]). Train mode normalizes with batch statistics and
/// folds them into the running estimates: r <- momentum * r + (1 - momentum) * batch.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, NormState<T>& state, NormMode mode) {
    const Shape& s = x.shape();
    const auto L = detail::bn_layout(s);
    if (x.value().size() == 0) throw ShapeError("batch_norm", s, "zero-element batch");
    const std::size_t slots = gamma.value().size();
    if (slots == 0 || L.channels != slots * state.tie || beta.value().size() != slots)
        throw ShapeError("batch_norm", s, gamma.shape(), "channel extent does not match normalization state");
    const std::size_t count = L.outer * L.inner * state.tie;

    std::vector<T> mean(slots, T{0}), var(slots, T{0});
    const T* xv = x.value().raw();
    auto for_each = [&](auto&& fn) {
        for (std::size_t o = 0; o < L.outer; ++o)
            for (std::size_t c = 0; c < L.channels; ++c) {
                const std::size_t base = (o * L.channels + c) * L.inner;
                for (std::size_t i = 0; i < L.inner; ++i) fn(c % slots, base + i);
            }
    };
    if (mode == NormMode::train) {
        std::vector<long double> acc(slots, 0), acc2(slots, 0);
        for_each([&](std::size_t k, std::size_t idx) { acc[k] += xv[idx]; });
        for (std::size_t k = 0; k < slots; ++k) mean[k] = static_cast<T>(acc[k] / static_cast<long double>(count));
        for_each([&](std::size_t k, std::size_t idx) {
            const long double d = xv[idx] - mean[k];
            acc2[k] += d * d;
        });
        for (std::size_t k = 0; k < slots; ++k) {
            var[k] = static_cast<T>(acc2[k] / static_cast<long double>(count));
            const T unbiased = count > 1 ? static_cast<T>(acc2[k] / static_cast<long double>(count - 1)) : var[k];
            state.running_mean[k] = state.momentum * state.running_mean[k] + (T{1} - state.momentum) * mean[k];
            state.running_var[k] = state.momentum * state.running_var[k] + (T{1} - state.momentum) * unbiased;
        }
    } else {
        for (std::size_t k = 0; k < slots; ++k) {
            mean[k] = state.running_mean[k];
            var[k] = state.running_var[k];
        }
    }
    std::vector<T> inv_std(slots);
    for (std::size_t k = 0; k < slots; ++k) inv_std[k] = T{1} / std::sqrt(var[k] + state.eps);

    Tensor<T> xhat(s), out(s);
    const T* g = gamma.value().raw();
    const T* b = beta.value().raw();
    for_each([&](std::size_t k, std::size_t idx) {
        xhat[idx] = (xv[idx] - mean[k]) * inv_std[k];
        out[idx] = xhat[idx] * g[k] + b[k];
    });

    const bool train = mode == NormMode::train;
    return x.tape().record(std::move(out), {x, gamma, beta},
        [x, gamma, beta, L, slots, count, train, inv_std, xhat = std::move(xhat)](Tape<T>& t, const Tensor<T>& go) {
            auto for_each = [&](auto&& fn) {
                for (std::size_t o = 0; o < L.outer; ++o)
                    for (std::size_t c = 0; c < L.channels; ++c) {
                        const std::size_t base = (o * L.channels + c) * L.inner;
                        for (std::size_t i = 0; i < L.inner; ++i) fn(c % slots, base + i);
                    }
            };
            std::vector<T> sum_g(slots, T{0}), sum_gx(slots, T{0});
            for_each([&](std::size_t k, std::size_t idx) {
                sum_g[k] += go[idx];
                sum_gx[k] += go[idx] * xhat[idx];
            });
            if (auto* gg = t.grad_target(gamma))
                for (std::size_t k = 0; k < slots; ++k) (*gg)[k] += sum_gx[k];
            if (auto* gb = t.grad_target(beta))
                for (std::size_t k = 0; k < slots; ++k) (*gb)[k] += sum_g[k];
            auto* gx = t.grad_target(x);
            if (!gx) return;
            const T* gam = gamma.value().raw();
            const T m = static_cast<T>(count);
            for_each([&](std::size_t k, std::size_t idx) {
                if (train)
                    (*gx)[idx] += gam[k] * inv_std[k] * (go[idx] - sum_g[k] / m - xhat[idx] * sum_gx[k] / m);
                else
                    (*gx)[idx] += gam[k] * inv_std[k] * go[idx];
            });
        });
}

/// Layer normalization over the last `norm_rank` axes. The affine parameters
/// have one entry per index of the first normalized axis (per channel for a
/// [C, H, W] map, per feature for a vector).
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, std::size_t norm_rank, T eps = T(1e-5)) {
    const Shape& s = x.shape();
    if (norm_rank == 0 || s.size() < norm_rank) throw ShapeError("layer_norm", s, "normalized rank exceeds tensor rank");
    if (x.value().size() == 0) throw ShapeError("layer_norm", s, "zero-element input");
    const std::size_t groups = leading_count(s, norm_rank);
    const std::size_t n = x.value().size() / groups;
    const std::size_t channels = s[s.size() - norm_rank];
    const std::size_t inner = n / channels;
    if (gamma.value().size() != channels || beta.value().size() != channels)
        throw ShapeError("layer_norm", s, gamma.shape(), "affine extent must equal the first normalized axis");

    Tensor<T> xhat(s), out(s);
    std::vector<T> inv_std(groups);
    const T* xv = x.value().raw();
    for (std::size_t gi = 0; gi < groups; ++gi) {
        const T* src = xv + gi * n;
        long double acc = 0, acc2 = 0;
        for (std::size_t i = 0; i < n; ++i) acc += src[i];
        const auto mu = static_cast<T>(acc / static_cast<long double>(n));
        for (std::size_t i = 0; i < n; ++i) acc2 += static_cast<long double>(src[i] - mu) * (src[i] - mu);
        inv_std[gi] = T{1} / std::sqrt(static_cast<T>(acc2 / static_cast<long double>(n)) + eps);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t c = i / inner;
            xhat[gi * n + i] = (src[i] - mu) * inv_std[gi];
            out[gi * n + i] = xhat[gi * n + i] * gamma.value()[c] + beta.value()[c];
        }
    }
    return x.tape().record(std::move(out), {x, gamma, beta},
        [x, gamma, beta, groups, n, inner, inv_std, xhat = std::move(xhat)](Tape<T>& t, const Tensor<T>& go) {
            auto* gg = t.grad_target(gamma);
            auto* gb = t.grad_target(beta);
            auto* gx = t.grad_target(x);
            std::vector<T> dxhat(n);
            for (std::size_t gi = 0; gi < groups; ++gi) {
                T sum_d = 0, sum_dx = 0;
                for (std::size_t i = 0; i < n; ++i) {
                    const std::size_t c = i / inner, idx = gi * n + i;
                    if (gg) (*gg)[c] += go[idx] * xhat[idx];
                    if (gb) (*gb)[c] += go[idx];
                    dxhat[i] = go[idx] * gamma.value()[c];
                    sum_d += dxhat[i];
                    sum_dx += dxhat[i] * xhat[idx];
                }
                if (!gx) continue;
                const T m = static_cast<T>(n);
                for (std::size_t i = 0; i < n; ++i) {
                    const std::size_t idx = gi * n + i;
                    (*gx)[idx] += inv_std[gi] * (dxhat[i] - sum_d / m - xhat[idx] * sum_dx / m);
                }
            }
        });
}

/// Dispatch by kind. Layer norm ignores running statistics and mode; it
/// normalizes [C, H, W] maps when the input rank is >= 3, vectors otherwise.
template <typename T>
Var<T> normalize(const Var<T>& x, NormKind kind, NormState<T>& state, NormMode mode) {
    Tape<T>& tape = x.tape();
    Var<T> g = tape.parameter(state.gamma);
    Var<T> b = tape.parameter(state.beta);
    if (kind == NormKind::batch_norm) return batch_norm(x, g, b, state, mode);
    return layer_norm(x, g, b, x.shape().size() >= 3 ? 3 : 1, state.eps);
}

}  // namespace equikernel
