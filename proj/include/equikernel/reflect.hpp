#pragma once

#include <optional>
#include <string>
#include <vector>

#include "equikernel/conv.hpp"
#include "equikernel/ops.hpp"
#include "equikernel/tape.hpp"

namespace equikernel {

// Reflect equivariance for the order-2 group {identity, width mirror}.
// A grouped feature map stores 2C channels: [0, C) regular, [C, 2C) reflected.
// Under a mirrored input every grouped layer output satisfies
//     F(mirror(X)) = swap(mirror(F(X)))
// and the Group Pool max over (i, i + C) removes the swap.

enum class GroupPoolMode { max, mean };

namespace detail {

/// out[i] = in[index[i]]; the gradient scatters back.
template <typename T>
Var<T> gather(const Var<T>& x, Shape out_shape, std::vector<std::size_t> index) {
    Tensor<T> out(std::move(out_shape));
    for (std::size_t i = 0; i < index.size(); ++i) out[i] = x.value()[index[i]];
    return x.tape().record(std::move(out), {x}, [x, index = std::move(index)](Tape<T>& t, const Tensor<T>& go) {
        if (auto* gx = t.grad_target(x))
            for (std::size_t i = 0; i < index.size(); ++i) (*gx)[index[i]] += go[i];
    });
}

inline std::vector<std::size_t> reflect_kernel_index(const Shape& s, bool grouped_input) {
    if (s.size() != 4 || s[2] != s[3] || s[3] % 2 == 0) throw ShapeError("reflect_kernel", s, "expects [C_out,C_in,k,k] with odd k");
    const std::size_t co = s[0], ci = s[1], k = s[3];
    if (grouped_input && ci % 2 != 0) throw ShapeError("reflect_kernel", s, "grouped input needs an even input-channel extent");
    const std::size_t half = ci / 2;
    std::vector<std::size_t> idx(element_count(s));
    std::size_t n = 0;
    for (std::size_t o = 0; o < co; ++o)
        for (std::size_t c = 0; c < ci; ++c) {
            const std::size_t src_c = grouped_input ? (c < half ? c + half : c - half) : c;
            for (std::size_t i = 0; i < k; ++i)
                for (std::size_t j = 0; j < k; ++j) idx[n++] = ((o * ci + src_c) * k + i) * k + (k - 1 - j);
        }
    return idx;
}

inline std::vector<std::size_t> swap_groups_index(const Shape& s) {
    if (s.size() < 3 || s[s.size() - 3] % 2 != 0) throw ShapeError("swap_groups", s, "channel extent must be even");
    const std::size_t c = s[s.size() - 3], half = c / 2, plane = s[s.size() - 2] * s[s.size() - 1];
    const std::size_t outer = leading_count(s, 3);
    std::vector<std::size_t> idx(element_count(s));
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t src = ch < half ? ch + half : ch - half;
            for (std::size_t p = 0; p < plane; ++p) idx[(o * c + ch) * plane + p] = (o * c + src) * plane + p;
        }
    return idx;
}

}  // namespace detail

/// Mirrors every k x k slice along width; with `grouped_input` the regular and
/// reflected input-channel halves are also exchanged, which deeper layers
/// need for the swap relation to hold.
template <typename T>
Var<T> reflect_kernel(const Var<T>& w, bool grouped_input) {
    return detail::gather(w, w.shape(), detail::reflect_kernel_index(w.shape(), grouped_input));
}

template <typename T>
Tensor<T> reflect_kernel(const Tensor<T>& w, bool grouped_input) {
    const auto idx = detail::reflect_kernel_index(w.shape(), grouped_input);
    Tensor<T> out(w.shape());
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = w[idx[i]];
    return out;
}

/// Exchanges the regular and reflected channel halves of a grouped map.
template <typename T>
Var<T> swap_groups(const Var<T>& x) {
    return detail::gather(x, x.shape(), detail::swap_groups_index(x.shape()));
}

template <typename T>
Tensor<T> swap_groups(const Tensor<T>& x) {
    const auto idx = detail::swap_groups_index(x.shape());
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = x[idx[i]];
    return out;
}

/// Learned weights of a ReflectConv. The reflected half of the output is
/// derived from `weight` on every call, so storage equals that of a plain
/// convolution with half as many output channels.
template <typename T>
struct ReflectKernelBank {
    Parameter<T> weight;  // [C_out, C_in (grouped: 2 * C_in), k, k]
    std::optional<Parameter<T>> bias;

    std::size_t out_channels() const { return weight.value.dim(0); }
    std::size_t parameter_count() const { return weight.count() + (bias ? bias->count() : 0); }
};

namespace detail {

template <typename T>
Var<T> reflect_pair_conv(const Var<T>& x, ReflectKernelBank<T>& bank, const ConvSpec& spec, bool grouped, bool swap) {
    Tape<T>& tape = x.tape();
    Var<T> w = tape.parameter(bank.weight);
    Var<T> w_ref = grouped && swap ? reflect_kernel(w, true) : reflect_kernel(w, false);
    Var<T> w_all = concat<T>({w, w_ref}, 0);
    std::optional<Var<T>> b;
    if (bank.bias) {
        Var<T> bv = tape.parameter(*bank.bias);
        b = concat<T>({bv, bv}, 0);
    }
    return conv2d(x, w_all, b, spec);
}

}  // namespace detail

/// Lifting layer: plain [.., C_in, H, W] input -> grouped [.., 2 C_out, H', W'].
template <typename T>
Var<T> lift_conv(const Var<T>& x, ReflectKernelBank<T>& bank, const ConvSpec& spec) {
    return detail::reflect_pair_conv(x, bank, spec, false, false);
}

/// Group convolution on a grouped map. `swap_input_groups = false` reproduces
/// the flip-only construction, which is not equivariant past the first layer;
/// it exists for negative-control audits.
template <typename T>
Var<T> group_conv(const Var<T>& x, ReflectKernelBank<T>& bank, const ConvSpec& spec, bool swap_input_groups = true) {
    if (x.shape().size() < 3 || x.dim(-3) % 2 != 0) throw ShapeError("group_conv", x.shape(), "grouped input needs an even channel extent");
    return detail::reflect_pair_conv(x, bank, spec, true, swap_input_groups);
}

/// Collapses pairs (i, i + C) of a grouped map: 2C -> C channels.
template <typename T>
Var<T> group_pool(const Var<T>& x, GroupPoolMode mode = GroupPoolMode::max) {
    const Shape& s = x.shape();
    if (s.size() < 3 || s[s.size() - 3] % 2 != 0) throw ShapeError("group_pool", s, "channel extent must be even");
    const std::size_t half = s[s.size() - 3] / 2;
    Var<T> a = slice(x, -3, 0, half);
    Var<T> b = slice(x, -3, half, 2 * half);
    if (mode == GroupPoolMode::max) return maximum(a, b);
    return scale(add(a, b), T(0.5));
}

}  // namespace equikernel
