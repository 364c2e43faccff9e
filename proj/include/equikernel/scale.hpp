#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "equikernel/conv.hpp"
#include "equikernel/norm.hpp"
#include "equikernel/ops.hpp"
#include "equikernel/reflect.hpp"
#include "equikernel/resize.hpp"
#include "equikernel/rotate.hpp"
#include "equikernel/tape.hpp"

namespace equikernel {

enum class BranchMode { plain, dilated };

/// Group-pooled, temporally pooled stage outputs feeding the scale block,
/// each [B, C_i, H_i, W_i]. `f4_rot` fixes the target resolution.
template <typename T>
struct MultiScaleTaps {
    Var<T> f1, f2, f3, f4_rot;
    std::array<Var<T>, 4> all() const { return {f1, f2, f3, f4_rot}; }
};

template <typename T>
struct SELParams {
    std::array<std::size_t, 4> stage_channels{32, 64, 128, 256};
    std::size_t reduction = 4;
    BranchMode branch_mode = BranchMode::plain;
    bool reflect_pair = true;

    Parameter<T> reduce_w;  // [D, C, 1, 1]
    NormState<T> reduce_bn;
    Parameter<T> s2_w, s2_b;  // [D, D, 3, 3]
    Parameter<T> s3_w, s3_b;  // [D, D, 5, 5] (dilated mode: 3x3, dilation 2)
    Parameter<T> wq, bq, wk, bk, wv, bv;  // [D, D]
    Parameter<T> ffn1_w, ffn1_b;  // [4D, D]
    Parameter<T> ffn2_w, ffn2_b;  // [D, 4D]
    Parameter<T> expand_w;  // [C, D, 1, 1], zero at init
    NormState<T> expand_bn;
    std::array<Parameter<T>, 4> gate_w;  // [C_i, C_i, 1, 1], zero at init
    std::array<NormState<T>, 4> gate_bn;

    std::size_t total_channels() const {
        return stage_channels[0] + stage_channels[1] + stage_channels[2] + stage_channels[3];
    }
    std::size_t reduced_channels() const { return total_channels() / reduction; }

    std::vector<Parameter<T>*> parameters() {
        std::vector<Parameter<T>*> out{&reduce_w, &reduce_bn.gamma, &reduce_bn.beta, &s2_w, &s2_b, &s3_w, &s3_b,
                                       &wq, &bq, &wk, &bk, &wv, &bv, &ffn1_w, &ffn1_b, &ffn2_w, &ffn2_b,
                                       &expand_w, &expand_bn.gamma, &expand_bn.beta};
        for (std::size_t i = 0; i < 4; ++i) {
            out.push_back(&gate_w[i]);
            out.push_back(&gate_bn[i].gamma);
            out.push_back(&gate_bn[i].beta);
        }
        return out;
    }
    std::vector<NormState<T>*> norms() {
        return {&reduce_bn, &expand_bn, &gate_bn[0], &gate_bn[1], &gate_bn[2], &gate_bn[3]};
    }
    std::size_t parameter_count() {
        std::size_t n = 0;
        for (auto* p : parameters()) n += p->count();
        return n;
    }
};

/// Builds SEL parameters. `init_conv(shape)` and `init_linear(shape)` supply
/// random tensors; expand and gate convolutions start at zero so the block is
/// the identity on its taps.
template <typename T>
SELParams<T> make_sel_params(const std::string& prefix, std::array<std::size_t, 4> channels, std::size_t reduction,
                             BranchMode mode, bool reflect_pair, auto&& init_conv, auto&& init_linear) {
    SELParams<T> p;
    p.stage_channels = channels;
    p.reduction = reduction;
    p.branch_mode = mode;
    p.reflect_pair = reflect_pair;
    const std::size_t c = p.total_channels();
    if (reduction == 0 || c % reduction != 0)
        throw std::invalid_argument("sel.reduction_r: " + std::to_string(c) + " channels not divisible by " + std::to_string(reduction));
    const std::size_t d = c / reduction;
    const std::size_t k3 = mode == BranchMode::plain ? 5 : 3;
    p.reduce_w = Parameter<T>(prefix + ".reduce.weight", init_conv(Shape{d, c, 1, 1}));
    p.reduce_bn = NormState<T>(prefix + ".reduce.bn", d);
    p.s2_w = Parameter<T>(prefix + ".s2.weight", init_conv(Shape{d, d, 3, 3}));
    p.s2_b = Parameter<T>(prefix + ".s2.bias", Tensor<T>({d}));
    p.s3_w = Parameter<T>(prefix + ".s3.weight", init_conv(Shape{d, d, k3, k3}));
    p.s3_b = Parameter<T>(prefix + ".s3.bias", Tensor<T>({d}));
    p.wq = Parameter<T>(prefix + ".attn.wq", init_linear(Shape{d, d}));
    p.bq = Parameter<T>(prefix + ".attn.bq", Tensor<T>({d}));
    p.wk = Parameter<T>(prefix + ".attn.wk", init_linear(Shape{d, d}));
    p.bk = Parameter<T>(prefix + ".attn.bk", Tensor<T>({d}));
    p.wv = Parameter<T>(prefix + ".attn.wv", init_linear(Shape{d, d}));
    p.bv = Parameter<T>(prefix + ".attn.bv", Tensor<T>({d}));
    p.ffn1_w = Parameter<T>(prefix + ".ffn.w1", init_linear(Shape{4 * d, d}));
    p.ffn1_b = Parameter<T>(prefix + ".ffn.b1", Tensor<T>({4 * d}));
    p.ffn2_w = Parameter<T>(prefix + ".ffn.w2", init_linear(Shape{d, 4 * d}));
    p.ffn2_b = Parameter<T>(prefix + ".ffn.b2", Tensor<T>({d}));
    p.expand_w = Parameter<T>(prefix + ".expand.weight", Tensor<T>({c, d, 1, 1}));
    p.expand_bn = NormState<T>(prefix + ".expand.bn", c);
    for (std::size_t i = 0; i < 4; ++i) {
        const std::string g = prefix + ".gate" + std::to_string(i + 1);
        p.gate_w[i] = Parameter<T>(g + ".weight", Tensor<T>({channels[i], channels[i], 1, 1}));
        p.gate_bn[i] = NormState<T>(g + ".bn", channels[i]);
    }
    return p;
}

/// Resizes f1 and f2 to the f4_rot grid and concatenates all taps on channels.
template <typename T>
Var<T> assemble_multiscale(const MultiScaleTaps<T>& taps, const std::array<std::size_t, 4>& channels) {
    const auto parts = taps.all();
    const std::size_t h = taps.f4_rot.dim(-2), w = taps.f4_rot.dim(-1);
    std::vector<Var<T>> resized;
    for (std::size_t i = 0; i < 4; ++i) {
        const Var<T>& f = parts[i];
        if (f.shape().size() != taps.f4_rot.shape().size() || f.dim(-3) != channels[i])
            throw ShapeError("assemble_multiscale", f.shape(), taps.f4_rot.shape(), "tap " + std::to_string(i + 1) + " has the wrong channel extent");
        resized.push_back(f.dim(-2) == h && f.dim(-1) == w ? f : bilinear_resize(f, h, w));
    }
    return concat(resized, -3);
}

/// ReLU(BN(Conv1x1 C -> C/r)).
template <typename T>
Var<T> cross_channel_reduce(const Var<T>& f_init, SELParams<T>& p, NormMode mode) {
    if (f_init.dim(-3) != p.total_channels())
        throw ShapeError("cross_channel_reduce", f_init.shape(), p.reduce_w.value.shape(), "channel extent must equal C1+C2+C3+C4");
    Tape<T>& tape = f_init.tape();
    Var<T> y = conv2d(f_init, tape.parameter(p.reduce_w), ConvSpec{1, 1, 0, 1});
    return relu(normalize(y, NormKind::batch_norm, p.reduce_bn, mode));
}

/// Attention weights and output of the cross-scale step, kept for inspection.
template <typename T>
struct AttentionTrace {
    Var<T> weights;  // [B, L, L]
    Var<T> attended; // [B, L, D], before the FFN
};

/// Queries from the identity branch, keys from the 3x3 branch and values from
/// the 5x5 (or dilated) branch; single-head scaled dot-product attention over
/// the flattened grid followed by a position-wise FFN.
template <typename T>
Var<T> cross_scale_attention(const Var<T>& f_c, SELParams<T>& p, AttentionTrace<T>* trace = nullptr) {
    Tape<T>& tape = f_c.tape();
    const bool batched = f_c.shape().size() == 4;
    Var<T> x = batched ? f_c : reshape(f_c, Shape{1, f_c.dim(0), f_c.dim(1), f_c.dim(2)});
    const std::size_t b = x.dim(0), d = x.dim(1), h = x.dim(2), w = x.dim(3), l = h * w;
    if (d != p.reduced_channels()) throw ShapeError("cross_scale_attention", x.shape(), "channel extent must equal C/r");

    const ConvSpec spec2 = ConvSpec::same(3);
    const ConvSpec spec3 = p.branch_mode == BranchMode::plain ? ConvSpec::same(5) : ConvSpec::same(3, 1, 2);
    auto branch = [&](Parameter<T>& wp, Parameter<T>& bp, const ConvSpec& spec) {
        Var<T> wv = tape.parameter(wp);
        Var<T> bv = tape.parameter(bp);
        if (!p.reflect_pair) return conv2d(x, wv, bv, spec);
        return group_pool(conv2d(x, concat<T>({wv, reflect_kernel(wv, false)}, 0), concat<T>({bv, bv}, 0), spec));
    };
    auto tokens = [&](const Var<T>& m) { return transpose_last2(reshape(m, Shape{b, d, l})); };

    Var<T> s1 = tokens(x);
    Var<T> s2 = tokens(branch(p.s2_w, p.s2_b, spec2));
    Var<T> s3 = tokens(branch(p.s3_w, p.s3_b, spec3));
    Var<T> q = linear(s1, tape.parameter(p.wq), tape.parameter(p.bq));
    Var<T> k = linear(s2, tape.parameter(p.wk), tape.parameter(p.bk));
    Var<T> v = linear(s3, tape.parameter(p.wv), tape.parameter(p.bv));
    Var<T> attn = softmax(scale(bmm(q, k, true), T{1} / std::sqrt(static_cast<T>(d))));
    Var<T> o = bmm(attn, v);
    if (trace) *trace = {attn, o};
    Var<T> f = linear(relu(linear(o, tape.parameter(p.ffn1_w), tape.parameter(p.ffn1_b))), tape.parameter(p.ffn2_w),
                      tape.parameter(p.ffn2_b));
    Var<T> y = reshape(transpose_last2(f), Shape{b, d, h, w});
    return batched ? y : reshape(y, f_c.shape());
}

/// Expands C/r -> C, splits per stage and applies the gated residual
/// out_i = sigmoid(BN(Conv1x1_i(split_i))) * split_i + tap_i, where tap_i is
/// the stage feature at the f4_rot resolution.
template <typename T>
std::array<Var<T>, 4> gate_and_split(const Var<T>& f_s, const std::array<Var<T>, 4>& resized_taps, SELParams<T>& p, NormMode mode) {
    Tape<T>& tape = f_s.tape();
    Var<T> e = conv2d(f_s, tape.parameter(p.expand_w), ConvSpec{1, 1, 0, 1});
    e = relu(normalize(e, NormKind::batch_norm, p.expand_bn, mode));
    std::size_t total = 0;
    for (std::size_t i = 0; i < 4; ++i) total += p.stage_channels[i];
    if (e.dim(-3) != total) throw ShapeError("gate_and_split", e.shape(), "channel sum mismatch");
    std::array<Var<T>, 4> out;
    std::size_t off = 0;
    for (std::size_t i = 0; i < 4; ++i) {
        const std::size_t ci = p.stage_channels[i];
        Var<T> split = slice(e, -3, off, off + ci);
        off += ci;
        if (resized_taps[i].shape() != split.shape())
            throw ShapeError("gate_and_split", resized_taps[i].shape(), split.shape(), "tap does not match split");
        Var<T> g = conv2d(split, tape.parameter(p.gate_w[i]), ConvSpec{1, 1, 0, 1});
        g = sigmoid(normalize(g, NormKind::batch_norm, p.gate_bn[i], mode));
        out[i] = add(mul(g, split), resized_taps[i]);
    }
    return out;
}

/// Full scale block: taps -> four gated outputs at the f4_rot resolution.
template <typename T>
std::array<Var<T>, 4> scale_equivariance(const MultiScaleTaps<T>& taps, SELParams<T>& p, NormMode mode) {
    Var<T> f_init = assemble_multiscale(taps, p.stage_channels);
    std::array<Var<T>, 4> resized;
    std::size_t off = 0;
    for (std::size_t i = 0; i < 4; ++i) {
        resized[i] = slice(f_init, -3, off, off + p.stage_channels[i]);
        off += p.stage_channels[i];
    }
    Var<T> f_c = cross_channel_reduce(f_init, p, mode);
    Var<T> f_s = cross_scale_attention(f_c, p);
    return gate_and_split(f_s, resized, p, mode);
}

}  // namespace equikernel
