#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "equikernel/conv.hpp"
#include "equikernel/norm.hpp"
#include "equikernel/ops.hpp"
#include "equikernel/pool.hpp"
#include "equikernel/reflect.hpp"
#include "equikernel/rotate.hpp"
#include "equikernel/scale.hpp"
#include "equikernel/tape.hpp"

namespace equikernel {

/// Network layout. Defaults are the S variant: one residual block per stage,
/// widths 32/64/128/256 (x2 with reflection), stages 2 and 3 downsampling.
struct BackboneConfig {
    std::array<std::size_t, 4> layers{1, 1, 1, 1};
    std::array<std::size_t, 4> widths{32, 64, 128, 256};
    std::array<std::size_t, 4> strides{1, 2, 2, 1};
    std::size_t parts = 16;
    double theta_limit_deg = 40.0;
    std::size_t reduction = 4;
    BranchMode branch_mode = BranchMode::plain;
    std::size_t embed_dim = 256;
    std::size_t num_classes = 100;
    std::size_t frame_h = 64;
    std::size_t frame_w = 44;
    bool audit_mode = false;
    bool use_reel = true;
    bool use_roel = true;
    bool use_sel = true;
    GroupPoolMode gpool_mode = GroupPoolMode::max;
    bool hp_add_mean = true;
    /// Negative control: deeper reflect layers flip kernels without swapping
    /// the input channel groups.
    bool break_equivariance = false;

    std::size_t stride(std::size_t stage) const { return audit_mode ? 1 : strides[stage]; }
    /// Channels a stage emits (2x the learned width with reflection; a plain
    /// baseline uses the same total so compute matches).
    std::size_t stage_out(std::size_t stage) const { return 2 * widths[stage]; }
    /// Channels of a stage after group pooling.
    std::size_t pooled(std::size_t stage) const { return use_reel ? widths[stage] : 2 * widths[stage]; }
    std::size_t branch_count() const { return 1 + (use_roel ? 1 : 0) + (use_sel ? 1 : 0); }
    std::size_t total_parts() const { return branch_count() * parts; }

    std::pair<std::size_t, std::size_t> stage_extent(std::size_t stage) const {
        std::size_t h = frame_h, w = frame_w;
        const ConvSpec s3 = ConvSpec::same(3);
        for (std::size_t i = 0; i <= stage; ++i) {
            ConvSpec s = s3;
            s.stride = stride(i);
            h = s.out_extent(h);
            w = s.out_extent(w);
        }
        return {h, w};
    }

    void validate() const {
        for (std::size_t i = 0; i < 4; ++i) {
            if (layers[i] == 0) throw std::invalid_argument("backbone.layers: every stage needs >= 1 block");
            if (widths[i] == 0) throw std::invalid_argument("backbone.widths: widths must be positive");
            if (strides[i] == 0) throw std::invalid_argument("backbone.strides: strides must be >= 1");
        }
        if (parts == 0) throw std::invalid_argument("backbone.parts: must be >= 1");
        const auto [h4, w4] = stage_extent(3);
        if (parts > h4) throw std::invalid_argument("backbone.parts: exceeds the stage-4 height " + std::to_string(h4));
        if (use_sel) {
            std::size_t c = 0;
            for (std::size_t i = 0; i < 4; ++i) c += pooled(i);
            if (reduction == 0 || c % reduction != 0)
                throw std::invalid_argument("sel.reduction_r: " + std::to_string(c) + " channels not divisible by " + std::to_string(reduction));
        }
        if (theta_limit_deg <= 0) throw std::invalid_argument("roel.theta_limit_deg: must be positive");
        if (embed_dim == 0 || num_classes == 0) throw std::invalid_argument("backbone.embed_dim: head dimensions must be positive");
        (void)w4;
    }
};

enum class ConvKind { lift, group, plain };

/// One convolution of the backbone as seen by both the builder and the
/// analytic parameter/MAC counter.
struct ConvPlan {
    std::string name;
    ConvKind kind;
    std::size_t c_in;
    std::size_t learned_out;  // rows of the stored weight
    std::size_t total_out;    // channels emitted
    ConvSpec spec;
    std::size_t in_h, in_w;

    std::size_t weight_count() const { return learned_out * c_in * spec.kernel * spec.kernel; }
    std::size_t norm_count() const { return 2 * learned_out; }
    std::size_t macs_per_frame() const { return conv2d_macs(c_in, total_out, in_h, in_w, spec); }
};

struct BlockPlan {
    ConvPlan conv1, conv2;
    std::optional<ConvPlan> shortcut;
};

struct BackbonePlan {
    ConvPlan stem;
    std::array<std::vector<BlockPlan>, 4> stages;
};

inline BackbonePlan make_plan(const BackboneConfig& cfg) {
    const ConvKind deep = cfg.use_reel ? ConvKind::group : ConvKind::plain;
    auto learned = [&](std::size_t stage) { return cfg.use_reel ? cfg.widths[stage] : cfg.stage_out(stage); };
    BackbonePlan plan;
    plan.stem = ConvPlan{"stem", cfg.use_reel ? ConvKind::lift : ConvKind::plain, 1, learned(0), cfg.stage_out(0),
                         ConvSpec::same(3), cfg.frame_h, cfg.frame_w};
    std::size_t c = cfg.stage_out(0), h = cfg.frame_h, w = cfg.frame_w;
    for (std::size_t s = 0; s < 4; ++s) {
        for (std::size_t b = 0; b < cfg.layers[s]; ++b) {
            const std::string name = "stage" + std::to_string(s + 1) + "." + std::to_string(b);
            const std::size_t stride = b == 0 ? cfg.stride(s) : 1;
            ConvSpec s1 = ConvSpec::same(3, stride);
            BlockPlan bp;
            bp.conv1 = ConvPlan{name + ".conv1", deep, c, learned(s), cfg.stage_out(s), s1, h, w};
            const std::size_t oh = s1.out_extent(h), ow = s1.out_extent(w);
            bp.conv2 = ConvPlan{name + ".conv2", deep, cfg.stage_out(s), learned(s), cfg.stage_out(s), ConvSpec::same(3), oh, ow};
            if (stride != 1 || c != cfg.stage_out(s))
                bp.shortcut = ConvPlan{name + ".shortcut", deep, c, learned(s), cfg.stage_out(s), ConvSpec{1, stride, 0, 1}, h, w};
            plan.stages[s].push_back(bp);
            c = cfg.stage_out(s);
            h = oh;
            w = ow;
        }
    }
    return plan;
}

/// Random initializers (Kaiming-normal convolutions, uniform linear maps).
template <typename T>
class Initializer {
public:
    explicit Initializer(std::uint64_t seed) : rng_(seed) {}

    Tensor<T> conv(const Shape& s) {
        const double fan_in = static_cast<double>(s[1] * s[2] * s[3]);
        std::normal_distribution<double> d(0.0, std::sqrt(2.0 / fan_in));
        return fill(s, d);
    }
    Tensor<T> linear(const Shape& s) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(s.back()));
        std::uniform_real_distribution<double> d(-bound, bound);
        return fill(s, d);
    }
    /// Xavier-uniform for [P, D_in, D_out] part-wise maps.
    Tensor<T> part_linear(const Shape& s) {
        const double bound = std::sqrt(6.0 / static_cast<double>(s[1] + s[2]));
        std::uniform_real_distribution<double> d(-bound, bound);
        return fill(s, d);
    }
    std::mt19937_64& rng() { return rng_; }

private:
    template <typename D>
    Tensor<T> fill(const Shape& s, D& dist) {
        Tensor<T> t(s);
        for (auto& v : t.data()) v = static_cast<T>(dist(rng_));
        return t;
    }
    std::mt19937_64 rng_;
};

template <typename T>
struct ConvLayer {
    ConvPlan plan;
    ReflectKernelBank<T> bank;
    NormState<T> bn;
};

template <typename T>
struct Block {
    ConvLayer<T> conv1, conv2;
    std::optional<ConvLayer<T>> shortcut;
};

enum class BranchKind { reflect, rotate, scale };

inline const char* branch_name(BranchKind b) {
    switch (b) {
        case BranchKind::reflect: return "reflect";
        case BranchKind::rotate: return "rotate";
        case BranchKind::scale: return "scale";
    }
    return "?";
}

/// Backbone, adaptive-rotate block, scale block and the part-wise head.
template <typename T>
struct GaitModel {
    BackboneConfig cfg;
    ConvLayer<T> stem;
    std::array<std::vector<Block<T>>, 4> stages;
    std::optional<RoELParams<T>> roel;
    std::optional<SELParams<T>> sel;
    std::vector<BranchKind> branches;
    std::vector<Parameter<T>> part_fc;  // per branch: [P, D_branch, E]
    NormState<T> neck;                  // [branches * P * E]
    Parameter<T> classifier;            // [branches * P, E, K]

    GaitModel() = default;
    GaitModel(const GaitModel&) = delete;
    GaitModel& operator=(const GaitModel&) = delete;
    GaitModel(GaitModel&&) = default;
    GaitModel& operator=(GaitModel&&) = default;

    std::vector<ConvLayer<T>*> conv_layers() {
        std::vector<ConvLayer<T>*> out{&stem};
        for (auto& st : stages)
            for (auto& b : st) {
                out.push_back(&b.conv1);
                out.push_back(&b.conv2);
                if (b.shortcut) out.push_back(&*b.shortcut);
            }
        return out;
    }

    std::vector<Parameter<T>*> backbone_parameters() {
        std::vector<Parameter<T>*> out;
        for (auto* l : conv_layers()) {
            out.push_back(&l->bank.weight);
            out.push_back(&l->bn.gamma);
            out.push_back(&l->bn.beta);
        }
        if (roel)
            for (auto* p : roel->parameters()) out.push_back(p);
        if (sel)
            for (auto* p : sel->parameters()) out.push_back(p);
        return out;
    }

    std::vector<Parameter<T>*> head_parameters() {
        std::vector<Parameter<T>*> out;
        for (auto& p : part_fc) out.push_back(&p);
        out.push_back(&neck.gamma);
        out.push_back(&neck.beta);
        out.push_back(&classifier);
        return out;
    }

    std::vector<Parameter<T>*> parameters() {
        auto out = backbone_parameters();
        for (auto* p : head_parameters()) out.push_back(p);
        return out;
    }

    std::vector<std::pair<std::string, NormState<T>*>> norms() {
        std::vector<std::pair<std::string, NormState<T>*>> out;
        for (auto* l : conv_layers()) out.emplace_back(l->plan.name + ".bn", &l->bn);
        if (roel) out.emplace_back("roel.head_norm", &roel->head_norm);
        if (sel) {
            const char* names[] = {"sel.reduce.bn", "sel.expand.bn", "sel.gate1.bn", "sel.gate2.bn", "sel.gate3.bn", "sel.gate4.bn"};
            auto ns = sel->norms();
            for (std::size_t i = 0; i < ns.size(); ++i) out.emplace_back(names[i], ns[i]);
        }
        out.emplace_back("head.neck", &neck);
        return out;
    }

    static std::size_t count(const std::vector<Parameter<T>*>& ps) {
        std::size_t n = 0;
        for (auto* p : ps) n += p->count();
        return n;
    }
};

namespace detail {

template <typename T>
ConvLayer<T> build_conv(const ConvPlan& plan, Initializer<T>& init) {
    ConvLayer<T> l;
    l.plan = plan;
    l.bank.weight = Parameter<T>(plan.name + ".weight", init.conv(Shape{plan.learned_out, plan.c_in, plan.spec.kernel, plan.spec.kernel}));
    l.bn = NormState<T>(plan.name + ".bn", plan.learned_out, plan.kind == ConvKind::plain ? 1 : 2);
    return l;
}

}  // namespace detail

template <typename T>
GaitModel<T> make_model(const BackboneConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Initializer<T> init(seed);
    GaitModel<T> m;
    m.cfg = cfg;
    const BackbonePlan plan = make_plan(cfg);
    m.stem = detail::build_conv(plan.stem, init);
    for (std::size_t s = 0; s < 4; ++s)
        for (const auto& bp : plan.stages[s]) {
            Block<T> b;
            b.conv1 = detail::build_conv(bp.conv1, init);
            b.conv2 = detail::build_conv(bp.conv2, init);
            if (bp.shortcut) b.shortcut = detail::build_conv(*bp.shortcut, init);
            m.stages[s].push_back(std::move(b));
        }
    auto conv_init = [&](const Shape& s) { return init.conv(s); };
    auto lin_init = [&](const Shape& s) { return init.linear(s); };
    const std::size_t c4 = cfg.pooled(3);
    if (cfg.use_roel) m.roel = make_roel_params<T>("roel", c4, cfg.theta_limit_deg, cfg.use_reel, conv_init);
    if (cfg.use_sel)
        m.sel = make_sel_params<T>("sel", {cfg.pooled(0), cfg.pooled(1), cfg.pooled(2), cfg.pooled(3)}, cfg.reduction,
                                   cfg.branch_mode, cfg.use_reel, conv_init, lin_init);

    m.branches.push_back(BranchKind::reflect);
    if (cfg.use_roel) m.branches.push_back(BranchKind::rotate);
    if (cfg.use_sel) m.branches.push_back(BranchKind::scale);
    for (BranchKind b : m.branches) {
        const std::size_t d = b == BranchKind::scale ? m.sel->total_channels() : c4;
        m.part_fc.emplace_back(std::string("head.fc.") + branch_name(b), init.part_linear(Shape{cfg.parts, d, cfg.embed_dim}));
    }
    const std::size_t np = cfg.total_parts();
    m.neck = NormState<T>("head.neck", np * cfg.embed_dim);
    m.classifier = Parameter<T>("head.classifier", Tensor<T>({np, cfg.embed_dim, cfg.num_classes}));
    return m;
}

/// Convolution + normalization of one backbone layer (no activation).
template <typename T>
Var<T> conv_bn(const Var<T>& x, ConvLayer<T>& l, NormMode mode, bool break_swap) {
    Var<T> y;
    switch (l.plan.kind) {
        case ConvKind::lift: y = lift_conv(x, l.bank, l.plan.spec); break;
        case ConvKind::group: y = group_conv(x, l.bank, l.plan.spec, !break_swap); break;
        case ConvKind::plain: y = conv2d(x, x.tape().parameter(l.bank.weight), l.plan.spec); break;
    }
    return normalize(y, NormKind::batch_norm, l.bn, mode);
}

template <typename T>
Var<T> residual_block(const Var<T>& x, Block<T>& b, NormMode mode, bool break_swap) {
    Var<T> y = relu(conv_bn(x, b.conv1, mode, break_swap));
    y = conv_bn(y, b.conv2, mode, break_swap);
    Var<T> sc = b.shortcut ? conv_bn(x, *b.shortcut, mode, break_swap) : x;
    return relu(add(y, sc));
}

/// Everything the backbone produces for a batch of sequences.
template <typename T>
struct BackboneOutput {
    Var<T> stem;                          // [B, T, C0x2, H, W]
    std::array<Var<T>, 4> stage_maps;     // [B, T, Cx2, H_i, W_i]
    std::array<Var<T>, 4> pooled_maps;    // group pooled: [B, T, C, H_i, W_i]
    MultiScaleTaps<T> taps;               // temporally pooled [B, C_i, H_i, W_i]
    Var<T> f4;                            // [B, C4, h, w]
    Var<T> f4_rot;                        // [B, C4, h, w] (== f4 without the rotate block)
    std::optional<AngleConfidenceVars<T>> angle;
    std::array<Var<T>, 4> scale_outputs;  // gated outputs, SEL only
    std::vector<Var<T>> branch_maps;      // per branch: [B, C_b, h, w]
};

/// Lifts [T, H, W] or [B, T, H, W] silhouettes to [B, T, 1, H, W].
template <typename T>
Var<T> as_batch_input(Tape<T>& tape, const Tensor<T>& frames, const BackboneConfig& cfg) {
    const Shape& s = frames.shape();
    if (s.size() != 3 && s.size() != 4) throw ShapeError("forward_backbone", s, "expects [T,H,W] or [B,T,H,W] frames");
    if (s[s.size() - 2] != cfg.frame_h || s[s.size() - 1] != cfg.frame_w)
        throw ShapeError("forward_backbone", s, Shape{cfg.frame_h, cfg.frame_w}, "frame size differs from the configured resolution");
    const std::size_t b = s.size() == 4 ? s[0] : 1, t = s[s.size() - 3];
    if (t == 0) throw ShapeError("forward_backbone", s, "empty sequence");
    return tape.constant(frames.reshaped(Shape{b, t, 1, cfg.frame_h, cfg.frame_w}));
}

template <typename T>
BackboneOutput<T> forward_backbone(const Var<T>& input, GaitModel<T>& m, NormMode mode) {
    const BackboneConfig& cfg = m.cfg;
    const bool brk = cfg.break_equivariance;
    BackboneOutput<T> out;
    Var<T> x = relu(conv_bn(input, m.stem, mode, brk));
    out.stem = x;
    std::array<Var<T>, 4> tp;
    for (std::size_t s = 0; s < 4; ++s) {
        for (auto& b : m.stages[s]) x = residual_block(x, b, mode, brk);
        out.stage_maps[s] = x;
        out.pooled_maps[s] = cfg.use_reel ? group_pool(x, cfg.gpool_mode) : x;
        tp[s] = temporal_max(out.pooled_maps[s]);
    }
    out.f4 = tp[3];
    out.f4_rot = out.f4;
    if (m.roel) {
        out.angle = predict_angle_confidence(out.f4, *m.roel);
        out.f4_rot = adaptive_rotate_conv(out.f4, *m.roel, *out.angle);
    }
    out.taps = MultiScaleTaps<T>{tp[0], tp[1], tp[2], out.f4_rot};
    out.branch_maps.push_back(out.f4);
    if (m.roel) out.branch_maps.push_back(out.f4_rot);
    if (m.sel) {
        out.scale_outputs = scale_equivariance(out.taps, *m.sel, mode);
        out.branch_maps.push_back(concat<T>({out.scale_outputs.begin(), out.scale_outputs.end()}, -3));
    }
    return out;
}

/// Head outputs: embeddings (used for retrieval), BNNeck features and logits.
template <typename T>
struct HeadOutput {
    std::vector<Var<T>> parts;  // per branch [B, P, C_b] after Horizontal Pooling
    Var<T> embeddings;          // [B, nP, E]
    Var<T> neck;                // [B, nP, E]
    Var<T> logits;              // [B, nP, K]
};

/// Separate FC per part, BNNeck, bias-free part-wise classifier.
template <typename T>
HeadOutput<T> head_forward(const std::vector<Var<T>>& branch_maps, GaitModel<T>& m, NormMode mode) {
    if (branch_maps.size() != m.part_fc.size())
        throw std::invalid_argument("head_forward: " + std::to_string(branch_maps.size()) + " branch maps for " +
                                    std::to_string(m.part_fc.size()) + " branches");
    Tape<T>& tape = branch_maps[0].tape();
    HeadOutput<T> out;
    std::vector<Var<T>> embs;
    for (std::size_t i = 0; i < branch_maps.size(); ++i) {
        Var<T> parts = horizontal_pool(branch_maps[i], m.cfg.parts, m.cfg.hp_add_mean);  // [B, P, C]
        if (parts.shape().size() != 3 || parts.dim(2) != m.part_fc[i].value.dim(1))
            throw ShapeError("head_forward", parts.shape(), m.part_fc[i].value.shape(), "part dimension differs from the head");
        out.parts.push_back(parts);
        Var<T> e = bmm(swap_leading_axes(parts), tape.parameter(m.part_fc[i]));  // [P, B, E]
        embs.push_back(swap_leading_axes(e));
    }
    out.embeddings = embs.size() == 1 ? embs[0] : concat(embs, 1);
    const std::size_t b = out.embeddings.dim(0), np = out.embeddings.dim(1), e = out.embeddings.dim(2);
    Var<T> flat = reshape(out.embeddings, Shape{b, np * e});
    out.neck = reshape(normalize(flat, NormKind::batch_norm, m.neck, mode), Shape{b, np, e});
    out.logits = swap_leading_axes(bmm(swap_leading_axes(out.neck), tape.parameter(m.classifier)));
    return out;
}

template <typename T>
struct ForwardResult {
    BackboneOutput<T> backbone;
    HeadOutput<T> head;
};

template <typename T>
ForwardResult<T> forward(Tape<T>& tape, const Tensor<T>& frames, GaitModel<T>& m, NormMode mode) {
    Var<T> input = as_batch_input(tape, frames, m.cfg);
    ForwardResult<T> r{forward_backbone(input, m, mode), {}};
    r.head = head_forward(r.backbone.branch_maps, m, mode);
    return r;
}

/// Retrieval embedding of each sequence: all part embeddings concatenated.
template <typename T>
Tensor<T> flat_embeddings(const HeadOutput<T>& h) {
    const auto& e = h.embeddings.value();
    return e.reshaped(Shape{e.dim(0), e.dim(1) * e.dim(2)});
}

}  // namespace equikernel
