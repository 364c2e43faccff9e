#pragma once

#include <string>
#include <vector>

#include "equikernel/backbone.hpp"

namespace equikernel {

struct ModuleCost {
    std::string module;
    std::size_t params = 0;
    double macs = 0;  // multiply-accumulates for the whole sequence
};

struct CostReport {
    std::vector<ModuleCost> rows;
    std::size_t total_params = 0;
    double total_macs = 0;

    const ModuleCost* find(const std::string& name) const {
        for (const auto& r : rows)
            if (r.module == name) return &r;
        return nullptr;
    }
};

/// Analytic parameter count and MAC estimate of the backbone (head excluded).
/// Convolution stages cost per frame times `frames`; the rotate and scale
/// blocks run once per sequence after temporal pooling.
inline CostReport count_params_flops(const BackboneConfig& cfg, std::size_t frames = 30) {
    cfg.validate();
    const BackbonePlan plan = make_plan(cfg);
    const double t = static_cast<double>(frames);
    CostReport rep;
    auto add_conv = [&](ModuleCost& m, const ConvPlan& c) {
        m.params += c.weight_count() + c.norm_count();
        m.macs += t * static_cast<double>(c.macs_per_frame());
    };
    ModuleCost stem{"stem"};
    add_conv(stem, plan.stem);
    rep.rows.push_back(stem);
    for (std::size_t s = 0; s < 4; ++s) {
        ModuleCost m{"stage" + std::to_string(s + 1)};
        for (const auto& b : plan.stages[s]) {
            add_conv(m, b.conv1);
            add_conv(m, b.conv2);
            if (b.shortcut) add_conv(m, *b.shortcut);
        }
        rep.rows.push_back(m);
    }
    const auto [h, w] = cfg.stage_extent(3);
    const double hw = static_cast<double>(h * w);
    const double pair = cfg.use_reel ? 2.0 : 1.0;
    if (cfg.use_roel) {
        const std::size_t c = cfg.pooled(3);
        ModuleCost m{"roel"};
        m.params = 2 * c * c * 9 + 2 * c + 2 * (c + 1);
        m.macs = 2 * pair * static_cast<double>(c * c * 9) * hw + 2 * static_cast<double>(c);
        rep.rows.push_back(m);
    }
    if (cfg.use_sel) {
        const std::array<std::size_t, 4> ch{cfg.pooled(0), cfg.pooled(1), cfg.pooled(2), cfg.pooled(3)};
        const std::size_t c = ch[0] + ch[1] + ch[2] + ch[3];
        const std::size_t d = c / cfg.reduction;
        const std::size_t k3 = cfg.branch_mode == BranchMode::plain ? 5 : 3;
        ModuleCost m{"sel"};
        std::size_t gates = 0;
        for (std::size_t ci : ch) gates += ci * ci + 2 * ci;
        m.params = (c * d + 2 * d)                // reduce + BN
                   + (d * d * 9 + d)              // s2
                   + (d * d * k3 * k3 + d)        // s3
                   + 3 * (d * d + d)              // q, k, v
                   + (4 * d * d + 4 * d)          // FFN in
                   + (4 * d * d + d)              // FFN out
                   + (c * d + 2 * c)              // expand + BN
                   + gates;
        const double L = hw, dd = static_cast<double>(d), cc = static_cast<double>(c);
        double gate_macs = 0;
        for (std::size_t ci : ch) gate_macs += static_cast<double>(ci * ci) * L;
        m.macs = cc * dd * L + pair * dd * dd * (9.0 + static_cast<double>(k3 * k3)) * L + 3 * dd * dd * L + 2 * L * L * dd +
                 8 * dd * dd * L + cc * dd * L + gate_macs;
        rep.rows.push_back(m);
    }
    for (const auto& r : rep.rows) {
        rep.total_params += r.params;
        rep.total_macs += r.macs;
    }
    return rep;
}

/// The Table VII style comparison: regular-conv baseline vs the reflect variant.
inline BackboneConfig baseline_config(BackboneConfig cfg) {
    cfg.use_reel = cfg.use_roel = cfg.use_sel = false;
    return cfg;
}

inline BackboneConfig reflect_only_config(BackboneConfig cfg) {
    cfg.use_reel = true;
    cfg.use_roel = cfg.use_sel = false;
    return cfg;
}

struct ShapeRow {
    std::string layer;
    Shape shape;  // without the batch axis
};

/// Output shape of every architecture row for one sequence [T, H, W]
/// (eval mode). HP and Head report 1 x (parts of all branches).
inline std::vector<ShapeRow> shape_trace(GaitModel<float>& m, const Tensor<float>& frames) {
    Tape<float> tape;
    tape.set_grad_enabled(false);
    const auto r = forward(tape, frames, m, NormMode::eval);
    auto drop = [](const Shape& s) { return Shape(s.begin() + 1, s.end()); };
    const auto& bb = r.backbone;
    std::vector<ShapeRow> rows;
    rows.push_back({"input", frames.shape()});
    rows.push_back({"stem", drop(bb.stem.shape())});
    for (std::size_t s = 0; s < 4; ++s) rows.push_back({"stage" + std::to_string(s + 1), drop(bb.stage_maps[s].shape())});
    rows.push_back({"gpool", drop(bb.pooled_maps[3].shape())});
    Shape tp = drop(bb.f4.shape());
    tp.insert(tp.begin(), 1);
    rows.push_back({"tp", tp});
    if (m.roel) {
        Shape s = drop(bb.f4_rot.shape());
        s.insert(s.begin(), 1);
        rows.push_back({"roel", s});
    }
    if (m.sel) {
        Shape s = drop(bb.branch_maps.back().shape());
        s.insert(s.begin(), 1);
        rows.push_back({"sel", s});
    }
    std::size_t parts = 0;
    for (const auto& p : r.head.parts) parts += p.dim(1);
    rows.push_back({"hp", Shape{1, parts}});
    rows.push_back({"head", Shape{1, r.head.embeddings.dim(1)}});
    rows.push_back({"embedding", drop(r.head.embeddings.shape())});
    return rows;
}

}  // namespace equikernel
