#pragma once

#include <random>
#include <string>
#include <vector>

#include "equikernel/backbone.hpp"
#include "equikernel/grad_check.hpp"
#include "equikernel/loss.hpp"

namespace equikernel {

struct GradSuiteRow {
    std::string op;
    double max_rel_error = 0;
    std::size_t coords = 0;
    double threshold = 1e-3;
    bool pass = true;
};

namespace detail {

inline Tensor<double> gaussian(const Shape& s, std::mt19937_64& rng, double sd = 1.0) {
    Tensor<double> t(s);
    std::normal_distribution<double> n(0.0, sd);
    for (auto& v : t.data()) v = n(rng);
    return t;
}

/// sum(v * r) for a fixed random r, so every output coordinate matters.
inline Var<double> probe_sum(const Var<double>& v, std::mt19937_64& rng) {
    return sum(mul(v, v.tape().constant(gaussian(v.shape(), rng))));
}

}  // namespace detail

/// Central-difference checks (64-bit) of every differentiable building block
/// on small shapes.
inline std::vector<GradSuiteRow> grad_suite(std::uint64_t seed = 0, double threshold = 1e-3) {
    std::vector<GradSuiteRow> rows;
    std::mt19937_64 rng(seed);
    using detail::gaussian;
    auto run = [&](const std::string& name, const std::vector<Tensor<double>>& point, auto&& body) {
        const std::uint64_t probe_seed = rng();
        auto f = [&](Tape<double>& t, std::span<const Var<double>> x) {
            std::mt19937_64 r(probe_seed);
            return detail::probe_sum(body(t, x), r);
        };
        const GradCheckResult res = grad_check(f, point, GradCheckOptions{1e-4, 0, seed});
        rows.push_back({name, res.max_rel_error, res.coords_checked, threshold, res.max_rel_error <= threshold});
    };
    using Vs = std::span<const Var<double>>;

    run("conv2d", {gaussian({2, 3, 7, 6}, rng), gaussian({4, 3, 3, 3}, rng), gaussian({4}, rng)},
        [](Tape<double>&, Vs x) { return conv2d(x[0], x[1], x[2], ConvSpec{3, 2, 1, 1}); });
    run("conv2d.dilated", {gaussian({1, 2, 7, 7}, rng), gaussian({3, 2, 3, 3}, rng)},
        [](Tape<double>&, Vs x) { return conv2d(x[0], x[1], ConvSpec::same(3, 1, 2)); });
    run("bilinear_resize", {gaussian({1, 2, 4, 5}, rng)}, [](Tape<double>&, Vs x) { return bilinear_resize(x[0], 7, 3); });
    run("rotate_kernel.kernel", {gaussian({2, 2, 3, 3}, rng)},
        [](Tape<double>& t, Vs x) { return rotate_kernel(x[0], t.constant(Tensor<double>({1}, 17.0))); });
    {
        const Tensor<double> k = gaussian({2, 2, 3, 3}, rng);
        const Tensor<double> img = gaussian({1, 2, 6, 6}, rng);
        run("rotate_kernel.theta", {Tensor<double>({1}, 23.0)}, [&](Tape<double>& t, Vs x) {
            return conv2d(t.constant(img), rotate_kernel(t.constant(k), x[0]), ConvSpec::same(3));
        });
    }
    run("attention", {gaussian({1, 5, 4}, rng), gaussian({1, 6, 4}, rng), gaussian({1, 6, 3}, rng)}, [](Tape<double>&, Vs x) {
        return bmm(softmax(scale(bmm(x[0], x[1], true), 0.5)), x[2]);
    });
    run("ffn", {gaussian({1, 5, 4}, rng), gaussian({16, 4}, rng, 0.5), gaussian({16}, rng), gaussian({4, 16}, rng, 0.5), gaussian({4}, rng)},
        [](Tape<double>&, Vs x) { return linear(relu(linear(x[0], x[1], x[2])), x[3], x[4]); });
    run("batch_norm.train", {gaussian({4, 3, 2, 2}, rng), gaussian({3}, rng), gaussian({3}, rng)}, [](Tape<double>&, Vs x) {
        NormState<double> st("bn", 3);
        return batch_norm(x[0], x[1], x[2], st, NormMode::train);
    });
    run("layer_norm.train", {gaussian({2, 3, 2, 3}, rng), gaussian({3}, rng), gaussian({3}, rng)},
        [](Tape<double>&, Vs x) { return layer_norm(x[0], x[1], x[2], 3); });
    run("horizontal_pool", {gaussian({2, 3, 8, 4}, rng)}, [](Tape<double>&, Vs x) { return horizontal_pool(x[0], 4, true); });
    {
        const std::vector<int> labels{0, 0, 1, 1, 2, 2};
        run("triplet_loss", {gaussian({6, 2, 3}, rng)}, [&](Tape<double>&, Vs x) { return triplet_loss(x[0], labels, 0.2); });
        run("cross_entropy", {gaussian({4, 2, 5}, rng)},
            [](Tape<double>&, Vs x) { return cross_entropy(x[0], std::vector<int>{0, 3, 1, 4}); });
    }
    {
        // Whole model on a tiny configuration: combined loss w.r.t. a sample
        // of coordinates of every parameter tensor.
        BackboneConfig cfg;
        cfg.widths = {2, 2, 2, 2};
        cfg.reduction = 2;
        cfg.parts = 2;
        cfg.embed_dim = 3;
        cfg.num_classes = 2;
        cfg.frame_h = 16;
        cfg.frame_w = 12;
        GaitModel<double> m = make_model<double>(cfg, seed);
        for (auto* p : m.parameters())
            if (p->name.find("angle") != std::string::npos || p->name.find("conf") != std::string::npos ||
                p->name.find("expand") != std::string::npos || p->name.find("gate") != std::string::npos ||
                p->name.find("classifier") != std::string::npos)
                p->value = gaussian(p->value.shape(), rng, 0.3);
        const Tensor<double> frames = gaussian({4, 2, 16, 12}, rng);
        const std::vector<int> labels{0, 0, 1, 1};
        auto params = m.parameters();
        auto f = [&](Tape<double>& t) {
            auto r = forward(t, frames, m, NormMode::train);
            return combined_loss(r.head.embeddings, r.head.logits, labels, 0.2, 1.0).total;
        };
        const GradCheckResult res = grad_check_params(f, params, GradCheckOptions{1e-5, 3, seed});
        rows.push_back({"backbone.end_to_end", res.max_rel_error, res.coords_checked, threshold, res.max_rel_error <= threshold});
    }
    return rows;
}

}  // namespace equikernel
