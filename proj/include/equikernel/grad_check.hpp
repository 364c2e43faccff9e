#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "equikernel/tape.hpp"
#include "equikernel/tensor.hpp"

namespace equikernel {

struct GradCheckOptions {
    double step = 1e-3;
    /// 0 checks every coordinate; otherwise a seeded random subset per tensor.
    std::size_t max_coords_per_tensor = 0;
    std::uint64_t seed = 7;
};

struct GradCheckResult {
    double max_rel_error = 0;
    std::size_t worst_tensor = 0;
    std::size_t worst_index = 0;
    double analytic = 0;
    double numeric = 0;
    std::size_t coords_checked = 0;
};

namespace detail {

/// |a - n| / max(|a|, |n|, 1e-3 * max|grad|, 1e-7): relative per coordinate,
/// except for coordinates that are negligible against the whole gradient.
inline double rel_error(double a, double n, double scale) {
    const double den = std::max({std::abs(a), std::abs(n), 1e-3 * scale, 1e-7});
    return std::abs(a - n) / den;
}

inline std::vector<std::size_t> pick_coords(std::size_t size, const GradCheckOptions& opt, std::mt19937_64& rng) {
    std::vector<std::size_t> idx(size);
    for (std::size_t i = 0; i < size; ++i) idx[i] = i;
    if (opt.max_coords_per_tensor == 0 || size <= opt.max_coords_per_tensor) return idx;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(opt.max_coords_per_tensor);
    return idx;
}

}  // namespace detail

/// Compares tape gradients of the scalar `f(params)` with central differences
/// on the parameter values, in 64-bit. `f` records its computation on the
/// provided tape and returns the scalar root.
inline GradCheckResult grad_check_params(const std::function<Var<double>(Tape<double>&)>& f,
                                         std::span<Parameter<double>* const> params,
                                         const GradCheckOptions& opt = {}) {
    for (auto* p : params) p->zero_grad();
    {
        Tape<double> tape;
        Var<double> root = f(tape);
        if (!std::isfinite(root.value().item())) throw NumericError("grad_check: f is not finite at the point");
        tape.backward(root);
    }
    double scale = 0;
    for (auto* p : params)
        for (double g : p->grad.data()) scale = std::max(scale, std::abs(g));

    auto eval = [&]() {
        Tape<double> tape;
        tape.set_grad_enabled(false);
        const double v = f(tape).value().item();
        if (!std::isfinite(v)) throw NumericError("grad_check: f is not finite near the point");
        return v;
    };

    GradCheckResult res;
    std::mt19937_64 rng(opt.seed);
    for (std::size_t t = 0; t < params.size(); ++t) {
        Parameter<double>& p = *params[t];
        for (std::size_t i : detail::pick_coords(p.value.size(), opt, rng)) {
            const double orig = p.value[i];
            p.value[i] = orig + opt.step;
            const double up = eval();
            p.value[i] = orig - opt.step;
            const double down = eval();
            p.value[i] = orig;
            const double numeric = (up - down) / (2 * opt.step);
            const double err = detail::rel_error(p.grad[i], numeric, scale);
            ++res.coords_checked;
            if (err >= res.max_rel_error) res = {err, t, i, p.grad[i], numeric, res.coords_checked};
        }
    }
    return res;
}

/// Point-based form: `f` receives one leaf per tensor in `point`.
inline GradCheckResult grad_check(const std::function<Var<double>(Tape<double>&, std::span<const Var<double>>)>& f,
                                  const std::vector<Tensor<double>>& point, const GradCheckOptions& opt = {}) {
    std::vector<Parameter<double>> params;
    params.reserve(point.size());
    for (std::size_t i = 0; i < point.size(); ++i) params.emplace_back("x" + std::to_string(i), point[i]);
    std::vector<Parameter<double>*> ptrs;
    for (auto& p : params) ptrs.push_back(&p);
    auto wrapped = [&](Tape<double>& tape) {
        std::vector<Var<double>> leaves;
        for (auto& p : params) leaves.push_back(tape.parameter(p));
        return f(tape, leaves);
    };
    return grad_check_params(wrapped, ptrs, opt);
}

}  // namespace equikernel
