#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "equikernel/backbone.hpp"
#include "equikernel/data.hpp"
#include "equikernel/rotate.hpp"

namespace equikernel {

struct AuditRow {
    std::string layer;
    std::string transform;
    double equivariance_error = 0;  // NaN when not applicable
    double invariance_error = 0;    // NaN when not applicable
    double threshold = 0;
    bool pass = true;
};

inline constexpr double not_applicable = std::numeric_limits<double>::quiet_NaN();

/// Worker count: EQUIKERNEL_THREADS if set, else the hardware concurrency.
inline std::size_t worker_count() {
    if (const char* env = std::getenv("EQUIKERNEL_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1) return static_cast<std::size_t>(v);
    }
    return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

/// Runs fn(i) for i in [0, n) over up to `workers` threads; results are
/// stored by index, so the outcome does not depend on scheduling.
template <typename R>
std::vector<R> parallel_trials(std::size_t n, std::size_t workers, const std::function<R(std::size_t)>& fn) {
    std::vector<R> out(n);
    workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(n, 1));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
        return out;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += workers) out[i] = fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

inline Tensor<float> random_frames(std::size_t t, std::size_t h, std::size_t w, std::mt19937_64& rng) {
    Tensor<float> x({t, h, w});
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (auto& v : x.data()) v = u(rng);
    return x;
}

/// Named intermediate maps of one forward pass (eval mode).
struct LayerTrace {
    std::vector<std::pair<std::string, Tensor<float>>> grouped;  // swap + mirror relation
    std::vector<std::pair<std::string, Tensor<float>>> plain;    // mirror relation
    std::vector<std::pair<std::string, Tensor<float>>> invariant;
    Tensor<float> embedding;
};

inline LayerTrace trace_layers(GaitModel<float>& m, const Tensor<float>& frames) {
    LayerTrace tr;
    Tape<float> tape;
    tape.set_grad_enabled(false);
    const bool brk = m.cfg.break_equivariance;
    const bool grouped = m.cfg.use_reel;
    auto& dst = grouped ? tr.grouped : tr.plain;
    Var<float> x = as_batch_input(tape, frames, m.cfg);
    x = relu(conv_bn(x, m.stem, NormMode::eval, brk));
    dst.emplace_back("stem", x.value());
    for (std::size_t s = 0; s < 4; ++s)
        for (std::size_t b = 0; b < m.stages[s].size(); ++b) {
            auto& blk = m.stages[s][b];
            const std::string name = "stage" + std::to_string(s + 1) + "." + std::to_string(b);
            dst.emplace_back(name + ".conv1", relu(conv_bn(x, blk.conv1, NormMode::eval, brk)).value());
            x = residual_block(x, blk, NormMode::eval, brk);
            dst.emplace_back(name + ".out", x.value());
        }

    Tape<float> tape2;
    tape2.set_grad_enabled(false);
    auto r = forward(tape2, frames, m, NormMode::eval);
    const auto& bb = r.backbone;
    for (std::size_t s = 0; s < 4; ++s) {
        if (grouped) tr.plain.emplace_back("gpool" + std::to_string(s + 1), bb.pooled_maps[s].value());
    }
    const auto taps = bb.taps.all();
    for (std::size_t s = 0; s < 3; ++s) tr.plain.emplace_back("tp" + std::to_string(s + 1), taps[s].value());
    tr.plain.emplace_back("tp4", bb.f4.value());
    if (bb.angle) {
        tr.invariant.emplace_back("roel.theta", bb.angle->theta.value());
        tr.invariant.emplace_back("roel.lambda", bb.angle->lambda.value());
        tr.plain.emplace_back("roel.f4_rot", bb.f4_rot.value());
    }
    if (m.sel)
        for (std::size_t s = 0; s < 4; ++s) tr.plain.emplace_back("sel.out" + std::to_string(s + 1), bb.scale_outputs[s].value());
    for (std::size_t i = 0; i < r.head.parts.size(); ++i)
        tr.invariant.emplace_back(std::string("hp.") + branch_name(m.branches[i]), r.head.parts[i].value());
    tr.embedding = flat_embeddings(r.head);
    return tr;
}

struct ReflectAuditOptions {
    std::size_t trials = 50;
    std::size_t frames = 2;
    std::uint64_t seed = 0;
    double layer_tol = 1e-4;
    double embedding_rel_tol = 1e-3;
    /// Strided configurations: embedding error must be this many times
    /// smaller than the median distance between distinct inputs.
    double strided_ratio = 10.0;
    /// Inputs for the strided comparison; the median distance uses all pairs.
    std::size_t strided_inputs = 100;
};

namespace detail {

inline double squared_distance(const Tensor<float>& a, const Tensor<float>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        s += d * d;
    }
    return s;
}

inline double relative_norm(const Tensor<float>& a, const Tensor<float>& b) {
    double num = 0, den = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        num += d * d;
        den += static_cast<double>(b[i]) * static_cast<double>(b[i]);
    }
    return std::sqrt(num) / std::max(std::sqrt(den), 1e-30);
}

}  // namespace detail

/// Reflect audit. In audit mode (stride 1) every grouped layer must satisfy
/// F(mX) = swap(mirror(F(X))), pooled layers F(mX) = mirror(F(X)), and pooled
/// parts and embeddings must be invariant. In strided configurations the
/// per-layer errors are reported and the end-to-end embedding error is
/// compared with the median distance between distinct inputs.
inline std::vector<AuditRow> reflect_audit(GaitModel<float>& m, const ReflectAuditOptions& opt) {
    const bool exact = m.cfg.audit_mode;
    struct Trial {
        std::vector<double> grouped, plain, invariant;
        double embedding = 0;
    };
    std::mt19937_64 rng(opt.seed);
    std::vector<Tensor<float>> inputs;
    for (std::size_t i = 0; i < opt.trials; ++i) inputs.push_back(random_frames(opt.frames, m.cfg.frame_h, m.cfg.frame_w, rng));
    std::vector<std::string> names_g, names_p, names_i;
    const auto trials = parallel_trials<Trial>(opt.trials, worker_count(), [&](std::size_t i) {
        const LayerTrace a = trace_layers(m, inputs[i]);
        const LayerTrace b = trace_layers(m, mirror_w(inputs[i]));
        Trial t;
        for (std::size_t k = 0; k < a.grouped.size(); ++k)
            t.grouped.push_back(max_abs_diff(b.grouped[k].second, swap_groups(mirror_w(a.grouped[k].second))));
        for (std::size_t k = 0; k < a.plain.size(); ++k) t.plain.push_back(max_abs_diff(b.plain[k].second, mirror_w(a.plain[k].second)));
        for (std::size_t k = 0; k < a.invariant.size(); ++k) t.invariant.push_back(max_abs_diff(b.invariant[k].second, a.invariant[k].second));
        t.embedding = detail::relative_norm(b.embedding, a.embedding);
        return t;
    });
    {
        const LayerTrace names = trace_layers(m, inputs[0]);
        for (const auto& [n, _] : names.grouped) names_g.push_back(n);
        for (const auto& [n, _] : names.plain) names_p.push_back(n);
        for (const auto& [n, _] : names.invariant) names_i.push_back(n);
    }
    std::vector<AuditRow> rows;
    auto worst = [&](auto member, std::size_t k) {
        double w = 0;
        for (const auto& t : trials) w = std::max(w, (t.*member)[k]);
        return w;
    };
    const double tol = exact ? opt.layer_tol : not_applicable;
    auto judged = [&](double err) { return !exact || err <= opt.layer_tol; };
    for (std::size_t k = 0; k < names_g.size(); ++k) {
        const double e = worst(&Trial::grouped, k);
        rows.push_back({names_g[k], "reflect", e, not_applicable, tol, judged(e)});
    }
    for (std::size_t k = 0; k < names_p.size(); ++k) {
        const double e = worst(&Trial::plain, k);
        rows.push_back({names_p[k], "reflect", e, not_applicable, tol, judged(e)});
    }
    for (std::size_t k = 0; k < names_i.size(); ++k) {
        const double e = worst(&Trial::invariant, k);
        rows.push_back({names_i[k], "reflect", not_applicable, e, tol, judged(e)});
    }
    double emb = 0;
    for (const auto& t : trials) emb = std::max(emb, t.embedding);
    if (exact) {
        rows.push_back({"embedding", "reflect", not_applicable, emb, opt.embedding_rel_tol, emb <= opt.embedding_rel_tol});
    } else {
        const std::size_t n = opt.strided_inputs;
        std::vector<Tensor<float>> distinct;
        for (std::size_t i = 0; i < n; ++i) distinct.push_back(random_frames(opt.frames, m.cfg.frame_h, m.cfg.frame_w, rng));
        struct Pair {
            Tensor<float> e, em;
        };
        const auto embs = parallel_trials<Pair>(n, worker_count(), [&](std::size_t i) {
            Tape<float> t1, t2;
            t1.set_grad_enabled(false);
            t2.set_grad_enabled(false);
            return Pair{flat_embeddings(forward(t1, distinct[i], m, NormMode::eval).head),
                        flat_embeddings(forward(t2, mirror_w(distinct[i]), m, NormMode::eval).head)};
        });
        auto dist = [](const Tensor<float>& x, const Tensor<float>& y) { return std::sqrt(detail::squared_distance(x, y)); };
        std::vector<double> dists;
        double inv_max = 0, inv_sum = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = dist(embs[i].e, embs[i].em);
            inv_max = std::max(inv_max, d);
            inv_sum += d;
            for (std::size_t j = i + 1; j < n; ++j) dists.push_back(dist(embs[i].e, embs[j].e));
        }
        std::nth_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2), dists.end());
        const double median = dists.empty() ? 0 : dists[dists.size() / 2];
        const double threshold = median / opt.strided_ratio;
        rows.push_back({"embedding.relative", "reflect", not_applicable, emb, not_applicable, true});
        rows.push_back({"embedding.median_pair_distance", "reflect", not_applicable, median, not_applicable, true});
        rows.push_back({"embedding.mean_mirror_distance", "reflect", not_applicable, inv_sum / static_cast<double>(std::max<std::size_t>(n, 1)),
                        threshold, true});
        rows.push_back({"embedding.max_mirror_distance", "reflect", not_applicable, inv_max, threshold, inv_max <= threshold});
    }
    return rows;
}

// ------------------------------------------------------------------ rotate

/// Analytic 90-degree-multiple rotation of a k x k slice (index permutation).
template <typename T>
Tensor<T> rotate_kernel_grid(const Tensor<T>& k, int quarter_turns) {
    const std::size_t n = k.dim(-1), planes = k.size() / (n * n);
    const int q = ((quarter_turns % 4) + 4) % 4;
    Tensor<T> out(k.shape());
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                // output offset (dx, dy) reads the source at R(-90 deg)^q (dx, dy),
                // where R(-90 deg) maps (dx, dy) to (dy, -dx) in x-right, y-down axes
                const long c = static_cast<long>(n / 2);
                long dx = static_cast<long>(j) - c, dy = static_cast<long>(i) - c;
                for (int r = 0; r < q; ++r) {
                    const long tx = dy, ty = -dx;
                    dx = tx;
                    dy = ty;
                }
                const std::size_t si = static_cast<std::size_t>(dy + c), sj = static_cast<std::size_t>(dx + c);
                out[p * n * n + i * n + j] = k[p * n * n + si * n + sj];
            }
    return out;
}

/// Smooth random field: bilinear upsampling of coarse Gaussian noise.
inline Tensor<float> smooth_field(std::size_t c, std::size_t h, std::size_t w, std::size_t coarse, std::mt19937_64& rng) {
    Tensor<float> g({c, coarse, coarse});
    std::normal_distribution<float> n(0.0f, 1.0f);
    for (auto& v : g.data()) v = n(rng);
    Tape<float> tape;
    tape.set_grad_enabled(false);
    return bilinear_resize(tape.constant(g), h, w).value();
}

struct RotateTrial {
    double rotated_error = 0;
    double plain_error = 0;
};

/// One trial of E(theta) = ||rot(-theta)(conv(rot(theta)(X), K')) - conv(X, K)||
/// on the interior crop, for K' = K_theta and K' = K.
inline RotateTrial rotate_equivariance_trial(double theta_deg, std::size_t size, std::size_t channels, std::size_t crop,
                                             std::mt19937_64& rng) {
    const Tensor<float> x = smooth_field(channels, size, size, 6, rng);
    Tensor<float> k({channels, channels, 3, 3});
    std::normal_distribution<float> n(0.0f, 1.0f);
    for (auto& v : k.data()) v = n(rng);
    Tape<float> tape;
    tape.set_grad_enabled(false);
    Var<float> kv = tape.constant(k);
    Var<float> kr = rotate_kernel(kv, tape.constant(Tensor<float>({1}, static_cast<float>(theta_deg))));
    const ConvSpec spec = ConvSpec::same(3);
    const Tensor<float> ref = conv2d_forward<float>(x, k, nullptr, spec);
    const Tensor<float> xr = rotate_image(x, theta_deg);
    auto err = [&](const Tensor<float>& kk) {
        const Tensor<float> back = rotate_image(conv2d_forward<float>(xr, kk, nullptr, spec), -theta_deg);
        double s = 0;
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t i = crop; i < size - crop; ++i)
                for (std::size_t j = crop; j < size - crop; ++j) {
                    const std::size_t idx = (c * size + i) * size + j;
                    const double d = static_cast<double>(back[idx]) - static_cast<double>(ref[idx]);
                    s += d * d;
                }
        return std::sqrt(s);
    };
    return {err(kr.value()), err(k)};
}

struct RotateAuditOptions {
    std::size_t trials = 100;
    double theta_deg = 10.0;
    std::size_t size = 32, channels = 2, crop = 8;
    double grid_tol = 1e-6;
    double win_fraction = 0.95;
    std::uint64_t seed = 0;
};

inline std::vector<AuditRow> rotate_audit(const RotateAuditOptions& opt) {
    std::vector<AuditRow> rows;
    std::mt19937_64 rng(opt.seed);
    // Grid angles: bilinear rotation must reduce to the index permutation.
    Tensor<double> k({4, 3, 3, 3});
    std::normal_distribution<double> n(0.0, 1.0);
    for (auto& v : k.data()) v = n(rng);
    for (int q = 0; q < 4; ++q) {
        Tape<double> tape;
        tape.set_grad_enabled(false);
        const Tensor<double> rk = rotate_kernel(tape.constant(k), tape.constant(Tensor<double>({1}, 90.0 * q))).value();
        const double e = max_abs_diff(rk, rotate_kernel_grid(k, q));
        rows.push_back({"rotate_kernel@" + std::to_string(90 * q), "rotate", e, not_applicable, opt.grid_tol, e <= opt.grid_tol});
    }
    // Approximate equivariance of the rotated kernel.
    std::vector<std::uint64_t> seeds(opt.trials);
    for (auto& s : seeds) s = rng();
    const auto trials = parallel_trials<RotateTrial>(opt.trials, worker_count(), [&](std::size_t i) {
        std::mt19937_64 r(seeds[i]);
        return rotate_equivariance_trial(opt.theta_deg, opt.size, opt.channels, opt.crop, r);
    });
    std::size_t wins = 0;
    double rot_sum = 0, plain_sum = 0;
    for (const auto& t : trials) {
        wins += t.rotated_error < t.plain_error;
        rot_sum += t.rotated_error;
        plain_sum += t.plain_error;
    }
    const double frac = static_cast<double>(wins) / static_cast<double>(std::max<std::size_t>(trials.size(), 1));
    rows.push_back({"rotated_conv@" + std::to_string(static_cast<int>(opt.theta_deg)) + ".mean_error", "rotate", rot_sum / static_cast<double>(trials.size()),
                    not_applicable, not_applicable, true});
    rows.push_back({"plain_conv@" + std::to_string(static_cast<int>(opt.theta_deg)) + ".mean_error", "rotate", plain_sum / static_cast<double>(trials.size()),
                    not_applicable, not_applicable, true});
    rows.push_back({"rotated_beats_plain.fraction", "rotate", frac, not_applicable, opt.win_fraction, frac >= opt.win_fraction});
    // theta = 0 leaves the kernel untouched.
    {
        std::mt19937_64 r(opt.seed + 1);
        const RotateTrial z = rotate_equivariance_trial(0.0, opt.size, opt.channels, opt.crop, r);
        rows.push_back({"rotated_conv@0", "rotate", z.rotated_error, not_applicable, 1e-6, z.rotated_error <= 1e-6});
    }
    return rows;
}

// ---------------------------------------------------------- angle predictor

struct PredictorBoundsOptions {
    std::vector<double> limits{20, 30, 40, 50};
    std::size_t inputs = 1000;
    std::size_t weight_draws = 20;
    std::size_t channels = 16, height = 8, width = 6;
    std::uint64_t seed = 0;
};

/// |theta| < limit and 0 < lambda < 1 for random stage-4 maps and random
/// predictor weights (heads drawn N(0, 1), so the bounds are exercised away
/// from the zero-initialized start).
inline std::vector<AuditRow> predictor_bounds_audit(const PredictorBoundsOptions& opt) {
    std::vector<AuditRow> rows;
    std::mt19937_64 rng(opt.seed);
    std::normal_distribution<float> n(0.0f, 1.0f);
    for (double limit : opt.limits) {
        std::size_t violations = 0;
        double max_ratio = 0, min_lambda = 1, max_lambda = 0;
        for (std::size_t d = 0; d < opt.weight_draws; ++d) {
            auto init = [&](const Shape& s) {
                Tensor<float> t(s);
                for (auto& v : t.data()) v = n(rng);
                return t;
            };
            RoELParams<float> p = make_roel_params<float>("roel", opt.channels, limit, true, init);
            for (auto* w : {&p.angle_w, &p.angle_b, &p.conf_w, &p.conf_b})
                for (auto& v : w->value.data()) v = n(rng);
            Tensor<float> f4({opt.inputs, opt.channels, opt.height, opt.width});
            for (auto& v : f4.data()) v = n(rng);
            Tape<float> tape;
            tape.set_grad_enabled(false);
            const auto ac = predict_angle_confidence(tape.constant(f4), p);
            for (std::size_t i = 0; i < opt.inputs; ++i) {
                const double th = ac.theta.value()[i], la = ac.lambda.value()[i];
                const bool ok = std::isfinite(th) && std::abs(th) < limit && la > 0 && la < 1;
                violations += !ok;
                max_ratio = std::max(max_ratio, std::abs(th) / limit);
                min_lambda = std::min(min_lambda, la);
                max_lambda = std::max(max_lambda, la);
            }
        }
        const std::string tag = "theta_limit=" + std::to_string(static_cast<int>(limit));
        rows.push_back({tag + ".max_abs_theta_over_limit", "rotate", not_applicable, max_ratio, 1.0, max_ratio < 1.0});
        rows.push_back({tag + ".lambda_min", "rotate", not_applicable, min_lambda, 0.0, min_lambda > 0});
        rows.push_back({tag + ".lambda_max", "rotate", not_applicable, max_lambda, 1.0, max_lambda < 1});
        rows.push_back({tag + ".violations", "rotate", not_applicable, static_cast<double>(violations), 0.0, violations == 0});
    }
    return rows;
}

// -------------------------------------------------------------------- scale

struct ScaleAuditOptions {
    std::size_t trials = 20;
    std::size_t frames = 2;
    std::uint64_t seed = 0;
    double identity_tol = 1e-6;
};

/// Scale block checks on backbone taps of random inputs: a freshly built
/// block is the identity on its resized taps, and with random gate weights
/// every gate lies strictly inside (0, 1). Also reports how far a one-step
/// dilation moves the embedding relative to the spread of distinct inputs.
inline std::vector<AuditRow> scale_audit(GaitModel<float>& m, const ScaleAuditOptions& opt) {
    std::vector<AuditRow> rows;
    if (!m.sel) {
        rows.push_back({"sel", "scale", not_applicable, not_applicable, not_applicable, true});
        return rows;
    }
    std::mt19937_64 rng(opt.seed);
    GaitModel<float> fresh = make_model<float>(m.cfg, opt.seed + 17);
    SELParams<float> gated = *m.sel;
    std::normal_distribution<float> n(0.0f, 1.0f);
    for (auto& g : gated.gate_w)
        for (auto& v : g.value.data()) v = n(rng);
    for (auto& v : gated.expand_w.value.data()) v = n(rng);
    double identity = 0, gate_lo = 1, gate_hi = 0;
    for (std::size_t t = 0; t < opt.trials; ++t) {
        const Tensor<float> x = random_frames(opt.frames, m.cfg.frame_h, m.cfg.frame_w, rng);
        Tape<float> tape;
        tape.set_grad_enabled(false);
        auto bb = forward_backbone(as_batch_input(tape, x, fresh.cfg), fresh, NormMode::eval);
        const MultiScaleTaps<float> taps{bb.taps.f1, bb.taps.f2, bb.taps.f3, bb.f4_rot};
        const auto outs = scale_equivariance(taps, *fresh.sel, NormMode::eval);
        Var<float> f_init = assemble_multiscale(taps, fresh.sel->stage_channels);
        std::size_t off = 0;
        for (std::size_t i = 0; i < 4; ++i) {
            const std::size_t ci = fresh.sel->stage_channels[i];
            identity = std::max<double>(identity, max_abs_diff(outs[i].value(), slice(f_init, -3, off, off + ci).value()));
            off += ci;
        }
        Var<float> e = conv2d(cross_scale_attention(cross_channel_reduce(f_init, gated, NormMode::eval), gated),
                              tape.constant(gated.expand_w.value), ConvSpec{1, 1, 0, 1});
        e = relu(normalize(e, NormKind::batch_norm, gated.expand_bn, NormMode::eval));
        off = 0;
        for (std::size_t i = 0; i < 4; ++i) {
            const std::size_t ci = gated.stage_channels[i];
            Var<float> g = conv2d(slice(e, -3, off, off + ci), tape.constant(gated.gate_w[i].value), ConvSpec{1, 1, 0, 1});
            g = sigmoid(normalize(g, NormKind::batch_norm, gated.gate_bn[i], NormMode::eval));
            off += ci;
            for (float v : g.value().data()) {
                gate_lo = std::min(gate_lo, static_cast<double>(v));
                gate_hi = std::max(gate_hi, static_cast<double>(v));
            }
        }
    }
    rows.push_back({"sel.identity_at_init", "scale", identity, not_applicable, opt.identity_tol, identity <= opt.identity_tol});
    rows.push_back({"sel.gate_min", "scale", not_applicable, gate_lo, 0.0, gate_lo > 0});
    rows.push_back({"sel.gate_max", "scale", not_applicable, gate_hi, 1.0, gate_hi < 1});

    // Informational: sensitivity of the embedding to a one-step dilation.
    std::vector<Tensor<float>> embs, dil;
    for (std::size_t i = 0; i < opt.trials; ++i) {
        const Tensor<float> w = synth_walker(opt.seed * 7919 + i + 1, opt.frames, "nm", 0, m.cfg.frame_h, m.cfg.frame_w).frames;
        Tape<float> t1, t2;
        t1.set_grad_enabled(false);
        t2.set_grad_enabled(false);
        embs.push_back(flat_embeddings(forward(t1, w, m, NormMode::eval).head));
        dil.push_back(flat_embeddings(forward(t2, transform_frames(w, Transform{TransformKind::dilate, 0, 1}), m, NormMode::eval).head));
    }
    std::vector<double> pair;
    double moved = 0;
    for (std::size_t i = 0; i < embs.size(); ++i) {
        moved += std::sqrt(detail::squared_distance(embs[i], dil[i]));
        for (std::size_t j = i + 1; j < embs.size(); ++j) pair.push_back(std::sqrt(detail::squared_distance(embs[i], embs[j])));
    }
    std::sort(pair.begin(), pair.end());
    const double median = pair.empty() ? 0 : pair[pair.size() / 2];
    rows.push_back({"embedding.dilate1_over_median_distance", "scale", not_applicable,
                    median > 0 ? moved / static_cast<double>(embs.size()) / median : 0, not_applicable, true});
    return rows;
}

}  // namespace equikernel
