#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "equikernel/conv.hpp"
#include "equikernel/norm.hpp"
#include "equikernel/ops.hpp"
#include "equikernel/pool.hpp"
#include "equikernel/reflect.hpp"
#include "equikernel/tape.hpp"

namespace equikernel {

// Rotation convention: positive angles turn x (right) towards y (down), i.e.
// counter-clockwise in image coordinates, clockwise on screen. A rotated
// image or kernel reads the source at R(-theta) * offset from the center.

namespace detail {

/// cos/sin of an angle in degrees, exact on multiples of 90.
inline std::pair<double, double> cos_sin_deg(double deg) {
    const double q = deg / 90.0;
    if (q == std::round(q)) {
        switch (((static_cast<long long>(std::round(q)) % 4) + 4) % 4) {
            case 0: return {1.0, 0.0};
            case 1: return {0.0, 1.0};
            case 2: return {-1.0, 0.0};
            default: return {0.0, -1.0};
        }
    }
    const double r = deg * std::numbers::pi / 180.0;
    return {std::cos(r), std::sin(r)};
}

/// One bilinear read with zero outside [0, n) x [0, m); also returns the
/// partial derivatives with respect to the sample coordinates.
template <typename T>
struct BilinearSample {
    std::size_t idx[4];
    T weight[4];
    bool valid[4];
    T d_row[4];  // d weight / d row
    T d_col[4];  // d weight / d col
};

template <typename T>
BilinearSample<T> bilinear_sample(double row, double col, std::size_t rows, std::size_t cols) {
    BilinearSample<T> s{};
    const double r0 = std::floor(row), c0 = std::floor(col);
    const T fr = static_cast<T>(row - r0), fc = static_cast<T>(col - c0);
    const long long ir = static_cast<long long>(r0), ic = static_cast<long long>(c0);
    const long long rr[4] = {ir, ir, ir + 1, ir + 1};
    const long long cc[4] = {ic, ic + 1, ic, ic + 1};
    const T w[4] = {(1 - fr) * (1 - fc), (1 - fr) * fc, fr * (1 - fc), fr * fc};
    const T dr[4] = {-(1 - fc), -fc, (1 - fc), fc};
    const T dc[4] = {-(1 - fr), (1 - fr), -fr, fr};
    for (int n = 0; n < 4; ++n) {
        s.valid[n] = rr[n] >= 0 && cc[n] >= 0 && rr[n] < static_cast<long long>(rows) && cc[n] < static_cast<long long>(cols);
        s.idx[n] = s.valid[n] ? static_cast<std::size_t>(rr[n]) * cols + static_cast<std::size_t>(cc[n]) : 0;
        s.weight[n] = w[n];
        s.d_row[n] = dr[n];
        s.d_col[n] = dc[n];
    }
    return s;
}

}  // namespace detail

/// Rotates every [H, W] plane by `theta_deg` about its center with bilinear
/// interpolation and zero fill.
template <typename T>
Tensor<T> rotate_image(const Tensor<T>& x, double theta_deg) {
    const std::size_t h = x.dim(-2), w = x.dim(-1), planes = x.size() / (h * w);
    const auto [c, s] = detail::cos_sin_deg(theta_deg);
    const double cy = (static_cast<double>(h) - 1) / 2, cx = (static_cast<double>(w) - 1) / 2;
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
            const double dx = static_cast<double>(j) - cx, dy = static_cast<double>(i) - cy;
            const double sx = c * dx + s * dy + cx, sy = -s * dx + c * dy + cy;
            const auto smp = detail::bilinear_sample<T>(sy, sx, h, w);
            for (std::size_t p = 0; p < planes; ++p) {
                const T* src = x.raw() + p * h * w;
                T v = 0;
                for (int n = 0; n < 4; ++n)
                    if (smp.valid[n]) v += smp.weight[n] * src[smp.idx[n]];
                out[p * h * w + i * w + j] = v;
            }
        }
    return out;
}

/// Resamples each k x k slice of K on a grid rotated by -theta about the
/// kernel center, so the applied filter turns by +theta. Differentiable in K
/// and in the scalar `theta_deg`.
template <typename T>
Var<T> rotate_kernel(const Var<T>& kernel, const Var<T>& theta_deg) {
    const Shape& s = kernel.shape();
    if (s.size() != 4 || s[2] != s[3] || s[3] % 2 == 0) throw ShapeError("rotate_kernel", s, "expects [C_out,C_in,k,k] with odd k");
    if (theta_deg.value().size() != 1) throw ShapeError("rotate_kernel", theta_deg.shape(), "angle must be a scalar");
    const std::size_t k = s[3], slices = s[0] * s[1];
    const double theta = static_cast<double>(theta_deg.value()[0]);
    const auto [c, sn] = detail::cos_sin_deg(theta);
    const double center = static_cast<double>(k - 1) / 2;

    std::vector<detail::BilinearSample<T>> samples(k * k);
    std::vector<T> ds_row(k * k), ds_col(k * k);  // d(sample coord) / d(theta in degrees)
    const double to_rad = std::numbers::pi / 180.0;
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            const double x = static_cast<double>(j) - center, y = static_cast<double>(i) - center;
            const double sx = c * x + sn * y, sy = -sn * x + c * y;
            samples[i * k + j] = detail::bilinear_sample<T>(sy + center, sx + center, k, k);
            ds_col[i * k + j] = static_cast<T>((-sn * x + c * y) * to_rad);
            ds_row[i * k + j] = static_cast<T>((-c * x - sn * y) * to_rad);
        }

    Tensor<T> out(s);
    for (std::size_t q = 0; q < slices; ++q) {
        const T* src = kernel.value().raw() + q * k * k;
        T* dst = out.raw() + q * k * k;
        for (std::size_t p = 0; p < k * k; ++p) {
            T v = 0;
            const auto& smp = samples[p];
            for (int n = 0; n < 4; ++n)
                if (smp.valid[n]) v += smp.weight[n] * src[smp.idx[n]];
            dst[p] = v;
        }
    }
    return kernel.tape().record(std::move(out), {kernel, theta_deg},
        [kernel, theta_deg, samples, ds_row, ds_col, slices, k](Tape<T>& t, const Tensor<T>& go) {
            auto* gk = t.grad_target(kernel);
            auto* gt = t.grad_target(theta_deg);
            T dtheta = 0;
            for (std::size_t q = 0; q < slices; ++q) {
                const T* src = kernel.value().raw() + q * k * k;
                for (std::size_t p = 0; p < k * k; ++p) {
                    const T g = go[q * k * k + p];
                    const auto& smp = samples[p];
                    for (int n = 0; n < 4; ++n) {
                        if (!smp.valid[n]) continue;
                        if (gk) (*gk)[q * k * k + smp.idx[n]] += g * smp.weight[n];
                        if (gt) dtheta += g * src[smp.idx[n]] * (smp.d_row[n] * ds_row[p] + smp.d_col[n] * ds_col[p]);
                    }
                }
            }
            if (gt) (*gt)[0] += dtheta;
        });
}

/// Predicted rotation of one sequence.
struct AngleConfidence {
    double theta_deg = 0;
    double lambda = 0.5;
};

/// Parameters of the adaptive rotate block. Both linear heads start at zero,
/// so an untrained block predicts theta = 0 and lambda = 0.5.
template <typename T>
struct RoELParams {
    ReflectKernelBank<T> head_conv;  // [C4, C4, 3, 3]
    NormState<T> head_norm;          // layer norm, per-channel affine
    Parameter<T> angle_w, angle_b;   // [1, C4], [1]
    Parameter<T> conf_w, conf_b;
    Parameter<T> rot_kernel;         // [C4, C4, 3, 3]
    double theta_limit_deg = 40.0;
    /// Runs the trunk conv and the rotated conv as reflect pairs followed by a
    /// group max, which keeps the block reflect-equivariant on pooled maps.
    bool reflect_pair = true;

    std::vector<Parameter<T>*> parameters() {
        return {&head_conv.weight, &head_norm.gamma, &head_norm.beta, &angle_w, &angle_b, &conf_w, &conf_b, &rot_kernel};
    }
    std::size_t parameter_count() {
        std::size_t n = 0;
        for (auto* p : parameters()) n += p->count();
        return n;
    }
};

template <typename T>
RoELParams<T> make_roel_params(const std::string& prefix, std::size_t channels, double theta_limit_deg, bool reflect_pair,
                               auto&& init_conv) {
    RoELParams<T> p;
    p.head_conv.weight = Parameter<T>(prefix + ".head_conv.weight", init_conv(Shape{channels, channels, 3, 3}));
    p.head_norm = NormState<T>(prefix + ".head_norm", channels);
    p.angle_w = Parameter<T>(prefix + ".angle.weight", Tensor<T>({1, channels}));
    p.angle_b = Parameter<T>(prefix + ".angle.bias", Tensor<T>({1}));
    p.conf_w = Parameter<T>(prefix + ".conf.weight", Tensor<T>({1, channels}));
    p.conf_b = Parameter<T>(prefix + ".conf.bias", Tensor<T>({1}));
    p.rot_kernel = Parameter<T>(prefix + ".rot_kernel", init_conv(Shape{channels, channels, 3, 3}));
    p.theta_limit_deg = theta_limit_deg;
    p.reflect_pair = reflect_pair;
    return p;
}

/// Per-sequence (theta, lambda) as tape values, each of shape [B].
template <typename T>
struct AngleConfidenceVars {
    Var<T> theta;
    Var<T> lambda;

    AngleConfidence at(std::size_t b) const {
        return {static_cast<double>(theta.value()[b]), static_cast<double>(lambda.value()[b])};
    }
};

namespace detail {

/// conv with `w`; as a reflect pair, max(conv(x, w), conv(x, mirror(w))).
template <typename T>
Var<T> maybe_paired_conv(const Var<T>& x, const Var<T>& w, const ConvSpec& spec, bool pair) {
    if (!pair) return conv2d(x, w, spec);
    return group_pool(conv2d(x, concat<T>({w, reflect_kernel(w, false)}, 0), spec));
}

}  // namespace detail

/// Maps a temporally pooled stage-4 map [B, C4, h, w] (or [C4, h, w]) to
/// theta = softsign(linear(trunk)) * limit and lambda = sigmoid(linear(trunk)),
/// trunk = GAP(ReLU(LayerNorm(Conv(F4)))).
template <typename T>
AngleConfidenceVars<T> predict_angle_confidence(const Var<T>& f4, RoELParams<T>& p) {
    Tape<T>& tape = f4.tape();
    const bool batched = f4.shape().size() == 4;
    Var<T> x = batched ? f4 : reshape(f4, Shape{1, f4.dim(0), f4.dim(1), f4.dim(2)});
    if (x.shape().size() != 4 || x.dim(1) != p.rot_kernel.value.dim(0))
        throw ShapeError("predict_angle_confidence", f4.shape(), p.rot_kernel.value.shape(), "channel extent must equal C4");
    const std::size_t b = x.dim(0);
    Var<T> h = detail::maybe_paired_conv(x, tape.parameter(p.head_conv.weight), ConvSpec::same(3), p.reflect_pair);
    h = relu(normalize(h, NormKind::layer_norm, p.head_norm, NormMode::train));
    Var<T> trunk = global_avg(h);  // [B, C4]
    Var<T> a = reshape(linear(trunk, tape.parameter(p.angle_w), tape.parameter(p.angle_b)), Shape{b});
    Var<T> l = reshape(linear(trunk, tape.parameter(p.conf_w), tape.parameter(p.conf_b)), Shape{b});
    return {scale(softsign(a), static_cast<T>(p.theta_limit_deg)), sigmoid(l)};
}

/// lambda * conv(F4, rotate_kernel(K, theta)) per sequence; k = 3, stride 1, pad 1.
template <typename T>
Var<T> adaptive_rotate_conv(const Var<T>& f4, RoELParams<T>& p, const AngleConfidenceVars<T>& ac) {
    Tape<T>& tape = f4.tape();
    const bool batched = f4.shape().size() == 4;
    Var<T> x = batched ? f4 : reshape(f4, Shape{1, f4.dim(0), f4.dim(1), f4.dim(2)});
    const std::size_t b = x.dim(0);
    if (ac.theta.value().size() != b || ac.lambda.value().size() != b)
        throw ShapeError("adaptive_rotate_conv", x.shape(), ac.theta.shape(), "one angle per sequence");
    Var<T> k = tape.parameter(p.rot_kernel);
    std::vector<Var<T>> outs;
    for (std::size_t i = 0; i < b; ++i) {
        Var<T> th = slice(ac.theta, 0, i, i + 1);
        Var<T> xi = b == 1 ? x : slice(x, 0, i, i + 1);
        outs.push_back(detail::maybe_paired_conv(xi, rotate_kernel(k, th), ConvSpec::same(3), p.reflect_pair));
    }
    Var<T> y = scale_rows(b == 1 ? outs[0] : concat(outs, 0), ac.lambda);
    return batched ? y : reshape(y, f4.shape());
}

}  // namespace equikernel
