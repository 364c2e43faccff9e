#include <gtest/gtest.h>

#include <cmath>

#include "equikernel/audit.hpp"
#include "equikernel/rotate.hpp"
#include "test_util.hpp"

using namespace equikernel;

namespace {

Tensor<double> rotated(const Tensor<double>& k, double deg) {
    Tape<double> tape;
    tape.set_grad_enabled(false);
    return rotate_kernel(tape.constant(k), tape.constant(Tensor<double>({1}, deg))).value();
}

RoELParams<float> random_roel(std::size_t c, double limit, std::uint64_t seed, double head_sd) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> n(0.0f, 1.0f);
    auto init = [&](const Shape& s) {
        Tensor<float> t(s);
        for (auto& v : t.data()) v = n(rng);
        return t;
    };
    RoELParams<float> p = make_roel_params<float>("roel", c, limit, true, init);
    for (auto* w : {&p.angle_w, &p.angle_b, &p.conf_w, &p.conf_b})
        for (auto& v : w->value.data()) v = static_cast<float>(head_sd) * n(rng);
    return p;
}

}  // namespace

TEST(RotateKernel, ZeroAngleIsIdentity) {
    const auto k = ektest::randn<double>({2, 3, 3, 3}, 1);
    EXPECT_EQ(max_abs_diff(rotated(k, 0.0), k), 0.0);
}

TEST(RotateKernel, QuarterTurnsMatchGridPermutation) {
    const auto k = ektest::randn<double>({2, 3, 3, 3}, 2);
    for (int q = -4; q <= 4; ++q) EXPECT_LE(max_abs_diff(rotated(k, 90.0 * q), rotate_kernel_grid(k, q)), 1e-12) << q;
}

TEST(RotateKernel, QuarterTurnDirection) {
    // Hot cell right of the center; +90 degrees (counter-clockwise in x-right,
    // y-down coordinates, so clockwise on screen) moves it below the center.
    Tensor<double> k({1, 1, 3, 3});
    k[1 * 3 + 2] = 1;
    const auto r = rotated(k, 90.0);
    EXPECT_NEAR(r[2 * 3 + 1], 1.0, 1e-12);
    EXPECT_NEAR(std::abs(r[1 * 3 + 2]), 0.0, 1e-12);
}

TEST(RotateKernelProperty, CenterIsFixed) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto k = ektest::randn<double>({2, 2, 3, 3}, seed);
        const double deg = -170.0 + 37.3 * static_cast<double>(seed);
        const auto r = rotated(k, deg);
        for (std::size_t s = 0; s < 4; ++s) EXPECT_NEAR(r[s * 9 + 4], k[s * 9 + 4], 1e-12);
    }
}

TEST(RotateKernelProperty, AgreesWithImageRotationOnLargeKernels) {
    // Kernel rotation and image rotation share one sampling convention.
    const auto k = ektest::randn<double>({1, 1, 7, 7}, 3);
    const auto a = rotated(k, 25.0);
    const auto b = rotate_image(k, 25.0);
    EXPECT_LE(max_abs_diff(a, b), 1e-12);
}

TEST(RotateImage, ZeroAndFullTurn) {
    const auto x = ektest::randn<double>({2, 6, 5}, 4);
    EXPECT_EQ(max_abs_diff(rotate_image(x, 0.0), x), 0.0);
    EXPECT_LE(max_abs_diff(rotate_image(x, 360.0), x), 1e-12);
}

TEST(RotateEquivariance, QuarterTurnIsExact) {
    std::mt19937_64 rng(5);
    const RotateTrial t = rotate_equivariance_trial(90.0, 24, 2, 6, rng);
    EXPECT_LE(t.rotated_error, 1e-4);
    EXPECT_GT(t.plain_error, 1e-2);
}

TEST(AnglePredictor, ZeroHeadsGiveNeutralStart) {
    auto p = random_roel(8, 40.0, 1, 0.0);
    Tape<float> tape;
    tape.set_grad_enabled(false);
    const auto ac = predict_angle_confidence(tape.constant(ektest::randn({3, 8, 4, 3}, 2)), p);
    for (std::size_t b = 0; b < 3; ++b) {
        EXPECT_EQ(ac.theta.value()[b], 0.0f);
        EXPECT_EQ(ac.lambda.value()[b], 0.5f);
    }
}

TEST(AnglePredictorProperty, BoundsHoldForRandomWeights) {
    for (double limit : {20.0, 30.0, 40.0, 50.0})
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            auto p = random_roel(8, limit, seed, 3.0);
            Tape<float> tape;
            tape.set_grad_enabled(false);
            const auto ac = predict_angle_confidence(tape.constant(ektest::randn({64, 8, 4, 3}, seed + 9, 4.0)), p);
            for (std::size_t b = 0; b < 64; ++b) {
                EXPECT_LT(std::abs(ac.theta.value()[b]), limit);
                EXPECT_GT(ac.lambda.value()[b], 0.0f);
                EXPECT_LT(ac.lambda.value()[b], 1.0f);
            }
        }
}

TEST(AnglePredictor, SoftsignApproachesButNeverReachesLimit) {
    auto p = random_roel(4, 40.0, 3, 0.0);
    p.angle_b.value[0] = 1e6f;
    Tape<float> tape;
    tape.set_grad_enabled(false);
    const auto ac = predict_angle_confidence(tape.constant(ektest::randn({1, 4, 3, 3}, 4)), p);
    EXPECT_GT(ac.theta.value()[0], 39.9f);
    EXPECT_LT(ac.theta.value()[0], 40.0f);
}

TEST(AdaptiveRotateConv, HalfStrengthPlainConvAtStart) {
    auto p = random_roel(4, 40.0, 6, 0.0);
    p.reflect_pair = false;
    Tape<float> tape;
    tape.set_grad_enabled(false);
    const auto f4 = ektest::randn({2, 4, 5, 4}, 7);
    const auto x = tape.constant(f4);
    const auto ac = predict_angle_confidence(x, p);
    const auto y = adaptive_rotate_conv(x, p, ac).value();
    EXPECT_EQ(y.shape(), f4.shape());
    const auto ref = conv2d_forward<float>(f4, p.rot_kernel.value, nullptr, ConvSpec::same(3));
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], 0.5f * ref[i], 1e-5);
}

TEST(AdaptiveRotateConv, ZeroConfidenceSilencesOutput) {
    auto p = random_roel(4, 40.0, 8, 0.0);
    p.conf_b.value[0] = -40.0f;
    Tape<float> tape;
    tape.set_grad_enabled(false);
    const auto x = tape.constant(ektest::randn({1, 4, 5, 4}, 9));
    const auto y = adaptive_rotate_conv(x, p, predict_angle_confidence(x, p)).value();
    for (float v : y.data()) EXPECT_NEAR(v, 0.0f, 1e-6);
}
