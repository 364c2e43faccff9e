#include <gtest/gtest.h>

#include <cmath>

#include "equikernel/norm.hpp"
#include "equikernel/ops.hpp"
#include "equikernel/pool.hpp"
#include "equikernel/resize.hpp"
#include "test_util.hpp"

using namespace equikernel;

namespace {

struct Fixture {
    Tape<double> tape;
    Fixture() { tape.set_grad_enabled(false); }
    Var<double> c(const Tensor<double>& t) { return tape.constant(t); }
};

}  // namespace

TEST(Resize, AlignCornersTwoToThree) {
    Fixture f;
    const Tensor<double> x({1, 1, 2, 2}, {0, 1, 2, 3});
    const auto y = bilinear_resize(f.c(x), 3, 3).value();
    const std::vector<double> want{0, 0.5, 1, 1, 1.5, 2, 2, 2.5, 3};
    for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(y[i], want[i], 1e-12);
}

TEST(Resize, SameSizeIsIdentity) {
    Fixture f;
    const auto x = ektest::randn<double>({2, 3, 5, 4}, 1);
    EXPECT_EQ(max_abs_diff(bilinear_resize(f.c(x), 5, 4).value(), x), 0.0);
}

TEST(Resize, ConstantStaysConstant) {
    Fixture f;
    const Tensor<double> x({1, 2, 4, 3}, 0.7);
    for (double v : bilinear_resize(f.c(x), 7, 5).value().data()) EXPECT_NEAR(v, 0.7, 1e-12);
}

TEST(Pool, GlobalAverage) {
    Fixture f;
    const auto y = global_avg(f.c(Tensor<double>({1, 1, 2, 2}, {1, 3, 5, 7}))).value();
    EXPECT_DOUBLE_EQ(y[0], 4.0);
}

TEST(Pool, TemporalMax) {
    Fixture f;
    Tensor<double> x({2, 1, 1, 1}, {1, 5});
    EXPECT_DOUBLE_EQ(temporal_max(f.c(x)).value()[0], 5.0);
    const auto frame = ektest::randn<double>({1, 3, 4, 4}, 2);
    Tensor<double> rep({4, 3, 4, 4});
    for (std::size_t t = 0; t < 4; ++t) std::copy(frame.data().begin(), frame.data().end(), rep.raw() + t * frame.size());
    const auto y = temporal_max(f.c(rep)).value();
    EXPECT_EQ(y.shape(), (Shape{3, 4, 4}));
    EXPECT_EQ(max_abs_diff(y, frame.reshaped(Shape{3, 4, 4})), 0.0);
}

TEST(Pool, HorizontalPoolConstantGivesTwiceValue) {
    Fixture f;
    const auto y = horizontal_pool(f.c(Tensor<double>({1, 3, 16, 11}, 0.25)), 16, true).value();
    EXPECT_EQ(y.shape(), (Shape{1, 16, 3}));
    for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(PoolProperty, HorizontalPoolInvariantToColumnPermutation) {
    Fixture f;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto x = ektest::randn<double>({2, 3, 8, 5}, seed);
        const auto y = horizontal_pool(f.c(x), 4, true).value();
        EXPECT_NEAR(max_abs_diff(horizontal_pool(f.c(mirror_w(x)), 4, true).value(), y), 0.0, 1e-12);
        Tensor<double> perm(x.shape());
        const std::size_t order[5] = {3, 0, 4, 1, 2};
        for (std::size_t r = 0; r < x.size() / 5; ++r)
            for (std::size_t j = 0; j < 5; ++j) perm[r * 5 + j] = x[r * 5 + order[j]];
        EXPECT_NEAR(max_abs_diff(horizontal_pool(f.c(perm), 4, true).value(), y), 0.0, 1e-12);
    }
}

TEST(Softmax, ClosedForm) {
    const auto y = softmax(Tensor<double>({1, 2}, {0.0, std::log(2.0)}));
    EXPECT_NEAR(y[0], 1.0 / 3, 1e-12);
    EXPECT_NEAR(y[1], 2.0 / 3, 1e-12);
}

TEST(SoftmaxProperty, RowsSumToOneEvenForHugeLogits) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto x = ektest::randn<float>({4, 7}, seed, 300.0);
        const auto y = softmax(x);
        for (std::size_t r = 0; r < 4; ++r) {
            double s = 0;
            for (std::size_t j = 0; j < 7; ++j) {
                EXPECT_TRUE(std::isfinite(y[r * 7 + j]));
                s += y[r * 7 + j];
            }
            EXPECT_NEAR(s, 1.0, 1e-6);
        }
    }
    const auto u = softmax(Tensor<float>({1, 4}, 3.0f));
    for (float v : u.data()) EXPECT_FLOAT_EQ(v, 0.25f);
}

TEST(Activation, ZeroCases) {
    Fixture f;
    EXPECT_DOUBLE_EQ(softsign(f.c(Tensor<double>({1}, 0.0))).value()[0], 0.0);
    EXPECT_DOUBLE_EQ(sigmoid(f.c(Tensor<double>({1}, 0.0))).value()[0], 0.5);
    EXPECT_DOUBLE_EQ(relu(f.c(Tensor<double>({1}, -2.0))).value()[0], 0.0);
}

TEST(Linear, IdentityZeroAndMatmul) {
    Fixture f;
    const auto x = ektest::randn<double>({3, 2}, 1);
    Tensor<double> eye({2, 2});
    eye[0] = eye[3] = 1;
    EXPECT_EQ(max_abs_diff(linear(f.c(x), f.c(eye), f.c(Tensor<double>({2}))).value(), x), 0.0);
    const auto z = linear(f.c(x), f.c(Tensor<double>({4, 2})), f.c(Tensor<double>({4}, {1, 2, 3, 4}))).value();
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(z[r * 4 + j], static_cast<double>(j + 1));
    const auto w = ektest::randn<double>({4, 2}, 2);
    const auto y = linear(f.c(x), f.c(w)).value();
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(y[r * 4 + j], x[r * 2] * w[j * 2] + x[r * 2 + 1] * w[j * 2 + 1], 1e-12);
}

TEST(Norm, EvalBatchNormIdentityAtInit) {
    Fixture f;
    NormState<double> st("bn", 3);
    const auto x = ektest::randn<double>({2, 3, 4, 4}, 3);
    EXPECT_NEAR(max_abs_diff(normalize(f.c(x), NormKind::batch_norm, st, NormMode::eval).value(), x), 0.0, 1e-4);
}

TEST(Norm, TrainBatchNormStandardizesChannels) {
    Tape<double> tape;
    NormState<double> st("bn", 3);
    const auto x = ektest::randn<double>({5, 3, 4, 4}, 4, 3.0);
    const auto y = normalize(tape.constant(x), NormKind::batch_norm, st, NormMode::train).value();
    for (std::size_t c = 0; c < 3; ++c) {
        double s = 0, s2 = 0;
        std::size_t n = 0;
        for (std::size_t b = 0; b < 5; ++b)
            for (std::size_t i = 0; i < 16; ++i) {
                const double v = y[(b * 3 + c) * 16 + i];
                s += v;
                s2 += v * v;
                ++n;
            }
        EXPECT_NEAR(s / n, 0.0, 1e-5);
        EXPECT_NEAR(s2 / n, 1.0, 1e-4);
    }
}

TEST(Norm, LayerNormOfConstantIsZero) {
    Fixture f;
    NormState<double> st("ln", 4);
    for (double v : normalize(f.c(Tensor<double>({2, 4}, 3.5)), NormKind::layer_norm, st, NormMode::train).value().data())
        EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(Tape, QuadraticGradient) {
    Tape<double> tape;
    Var<double> x = tape.variable(Tensor<double>({1}, 3.0));
    Var<double> y = mul(x, x);
    tape.backward(sum(y));
    EXPECT_NEAR(tape.grad(x)[0], 6.0, 1e-12);
}
