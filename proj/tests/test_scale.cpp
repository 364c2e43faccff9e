#include <gtest/gtest.h>

#include "equikernel/scale.hpp"
#include "test_util.hpp"

using namespace equikernel;

namespace {

SELParams<double> make_sel(std::array<std::size_t, 4> ch, std::size_t r, BranchMode mode, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 0.5);
    auto init = [&](const Shape& s) {
        Tensor<double> t(s);
        for (auto& v : t.data()) v = n(rng);
        return t;
    };
    return make_sel_params<double>("sel", ch, r, mode, true, init, init);
}

MultiScaleTaps<double> taps(Tape<double>& tape, std::array<std::size_t, 4> ch, std::size_t h, std::size_t w, std::uint64_t seed) {
    return {tape.constant(ektest::randn<double>({1, ch[0], 4 * h, 4 * w}, seed)),
            tape.constant(ektest::randn<double>({1, ch[1], 2 * h, 2 * w}, seed + 1)),
            tape.constant(ektest::randn<double>({1, ch[2], h, w}, seed + 2)),
            tape.constant(ektest::randn<double>({1, ch[3], h, w}, seed + 3))};
}

}  // namespace

TEST(Sel, TableChannelPlan) {
    auto p = make_sel({32, 64, 128, 256}, 4, BranchMode::plain, 1);
    EXPECT_EQ(p.total_channels(), 480u);
    EXPECT_EQ(p.reduced_channels(), 120u);
}

TEST(Sel, AssembleShapesAndConstantTaps) {
    Tape<double> tape;
    tape.set_grad_enabled(false);
    const std::array<std::size_t, 4> ch{2, 3, 4, 5};
    MultiScaleTaps<double> t{tape.constant(Tensor<double>({1, 2, 64, 44}, 1.5)), tape.constant(Tensor<double>({1, 3, 32, 22}, 1.5)),
                             tape.constant(Tensor<double>({1, 4, 16, 11}, 1.5)), tape.constant(Tensor<double>({1, 5, 16, 11}, 1.5))};
    const auto f = assemble_multiscale(t, ch).value();
    EXPECT_EQ(f.shape(), (Shape{1, 14, 16, 11}));
    for (double v : f.data()) EXPECT_NEAR(v, 1.5, 1e-12);
}

TEST(Sel, ReduceIsNonNegative) {
    Tape<double> tape;
    tape.set_grad_enabled(false);
    const std::array<std::size_t, 4> ch{2, 2, 2, 2};
    auto p = make_sel(ch, 2, BranchMode::plain, 2);
    const auto f = cross_channel_reduce(assemble_multiscale(taps(tape, ch, 4, 3, 3), ch), p, NormMode::eval).value();
    EXPECT_EQ(f.dim(1), 4u);
    for (double v : f.data()) EXPECT_GE(v, 0.0);
}

TEST(Sel, ReduceMatchesMatmulOracle) {
    Tape<double> tape;
    tape.set_grad_enabled(false);
    const std::array<std::size_t, 4> ch{2, 2, 2, 2};
    auto p = make_sel(ch, 2, BranchMode::plain, 4);
    const auto x = ektest::randn<double>({1, 8, 3, 2}, 5);
    const auto y = cross_channel_reduce(tape.constant(x), p, NormMode::eval).value();
    for (std::size_t o = 0; o < 4; ++o)
        for (std::size_t i = 0; i < 6; ++i) {
            double s = 0;
            for (std::size_t c = 0; c < 8; ++c) s += p.reduce_w.value[o * 8 + c] * x[c * 6 + i];
            EXPECT_NEAR(y[o * 6 + i], std::max(0.0, s / std::sqrt(1.0 + 1e-5)), 1e-9);
        }
}

TEST(Sel, AttentionRowsSumToOneAndTokenCount) {
    Tape<double> tape;
    tape.set_grad_enabled(false);
    const std::array<std::size_t, 4> ch{2, 2, 2, 2};
    auto p = make_sel(ch, 2, BranchMode::plain, 6);
    AttentionTrace<double> tr;
    cross_scale_attention(tape.constant(ektest::randn<double>({1, 4, 16, 11}, 7)), p, &tr);
    const auto& a = tr.weights.value();
    ASSERT_EQ(a.shape(), (Shape{1, 176, 176}));
    for (std::size_t r = 0; r < 176; ++r) {
        double s = 0;
        for (std::size_t j = 0; j < 176; ++j) s += a[r * 176 + j];
        EXPECT_NEAR(s, 1.0, 1e-6);
    }
}

TEST(Sel, IdenticalValueTokensPassThroughAttention) {
    Tape<double> tape;
    tape.set_grad_enabled(false);
    const std::array<std::size_t, 4> ch{2, 2, 2, 2};
    auto p = make_sel(ch, 2, BranchMode::plain, 8);
    // Zero s3 weights make every value token equal to its bias.
    for (auto& v : p.s3_w.value.data()) v = 0;
    p.s3_b.value = Tensor<double>({4}, {0.3, -0.2, 0.5, 1.0});
    AttentionTrace<double> tr;
    cross_scale_attention(tape.constant(ektest::randn<double>({1, 4, 3, 3}, 9)), p, &tr);
    // output before the FFN: every query sees v = Wv b + bv
    const auto& o = tr.attended.value();
    for (std::size_t q = 1; q < 9; ++q)
        for (std::size_t d = 0; d < 4; ++d) EXPECT_NEAR(o[q * 4 + d], o[d], 1e-12);
}

TEST(Sel, IdentityOnTapsAtInit) {
    Tape<double> tape;
    tape.set_grad_enabled(false);
    const std::array<std::size_t, 4> ch{2, 2, 2, 2};
    for (BranchMode mode : {BranchMode::plain, BranchMode::dilated}) {
        auto p = make_sel(ch, 2, mode, 10);
        const auto t = taps(tape, ch, 4, 3, 11);
        const auto out = scale_equivariance(t, p, NormMode::eval);
        const auto f = assemble_multiscale(t, ch);
        for (std::size_t i = 0; i < 4; ++i) {
            EXPECT_EQ(out[i].shape(), (Shape{1, 2, 4, 3}));
            EXPECT_EQ(max_abs_diff(out[i].value(), slice(f, -3, 2 * i, 2 * i + 2).value()), 0.0);
        }
    }
}

TEST(Sel, ZeroGateConvHalvesSplit) {
    Tape<double> tape;
    tape.set_grad_enabled(false);
    const std::array<std::size_t, 4> ch{2, 2, 2, 2};
    auto p = make_sel(ch, 2, BranchMode::plain, 12);
    const auto fs = ektest::uniform<double>({1, 4, 3, 3}, 13);
    for (auto& v : p.expand_w.value.data()) v = 0.4;
    std::array<Var<double>, 4> residual;
    for (auto& r : residual) r = tape.constant(ektest::randn<double>({1, 2, 3, 3}, 14));
    const auto out = gate_and_split(tape.constant(fs), residual, p, NormMode::eval);
    Tape<double> t2;
    t2.set_grad_enabled(false);
    auto e = relu(normalize(conv2d(t2.constant(fs), t2.constant(p.expand_w.value), ConvSpec{1, 1, 0, 1}), NormKind::batch_norm, p.expand_bn,
                            NormMode::eval)).value();
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t k = 0; k < 18; ++k) EXPECT_NEAR(out[i].value()[k], 0.5 * e[i * 18 + k] + residual[i].value()[k], 1e-12);
}

TEST(SelProperty, GatesStayInsideUnitInterval) {
    Tape<double> tape;
    tape.set_grad_enabled(false);
    const std::array<std::size_t, 4> ch{2, 2, 2, 2};
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto p = make_sel(ch, 2, BranchMode::plain, seed);
        for (std::size_t i = 0; i < 4; ++i) p.gate_w[i].value = ektest::randn<double>(p.gate_w[i].value.shape(), seed * 31 + i, 1.5);
        const auto split = ektest::randn<double>({1, 2, 4, 4}, seed + 50);
        for (std::size_t i = 0; i < 4; ++i) {
            const auto g = sigmoid(normalize(conv2d(tape.constant(split), tape.constant(p.gate_w[i].value), ConvSpec{1, 1, 0, 1}),
                                             NormKind::batch_norm, p.gate_bn[i], NormMode::eval))
                               .value();
            for (double v : g.data()) {
                EXPECT_GT(v, 0.0);
                EXPECT_LT(v, 1.0);
            }
        }
    }
}

TEST(Sel, RejectsIndivisibleReduction) {
    EXPECT_THROW(make_sel({2, 2, 2, 3}, 2, BranchMode::plain, 1), std::invalid_argument);
}
