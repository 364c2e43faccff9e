#include <gtest/gtest.h>

#include <cmath>

#include "equikernel/loss.hpp"
#include "test_util.hpp"

using namespace equikernel;

TEST(CrossEntropy, UniformLogitsGiveLogK) {
    Tape<double> tape;
    const auto l = cross_entropy(tape.constant(Tensor<double>({4, 3, 7})), {0, 1, 2, 6});
    EXPECT_NEAR(l.value().item(), std::log(7.0), 1e-12);
}

TEST(CrossEntropy, ClosedFormTwoClasses) {
    Tape<double> tape;
    std::size_t hits = 0;
    const auto l = cross_entropy(tape.constant(Tensor<double>({1, 1, 2}, {0.0, 1.0})), {1}, &hits);
    EXPECT_NEAR(l.value().item(), std::log(1.0 + std::exp(-1.0)), 1e-12);
    EXPECT_EQ(hits, 1u);
}

TEST(CrossEntropy, RejectsLabelsOutsideRange) {
    Tape<double> tape;
    EXPECT_THROW(cross_entropy(tape.constant(Tensor<double>({2, 1, 3})), {0, 3}), std::invalid_argument);
    EXPECT_THROW(cross_entropy(tape.constant(Tensor<double>({2, 1, 3})), {0}), std::invalid_argument);
}

TEST(Triplet, SeparatedClustersGiveZero) {
    Tape<double> tape;
    // two identities, far apart along the first axis
    const Tensor<double> e({4, 1, 2}, {0, 0, 0, 0.05, 10, 0, 10, 0.05});
    TripletStats st;
    const auto l = triplet_loss(tape.constant(e), {0, 0, 1, 1}, 0.2, &st);
    EXPECT_DOUBLE_EQ(l.value().item(), 0.0);
    EXPECT_EQ(st.active, 0u);
    EXPECT_EQ(st.total, 8u);
}

TEST(Triplet, CollapsedEmbeddingsGiveMargin) {
    Tape<double> tape;
    TripletStats st;
    const auto l = triplet_loss(tape.constant(Tensor<double>({4, 2, 3}, 1.0)), {0, 0, 1, 1}, 0.2, &st);
    EXPECT_NEAR(l.value().item(), 0.2, 1e-6);
    EXPECT_EQ(st.active, st.total);
}

TEST(Triplet, DegenerateBatchRejected) {
    Tape<double> tape;
    EXPECT_THROW(triplet_loss(tape.constant(Tensor<double>({2, 1, 2})), {3, 3}, 0.2), std::invalid_argument);
    EXPECT_THROW(triplet_loss(tape.constant(Tensor<double>({2, 1, 2})), {1, 2, 3}, 0.2), std::invalid_argument);
}

TEST(TripletProperty, NonNegativeAndInvariantToTranslation) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto e = ektest::randn<double>({6, 2, 3}, seed);
        Tape<double> tape;
        const std::vector<int> labels{0, 0, 1, 1, 2, 2};
        const double a = triplet_loss(tape.constant(e), labels, 0.2).value().item();
        EXPECT_GE(a, 0.0);
        for (auto& v : e.data()) v += 3.0;
        EXPECT_NEAR(triplet_loss(tape.constant(e), labels, 0.2).value().item(), a, 1e-9);
    }
}

TEST(CombinedLoss, WeightsCrossEntropyByBeta) {
    Tape<double> tape;
    const auto emb = tape.constant(ektest::randn<double>({4, 2, 3}, 1));
    const auto logits = tape.constant(ektest::randn<double>({4, 2, 5}, 2));
    const std::vector<int> labels{0, 0, 1, 1};
    const auto a = combined_loss(emb, logits, labels, 0.2, 1.0);
    const auto b = combined_loss(emb, logits, labels, 0.2, 2.0);
    EXPECT_NEAR(b.total.value().item() - a.total.value().item(), a.ce.value().item(), 1e-9);
    EXPECT_NEAR(a.total.value().item(), a.triplet.value().item() + a.ce.value().item(), 1e-12);
}
