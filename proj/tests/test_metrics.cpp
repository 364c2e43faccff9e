#include <gtest/gtest.h>

#include "equikernel/metrics.hpp"
#include "test_util.hpp"

using namespace equikernel;

TEST(Metrics, HandComputedRanking) {
    // gallery sorted by distance: [id1, id0, id1] -> hits at ranks 1 and 3
    const std::vector<double> d{0.1, 0.2, 0.3};
    const auto m = retrieval_metrics(d, {1}, {1, 0, 1});
    EXPECT_DOUBLE_EQ(m.rank1, 1.0);
    EXPECT_DOUBLE_EQ(m.rank5, 1.0);
    EXPECT_NEAR(m.map, 5.0 / 6.0, 1e-12);
    EXPECT_NEAR(m.minp, 2.0 / 3.0, 1e-12);
}

TEST(Metrics, MissAtRankOne) {
    const auto m = retrieval_metrics({0.5, 0.1, 0.9, 0.8, 0.7, 0.6, 0.4}, {2}, {2, 0, 0, 0, 0, 0, 0});
    // order: 1, 6, 0 -> first hit at rank 3
    EXPECT_DOUBLE_EQ(m.rank1, 0.0);
    EXPECT_DOUBLE_EQ(m.rank5, 1.0);
    EXPECT_NEAR(m.map, 1.0 / 3.0, 1e-12);
}

TEST(Metrics, TiesBreakByGalleryIndex) {
    EXPECT_DOUBLE_EQ(retrieval_metrics({1.0, 1.0}, {7}, {7, 3}).rank1, 1.0);
    EXPECT_DOUBLE_EQ(retrieval_metrics({1.0, 1.0}, {7}, {3, 7}).rank1, 0.0);
}

TEST(Metrics, ProbesWithoutMatchesAreSkipped) {
    const auto m = retrieval_metrics({0.1, 0.2, 0.3, 0.4}, {1, 9}, {1, 2});
    EXPECT_EQ(m.evaluated, 1u);
    EXPECT_EQ(m.skipped, 1u);
    EXPECT_DOUBLE_EQ(m.rank1, 1.0);
}

TEST(Metrics, EmptyGalleryThrows) {
    EXPECT_THROW(retrieval_metrics({}, {1}, {}), std::invalid_argument);
    EXPECT_THROW(retrieval_metrics({0.1}, {1}, {1, 2}), std::invalid_argument);
}

TEST(MetricsProperty, SelfRetrievalIsPerfect) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto g = ektest::randn<double>({6, 4}, seed);
        const auto m = retrieval_eval(g, {0, 1, 2, 3, 4, 5}, g, {0, 1, 2, 3, 4, 5});
        EXPECT_DOUBLE_EQ(m.rank1, 1.0);
        EXPECT_DOUBLE_EQ(m.map, 1.0);
        EXPECT_DOUBLE_EQ(m.minp, 1.0);
    }
}

TEST(MetricsProperty, BoundsAndOrdering) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto p = ektest::randn<double>({5, 3}, seed);
        const auto g = ektest::randn<double>({8, 3}, seed + 100);
        const auto m = retrieval_eval(p, {0, 1, 2, 3, 0}, g, {0, 0, 1, 1, 2, 2, 3, 3});
        EXPECT_LE(m.rank1, m.rank5);
        EXPECT_GT(m.minp, 0.0);
        for (double v : {m.rank1, m.rank5, m.map, m.minp}) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    }
}

TEST(Metrics, PairwiseDistances) {
    const Tensor<double> a({1, 2}, {0, 0}), b({2, 2}, {3, 4, 0, 1});
    const auto d = pairwise_distances(a, b);
    EXPECT_DOUBLE_EQ(d[0], 5.0);
    EXPECT_DOUBLE_EQ(d[1], 1.0);
}
