#include <gtest/gtest.h>

#include <sstream>

#include "equikernel/config.hpp"

using namespace equikernel;

TEST(Config, DefaultsMatchSmallModel) {
    const RunConfig c;
    const auto b = backbone_config(c, 10);
    EXPECT_EQ(b.widths, (std::array<std::size_t, 4>{32, 64, 128, 256}));
    EXPECT_EQ(b.strides, (std::array<std::size_t, 4>{1, 2, 2, 1}));
    EXPECT_EQ(b.parts, 16u);
    EXPECT_DOUBLE_EQ(b.theta_limit_deg, 40.0);
    EXPECT_EQ(b.reduction, 4u);
    EXPECT_EQ(b.num_classes, 10u);
    EXPECT_DOUBLE_EQ(c.real("train.margin"), 0.2);
    EXPECT_DOUBLE_EQ(c.real("train.beta"), 1.0);
    EXPECT_EQ(c.integer("data.frames"), 30);
}

TEST(Config, MergeAndComments) {
    RunConfig c;
    std::istringstream in("# comment\n backbone.parts = 8  # trailing\n\nsel.branch_mode=dilated\n");
    c.merge(in);
    EXPECT_EQ(c.integer("backbone.parts"), 8);
    EXPECT_EQ(backbone_config(c, 2).branch_mode, BranchMode::dilated);
}

TEST(Config, UnknownKeyNamesTheKey) {
    RunConfig c;
    try {
        c.set("backbone.depth", "3");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.key(), "backbone.depth");
    }
}

TEST(Config, RejectsMalformedAndOutOfRange) {
    RunConfig c;
    EXPECT_THROW(c.set("backbone.parts", "0"), ConfigError);
    EXPECT_THROW(c.set("backbone.parts", "4x"), ConfigError);
    EXPECT_THROW(c.set("roel.theta_limit_deg", "120"), ConfigError);
    EXPECT_THROW(c.set("backbone.use_sel", "maybe"), ConfigError);
    EXPECT_THROW(c.set("sel.branch_mode", "atrous"), ConfigError);
    EXPECT_THROW(c.set("backbone.widths", "1,-2,3,4"), ConfigError);
    EXPECT_THROW(c.set_assignment("train.lr"), ConfigError);
    std::istringstream in("no equals sign\n");
    EXPECT_THROW(c.merge(in), ConfigError);
    c.set("backbone.widths", "1,2,3");
    EXPECT_THROW(backbone_config(c, 2), ConfigError);
}

TEST(Config, HashTracksCanonicalValues) {
    RunConfig a, b;
    EXPECT_EQ(a.hash(), b.hash());
    EXPECT_EQ(a.hash_hex().size(), 16u);
    b.set("train.lr", "0.02");
    EXPECT_NE(a.hash(), b.hash());
    b.set("train.lr", "0.01");
    EXPECT_EQ(a.hash(), b.hash());
    EXPECT_NE(a.canonical().find("roel.theta_limit_deg=40\n"), std::string::npos);
}

TEST(Config, MissingFileIsConfigError) {
    EXPECT_THROW(RunConfig::from_file("/nonexistent/x.cfg"), ConfigError);
}
