#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

struct Run {
    int code = -1;
    std::string out;
};

Run run(const std::string& args) {
    const std::string cmd = std::string("\"") + EQUIKERNEL_CLI + "\" " + args + " 2>&1";
    Run r;
    FILE* p = popen(cmd.c_str(), "r");
    if (!p) return r;
    std::array<char, 4096> buf{};
    std::size_t n;
    while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
    const int status = pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

fs::path scratch(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / ("equikernel_cli_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

const std::string toy = "--set backbone.widths=2,4,8,16 --set sel.reduction_r=2 --set backbone.embed_dim=4 ";

}  // namespace

TEST(Cli, Version) {
    const auto r = run("--version");
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("0.1.0"), std::string::npos);
}

TEST(Cli, UnknownKeyExitsTwoNamingKey) {
    const auto r = run("--set backbone.depth=3 report");
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.out.find("backbone.depth"), std::string::npos);
}

TEST(Cli, OutOfRangeValueExitsTwo) {
    const auto r = run("--set roel.theta_limit_deg=400 report");
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.out.find("roel.theta_limit_deg"), std::string::npos);
}

TEST(Cli, UnknownSubcommandOptionExitsTwo) { EXPECT_EQ(run("report --bogus").code, 2); }

TEST(Cli, ReportListsModulesAndHeaderLine) {
    const auto d = scratch("report");
    const auto r = run("--out " + d.string() + " report");
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("config_hash="), std::string::npos);
    EXPECT_NE(r.out.find("4482754"), std::string::npos);
    EXPECT_NE(r.out.find("baseline_regular_conv"), std::string::npos);
    EXPECT_TRUE(fs::exists(d / "report.csv"));
    EXPECT_TRUE(fs::exists(d / "run.log"));
}

TEST(Cli, ForwardShapes) {
    const auto r = run(toy + "forward --frames 3");
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("layer,shape"), std::string::npos);
    EXPECT_NE(r.out.find("embedding"), std::string::npos);
}

TEST(Cli, RotateAuditAtZeroHasZeroError) {
    const auto r = run(toy + "check-equivariance --transform rotate --trials 5");
    EXPECT_NE(r.out.find("rotated_conv@0,rotate,0,"), std::string::npos) << r.out;
}

TEST(Cli, StrideOneReflectAuditPassesAndNegativeControlFails) {
    const std::string audit = toy + "--set backbone.audit_mode=true ";
    EXPECT_EQ(run(audit + "check-equivariance --transform reflect --trials 2").code, 0);
    const auto bad = run(audit + "--debug-break-equivariance check-equivariance --transform reflect --trials 2");
    EXPECT_EQ(bad.code, 1);
    EXPECT_NE(bad.out.find(",fail"), std::string::npos);
}

TEST(Cli, TrainEvalRoundTripAndMismatch) {
    const auto d = scratch("train");
    const std::string base = toy + "--out " + d.string() + " --set train.iterations=2 --set train.window=3 --set train.p=2 --set train.k=2 ";
    const auto t = run(base + "train-toy --synthetic \"identities=3 seqs=6 frames=4\"");
    ASSERT_EQ(t.code, 0) << t.out;
    ASSERT_TRUE(fs::exists(d / "model.rrsg"));
    std::ifstream log(d / "train_log.csv");
    std::string header;
    std::getline(log, header);
    EXPECT_EQ(header, "iter,lr,total,triplet,ce,active_frac,accuracy,seconds");

    const auto e = run(base + "--set data.identities=3 --set data.frames=4 eval --checkpoint " + (d / "model.rrsg").string() +
                       " --tta reflect --probs 0,1");
    EXPECT_EQ(e.code, 0) << e.out;
    EXPECT_NE(e.out.find("condition,p,rank1,rank5,map,minp"), std::string::npos);
    EXPECT_NE(e.out.find("reflect,1,"), std::string::npos);

    const auto m = run(toy + "--set backbone.use_roel=false eval --checkpoint " + (d / "model.rrsg").string());
    EXPECT_EQ(m.code, 2);
    EXPECT_NE(m.out.find("unexpected tensors:"), std::string::npos) << m.out;
    EXPECT_NE(m.out.find("roel.rot_kernel"), std::string::npos);
}

TEST(Cli, InsufficientIdentitiesExitsTwo) {
    const auto d = scratch("pk");
    const auto r = run(toy + "--out " + d.string() + " --set train.p=4 train-toy --synthetic \"identities=3 seqs=6 frames=4\"");
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.out.find("insufficient identities"), std::string::npos);
}

TEST(Cli, MissingCheckpointExitsTwo) { EXPECT_EQ(run("eval --checkpoint /nonexistent.rrsg").code, 2); }
