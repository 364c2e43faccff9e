#include <gtest/gtest.h>

#include <filesystem>

#include "equikernel/audit.hpp"
#include "equikernel/checkpoint.hpp"

using namespace equikernel;

namespace {

BackboneConfig toy() {
    BackboneConfig cfg;
    cfg.widths = {2, 4, 8, 16};
    cfg.reduction = 2;
    cfg.embed_dim = 4;
    cfg.num_classes = 3;
    return cfg;
}

}  // namespace

TEST(Checkpoint, RoundTripRestoresEmbeddings) {
    auto a = make_model<float>(toy(), 1);
    for (auto& [name, t] : named_tensors(a))
        if (name.find("running_mean") != std::string::npos) (*t)[0] = 0.25f;
    auto b = make_model<float>(toy(), 2);
    const std::string bytes = encode_checkpoint(a);
    apply_checkpoint(b, decode_checkpoint(bytes));
    EXPECT_EQ(encode_checkpoint(b), bytes);
    std::mt19937_64 rng(3);
    const auto x = random_frames(2, 64, 44, rng);
    Tape<float> ta, tb;
    EXPECT_EQ(max_abs_diff(flat_embeddings(forward(ta, x, a, NormMode::eval).head), flat_embeddings(forward(tb, x, b, NormMode::eval).head)),
              0.0f);
}

TEST(Checkpoint, FileRoundTrip) {
    auto a = make_model<float>(toy(), 4);
    const auto path = std::filesystem::temp_directory_path() / "equikernel_test.rrsg";
    save_checkpoint(path, a);
    auto b = make_model<float>(toy(), 5);
    load_checkpoint(path, b);
    EXPECT_EQ(encode_checkpoint(b), encode_checkpoint(a));
    std::filesystem::remove(path);
}

TEST(Checkpoint, NamesAreUniqueAndSorted) {
    auto a = make_model<float>(toy(), 1);
    const auto t = named_tensors(a);
    for (std::size_t i = 1; i < t.size(); ++i) EXPECT_LT(t[i - 1].first, t[i].first);
}

TEST(Checkpoint, MismatchedModelListsMissingTensors) {
    auto full = make_model<float>(toy(), 1);
    auto cfg = toy();
    cfg.use_roel = false;
    auto partial = make_model<float>(cfg, 1);
    try {
        apply_checkpoint(full, decode_checkpoint(encode_checkpoint(partial)));
        FAIL();
    } catch (const CheckpointError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("missing parameters"), std::string::npos);
        EXPECT_NE(msg.find("roel."), std::string::npos);
    }
}

TEST(Checkpoint, ExtraTensorsReported) {
    auto cfg = toy();
    cfg.use_roel = false;
    auto partial = make_model<float>(cfg, 1);
    auto full = make_model<float>(toy(), 1);
    try {
        apply_checkpoint(partial, decode_checkpoint(encode_checkpoint(full)));
        FAIL();
    } catch (const CheckpointError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("unexpected tensors:"), std::string::npos);
        EXPECT_NE(msg.find("roel.rot_kernel"), std::string::npos);
    }
}

TEST(Checkpoint, ShapeMismatchReported) {
    auto a = make_model<float>(toy(), 1);
    auto cfg = toy();
    cfg.embed_dim = 5;
    auto b = make_model<float>(cfg, 1);
    try {
        apply_checkpoint(b, decode_checkpoint(encode_checkpoint(a)));
        FAIL();
    } catch (const CheckpointError& e) {
        EXPECT_NE(std::string(e.what()).find("shape mismatches"), std::string::npos);
    }
}

TEST(Checkpoint, CorruptBytesRejected) {
    auto a = make_model<float>(toy(), 1);
    const std::string bytes = encode_checkpoint(a);
    EXPECT_THROW(decode_checkpoint("XXXX"), CheckpointError);
    EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), CheckpointError);
    EXPECT_THROW(decode_checkpoint(bytes + "!"), CheckpointError);
}
