#include <gtest/gtest.h>

#include <random>

#include "scl/encoders.hpp"
#include "scl/numerics/grad_check.hpp"

using namespace scl;

namespace {

// 16×16 images cut into 8×8 patches: N = 4.
ModelConfig small(std::size_t frames = 1, VisionVariant variant = VisionVariant::FrameCLS) {
    ModelConfig c;
    c.dim = 8;
    c.heads = 2;
    c.patch = 8;
    c.vision_layers = 1;
    c.text_layers = 1;
    c.fusion_layers = 1;
    c.mlp_ratio = 2;
    c.dropout = 0.0;
    c.init_std = 0.3;
    c.max_frames = frames;
    c.variant = variant;
    return c;
}

PairedSample random_sample(std::size_t frames, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    PairedSample s;
    s.frames = frames;
    s.pixels.resize(frames * 3 * 16 * 16);
    for (auto& p : s.pixels) p = u(rng);
    s.caption = tokenize("red square top left and blue bar bottom right", Vocab{});
    return s;
}

void set_values(Tensor t, double value) {
    for (auto& x : t.mutable_data()) x = value;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    EXPECT_EQ(a.shape(), b.shape());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

Tensor rows(const Tensor& t, std::size_t begin, std::size_t end) {
    NoGradGuard guard;
    return ops::slice_rows(t, begin, end);
}

}  // namespace

TEST(Patchify, TwoFramesFourPatchesGiveTwoByFiveByEight) {
    Model m(small(2), 1);
    const auto tokens = m.patchify_embed(random_sample(2, 1));
    EXPECT_EQ(tokens.grid().shape(), (Shape{2, 5, 8}));
    EXPECT_EQ(tokens.cls_row(1), 5u);
    EXPECT_EQ(tokens.patch_row(1, 3), 9u);
}

TEST(Patchify, ZeroImageLeavesOnlyClsValue) {
    Model m(small(1), 2);
    set_values(m.params().get("vision.pos_spatial"), 0.0);
    set_values(m.params().get("vision.pos_temporal"), 0.0);
    auto s = random_sample(1, 2);
    std::fill(s.pixels.begin(), s.pixels.end(), 0.0);
    const auto t = m.patchify_embed(s).tokens;
    const auto cls = m.params().get("vision.cls_token");
    for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(t.at(0, c), cls.at(0, c));
    for (std::size_t r = 1; r < t.rows(); ++r)
        for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(t.at(r, c), 0.0);
}

TEST(Patchify, SamePixelsInTwoFramesDifferByTemporalEmbedding) {
    Model m(small(3), 3);
    auto s = random_sample(3, 3);
    const std::size_t frame = 3 * 16 * 16;
    std::copy(s.pixels.begin(), s.pixels.begin() + frame, s.pixels.begin() + 2 * frame);
    const auto t = m.patchify_embed(s);
    const auto& et = m.temporal_embeddings();
    for (std::size_t j = 0; j < 4; ++j)
        for (std::size_t c = 0; c < 8; ++c) {
            const double diff = t.tokens.at(t.patch_row(0, j), c) - t.tokens.at(t.patch_row(2, j), c);
            EXPECT_NEAR(diff, et.at(0, c) - et.at(2, c), 1e-12);
        }
}

TEST(Patchify, GeometryErrors) {
    Model m(small(1), 4);
    auto s = random_sample(1, 4);
    s.height = 15;
    s.pixels.resize(3 * 15 * 16);
    EXPECT_THROW(m.patchify_embed(s), DimensionError);
    EXPECT_THROW(m.patchify_embed(random_sample(2, 4)), DimensionError);
    auto c = small();
    c.patch = 5;
    EXPECT_THROW(Model(c, 1), ConfigError);
}

TEST(VisualBlock, SingleFrameKeepsShape) {
    Model m(small(1), 5);
    const auto in = m.patchify_embed(random_sample(1, 5));
    const auto out = m.visual_block(0, in);
    EXPECT_EQ(out.tokens.shape(), in.tokens.shape());
}

// Equivariance holds once the temporal embeddings are tied.
TEST(VisualBlock, FramePermutationPermutesOutputs) {
    Model m(small(3), 6);
    auto et = m.params().get("vision.pos_temporal");
    auto d = et.mutable_data();
    for (std::size_t f = 1; f < 3; ++f)
        for (std::size_t c = 0; c < 8; ++c) d[f * 8 + c] = d[c];
    const auto s = random_sample(3, 6);
    const std::size_t frame = 3 * 16 * 16;
    const std::vector<std::size_t> perm{2, 0, 1};
    auto p = s;
    for (std::size_t f = 0; f < 3; ++f)
        std::copy(s.pixels.begin() + perm[f] * frame, s.pixels.begin() + (perm[f] + 1) * frame,
                  p.pixels.begin() + f * frame);
    const auto a = m.encode_vision(s);
    const auto b = m.encode_vision(p);
    for (std::size_t f = 0; f < 3; ++f)
        EXPECT_LE(max_abs_diff(rows(b.tokens, f * 5, f * 5 + 5), rows(a.tokens, perm[f] * 5, perm[f] * 5 + 5)),
                  1e-10);
}

TEST(VisualBlock, PatchesIgnoreOtherFrames) {
    Model m(small(2), 7);
    auto s = random_sample(2, 7);
    const auto in = m.patchify_embed(s);
    for (std::size_t i = 3 * 256; i < s.pixels.size(); ++i) s.pixels[i] = 1.0 - s.pixels[i];
    const auto moved = m.patchify_embed(s);
    const auto a = m.visual_block(0, in);
    const auto b = m.visual_block(0, moved);
    EXPECT_EQ(max_abs_diff(rows(a.tokens, 1, 5), rows(b.tokens, 1, 5)), 0.0);
    // Frame 0's [CLS] does see frame 1 through temporal attention.
    EXPECT_GT(max_abs_diff(rows(a.tokens, 0, 1), rows(b.tokens, 0, 1)), 0.0);
}

TEST(VisualBlock, SingleFrameVariantsAgree) {
    Model frame_cls(small(1, VisionVariant::FrameCLS), 8);
    Model mean_pool(small(1, VisionVariant::MeanPooling), 8);
    const auto s = random_sample(1, 8);
    const auto a = frame_cls.encode_vision(s);
    const auto b = mean_pool.encode_vision(s);
    EXPECT_LE(max_abs_diff(a.tokens, b.tokens), 1e-12);
    const auto text = frame_cls.encode_text(s.caption);
    EXPECT_LE(max_abs_diff(frame_cls.global_reps(a, text).vision, mean_pool.global_reps(b, text).vision), 1e-12);
}

TEST(VisualBlock, GlobalTokenIsAppended) {
    Model m(small(2, VisionVariant::GlobalCLS), 9);
    const auto v = m.encode_vision(random_sample(2, 9));
    EXPECT_TRUE(v.global_token);
    EXPECT_EQ(v.tokens.rows(), 11u);
    EXPECT_EQ(v.grid().shape(), (Shape{2, 5, 8}));
}

TEST(TextEncoder, PadEmbeddingNeverReachesContent) {
    Model m(small(), 10);
    const auto ids = tokenize("green cross bottom left", Vocab{});
    const auto before = m.encode_text(ids);
    auto we = m.params().get("text.word_embed");
    for (std::size_t c = 0; c < 8; ++c) we.mutable_data()[kPadId * 8 + c] += 3.0;
    const auto after = m.encode_text(ids);
    EXPECT_EQ(max_abs_diff(rows(before, 0, 5), rows(after, 0, 5)), 0.0);
}

TEST(TextEncoder, IdenticalCaptionsGiveIdenticalOutputs) {
    Model m(small(), 11);
    const auto ids = tokenize("blue bar top right", Vocab{});
    EXPECT_EQ(max_abs_diff(m.encode_text(ids), m.encode_text(ids)), 0.0);
}

TEST(TextEncoder, WordOrderChangesCls) {
    Model m(small(), 12);
    const Vocab v;
    const auto a = m.encode_text(tokenize("red square top left", v));
    const auto b = m.encode_text(tokenize("square red top left", v));
    EXPECT_GT(max_abs_diff(rows(a, 0, 1), rows(b, 0, 1)), 1e-6);
}

TEST(TextEncoder, InputErrors) {
    Model m(small(), 13);
    EXPECT_THROW(m.encode_text(std::vector<std::size_t>(11, kPadId)), DimensionError);
    auto ids = tokenize("red", Vocab{});
    ids[1] = 64;
    EXPECT_THROW(m.encode_text(ids), VocabError);
}

TEST(Fusion, ShapesAndAttentionRows) {
    Model m(small(2), 14);
    const auto s = random_sample(2, 14);
    const auto v = m.encode_vision(s);
    const auto t = m.encode_text(s.caption);
    const auto f = m.fuse(v, t, text_key_mask(s.caption));
    EXPECT_EQ(f.vision.shape(), v.tokens.shape());
    EXPECT_EQ(f.text.shape(), t.shape());
    ASSERT_EQ(f.text_to_vision.size(), 1u);
    ASSERT_EQ(f.text_to_vision[0].size(), 2u);
    for (const auto& map : f.text_to_vision[0]) {
        EXPECT_EQ(map.rows, 12u);
        EXPECT_EQ(map.cols, 10u);
        for (std::size_t r = 0; r < map.rows; ++r) {
            double sum = 0.0;
            for (std::size_t c = 0; c < map.cols; ++c) sum += map.at(r, c);
            EXPECT_NEAR(sum, 1.0, 1e-12);
        }
    }
}

TEST(Fusion, ZeroCrossValuesIsolateVisionFromText) {
    Model m(small(), 15);
    set_values(m.params().get("fusion.layer0.vision.cross.v.weight"), 0.0);
    const auto s = random_sample(1, 15);
    const auto v = m.encode_vision(s);
    const Vocab vocab;
    const auto a = tokenize("red square top left", vocab);
    const auto b = tokenize("green bar bottom right", vocab);
    const auto fa = m.fuse(v, m.encode_text(a), text_key_mask(a));
    const auto fb = m.fuse(v, m.encode_text(b), text_key_mask(b));
    EXPECT_EQ(max_abs_diff(fa.vision, fb.vision), 0.0);
    EXPECT_GT(max_abs_diff(fa.text, fb.text), 0.0);
}

TEST(Fusion, DeterministicInEvalMode) {
    Model m(small(2), 16);
    const auto s = random_sample(2, 16);
    const auto a = m.forward(s, nullptr, s.caption);
    const auto b = m.forward(s, nullptr, s.caption);
    EXPECT_EQ(max_abs_diff(a.fused.vision, b.fused.vision), 0.0);
    EXPECT_EQ(max_abs_diff(a.fused.text, b.fused.text), 0.0);
}

TEST(Fusion, DimensionMismatchThrows) {
    Model m(small(), 17);
    const auto s = random_sample(1, 17);
    const auto v = m.encode_vision(s);
    EXPECT_THROW(m.fuse(v, Tensor::zeros({12, 4}), std::vector<bool>(12, true)), DimensionError);
    EXPECT_THROW(m.fuse(v, m.encode_text(s.caption), std::vector<bool>(11, true)), DimensionError);
}

TEST(Dropout, TrainingWithoutSourceThrows) {
    auto c = small();
    c.dropout = 0.1;
    Model m(c, 18);
    m.set_training(true);
    EXPECT_THROW(m.encode_text(random_sample(1, 18).caption), ConfigError);
}

TEST(GlobalReps, MeanOfIdenticalClsIsThatCls) {
    std::vector<double> v(3 * 5 * 2, 0.0);
    for (std::size_t f = 0; f < 3; ++f) {
        v[f * 10 + 0] = 0.25;
        v[f * 10 + 1] = -1.5;
    }
    const auto vision = Tensor::from({15, 2}, v);
    const auto text = Tensor::from({2, 2}, {7, 8, 9, 10});
    const auto g = Model::global_reps(vision, 3, 4, false, text, VisionVariant::FrameCLS);
    EXPECT_DOUBLE_EQ(g.vision.at(0, 0), 0.25);
    EXPECT_DOUBLE_EQ(g.vision.at(0, 1), -1.5);
    EXPECT_DOUBLE_EQ(g.text.at(0, 0), 7.0);
    EXPECT_DOUBLE_EQ(g.text.at(0, 1), 8.0);
}

TEST(GlobalReps, AnyFrameClsMovesVisionGlobal) {
    std::mt19937_64 rng(19);
    std::normal_distribution<double> n;
    std::vector<double> v(3 * 5 * 2);
    for (auto& x : v) x = n(rng);
    const auto text = Tensor::zeros({2, 2});
    const auto base = Model::global_reps(Tensor::from({15, 2}, v), 3, 4, false, text, VisionVariant::FrameCLS).vision;
    for (std::size_t f = 0; f < 3; ++f) {
        auto w = v;
        w[f * 10] += 0.1;
        const auto moved = Model::global_reps(Tensor::from({15, 2}, w), 3, 4, false, text, VisionVariant::FrameCLS);
        EXPECT_GT(max_abs_diff(base, moved.vision), 0.0);
    }
}

TEST(GlobalReps, GlobalClsNeedsGlobalToken) {
    const auto vision = Tensor::zeros({5, 2});
    EXPECT_THROW(Model::global_reps(vision, 1, 4, false, Tensor::zeros({2, 2}), VisionVariant::GlobalCLS),
                 ConfigError);
    EXPECT_THROW(Model::global_reps(vision, 1, 4, false, Tensor::zeros({2, 2}), static_cast<VisionVariant>(7)),
                 ConfigError);
}

// patchify -> visual blocks -> fusion -> weighted readout of both globals.
TEST(EndToEnd, GradientsMatchFiniteDifferences) {
    for (auto variant : {VisionVariant::FrameCLS, VisionVariant::GlobalCLS}) {
        Model m(small(2, variant), 20);
        const auto s = random_sample(2, 20);
        VisualMask mask{{0, 1}, {1, 3}};
        std::mt19937_64 rng(21);
        std::normal_distribution<double> n;
        std::vector<double> w(16);
        for (auto& x : w) x = n(rng);
        const auto readout = Tensor::from({1, 16}, w);
        auto loss = [&] {
            const auto v = m.encode_vision(s, &mask);
            const auto t = m.encode_text(s.caption);
            const auto g = m.global_reps(m.fuse(v, t, text_key_mask(s.caption)));
            return ops::sum(ops::mul(ops::concat_cols({g.vision, g.text}), readout));
        };
        const auto r = grad_check(loss, m.params(), {1e-5, 128, 22});
        EXPECT_LE(r.max_rel_error, 1e-4) << to_string(variant) << " worst " << r.worst_param;
    }
}
