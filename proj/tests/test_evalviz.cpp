#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "scl/evalviz.hpp"

using namespace scl;

namespace {

ModelConfig small(std::size_t frames = 1) {
    ModelConfig c;
    c.dim = 8;
    c.heads = 2;
    c.vision_layers = 1;
    c.text_layers = 1;
    c.fusion_layers = 2;
    c.mlp_ratio = 2;
    c.max_frames = frames;
    return c;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

std::filesystem::path scratch(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST(TwoStage, RerankReordersOnlyTheShortlist) {
    const std::vector<double> sim{0.1, 0.9, 0.5, 0.7};
    const auto plain = detail::two_stage_order(sim, 0, [](std::size_t) { return 0.0; });
    EXPECT_EQ(plain, (std::vector<std::size_t>{1, 3, 2, 0}));
    const auto reranked = detail::two_stage_order(sim, 2, [](std::size_t i) { return static_cast<double>(i); });
    EXPECT_EQ(reranked, (std::vector<std::size_t>{3, 1, 2, 0}));
    // Index 0 would win the re-rank but never makes the shortlist.
    const auto shortlist = detail::two_stage_order(sim, 3, [](std::size_t i) { return i == 0 ? 9.0 : -double(i); });
    EXPECT_EQ(shortlist, (std::vector<std::size_t>{1, 2, 3, 0}));
}

TEST(TwoStage, HitAtCountsTopK) {
    const std::vector<std::size_t> order{4, 2, 0, 1, 3};
    EXPECT_EQ(detail::hit_at(order, 4, 1), 1.0);
    EXPECT_EQ(detail::hit_at(order, 0, 1), 0.0);
    EXPECT_EQ(detail::hit_at(order, 0, 3), 1.0);
    EXPECT_EQ(detail::hit_at(order, 3, 10), 1.0);
}

TEST(Retrieve, SinglePairRecallsAreOne) {
    Model m(small(), 1);
    const auto corpus = generate_corpus(1, 1, 1);
    for (std::size_t k : {0u, 1u}) {
        const auto r = retrieve(m, corpus, k);
        for (double v : {r.ir1, r.ir5, r.ir10, r.tr1, r.tr5, r.tr10}) EXPECT_EQ(v, 1.0);
        EXPECT_EQ(r.candidates, 1u);
        EXPECT_EQ(r.k, k);
    }
}

TEST(Retrieve, UntrainedModelIsNearChance) {
    const auto corpus = generate_corpus(64, 1, 2);
    double ir1 = 0.0, tr1 = 0.0;
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
        Model m(ModelConfig{}, seed);
        const auto r = retrieve(m, corpus, 0);
        ir1 += r.ir1 / 4.0;
        tr1 += r.tr1 / 4.0;
    }
    // Chance is 1/64; four models give a standard error near 0.008.
    EXPECT_LT(ir1, 1.0 / 64 + 0.04);
    EXPECT_LT(tr1, 1.0 / 64 + 0.04);
}

TEST(Retrieve, RecallsAreMonotoneAndDeepRecallIgnoresShallowRerank) {
    Model m(small(), 3);
    const auto corpus = generate_corpus(24, 1, 3);
    const auto plain = retrieve(m, corpus, 0);
    const auto reranked = retrieve(m, corpus, 5);
    for (const auto& r : {plain, reranked}) {
        EXPECT_LE(r.ir1, r.ir5);
        EXPECT_LE(r.ir5, r.ir10);
        EXPECT_LE(r.ir10, 1.0);
        EXPECT_LE(r.tr1, r.tr5);
        EXPECT_LE(r.tr5, r.tr10);
        EXPECT_LE(r.tr10, 1.0);
    }
    // Re-ranking permutes the top 5 only, so recall at 5 and 10 is unchanged.
    EXPECT_EQ(plain.ir5, reranked.ir5);
    EXPECT_EQ(plain.ir10, reranked.ir10);
    EXPECT_EQ(plain.tr5, reranked.tr5);
    EXPECT_EQ(plain.tr10, reranked.tr10);
}

TEST(Retrieve, DepthAndCorpusErrors) {
    Model m(small(), 4);
    const auto corpus = generate_corpus(3, 1, 4);
    EXPECT_THROW(retrieve(m, corpus, 4), ConfigError);
    EXPECT_NO_THROW(retrieve(m, corpus, 3));
    EXPECT_THROW(retrieve(m, {}, 0), InputError);
}

TEST(Retrieve, CsvRowLayout) {
    RetrievalResult r{0.5, 0.75, 1.0, 0.25, 0.5, 1.0, 32, 8};
    EXPECT_EQ(std::string(retrieval_csv_header()), "config,seed,candidates,k,ir1,ir5,ir10,tr1,tr5,tr10");
    EXPECT_EQ(retrieval_csv_row("base", 3, r), "base,3,32,8,0.500000,0.750000,1.000000,0.250000,0.500000,1.000000");
}

TEST(Heatmap, DefaultGeometryHeader) {
    Model m(ModelConfig{}, 5);
    const auto sample = generate_corpus(1, 1, 5).front();
    const auto maps = attention_heatmaps(m, sample);
    ASSERT_EQ(maps.size(), 1u);
    const auto pgm = heatmap_pgm(maps[0]);
    EXPECT_EQ(pgm.rfind("P2\n4 4\n255\n", 0), 0u);
    EXPECT_EQ(maps[0].heads.size(), 4u);
    for (double v : maps[0].normalized) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(Heatmap, PooledIsMaxOverHeadsAndNormalizedSpansUnit) {
    Model m(small(), 6);
    const auto maps = attention_heatmaps(m, generate_corpus(1, 1, 6).front());
    const auto& h = maps[0];
    for (std::size_t p = 0; p < h.pooled.size(); ++p) {
        double best = 0.0;
        for (const auto& head : h.heads) best = std::max(best, head[p]);
        EXPECT_EQ(h.pooled[p], best);
    }
    EXPECT_EQ(*std::min_element(h.normalized.begin(), h.normalized.end()), 0.0);
    EXPECT_EQ(*std::max_element(h.normalized.begin(), h.normalized.end()), 1.0);
}

TEST(Heatmap, RetainedAttentionRowsSumToOne) {
    Model m(small(2), 7);
    const auto sample = generate_corpus(1, 2, 7).front();
    const auto f = m.fuse(m.encode_vision(sample), m.encode_text(sample.caption), text_key_mask(sample.caption));
    for (const auto& layer : f.text_to_vision)
        for (const auto& map : layer)
            for (std::size_t r = 0; r < map.rows; ++r) {
                double s = 0.0;
                for (std::size_t c = 0; c < map.cols; ++c) s += map.at(r, c);
                EXPECT_NEAR(s, 1.0, 1e-12);
            }
}

TEST(Heatmap, UniformAttentionNormalizesToZeros) {
    Model m(small(), 8);
    for (auto& x : m.params().get("fusion.layer1.text.cross.k.weight").mutable_data()) x = 0.0;
    const auto maps = attention_heatmaps(m, generate_corpus(1, 1, 8).front());
    const auto& h = maps[0];
    EXPECT_EQ(h.min, h.max);
    for (double v : h.normalized) EXPECT_EQ(v, 0.0);
    const auto pgm = heatmap_pgm(h);
    EXPECT_EQ(pgm, "P2\n4 4\n255\n0 0 0 0\n0 0 0 0\n0 0 0 0\n0 0 0 0\n");
}

TEST(Heatmap, AllPadCaptionThrows) {
    Model m(small(), 9);
    auto sample = generate_corpus(1, 1, 9).front();
    std::fill(sample.caption.begin() + 1, sample.caption.end(), kPadId);
    EXPECT_THROW(attention_heatmaps(m, sample), InputError);
}

TEST(Heatmap, CsvCarriesEveryHeadAndPooledMap) {
    Model m(small(), 10);
    const auto maps = attention_heatmaps(m, generate_corpus(1, 1, 10).front());
    const auto csv = heatmap_csv(maps[0]);
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "map,row,col,value");
    std::size_t rows = 0;
    while (std::getline(in, line)) ++rows;
    EXPECT_EQ(rows, 3u * 16u);
    EXPECT_NE(csv.find("\nhead1,3,3,"), std::string::npos);
    EXPECT_NE(csv.find("\npooled,0,0,"), std::string::npos);
}

TEST(Export, RepeatedRunsAreByteIdentical) {
    const auto dir = scratch("scl_export_test");
    Model m(small(2), 11);
    const auto sample = generate_corpus(1, 2, 11).front();
    const auto a = export_attention(m, sample, (dir / "a").string());
    const auto b = export_attention(m, sample, (dir / "b").string());
    ASSERT_EQ(a.size(), 4u);
    ASSERT_EQ(b.size(), 4u);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_FALSE(slurp(a[i]).empty());
        EXPECT_EQ(slurp(a[i]), slurp(b[i]));
    }
    EXPECT_TRUE(std::filesystem::exists(dir / "a_frame1.pgm"));
    std::filesystem::remove_all(dir);
}
