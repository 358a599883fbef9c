#include <gtest/gtest.h>

#include <random>

#include "scl/objectives.hpp"

using namespace scl;

namespace {

ModelConfig small() {
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
    return c;
}

TrainConfig train_config() {
    TrainConfig t;
    t.model = small();
    t.batch = 4;
    return t;
}

Tensor random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n;
    std::vector<double> v(r * c);
    for (auto& x : v) x = n(rng);
    return Tensor::from({r, c}, v);
}

Batch as_batch(const std::vector<PairedSample>& corpus) {
    Batch b;
    for (const auto& s : corpus) b.push_back(&s);
    return b;
}

void zero(Tensor t) {
    for (auto& x : t.mutable_data()) x = 0.0;
}

}  // namespace

TEST(InfoNce, SingleRowIsExactlyZero) {
    EXPECT_EQ(info_nce(random_matrix(1, 5, 1), random_matrix(1, 5, 2), 0.05).item(), 0.0);
}

TEST(InfoNce, EqualSimilaritiesGiveLogB) {
    for (std::size_t b : {2u, 3u, 7u}) {
        const auto ones = Tensor::filled({b, 4}, 1.0);
        EXPECT_NEAR(info_nce(ones, ones, 0.03).item(), std::log(static_cast<double>(b)), 1e-10);
    }
    EXPECT_NEAR(info_nce(Tensor::filled({2, 3}, 1.0), Tensor::filled({2, 3}, 1.0), 0.5).item(), 0.6931, 1e-4);
}

TEST(InfoNce, OrthogonalPairsAtLowTemperature) {
    const auto eye = Tensor::from({2, 2}, {1, 0, 0, 1});
    const double loss = info_nce(eye, eye, 0.03).item();
    // Each row: log(1 + e^{-1/0.03}).
    EXPECT_NEAR(loss, std::log1p(std::exp(-1.0 / 0.03)), 1e-16);
    EXPECT_NEAR(loss, 3.3e-15, 0.1e-15);
}

TEST(InfoNce, NonNegativeAndInputErrors) {
    for (std::uint64_t s = 0; s < 20; ++s) EXPECT_GE(info_nce(random_matrix(5, 3, s), random_matrix(5, 3, s + 100), 0.1).item(), 0.0);
    EXPECT_THROW(info_nce(Tensor::zeros({2, 3}), random_matrix(2, 3, 1), 0.1), NumericError);
    EXPECT_THROW(info_nce(random_matrix(2, 3, 1), random_matrix(3, 3, 1), 0.1), DimensionError);
    EXPECT_THROW(info_nce(random_matrix(2, 3, 1), random_matrix(2, 3, 1), 0.0), ConfigError);
}

TEST(ContrastiveLoss, MatchesBruteForceDoubleLoop) {
    Model m(small(), 3);
    const auto v = random_matrix(4, 8, 4);
    const auto t = random_matrix(4, 8, 5);
    const double got = contrastive_loss(m, v, t).item();

    const auto pv = m.project_vision(v);
    const auto pt = m.project_text(t);
    const double tau = m.cl_tau().item();
    auto cosine = [](const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
        double dot = 0, na = 0, nb = 0;
        for (std::size_t k = 0; k < a.cols(); ++k) {
            dot += a.at(i, k) * b.at(j, k);
            na += a.at(i, k) * a.at(i, k);
            nb += b.at(j, k) * b.at(j, k);
        }
        return dot / std::sqrt(na * nb);
    };
    auto direction = [&](const Tensor& a, const Tensor& b) {
        double total = 0.0;
        for (std::size_t i = 0; i < 4; ++i) {
            double z = 0.0;
            for (std::size_t n = 0; n < 4; ++n) z += std::exp(cosine(a, i, b, n) / tau);
            total -= std::log(std::exp(cosine(a, i, b, i) / tau) / z);
        }
        return total / 4.0;
    };
    EXPECT_NEAR(got, direction(pv, pt) + direction(pt, pv), 1e-10);
}

TEST(ContrastiveLoss, SymmetricInputsDoubleOneDirection) {
    Model m(small(), 6);
    // Identical projections make the similarity matrix symmetric.
    for (const char* name : {"head.proj_vision.weight", "head.proj_text.weight"}) {
        auto w = m.params().get(name).mutable_data();
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = (i % 9 == 0) ? 1.0 : 0.0;
    }
    const auto x = random_matrix(3, 8, 7);
    const double one = info_nce(m.project_vision(x), m.project_text(x), m.cl_tau().item()).item();
    EXPECT_NEAR(contrastive_loss(m, x, x).item(), 2.0 * one, 1e-12);
    EXPECT_EQ(contrastive_loss(m, random_matrix(1, 8, 1), random_matrix(1, 8, 2)).item(), 0.0);
}

class ObjectiveFixture : public ::testing::Test {
protected:
    void SetUp() override {
        corpus = generate_corpus(4, 1, 31);
        batch = as_batch(corpus);
        for (const auto* s : batch) ids.push_back(s->caption);
    }
    std::vector<PairedSample> corpus;
    Batch batch;
    std::vector<std::vector<std::size_t>> ids;
};

TEST_F(ObjectiveFixture, UniformVtmLogitsGiveLnTwo) {
    Model m(small(), 8);
    zero(m.params().get("head.vtm.weight"));
    zero(m.params().get("head.vtm.bias"));
    const auto base = m.forward_batch(batch, {}, ids);
    EXPECT_NEAR(vtm_loss(m, base, {1, 0, 3, 2}).item(), std::log(2.0), 1e-10);
}

TEST_F(ObjectiveFixture, VtmNegativesMustBeOtherPairs) {
    Model m(small(), 9);
    const auto base = m.forward_batch(batch, {}, ids);
    EXPECT_THROW(vtm_loss(m, base, {0, 2, 3, 1}), ConfigError);
    EXPECT_THROW(vtm_loss(m, base, {1, 0}), DimensionError);
    const auto single = m.forward_batch({batch[0]}, {}, {ids[0]});
    EXPECT_THROW(vtm_loss(m, single, {0}), ConfigError);
}

TEST_F(ObjectiveFixture, DrawnNegativesNeverMatchOwnIndex) {
    Rng rng(10);
    const auto config = train_config();
    for (int i = 0; i < 500; ++i) {
        const auto d = draw_step(batch, config, rng);
        for (std::size_t j = 0; j < d.negatives.size(); ++j) EXPECT_NE(d.negatives[j], j);
    }
}

TEST_F(ObjectiveFixture, UniformMlmLogitsGiveLnVocab) {
    Model m(small(), 11);
    zero(m.params().get("head.mlm.weight"));
    zero(m.params().get("head.mlm.bias"));
    Rng rng(12);
    std::vector<MaskPlan> plans;
    std::vector<VisionTokens> vision;
    for (const auto* s : batch) {
        plans.push_back(plan_mlm_mask(s->caption, 64, rng));
        vision.push_back(m.encode_vision(*s));
    }
    const auto r = mlm_loss(m, vision, batch, plans);
    EXPECT_FALSE(r.skipped);
    EXPECT_EQ(r.targets, 4u);
    EXPECT_NEAR(r.loss.item(), std::log(64.0), 1e-10);
}

TEST_F(ObjectiveFixture, MlmReadsSelectedPositionsOnly) {
    Model m(small(), 13);
    Rng rng(14);
    std::vector<MaskPlan> plans;
    std::vector<VisionTokens> vision;
    for (const auto* s : batch) {
        plans.push_back(plan_mlm_mask(s->caption, 64, rng));
        vision.push_back(m.encode_vision(*s));
    }
    // Oracle: logits at every position, cross-entropy read at the selected ones only.
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto masked = apply_text(plans[i], batch[i]->caption);
        const auto fused = m.fuse(vision[i], m.encode_text(masked), text_key_mask(masked));
        const auto logits = m.mlm_logits(fused.text);
        for (auto pos : plans[i].selected_positions()) {
            double z = 0.0;
            for (std::size_t c = 0; c < 64; ++c) z += std::exp(logits.at(pos, c));
            total -= logits.at(pos, plans[i].original_ids[pos]) - std::log(z);
            ++count;
        }
    }
    EXPECT_NEAR(mlm_loss(m, vision, batch, plans).loss.item(), total / count, 1e-12);
    std::vector<MaskPlan> empty;
    for (const auto* s : batch) {
        MaskPlan p;
        p.reset_text(s->caption);
        empty.push_back(p);
    }
    const auto skipped = mlm_loss(m, vision, batch, empty);
    EXPECT_TRUE(skipped.skipped);
    EXPECT_EQ(skipped.loss.item(), 0.0);
}

TEST_F(ObjectiveFixture, ZeroRatiosMakeRecoveredEqualComplete) {
    Model m(small(), 15);
    Rng rng(16);
    const auto r = scl_loss(m, batch, 0.0, 0.0, rng);
    const auto sim = ops::cosine_similarity(r.vision_recovered, r.vision_complete);
    const auto sim_t = ops::cosine_similarity(r.text_recovered, r.text_complete);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_NEAR(sim.at(i, i), 1.0, 1e-6);
        EXPECT_NEAR(sim_t.at(i, i), 1.0, 1e-6);
    }
    Rng strict_rng(16);
    EXPECT_THROW(scl_loss(m, batch, 0.0, 0.4, strict_rng, {}, true), ConfigError);
}

TEST_F(ObjectiveFixture, SingleSampleSclIsZero) {
    Model m(small(), 17);
    Rng rng(18);
    EXPECT_EQ(scl_loss(m, {batch[0]}, 0.8, 0.4, rng).loss.item(), 0.0);
}

TEST_F(ObjectiveFixture, ExactlyTwoForwardPasses) {
    Model m(small(), 19);
    std::size_t hook_calls = 0;
    m.set_forward_hook([&] { ++hook_calls; });
    Rng rng(20);
    const auto before = m.forward_count();
    scl_loss(m, batch, 0.8, 0.4, rng);
    EXPECT_EQ(m.forward_count() - before, 2u);
    EXPECT_EQ(hook_calls, 2u);
}

// Backward audit: the complete-side globals receive nothing from SCL, and
// replacing them with frozen copies of the same values changes no gradient.
TEST_F(ObjectiveFixture, CompleteSideIsDetached) {
    Model m(small(), 21);
    Rng rng(22);
    std::vector<VisualMask> masks;
    std::vector<MaskPlan> plans;
    for (const auto* s : batch) {
        masks.push_back(plan_image_mask(1, 4, 0.8, rng));
        plans.push_back(plan_scl_text_mask(s->caption, 0.4, rng));
    }
    m.params().zero_grad();
    auto live = scl_loss(m, batch, masks, plans);
    live.loss.backward();
    for (const Tensor* t : {&live.masked_vision_pass.fused_text, &live.masked_text_pass.fused_vision}) {
        if (t->has_grad()) {
            for (double g : t->grad()) EXPECT_EQ(g, 0.0);
        }
    }
    std::vector<std::vector<double>> grads;
    for (const auto& [name, p] : m.params().entries())
        grads.emplace_back(p.has_grad() ? std::vector<double>(p.grad().begin(), p.grad().end())
                                        : std::vector<double>(p.size(), 0.0));

    SclTargets frozen{Tensor::from(live.vision_complete.shape(),
                                   std::vector<double>(live.vision_complete.data().begin(), live.vision_complete.data().end())),
                      Tensor::from(live.text_complete.shape(),
                                   std::vector<double>(live.text_complete.data().begin(), live.text_complete.data().end()))};
    m.params().zero_grad();
    auto fixed = scl_loss(m, batch, masks, plans, {0.03, true, true, &frozen});
    fixed.loss.backward();
    EXPECT_EQ(fixed.loss.item(), live.loss.item());
    std::size_t i = 0;
    for (const auto& [name, p] : m.params().entries()) {
        const std::vector<double> g =
            p.has_grad() ? std::vector<double>(p.grad().begin(), p.grad().end()) : std::vector<double>(p.size(), 0.0);
        EXPECT_EQ(g, grads[i++]) << name;
    }
}

TEST_F(ObjectiveFixture, PartToggles) {
    Model m(small(), 23);
    Rng rng(24);
    std::vector<VisualMask> masks;
    std::vector<MaskPlan> plans;
    for (const auto* s : batch) {
        masks.push_back(plan_image_mask(1, 4, 0.8, rng));
        plans.push_back(plan_scl_text_mask(s->caption, 0.4, rng));
    }
    const auto both = scl_loss(m, batch, masks, plans);
    const auto vision_only = scl_loss(m, batch, masks, plans, {0.03, true, false});
    const auto text_only = scl_loss(m, batch, masks, plans, {0.03, false, true});
    EXPECT_NEAR(both.loss.item(), both.nce_vision + both.nce_language, 1e-12);
    EXPECT_EQ(vision_only.loss.item(), both.nce_vision);
    EXPECT_EQ(text_only.loss.item(), both.nce_language);
    EXPECT_THROW(scl_loss(m, batch, masks, plans, {0.03, false, false}), ConfigError);
}

TEST_F(ObjectiveFixture, TotalIsUnweightedSum) {
    Model m(small(), 25);
    const auto config = train_config();
    Rng rng(26);
    const auto draws = draw_step(batch, config, rng);
    const auto r = total_loss(m, batch, config, draws);
    EXPECT_NEAR(r.total, r.cl + r.vtm + r.mlm + r.scl, 1e-12);
    EXPECT_GT(r.cl, 0.0);
    EXPECT_GT(r.vtm, 0.0);
    EXPECT_GT(r.mlm, 0.0);
    EXPECT_GT(r.scl, 0.0);
}

TEST_F(ObjectiveFixture, OnlyMlmTotalEqualsMlm) {
    Model m(small(), 27);
    auto config = train_config();
    config.objectives = {false, false, true, false, false};
    Rng rng(28);
    const auto r = total_loss(m, batch, config, draw_step(batch, config, rng));
    EXPECT_EQ(r.total, r.mlm);
    EXPECT_EQ(r.cl, 0.0);
    EXPECT_EQ(r.scl, 0.0);
}

TEST_F(ObjectiveFixture, DisablingClLeavesOtherComponents) {
    Model m(small(), 29);
    auto config = train_config();
    Rng a(30), b(30);
    const auto all = total_loss(m, batch, config, draw_step(batch, config, a));
    config.objectives.cl = false;
    const auto no_cl = total_loss(m, batch, config, draw_step(batch, config, b));
    EXPECT_EQ(no_cl.cl, 0.0);
    EXPECT_EQ(no_cl.vtm, all.vtm);
    EXPECT_EQ(no_cl.mlm, all.mlm);
    EXPECT_EQ(no_cl.scl, all.scl);
}

TEST_F(ObjectiveFixture, AllDisabledThrows) {
    Model m(small(), 31);
    auto config = train_config();
    config.objectives = {false, false, false, false, false};
    Rng rng(32);
    EXPECT_THROW(total_loss(m, batch, config, draw_step(batch, config, rng)), ConfigError);
    EXPECT_THROW(config.validate(), ConfigError);
}

TEST_F(ObjectiveFixture, ZeroRatioSclWarns) {
    Model m(small(), 33);
    auto config = train_config();
    config.image_mask_ratio = 0.0;
    Rng rng(34);
    const auto r = total_loss(m, batch, config, draw_step(batch, config, rng));
    ASSERT_FALSE(r.warnings.empty());
    EXPECT_NE(r.warnings.front().find("scl"), std::string::npos);
}
