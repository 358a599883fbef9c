#include <gtest/gtest.h>

#include <array>

#include "scl/masking.hpp"

using namespace scl;

namespace {

// [CLS] followed by n content ids, then pads up to len.
std::vector<std::size_t> caption(std::size_t n, std::size_t len) {
    std::vector<std::size_t> ids{kClsId};
    for (std::size_t i = 0; i < n; ++i) ids.push_back(kReservedCount + i % 20);
    ids.resize(std::max(len, ids.size()), kPadId);
    return ids;
}

}  // namespace

TEST(ImageMask, EightyPercentOfSixteenIsThirteen) {
    Rng rng(1);
    EXPECT_EQ(plan_image_mask(1, 16, 0.8, rng).size(), 13u);
}

TEST(ImageMask, ZeroRatioIsEmpty) {
    Rng rng(1);
    EXPECT_TRUE(plan_image_mask(4, 16, 0.0, rng).empty());
}

TEST(ImageMask, PositiveRatioMasksAtLeastOne) {
    Rng rng(1);
    EXPECT_EQ(plan_image_mask(1, 16, 0.01, rng).size(), 1u);
    EXPECT_EQ(plan_image_mask(1, 16, 1.0, rng).size(), 16u);
}

TEST(ImageMask, CountIsRoundedRatioOverAllFrames) {
    Rng rng(5);
    for (std::size_t frames : {1u, 2u, 4u})
        for (double ratio : {0.1, 0.3, 0.5, 0.7, 0.9}) {
            const auto plan = plan_image_mask(frames, 16, ratio, rng);
            EXPECT_EQ(plan.size(), static_cast<std::size_t>(std::floor(ratio * frames * 16 + 0.5)));
            for (const auto& [f, p] : plan) {
                EXPECT_LT(f, frames);
                EXPECT_LT(p, 16u);
            }
        }
}

TEST(ImageMask, RatioOutsideUnitIntervalThrows) {
    Rng rng(1);
    EXPECT_THROW(plan_image_mask(1, 16, -0.1, rng), ConfigError);
    EXPECT_THROW(plan_image_mask(1, 16, 1.5, rng), ConfigError);
}

TEST(ImageMask, EachPatchSelectedUniformly) {
    Rng rng(2024);
    std::array<std::size_t, 16> hits{};
    const std::size_t draws = 10000;
    for (std::size_t d = 0; d < draws; ++d)
        for (const auto& fp : plan_image_mask(1, 16, 0.5, rng)) ++hits[fp.second];
    for (auto h : hits) EXPECT_NEAR(static_cast<double>(h) / draws, 0.5, 0.02);
}

TEST(MlmMask, TwentyContentTokensSelectThree) {
    Rng rng(3);
    const auto plan = plan_mlm_mask(caption(20, 21), 64, rng);
    EXPECT_EQ(plan.selected_positions().size(), 3u);
    EXPECT_FALSE(plan.selected(0));
}

TEST(MlmMask, ShortCaptionStillSelectsOne) {
    Rng rng(3);
    EXPECT_EQ(plan_mlm_mask(caption(2, 12), 64, rng).selected_positions().size(), 1u);
}

TEST(MlmMask, AllPadCaptionThrows) {
    Rng rng(3);
    EXPECT_THROW(plan_mlm_mask(caption(0, 12), 64, rng), InputError);
}

TEST(MlmMask, ActionFrequenciesAreEightyTenTen) {
    Rng rng(77);
    const auto ids = caption(7, 12);
    std::size_t mask = 0, random = 0, keep = 0, total = 0;
    while (total < 30000) {
        const auto plan = plan_mlm_mask(ids, 64, rng);
        for (auto pos : plan.selected_positions()) {
            switch (plan.text_actions[pos]) {
                case TextAction::MaskToken: ++mask; break;
                case TextAction::RandomToken: ++random; break;
                case TextAction::Keep: ++keep; break;
                default: ADD_FAILURE() << "unexpected action";
            }
            ++total;
        }
    }
    const double n = static_cast<double>(total);
    EXPECT_NEAR(mask / n, 0.80, 0.01);
    EXPECT_NEAR(random / n, 0.10, 0.01);
    EXPECT_NEAR(keep / n, 0.10, 0.01);
}

TEST(MlmMask, RandomReplacementsAreNeverReserved) {
    Rng rng(8);
    const auto ids = caption(11, 12);
    for (int d = 0; d < 5000; ++d) {
        const auto plan = plan_mlm_mask(ids, 64, rng);
        for (auto pos : plan.selected_positions()) {
            EXPECT_EQ(plan.original_ids[pos], ids[pos]);
            if (plan.text_actions[pos] == TextAction::RandomToken) {
                EXPECT_FALSE(is_reserved(plan.replacement[pos]));
                EXPECT_LT(plan.replacement[pos], 64u);
            }
            if (plan.text_actions[pos] == TextAction::MaskToken) EXPECT_EQ(plan.replacement[pos], kMaskId);
            if (plan.text_actions[pos] == TextAction::Keep) EXPECT_EQ(plan.replacement[pos], ids[pos]);
        }
    }
}

TEST(SclTextMask, FortyPercentOfTenIsFourMasks) {
    Rng rng(4);
    const auto ids = caption(10, 12);
    const auto plan = plan_scl_text_mask(ids, 0.4, rng);
    const auto pos = plan.selected_positions();
    ASSERT_EQ(pos.size(), 4u);
    const auto masked = apply_text(plan, ids);
    for (auto p : pos) {
        EXPECT_EQ(plan.text_actions[p], TextAction::SclMask);
        EXPECT_EQ(masked[p], kMaskId);
    }
}

TEST(SclTextMask, FullRatioMasksEveryContentTokenOnly) {
    Rng rng(4);
    const auto ids = caption(7, 12);
    const auto masked = apply_text(plan_scl_text_mask(ids, 1.0, rng), ids);
    EXPECT_EQ(masked[0], kClsId);
    for (std::size_t i = 1; i <= 7; ++i) EXPECT_EQ(masked[i], kMaskId);
    for (std::size_t i = 8; i < 12; ++i) EXPECT_EQ(masked[i], kPadId);
}

TEST(SclTextMask, EqualSeedsGiveEqualPlans) {
    const auto ids = caption(9, 12);
    Rng a(99), b(99);
    for (int i = 0; i < 20; ++i) {
        const auto pa = plan_scl_text_mask(ids, 0.4, a);
        const auto pb = plan_scl_text_mask(ids, 0.4, b);
        EXPECT_EQ(pa.text_actions, pb.text_actions);
        EXPECT_EQ(pa.replacement, pb.replacement);
    }
}

TEST(SclTextMask, ZeroRatioSelectsNothing) {
    Rng rng(4);
    EXPECT_TRUE(plan_scl_text_mask(caption(9, 12), 0.0, rng).selected_positions().empty());
}

TEST(MaskPlan, ApplyThenRevertRestoresCaption) {
    Rng rng(12);
    for (int i = 0; i < 200; ++i) {
        const auto ids = caption(3 + i % 9, 12);
        const auto mlm = plan_mlm_mask(ids, 64, rng);
        EXPECT_EQ(revert_text(mlm, apply_text(mlm, ids)), ids);
        const auto scl = plan_scl_text_mask(ids, 0.4, rng);
        EXPECT_EQ(revert_text(scl, apply_text(scl, ids)), ids);
    }
}

TEST(MaskPlan, LengthMismatchThrows) {
    Rng rng(1);
    const auto plan = plan_scl_text_mask(caption(4, 12), 0.5, rng);
    EXPECT_THROW(apply_text(plan, caption(4, 13)), DimensionError);
    EXPECT_THROW(revert_text(plan, caption(4, 11)), DimensionError);
}
