#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <utility>
#include <vector>

#include "scl/errors.hpp"
#include "scl/synthdata.hpp"

namespace scl {

using Rng = std::mt19937_64;

// None marks positions the plan leaves alone; Keep is an MLM target left unchanged.
enum class TextAction { None, Keep, MaskToken, RandomToken, SclMask };

/// Which visual patches and text positions a masking rule touches.
struct MaskPlan {
    std::set<std::pair<std::size_t, std::size_t>> visual_masked;  // (frame, patch), patch in [0, N)
    std::vector<TextAction> text_actions;   // one per caption position
    std::vector<std::size_t> original_ids;  // caption ids before masking
    std::vector<std::size_t> replacement;   // id written at each selected position

    bool selected(std::size_t pos) const { return text_actions.at(pos) != TextAction::None; }

    std::vector<std::size_t> selected_positions() const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < text_actions.size(); ++i)
            if (selected(i)) out.push_back(i);
        return out;
    }

    void reset_text(const std::vector<std::size_t>& ids) {
        text_actions.assign(ids.size(), TextAction::None);
        original_ids = ids;
        replacement = ids;
    }
};

// floor(x + 0.5), at least 1 when ratio > 0.
inline std::size_t masked_count(double ratio, std::size_t n) {
    if (!(ratio >= 0.0 && ratio <= 1.0)) throw ConfigError("mask ratio must lie in [0, 1]");
    if (ratio == 0.0 || n == 0) return 0;
    const auto k = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 0.5));
    return std::clamp<std::size_t>(k, 1, n);
}

namespace detail {

// k distinct elements of pool, uniformly, via partial Fisher-Yates.
inline std::vector<std::size_t> choose(std::vector<std::size_t> pool, std::size_t k, Rng& rng) {
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
        std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(k);
    std::sort(pool.begin(), pool.end());
    return pool;
}

inline std::vector<std::size_t> content_positions(const std::vector<std::size_t>& ids) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < ids.size(); ++i)
        if (!is_reserved(ids[i])) out.push_back(i);
    if (out.empty()) throw InputError("caption has no content tokens to mask");
    return out;
}

}  // namespace detail

/// round(ratio·M·N) distinct (frame, patch) pairs, uniformly without replacement.
inline std::set<std::pair<std::size_t, std::size_t>> plan_image_mask(std::size_t frames, std::size_t patches,
                                                                      double ratio, Rng& rng) {
    const std::size_t total = frames * patches;
    const std::size_t k = masked_count(ratio, total);
    std::vector<std::size_t> pool(total);
    for (std::size_t i = 0; i < total; ++i) pool[i] = i;
    std::set<std::pair<std::size_t, std::size_t>> out;
    for (auto flat : detail::choose(std::move(pool), k, rng)) out.emplace(flat / patches, flat % patches);
    return out;
}

/// BERT-style selection: 15% of content tokens, then [MASK] / random / keep at 80/10/10.
inline MaskPlan plan_mlm_mask(const std::vector<std::size_t>& ids, std::size_t vocab_size, Rng& rng,
                              double ratio = 0.15) {
    if (vocab_size <= kReservedCount) throw ConfigError("plan_mlm_mask: vocabulary has no content tokens");
    auto content = detail::content_positions(ids);
    const std::size_t k = std::max<std::size_t>(1, masked_count(ratio, content.size()));
    MaskPlan plan;
    plan.reset_text(ids);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> word(kReservedCount, vocab_size - 1);
    for (auto pos : detail::choose(std::move(content), k, rng)) {
        const double u = unit(rng);
        if (u < 0.8) {
            plan.text_actions[pos] = TextAction::MaskToken;
            plan.replacement[pos] = kMaskId;
        } else if (u < 0.9) {
            plan.text_actions[pos] = TextAction::RandomToken;
            plan.replacement[pos] = word(rng);
        } else {
            plan.text_actions[pos] = TextAction::Keep;
        }
    }
    return plan;
}

/// round(ratio·n_content) content positions, each replaced by [MASK].
inline MaskPlan plan_scl_text_mask(const std::vector<std::size_t>& ids, double ratio, Rng& rng) {
    auto content = detail::content_positions(ids);
    const std::size_t k = masked_count(ratio, content.size());
    MaskPlan plan;
    plan.reset_text(ids);
    for (auto pos : detail::choose(std::move(content), k, rng)) {
        plan.text_actions[pos] = TextAction::SclMask;
        plan.replacement[pos] = kMaskId;
    }
    return plan;
}

inline std::vector<std::size_t> apply_text(const MaskPlan& plan, std::vector<std::size_t> ids) {
    if (ids.size() != plan.text_actions.size()) throw DimensionError("apply_text: plan length differs from caption");
    for (std::size_t i = 0; i < ids.size(); ++i)
        if (plan.selected(i)) ids[i] = plan.replacement[i];
    return ids;
}

inline std::vector<std::size_t> revert_text(const MaskPlan& plan, std::vector<std::size_t> masked) {
    if (masked.size() != plan.text_actions.size()) throw DimensionError("revert_text: plan length differs");
    for (std::size_t i = 0; i < masked.size(); ++i)
        if (plan.selected(i)) masked[i] = plan.original_ids[i];
    return masked;
}

}  // namespace scl
