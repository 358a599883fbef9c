#pragma once

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "scl/config.hpp"
#include "scl/encoders.hpp"
#include "scl/masking.hpp"
#include "scl/numerics/ops.hpp"

namespace scl {

// -- InfoNCE -------------------------------------------------------------------

namespace detail {

inline std::vector<std::size_t> diagonal_targets(std::size_t n) {
    std::vector<std::size_t> t(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = i;
    return t;
}

inline void require_pairs(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionError("info_nce: expected two [B × D] matrices, got " + to_string(a.shape()) + " and " +
                             to_string(b.shape()));
    }
}

}  // namespace detail

/// −(1/B) Σᵢ log softmaxₙ(s(Aᵢ, Bₙ)/τ)[i] with s the cosine similarity.
/// Row-max subtraction happens inside the cross-entropy.
inline Tensor info_nce(const Tensor& anchors, const Tensor& targets, double tau) {
    detail::require_pairs(anchors, targets);
    if (!(tau > 0.0)) throw ConfigError("info_nce: tau must be positive");
    auto logits = ops::scale(ops::cosine_similarity(anchors, targets), 1.0 / tau);
    return ops::cross_entropy(logits, detail::diagonal_targets(anchors.rows()));
}

// Learnable-temperature form; tau is a single-element tensor.
inline Tensor info_nce(const Tensor& anchors, const Tensor& targets, const Tensor& tau) {
    detail::require_pairs(anchors, targets);
    if (!(tau.item() > 0.0)) throw ConfigError("info_nce: tau must be positive");
    auto logits = ops::div_scalar(ops::cosine_similarity(anchors, targets), tau);
    return ops::cross_entropy(logits, detail::diagonal_targets(anchors.rows()));
}

// -- per-step random draws -----------------------------------------------------

/// Every random choice one loss evaluation needs, drawn up front so a loss
/// can be re-evaluated exactly (gradient checks, ablations at a fixed batch).
struct StepDraws {
    std::vector<VisualMask> image_masks;  // SCL, per sample
    std::vector<MaskPlan> scl_text;       // SCL, per sample
    std::vector<MaskPlan> mlm;            // MLM, per sample
    std::vector<std::size_t> negatives;   // VTM: vision swapped in for pair i
};

/// Draws in a fixed order regardless of which objectives are enabled, so
/// toggling an objective does not shift the others' randomness.
inline StepDraws draw_step(const Batch& batch, const TrainConfig& config, Rng& rng) {
    StepDraws d;
    const std::size_t n = config.model.patches_per_frame();
    for (const auto* s : batch) d.image_masks.push_back(plan_image_mask(s->frames, n, config.image_mask_ratio, rng));
    for (const auto* s : batch) d.scl_text.push_back(plan_scl_text_mask(s->caption, config.text_mask_ratio, rng));
    for (const auto* s : batch) d.mlm.push_back(plan_mlm_mask(s->caption, config.model.vocab_size, rng, config.mlm_ratio));
    if (batch.size() >= 2) {
        std::uniform_int_distribution<std::size_t> other(0, batch.size() - 2);
        for (std::size_t i = 0; i < batch.size(); ++i) {
            const std::size_t j = other(rng);
            d.negatives.push_back(j >= i ? j + 1 : j);
        }
    }
    return d;
}

// -- objectives ----------------------------------------------------------------

/// NCE_V2T + NCE_T2V on projected encoder globals with the learnable temperature.
inline Tensor contrastive_loss(const Model& model, const Tensor& vision_globals, const Tensor& text_globals) {
    auto v = model.project_vision(vision_globals);
    auto t = model.project_text(text_globals);
    return ops::add(info_nce(v, t, model.cl_tau()), info_nce(t, v, model.cl_tau()));
}

// Fused globals for vision of pair j with the text of pair i.
inline GlobalReps fuse_swapped(const Model& model, const BatchForward& base, std::size_t vision_of, std::size_t text_of) {
    const auto& text_item = base.items[text_of];
    return model.global_reps(model.fuse(base.items[vision_of].vision, text_item.text, text_item.text_mask));
}

/// Cross-entropy of the matching classifier over the B true pairs (label 1)
/// and B pairs whose vision is replaced by that of negatives[i] (label 0).
inline Tensor vtm_loss(const Model& model, const BatchForward& base, const std::vector<std::size_t>& negatives) {
    const std::size_t b = base.items.size();
    if (b < 2) throw ConfigError("VTM needs batch >= 2 to build negatives");
    if (negatives.size() != b) throw DimensionError("vtm_loss: one negative per pair required");
    std::vector<Tensor> neg_v, neg_t;
    for (std::size_t i = 0; i < b; ++i) {
        if (negatives[i] == i || negatives[i] >= b) throw ConfigError("vtm_loss: negative must be another pair");
        auto g = fuse_swapped(model, base, negatives[i], i);
        neg_v.push_back(g.vision);
        neg_t.push_back(g.text);
    }
    auto pos = ops::concat_cols({base.fused_vision, base.fused_text});
    auto neg = ops::concat_cols({stack_rows(neg_v), stack_rows(neg_t)});
    auto logits = model.vtm_logits(ops::concat_rows({pos, neg}));
    std::vector<std::size_t> labels(2 * b, 0);
    for (std::size_t i = 0; i < b; ++i) labels[i] = 1;
    return ops::cross_entropy(logits, labels);
}

struct MlmResult {
    Tensor loss;
    std::size_t targets = 0;
    bool skipped = false;  // no selected position in the whole batch
};

/// Vocabulary cross-entropy on fused text tokens at the plan's selected
/// positions only. vision holds each sample's (unmasked) vision encoding.
inline MlmResult mlm_loss(const Model& model, const std::vector<VisionTokens>& vision, const Batch& batch,
                          const std::vector<MaskPlan>& plans) {
    if (vision.size() != batch.size() || plans.size() != batch.size()) {
        throw DimensionError("mlm_loss: per-sample inputs differ in count");
    }
    std::vector<Tensor> rows;
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto positions = plans[i].selected_positions();
        if (positions.empty()) continue;
        const auto ids = apply_text(plans[i], batch[i]->caption);
        const auto fused = model.fuse(vision[i], model.encode_text(ids), text_key_mask(ids));
        rows.push_back(ops::gather_rows(fused.text, positions));
        for (auto p : positions) labels.push_back(plans[i].original_ids[p]);
    }
    MlmResult out;
    if (rows.empty()) {
        out.loss = Tensor::scalar(0.0);
        out.skipped = true;
        return out;
    }
    out.targets = labels.size();
    out.loss = ops::cross_entropy(model.mlm_logits(stack_rows(rows)), labels);
    return out;
}

// Stand-ins for the complete-side globals. Finite-difference checks use them
// to hold the stop-gradient targets at fixed values while parameters move.
struct SclTargets {
    Tensor vision_complete;  // [B × D]
    Tensor text_complete;    // [B × D]
};

struct SclOptions {
    double tau = 0.03;
    bool mvsc = true;
    bool mlsc = true;
    const SclTargets* frozen = nullptr;
};

struct SclResult {
    Tensor loss;
    double nce_vision = 0.0;    // MVSC term (0 when disabled)
    double nce_language = 0.0;  // MLSC term (0 when disabled)
    BatchForward masked_vision_pass;  // (I_mask, T)
    BatchForward masked_text_pass;    // (I, T_mask)
    Tensor vision_recovered, vision_complete;  // I_Re, I_Co (detached)
    Tensor text_recovered, text_complete;      // T_Re, T_Co (detached)
};

/// Semantic completion: two forward passes, (I_mask, T) and (I, T_mask).
/// Recovered globals of the masked side are pulled toward the detached
/// globals of the complete side, negatives being other complete samples.
inline SclResult scl_loss(Model& model, const Batch& batch, const std::vector<VisualMask>& image_masks,
                          const std::vector<MaskPlan>& text_plans, const SclOptions& options = {}) {
    if (!options.mvsc && !options.mlsc) throw ConfigError("scl_loss: both MVSC and MLSC disabled");
    if (image_masks.size() != batch.size() || text_plans.size() != batch.size()) {
        throw DimensionError("scl_loss: per-sample inputs differ in count");
    }
    std::vector<const VisualMask*> masks;
    std::vector<std::vector<std::size_t>> clean_ids, masked_ids;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        masks.push_back(&image_masks[i]);
        clean_ids.push_back(batch[i]->caption);
        masked_ids.push_back(apply_text(text_plans[i], batch[i]->caption));
    }
    SclResult r;
    r.masked_vision_pass = model.forward_batch(batch, masks, clean_ids);
    r.masked_text_pass = model.forward_batch(batch, {}, masked_ids);
    r.vision_recovered = r.masked_vision_pass.fused_vision;
    r.text_complete = ops::detach(r.masked_vision_pass.fused_text);
    r.vision_complete = ops::detach(r.masked_text_pass.fused_vision);
    r.text_recovered = r.masked_text_pass.fused_text;
    if (options.frozen) {
        r.vision_complete = options.frozen->vision_complete;
        r.text_complete = options.frozen->text_complete;
    }

    std::optional<Tensor> total;
    if (options.mvsc) {
        auto nce = info_nce(r.vision_recovered, r.vision_complete, options.tau);
        r.nce_vision = nce.item();
        total = nce;
    }
    if (options.mlsc) {
        auto nce = info_nce(r.text_recovered, r.text_complete, options.tau);
        r.nce_language = nce.item();
        total = total ? ops::add(*total, nce) : nce;
    }
    r.loss = *total;
    return r;
}

/// Draws the masks from ratios first. With strict set, a zero ratio (which
/// makes the two passes see the same data) is rejected instead of allowed.
inline SclResult scl_loss(Model& model, const Batch& batch, double image_ratio, double text_ratio, Rng& rng,
                          const SclOptions& options = {}, bool strict = false) {
    if (strict && (image_ratio == 0.0 || text_ratio == 0.0)) {
        throw ConfigError("scl_loss: zero mask ratio makes semantic completion degenerate");
    }
    std::vector<VisualMask> image_masks;
    std::vector<MaskPlan> plans;
    const std::size_t n = model.config().patches_per_frame();
    for (const auto* s : batch) image_masks.push_back(plan_image_mask(s->frames, n, image_ratio, rng));
    for (const auto* s : batch) plans.push_back(plan_scl_text_mask(s->caption, text_ratio, rng));
    return scl_loss(model, batch, image_masks, plans, options);
}

// -- total ---------------------------------------------------------------------

struct LossReport {
    double cl = 0.0, vtm = 0.0, mlm = 0.0, scl = 0.0, total = 0.0;
    ObjectiveFlags enabled;
    Tensor total_tensor;
    std::vector<std::string> warnings;
};

/// Unweighted sum of the enabled objectives on one batch.
inline LossReport total_loss(Model& model, const Batch& batch, const TrainConfig& config, const StepDraws& draws,
                             const SclTargets* frozen_scl = nullptr) {
    const auto& flags = config.objectives;
    if (!flags.any()) throw ConfigError("total_loss: every objective is disabled");
    LossReport report;
    report.enabled = flags;
    std::vector<Tensor> terms;

    std::optional<BatchForward> base;
    if (flags.cl || flags.vtm || flags.mlm) {
        std::vector<std::vector<std::size_t>> ids;
        for (const auto* s : batch) ids.push_back(s->caption);
        base = model.forward_batch(batch, {}, ids);
    }
    if (flags.cl) {
        auto l = contrastive_loss(model, base->encoder_vision, base->encoder_text);
        report.cl = l.item();
        terms.push_back(l);
    }
    if (flags.vtm) {
        auto l = vtm_loss(model, *base, draws.negatives);
        report.vtm = l.item();
        terms.push_back(l);
    }
    if (flags.mlm) {
        std::vector<VisionTokens> vision;
        for (const auto& item : base->items) vision.push_back(item.vision);
        auto r = mlm_loss(model, vision, batch, config.share_text_mask ? draws.scl_text : draws.mlm);
        if (r.skipped) {
            report.warnings.push_back("mlm: no masked positions in batch, contributes 0");
        } else {
            report.mlm = r.loss.item();
            terms.push_back(r.loss);
        }
    }
    if (flags.scl()) {
        if (config.image_mask_ratio == 0.0 || config.text_mask_ratio == 0.0) {
            report.warnings.push_back("scl: zero mask ratio, semantic completion is degenerate");
        }
        auto r = scl_loss(model, batch, draws.image_masks, draws.scl_text,
                          {config.scl_tau, flags.mvsc, flags.mlsc, frozen_scl});
        report.scl = r.loss.item();
        terms.push_back(r.loss);
    }
    if (terms.empty()) {
        report.total_tensor = Tensor::scalar(0.0);
    } else {
        report.total_tensor = terms.front();
        for (std::size_t i = 1; i < terms.size(); ++i) report.total_tensor = ops::add(report.total_tensor, terms[i]);
    }
    report.total = report.total_tensor.item();
    if (!std::isfinite(report.total)) throw NumericError("total_loss: non-finite loss");
    return report;
}

}  // namespace scl
