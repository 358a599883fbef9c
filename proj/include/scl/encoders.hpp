#pragma once

#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "scl/config.hpp"
#include "scl/masking.hpp"
#include "scl/numerics/attention.hpp"
#include "scl/numerics/ops.hpp"
#include "scl/numerics/params.hpp"
#include "scl/synthdata.hpp"

namespace scl {

using VisualMask = std::set<std::pair<std::size_t, std::size_t>>;

/// Vision token sequence: per frame a [CLS] row followed by N patch rows,
/// frames stacked, optionally followed by one global token (GlobalCLS variant).
struct VisionTokens {
    Tensor tokens;  // [(M·(N+1) + global) × D]
    std::size_t frames = 1;
    std::size_t patches = 0;
    bool global_token = false;

    std::size_t tokens_per_frame() const { return patches + 1; }
    std::size_t frame_rows() const { return frames * tokens_per_frame(); }
    std::size_t cls_row(std::size_t frame) const { return frame * tokens_per_frame(); }
    std::size_t patch_row(std::size_t frame, std::size_t patch) const { return cls_row(frame) + 1 + patch; }
    std::size_t global_row() const { return frame_rows(); }

    // M × (N+1) × D view of the frame tokens.
    Tensor grid() const {
        auto rows = global_token ? ops::slice_rows(tokens, 0, frame_rows()) : tokens;
        return ops::reshape(rows, {frames, tokens_per_frame(), tokens.cols()});
    }
};

/// Row-major attention probabilities of one head.
struct AttentionMap {
    std::size_t rows = 0, cols = 0;
    std::vector<double> weights;
    double at(std::size_t r, std::size_t c) const { return weights[r * cols + c]; }
};

struct FusionOutput {
    Tensor vision;  // same row layout as the VisionTokens that went in
    Tensor text;    // [K × D]
    std::size_t frames = 1;
    std::size_t patches = 0;
    bool global_token = false;
    // [layer][head]: text queries over vision keys.
    std::vector<std::vector<AttentionMap>> text_to_vision;
};

struct GlobalReps {
    Tensor vision;  // [1 × D]
    Tensor text;    // [1 × D]
};

struct ForwardResult {
    VisionTokens vision;  // vision encoder output
    Tensor text;          // text encoder output
    std::vector<bool> text_mask;
    FusionOutput fused;
    GlobalReps encoder_globals;
    GlobalReps fused_globals;
};

using Batch = std::vector<const PairedSample*>;

/// One forward pass over a batch; globals stacked row per sample.
struct BatchForward {
    std::vector<ForwardResult> items;
    Tensor encoder_vision, encoder_text;  // [B × D]
    Tensor fused_vision, fused_text;      // [B × D]
};

inline Tensor stack_rows(const std::vector<Tensor>& rows) { return ops::concat_rows(std::span<const Tensor>(rows)); }

namespace layers {

struct Linear {
    Tensor weight;  // [in × out]
    Tensor bias;    // [out], may be undefined
    Tensor operator()(const Tensor& x) const {
        auto y = ops::matmul(x, weight);
        return bias.defined() ? ops::add_bias(y, bias) : y;
    }
};

struct Norm {
    Tensor gamma, beta;
    double eps = 1e-6;
    Tensor operator()(const Tensor& x) const { return ops::layer_norm(x, gamma, beta, eps); }
};

struct Attention {
    Linear q, k, v, o;
};

struct FeedForward {
    Linear up, down;
    Tensor operator()(const Tensor& x) const { return down(ops::gelu(up(x))); }
};

struct EncoderLayer {
    Norm ln_attn, ln_ffn;
    Attention attn;
    FeedForward ffn;
};

struct FusionStream {
    Norm ln_self, ln_cross, ln_ffn;
    Attention self_attn, cross_attn;
    FeedForward ffn;
};

struct FusionLayer {
    FusionStream vision, text;
};

}  // namespace layers

/// Dual uni-modal encoders, two-stream fusion encoder and task heads.
class Model {
public:
    Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
        config_.validate();
        Rng rng(seed);
        build(rng);
    }

    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    const ModelConfig& config() const { return config_; }
    ParamRegistry& params() { return params_; }
    const ParamRegistry& params() const { return params_; }

    // Dropout is active only in training mode and then needs a random source.
    void set_training(bool training, Rng* dropout_rng = nullptr) {
        training_ = training;
        dropout_rng_ = dropout_rng;
    }
    bool training() const { return training_; }

    // Called once per full forward pass (vision + text + fusion).
    void set_forward_hook(std::function<void()> hook) { forward_hook_ = std::move(hook); }
    std::size_t forward_count() const { return forward_count_; }

    const Tensor& cl_tau() const { return cl_tau_; }
    Tensor& cl_tau() { return cl_tau_; }

    // Parameters trained at the fusion learning rate.
    static bool is_fusion_param(const std::string& name) {
        return name.rfind("fusion.", 0) == 0 || name.rfind("head.vtm.", 0) == 0 || name.rfind("head.mlm.", 0) == 0;
    }

    // -- vision -------------------------------------------------------------

    /// g⁰_ij = v_ij + E^t_i + E^s_j with a learned [CLS] per frame; masked
    /// patches use the learned mask embedding in place of v_ij.
    VisionTokens patchify_embed(const PairedSample& sample, const VisualMask* mask = nullptr) const {
        const auto& c = config_;
        if (sample.height % c.patch || sample.width % c.patch) {
            throw DimensionError("patchify: image " + std::to_string(sample.height) + "x" +
                                 std::to_string(sample.width) + " not divisible by patch " + std::to_string(c.patch));
        }
        if (sample.height != c.height || sample.width != c.width || sample.channels != c.channels) {
            throw DimensionError("patchify: sample geometry does not match the model");
        }
        if (sample.frames == 0 || sample.frames > c.max_frames) {
            throw DimensionError("patchify: " + std::to_string(sample.frames) + " frames exceed model.max_frames " +
                                 std::to_string(c.max_frames));
        }
        const std::size_t m = sample.frames, n = c.patches_per_frame(), p = c.patch;
        const std::size_t gc = c.grid_cols(), patch_len = c.channels * p * p;

        std::vector<double> flat(m * n * patch_len);
        for (std::size_t f = 0; f < m; ++f)
            for (std::size_t j = 0; j < n; ++j) {
                const std::size_t py = j / gc, px = j % gc;
                double* out = flat.data() + (f * n + j) * patch_len;
                for (std::size_t ch = 0; ch < c.channels; ++ch)
                    for (std::size_t y = 0; y < p; ++y)
                        for (std::size_t x = 0; x < p; ++x)
                            *out++ = sample.pixel(f, ch, py * p + y, px * p + x);
            }
        auto patches = Tensor::from({m * n, patch_len}, std::move(flat));
        auto projected = patch_embed_(patches);

        // Row table: [CLS], the M·N projected patches, the mask embedding.
        auto table = ops::concat_rows({cls_token_, projected, mask_token_});
        const std::size_t mask_row = 1 + m * n;
        std::vector<std::size_t> token_src, spatial, temporal;
        for (std::size_t f = 0; f < m; ++f) {
            for (std::size_t j = 0; j <= n; ++j) {
                if (j == 0) {
                    token_src.push_back(0);
                } else {
                    const bool hidden = mask && mask->contains({f, j - 1});
                    token_src.push_back(hidden ? mask_row : 1 + f * n + (j - 1));
                }
                spatial.push_back(j);
                temporal.push_back(f);
            }
        }
        auto g = ops::add(ops::add(ops::gather_rows(table, token_src), ops::gather_rows(pos_spatial_, spatial)),
                          ops::gather_rows(pos_temporal_, temporal));

        VisionTokens out{g, m, n, false};
        if (c.variant == VisionVariant::GlobalCLS) {
            out.tokens = ops::concat_rows({g, global_token_});
            out.global_token = true;
        }
        return out;
    }

    /// One VisualBlock. FrameCLS: each frame [CLS] attends over all M·(N+1)
    /// tokens (temporal), patches attend within their frame (spatial). The
    /// other variants keep every frame's [CLS] inside its own frame; GlobalCLS
    /// adds a global token attending over everything.
    VisionTokens visual_block(std::size_t layer, const VisionTokens& in) const {
        const auto& L = vision_layers_.at(layer);
        const Tensor& x = in.tokens;
        const std::size_t per = in.tokens_per_frame(), frame_rows = in.frame_rows();
        auto h = L.ln_attn(x);
        auto q = L.attn.q(h), k = L.attn.k(h), v = L.attn.v(h);

        std::vector<Tensor> pieces;
        std::vector<std::size_t> order(x.rows());
        std::size_t assembled = 0;
        auto frame_keys = [&](const Tensor& t, std::size_t f) { return ops::slice_rows(t, f * per, (f + 1) * per); };

        if (config_.variant == VisionVariant::FrameCLS) {
            std::vector<std::size_t> cls_rows(in.frames);
            for (std::size_t f = 0; f < in.frames; ++f) cls_rows[f] = in.cls_row(f);
            auto all_k = in.global_token ? ops::slice_rows(k, 0, frame_rows) : k;
            auto all_v = in.global_token ? ops::slice_rows(v, 0, frame_rows) : v;
            pieces.push_back(multi_head(ops::gather_rows(q, cls_rows), all_k, all_v));
            for (std::size_t f = 0; f < in.frames; ++f) order[in.cls_row(f)] = assembled++;
            for (std::size_t f = 0; f < in.frames; ++f) {
                auto qp = ops::slice_rows(q, f * per + 1, (f + 1) * per);
                pieces.push_back(multi_head(qp, frame_keys(k, f), frame_keys(v, f)));
                for (std::size_t j = 0; j < in.patches; ++j) order[in.patch_row(f, j)] = assembled++;
            }
        } else {
            for (std::size_t f = 0; f < in.frames; ++f) {
                pieces.push_back(multi_head(frame_keys(q, f), frame_keys(k, f), frame_keys(v, f)));
                for (std::size_t j = 0; j < per; ++j) order[f * per + j] = assembled++;
            }
        }
        if (in.global_token) {
            pieces.push_back(multi_head(ops::slice_rows(q, frame_rows, frame_rows + 1), k, v));
            order[in.global_row()] = assembled++;
        }
        auto mixed = ops::gather_rows(ops::concat_rows(std::span<const Tensor>(pieces)), order);
        auto y = ops::add(x, drop(L.attn.o(mixed)));
        y = ops::add(y, drop(L.ffn(L.ln_ffn(y))));
        VisionTokens out = in;
        out.tokens = y;
        return out;
    }

    VisionTokens encode_vision(const PairedSample& sample, const VisualMask* mask = nullptr) const {
        auto tokens = patchify_embed(sample, mask);
        for (std::size_t l = 0; l < vision_layers_.size(); ++l) tokens = visual_block(l, tokens);
        tokens.tokens = vision_norm_(tokens.tokens);
        return tokens;
    }

    // -- text ---------------------------------------------------------------

    /// Word + positional embeddings through bidirectional layers; [PAD] keys hidden.
    Tensor encode_text(const std::vector<std::size_t>& ids) const {
        if (ids.size() != config_.max_text_len) {
            throw DimensionError("encode_text: expected " + std::to_string(config_.max_text_len) + " ids, got " +
                                 std::to_string(ids.size()));
        }
        for (auto id : ids) {
            if (id >= config_.vocab_size) throw VocabError("encode_text: id " + std::to_string(id) + " outside vocabulary");
        }
        std::vector<std::size_t> positions(ids.size());
        std::iota(positions.begin(), positions.end(), 0);
        auto x = ops::add(ops::embedding(word_embed_, ids), ops::gather_rows(pos_text_, positions));
        const auto mask = text_key_mask(ids);
        for (const auto& L : text_layers_) {
            auto h = L.ln_attn(x);
            x = ops::add(x, drop(L.attn.o(multi_head(L.attn.q(h), L.attn.k(h), L.attn.v(h), mask))));
            x = ops::add(x, drop(L.ffn(L.ln_ffn(x))));
        }
        return text_norm_(x);
    }

    // -- fusion -------------------------------------------------------------

    /// Per layer: self-attention in each stream, then symmetric cross-attention
    /// (vision queries over text keys and text queries over vision keys), then
    /// feed-forward. Text→vision attention probabilities are kept per layer and head.
    FusionOutput fuse(const VisionTokens& vision, const Tensor& text, const std::vector<bool>& text_mask) const {
        if (vision.tokens.cols() != config_.dim || text.cols() != config_.dim) {
            throw DimensionError("fuse: inputs must be " + std::to_string(config_.dim) + "-dimensional");
        }
        if (text_mask.size() != text.rows()) throw DimensionError("fuse: text mask length differs from text rows");
        FusionOutput out;
        out.frames = vision.frames;
        out.patches = vision.patches;
        out.global_token = vision.global_token;
        Tensor v = vision.tokens, t = text;
        for (const auto& L : fusion_layers_) {
            {
                auto hv = L.vision.ln_self(v);
                v = ops::add(v, drop(L.vision.self_attn.o(
                                    multi_head(L.vision.self_attn.q(hv), L.vision.self_attn.k(hv), L.vision.self_attn.v(hv)))));
                auto ht = L.text.ln_self(t);
                t = ops::add(t, drop(L.text.self_attn.o(multi_head(L.text.self_attn.q(ht), L.text.self_attn.k(ht),
                                                                   L.text.self_attn.v(ht), text_mask))));
            }
            {
                auto hv = L.vision.ln_cross(v);
                auto ht = L.text.ln_cross(t);
                const auto& cv = L.vision.cross_attn;
                const auto& ct = L.text.cross_attn;
                auto v_delta = cv.o(multi_head(cv.q(hv), cv.k(ht), cv.v(ht), text_mask));
                std::vector<AttentionMap> maps;
                auto t_delta = ct.o(multi_head(ct.q(ht), ct.k(hv), ct.v(hv), {}, &maps));
                out.text_to_vision.push_back(std::move(maps));
                v = ops::add(v, drop(v_delta));
                t = ops::add(t, drop(t_delta));
            }
            v = ops::add(v, drop(L.vision.ffn(L.vision.ln_ffn(v))));
            t = ops::add(t, drop(L.text.ffn(L.text.ln_ffn(t))));
        }
        out.vision = fusion_vision_norm_(v);
        out.text = fusion_text_norm_(t);
        return out;
    }

    /// Vision global: mean of frame [CLS] rows (FrameCLS, MeanPooling) or the
    /// global token (GlobalCLS). Text global: the [CLS] row.
    static GlobalReps global_reps(const Tensor& vision_rows, std::size_t frames, std::size_t patches, bool global_token,
                                  const Tensor& text_rows, VisionVariant variant) {
        GlobalReps out;
        const std::size_t per = patches + 1;
        switch (variant) {
            case VisionVariant::FrameCLS:
            case VisionVariant::MeanPooling: {
                std::vector<std::size_t> cls(frames);
                for (std::size_t f = 0; f < frames; ++f) cls[f] = f * per;
                out.vision = ops::mean_rows(ops::gather_rows(vision_rows, cls));
                break;
            }
            case VisionVariant::GlobalCLS:
                if (!global_token) throw ConfigError("global_reps: GlobalCLS needs a global token");
                out.vision = ops::slice_rows(vision_rows, frames * per, frames * per + 1);
                break;
            default: throw ConfigError("global_reps: unknown vision variant");
        }
        out.text = ops::slice_rows(text_rows, 0, 1);
        return out;
    }

    GlobalReps global_reps(const FusionOutput& f) const {
        return global_reps(f.vision, f.frames, f.patches, f.global_token, f.text, config_.variant);
    }
    GlobalReps global_reps(const VisionTokens& v, const Tensor& text) const {
        return global_reps(v.tokens, v.frames, v.patches, v.global_token, text, config_.variant);
    }

    /// Full pass over a batch: both encoders, fusion and globals. Each call
    /// counts as one model forward. masks may be empty (nothing hidden) or
    /// hold one entry per sample, null meaning unmasked.
    BatchForward forward_batch(const Batch& batch, const std::vector<const VisualMask*>& masks,
                               const std::vector<std::vector<std::size_t>>& ids) {
        if (batch.empty()) throw InputError("forward_batch: empty batch");
        if (ids.size() != batch.size() || (!masks.empty() && masks.size() != batch.size())) {
            throw DimensionError("forward_batch: per-sample inputs differ in count");
        }
        ++forward_count_;
        if (forward_hook_) forward_hook_();
        BatchForward out;
        std::vector<Tensor> ev, et, fv, ft;
        for (std::size_t i = 0; i < batch.size(); ++i) {
            ForwardResult r;
            r.vision = encode_vision(*batch[i], masks.empty() ? nullptr : masks[i]);
            r.text = encode_text(ids[i]);
            r.text_mask = text_key_mask(ids[i]);
            r.encoder_globals = global_reps(r.vision, r.text);
            r.fused = fuse(r.vision, r.text, r.text_mask);
            r.fused_globals = global_reps(r.fused);
            ev.push_back(r.encoder_globals.vision);
            et.push_back(r.encoder_globals.text);
            fv.push_back(r.fused_globals.vision);
            ft.push_back(r.fused_globals.text);
            out.items.push_back(std::move(r));
        }
        out.encoder_vision = stack_rows(ev);
        out.encoder_text = stack_rows(et);
        out.fused_vision = stack_rows(fv);
        out.fused_text = stack_rows(ft);
        return out;
    }

    ForwardResult forward(const PairedSample& sample, const VisualMask* mask, const std::vector<std::size_t>& ids) {
        return std::move(forward_batch({&sample}, {mask}, {ids}).items.front());
    }

    // -- heads --------------------------------------------------------------

    Tensor project_vision(const Tensor& v) const { return proj_vision_(v); }
    Tensor project_text(const Tensor& t) const { return proj_text_(t); }
    // [n × 2D] concat(V, T) -> [n × 2]; column 1 is the "matched" logit.
    Tensor vtm_logits(const Tensor& pairs) const { return vtm_head_(pairs); }
    Tensor mlm_logits(const Tensor& tokens) const { return mlm_head_(tokens); }

    // -- curriculum ---------------------------------------------------------

    const Tensor& temporal_embeddings() const { return pos_temporal_; }

private:
    Tensor drop(const Tensor& x) const {
        if (!training_ || config_.dropout <= 0.0) return x;
        if (!dropout_rng_) throw ConfigError("training mode needs a dropout random source");
        return ops::dropout(x, config_.dropout, *dropout_rng_);
    }

    // Heads split by column blocks; inputs already projected. Optionally copies
    // each head's attention probabilities into maps.
    Tensor multi_head(const Tensor& q, const Tensor& k, const Tensor& v, const std::vector<bool>& key_mask = {},
                      std::vector<AttentionMap>* maps = nullptr) const {
        const std::size_t heads = config_.heads, width = config_.dim / heads;
        std::vector<Tensor> outs;
        outs.reserve(heads);
        for (std::size_t hd = 0; hd < heads; ++hd) {
            const std::size_t b = hd * width, e = b + width;
            auto res = scaled_dot_attention(ops::slice_cols(q, b, e), ops::slice_cols(k, b, e), ops::slice_cols(v, b, e),
                                            key_mask);
            if (maps) {
                maps->push_back({res.weights.rows(), res.weights.cols(),
                                 std::vector<double>(res.weights.data().begin(), res.weights.data().end())});
            }
            outs.push_back(res.output);
        }
        return heads == 1 ? outs[0] : ops::concat_cols(std::span<const Tensor>(outs));
    }

    Tensor weight(const std::string& name, Shape shape, Rng& rng) {
        return params_.add(name, truncated_normal(std::move(shape), config_.init_std, rng));
    }
    Tensor zeros(const std::string& name, Shape shape) { return params_.add(name, Tensor::zeros(std::move(shape), true)); }
    Tensor ones(const std::string& name, Shape shape) { return params_.add(name, Tensor::filled(std::move(shape), 1.0, true)); }

    layers::Linear linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
        return {weight(name + ".weight", {in, out}, rng), zeros(name + ".bias", {out})};
    }
    layers::Norm norm(const std::string& name) {
        return {ones(name + ".gamma", {config_.dim}), zeros(name + ".beta", {config_.dim}), config_.ln_eps};
    }
    layers::Attention attention(const std::string& name, Rng& rng) {
        const std::size_t d = config_.dim;
        // Softmax is invariant to a key bias, so keys get none.
        return {linear(name + ".q", d, d, rng), {weight(name + ".k.weight", {d, d}, rng), Tensor{}},
                linear(name + ".v", d, d, rng), linear(name + ".o", d, d, rng)};
    }
    layers::FeedForward feed_forward(const std::string& name, Rng& rng) {
        const std::size_t d = config_.dim, hidden = d * config_.mlp_ratio;
        return {linear(name + ".up", d, hidden, rng), linear(name + ".down", hidden, d, rng)};
    }
    layers::EncoderLayer encoder_layer(const std::string& name, Rng& rng) {
        return {norm(name + ".ln_attn"), norm(name + ".ln_ffn"), attention(name + ".attn", rng),
                feed_forward(name + ".ffn", rng)};
    }
    layers::FusionStream fusion_stream(const std::string& name, Rng& rng) {
        return {norm(name + ".ln_self"),          norm(name + ".ln_cross"),           norm(name + ".ln_ffn"),
                attention(name + ".self", rng),   attention(name + ".cross", rng),   feed_forward(name + ".ffn", rng)};
    }

    void build(Rng& rng) {
        const auto& c = config_;
        const std::size_t d = c.dim, n = c.patches_per_frame();
        patch_embed_ = linear("vision.patch_embed", c.channels * c.patch * c.patch, d, rng);
        cls_token_ = weight("vision.cls_token", {1, d}, rng);
        mask_token_ = weight("vision.mask_token", {1, d}, rng);
        pos_spatial_ = weight("vision.pos_spatial", {n + 1, d}, rng);
        pos_temporal_ = weight("vision.pos_temporal", {c.max_frames, d}, rng);
        if (c.variant == VisionVariant::GlobalCLS) global_token_ = weight("vision.global_token", {1, d}, rng);
        for (std::size_t l = 0; l < c.vision_layers; ++l)
            vision_layers_.push_back(encoder_layer("vision.block" + std::to_string(l), rng));
        vision_norm_ = norm("vision.ln_final");

        word_embed_ = weight("text.word_embed", {c.vocab_size, d}, rng);
        pos_text_ = weight("text.pos_embed", {c.max_text_len, d}, rng);
        for (std::size_t l = 0; l < c.text_layers; ++l)
            text_layers_.push_back(encoder_layer("text.layer" + std::to_string(l), rng));
        text_norm_ = norm("text.ln_final");

        for (std::size_t l = 0; l < c.fusion_layers; ++l) {
            const std::string base = "fusion.layer" + std::to_string(l);
            fusion_layers_.push_back({fusion_stream(base + ".vision", rng), fusion_stream(base + ".text", rng)});
        }
        fusion_vision_norm_ = norm("fusion.ln_vision");
        fusion_text_norm_ = norm("fusion.ln_text");

        proj_vision_ = linear("head.proj_vision", d, d, rng);
        proj_text_ = linear("head.proj_text", d, d, rng);
        vtm_head_ = linear("head.vtm", 2 * d, 2, rng);
        mlm_head_ = linear("head.mlm", d, c.vocab_size, rng);
        cl_tau_ = params_.add("cl.tau", Tensor::scalar(c.cl_tau_init, true));
    }

    ModelConfig config_;
    ParamRegistry params_;
    bool training_ = false;
    Rng* dropout_rng_ = nullptr;
    std::function<void()> forward_hook_;
    std::size_t forward_count_ = 0;

    layers::Linear patch_embed_;
    Tensor cls_token_, mask_token_, pos_spatial_, pos_temporal_, global_token_;
    std::vector<layers::EncoderLayer> vision_layers_;
    layers::Norm vision_norm_;
    Tensor word_embed_, pos_text_;
    std::vector<layers::EncoderLayer> text_layers_;
    layers::Norm text_norm_;
    std::vector<layers::FusionLayer> fusion_layers_;
    layers::Norm fusion_vision_norm_, fusion_text_norm_;
    layers::Linear proj_vision_, proj_text_, vtm_head_, mlm_head_;
    Tensor cl_tau_;
};

}  // namespace scl
