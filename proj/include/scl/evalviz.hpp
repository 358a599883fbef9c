#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "scl/encoders.hpp"

namespace scl {

// -- retrieval -----------------------------------------------------------------

struct RetrievalResult {
    double ir1 = 0, ir5 = 0, ir10 = 0;  // text query -> vision
    double tr1 = 0, tr5 = 0, tr10 = 0;  // vision query -> text
    std::size_t candidates = 0;
    std::size_t k = 0;
};

inline const char* retrieval_csv_header() { return "config,seed,candidates,k,ir1,ir5,ir10,tr1,tr5,tr10"; }

inline std::string retrieval_csv_row(const std::string& config, std::uint64_t seed, const RetrievalResult& r) {
    char buf[320];
    std::snprintf(buf, sizeof buf, "%s,%llu,%zu,%zu,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f", config.c_str(),
                  static_cast<unsigned long long>(seed), r.candidates, r.k, r.ir1, r.ir5, r.ir10, r.tr1, r.tr5, r.tr10);
    return buf;
}

namespace detail {

// Candidate order for one query: stage-1 similarity, then the first k
// re-sorted by score(candidate). Ties keep the lower index first.
template <class Score>
std::vector<std::size_t> two_stage_order(const std::vector<double>& similarity, std::size_t k, Score&& score) {
    std::vector<std::size_t> order(similarity.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return similarity[a] > similarity[b]; });
    if (k > 0) {
        std::vector<std::pair<double, std::size_t>> head;
        for (std::size_t i = 0; i < k; ++i) head.emplace_back(score(order[i]), order[i]);
        std::stable_sort(head.begin(), head.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
        for (std::size_t i = 0; i < k; ++i) order[i] = head[i].second;
    }
    return order;
}

inline double hit_at(const std::vector<std::size_t>& order, std::size_t truth, std::size_t k) {
    const std::size_t n = std::min(k, order.size());
    return std::find(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n), truth) !=
                   order.begin() + static_cast<std::ptrdiff_t>(n)
               ? 1.0
               : 0.0;
}

}  // namespace detail

/// Two-stage retrieval over a paired corpus: cosine similarity of projected
/// encoder globals shortlists candidates, then the top k are re-ranked by
/// the matching head's log-odds of "matched". k = 0 skips re-ranking.
inline RetrievalResult retrieve(const Model& model, const std::vector<PairedSample>& corpus, std::size_t k) {
    const std::size_t n = corpus.size();
    if (n == 0) throw InputError("retrieve: empty corpus");
    if (k > n) throw ConfigError("retrieve: re-rank depth " + std::to_string(k) + " exceeds corpus size " +
                                 std::to_string(n));
    NoGradGuard no_grad;
    std::vector<VisionTokens> vision;
    std::vector<Tensor> text, pv, pt;
    std::vector<std::vector<bool>> text_masks;
    for (const auto& s : corpus) {
        vision.push_back(model.encode_vision(s));
        text.push_back(model.encode_text(s.caption));
        text_masks.push_back(text_key_mask(s.caption));
        const auto g = model.global_reps(vision.back(), text.back());
        pv.push_back(g.vision);
        pt.push_back(g.text);
    }
    const auto sim = ops::cosine_similarity(model.project_vision(stack_rows(pv)), model.project_text(stack_rows(pt)));

    std::map<std::pair<std::size_t, std::size_t>, double> cache;  // (vision, text) -> match log-odds
    auto vtm_score = [&](std::size_t v, std::size_t t) {
        auto it = cache.find({v, t});
        if (it != cache.end()) return it->second;
        const auto g = model.global_reps(model.fuse(vision[v], text[t], text_masks[t]));
        const auto logits = model.vtm_logits(ops::concat_cols({g.vision, g.text}));
        const double s = logits.at(0, 1) - logits.at(0, 0);
        cache.emplace(std::make_pair(v, t), s);
        return s;
    };

    RetrievalResult r;
    r.candidates = n;
    r.k = k;
    std::vector<double> column(n), row(n);
    for (std::size_t q = 0; q < n; ++q) {
        for (std::size_t i = 0; i < n; ++i) {
            column[i] = sim.at(i, q);
            row[i] = sim.at(q, i);
        }
        const auto ir = detail::two_stage_order(column, k, [&](std::size_t v) { return vtm_score(v, q); });
        const auto tr = detail::two_stage_order(row, k, [&](std::size_t t) { return vtm_score(q, t); });
        r.ir1 += detail::hit_at(ir, q, 1);
        r.ir5 += detail::hit_at(ir, q, 5);
        r.ir10 += detail::hit_at(ir, q, 10);
        r.tr1 += detail::hit_at(tr, q, 1);
        r.tr5 += detail::hit_at(tr, q, 5);
        r.tr10 += detail::hit_at(tr, q, 10);
    }
    for (double* v : {&r.ir1, &r.ir5, &r.ir10, &r.tr1, &r.tr5, &r.tr10}) *v /= static_cast<double>(n);
    return r;
}

// -- heatmaps ------------------------------------------------------------------

struct Heatmap {
    std::size_t frame = 0;
    std::size_t rows = 0, cols = 0;            // patch grid
    std::vector<std::vector<double>> heads;    // raw weights per head, row-major grid
    std::vector<double> pooled;                // max over heads
    std::vector<double> normalized;            // in [0, 1]
    double min = 0.0, max = 0.0;
};

/// Text-[CLS] attention over each frame's patches in the last fusion layer,
/// max-pooled over heads. Frame-[CLS] (and global) key columns are dropped.
/// A flat map normalizes to all zeros.
inline std::vector<Heatmap> attention_heatmaps(const Model& model, const PairedSample& sample) {
    const bool has_content = std::any_of(sample.caption.begin(), sample.caption.end(),
                                         [](std::size_t id) { return !is_reserved(id); });
    if (!has_content) throw InputError("export_attention: caption has no content tokens");
    const auto& cfg = model.config();
    if (cfg.fusion_layers == 0) throw ConfigError("export_attention: model has no fusion layers");
    NoGradGuard no_grad;
    const auto vision = model.encode_vision(sample);
    const auto fused = model.fuse(vision, model.encode_text(sample.caption), text_key_mask(sample.caption));
    const auto& maps = fused.text_to_vision.back();
    const std::size_t n = cfg.patches_per_frame();

    std::vector<Heatmap> out;
    for (std::size_t f = 0; f < sample.frames; ++f) {
        Heatmap h;
        h.frame = f;
        h.rows = cfg.grid_rows();
        h.cols = cfg.grid_cols();
        h.pooled.assign(n, -1.0);
        for (const auto& m : maps) {
            std::vector<double> grid(n);
            for (std::size_t p = 0; p < n; ++p) grid[p] = m.weights[f * (n + 1) + 1 + p];  // row 0 = text [CLS]
            for (std::size_t p = 0; p < n; ++p) h.pooled[p] = std::max(h.pooled[p], grid[p]);
            h.heads.push_back(std::move(grid));
        }
        const auto [lo, hi] = std::minmax_element(h.pooled.begin(), h.pooled.end());
        h.min = *lo;
        h.max = *hi;
        h.normalized.assign(n, 0.0);
        if (h.max > h.min) {
            for (std::size_t p = 0; p < n; ++p) h.normalized[p] = (h.pooled[p] - h.min) / (h.max - h.min);
        }
        out.push_back(std::move(h));
    }
    return out;
}

inline std::string heatmap_pgm(const Heatmap& h) {
    std::string s = "P2\n" + std::to_string(h.cols) + " " + std::to_string(h.rows) + "\n255\n";
    for (std::size_t r = 0; r < h.rows; ++r) {
        for (std::size_t c = 0; c < h.cols; ++c) {
            if (c) s += ' ';
            s += std::to_string(static_cast<int>(std::lround(255.0 * h.normalized[r * h.cols + c])));
        }
        s += '\n';
    }
    return s;
}

// One line per grid cell: map,row,col,value with map = head<i> or pooled.
inline std::string heatmap_csv(const Heatmap& h) {
    std::string s = "map,row,col,value\n";
    char buf[96];
    auto emit = [&](const std::string& name, const std::vector<double>& grid) {
        for (std::size_t r = 0; r < h.rows; ++r) {
            for (std::size_t c = 0; c < h.cols; ++c) {
                std::snprintf(buf, sizeof buf, ",%zu,%zu,%.17g\n", r, c, grid[r * h.cols + c]);
                s += name + buf;
            }
        }
    };
    for (std::size_t i = 0; i < h.heads.size(); ++i) emit("head" + std::to_string(i), h.heads[i]);
    emit("pooled", h.pooled);
    return s;
}

/// Writes <prefix>_frame<f>.pgm and <prefix>_frame<f>.csv per frame; returns the paths written.
inline std::vector<std::string> export_attention(const Model& model, const PairedSample& sample,
                                                 const std::string& prefix) {
    std::vector<std::string> written;
    for (const auto& h : attention_heatmaps(model, sample)) {
        const std::string base = prefix + "_frame" + std::to_string(h.frame);
        for (const auto& [path, body] : {std::pair{base + ".pgm", heatmap_pgm(h)}, std::pair{base + ".csv", heatmap_csv(h)}}) {
            std::ofstream out(path, std::ios::binary);
            if (!out) throw InputError("cannot write '" + path + "'");
            out << body;
            written.push_back(path);
        }
    }
    return written;
}

}  // namespace scl
