#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "scl/evalviz.hpp"
#include "scl/trainer.hpp"

namespace scl {

struct AblationPoint {
    std::string name;
    std::function<void(TrainConfig&)> apply;
};

namespace detail {

inline void only_objectives(TrainConfig& c, bool cl, bool vtm, bool mlm, bool mvsc, bool mlsc) {
    c.objectives = {cl, vtm, mlm, mvsc, mlsc};
}

}  // namespace detail

/// Grid points for one ablation family:
///   objectives  full model, then each objective removed in turn
///   scl-parts   CL+VTM+MLM, adding MLSC, MVSC, then both
///   mask-ratio  (image, text) ∈ {(0.7,0.4), (0.8,0.3), (0.8,0.4), (0.8,0.5), (0.9,0.4)}
///   variants    video encoders trained with CL only: mean-pooling, global-cls, frame-cls
inline std::vector<AblationPoint> ablation_grid(const std::string& grid) {
    using detail::only_objectives;
    if (grid == "objectives") {
        return {
            {"all", [](TrainConfig& c) { only_objectives(c, true, true, true, true, true); }},
            {"no-mlm", [](TrainConfig& c) { only_objectives(c, true, true, false, true, true); }},
            {"no-vtm", [](TrainConfig& c) { only_objectives(c, true, false, true, true, true); }},
            {"no-cl", [](TrainConfig& c) { only_objectives(c, false, true, true, true, true); }},
            {"no-scl", [](TrainConfig& c) { only_objectives(c, true, true, true, false, false); }},
        };
    }
    if (grid == "scl-parts") {
        return {
            {"base", [](TrainConfig& c) { only_objectives(c, true, true, true, false, false); }},
            {"+mlsc", [](TrainConfig& c) { only_objectives(c, true, true, true, false, true); }},
            {"+mvsc", [](TrainConfig& c) { only_objectives(c, true, true, true, true, false); }},
            {"+scl", [](TrainConfig& c) { only_objectives(c, true, true, true, true, true); }},
        };
    }
    if (grid == "mask-ratio") {
        std::vector<AblationPoint> points;
        for (auto [image, text] : {std::pair{0.7, 0.4}, {0.8, 0.3}, {0.8, 0.4}, {0.8, 0.5}, {0.9, 0.4}}) {
            char name[32];
            std::snprintf(name, sizeof name, "%.1f/%.1f", image, text);
            points.push_back({name, [image, text](TrainConfig& c) {
                                  c.image_mask_ratio = image;
                                  c.text_mask_ratio = text;
                              }});
        }
        return points;
    }
    if (grid == "variants") {
        std::vector<AblationPoint> points;
        for (auto v : {VisionVariant::MeanPooling, VisionVariant::GlobalCLS, VisionVariant::FrameCLS}) {
            points.push_back({to_string(v), [v](TrainConfig& c) {
                                  c.model.variant = v;
                                  c.phase = Phase::Video;
                                  if (c.model.max_frames < 2) c.model.max_frames = 4;
                                  only_objectives(c, true, false, false, false, false);
                              }});
        }
        return points;
    }
    throw ConfigError("unknown ablation grid '" + grid + "' (objectives, scl-parts, mask-ratio, variants)");
}

struct AblationOptions {
    std::size_t train_pairs = 512;
    std::size_t eval_pairs = 256;
    std::size_t rerank_k = 16;  // dropped to 0 for runs without VTM
    std::size_t tail = 20;      // losses averaged over the last steps
};

struct AblationRow {
    std::string grid, point;
    std::uint64_t seed = 0;
    std::size_t steps = 0;
    MetricsRow loss;  // tail mean
    RetrievalResult retrieval;
    double seconds = 0.0;
};

inline const char* ablation_csv_header() {
    return "grid,point,seed,steps,cl,vtm,mlm,scl,total,candidates,k,ir1,ir5,ir10,tr1,tr5,tr10,seconds";
}

inline std::string ablation_csv_row(const AblationRow& r) {
    char buf[512];
    const auto& l = r.loss;
    const auto& q = r.retrieval;
    std::snprintf(buf, sizeof buf, "%s,%s,%llu,%zu,%.6f,%.6f,%.6f,%.6f,%.6f,%zu,%zu,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.1f",
                  r.grid.c_str(), r.point.c_str(), static_cast<unsigned long long>(r.seed), r.steps, l.cl, l.vtm,
                  l.mlm, l.scl, l.total, q.candidates, q.k, q.ir1, q.ir5, q.ir10, q.tr1, q.tr5, q.tr10, r.seconds);
    return buf;
}

/// Trains one grid point from scratch on a generated split, then evaluates
/// zero-shot retrieval on a held-out split drawn from a different seed.
inline AblationRow run_ablation_point(TrainConfig config, const std::string& grid, const AblationPoint& point,
                                      std::uint64_t seed, const AblationOptions& options = {}) {
    const auto start = std::chrono::steady_clock::now();
    point.apply(config);
    config.seed = seed;
    config.validate();
    CorpusOptions copt;
    copt.channels = config.model.channels;
    copt.height = config.model.height;
    copt.width = config.model.width;
    copt.max_text_len = config.model.max_text_len;
    copt.vocab_size = config.model.vocab_size;
    const std::size_t frames = config.frames();
    const auto train = generate_corpus(options.train_pairs, frames, detail::splitmix64(seed ^ 0x7a11ULL), copt);
    const auto held_out = generate_corpus(options.eval_pairs, frames, detail::splitmix64(seed ^ 0xe7a1ULL), copt);

    Trainer trainer(config, train);
    const auto rows = trainer.run();
    AblationRow out{grid, point.name, seed, config.total_steps, {}, {}, 0.0};
    const std::size_t tail = std::min(options.tail, rows.size());
    for (std::size_t i = rows.size() - tail; i < rows.size(); ++i) {
        out.loss.cl += rows[i].cl / static_cast<double>(tail);
        out.loss.vtm += rows[i].vtm / static_cast<double>(tail);
        out.loss.mlm += rows[i].mlm / static_cast<double>(tail);
        out.loss.scl += rows[i].scl / static_cast<double>(tail);
        out.loss.total += rows[i].total / static_cast<double>(tail);
    }
    out.loss.step = trainer.step();
    const std::size_t k = config.objectives.vtm ? std::min(options.rerank_k, held_out.size()) : 0;
    out.retrieval = retrieve(trainer.model(), held_out, k);
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

inline double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace scl
