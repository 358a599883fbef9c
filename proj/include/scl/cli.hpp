#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "scl/ablation.hpp"
#include "scl/evalviz.hpp"
#include "scl/gradsuite.hpp"
#include "scl/trainer.hpp"

namespace scl::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2 };

// Flags shared by every subcommand that builds a TrainConfig.
struct ConfigFlags {
    std::string config_path;
    std::vector<std::string> overrides;  // key=value
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> steps, batch, frames, checkpoint_every;
    std::optional<double> lr, image_mask, text_mask;
    std::optional<std::string> variant, phase;
    bool no_cl = false, no_vtm = false, no_mlm = false, no_mvsc = false, no_mlsc = false;
    bool share_text_mask = false;

    void attach(CLI::App& app, bool training) {
        app.add_option("--config", config_path, "key = value config file")->check(CLI::ExistingFile);
        app.add_option("--set", overrides, "override one config key (key=value), repeatable");
        app.add_option("--seed", seed, "random seed")->envname("SCL_SEED");
        app.add_option("--frames", frames, "frames per sample (model.max_frames)");
        app.add_option("--variant", variant, "vision encoder: frame-cls, mean-pooling, global-cls");
        app.add_option("--phase", phase, "curriculum phase: image or video");
        if (!training) return;
        app.add_option("--steps", steps, "total optimizer steps");
        app.add_option("--batch", batch, "pairs per step");
        app.add_option("--lr", lr, "peak encoder learning rate");
        app.add_option("--image-mask", image_mask, "image mask ratio for semantic completion");
        app.add_option("--text-mask", text_mask, "text mask ratio for semantic completion");
        app.add_option("--checkpoint-every", checkpoint_every, "write <out>.step<N> every N steps");
        app.add_flag("--no-cl", no_cl, "disable the contrastive objective");
        app.add_flag("--no-vtm", no_vtm, "disable vision-text matching");
        app.add_flag("--no-mlm", no_mlm, "disable masked language modeling");
        app.add_flag("--no-mvsc", no_mvsc, "disable masked vision semantic completion");
        app.add_flag("--no-mlsc", no_mlsc, "disable masked language semantic completion");
        app.add_flag("--share-text-mask", share_text_mask, "reuse the semantic-completion text mask for MLM");
    }

    TrainConfig build(TrainConfig config = {}) const {
        if (!config_path.empty()) config = load_config_file(config_path, config);
        if (seed) config.seed = *seed;
        if (steps) config.total_steps = *steps;
        if (batch) config.batch = *batch;
        if (frames) config.model.max_frames = *frames;
        if (lr) config.base_lr = *lr;
        if (image_mask) config.image_mask_ratio = *image_mask;
        if (text_mask) config.text_mask_ratio = *text_mask;
        if (checkpoint_every) config.checkpoint_every = *checkpoint_every;
        if (variant) config.model.variant = parse_variant(*variant);
        if (phase) config.phase = parse_phase(*phase);
        if (frames && *frames > 1 && !phase) config.phase = Phase::Video;
        if (no_cl) config.objectives.cl = false;
        if (no_vtm) config.objectives.vtm = false;
        if (no_mlm) config.objectives.mlm = false;
        if (no_mvsc) config.objectives.mvsc = false;
        if (no_mlsc) config.objectives.mlsc = false;
        if (share_text_mask) config.share_text_mask = true;
        for (const auto& kv : overrides) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
            set_config_value(config, detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
        }
        config.validate();
        return config;
    }
};

inline CorpusOptions corpus_options(const TrainConfig& c) {
    CorpusOptions o;
    o.channels = c.model.channels;
    o.height = c.model.height;
    o.width = c.model.width;
    o.max_text_len = c.model.max_text_len;
    o.vocab_size = c.model.vocab_size;
    return o;
}

inline void require_geometry(const CorpusOptions& corpus, const ModelConfig& model) {
    if (corpus.channels != model.channels || corpus.height != model.height || corpus.width != model.width ||
        corpus.max_text_len != model.max_text_len || corpus.vocab_size != model.vocab_size) {
        throw InputError("corpus geometry does not match the model configuration");
    }
}

inline int cmd_gen_data(const ConfigFlags& flags, std::size_t n, const std::string& out_path, std::ostream& out) {
    const auto config = flags.build();
    const auto opt = corpus_options(config);
    const auto corpus = generate_corpus(n, config.model.max_frames, config.seed, opt);
    save_corpus(out_path, corpus, opt);
    out << "wrote " << corpus.size() << " pairs (" << config.model.max_frames << " frame(s)) to " << out_path << '\n';
    return kOk;
}

inline int cmd_pretrain(const ConfigFlags& flags, const std::string& corpus_path, const std::string& out_path,
                        std::string metrics_path, const std::string& resume, const std::string& init_from,
                        std::ostream& out) {
    CorpusOptions copt;
    const auto corpus = load_corpus(corpus_path, &copt);
    std::unique_ptr<Trainer> trainer;
    if (!resume.empty()) {
        auto ck = load_checkpoint(resume);
        ck.config = flags.build(ck.config);
        trainer = std::make_unique<Trainer>(ck, corpus);
    } else {
        trainer = std::make_unique<Trainer>(flags.build(), corpus);
        if (!init_from.empty()) {
            const auto image = model_from(load_checkpoint(init_from));
            curriculum_transfer(*image, trainer->model());
        }
    }
    require_geometry(copt, trainer->config().model);
    if (metrics_path.empty()) metrics_path = out_path + ".metrics";
    std::ofstream metrics(metrics_path, resume.empty() ? std::ios::trunc : std::ios::app);
    if (!metrics) throw InputError("cannot write metrics log '" + metrics_path + "'");
    trainer->set_metrics_stream(&metrics);
    trainer->set_diagnostic_path(out_path + ".diagnostic");
    trainer->set_checkpoint_callback(
        [&](const Checkpoint& ck) { save_checkpoint(out_path + ".step" + std::to_string(ck.step), ck); });
    const auto rows = trainer->run();
    save_checkpoint(out_path, trainer->checkpoint());
    if (!rows.empty()) {
        out << "step " << rows.back().step << " total " << rows.back().total << " (step " << rows.front().step
            << " total " << rows.front().total << ")\n";
    }
    out << "checkpoint " << out_path << ", metrics " << metrics_path << '\n';
    return kOk;
}

inline int cmd_eval(const std::string& ck_path, const std::string& corpus_path, std::size_t k, const std::string& csv,
                    const std::string& label, std::ostream& out) {
    const auto ck = load_checkpoint(ck_path);
    const auto model = model_from(ck);
    CorpusOptions copt;
    const auto corpus = load_corpus(corpus_path, &copt);
    require_geometry(copt, model->config());
    const auto r = retrieve(*model, corpus, k);
    const auto row = retrieval_csv_row(label, ck.config.seed, r);
    out << retrieval_csv_header() << '\n' << row << '\n';
    if (!csv.empty()) {
        const bool fresh = !std::filesystem::exists(csv);
        std::ofstream f(csv, std::ios::app);
        if (!f) throw InputError("cannot write '" + csv + "'");
        if (fresh) f << retrieval_csv_header() << '\n';
        f << row << '\n';
    }
    return kOk;
}

inline int cmd_export(const std::string& ck_path, const std::string& corpus_path, std::size_t index,
                      const std::string& prefix, std::ostream& out) {
    const auto model = model_from(load_checkpoint(ck_path));
    CorpusOptions copt;
    const auto corpus = load_corpus(corpus_path, &copt);
    require_geometry(copt, model->config());
    if (index >= corpus.size()) throw InputError("--index " + std::to_string(index) + " outside corpus");
    for (const auto& path : export_attention(*model, corpus[index], prefix)) out << path << '\n';
    return kOk;
}

inline int cmd_gradcheck(std::uint64_t seed, double tolerance, std::ostream& out) {
    const auto report = run_grad_suite(seed, tolerance);
    char buf[256];
    for (const auto& e : report.entries) {
        std::snprintf(buf, sizeof buf, "%-4s %-26s max_rel %.3e over %zu elements", e.passed ? "ok" : "FAIL",
                      e.name.c_str(), e.result.max_rel_error, e.result.elements_checked);
        out << buf;
        if (!e.passed) out << " (worst " << e.result.worst_param << "[" << e.result.worst_index << "])";
        out << '\n';
    }
    std::snprintf(buf, sizeof buf, "%zu checks in %.1fs, tolerance %.0e: %s\n", report.entries.size(), report.seconds,
                  tolerance, report.passed() ? "pass" : "FAIL");
    out << buf;
    return report.passed() ? kOk : kFailure;
}

inline int cmd_ablate(const ConfigFlags& flags, const std::string& grid, std::size_t seeds,
                      const AblationOptions& options, const std::string& csv, std::ostream& out) {
    auto base = flags.build();
    if (!flags.steps) base.total_steps = 2000;
    const auto points = ablation_grid(grid);
    std::ofstream file;
    if (!csv.empty()) {
        file.open(csv, std::ios::trunc);
        if (!file) throw InputError("cannot write '" + csv + "'");
        file << ablation_csv_header() << '\n';
    }
    out << ablation_csv_header() << '\n';
    for (std::size_t s = 0; s < seeds; ++s) {
        for (const auto& p : points) {
            const auto row = ablation_csv_row(run_ablation_point(base, grid, p, base.seed + s, options));
            out << row << '\n' << std::flush;
            if (file.is_open()) file << row << '\n' << std::flush;
        }
    }
    return kOk;
}

/// Entry point of the command-line tool. Returns the process exit code.
inline int run(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Semantic completion vision-language pre-training at desk scale"};
    app.require_subcommand(1);

    ConfigFlags gen_flags, train_flags, ablate_flags;
    std::size_t gen_n = 32;
    std::string gen_out;
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic paired corpus");
    gen_flags.attach(*gen, false);
    gen->add_option("-n,--count", gen_n, "number of pairs")->check(CLI::PositiveNumber);
    gen->add_option("-o,--out", gen_out, "corpus file to write")->required();

    std::string tr_corpus, tr_out, tr_metrics, tr_resume, tr_init;
    auto* pre = app.add_subcommand("pretrain", "train on a corpus and write a checkpoint");
    train_flags.attach(*pre, true);
    pre->add_option("--corpus", tr_corpus, "corpus file")->required()->check(CLI::ExistingFile);
    pre->add_option("-o,--out", tr_out, "checkpoint to write")->required();
    pre->add_option("--metrics", tr_metrics, "metrics log (default <out>.metrics)");
    auto* resume_opt = pre->add_option("--resume", tr_resume, "continue from a checkpoint")->check(CLI::ExistingFile);
    pre->add_option("--init-from", tr_init, "image-phase checkpoint to transfer into a video model")
        ->check(CLI::ExistingFile)
        ->excludes(resume_opt);

    std::string ev_ck, ev_corpus, ev_csv, ev_label = "eval";
    std::size_t ev_k = 0;
    auto* ev = app.add_subcommand("eval-retrieval", "two-stage retrieval recall on a corpus");
    ev->add_option("--checkpoint", ev_ck, "checkpoint")->required()->check(CLI::ExistingFile);
    ev->add_option("--corpus", ev_corpus, "corpus file")->required()->check(CLI::ExistingFile);
    ev->add_option("-k,--rerank", ev_k, "re-rank depth (0 = similarity only)");
    ev->add_option("--csv", ev_csv, "append the result row to this CSV");
    ev->add_option("--label", ev_label, "config label for the CSV row");

    std::string ex_ck, ex_corpus, ex_prefix;
    std::size_t ex_index = 0;
    auto* ex = app.add_subcommand("export-attention", "write text-[CLS] cross-attention heatmaps");
    ex->add_option("--checkpoint", ex_ck, "checkpoint")->required()->check(CLI::ExistingFile);
    ex->add_option("--corpus", ex_corpus, "corpus file")->required()->check(CLI::ExistingFile);
    ex->add_option("--index", ex_index, "sample index in the corpus");
    ex->add_option("-o,--out", ex_prefix, "output prefix; writes <prefix>_frame<f>.pgm/.csv")->required();

    std::uint64_t gc_seed = 1;
    double gc_tol = 1e-4;
    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every op and loss");
    gc->add_option("--seed", gc_seed, "random seed")->envname("SCL_SEED");
    gc->add_option("--tolerance", gc_tol, "maximum relative error");

    std::string ab_grid, ab_csv;
    std::size_t ab_seeds = 1;
    AblationOptions ab_opt;
    auto* ab = app.add_subcommand("ablate", "train and evaluate a grid of configurations, emit CSV");
    ablate_flags.attach(*ab, true);
    ab->add_option("--grid", ab_grid, "objectives, scl-parts, mask-ratio or variants")
        ->required()
        ->check(CLI::IsMember({"objectives", "scl-parts", "mask-ratio", "variants"}));
    ab->add_option("--seeds", ab_seeds, "seeds per grid point (seed, seed+1, ...)")->check(CLI::PositiveNumber);
    ab->add_option("--train-pairs", ab_opt.train_pairs, "training split size");
    ab->add_option("--eval-pairs", ab_opt.eval_pairs, "held-out split size");
    ab->add_option("-k,--rerank", ab_opt.rerank_k, "re-rank depth for runs with matching");
    ab->add_option("--csv", ab_csv, "write the comparison CSV here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*gen) return cmd_gen_data(gen_flags, gen_n, gen_out, out);
        if (*pre) return cmd_pretrain(train_flags, tr_corpus, tr_out, tr_metrics, tr_resume, tr_init, out);
        if (*ev) return cmd_eval(ev_ck, ev_corpus, ev_k, ev_csv, ev_label, out);
        if (*ex) return cmd_export(ex_ck, ex_corpus, ex_index, ex_prefix, out);
        if (*gc) return cmd_gradcheck(gc_seed, gc_tol, out);
        if (*ab) return cmd_ablate(ablate_flags, ab_grid, ab_seeds, ab_opt, ab_csv, out);
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << '\n';
        return kFailure;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kFailure;
    }
    return kUsage;
}

}  // namespace scl::cli
