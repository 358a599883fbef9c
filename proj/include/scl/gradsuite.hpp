#pragma once

#include <chrono>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "scl/numerics/attention.hpp"
#include "scl/numerics/grad_check.hpp"
#include "scl/objectives.hpp"

namespace scl {

struct GradSuiteEntry {
    std::string name;
    GradCheckResult result;
    bool passed = false;
};

struct GradSuiteReport {
    std::vector<GradSuiteEntry> entries;
    double tolerance = 1e-4;
    double seconds = 0.0;

    bool passed() const {
        for (const auto& e : entries) {
            if (!e.passed) return false;
        }
        return !entries.empty();
    }
};

/// Small geometry for finite-difference checks. Larger init keeps gradients
/// well above round-off so relative errors are meaningful.
inline TrainConfig gradcheck_config() {
    TrainConfig c;
    c.model.dim = 8;
    c.model.heads = 2;
    c.model.patch = 8;
    c.model.vision_layers = 1;
    c.model.text_layers = 1;
    c.model.fusion_layers = 1;
    c.model.mlp_ratio = 2;
    c.model.dropout = 0.0;
    c.model.init_std = 0.3;
    c.model.cl_tau_init = 0.5;
    c.batch = 3;
    c.scl_tau = 0.5;
    return c;
}

namespace detail {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = u(rng);
    return Tensor::from(std::move(shape), std::move(v), true);
}

// Σ w ⊙ f(x) with fixed random w, so every output element matters.
inline Tensor readout(const Tensor& y, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> w(y.size());
    for (auto& x : w) x = u(rng);
    return ops::sum(ops::mul(y, Tensor::from(y.shape(), std::move(w))));
}

}  // namespace detail

/// Finite-difference checks of every differentiable op and of each loss.
inline GradSuiteReport run_grad_suite(std::uint64_t seed, double tolerance = 1e-4) {
    const auto start = std::chrono::steady_clock::now();
    GradSuiteReport report;
    report.tolerance = tolerance;
    std::mt19937_64 rng(seed);
    GradCheckOptions opt;
    opt.seed = seed;

    auto record = [&](const std::string& name, const std::function<Tensor()>& fn, ParamRegistry& params) {
        GradSuiteEntry e{name, grad_check(fn, params, opt), false};
        e.passed = e.result.max_rel_error <= tolerance && e.result.elements_checked > 0;
        report.entries.push_back(std::move(e));
    };

    // Ops on free inputs: the registry holds the inputs themselves.
    auto op_check = [&](const std::string& name, std::vector<Tensor> inputs,
                        const std::function<Tensor(const std::vector<Tensor>&)>& op) {
        ParamRegistry params;
        for (std::size_t i = 0; i < inputs.size(); ++i) params.add("in" + std::to_string(i), inputs[i]);
        std::mt19937_64 wrng(rng());
        const auto probe = op(inputs);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        std::vector<double> w(probe.size());
        for (auto& x : w) x = u(wrng);
        const auto weights = Tensor::from(probe.shape(), std::move(w));
        record("op." + name, [&] { return ops::sum(ops::mul(op(inputs), weights)); }, params);
    };
    using V = std::vector<Tensor>;
    auto r = [&](Shape s, double lo = -1.0, double hi = 1.0) { return detail::random_tensor(std::move(s), rng, lo, hi); };
    const std::vector<std::size_t> gather_idx{2, 0, 2, 1};
    const std::vector<std::size_t> targets{1, 0, 2};

    op_check("add", {r({3, 4}), r({3, 4})}, [](const V& x) { return ops::add(x[0], x[1]); });
    op_check("sub", {r({3, 4}), r({3, 4})}, [](const V& x) { return ops::sub(x[0], x[1]); });
    op_check("mul", {r({3, 4}), r({3, 4})}, [](const V& x) { return ops::mul(x[0], x[1]); });
    op_check("scale", {r({3, 4})}, [](const V& x) { return ops::scale(x[0], -1.7); });
    op_check("add_bias", {r({3, 4}), r({4})}, [](const V& x) { return ops::add_bias(x[0], x[1]); });
    op_check("matmul", {r({3, 4}), r({4, 5})}, [](const V& x) { return ops::matmul(x[0], x[1]); });
    op_check("matmul_nt", {r({3, 4}), r({5, 4})}, [](const V& x) { return ops::matmul_nt(x[0], x[1]); });
    op_check("transpose", {r({3, 4})}, [](const V& x) { return ops::transpose(x[0]); });
    op_check("reshape", {r({3, 4})}, [](const V& x) { return ops::reshape(x[0], {2, 6}); });
    op_check("concat_rows", {r({2, 3}), r({1, 3})}, [](const V& x) { return ops::concat_rows({x[0], x[1]}); });
    op_check("concat_cols", {r({2, 3}), r({2, 1})}, [](const V& x) { return ops::concat_cols({x[0], x[1]}); });
    op_check("slice_rows", {r({4, 3})}, [](const V& x) { return ops::slice_rows(x[0], 1, 3); });
    op_check("slice_cols", {r({3, 4})}, [](const V& x) { return ops::slice_cols(x[0], 1, 3); });
    op_check("gather_rows", {r({3, 4})}, [&](const V& x) { return ops::gather_rows(x[0], gather_idx); });
    op_check("embedding", {r({5, 3})}, [&](const V& x) { return ops::embedding(x[0], gather_idx); });
    op_check("softmax_rows", {r({3, 4}, -2, 2)}, [](const V& x) { return ops::softmax_rows(x[0]); });
    op_check("softmax_rows_masked", {r({3, 4}, -2, 2)},
             [](const V& x) { return ops::softmax_rows(x[0], {true, false, true, true}); });
    op_check("exp", {r({3, 4})}, [](const V& x) { return ops::exp(x[0]); });
    op_check("log", {r({3, 4}, 0.5, 2.0)}, [](const V& x) { return ops::log(x[0]); });
    op_check("sum", {r({3, 4})}, [](const V& x) { return ops::scale(ops::sum(x[0]), 1.0); });
    op_check("mean", {r({3, 4})}, [](const V& x) { return ops::mean(x[0]); });
    op_check("mean_rows", {r({3, 4})}, [](const V& x) { return ops::mean_rows(x[0]); });
    op_check("layer_norm", {r({3, 6}), r({6}), r({6})},
             [](const V& x) { return ops::layer_norm(x[0], x[1], x[2], 1e-6); });
    op_check("gelu", {r({3, 4}, -3, 3)}, [](const V& x) { return ops::gelu(x[0]); });
    op_check("normalize_rows", {r({3, 4})}, [](const V& x) { return ops::normalize_rows(x[0]); });
    op_check("cosine_similarity", {r({3, 4}), r({2, 4})},
             [](const V& x) { return ops::cosine_similarity(x[0], x[1]); });
    op_check("cross_entropy", {r({3, 4}, -2, 2)}, [&](const V& x) { return ops::cross_entropy(x[0], targets); });
    op_check("div_scalar", {r({3, 4}), r({1}, 0.5, 1.5)}, [](const V& x) { return ops::div_scalar(x[0], x[1]); });
    op_check("attention", {r({2, 4}), r({3, 4}), r({3, 4})},
             [](const V& x) { return scaled_dot_attention(x[0], x[1], x[2], {true, true, false}).output; });
    op_check("info_nce", {r({2, 2}), r({2, 2})}, [](const V& x) { return info_nce(x[0], x[1], 0.3); });

    // Losses through the full model.
    const auto config = gradcheck_config();
    CorpusOptions copt;
    copt.height = config.model.height;
    copt.width = config.model.width;
    const auto corpus = generate_corpus(config.batch, 1, seed, copt);
    Batch batch;
    for (const auto& s : corpus) batch.push_back(&s);
    Model model(config.model, seed);
    Rng draw_rng(seed + 1);
    const auto draws = draw_step(batch, config, draw_rng);
    std::vector<std::vector<std::size_t>> ids;
    for (const auto* s : batch) ids.push_back(s->caption);

    record("loss.cl",
           [&] {
               auto f = model.forward_batch(batch, {}, ids);
               return contrastive_loss(model, f.encoder_vision, f.encoder_text);
           },
           model.params());
    record("loss.vtm", [&] { return vtm_loss(model, model.forward_batch(batch, {}, ids), draws.negatives); },
           model.params());
    record("loss.mlm",
           [&] {
               std::vector<VisionTokens> vision;
               for (const auto* s : batch) vision.push_back(model.encode_vision(*s));
               return mlm_loss(model, vision, batch, draws.mlm).loss;
           },
           model.params());
    // Detached targets are constants to backward, so the central differences
    // hold them at their unperturbed values too.
    SclTargets frozen;
    {
        NoGradGuard no_grad;
        auto r0 = scl_loss(model, batch, draws.image_masks, draws.scl_text, {config.scl_tau, true, true});
        frozen = {r0.vision_complete, r0.text_complete};
    }
    record("loss.scl",
           [&] {
               return scl_loss(model, batch, draws.image_masks, draws.scl_text, {config.scl_tau, true, true, &frozen})
                   .loss;
           },
           model.params());
    record("loss.total", [&] { return total_loss(model, batch, config, draws, &frozen).total_tensor; },
           model.params());

    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

}  // namespace scl
