#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "scl/numerics/params.hpp"

namespace scl {

struct GradCheckOptions {
    double eps = 1e-4;
    // 0 checks every element; otherwise a seeded sample of at least this many
    // elements, spread so every parameter tensor contributes.
    std::size_t min_elements = 64;
    std::uint64_t seed = 0;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t elements_checked = 0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

/// Compares backward() gradients of loss_fn against central differences.
///
/// loss_fn must be deterministic and return a single-element tensor built
/// from the registry's parameters. Relative error per element is
/// |a − n| / max(|a|, |n|, 1e-8); the maximum over checked elements is returned.
inline GradCheckResult grad_check(const std::function<Tensor()>& loss_fn, ParamRegistry& params,
                                  const GradCheckOptions& options = {}) {
    if (!(options.eps > 0.0)) throw ConfigError("grad_check: eps must be positive");

    params.zero_grad();
    {
        Tensor loss = loss_fn();
        if (!std::isfinite(loss.item())) throw NumericError("grad_check: non-finite loss");
        loss.backward();
    }

    struct Probe {
        std::size_t param;
        std::size_t element;
    };
    std::vector<Probe> probes;
    const auto& entries = params.entries();
    if (options.min_elements == 0 || options.min_elements >= params.element_count()) {
        for (std::size_t p = 0; p < entries.size(); ++p)
            for (std::size_t e = 0; e < entries[p].second.size(); ++e) probes.push_back({p, e});
    } else {
        std::mt19937_64 rng(options.seed);
        const std::size_t per_tensor =
            std::max<std::size_t>(1, (options.min_elements + entries.size() - 1) / entries.size());
        for (std::size_t p = 0; p < entries.size(); ++p) {
            const std::size_t n = entries[p].second.size();
            std::vector<std::size_t> idx(n);
            for (std::size_t e = 0; e < n; ++e) idx[e] = e;
            const std::size_t take = std::min(n, per_tensor);
            for (std::size_t t = 0; t < take; ++t) {
                std::uniform_int_distribution<std::size_t> pick(t, n - 1);
                std::swap(idx[t], idx[pick(rng)]);
                probes.push_back({p, idx[t]});
            }
        }
    }

    auto evaluate = [&] {
        NoGradGuard guard;
        const double value = loss_fn().item();
        if (!std::isfinite(value)) throw NumericError("grad_check: non-finite loss under perturbation");
        return value;
    };

    GradCheckResult result;
    for (const auto& probe : probes) {
        Tensor param = entries[probe.param].second;
        const double analytic = param.has_grad() ? param.grad()[probe.element] : 0.0;
        double& slot = param.mutable_data()[probe.element];
        const double original = slot;
        slot = original + options.eps;
        const double plus = evaluate();
        slot = original - options.eps;
        const double minus = evaluate();
        slot = original;
        const double numeric = (plus - minus) / (2.0 * options.eps);
        const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
        const double rel = std::abs(analytic - numeric) / denom;
        ++result.elements_checked;
        if (result.worst_param.empty() || rel > result.max_rel_error) {
            result.max_rel_error = rel;
            result.worst_param = entries[probe.param].first;
            result.worst_index = probe.element;
            result.worst_analytic = analytic;
            result.worst_numeric = numeric;
        }
    }
    params.zero_grad();
    return result;
}

}  // namespace scl
