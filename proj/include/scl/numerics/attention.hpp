#pragma once

#include <cmath>
#include <vector>

#include "scl/numerics/ops.hpp"

namespace scl {

struct AttentionResult {
    Tensor output;   // [q×d]
    Tensor weights;  // [q×k], rows sum to 1
};

/// softmax(Q·Kᵀ/√d)·V, with keys hidden where key_mask is false.
inline AttentionResult scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                            const std::vector<bool>& key_mask = {}) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) throw DimensionError("attention: Q, K, V must be matrices");
    if (q.cols() != k.cols()) throw DimensionError("attention: query and key widths differ");
    if (k.rows() != v.rows()) throw DimensionError("attention: key and value counts differ");
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    auto weights = ops::softmax_rows(ops::scale(ops::matmul_nt(q, k), inv_sqrt_d), key_mask);
    return {ops::matmul(weights, v), weights};
}

}  // namespace scl
