#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "scl/numerics/tensor.hpp"

// Differentiable primitives. Row-wise ops treat a tensor as a matrix whose
// rows are all leading extents folded together and whose columns are the
// last extent.
namespace scl::ops {

namespace detail {

using scl::detail::Node;
using scl::detail::make_result;

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                             to_string(b.shape()));
    }
}

inline void require_matrix(const Tensor& a, const char* op) {
    if (a.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + to_string(a.shape()));
}

inline Node* parent(Node& self, std::size_t i) { return self.parents[i].get(); }

// out[m×n] += a[m×k] · b[k×n]
inline void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t m,
                    std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* row = out.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0) continue;
            const double* brow = b.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
        }
    }
}

// out[m×n] += a[m×k] · b[n×k]ᵀ
inline void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t m,
                    std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a.data() + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b.data() + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            out[i * n + j] += acc;
        }
    }
}

// out[k×n] += a[m×k]ᵀ · b[m×n]
inline void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t m,
                    std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* brow = b.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0) continue;
            double* row = out.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
        }
    }
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
        for (std::size_t k = 0; k < 2; ++k) {
            auto* p = detail::parent(self, k);
            if (!p->requires_grad) continue;
            auto& g = p->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "sub");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
        for (std::size_t k = 0; k < 2; ++k) {
            auto* p = detail::parent(self, k);
            if (!p->requires_grad) continue;
            const double sign = k == 0 ? 1.0 : -1.0;
            auto& g = p->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
        }
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
        auto* pa = detail::parent(self, 0);
        auto* pb = detail::parent(self, 1);
        if (pa->requires_grad) {
            auto& g = pa->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->data[i];
        }
        if (pb->requires_grad) {
            auto& g = pb->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->data[i];
        }
    });
}

inline Tensor scale(const Tensor& a, double factor) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
    return detail::make_result(a.shape(), std::move(out), {a}, [factor](detail::Node& self) {
        auto& g = detail::parent(self, 0)->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
    });
}

// x[r×c] + b broadcast over rows; b holds exactly c values.
inline Tensor add_bias(const Tensor& x, const Tensor& b) {
    const std::size_t c = x.cols();
    if (b.size() != c) {
        throw DimensionError("add_bias: bias " + to_string(b.shape()) + " does not match columns of " +
                             to_string(x.shape()));
    }
    std::vector<double> out(x.data().begin(), x.data().end());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.data()[i % c];
    return detail::make_result(x.shape(), std::move(out), {x, b}, [c](detail::Node& self) {
        auto* px = detail::parent(self, 0);
        auto* pb = detail::parent(self, 1);
        if (px->requires_grad) {
            auto& g = px->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (pb->requires_grad) {
            auto& g = pb->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % c] += self.grad[i];
        }
    });
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require_matrix(a, "matmul");
    detail::require_matrix(b, "matmul");
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    if (b.shape()[0] != k) {
        throw DimensionError("matmul: inner extents differ " + to_string(a.shape()) + " · " + to_string(b.shape()));
    }
    std::vector<double> out(m * n, 0.0);
    detail::gemm_nn(a.data(), b.data(), out, m, k, n);
    return detail::make_result({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
        auto* pa = detail::parent(self, 0);
        auto* pb = detail::parent(self, 1);
        if (pa->requires_grad) detail::gemm_nt(self.grad, pb->data, pa->ensure_grad(), m, n, k);
        if (pb->requires_grad) detail::gemm_tn(pa->data, self.grad, pb->ensure_grad(), m, k, n);
    });
}

// a[m×k] · b[n×k]ᵀ without materialising the transpose.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    detail::require_matrix(a, "matmul_nt");
    detail::require_matrix(b, "matmul_nt");
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
    if (b.shape()[1] != k) {
        throw DimensionError("matmul_nt: inner extents differ " + to_string(a.shape()) + " · " +
                             to_string(b.shape()) + "ᵀ");
    }
    std::vector<double> out(m * n, 0.0);
    detail::gemm_nt(a.data(), b.data(), out, m, k, n);
    return detail::make_result({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
        auto* pa = detail::parent(self, 0);
        auto* pb = detail::parent(self, 1);
        if (pa->requires_grad) detail::gemm_nn(self.grad, pb->data, pa->ensure_grad(), m, n, k);
        if (pb->requires_grad) detail::gemm_tn(self.grad, pa->data, pb->ensure_grad(), m, n, k);
    });
}

inline Tensor transpose(const Tensor& a) {
    detail::require_matrix(a, "transpose");
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a.data()[i * c + j];
    return detail::make_result({c, r}, std::move(out), {a}, [r, c](detail::Node& self) {
        auto& g = detail::parent(self, 0)->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
    });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (numel(shape) != a.size()) {
        throw DimensionError("reshape: " + to_string(a.shape()) + " cannot become " + to_string(shape));
    }
    std::vector<double> out(a.data().begin(), a.data().end());
    return detail::make_result(std::move(shape), std::move(out), {a}, [](detail::Node& self) {
        auto& g = detail::parent(self, 0)->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

// Stacks matrices vertically; all must share the column count.
inline Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no inputs");
    const std::size_t c = parts[0].cols();
    std::size_t rows = 0;
    for (const auto& p : parts) {
        if (p.cols() != c) throw DimensionError("concat_rows: column counts differ");
        rows += p.rows();
    }
    std::vector<double> out;
    out.reserve(rows * c);
    for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    return detail::make_result({rows, c}, std::move(out), {parts.begin(), parts.end()}, [](detail::Node& self) {
        std::size_t offset = 0;
        for (auto& p : self.parents) {
            if (p->requires_grad) {
                auto& g = p->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offset + i];
            }
            offset += p->data.size();
        }
    });
}

inline Tensor concat_rows(std::initializer_list<Tensor> parts) {
    return concat_rows(std::span<const Tensor>(parts.begin(), parts.size()));
}

// Places matrices side by side; all must share the row count.
inline Tensor concat_cols(std::span<const Tensor> parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no inputs");
    const std::size_t r = parts[0].rows();
    std::size_t cols = 0;
    for (const auto& p : parts) {
        if (p.rows() != r) throw DimensionError("concat_cols: row counts differ");
        cols += p.cols();
    }
    std::vector<double> out(r * cols);
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t pc = p.cols();
        for (std::size_t i = 0; i < r; ++i)
            std::copy_n(p.data().begin() + i * pc, pc, out.begin() + i * cols + offset);
        offset += pc;
    }
    return detail::make_result({r, cols}, std::move(out), {parts.begin(), parts.end()},
                               [r, cols](detail::Node& self) {
                                   std::size_t off = 0;
                                   for (auto& p : self.parents) {
                                       const std::size_t pc = p->shape.back();
                                       if (p->requires_grad) {
                                           auto& g = p->ensure_grad();
                                           for (std::size_t i = 0; i < r; ++i)
                                               for (std::size_t j = 0; j < pc; ++j)
                                                   g[i * pc + j] += self.grad[i * cols + off + j];
                                       }
                                       off += pc;
                                   }
                               });
}

inline Tensor concat_cols(std::initializer_list<Tensor> parts) {
    return concat_cols(std::span<const Tensor>(parts.begin(), parts.size()));
}

// Rows [begin, end) of the matrix view.
inline Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
    const std::size_t c = a.cols();
    if (begin >= end || end > a.rows()) {
        throw DimensionError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                             ") outside " + to_string(a.shape()));
    }
    std::vector<double> out(a.data().begin() + begin * c, a.data().begin() + end * c);
    return detail::make_result({end - begin, c}, std::move(out), {a}, [begin, c](detail::Node& self) {
        auto& g = detail::parent(self, 0)->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * c + i] += self.grad[i];
    });
}

// Columns [begin, end) of the matrix view.
inline Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
    const std::size_t r = a.rows(), c = a.cols();
    if (begin >= end || end > c) {
        throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                             ") outside " + to_string(a.shape()));
    }
    const std::size_t w = end - begin;
    std::vector<double> out(r * w);
    for (std::size_t i = 0; i < r; ++i) std::copy_n(a.data().begin() + i * c + begin, w, out.begin() + i * w);
    return detail::make_result({r, w}, std::move(out), {a}, [r, c, w, begin](detail::Node& self) {
        auto& g = detail::parent(self, 0)->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < w; ++j) g[i * c + begin + j] += self.grad[i * w + j];
    });
}

// Selects rows by index; indices may repeat (gradients accumulate).
inline Tensor gather_rows(const Tensor& a, std::span<const std::size_t> index) {
    const std::size_t c = a.cols(), r = a.rows();
    if (index.empty()) throw DimensionError("gather_rows: empty index");
    std::vector<double> out(index.size() * c);
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] >= r) {
            throw DimensionError("gather_rows: index " + std::to_string(index[i]) + " outside " +
                                 to_string(a.shape()));
        }
        std::copy_n(a.data().begin() + index[i] * c, c, out.begin() + i * c);
    }
    std::vector<std::size_t> idx(index.begin(), index.end());
    return detail::make_result({idx.size(), c}, std::move(out), {a}, [idx, c](detail::Node& self) {
        auto& g = detail::parent(self, 0)->ensure_grad();
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t j = 0; j < c; ++j) g[idx[i] * c + j] += self.grad[i * c + j];
    });
}

inline Tensor embedding(const Tensor& table, std::span<const std::size_t> ids) { return gather_rows(table, ids); }

// Row-wise softmax. Columns where key_mask is false get probability 0 and no
// gradient; at least one column per row must remain visible.
inline Tensor softmax_rows(const Tensor& a, const std::vector<bool>& key_mask = {}) {
    const std::size_t r = a.rows(), c = a.cols();
    if (!key_mask.empty() && key_mask.size() != c) {
        throw DimensionError("softmax_rows: mask length " + std::to_string(key_mask.size()) + " vs " +
                             std::to_string(c) + " columns");
    }
    auto visible = [&](std::size_t j) { return key_mask.empty() || key_mask[j]; };
    std::vector<double> out(a.size(), 0.0);
    for (std::size_t i = 0; i < r; ++i) {
        const double* row = a.data().data() + i * c;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < c; ++j)
            if (visible(j)) mx = std::max(mx, row[j]);
        if (!std::isfinite(mx)) throw NumericError("softmax_rows: row has no finite visible entries");
        double total = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            if (!visible(j)) continue;
            out[i * c + j] = std::exp(row[j] - mx);
            total += out[i * c + j];
        }
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= total;
    }
    return detail::make_result(a.shape(), std::move(out), {a}, [r, c](detail::Node& self) {
        auto& g = detail::parent(self, 0)->ensure_grad();
        for (std::size_t i = 0; i < r; ++i) {
            const double* y = self.data.data() + i * c;
            const double* dy = self.grad.data() + i * c;
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += y[j] * dy[j];
            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += y[j] * (dy[j] - dot);
        }
    });
}

inline Tensor exp(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.data()[i]);
    return detail::make_result(a.shape(), std::move(out), {a}, [](detail::Node& self) {
        auto& g = detail::parent(self, 0)->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * self.data[i];
    });
}

inline Tensor log(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!(a.data()[i] > 0.0)) throw NumericError("log: non-positive argument");
        out[i] = std::log(a.data()[i]);
    }
    return detail::make_result(a.shape(), std::move(out), {a}, [](detail::Node& self) {
        auto* p = detail::parent(self, 0);
        auto& g = p->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / p->data[i];
    });
}

inline Tensor sum(const Tensor& a) {
    double total = 0.0;
    for (double v : a.data()) total += v;
    return detail::make_result({1}, {total}, {a}, [](detail::Node& self) {
        auto& g = detail::parent(self, 0)->ensure_grad();
        for (auto& v : g) v += self.grad[0];
    });
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

// Column means over all rows: [r×c] -> [1×c].
inline Tensor mean_rows(const Tensor& a) {
    const std::size_t r = a.rows(), c = a.cols();
    std::vector<double> out(c, 0.0);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j] += a.data()[i * c + j];
    for (auto& v : out) v /= static_cast<double>(r);
    return detail::make_result({1, c}, std::move(out), {a}, [r, c](detail::Node& self) {
        auto& g = detail::parent(self, 0)->ensure_grad();
        const double inv = 1.0 / static_cast<double>(r);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j] * inv;
    });
}

// Normalises each row to zero mean and unit variance, then applies gamma, beta.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-6) {
    const std::size_t r = x.rows(), c = x.cols();
    if (gamma.size() != c || beta.size() != c) throw DimensionError("layer_norm: affine size mismatch");
    std::vector<double> out(x.size());
    std::vector<double> xhat(x.size());
    std::vector<double> inv_std(r);
    for (std::size_t i = 0; i < r; ++i) {
        const double* row = x.data().data() + i * c;
        double mu = 0.0;
        for (std::size_t j = 0; j < c; ++j) mu += row[j];
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(c);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < c; ++j) {
            xhat[i * c + j] = (row[j] - mu) * inv_std[i];
            out[i * c + j] = xhat[i * c + j] * gamma.data()[j] + beta.data()[j];
        }
    }
    return detail::make_result(
        x.shape(), std::move(out), {x, gamma, beta},
        [r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
            auto* px = detail::parent(self, 0);
            auto* pg = detail::parent(self, 1);
            auto* pb = detail::parent(self, 2);
            if (pg->requires_grad) {
                auto& g = pg->ensure_grad();
                for (std::size_t i = 0; i < r * c; ++i) g[i % c] += self.grad[i] * xhat[i];
            }
            if (pb->requires_grad) {
                auto& g = pb->ensure_grad();
                for (std::size_t i = 0; i < r * c; ++i) g[i % c] += self.grad[i];
            }
            if (px->requires_grad) {
                auto& g = px->ensure_grad();
                const double n = static_cast<double>(c);
                for (std::size_t i = 0; i < r; ++i) {
                    double sum_dy = 0.0, sum_dy_xhat = 0.0;
                    for (std::size_t j = 0; j < c; ++j) {
                        const double dy = self.grad[i * c + j] * pg->data[j];
                        sum_dy += dy;
                        sum_dy_xhat += dy * xhat[i * c + j];
                    }
                    for (std::size_t j = 0; j < c; ++j) {
                        const double dy = self.grad[i * c + j] * pg->data[j];
                        g[i * c + j] += inv_std[i] * (dy - sum_dy / n - xhat[i * c + j] * sum_dy_xhat / n);
                    }
                }
            }
        });
}

// Exact GELU, x·Φ(x).
inline Tensor gelu(const Tensor& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = x.data()[i];
        out[i] = 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2));
    }
    return detail::make_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
        auto* p = detail::parent(self, 0);
        auto& g = p->ensure_grad();
        const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = p->data[i];
            const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
            g[i] += self.grad[i] * (cdf + v * pdf);
        }
    });
}

// Scales each row to unit Euclidean norm.
inline Tensor normalize_rows(const Tensor& a) {
    const std::size_t r = a.rows(), c = a.cols();
    std::vector<double> out(a.size());
    std::vector<double> norms(r);
    for (std::size_t i = 0; i < r; ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < c; ++j) sq += a.data()[i * c + j] * a.data()[i * c + j];
        norms[i] = std::sqrt(sq);
        if (!(norms[i] > 0.0) || !std::isfinite(norms[i])) {
            throw NumericError("normalize_rows: row " + std::to_string(i) + " has zero or non-finite norm");
        }
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = a.data()[i * c + j] / norms[i];
    }
    return detail::make_result(a.shape(), std::move(out), {a}, [r, c, norms = std::move(norms)](detail::Node& self) {
        auto& g = detail::parent(self, 0)->ensure_grad();
        for (std::size_t i = 0; i < r; ++i) {
            const double* y = self.data.data() + i * c;
            const double* dy = self.grad.data() + i * c;
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += y[j] * dy[j];
            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += (dy[j] - y[j] * dot) / norms[i];
        }
    });
}

// Pairwise cosine similarity: [m×d], [n×d] -> [m×n].
inline Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
    return matmul_nt(normalize_rows(a), normalize_rows(b));
}

// Mean over rows of −log softmax(logits)[target]; row-max stabilised.
inline Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
    const std::size_t r = logits.rows(), c = logits.cols();
    if (targets.size() != r) throw DimensionError("cross_entropy: one target per row required");
    std::vector<double> probs(logits.size());
    double loss = 0.0;
    for (std::size_t i = 0; i < r; ++i) {
        if (targets[i] >= c) throw DimensionError("cross_entropy: target class out of range");
        const double* row = logits.data().data() + i * c;
        const double mx = *std::max_element(row, row + c);
        double total = 0.0;
        for (std::size_t j = 0; j < c; ++j) total += std::exp(row[j] - mx);
        const double log_total = std::log(total);
        for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(row[j] - mx - log_total);
        loss -= row[targets[i]] - mx - log_total;
    }
    loss /= static_cast<double>(r);
    if (!std::isfinite(loss)) throw NumericError("cross_entropy: non-finite loss");
    std::vector<std::size_t> tgt(targets.begin(), targets.end());
    return detail::make_result({1}, {loss}, {logits},
                               [r, c, probs = std::move(probs), tgt = std::move(tgt)](detail::Node& self) {
                                   auto& g = detail::parent(self, 0)->ensure_grad();
                                   const double w = self.grad[0] / static_cast<double>(r);
                                   for (std::size_t i = 0; i < r; ++i) {
                                       for (std::size_t j = 0; j < c; ++j) g[i * c + j] += w * probs[i * c + j];
                                       g[i * c + tgt[i]] -= w;
                                   }
                               });
}

// a / s for a single-element tensor s.
inline Tensor div_scalar(const Tensor& a, const Tensor& s) {
    if (s.size() != 1) throw DimensionError("div_scalar: divisor must hold one element");
    const double d = s.item();
    if (d == 0.0) throw NumericError("div_scalar: division by zero");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] / d;
    return detail::make_result(a.shape(), std::move(out), {a, s}, [d](detail::Node& self) {
        auto* pa = detail::parent(self, 0);
        auto* ps = detail::parent(self, 1);
        if (pa->requires_grad) {
            auto& g = pa->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / d;
        }
        if (ps->requires_grad) {
            double acc = 0.0;
            for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * self.data[i];
            ps->ensure_grad()[0] -= acc / d;
        }
    });
}

// Same values, cut from the graph: nothing flows back to the producers.
inline Tensor detach(const Tensor& a) {
    return Tensor::from(a.shape(), std::vector<double>(a.data().begin(), a.data().end()), false);
}

// Inverted dropout with a Bernoulli keep mask drawn from rng.
template <class Rng>
Tensor dropout(const Tensor& x, double p, Rng& rng) {
    if (p <= 0.0) return x;
    if (p >= 1.0) throw ConfigError("dropout: probability must be < 1");
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<double> keep(x.size());
    const double s = 1.0 / (1.0 - p);
    for (auto& k : keep) k = unit(rng) >= p ? s : 0.0;
    return mul(x, Tensor::from(x.shape(), std::move(keep)));
}

}  // namespace scl::ops
