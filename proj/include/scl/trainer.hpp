#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <memory>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "scl/config.hpp"
#include "scl/encoders.hpp"
#include "scl/objectives.hpp"

namespace scl {

// -- schedule ------------------------------------------------------------------

struct LearningRates {
    double encoder = 0.0;
    double fusion = 0.0;
};

/// Linear warmup from 0 to base_lr over the first warmup_fraction of steps,
/// then linear decay to 0 at total_steps. The fusion rate is a fixed multiple.
inline LearningRates lr_at(std::size_t step, const TrainConfig& config) {
    if (step > config.total_steps) {
        throw ConfigError("lr_at: step " + std::to_string(step) + " beyond total_steps " +
                          std::to_string(config.total_steps));
    }
    const double total = static_cast<double>(config.total_steps);
    const double warmup = config.warmup_fraction * total;
    const double s = static_cast<double>(step);
    double factor = 0.0;
    if (config.total_steps == 0 || step == 0) {
        factor = 0.0;
    } else if (s <= warmup) {
        factor = s / warmup;
    } else {
        factor = (total - s) / (total - warmup);
    }
    const double enc = config.base_lr * factor;
    return {enc, enc * config.fusion_lr_multiplier};
}

// -- checkpoint container ------------------------------------------------------

struct NamedArray {
    std::string name;
    Shape shape;
    std::vector<double> values;

    bool operator==(const NamedArray&) const = default;
};

/// Everything needed to resume training bit-exactly. Stored as text with
/// hexadecimal floating point so values survive the round trip unchanged.
///
///   scl-checkpoint 1
///   step <n>
///   config <line count>      followed by `key = value` lines
///   rng <engine state>
///   dropout_rng <engine state>
///   order <n> <index>...     current epoch permutation
///   cursor <c>
///   params|adam_m|adam_v <count>, then one line per array:
///       <name> <rank> <extent>... <hex value>...
///   end
struct Checkpoint {
    TrainConfig config;
    std::size_t step = 0;
    std::string rng_state;
    std::string dropout_rng_state;
    std::vector<std::size_t> order;
    std::size_t cursor = 0;
    std::vector<NamedArray> params;
    std::vector<NamedArray> adam_m;
    std::vector<NamedArray> adam_v;

    const NamedArray& param(const std::string& name) const {
        for (const auto& p : params) {
            if (p.name == name) return p;
        }
        throw InputError("checkpoint has no parameter '" + name + "'");
    }
};

namespace detail {

inline std::string hex(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%a", v);
    return buf;
}

inline double parse_hex(const std::string& s) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size()) throw InputError("checkpoint: bad number '" + s + "'");
    return v;
}

inline void write_arrays(std::ostream& out, const char* tag, const std::vector<NamedArray>& arrays) {
    out << tag << ' ' << arrays.size() << '\n';
    for (const auto& a : arrays) {
        out << a.name << ' ' << a.shape.size();
        for (auto e : a.shape) out << ' ' << e;
        for (double v : a.values) out << ' ' << hex(v);
        out << '\n';
    }
}

inline std::string expect_tag(std::istream& in, const std::string& tag) {
    std::string line;
    if (!std::getline(in, line)) throw InputError("checkpoint: truncated before '" + tag + "'");
    if (line.rfind(tag + " ", 0) != 0 && line != tag) {
        throw InputError("checkpoint: expected '" + tag + "', got '" + line.substr(0, 40) + "'");
    }
    return line.size() > tag.size() ? line.substr(tag.size() + 1) : std::string{};
}

inline std::size_t to_size(const std::string& s) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
        v = std::stoull(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != s.size()) throw InputError("checkpoint: bad count '" + s + "'");
    return static_cast<std::size_t>(v);
}

inline std::vector<NamedArray> read_arrays(std::istream& in, const std::string& tag) {
    const std::size_t count = to_size(expect_tag(in, tag));
    std::vector<NamedArray> arrays(count);
    for (auto& a : arrays) {
        std::string line;
        if (!std::getline(in, line)) throw InputError("checkpoint: truncated " + tag + " section");
        std::istringstream ls(line);
        std::string tok;
        ls >> a.name >> tok;
        const std::size_t rank = to_size(tok);
        for (std::size_t r = 0; r < rank; ++r) {
            ls >> tok;
            a.shape.push_back(to_size(tok));
        }
        const std::size_t n = numel(a.shape);
        a.values.reserve(n);
        while (ls >> tok) a.values.push_back(parse_hex(tok));
        if (a.values.size() != n) throw InputError("checkpoint: array '" + a.name + "' has the wrong length");
    }
    return arrays;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& out, const Checkpoint& ck) {
    out << "scl-checkpoint 1\n";
    out << "step " << ck.step << '\n';
    const std::string cfg = serialize_config(ck.config);
    out << "config " << std::count(cfg.begin(), cfg.end(), '\n') << '\n' << cfg;
    out << "rng " << ck.rng_state << '\n';
    out << "dropout_rng " << ck.dropout_rng_state << '\n';
    out << "order " << ck.order.size();
    for (auto i : ck.order) out << ' ' << i;
    out << '\n' << "cursor " << ck.cursor << '\n';
    detail::write_arrays(out, "params", ck.params);
    detail::write_arrays(out, "adam_m", ck.adam_m);
    detail::write_arrays(out, "adam_v", ck.adam_v);
    out << "end\n";
}

inline Checkpoint read_checkpoint(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != "scl-checkpoint 1") throw InputError("not a checkpoint file");
    Checkpoint ck;
    ck.step = detail::to_size(detail::expect_tag(in, "step"));
    const std::size_t cfg_lines = detail::to_size(detail::expect_tag(in, "config"));
    std::string cfg;
    for (std::size_t i = 0; i < cfg_lines; ++i) {
        if (!std::getline(in, line)) throw InputError("checkpoint: truncated config");
        cfg += line + "\n";
    }
    ck.config = parse_config(cfg);
    ck.rng_state = detail::expect_tag(in, "rng");
    ck.dropout_rng_state = detail::expect_tag(in, "dropout_rng");
    std::istringstream os(detail::expect_tag(in, "order"));
    std::string tok;
    os >> tok;
    ck.order.resize(detail::to_size(tok));
    for (auto& i : ck.order) {
        if (!(os >> tok)) throw InputError("checkpoint: truncated order");
        i = detail::to_size(tok);
    }
    ck.cursor = detail::to_size(detail::expect_tag(in, "cursor"));
    ck.params = detail::read_arrays(in, "params");
    ck.adam_m = detail::read_arrays(in, "adam_m");
    ck.adam_v = detail::read_arrays(in, "adam_v");
    detail::expect_tag(in, "end");
    return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write checkpoint '" + path + "'");
    write_checkpoint(out, ck);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot read checkpoint '" + path + "'");
    return read_checkpoint(in);
}

inline std::vector<NamedArray> snapshot(const ParamRegistry& params) {
    std::vector<NamedArray> out;
    for (const auto& [name, t] : params.entries()) {
        out.push_back({name, t.shape(), std::vector<double>(t.data().begin(), t.data().end())});
    }
    return out;
}

inline void restore(ParamRegistry& params, const std::vector<NamedArray>& arrays) {
    if (arrays.size() != params.size()) throw DimensionError("checkpoint parameter count does not match the model");
    for (const auto& a : arrays) {
        auto& t = params.get(a.name);
        if (t.shape() != a.shape) throw DimensionError("checkpoint parameter '" + a.name + "' has shape " +
                                                       to_string(a.shape) + ", model expects " + to_string(t.shape()));
        std::copy(a.values.begin(), a.values.end(), t.mutable_data().begin());
    }
}

/// Model rebuilt from a checkpoint's config and parameters, in eval mode.
inline std::unique_ptr<Model> model_from(const Checkpoint& ck) {
    auto model = std::make_unique<Model>(ck.config.model, ck.config.seed);
    restore(model->params(), ck.params);
    return model;
}

// -- metrics -------------------------------------------------------------------

struct MetricsRow {
    std::size_t step = 0;
    double cl = 0, vtm = 0, mlm = 0, scl = 0, total = 0, lr = 0;
};

inline const char* metrics_header() { return "step cl vtm mlm scl total lr"; }

inline std::string format_metrics(const MetricsRow& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%zu %.17g %.17g %.17g %.17g %.17g %.17g", r.step, r.cl, r.vtm, r.mlm, r.scl,
                  r.total, r.lr);
    return buf;
}

// -- trainer -------------------------------------------------------------------

namespace detail {

template <class Engine>
std::string engine_state(const Engine& e) {
    std::ostringstream os;
    os << e;
    return os.str();
}

template <class Engine>
void set_engine_state(Engine& e, const std::string& s) {
    std::istringstream is(s);
    is >> e;
    if (!is) throw InputError("checkpoint: bad random engine state");
}

}  // namespace detail

/// AdamW with a per-group learning rate, global-norm clipping, and
/// deterministic batch order drawn from the config seed.
class Trainer {
public:
    Trainer(TrainConfig config, const std::vector<PairedSample>& corpus)
        : config_(std::move(config)),
          corpus_(&corpus),
          model_(std::make_unique<Model>(config_.model, config_.seed)),
          rng_(config_.seed ^ 0x5c1a7e5eedULL),
          dropout_rng_(config_.seed ^ 0xd0d0cafeULL) {
        config_.validate();
        if (corpus.size() < config_.batch) {
            throw ConfigError("corpus of " + std::to_string(corpus.size()) + " pairs is smaller than batch " +
                              std::to_string(config_.batch));
        }
        order_.resize(corpus.size());
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        std::shuffle(order_.begin(), order_.end(), rng_);
        reset_optimizer();
    }

    Trainer(const Checkpoint& ck, const std::vector<PairedSample>& corpus) : Trainer(ck.config, corpus) {
        if (ck.order.size() != corpus.size()) throw InputError("checkpoint was trained on a different corpus size");
        restore(model_->params(), ck.params);
        restore_moments(m_, ck.adam_m);
        restore_moments(v_, ck.adam_v);
        step_ = ck.step;
        order_ = ck.order;
        cursor_ = ck.cursor;
        detail::set_engine_state(rng_, ck.rng_state);
        detail::set_engine_state(dropout_rng_, ck.dropout_rng_state);
    }

    Trainer(const Trainer&) = delete;
    Trainer& operator=(const Trainer&) = delete;

    const TrainConfig& config() const { return config_; }
    Model& model() { return *model_; }
    const Model& model() const { return *model_; }
    std::size_t step() const { return step_; }

    // Written before a numeric failure propagates.
    void set_diagnostic_path(std::string path) { diagnostic_path_ = std::move(path); }
    // Receives a header line once, then one line per step.
    void set_metrics_stream(std::ostream* out) { metrics_ = out; }
    // Called every checkpoint_every steps (if nonzero).
    void set_checkpoint_callback(std::function<void(const Checkpoint&)> cb) { on_checkpoint_ = std::move(cb); }

    void reset_optimizer() {
        m_.clear();
        v_.clear();
        for (const auto& [_, t] : model_->params().entries()) {
            m_.emplace_back(t.size(), 0.0);
            v_.emplace_back(t.size(), 0.0);
        }
    }

    Checkpoint checkpoint() const {
        Checkpoint ck;
        ck.config = config_;
        ck.step = step_;
        ck.rng_state = detail::engine_state(rng_);
        ck.dropout_rng_state = detail::engine_state(dropout_rng_);
        ck.order = order_;
        ck.cursor = cursor_;
        ck.params = snapshot(model_->params());
        const auto& entries = model_->params().entries();
        for (std::size_t i = 0; i < entries.size(); ++i) {
            ck.adam_m.push_back({entries[i].first, entries[i].second.shape(), m_[i]});
            ck.adam_v.push_back({entries[i].first, entries[i].second.shape(), v_[i]});
        }
        return ck;
    }

    Batch next_batch() {
        const std::size_t b = config_.batch;
        if (cursor_ + b > order_.size()) {
            std::shuffle(order_.begin(), order_.end(), rng_);
            cursor_ = 0;
        }
        Batch batch;
        for (std::size_t i = 0; i < b; ++i) batch.push_back(&(*corpus_)[order_[cursor_ + i]]);
        cursor_ += b;
        return batch;
    }

    /// One optimizer update. Returns the metrics row for it.
    MetricsRow train_step() {
        if (step_ >= config_.total_steps) throw ConfigError("train_step: already at total_steps");
        if (metrics_ && !header_written_) {
            *metrics_ << metrics_header() << '\n';
            header_written_ = true;
        }
        auto batch = next_batch();
        const auto draws = draw_step(batch, config_, rng_);
        auto& params = model_->params();
        params.zero_grad();
        model_->set_training(true, &dropout_rng_);
        LossReport report;
        try {
            report = total_loss(*model_, batch, config_, draws);
            report.total_tensor.backward();
            require_finite_grads();
        } catch (const NumericError&) {
            model_->set_training(false);
            if (!diagnostic_path_.empty()) save_checkpoint(diagnostic_path_, checkpoint());
            throw;
        }
        model_->set_training(false);

        clip_gradients();
        const auto lr = lr_at(step_ + 1, config_);
        apply_update(lr);
        ++step_;

        MetricsRow row{step_, report.cl, report.vtm, report.mlm, report.scl, report.total, lr.encoder};
        if (metrics_) *metrics_ << format_metrics(row) << '\n';
        if (on_checkpoint_ && config_.checkpoint_every && step_ % config_.checkpoint_every == 0) {
            on_checkpoint_(checkpoint());
        }
        return row;
    }

    /// Trains until total_steps; returns the rows of this call.
    std::vector<MetricsRow> run() {
        std::vector<MetricsRow> rows;
        while (step_ < config_.total_steps) rows.push_back(train_step());
        return rows;
    }

private:
    void restore_moments(std::vector<std::vector<double>>& dst, const std::vector<NamedArray>& src) {
        const auto& entries = model_->params().entries();
        if (src.size() != entries.size()) throw DimensionError("checkpoint optimizer state does not match the model");
        for (std::size_t i = 0; i < entries.size(); ++i) {
            if (src[i].name != entries[i].first || src[i].values.size() != dst[i].size()) {
                throw DimensionError("checkpoint optimizer entry '" + src[i].name + "' does not match the model");
            }
            dst[i] = src[i].values;
        }
    }

    void require_finite_grads() const {
        for (const auto& [name, t] : model_->params().entries()) {
            if (!t.has_grad()) continue;
            for (double g : t.grad()) {
                if (!std::isfinite(g)) throw NumericError("non-finite gradient in '" + name + "'");
            }
        }
    }

    void clip_gradients() {
        if (config_.grad_clip <= 0.0) return;
        double sq = 0.0;
        for (const auto& [_, t] : model_->params().entries()) {
            if (!t.has_grad()) continue;
            for (double g : t.grad()) sq += g * g;
        }
        const double norm = std::sqrt(sq);
        if (norm <= config_.grad_clip) return;
        const double s = config_.grad_clip / norm;
        for (const auto& entry : model_->params().entries()) {
            Tensor t = entry.second;  // shares storage
            if (!t.has_grad()) continue;
            for (double& g : t.mutable_grad()) g *= s;
        }
    }

    void apply_update(const LearningRates& lr) {
        const double b1 = config_.adam_beta1, b2 = config_.adam_beta2;
        const double t = static_cast<double>(step_ + 1);
        const double c1 = 1.0 - std::pow(b1, t), c2 = 1.0 - std::pow(b2, t);
        const auto& entries = model_->params().entries();
        for (std::size_t i = 0; i < entries.size(); ++i) {
            const auto& name = entries[i].first;
            Tensor p = entries[i].second;
            const double rate = Model::is_fusion_param(name) ? lr.fusion : lr.encoder;
            const bool decay = name != "cl.tau";
            auto data = p.mutable_data();
            const bool has = p.has_grad();
            const auto grad = p.grad();
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t j = 0; j < data.size(); ++j) {
                const double g = has ? grad[j] : 0.0;
                m[j] = b1 * m[j] + (1.0 - b1) * g;
                v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                if (decay) data[j] -= rate * config_.weight_decay * data[j];
                data[j] -= rate * (m[j] / c1) / (std::sqrt(v[j] / c2) + config_.adam_eps);
            }
        }
        auto tau = model_->cl_tau().mutable_data();
        tau[0] = std::clamp(tau[0], 1e-3, 1.0);
    }

    TrainConfig config_;
    const std::vector<PairedSample>* corpus_;
    std::unique_ptr<Model> model_;
    Rng rng_;
    Rng dropout_rng_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    std::size_t step_ = 0;
    std::vector<std::vector<double>> m_, v_;
    std::string diagnostic_path_;
    std::ostream* metrics_ = nullptr;
    bool header_written_ = false;
    std::function<void(const Checkpoint&)> on_checkpoint_;
};

// -- curriculum ----------------------------------------------------------------

/// Copies every parameter of an image-phase model into a video-phase model.
/// Temporal embeddings keep the image row in slot 0; the remaining slots keep
/// the target's fresh truncated-normal initialization.
inline void curriculum_transfer(const Model& image_model, Model& video_model) {
    const auto& src = image_model.params();
    auto& dst = video_model.params();
    if (src.size() != dst.size()) throw DimensionError("curriculum_transfer: models have different parameter sets");
    for (const auto& [name, s] : src.entries()) {
        auto& d = dst.get(name);
        if (name == "vision.pos_temporal") {
            if (s.cols() != d.cols()) throw DimensionError("curriculum_transfer: temporal embedding width differs");
            const std::size_t w = s.cols();
            std::copy_n(s.data().begin(), w, d.mutable_data().begin());
            continue;
        }
        if (s.shape() != d.shape()) {
            throw DimensionError("curriculum_transfer: '" + name + "' is " + to_string(s.shape()) + " vs " +
                                 to_string(d.shape()));
        }
        std::copy(s.data().begin(), s.data().end(), d.mutable_data().begin());
    }
}

}  // namespace scl
