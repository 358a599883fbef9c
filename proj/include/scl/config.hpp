#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "scl/errors.hpp"

namespace scl {

enum class VisionVariant { FrameCLS, MeanPooling, GlobalCLS };
enum class Phase { Image, Video };

inline const char* to_string(VisionVariant v) {
    switch (v) {
        case VisionVariant::FrameCLS: return "frame-cls";
        case VisionVariant::MeanPooling: return "mean-pooling";
        case VisionVariant::GlobalCLS: return "global-cls";
    }
    return "?";
}

inline VisionVariant parse_variant(const std::string& s) {
    if (s == "frame-cls") return VisionVariant::FrameCLS;
    if (s == "mean-pooling") return VisionVariant::MeanPooling;
    if (s == "global-cls") return VisionVariant::GlobalCLS;
    throw ConfigError("unknown vision variant '" + s + "' (frame-cls, mean-pooling, global-cls)");
}

inline const char* to_string(Phase p) { return p == Phase::Image ? "image" : "video"; }

inline Phase parse_phase(const std::string& s) {
    if (s == "image") return Phase::Image;
    if (s == "video") return Phase::Video;
    throw ConfigError("unknown curriculum phase '" + s + "' (image, video)");
}

struct ModelConfig {
    std::size_t channels = 3;
    std::size_t height = 16;
    std::size_t width = 16;
    std::size_t patch = 4;
    std::size_t dim = 32;
    std::size_t heads = 4;
    std::size_t vision_layers = 2;
    std::size_t text_layers = 2;
    std::size_t fusion_layers = 2;
    std::size_t max_frames = 1;
    std::size_t vocab_size = 64;
    std::size_t max_text_len = 12;
    std::size_t mlp_ratio = 4;
    double dropout = 0.1;
    double ln_eps = 1e-6;
    double init_std = 0.02;
    double cl_tau_init = 0.05;
    VisionVariant variant = VisionVariant::FrameCLS;

    std::size_t patches_per_frame() const { return (height / patch) * (width / patch); }
    std::size_t grid_rows() const { return height / patch; }
    std::size_t grid_cols() const { return width / patch; }

    void validate() const {
        if (dim == 0 || heads == 0 || dim % heads) throw ConfigError("model.dim must be a positive multiple of model.heads");
        if (patch == 0 || height % patch || width % patch) throw ConfigError("model.patch must divide height and width");
        if (max_frames == 0) throw ConfigError("model.max_frames must be at least 1");
        if (max_text_len < 2) throw ConfigError("model.max_text_len must be at least 2");
        if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model.dropout must lie in [0, 1)");
        if (!(cl_tau_init >= 1e-3 && cl_tau_init <= 1.0)) throw ConfigError("model.cl_tau_init must lie in [1e-3, 1]");
    }
};

struct ObjectiveFlags {
    bool cl = true;
    bool vtm = true;
    bool mlm = true;
    bool mvsc = true;  // masked vision semantic completion
    bool mlsc = true;  // masked language semantic completion

    bool scl() const { return mvsc || mlsc; }
    bool any() const { return cl || vtm || mlm || scl(); }
};

struct TrainConfig {
    ModelConfig model;
    ObjectiveFlags objectives;
    std::size_t total_steps = 300;
    std::size_t batch = 8;
    double base_lr = 1e-3;
    double fusion_lr_multiplier = 5.0;
    double weight_decay = 0.01;
    double warmup_fraction = 0.10;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.98;
    double adam_eps = 1e-8;
    double grad_clip = 1.0;
    double image_mask_ratio = 0.8;
    double text_mask_ratio = 0.4;
    double mlm_ratio = 0.15;
    double scl_tau = 0.03;
    // Reuse the SCL text mask for MLM instead of drawing a separate one.
    bool share_text_mask = false;
    std::uint64_t seed = 1;
    Phase phase = Phase::Image;
    std::size_t checkpoint_every = 0;

    std::size_t frames() const { return phase == Phase::Image ? 1 : model.max_frames; }

    void validate() const {
        model.validate();
        if (!objectives.any()) throw ConfigError("at least one objective must be enabled");
        if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0)) throw ConfigError("warmup_fraction must lie in (0, 1)");
        if (batch == 0) throw ConfigError("batch must be positive");
        if (objectives.vtm && batch < 2) throw ConfigError("VTM needs batch >= 2 to build negatives");
        for (double r : {image_mask_ratio, text_mask_ratio, mlm_ratio}) {
            if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("mask ratios must lie in [0, 1]");
        }
        if (!(scl_tau > 0.0)) throw ConfigError("scl_tau must be positive");
        if (!(base_lr >= 0.0)) throw ConfigError("base_lr must be non-negative");
    }
};

namespace detail {

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Binds each config key to a getter and setter so reading and writing share one table.
struct Field {
    std::string key;
    std::function<std::string(const TrainConfig&)> get;
    std::function<void(TrainConfig&, const std::string&)> set;
};

inline std::size_t parse_size(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    long long x = 0;
    try {
        x = std::stoll(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != v.size() || x < 0) throw ConfigError("config key '" + key + "' expects a non-negative integer, got '" + v + "'");
    return static_cast<std::size_t>(x);
}

inline double parse_real(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double x = 0.0;
    try {
        x = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != v.size()) throw ConfigError("config key '" + key + "' expects a number, got '" + v + "'");
    return x;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "' expects true/false, got '" + v + "'");
}

#define SCL_SIZE_FIELD(name, member)                                                            \
    Field{name, [](const TrainConfig& c) { return std::to_string(c.member); },                 \
          [](TrainConfig& c, const std::string& v) { c.member = parse_size(name, v); }}
#define SCL_REAL_FIELD(name, member)                                                            \
    Field{name, [](const TrainConfig& c) { return format_double(c.member); },                  \
          [](TrainConfig& c, const std::string& v) { c.member = parse_real(name, v); }}
#define SCL_BOOL_FIELD(name, member)                                                            \
    Field{name, [](const TrainConfig& c) { return std::string(c.member ? "true" : "false"); }, \
          [](TrainConfig& c, const std::string& v) { c.member = parse_bool(name, v); }}

inline const std::vector<Field>& fields() {
    static const std::vector<Field> table{
        SCL_SIZE_FIELD("model.channels", model.channels),
        SCL_SIZE_FIELD("model.height", model.height),
        SCL_SIZE_FIELD("model.width", model.width),
        SCL_SIZE_FIELD("model.patch", model.patch),
        SCL_SIZE_FIELD("model.dim", model.dim),
        SCL_SIZE_FIELD("model.heads", model.heads),
        SCL_SIZE_FIELD("model.vision_layers", model.vision_layers),
        SCL_SIZE_FIELD("model.text_layers", model.text_layers),
        SCL_SIZE_FIELD("model.fusion_layers", model.fusion_layers),
        SCL_SIZE_FIELD("model.max_frames", model.max_frames),
        SCL_SIZE_FIELD("model.vocab_size", model.vocab_size),
        SCL_SIZE_FIELD("model.max_text_len", model.max_text_len),
        SCL_SIZE_FIELD("model.mlp_ratio", model.mlp_ratio),
        SCL_REAL_FIELD("model.dropout", model.dropout),
        SCL_REAL_FIELD("model.ln_eps", model.ln_eps),
        SCL_REAL_FIELD("model.init_std", model.init_std),
        SCL_REAL_FIELD("model.cl_tau_init", model.cl_tau_init),
        Field{"model.variant", [](const TrainConfig& c) { return std::string(to_string(c.model.variant)); },
              [](TrainConfig& c, const std::string& v) { c.model.variant = parse_variant(v); }},
        SCL_BOOL_FIELD("objectives.cl", objectives.cl),
        SCL_BOOL_FIELD("objectives.vtm", objectives.vtm),
        SCL_BOOL_FIELD("objectives.mlm", objectives.mlm),
        SCL_BOOL_FIELD("objectives.mvsc", objectives.mvsc),
        SCL_BOOL_FIELD("objectives.mlsc", objectives.mlsc),
        SCL_SIZE_FIELD("total_steps", total_steps),
        SCL_SIZE_FIELD("batch", batch),
        SCL_REAL_FIELD("base_lr", base_lr),
        SCL_REAL_FIELD("fusion_lr_multiplier", fusion_lr_multiplier),
        SCL_REAL_FIELD("weight_decay", weight_decay),
        SCL_REAL_FIELD("warmup_fraction", warmup_fraction),
        SCL_REAL_FIELD("adam_beta1", adam_beta1),
        SCL_REAL_FIELD("adam_beta2", adam_beta2),
        SCL_REAL_FIELD("adam_eps", adam_eps),
        SCL_REAL_FIELD("grad_clip", grad_clip),
        SCL_REAL_FIELD("image_mask_ratio", image_mask_ratio),
        SCL_REAL_FIELD("text_mask_ratio", text_mask_ratio),
        SCL_REAL_FIELD("mlm_ratio", mlm_ratio),
        SCL_REAL_FIELD("scl_tau", scl_tau),
        SCL_BOOL_FIELD("share_text_mask", share_text_mask),
        Field{"seed", [](const TrainConfig& c) { return std::to_string(c.seed); },
              [](TrainConfig& c, const std::string& v) { c.seed = std::stoull(v); }},
        Field{"phase", [](const TrainConfig& c) { return std::string(to_string(c.phase)); },
              [](TrainConfig& c, const std::string& v) { c.phase = parse_phase(v); }},
        SCL_SIZE_FIELD("checkpoint_every", checkpoint_every),
    };
    return table;
}

#undef SCL_SIZE_FIELD
#undef SCL_REAL_FIELD
#undef SCL_BOOL_FIELD

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace detail

inline void set_config_value(TrainConfig& config, const std::string& key, const std::string& value) {
    for (const auto& f : detail::fields()) {
        if (f.key == key) {
            f.set(config, value);
            return;
        }
    }
    throw ConfigError("unknown config key '" + key + "'");
}

/// `key = value` lines; '#' starts a comment. Keys not mentioned keep their defaults.
inline void apply_config_text(TrainConfig& config, const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(number) + ": expected 'key = value'");
        }
        set_config_value(config, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    }
}

inline TrainConfig parse_config(const std::string& text) {
    TrainConfig config;
    apply_config_text(config, text);
    return config;
}

inline std::string serialize_config(const TrainConfig& config) {
    std::string out;
    for (const auto& f : detail::fields()) out += f.key + " = " + f.get(config) + "\n";
    return out;
}

inline TrainConfig load_config_file(const std::string& path, TrainConfig base = {}) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot read config file '" + path + "'");
    std::stringstream buffer;
    buffer << in.rdbuf();
    apply_config_text(base, buffer.str());
    return base;
}

}  // namespace scl
