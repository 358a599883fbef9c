#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "scl/errors.hpp"

namespace scl {

inline constexpr std::size_t kPadId = 0;
inline constexpr std::size_t kClsId = 1;
inline constexpr std::size_t kMaskId = 2;
inline constexpr std::size_t kReservedCount = 3;

inline bool is_reserved(std::size_t id) { return id < kReservedCount; }

/// Word <-> id table. Ids 0..2 are [PAD], [CLS], [MASK].
class Vocab {
public:
    explicit Vocab(std::size_t size = 64) {
        static constexpr std::array<std::string_view, 3> reserved{"[PAD]", "[CLS]", "[MASK]"};
        static constexpr std::array<std::string_view, 30> words{
            "red",  "green", "blue",  "square", "cross", "bar",   "top",   "bottom", "left",  "right",
            "and",  "moving", "up",   "down",   "a",     "the",   "with",  "on",     "in",    "of",
            "shape", "is",   "near",  "small",  "large", "bright", "dark", "image",  "video", "frame"};
        if (size < reserved.size() + 14) throw ConfigError("vocab size too small for the caption grammar");
        for (auto w : reserved) push(std::string(w));
        for (auto w : words) {
            if (words_.size() == size) break;
            push(std::string(w));
        }
        while (words_.size() < size) push("tok" + std::to_string(words_.size()));
    }

    std::size_t size() const { return words_.size(); }

    std::size_t id(std::string_view word) const {
        auto it = ids_.find(std::string(word));
        if (it == ids_.end()) throw VocabError("unknown word '" + std::string(word) + "'");
        return it->second;
    }
    bool contains(std::string_view word) const { return ids_.contains(std::string(word)); }

    const std::string& word(std::size_t id) const {
        if (id >= words_.size()) throw VocabError("token id " + std::to_string(id) + " outside vocabulary");
        return words_[id];
    }

private:
    void push(std::string w) {
        ids_.emplace(w, words_.size());
        words_.push_back(std::move(w));
    }
    std::vector<std::string> words_;
    std::unordered_map<std::string, std::size_t> ids_;
};

/// [CLS] + whitespace-split word ids, padded or truncated to max_len.
inline std::vector<std::size_t> tokenize(std::string_view text, const Vocab& vocab, std::size_t max_len = 12) {
    if (max_len == 0) throw ConfigError("tokenize: max_len must be positive");
    std::vector<std::size_t> ids{kClsId};
    std::istringstream in{std::string(text)};
    std::string word;
    while (in >> word) {
        const std::size_t id = vocab.id(word);
        if (ids.size() < max_len) ids.push_back(id);
    }
    ids.resize(max_len, kPadId);
    return ids;
}

inline std::string detokenize(const std::vector<std::size_t>& ids, const Vocab& vocab) {
    std::string out;
    for (auto id : ids) {
        if (id == kPadId || id == kClsId) continue;
        if (!out.empty()) out += ' ';
        out += vocab.word(id);
    }
    return out;
}

// true where attention may look (non-[PAD]).
inline std::vector<bool> text_key_mask(const std::vector<std::size_t>& ids) {
    std::vector<bool> mask(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) mask[i] = ids[i] != kPadId;
    return mask;
}

// Scene vocabulary ----------------------------------------------------------

enum class ShapeKind { Square, Cross, Bar };
enum class Color { Red, Green, Blue };
enum class Quadrant { TopLeft, TopRight, BottomLeft, BottomRight };
enum class Motion { Up, Down, Left, Right };

inline constexpr std::array<std::string_view, 3> kShapeWords{"square", "cross", "bar"};
inline constexpr std::array<std::string_view, 3> kColorWords{"red", "green", "blue"};
inline constexpr std::array<std::string_view, 4> kMotionWords{"up", "down", "left", "right"};

struct ShapeSpec {
    ShapeKind kind;
    Color color;
    Quadrant quadrant;
    friend bool operator==(const ShapeSpec&, const ShapeSpec&) = default;
};

struct SceneSpec {
    std::vector<ShapeSpec> shapes;     // one per quadrant at most, in quadrant order
    std::optional<Motion> motion;      // videos only
    friend bool operator==(const SceneSpec&, const SceneSpec&) = default;
};

inline std::string caption_for(const SceneSpec& scene) {
    std::string out;
    for (std::size_t i = 0; i < scene.shapes.size(); ++i) {
        const auto& s = scene.shapes[i];
        if (i) out += " and ";
        out += kColorWords[static_cast<int>(s.color)];
        out += ' ';
        out += kShapeWords[static_cast<int>(s.kind)];
        const bool top = s.quadrant == Quadrant::TopLeft || s.quadrant == Quadrant::TopRight;
        const bool left = s.quadrant == Quadrant::TopLeft || s.quadrant == Quadrant::BottomLeft;
        out += top ? " top" : " bottom";
        out += left ? " left" : " right";
    }
    if (scene.motion) {
        out += " moving ";
        out += kMotionWords[static_cast<int>(*scene.motion)];
    }
    return out;
}

// Inverse of caption_for; throws InputError for sentences outside the grammar.
inline SceneSpec parse_caption(std::string_view text) {
    std::vector<std::string> w;
    {
        std::istringstream in{std::string(text)};
        std::string s;
        while (in >> s) w.push_back(s);
    }
    auto index_of = [&](auto const& table, const std::string& word) -> int {
        for (std::size_t i = 0; i < table.size(); ++i)
            if (table[i] == word) return static_cast<int>(i);
        throw InputError("caption: unexpected word '" + word + "'");
    };
    SceneSpec scene;
    std::size_t i = 0;
    while (i < w.size()) {
        if (w[i] == "moving") {
            if (i + 2 != w.size()) throw InputError("caption: motion phrase must end the sentence");
            scene.motion = static_cast<Motion>(index_of(kMotionWords, w[i + 1]));
            break;
        }
        if (!scene.shapes.empty()) {
            if (w[i] != "and") throw InputError("caption: expected 'and' between shapes");
            ++i;
        }
        if (i + 4 > w.size()) throw InputError("caption: truncated shape phrase");
        ShapeSpec s{};
        s.color = static_cast<Color>(index_of(kColorWords, w[i]));
        s.kind = static_cast<ShapeKind>(index_of(kShapeWords, w[i + 1]));
        const bool top = w[i + 2] == "top";
        if (!top && w[i + 2] != "bottom") throw InputError("caption: expected top/bottom");
        const bool left = w[i + 3] == "left";
        if (!left && w[i + 3] != "right") throw InputError("caption: expected left/right");
        s.quadrant = top ? (left ? Quadrant::TopLeft : Quadrant::TopRight)
                         : (left ? Quadrant::BottomLeft : Quadrant::BottomRight);
        scene.shapes.push_back(s);
        i += 4;
    }
    if (scene.shapes.empty()) throw InputError("caption: no shapes");
    return scene;
}

// Largest shape count whose caption fits max_len tokens including [CLS].
inline std::size_t max_shapes_for(std::size_t max_len, bool video) {
    // s shapes take 5s - 1 words, a motion phrase two more.
    const std::size_t motion = video ? 2 : 0;
    if (max_len < motion) return 0;
    return std::min<std::size_t>(3, (max_len - motion) / 5);
}

/// Synthetic visual datum with a caption describing it.
struct PairedSample {
    std::size_t frames = 1, channels = 3, height = 16, width = 16;
    std::vector<double> pixels;          // frames × channels × height × width, in [0, 1]
    std::vector<std::size_t> caption;    // token ids, [CLS] first, padded to max_len
    std::uint64_t scene_id = 0;
    SceneSpec scene;

    double pixel(std::size_t f, std::size_t c, std::size_t y, std::size_t x) const {
        return pixels[((f * channels + c) * height + y) * width + x];
    }
    friend bool operator==(const PairedSample&, const PairedSample&) = default;
};

struct CorpusOptions {
    std::size_t channels = 3;
    std::size_t height = 16;
    std::size_t width = 16;
    std::size_t max_text_len = 12;
    std::size_t vocab_size = 64;
    // Reject scenes whose caption already occurs, so each caption has one image.
    bool unique_captions = true;
    // Restrict every scene to exactly one shape (heatmap probes).
    bool single_shape = false;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// (rows, cols) footprint cells of a shape inside its bounding box.
inline std::vector<std::pair<int, int>> footprint(ShapeKind kind) {
    std::vector<std::pair<int, int>> cells;
    switch (kind) {
        case ShapeKind::Square:
            for (int y = 0; y < 4; ++y)
                for (int x = 0; x < 4; ++x) cells.emplace_back(y, x);
            break;
        case ShapeKind::Cross:
            for (int i = 0; i < 5; ++i) {
                cells.emplace_back(2, i);
                if (i != 2) cells.emplace_back(i, 2);
            }
            break;
        case ShapeKind::Bar:
            for (int y = 0; y < 2; ++y)
                for (int x = 0; x < 5; ++x) cells.emplace_back(y, x);
            break;
    }
    return cells;
}

inline std::pair<int, int> footprint_extent(ShapeKind kind) {
    switch (kind) {
        case ShapeKind::Square: return {4, 4};
        case ShapeKind::Cross: return {5, 5};
        case ShapeKind::Bar: return {2, 5};
    }
    return {0, 0};
}

}  // namespace detail

/// Pixels covered by one rendered shape, frame after frame.
struct RenderedShape {
    ShapeSpec spec;
    std::vector<std::pair<int, int>> pixels;  // (y, x)
    std::vector<std::size_t> frame_offsets;   // start of each frame's run in pixels
};

/// Renders a scene deterministically from its id. The id also decides shape
/// offsets within their quadrants and the background noise.
inline PairedSample render_scene(const SceneSpec& scene, std::uint64_t scene_id, std::size_t frames,
                                 const CorpusOptions& opt, const Vocab& vocab,
                                 std::vector<RenderedShape>* layout = nullptr) {
    if (opt.height % 2 || opt.width % 2) throw ConfigError("render: image extents must be even");
    const int qh = static_cast<int>(opt.height / 2), qw = static_cast<int>(opt.width / 2);
    PairedSample s;
    s.frames = frames;
    s.channels = opt.channels;
    s.height = opt.height;
    s.width = opt.width;
    s.scene_id = scene_id;
    s.scene = scene;
    s.pixels.assign(frames * opt.channels * opt.height * opt.width, 0.0);

    std::mt19937_64 rng(detail::splitmix64(scene_id ^ 0x5CE9E));
    std::uniform_real_distribution<double> noise(0.0, 0.1);
    for (auto& p : s.pixels) p = noise(rng);

    int dy = 0, dx = 0;
    if (scene.motion) {
        switch (*scene.motion) {
            case Motion::Up: dy = -1; break;
            case Motion::Down: dy = 1; break;
            case Motion::Left: dx = -1; break;
            case Motion::Right: dx = 1; break;
        }
    }
    for (const auto& shape : scene.shapes) {
        auto [h, w] = detail::footprint_extent(shape.kind);
        if (h > qh || w > qw) throw ConfigError("render: quadrant too small for shapes");
        const int slack_y = qh - h, slack_x = qw - w;
        const int travel_y = std::min<int>(slack_y, dy ? static_cast<int>(frames) - 1 : 0);
        const int travel_x = std::min<int>(slack_x, dx ? static_cast<int>(frames) - 1 : 0);
        std::uniform_int_distribution<int> oy(0, slack_y - travel_y), ox(0, slack_x - travel_x);
        int y0 = oy(rng), x0 = ox(rng);
        if (dy < 0) y0 += travel_y;
        if (dx < 0) x0 += travel_x;
        const bool top = shape.quadrant == Quadrant::TopLeft || shape.quadrant == Quadrant::TopRight;
        const bool left = shape.quadrant == Quadrant::TopLeft || shape.quadrant == Quadrant::BottomLeft;
        const int base_y = top ? 0 : qh, base_x = left ? 0 : qw;
        std::uniform_real_distribution<double> intensity(0.8, 1.0);
        const double level = intensity(rng);
        const std::size_t channel = static_cast<std::size_t>(shape.color) % opt.channels;

        RenderedShape placed{shape, {}, {}};
        for (std::size_t f = 0; f < frames; ++f) {
            const int step = static_cast<int>(f);
            const int fy = base_y + y0 + dy * std::min(step, travel_y);
            const int fx = base_x + x0 + dx * std::min(step, travel_x);
            placed.frame_offsets.push_back(placed.pixels.size());
            for (auto [cy, cx] : detail::footprint(shape.kind)) {
                const std::size_t y = static_cast<std::size_t>(fy + cy), x = static_cast<std::size_t>(fx + cx);
                for (std::size_t c = 0; c < opt.channels; ++c) {
                    s.pixels[((f * opt.channels + c) * opt.height + y) * opt.width + x] = c == channel ? level : 0.0;
                }
                placed.pixels.emplace_back(static_cast<int>(y), static_cast<int>(x));
            }
        }
        if (layout) layout->push_back(std::move(placed));
    }
    s.caption = tokenize(caption_for(scene), vocab, opt.max_text_len);
    return s;
}

inline SceneSpec random_scene(std::mt19937_64& rng, std::size_t frames, std::size_t max_shapes, bool single_shape) {
    SceneSpec scene;
    std::uniform_int_distribution<int> count_dist(1, static_cast<int>(std::max<std::size_t>(1, max_shapes)));
    const int count = single_shape ? 1 : count_dist(rng);
    std::array<int, 4> quadrants{0, 1, 2, 3};
    std::shuffle(quadrants.begin(), quadrants.end(), rng);
    std::sort(quadrants.begin(), quadrants.begin() + count);
    std::uniform_int_distribution<int> three(0, 2);
    for (int i = 0; i < count; ++i) {
        scene.shapes.push_back({static_cast<ShapeKind>(three(rng)), static_cast<Color>(three(rng)),
                                static_cast<Quadrant>(quadrants[i])});
    }
    if (frames > 1) scene.motion = static_cast<Motion>(std::uniform_int_distribution<int>(0, 3)(rng));
    return scene;
}

/// n paired samples, a pure function of (n, frames, seed, options).
inline std::vector<PairedSample> generate_corpus(std::size_t n, std::size_t frames, std::uint64_t seed,
                                                 const CorpusOptions& opt = {}) {
    if (n == 0) throw ConfigError("generate_corpus: n must be positive");
    if (frames == 0) throw ConfigError("generate_corpus: frames must be at least 1");
    const Vocab vocab(opt.vocab_size);
    const std::size_t max_shapes = max_shapes_for(opt.max_text_len, frames > 1);
    if (max_shapes == 0) throw ConfigError("generate_corpus: max_text_len too short for any caption");

    std::vector<PairedSample> corpus;
    corpus.reserve(n);
    std::set<std::string> seen;
    constexpr int kAttempts = 64;
    for (std::size_t i = 0; i < n; ++i) {
        for (int attempt = 0; attempt < kAttempts; ++attempt) {
            const std::uint64_t id =
                detail::splitmix64(detail::splitmix64(seed) ^ detail::splitmix64(i * kAttempts + attempt + 1));
            std::mt19937_64 rng(id);
            SceneSpec scene = random_scene(rng, frames, max_shapes, opt.single_shape);
            const std::string caption = caption_for(scene);
            if (opt.unique_captions && seen.contains(caption) && attempt + 1 < kAttempts) continue;
            seen.insert(caption);
            corpus.push_back(render_scene(scene, id, frames, opt, vocab));
            break;
        }
    }
    return corpus;
}

// Corpus file -----------------------------------------------------------------
//
//   scl-corpus 1 <count> <frames> <channels> <height> <width> <max_text_len> <vocab_size>
//   <scene_id>\t<caption words>\t<pixel> <pixel> ...      (one line per sample)
//
// Pixels are frame-major, then channel, row, column, printed with %.17g so a
// read returns the identical doubles.

inline void write_corpus(std::ostream& out, const std::vector<PairedSample>& corpus, const CorpusOptions& opt) {
    if (corpus.empty()) throw InputError("write_corpus: empty corpus");
    const Vocab vocab(opt.vocab_size);
    const auto& first = corpus.front();
    out << "scl-corpus 1 " << corpus.size() << ' ' << first.frames << ' ' << first.channels << ' ' << first.height
        << ' ' << first.width << ' ' << opt.max_text_len << ' ' << opt.vocab_size << '\n';
    char buf[32];
    for (const auto& s : corpus) {
        out << s.scene_id << '\t' << detokenize(s.caption, vocab) << '\t';
        for (std::size_t i = 0; i < s.pixels.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.17g", s.pixels[i]);
            if (i) out << ' ';
            out << buf;
        }
        out << '\n';
    }
}

inline std::vector<PairedSample> read_corpus(std::istream& in, CorpusOptions* opt_out = nullptr) {
    std::string magic;
    int version = 0;
    std::size_t count = 0, frames = 0;
    CorpusOptions opt;
    if (!(in >> magic >> version >> count >> frames >> opt.channels >> opt.height >> opt.width >> opt.max_text_len >>
          opt.vocab_size) ||
        magic != "scl-corpus" || version != 1) {
        throw InputError("read_corpus: missing or malformed header");
    }
    std::string line;
    std::getline(in, line);
    const Vocab vocab(opt.vocab_size);
    std::vector<PairedSample> corpus;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto t1 = line.find('\t');
        const auto t2 = line.find('\t', t1 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos) throw InputError("read_corpus: malformed record");
        PairedSample s;
        s.frames = frames;
        s.channels = opt.channels;
        s.height = opt.height;
        s.width = opt.width;
        s.scene_id = std::stoull(line.substr(0, t1));
        const std::string caption = line.substr(t1 + 1, t2 - t1 - 1);
        s.scene = parse_caption(caption);
        s.caption = tokenize(caption, vocab, opt.max_text_len);
        const char* p = line.c_str() + t2 + 1;
        const std::size_t expected = frames * opt.channels * opt.height * opt.width;
        s.pixels.reserve(expected);
        while (*p) {
            char* end = nullptr;
            const double v = std::strtod(p, &end);
            if (end == p) break;
            s.pixels.push_back(v);
            p = end;
        }
        if (s.pixels.size() != expected) throw InputError("read_corpus: pixel count mismatch");
        corpus.push_back(std::move(s));
    }
    if (corpus.size() != count) throw InputError("read_corpus: record count mismatch");
    if (opt_out) *opt_out = opt;
    return corpus;
}

inline void save_corpus(const std::string& path, const std::vector<PairedSample>& corpus, const CorpusOptions& opt) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write corpus file '" + path + "'");
    write_corpus(out, corpus, opt);
}

inline std::vector<PairedSample> load_corpus(const std::string& path, CorpusOptions* opt_out = nullptr) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot read corpus file '" + path + "'");
    return read_corpus(in, opt_out);
}

}  // namespace scl
