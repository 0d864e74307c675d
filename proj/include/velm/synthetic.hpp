#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "velm/dataset.hpp"
#include "velm/error.hpp"
#include "velm/image.hpp"
#include "velm/json.hpp"
#include "velm/prompting.hpp"
#include "velm/rng.hpp"

namespace velm {

/// Procedural stand-in for an industrial benchmark: each category is a base texture, each
/// anomaly kind a painted defect with an exact mask.
struct SynthConfig {
    std::vector<std::string> categories{"checker", "mottle", "stripes"};
    std::vector<std::string> kinds{"blob", "color_patch", "scratch"};
    int train_samples = 30;
    int good_test_samples = 20;
    int test_per_kind = 20;
    int image_size = 128;
    std::uint64_t seed = 0;
};

inline const std::vector<std::string>& synth_textures() {
    static const std::vector<std::string> t{"checker", "mottle", "stripes"};
    return t;
}

inline const std::vector<std::string>& synth_kinds() {
    static const std::vector<std::string> k{"blob", "color_patch", "scratch"};
    return k;
}

inline void validate(const SynthConfig& c) {
    if (c.categories.empty()) throw ValidationError("synth: no categories");
    if (c.kinds.empty()) throw ValidationError("synth: no anomaly kinds");
    if (c.image_size < 32) throw ValidationError("synth: image_size must be >= 32");
    if (c.train_samples < 1 || c.test_per_kind < 1 || c.good_test_samples < 0) {
        throw ValidationError("synth: sample counts must be positive");
    }
    for (const auto& k : c.kinds) {
        if (std::find(synth_kinds().begin(), synth_kinds().end(), k) == synth_kinds().end()) {
            throw ValidationError("synth: unknown anomaly kind '" + k + "'");
        }
    }
    std::vector<std::string> cats = c.categories;
    std::sort(cats.begin(), cats.end());
    if (std::adjacent_find(cats.begin(), cats.end()) != cats.end()) throw ValidationError("synth: duplicate category");
}

struct SynthSample {
    RgbImage image;
    Mask mask;
};

namespace synth_detail {

inline std::uint8_t clamp_u8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

/// Texture family is chosen by category position so arbitrary names still work.
inline RgbImage base_texture(std::size_t category_index, int size, SeededRng& rng) {
    const std::size_t family = category_index % 3;
    const double tint = 20.0 * static_cast<double>(category_index / 3);
    RgbImage img(size, size);
    const double phase_x = rng.uniform(0, 2 * std::numbers::pi), phase_y = rng.uniform(0, 2 * std::numbers::pi);
    const int cell = std::max(4, size / 8);
    const int off_x = static_cast<int>(rng.below(static_cast<std::uint64_t>(cell)));
    const int off_y = static_cast<int>(rng.below(static_cast<std::uint64_t>(cell)));
    const double s = size / 128.0;
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            double r = 0, g = 0, b = 0;
            if (family == 0) {
                const bool dark = (((x + off_x) / cell) + ((y + off_y) / cell)) % 2 == 0;
                r = dark ? 95 : 150;
                g = dark ? 100 : 155;
                b = dark ? 110 : 160;
            } else if (family == 1) {
                const double v = std::sin(x / (9.0 * s) + phase_x) + std::sin(y / (11.0 * s) + phase_y) +
                                 0.6 * std::sin((x + y) / (7.0 * s) + phase_x + phase_y);
                r = 150 + 14 * v;
                g = 120 + 12 * v;
                b = 80 + 8 * v;
            } else {
                const double v = std::sin(2 * std::numbers::pi * (x * 0.8 + y * 0.6) / (10.0 * s) + phase_x);
                r = 90 + 25 * v;
                g = 130 + 25 * v;
                b = 110 + 20 * v;
            }
            const double n = 4.0 * rng.gaussian();
            img.set(x, y, {clamp_u8(r + tint + n), clamp_u8(g + n), clamp_u8(b - tint + n)});
        }
    }
    return img;
}

inline void paint_blob(SynthSample& s, SeededRng& rng) {
    const int size = s.image.width();
    const double k = size / 128.0;
    const double rx = rng.uniform(6, 12) * k, ry = rng.uniform(6, 12) * k;
    const double cx = rng.uniform(14 * k, size - 14 * k), cy = rng.uniform(14 * k, size - 14 * k);
    const double shade = rng.uniform(25, 55);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double dx = (x - cx) / rx, dy = (y - cy) / ry;
            if (dx * dx + dy * dy <= 1.0) {
                s.image.set(x, y, {clamp_u8(shade), clamp_u8(shade * 0.8), clamp_u8(shade * 0.6)});
                s.mask(x, y) = 1;
            }
        }
}

inline void paint_scratch(SynthSample& s, SeededRng& rng) {
    const int size = s.image.width();
    const double k = size / 128.0;
    const double len = rng.uniform(0.3, 0.5) * size;
    const double angle = rng.uniform(0, std::numbers::pi);
    const double dx = std::cos(angle) * len / 2, dy = std::sin(angle) * len / 2;
    const double cx = rng.uniform(std::abs(dx) + 4, size - std::abs(dx) - 4);
    const double cy = rng.uniform(std::abs(dy) + 4, size - std::abs(dy) - 4);
    const double half_width = 1.6 * std::max(1.0, k);
    const double ax = cx - dx, ay = cy - dy, bx = cx + dx, by = cy + dy;
    const double len2 = (bx - ax) * (bx - ax) + (by - ay) * (by - ay);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double t = std::clamp(((x - ax) * (bx - ax) + (y - ay) * (by - ay)) / len2, 0.0, 1.0);
            const double px = ax + t * (bx - ax) - x, py = ay + t * (by - ay) - y;
            if (px * px + py * py <= half_width * half_width) {
                s.image.set(x, y, {240, 240, 232});
                s.mask(x, y) = 1;
            }
        }
}

/// Channel rotation keeps the texture but changes its colour.
inline void paint_color_patch(SynthSample& s, SeededRng& rng) {
    const int size = s.image.width();
    const double k = size / 128.0;
    const int w = static_cast<int>(rng.uniform(12, 20) * k), h = static_cast<int>(rng.uniform(12, 20) * k);
    const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(size - w - 8))) + 4;
    const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(size - h - 8))) + 4;
    for (int y = y0; y < y0 + h; ++y)
        for (int x = x0; x < x0 + w; ++x) {
            const Rgb c = s.image.at(x, y);
            s.image.set(x, y, {c.b, clamp_u8(c.r + 40.0), c.g});
            s.mask(x, y) = 1;
        }
}

}  // namespace synth_detail

/// One sample; `kind` empty for a normal image. Depends only on its arguments.
inline SynthSample render_synthetic_sample(const SynthConfig& cfg, std::size_t category_index, const std::string& kind,
                                           std::uint64_t sample_seed) {
    SeededRng rng(sample_seed);
    SynthSample s;
    s.image = synth_detail::base_texture(category_index, cfg.image_size, rng);
    s.mask = Mask(cfg.image_size, cfg.image_size);
    if (kind == "blob") {
        synth_detail::paint_blob(s, rng);
    } else if (kind == "scratch") {
        synth_detail::paint_scratch(s, rng);
    } else if (kind == "color_patch") {
        synth_detail::paint_color_patch(s, rng);
    } else if (!kind.empty()) {
        throw ValidationError("synth: unknown anomaly kind '" + kind + "'");
    }
    return s;
}

inline Taxonomy synthetic_taxonomy(const SynthConfig& cfg) {
    static const std::map<std::string, std::string> kind_text{
        {"blob", "A compact, dark, rounded spot covering part of the surface."},
        {"scratch", "A thin, straight, bright line crossing the surface."},
        {"color_patch", "A rectangular area where the texture is intact but its colour is shifted."},
    };
    static const std::vector<std::string> family_text{
        "A flat panel printed with a regular grey checkerboard of square cells.",
        "A surface with a smooth, wavy brown mottled pattern.",
        "A surface printed with parallel green diagonal stripes of equal width.",
    };
    Taxonomy t;
    for (std::size_t i = 0; i < cfg.categories.size(); ++i) {
        TaxonomyEntry e;
        e.normal_description = family_text[i % 3];
        e.classification_strategy =
            "Look at the outlined region in the annotated image and compare it with the same area of the reference image. "
            "Decide by the shape and colour of the deviation, not by its position.";
        for (const auto& k : cfg.kinds) e.classes[k] = kind_text.at(k);
        t[cfg.categories[i]] = std::move(e);
    }
    return t;
}

namespace synth_detail {
inline std::string numbered(int i) {
    std::string s = std::to_string(i);
    return std::string(s.size() < 3 ? 3 - s.size() : 0, '0') + s;
}
}  // namespace synth_detail

/// Writes an mvtec-layout tree plus `taxonomy.json` under `out`.
inline void generate_synthetic_benchmark(const SynthConfig& cfg, const std::filesystem::path& out) {
    namespace fs = std::filesystem;
    validate(cfg);
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec || !fs::is_directory(out)) throw IoError("synth: cannot create output directory", out);
    for (std::size_t ci = 0; ci < cfg.categories.size(); ++ci) {
        const auto& cat = cfg.categories[ci];
        auto seed_for = [&](const std::string& what, int i) {
            return mix_seed(cfg.seed, cat + "/" + what + "/" + std::to_string(i));
        };
        for (int i = 0; i < cfg.train_samples; ++i) {
            write_png_rgb(out / cat / "train" / kGood / (synth_detail::numbered(i) + ".png"),
                          render_synthetic_sample(cfg, ci, {}, seed_for("train", i)).image);
        }
        for (int i = 0; i < cfg.good_test_samples; ++i) {
            write_png_rgb(out / cat / "test" / kGood / (synth_detail::numbered(i) + ".png"),
                          render_synthetic_sample(cfg, ci, {}, seed_for("test/good", i)).image);
        }
        for (const auto& kind : cfg.kinds) {
            for (int i = 0; i < cfg.test_per_kind; ++i) {
                const auto s = render_synthetic_sample(cfg, ci, kind, seed_for("test/" + kind, i));
                const auto stem = synth_detail::numbered(i);
                write_png_rgb(out / cat / "test" / kind / (stem + ".png"), s.image);
                write_png_mask(out / cat / "ground_truth" / kind / (stem + "_mask.png"), s.mask);
            }
        }
    }
    write_json_file(out / "taxonomy.json", to_json(synthetic_taxonomy(cfg)));
}

}  // namespace velm
