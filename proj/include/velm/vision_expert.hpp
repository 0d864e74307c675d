#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "velm/dataset.hpp"
#include "velm/error.hpp"
#include "velm/image.hpp"
#include "velm/json.hpp"
#include "velm/rng.hpp"

namespace velm {

using AnomalyMap = Grid<double>;

struct DetectionResult {
    bool is_anomalous = false;
    double image_score = 0.0;
    AnomalyMap map;
    Mask mask;
};

inline bool mask_empty(const Mask& m) {
    return std::none_of(m.values().begin(), m.values().end(), [](std::uint8_t v) { return v != 0; });
}

// ---------------------------------------------------------------------------
// Patch descriptors

struct FeatureConfig {
    int patch_size = 16;
    int stride = 8;
    std::vector<int> scales{1, 2};

    /// Per channel: mean, std, 8 orientation bins.
    static constexpr int kPerChannel = 10;
    static constexpr int kOrientationBins = 8;

    int descriptor_dim() const { return static_cast<int>(scales.size()) * 3 * kPerChannel; }
    bool operator==(const FeatureConfig&) const = default;
};

struct PatchFeatures {
    int cols = 0;  // grid locations along x
    int rows = 0;
    int dim = 0;
    std::vector<std::array<int, 2>> locations;  // top-left, full-resolution
    std::vector<float> values;                  // locations.size() x dim, row-major

    std::size_t count() const { return locations.size(); }
    std::span<const float> descriptor(std::size_t i) const {
        return {values.data() + i * static_cast<std::size_t>(dim), static_cast<std::size_t>(dim)};
    }
};

namespace expert_detail {

struct Plane {
    int w = 0, h = 0;
    std::vector<double> v;
    double at(int x, int y) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

inline Plane downsample(const RgbImage& img, int channel, int factor) {
    Plane p;
    p.w = img.width() / factor;
    p.h = img.height() / factor;
    p.v.resize(static_cast<std::size_t>(p.w) * p.h);
    const double norm = 1.0 / (255.0 * factor * factor);
    for (int y = 0; y < p.h; ++y) {
        for (int x = 0; x < p.w; ++x) {
            int sum = 0;
            for (int dy = 0; dy < factor; ++dy)
                for (int dx = 0; dx < factor; ++dx) sum += img.channel(x * factor + dx, y * factor + dy, channel);
            p.v[static_cast<std::size_t>(y) * p.w + x] = sum * norm;
        }
    }
    return p;
}

struct Gradients {
    std::vector<double> magnitude;
    std::vector<std::array<int, 2>> bins;      // the two soft-binning targets
    std::vector<std::array<double, 2>> weight;  // magnitude-scaled votes
};

inline Gradients gradients(const Plane& p) {
    Gradients g;
    const std::size_t n = p.v.size();
    g.magnitude.resize(n);
    g.bins.resize(n);
    g.weight.resize(n);
    constexpr int bins = FeatureConfig::kOrientationBins;
    const double bin_width = 2.0 * std::numbers::pi / bins;
    for (int y = 0; y < p.h; ++y) {
        for (int x = 0; x < p.w; ++x) {
            const double gx = 0.5 * (p.at(std::min(x + 1, p.w - 1), y) - p.at(std::max(x - 1, 0), y));
            const double gy = 0.5 * (p.at(x, std::min(y + 1, p.h - 1)) - p.at(x, std::max(y - 1, 0)));
            const std::size_t i = static_cast<std::size_t>(y) * p.w + x;
            const double mag = std::hypot(gx, gy);
            g.magnitude[i] = mag;
            if (mag == 0.0) {
                g.bins[i] = {0, 0};
                g.weight[i] = {0.0, 0.0};
                continue;
            }
            // Bin centers sit at (b + 0.5) * width, which makes a horizontal flip a pure bin permutation.
            double t = std::atan2(gy, gx) / bin_width - 0.5;
            t = std::fmod(t, static_cast<double>(bins));
            if (t < 0) t += bins;
            const int b0 = static_cast<int>(std::floor(t)) % bins;
            const double frac = t - std::floor(t);
            g.bins[i] = {b0, (b0 + 1) % bins};
            g.weight[i] = {mag * (1.0 - frac), mag * frac};
        }
    }
    return g;
}

}  // namespace expert_detail

/// Grid of patch descriptors at `stride`; every scale contributes a descriptor of the
/// downsampled patch sharing the full-resolution patch center.
inline PatchFeatures extract_patch_features(const RgbImage& image, const FeatureConfig& cfg) {
    using namespace expert_detail;
    if (cfg.scales.empty()) throw ValidationError("feature config: scales must be non-empty");
    if (cfg.patch_size < 1 || cfg.stride < 1) throw ValidationError("feature config: patch_size and stride must be >= 1");
    for (int s : cfg.scales) {
        if (s < 1) throw ValidationError("feature config: scale factors must be >= 1");
        if (image.width() / s < cfg.patch_size || image.height() / s < cfg.patch_size) {
            throw ValidationError("image " + std::to_string(image.width()) + "x" + std::to_string(image.height()) +
                                  " smaller than patch " + std::to_string(cfg.patch_size) + " at scale " + std::to_string(s));
        }
    }
    const int p = cfg.patch_size;
    PatchFeatures out;
    out.cols = (image.width() - p) / cfg.stride + 1;
    out.rows = (image.height() - p) / cfg.stride + 1;
    out.dim = cfg.descriptor_dim();
    for (int gy = 0; gy < out.rows; ++gy)
        for (int gx = 0; gx < out.cols; ++gx) out.locations.push_back({gx * cfg.stride, gy * cfg.stride});
    out.values.assign(out.count() * static_cast<std::size_t>(out.dim), 0.0f);

    int offset = 0;
    for (int s : cfg.scales) {
        for (int c = 0; c < 3; ++c) {
            const Plane plane = downsample(image, c, s);
            const Gradients grad = gradients(plane);
            for (std::size_t li = 0; li < out.count(); ++li) {
                const auto [lx, ly] = out.locations[li];
                const double cx = (lx + p / 2.0) / s;
                const double cy = (ly + p / 2.0) / s;
                const int x0 = std::clamp(static_cast<int>(std::round(cx - p / 2.0)), 0, plane.w - p);
                const int y0 = std::clamp(static_cast<int>(std::round(cy - p / 2.0)), 0, plane.h - p);
                double sum = 0.0, sq = 0.0;
                std::array<double, FeatureConfig::kOrientationBins> hist{};
                for (int y = y0; y < y0 + p; ++y) {
                    for (int x = x0; x < x0 + p; ++x) {
                        const std::size_t i = static_cast<std::size_t>(y) * plane.w + x;
                        const double v = plane.v[i];
                        sum += v;
                        sq += v * v;
                        hist[static_cast<std::size_t>(grad.bins[i][0])] += grad.weight[i][0];
                        hist[static_cast<std::size_t>(grad.bins[i][1])] += grad.weight[i][1];
                    }
                }
                const double area = static_cast<double>(p) * p;
                const double mean = sum / area;
                const double var = std::max(0.0, sq / area - mean * mean);
                float* d = out.values.data() + li * static_cast<std::size_t>(out.dim) + offset + c * FeatureConfig::kPerChannel;
                d[0] = static_cast<float>(mean);
                d[1] = static_cast<float>(var > 1e-18 ? std::sqrt(var) : 0.0);
                for (int b = 0; b < FeatureConfig::kOrientationBins; ++b) d[2 + b] = static_cast<float>(hist[static_cast<std::size_t>(b)] / area);
            }
        }
        offset += 3 * FeatureConfig::kPerChannel;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Coreset

inline double squared_distance(std::span<const float> a, std::span<const float> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        s += d * d;
    }
    return s;
}

/// Greedy k-center selection over `count` rows of `dim` values. The first pick is a seeded
/// uniform draw unless `first` is given; later picks maximize the distance to the selected set,
/// ties to the lowest index. Returns indices in selection order.
inline std::vector<std::size_t> coreset_subsample(std::span<const float> values, std::size_t dim, std::size_t m,
                                                  std::uint64_t seed, std::optional<std::size_t> first = std::nullopt) {
    if (dim == 0 || values.size() % dim != 0) throw ValidationError("coreset: malformed feature matrix");
    const std::size_t n = values.size() / dim;
    if (m == 0 || m > n) {
        throw ValidationError("coreset: m=" + std::to_string(m) + " outside [1, " + std::to_string(n) + "]");
    }
    auto row = [&](std::size_t i) { return values.subspan(i * dim, dim); };
    const std::size_t start = first.value_or(static_cast<std::size_t>(SeededRng(seed).below(n)));
    if (start >= n) throw ValidationError("coreset: forced first index out of range");

    std::vector<std::size_t> order{start};
    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
    std::vector<char> taken(n, 0);
    taken[start] = 1;
    std::size_t last = start;
    while (order.size() < m) {
        std::size_t best = n;
        double best_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (taken[i]) continue;
            nearest[i] = std::min(nearest[i], squared_distance(row(i), row(last)));
            if (nearest[i] > best_d) {
                best_d = nearest[i];
                best = i;
            }
        }
        taken[best] = 1;
        order.push_back(best);
        last = best;
    }
    return order;
}

/// Max over all rows of the distance to the nearest selected row.
inline double covering_radius(std::span<const float> values, std::size_t dim, std::span<const std::size_t> selected) {
    const std::size_t n = values.size() / dim;
    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t s : selected) best = std::min(best, squared_distance(values.subspan(i * dim, dim), values.subspan(s * dim, dim)));
        worst = std::max(worst, best);
    }
    return std::sqrt(worst);
}

// ---------------------------------------------------------------------------
// Memory bank

struct BankConfig {
    FeatureConfig features;
    double coreset_fraction = 0.10;
    double sigma = 4.0;
    double target_fpr = 0.01;
    std::uint64_t coreset_seed = 0;

    bool operator==(const BankConfig&) const = default;
};

inline Json to_json(const BankConfig& c) {
    return {{"patch_size", c.features.patch_size}, {"stride", c.features.stride}, {"scales", c.features.scales},
            {"coreset_fraction", c.coreset_fraction}, {"sigma", c.sigma}, {"target_fpr", c.target_fpr},
            {"coreset_seed", c.coreset_seed}};
}

inline BankConfig bank_config_from_json(const Json& j) {
    BankConfig c;
    c.features.patch_size = j.value("patch_size", c.features.patch_size);
    c.features.stride = j.value("stride", c.features.stride);
    c.features.scales = j.value("scales", c.features.scales);
    c.coreset_fraction = j.value("coreset_fraction", c.coreset_fraction);
    c.sigma = j.value("sigma", c.sigma);
    c.target_fpr = j.value("target_fpr", c.target_fpr);
    c.coreset_seed = j.value("coreset_seed", c.coreset_seed);
    if (!(c.coreset_fraction > 0.0 && c.coreset_fraction <= 1.0)) throw ValidationError("coreset_fraction must be in (0, 1]");
    if (c.sigma < 0.0) throw ValidationError("sigma must be >= 0");
    if (c.target_fpr < 0.0 || c.target_fpr > 1.0) throw ValidationError("target_fpr must be in [0, 1]");
    return c;
}

/// Coreset of z-scored normal patch descriptors.
struct MemoryBank {
    std::string category;
    BankConfig config;
    int descriptor_dim = 0;
    std::vector<float> mean;    // per-component fit statistics
    std::vector<float> stddev;
    std::vector<float> features;  // count() x descriptor_dim, normalized
    double threshold = std::numeric_limits<double>::infinity();

    std::size_t count() const { return descriptor_dim ? features.size() / static_cast<std::size_t>(descriptor_dim) : 0; }
    bool operator==(const MemoryBank&) const = default;
};

inline void normalize_in_place(std::span<float> values, std::span<const float> mean, std::span<const float> stddev) {
    const std::size_t dim = mean.size();
    for (std::size_t i = 0; i < values.size(); ++i) {
        values[i] = (values[i] - mean[i % dim]) / stddev[i % dim];
    }
}

inline MemoryBank fit_memory_bank(std::span<const RgbImage> images, const BankConfig& config, std::string category = {}) {
    if (images.empty()) throw ValidationError("fit_memory_bank: no training images");
    std::vector<float> all;
    int dim = 0;
    for (const auto& img : images) {
        auto f = extract_patch_features(img, config.features);
        dim = f.dim;
        all.insert(all.end(), f.values.begin(), f.values.end());
    }
    const std::size_t n = all.size() / static_cast<std::size_t>(dim);
    MemoryBank bank;
    bank.category = std::move(category);
    bank.config = config;
    bank.descriptor_dim = dim;
    std::vector<double> sum(static_cast<std::size_t>(dim)), sq(static_cast<std::size_t>(dim));
    for (std::size_t i = 0; i < all.size(); ++i) {
        sum[i % dim] += all[i];
        sq[i % dim] += static_cast<double>(all[i]) * all[i];
    }
    bank.mean.resize(static_cast<std::size_t>(dim));
    bank.stddev.resize(static_cast<std::size_t>(dim));
    for (std::size_t k = 0; k < static_cast<std::size_t>(dim); ++k) {
        const double m = sum[k] / n;
        const double var = std::max(0.0, sq[k] / n - m * m);
        bank.mean[k] = static_cast<float>(m);
        const double sd = std::sqrt(var);
        bank.stddev[k] = sd > 1e-6 ? static_cast<float>(sd) : 1.0f;
    }
    normalize_in_place(all, bank.mean, bank.stddev);
    const auto m = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(config.coreset_fraction * n)), 1, n);
    const auto picks = coreset_subsample(all, static_cast<std::size_t>(dim), m, config.coreset_seed);
    bank.features.reserve(m * static_cast<std::size_t>(dim));
    for (std::size_t idx : picks) {
        auto row = std::span<const float>(all).subspan(idx * dim, static_cast<std::size_t>(dim));
        bank.features.insert(bank.features.end(), row.begin(), row.end());
    }
    return bank;
}

/// Normalized separable Gaussian; taps falling outside the grid are dropped and the rest renormalized.
inline AnomalyMap gaussian_smooth(const AnomalyMap& in, double sigma) {
    if (sigma <= 0.0 || in.empty()) return in;
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    for (int i = -radius; i <= radius; ++i) k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    auto pass = [&](const AnomalyMap& src, bool horizontal) {
        AnomalyMap dst(src.width(), src.height());
        for (int y = 0; y < src.height(); ++y) {
            for (int x = 0; x < src.width(); ++x) {
                double acc = 0.0, wsum = 0.0;
                for (int i = -radius; i <= radius; ++i) {
                    const int sx = horizontal ? x + i : x;
                    const int sy = horizontal ? y : y + i;
                    if (!src.contains(sx, sy)) continue;
                    const double w = k[static_cast<std::size_t>(i + radius)];
                    acc += w * src(sx, sy);
                    wsum += w;
                }
                dst(x, y) = acc / wsum;
            }
        }
        return dst;
    };
    return pass(pass(in, true), false);
}

inline int smoothing_radius(double sigma) { return sigma > 0.0 ? static_cast<int>(std::ceil(3.0 * sigma)) : 0; }

struct ImageScore {
    AnomalyMap patch_scores;  // cols x rows, nearest-neighbour distances
    AnomalyMap raw;           // full resolution, nearest-patch splat
    AnomalyMap map;           // smoothed
    double image_score = 0.0;
};

inline ImageScore score_image(const MemoryBank& bank, const RgbImage& image) {
    if (bank.count() == 0) throw ValidationError("score_image: memory bank is empty");
    auto f = extract_patch_features(image, bank.config.features);
    if (f.dim != bank.descriptor_dim) {
        throw ValidationError("score_image: descriptor dimension " + std::to_string(f.dim) + " does not match bank (" +
                              std::to_string(bank.descriptor_dim) + ")");
    }
    normalize_in_place(f.values, bank.mean, bank.stddev);
    const auto dim = static_cast<std::size_t>(bank.descriptor_dim);
    ImageScore out;
    out.patch_scores = AnomalyMap(f.cols, f.rows);
    for (std::size_t li = 0; li < f.count(); ++li) {
        double best = std::numeric_limits<double>::infinity();
        const auto q = f.descriptor(li);
        for (std::size_t b = 0; b < bank.count(); ++b) {
            best = std::min(best, squared_distance(q, std::span<const float>(bank.features).subspan(b * dim, dim)));
        }
        out.patch_scores(static_cast<int>(li) % f.cols, static_cast<int>(li) / f.cols) = std::sqrt(best);
    }
    const int p = bank.config.features.patch_size;
    const int stride = bank.config.features.stride;
    auto nearest = [&](int px, int n) {
        // Lower index on exact ties.
        const double v = (px + 0.5 - p / 2.0) / stride;
        return std::clamp(static_cast<int>(std::ceil(v - 0.5)), 0, n - 1);
    };
    out.raw = AnomalyMap(image.width(), image.height());
    for (int y = 0; y < image.height(); ++y)
        for (int x = 0; x < image.width(); ++x) out.raw(x, y) = out.patch_scores(nearest(x, f.cols), nearest(y, f.rows));
    out.map = gaussian_smooth(out.raw, bank.config.sigma);
    out.image_score = *std::max_element(out.map.values().begin(), out.map.values().end());
    return out;
}

/// Smallest observed score v with (#scores > v) / n <= target_fpr.
inline double calibrate_threshold(std::vector<double> scores, double target_fpr) {
    if (scores.empty()) throw ValidationError("calibrate_threshold: empty calibration set");
    if (target_fpr < 0.0 || target_fpr > 1.0) throw ValidationError("calibrate_threshold: target_fpr outside [0, 1]");
    std::sort(scores.begin(), scores.end());
    const double n = static_cast<double>(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (i + 1 < scores.size() && scores[i + 1] == scores[i]) continue;
        const double above = static_cast<double>(scores.size() - (i + 1));
        if (above / n <= target_fpr) return scores[i];
    }
    return scores.back();
}

inline double calibrate_threshold(const MemoryBank& bank, std::span<const RgbImage> normal_images, double target_fpr) {
    std::vector<double> scores;
    for (const auto& img : normal_images) scores.push_back(score_image(bank, img).image_score);
    return calibrate_threshold(std::move(scores), target_fpr);
}

/// Image-level AUROC (Mann-Whitney, ties count one half).
inline double auroc(std::span<const double> normal_scores, std::span<const double> anomalous_scores) {
    if (normal_scores.empty() || anomalous_scores.empty()) throw ValidationError("auroc: need both classes");
    double wins = 0.0;
    for (double a : anomalous_scores)
        for (double n : normal_scores) wins += a > n ? 1.0 : (a == n ? 0.5 : 0.0);
    return wins / (static_cast<double>(normal_scores.size()) * static_cast<double>(anomalous_scores.size()));
}

// ---------------------------------------------------------------------------
// Bank persistence: "VELMBANK" | u32 version | u32 header bytes | JSON header | f32 LE mean, stddev, features

inline constexpr std::uint32_t kBankVersion = 1;

namespace expert_detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
    const char b[4] = {static_cast<char>(v), static_cast<char>(v >> 8), static_cast<char>(v >> 16), static_cast<char>(v >> 24)};
    out.write(b, 4);
}

inline std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw ValidationError("truncated bank file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_floats(std::ostream& out, std::span<const float> v) {
    for (float f : v) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_u32(out, bits);
    }
}

inline std::vector<float> get_floats(std::istream& in, std::size_t n) {
    std::vector<float> v(n);
    for (auto& f : v) {
        const std::uint32_t bits = get_u32(in);
        std::memcpy(&f, &bits, 4);
    }
    return v;
}

}  // namespace expert_detail

inline void save_bank(const std::filesystem::path& path, const MemoryBank& bank) {
    using namespace expert_detail;
    Json header = {{"descriptor_dim", bank.descriptor_dim}, {"count", bank.count()}, {"category", bank.category},
                   {"config", to_json(bank.config)},
                   {"threshold", std::isfinite(bank.threshold) ? Json(bank.threshold) : Json(nullptr)}};
    const std::string text = header.dump();
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write bank", path);
    out.write("VELMBANK", 8);
    put_u32(out, kBankVersion);
    put_u32(out, static_cast<std::uint32_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    put_floats(out, bank.mean);
    put_floats(out, bank.stddev);
    put_floats(out, bank.features);
    if (!out) throw IoError("short write", path);
}

inline MemoryBank load_bank(const std::filesystem::path& path) {
    using namespace expert_detail;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open bank", path);
    try {
        char magic[8];
        if (!in.read(magic, 8) || std::memcmp(magic, "VELMBANK", 8) != 0) throw ValidationError("not a memory-bank file");
        const auto version = get_u32(in);
        if (version != kBankVersion) throw ValidationError("unsupported bank version " + std::to_string(version));
        const auto len = get_u32(in);
        std::string text(len, '\0');
        if (!in.read(text.data(), len)) throw ValidationError("truncated bank header");
        const Json header = Json::parse(text);
        MemoryBank bank;
        bank.category = header.value("category", std::string{});
        bank.config = bank_config_from_json(header.at("config"));
        bank.descriptor_dim = header.at("descriptor_dim").get<int>();
        const auto count = header.at("count").get<std::size_t>();
        if (bank.descriptor_dim != bank.config.features.descriptor_dim() || count == 0) {
            throw ValidationError("bank header inconsistent with its config");
        }
        bank.threshold = header.at("threshold").is_null() ? std::numeric_limits<double>::infinity()
                                                          : header.at("threshold").get<double>();
        const auto dim = static_cast<std::size_t>(bank.descriptor_dim);
        bank.mean = get_floats(in, dim);
        bank.stddev = get_floats(in, dim);
        bank.features = get_floats(in, dim * count);
        return bank;
    } catch (const Json::exception& e) {
        throw IoError(std::string("malformed bank header (") + e.what() + ")", path);
    } catch (const IoError&) {
        throw;
    } catch (const ValidationError& e) {
        throw IoError(e.what(), path);
    }
}

// ---------------------------------------------------------------------------
// External (precomputed) maps: <dir>/<id>.png (16-bit gray) + <dir>/<id>.json sidecar

struct MapSidecar {
    int width = 0;
    int height = 0;
    double score_min = 0.0;
    double score_max = 0.0;
};

inline void save_external_map(const std::filesystem::path& dir, const std::string& id, const AnomalyMap& map) {
    if (map.empty()) throw ValidationError("save_external_map: empty map for " + id);
    const auto [lo_it, hi_it] = std::minmax_element(map.values().begin(), map.values().end());
    const double lo = *lo_it, hi = *hi_it;
    Grid<std::uint16_t> q(map.width(), map.height());
    for (std::size_t i = 0; i < map.size(); ++i) {
        const double t = hi > lo ? (map.values()[i] - lo) / (hi - lo) : 0.0;
        q.values()[i] = static_cast<std::uint16_t>(std::clamp(std::lround(t * 65535.0), 0L, 65535L));
    }
    write_png_gray16(dir / (id + ".png"), q);
    const Json side = {{"width", map.width()}, {"height", map.height()}, {"score_min", lo}, {"score_max", hi}};
    write_json_file(dir / (id + ".json"), side);
}

inline AnomalyMap load_external_map(const std::filesystem::path& dir, const std::string& id) {
    const auto png = dir / (id + ".png");
    const auto json = dir / (id + ".json");
    if (!std::filesystem::is_regular_file(png) || !std::filesystem::is_regular_file(json)) {
        throw IoError("no precomputed map for sample '" + id + "'", png);
    }
    MapSidecar side;
    try {
        const Json j = read_json_file(json);
        side = {j.at("width").get<int>(), j.at("height").get<int>(), j.at("score_min").get<double>(), j.at("score_max").get<double>()};
    } catch (const Json::exception& e) {
        throw IoError(std::string("malformed sidecar (") + e.what() + ")", json);
    }
    if (side.width <= 0 || side.height <= 0 || !(side.score_max >= side.score_min)) {
        throw IoError("malformed sidecar (bad dimensions or score range)", json);
    }
    const auto q = read_png_gray16(png);
    if (q.width() != side.width || q.height() != side.height) {
        throw IoError("map dimensions disagree with sidecar", png);
    }
    AnomalyMap map(q.width(), q.height());
    for (std::size_t i = 0; i < q.size(); ++i) {
        map.values()[i] = side.score_min + q.values()[i] / 65535.0 * (side.score_max - side.score_min);
    }
    return map;
}

// ---------------------------------------------------------------------------
// Experts

enum class ExpertKind { oracle, external, memory_bank };

class VisionExpert {
public:
    virtual ~VisionExpert() = default;
    virtual ExpertKind kind() const = 0;
    virtual std::string describe() const = 0;
    /// `image` is the decoded query; experts validate dimensions against it.
    virtual DetectionResult detect(const RgbImage& image, const SampleRecord& sample) const = 0;
};

inline DetectionResult threshold_map(AnomalyMap map, double threshold) {
    DetectionResult r;
    r.image_score = map.empty() ? 0.0 : *std::max_element(map.values().begin(), map.values().end());
    r.is_anomalous = r.image_score > threshold;
    r.mask = Mask(map.width(), map.height());
    for (std::size_t i = 0; i < map.size(); ++i) r.mask.values()[i] = map.values()[i] > threshold ? 1 : 0;
    r.map = std::move(map);
    return r;
}

/// Ground-truth masks as detections.
class OracleExpert final : public VisionExpert {
public:
    ExpertKind kind() const override { return ExpertKind::oracle; }
    std::string describe() const override { return "oracle"; }

    DetectionResult detect(const RgbImage& image, const SampleRecord& sample) const override {
        Mask mask(image.width(), image.height());
        if (!sample.is_good()) {
            if (!sample.mask_path) throw ValidationError("oracle expert: sample '" + sample.id + "' has no ground-truth mask");
            mask = read_png_mask(*sample.mask_path);
            if (mask.width() != image.width() || mask.height() != image.height()) {
                throw IoError("ground-truth mask size differs from image", *sample.mask_path);
            }
        } else if (sample.mask_path) {
            mask = read_png_mask(*sample.mask_path);
        }
        AnomalyMap map(mask.width(), mask.height());
        for (std::size_t i = 0; i < mask.size(); ++i) map.values()[i] = mask.values()[i] ? 1.0 : 0.0;
        DetectionResult r;
        r.is_anomalous = !mask_empty(mask);
        r.image_score = r.is_anomalous ? 1.0 : 0.0;
        r.map = std::move(map);
        r.mask = std::move(mask);
        return r;
    }
};

/// Detections from precomputed maps of an external detector.
class ExternalMapExpert final : public VisionExpert {
public:
    ExternalMapExpert(std::filesystem::path dir, double threshold) : dir_(std::move(dir)), threshold_(threshold) {}

    ExpertKind kind() const override { return ExpertKind::external; }
    std::string describe() const override { return "external"; }
    double threshold() const { return threshold_; }

    DetectionResult detect(const RgbImage& image, const SampleRecord& sample) const override {
        auto map = load_external_map(dir_, sample.id);
        if (map.width() != image.width() || map.height() != image.height()) {
            throw ValidationError("external map for '" + sample.id + "' is " + std::to_string(map.width()) + "x" +
                                  std::to_string(map.height()) + ", query is " + std::to_string(image.width()) + "x" +
                                  std::to_string(image.height()));
        }
        return threshold_map(std::move(map), threshold_);
    }

private:
    std::filesystem::path dir_;
    double threshold_;
};

/// Threshold comes from `<dir>/expert.json` {"threshold": x} when present, else `fallback`.
inline std::unique_ptr<ExternalMapExpert> load_external_maps(const std::filesystem::path& dir, double fallback = 0.5) {
    if (!std::filesystem::is_directory(dir)) throw IoError("external map directory does not exist", dir);
    double threshold = fallback;
    const auto cfg = dir / "expert.json";
    if (std::filesystem::is_regular_file(cfg)) {
        const Json j = read_json_file(cfg);
        if (!j.contains("threshold") || !j.at("threshold").is_number()) throw IoError("malformed expert.json", cfg);
        threshold = j.at("threshold").get<double>();
    }
    return std::make_unique<ExternalMapExpert>(dir, threshold);
}

class MemoryBankExpert final : public VisionExpert {
public:
    void add(MemoryBank bank) {
        if (!std::isfinite(bank.threshold)) throw ValidationError("memory bank for '" + bank.category + "' is not calibrated");
        auto name = bank.category;
        banks_[name] = std::move(bank);
    }
    const MemoryBank& bank(const std::string& category) const {
        auto it = banks_.find(category);
        if (it == banks_.end()) throw ValidationError("memory-bank expert not fitted for category '" + category + "'");
        return it->second;
    }

    ExpertKind kind() const override { return ExpertKind::memory_bank; }
    std::string describe() const override { return "memory_bank"; }

    DetectionResult detect(const RgbImage& image, const SampleRecord& sample) const override {
        const auto& b = bank(sample.category);
        return threshold_map(score_image(b, image).map, b.threshold);
    }

private:
    std::map<std::string, MemoryBank> banks_;
};

/// Fits on every training sample except every fifth (by id order), which calibrates the threshold.
/// With fewer than two samples the fit set doubles as the calibration set.
inline MemoryBank fit_category(const DatasetIndex& index, const std::string& category, const BankConfig& config) {
    const auto train = index.select(category, Split::train);
    if (train.empty()) throw ValidationError("fit: category '" + category + "' has no training samples");
    std::vector<RgbImage> fit, calib;
    for (std::size_t i = 0; i < train.size(); ++i) {
        auto img = read_png_rgb(train[i]->image_path);
        if (train.size() >= 2 && i % 5 == 4) {
            calib.push_back(std::move(img));
        } else {
            fit.push_back(std::move(img));
        }
    }
    if (calib.empty()) calib = fit;
    MemoryBank bank = fit_memory_bank(fit, config, category);
    bank.threshold = calibrate_threshold(bank, calib, config.target_fpr);
    return bank;
}

}  // namespace velm
