#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "velm/error.hpp"
#include "velm/image.hpp"

namespace velm {

struct Point {
    int x = 0;
    int y = 0;
    bool operator==(const Point&) const = default;
    auto operator<=>(const Point&) const = default;
};

/// Closed 8-connected boundary walk. Outer boundaries and hole boundaries are separate contours.
struct Contour {
    std::vector<Point> points;
    bool hole = false;
};

struct OverlayStyle {
    Rgb color{255, 0, 0};
    int line_width = 3;
};

struct ContourOptions {
    int min_area = 4;  // components with fewer foreground pixels are skipped
};

namespace contour_detail {

// Clockwise in image coordinates (y down), starting west.
inline constexpr std::array<Point, 8> kRing{{{-1, 0}, {-1, -1}, {0, -1}, {1, -1}, {1, 0}, {1, 1}, {0, 1}, {-1, 1}}};

inline int ring_index(Point from, Point to) {
    const Point d{to.x - from.x, to.y - from.y};
    for (int i = 0; i < 8; ++i)
        if (kRing[static_cast<std::size_t>(i)] == d) return i;
    return -1;
}

/// Mask padded by one background pixel on every side.
struct Padded {
    int w = 0, h = 0;
    std::vector<std::uint8_t> fg;
    bool at(Point p) const { return fg[static_cast<std::size_t>(p.y) * w + p.x] != 0; }
    std::size_t idx(Point p) const { return static_cast<std::size_t>(p.y) * w + p.x; }
};

inline Padded pad(const Mask& m) {
    Padded p{m.width() + 2, m.height() + 2, {}};
    p.fg.assign(static_cast<std::size_t>(p.w) * p.h, 0);
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x) p.fg[static_cast<std::size_t>(y + 1) * p.w + x + 1] = m(x, y) ? 1 : 0;
    return p;
}

/// Labels components of pixels whose foreground flag equals `value`; raster-ordered labels from 0, -1 elsewhere.
inline std::vector<int> label(const Padded& p, bool value, bool eight, std::vector<std::size_t>* areas = nullptr,
                              std::vector<Point>* firsts = nullptr) {
    std::vector<int> lab(p.fg.size(), -1);
    int next = 0;
    std::deque<Point> queue;
    for (int y = 0; y < p.h; ++y) {
        for (int x = 0; x < p.w; ++x) {
            const Point s{x, y};
            if (p.at(s) != value || lab[p.idx(s)] != -1) continue;
            lab[p.idx(s)] = next;
            std::size_t area = 0;
            queue.push_back(s);
            while (!queue.empty()) {
                const Point c = queue.front();
                queue.pop_front();
                ++area;
                for (int k = 0; k < 8; ++k) {
                    if (!eight && (k % 2 == 1)) continue;
                    const Point n{c.x + kRing[static_cast<std::size_t>(k)].x, c.y + kRing[static_cast<std::size_t>(k)].y};
                    if (n.x < 0 || n.y < 0 || n.x >= p.w || n.y >= p.h) continue;
                    if (p.at(n) != value || lab[p.idx(n)] != -1) continue;
                    lab[p.idx(n)] = next;
                    queue.push_back(n);
                }
            }
            if (areas) areas->push_back(area);
            if (firsts) firsts->push_back(s);
            ++next;
        }
    }
    return lab;
}

/// Moore-neighbour walk from `start`, entered from background pixel `back`. Stops when the walk is
/// back at `start` about to repeat its first move (Jacob's criterion in successor form).
inline std::vector<Point> trace(const Padded& p, Point start, Point back) {
    auto sweep = [&](Point cur, Point from, Point& next, Point& new_back) {
        const int d = ring_index(cur, from);
        for (int k = 1; k <= 8; ++k) {
            const auto& o = kRing[static_cast<std::size_t>((d + k) % 8)];
            const Point c{cur.x + o.x, cur.y + o.y};
            if (p.at(c)) {
                const auto& ob = kRing[static_cast<std::size_t>((d + k - 1) % 8)];
                next = c;
                new_back = {cur.x + ob.x, cur.y + ob.y};
                return true;
            }
        }
        return false;
    };
    std::vector<Point> pts{start};
    Point first_next, tmp;
    if (!sweep(start, back, first_next, tmp)) return pts;
    Point cur = start, from = back;
    bool first = true;
    for (;;) {
        Point next, nb;
        sweep(cur, from, next, nb);
        if (!first && cur == start && next == first_next) break;
        first = false;
        cur = next;
        from = nb;
        pts.push_back(cur);
    }
    pts.pop_back();  // the closing revisit of start
    return pts;
}

}  // namespace contour_detail

/// Traces every 8-connected foreground component with area >= min_area: its outer boundary first,
/// then one contour per enclosed hole. Components are ordered by their topmost-leftmost pixel.
inline std::vector<Contour> extract_contours(const Mask& mask, ContourOptions opt = {}) {
    using namespace contour_detail;
    std::vector<Contour> out;
    if (mask.empty()) return out;
    const Padded p = pad(mask);
    std::vector<std::size_t> areas;
    std::vector<Point> firsts;
    const auto fg_lab = label(p, true, true, &areas, &firsts);
    const auto bg_lab = label(p, false, false);

    // For each (component, background region) pair: the first raster pixel bordering it and that neighbour.
    std::vector<std::map<int, std::pair<Point, Point>>> borders(areas.size());
    static constexpr std::array<int, 4> four{0, 2, 4, 6};
    for (int y = 1; y < p.h - 1; ++y) {
        for (int x = 1; x < p.w - 1; ++x) {
            const Point c{x, y};
            const int comp = fg_lab[p.idx(c)];
            if (comp < 0) continue;
            for (int k : four) {
                const Point n{x + kRing[static_cast<std::size_t>(k)].x, y + kRing[static_cast<std::size_t>(k)].y};
                const int bg = bg_lab[p.idx(n)];
                if (bg >= 0) borders[static_cast<std::size_t>(comp)].try_emplace(bg, c, n);
            }
        }
    }

    auto to_image = [](std::vector<Point> pts) {
        for (auto& q : pts) {
            --q.x;
            --q.y;
        }
        return pts;
    };
    for (std::size_t comp = 0; comp < areas.size(); ++comp) {
        if (areas[comp] < static_cast<std::size_t>(std::max(opt.min_area, 1))) continue;
        const Point s = firsts[comp];
        const Point west{s.x - 1, s.y};
        const int outer_bg = bg_lab[p.idx(west)];
        out.push_back({to_image(trace(p, s, west)), false});
        for (const auto& [bg, start] : borders[comp]) {
            if (bg == outer_bg) continue;
            out.push_back({to_image(trace(p, start.first, start.second)), true});
        }
    }
    return out;
}

/// Line width that stays at least `min_px` wide after the image is resized to `target` pixels.
inline int scaled_line_width(const OverlayStyle& style, int width, int height, int target = 448, int min_px = 2) {
    const int longest = std::max(width, height);
    const int needed = static_cast<int>(std::ceil(static_cast<double>(min_px) * longest / target));
    return std::max(style.line_width, needed);
}

/// Pixel offsets of a disc with diameter `width`, centred on a pixel for odd widths.
inline std::vector<Point> disc_offsets(int width) {
    std::vector<Point> out;
    const int h = (width - 1) / 2;
    const double c = (width - 1) / 2.0;
    const double r2 = (width / 2.0) * (width / 2.0);
    for (int j = 0; j < width; ++j)
        for (int i = 0; i < width; ++i) {
            const double dx = i - c, dy = j - c;
            if (dx * dx + dy * dy <= r2) out.push_back({i - h, j - h});
        }
    return out;
}

/// Copy of `image` with every contour point dilated to a disc and painted in the style colour.
inline RgbImage render_overlay(const RgbImage& image, const std::vector<Contour>& contours, const OverlayStyle& style) {
    if (style.line_width < 1) throw ValidationError("overlay: line_width must be >= 1");
    for (const auto& c : contours)
        for (const auto& q : c.points)
            if (!image.contains(q.x, q.y)) {
                throw ValidationError("overlay: contour point (" + std::to_string(q.x) + ", " + std::to_string(q.y) +
                                      ") outside " + std::to_string(image.width()) + "x" + std::to_string(image.height()));
            }
    RgbImage out = image;
    const auto disc = disc_offsets(style.line_width);
    for (const auto& c : contours)
        for (const auto& q : c.points)
            for (const auto& d : disc) {
                const int x = q.x + d.x, y = q.y + d.y;
                if (out.contains(x, y)) out.set(x, y, style.color);
            }
    return out;
}

/// Cached overlay location: `<dir>/<sample_id>_vp.png`.
inline std::filesystem::path overlay_cache_path(const std::filesystem::path& dir, const std::string& sample_id) {
    return dir / (sample_id + "_vp.png");
}

}  // namespace velm
