#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "velm/error.hpp"

namespace velm {

/// Dense row-major 2-D grid.
template <typename T>
class Grid {
public:
    Grid() = default;
    Grid(int width, int height, T fill = T{})
        : width_(width), height_(height),
          data_(static_cast<std::size_t>(std::max(width, 0)) * static_cast<std::size_t>(std::max(height, 0)), fill) {}

    int width() const { return width_; }
    int height() const { return height_; }
    bool empty() const { return data_.empty(); }
    std::size_t size() const { return data_.size(); }

    T& operator()(int x, int y) { return data_[index(x, y)]; }
    const T& operator()(int x, int y) const { return data_[index(x, y)]; }

    bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }

    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }

    bool operator==(const Grid&) const = default;

private:
    std::size_t index(int x, int y) const {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<T> data_;
};

using Mask = Grid<std::uint8_t>;

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
    bool operator==(const Rgb&) const = default;
};

/// 8-bit interleaved RGB image.
class RgbImage {
public:
    RgbImage() = default;
    RgbImage(int width, int height, Rgb fill = {})
        : width_(width), height_(height),
          bytes_(static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3) {
        for (std::size_t i = 0; i < bytes_.size(); i += 3) {
            bytes_[i] = fill.r;
            bytes_[i + 1] = fill.g;
            bytes_[i + 2] = fill.b;
        }
    }

    int width() const { return width_; }
    int height() const { return height_; }
    bool empty() const { return width_ <= 0 || height_ <= 0; }

    Rgb at(int x, int y) const {
        const std::size_t i = offset(x, y);
        return {bytes_[i], bytes_[i + 1], bytes_[i + 2]};
    }
    void set(int x, int y, Rgb c) {
        const std::size_t i = offset(x, y);
        bytes_[i] = c.r;
        bytes_[i + 1] = c.g;
        bytes_[i + 2] = c.b;
    }
    std::uint8_t channel(int x, int y, int c) const { return bytes_[offset(x, y) + static_cast<std::size_t>(c)]; }

    bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }

    std::span<const std::uint8_t> bytes() const { return bytes_; }
    std::span<std::uint8_t> bytes() { return bytes_; }

    bool operator==(const RgbImage&) const = default;

private:
    std::size_t offset(int x, int y) const {
        return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x)) * 3;
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<std::uint8_t> bytes_;
};

/// Bilinear resize with half-pixel centers; an identity-size call returns a copy.
inline RgbImage resize_bilinear(const RgbImage& src, int out_w, int out_h) {
    if (src.empty() || out_w <= 0 || out_h <= 0) {
        throw ValidationError("resize_bilinear: zero-dimension image");
    }
    if (src.width() == out_w && src.height() == out_h) {
        return src;
    }
    RgbImage out(out_w, out_h);
    const double sx = static_cast<double>(src.width()) / out_w;
    const double sy = static_cast<double>(src.height()) / out_h;
    for (int y = 0; y < out_h; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height() - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, src.height() - 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width() - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, src.width() - 1);
            const double wx = fx - x0;
            Rgb px;
            std::uint8_t* dst[3] = {&px.r, &px.g, &px.b};
            for (int c = 0; c < 3; ++c) {
                const double top = src.channel(x0, y0, c) * (1.0 - wx) + src.channel(x1, y0, c) * wx;
                const double bottom = src.channel(x0, y1, c) * (1.0 - wx) + src.channel(x1, y1, c) * wx;
                const double v = top * (1.0 - wy) + bottom * wy;
                *dst[c] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
            }
            out.set(x, y, px);
        }
    }
    return out;
}

namespace png_detail {

struct Reader {
    std::span<const std::uint8_t> data;
    std::size_t pos = 0;
};

inline void read_fn(png_structp png, png_bytep out, png_size_t n) {
    auto* r = static_cast<Reader*>(png_get_io_ptr(png));
    if (r->pos + n > r->data.size()) {
        png_error(png, "truncated PNG");
    }
    std::memcpy(out, r->data.data() + r->pos, n);
    r->pos += n;
}

inline void write_fn(png_structp png, png_bytep in, png_size_t n) {
    auto* v = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
    v->insert(v->end(), in, in + n);
}

inline void flush_fn(png_structp) {}

/// Decoded rows: channels is 1 (gray) or 3 (RGB), depth 8 or 16.
struct Decoded {
    int width = 0;
    int height = 0;
    int channels = 0;
    int depth = 0;
    std::vector<std::uint8_t> rows;
};

// Keep automatic objects with destructors out of the setjmp frame.
inline bool decode_raw(std::span<const std::uint8_t> bytes, bool want_rgb, bool keep16, Decoded& out, std::string& err) {
    if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
        err = "not a PNG file";
        return false;
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) {
        err = "png_create_read_struct failed";
        return false;
    }
    png_infop info = png_create_info_struct(png);
    Reader reader{bytes, 0};
    std::vector<png_bytep>* row_ptrs = new std::vector<png_bytep>();
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        delete row_ptrs;
        err = "corrupt PNG data";
        return false;
    }
    png_set_read_fn(png, &reader, read_fn);
    png_read_info(png, info);
    const png_byte color = png_get_color_type(png, info);
    const png_byte depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (depth == 16 && !keep16) png_set_strip_16(png);
    const bool is_gray = (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA);
    if (want_rgb && is_gray) png_set_gray_to_rgb(png);
    if (!want_rgb && !is_gray) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    png_read_update_info(png, info);
    out.width = static_cast<int>(png_get_image_width(png, info));
    out.height = static_cast<int>(png_get_image_height(png, info));
    out.channels = png_get_channels(png, info);
    out.depth = png_get_bit_depth(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    out.rows.resize(stride * static_cast<std::size_t>(out.height));
    row_ptrs->resize(static_cast<std::size_t>(out.height));
    for (int y = 0; y < out.height; ++y) {
        (*row_ptrs)[static_cast<std::size_t>(y)] = out.rows.data() + stride * static_cast<std::size_t>(y);
    }
    png_read_image(png, row_ptrs->data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    delete row_ptrs;
    return true;
}

inline bool encode_raw(int width, int height, int color_type, int depth, const std::vector<png_bytep>& rows,
                       std::vector<std::uint8_t>& out, std::string& err) {
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) {
        err = "png_create_write_struct failed";
        return false;
    }
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        err = "PNG encoding failed";
        return false;
    }
    png_set_write_fn(png, &out, write_fn, flush_fn);
    png_set_compression_level(png, 6);
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), depth, color_type,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, const_cast<png_bytepp>(rows.data()));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return true;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open file", path);
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write file", path);
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("short write", path);
    }
}

}  // namespace png_detail

inline std::vector<std::uint8_t> encode_png(const RgbImage& img) {
    std::vector<png_bytep> rows(static_cast<std::size_t>(img.height()));
    auto bytes = std::span<const std::uint8_t>(img.bytes());
    for (int y = 0; y < img.height(); ++y) {
        rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(bytes.data() + static_cast<std::size_t>(y) * img.width() * 3);
    }
    std::vector<std::uint8_t> out;
    std::string err;
    if (!png_detail::encode_raw(img.width(), img.height(), PNG_COLOR_TYPE_RGB, 8, rows, out, err)) {
        throw IoError(err, {});
    }
    return out;
}

inline RgbImage decode_png_rgb(std::span<const std::uint8_t> bytes, const std::filesystem::path& origin = {}) {
    png_detail::Decoded d;
    std::string err;
    if (!png_detail::decode_raw(bytes, true, false, d, err)) {
        throw IoError(err, origin);
    }
    RgbImage img(d.width, d.height);
    std::copy(d.rows.begin(), d.rows.end(), img.bytes().begin());
    return img;
}

inline RgbImage read_png_rgb(const std::filesystem::path& path) {
    return decode_png_rgb(png_detail::read_file(path), path);
}

inline void write_png_rgb(const std::filesystem::path& path, const RgbImage& img) {
    png_detail::write_file(path, encode_png(img));
}

/// Reads an 8-bit (or reduced) grayscale image; any non-zero pixel is foreground.
inline Mask read_png_mask(const std::filesystem::path& path) {
    png_detail::Decoded d;
    std::string err;
    const auto bytes = png_detail::read_file(path);
    if (!png_detail::decode_raw(bytes, false, false, d, err)) {
        throw IoError(err, path);
    }
    Mask m(d.width, d.height);
    for (std::size_t i = 0; i < m.size(); ++i) {
        m.values()[i] = d.rows[i] != 0 ? 1 : 0;
    }
    return m;
}

inline void write_png_mask(const std::filesystem::path& path, const Mask& mask) {
    std::vector<std::uint8_t> pixels(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) {
        pixels[i] = mask.values()[i] ? 255 : 0;
    }
    std::vector<png_bytep> rows(static_cast<std::size_t>(mask.height()));
    for (int y = 0; y < mask.height(); ++y) {
        rows[static_cast<std::size_t>(y)] = pixels.data() + static_cast<std::size_t>(y) * mask.width();
    }
    std::vector<std::uint8_t> out;
    std::string err;
    if (!png_detail::encode_raw(mask.width(), mask.height(), PNG_COLOR_TYPE_GRAY, 8, rows, out, err)) {
        throw IoError(err, path);
    }
    png_detail::write_file(path, out);
}

inline Grid<std::uint16_t> read_png_gray16(const std::filesystem::path& path) {
    png_detail::Decoded d;
    std::string err;
    const auto bytes = png_detail::read_file(path);
    if (!png_detail::decode_raw(bytes, false, true, d, err)) {
        throw IoError(err, path);
    }
    Grid<std::uint16_t> g(d.width, d.height);
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (d.depth == 16) {
            g.values()[i] = static_cast<std::uint16_t>((d.rows[2 * i] << 8) | d.rows[2 * i + 1]);
        } else {
            g.values()[i] = static_cast<std::uint16_t>(d.rows[i] * 257);
        }
    }
    return g;
}

inline void write_png_gray16(const std::filesystem::path& path, const Grid<std::uint16_t>& g) {
    std::vector<std::uint8_t> pixels(g.size() * 2);
    for (std::size_t i = 0; i < g.size(); ++i) {
        pixels[2 * i] = static_cast<std::uint8_t>(g.values()[i] >> 8);
        pixels[2 * i + 1] = static_cast<std::uint8_t>(g.values()[i] & 0xff);
    }
    std::vector<png_bytep> rows(static_cast<std::size_t>(g.height()));
    for (int y = 0; y < g.height(); ++y) {
        rows[static_cast<std::size_t>(y)] = pixels.data() + static_cast<std::size_t>(y) * g.width() * 2;
    }
    std::vector<std::uint8_t> out;
    std::string err;
    if (!png_detail::encode_raw(g.width(), g.height(), PNG_COLOR_TYPE_GRAY, 16, rows, out, err)) {
        throw IoError(err, path);
    }
    png_detail::write_file(path, out);
}

}  // namespace velm
