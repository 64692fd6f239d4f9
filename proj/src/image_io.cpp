#include "d3t/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cstdio>
#include <memory>
#include <stdexcept>

namespace d3t::img {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void check_chw(const Tensor& t, const char* who) {
    if (t.rank() != 3 || t.dim(0) != 3)
        throw std::invalid_argument(std::string(who) + ": expected [3,h,w], got " + t.shape_str());
}

} // namespace

Tensor read_png(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw std::runtime_error("read_png: cannot open " + path);

    unsigned char sig[8];
    if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8))
        throw std::runtime_error("read_png: not a PNG file: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("read_png: libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw std::runtime_error("read_png: libpng init failed");
    }
    std::vector<unsigned char> pixels;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("read_png: decode failed: " + path);
    }
    png_init_io(png, f.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);

    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    if (png_get_channels(png, info) != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("read_png: could not normalize to RGB: " + path);
    }
    pixels.resize(static_cast<size_t>(w) * h * 3);
    rows.resize(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = pixels.data() + static_cast<size_t>(y) * w * 3;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    Tensor out({3, static_cast<int>(h), static_cast<int>(w)});
    const long plane = static_cast<long>(h) * w;
    for (long y = 0; y < static_cast<long>(h); ++y)
        for (long x = 0; x < static_cast<long>(w); ++x)
            for (int c = 0; c < 3; ++c)
                out[c * plane + y * w + x] = pixels[(y * w + x) * 3 + c] / 255.f;
    return out;
}

void write_png(const std::string& path, const Tensor& image) {
    check_chw(image, "write_png");
    const int h = image.dim(1), w = image.dim(2);
    const long plane = static_cast<long>(h) * w;

    std::vector<unsigned char> pixels(static_cast<size_t>(plane) * 3);
    for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                const float v = image[c * plane + y * w + x];
                const long b = std::lround((static_cast<double>(v) + 1.0) * 127.5);
                pixels[(y * w + x) * 3 + c] =
                    static_cast<unsigned char>(std::clamp(b, 0l, 255l));
            }

    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw std::runtime_error("write_png: cannot open " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("write_png: libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw std::runtime_error("write_png: libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("write_png: encode failed: " + path);
    }
    png_init_io(png, f.get());
    png_set_compression_level(png, 6);
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(static_cast<size_t>(h));
    for (int y = 0; y < h; ++y) rows[y] = pixels.data() + static_cast<size_t>(y) * w * 3;
    png_write_image(png, rows.data());
    png_write_end(png, info);
    png_destroy_write_struct(&png, &info);
    if (std::fflush(f.get()) != 0) throw std::runtime_error("write_png: write failed: " + path);
}

Tensor compose_grid(const Tensor& batch, int cols) {
    if (batch.rank() != 4 || batch.dim(1) != 3)
        throw std::invalid_argument("compose_grid: expected [n,3,r,r], got " + batch.shape_str());
    if (cols <= 0) throw std::invalid_argument("compose_grid: cols must be positive");
    const int n = batch.dim(0), r = batch.dim(2);
    if (batch.dim(3) != r)
        throw std::invalid_argument("compose_grid: images must be square");
    const int rows = (n + cols - 1) / cols;

    Tensor out({3, rows * r, cols * r}, -1.f);
    const long in_plane = static_cast<long>(r) * r;
    const long out_plane = static_cast<long>(rows) * r * cols * r;
    for (int i = 0; i < n; ++i) {
        const int gy = i / cols, gx = i % cols;
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < r; ++y)
                for (int x = 0; x < r; ++x)
                    out[c * out_plane + static_cast<long>(gy * r + y) * (cols * r) + gx * r + x] =
                        batch[(static_cast<long>(i) * 3 + c) * in_plane + y * r + x];
    }
    return out;
}

Tensor crop_resize(const Tensor& image, int size) {
    check_chw(image, "crop_resize");
    if (size <= 0) throw std::invalid_argument("crop_resize: size must be positive");
    const int h = image.dim(1), w = image.dim(2);
    const int side = std::min(h, w);
    const int y0 = (h - side) / 2, x0 = (w - side) / 2;
    const long plane = static_cast<long>(h) * w;

    // Area resampling: each output pixel averages its source rectangle, exact
    // for integer ratios and alias-free for downscales.
    Tensor out({3, size, size});
    const double scale = static_cast<double>(side) / size;
    const long out_plane = static_cast<long>(size) * size;
    for (int c = 0; c < 3; ++c)
        for (int oy = 0; oy < size; ++oy)
            for (int ox = 0; ox < size; ++ox) {
                const double sy0 = oy * scale, sy1 = (oy + 1) * scale;
                const double sx0 = ox * scale, sx1 = (ox + 1) * scale;
                double acc = 0;
                for (int sy = static_cast<int>(sy0); sy < side && sy < sy1; ++sy) {
                    const double wy =
                        std::min<double>(sy + 1, sy1) - std::max<double>(sy, sy0);
                    for (int sx = static_cast<int>(sx0); sx < side && sx < sx1; ++sx) {
                        const double wx =
                            std::min<double>(sx + 1, sx1) - std::max<double>(sx, sx0);
                        acc += wy * wx *
                               image[c * plane + static_cast<long>(y0 + sy) * w + x0 + sx];
                    }
                }
                out[c * out_plane + static_cast<long>(oy) * size + ox] =
                    static_cast<float>(acc / (scale * scale));
            }
    return out;
}

} // namespace d3t::img
