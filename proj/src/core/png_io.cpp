#include "gazeswap/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

namespace gazeswap {
namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) {
            std::fclose(f);
        }
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

uint8_t to_byte(float v) {
    float clamped = std::fmin(1.0f, std::fmax(0.0f, v));
    return static_cast<uint8_t>(std::lround(clamped * 255.0f));
}

void write_rows(const std::filesystem::path& path, int size, int channels, const std::vector<uint8_t>& bytes) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) {
        throw IoError("cannot open for writing: " + path.string());
    }
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng write failed: " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, size, size, 8, channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int r = 0; r < size; ++r) {
        png_write_row(png, bytes.data() + static_cast<size_t>(r) * size * channels);
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

struct Decoded {
    int size = 0;
    int channels = 0;
    std::vector<uint8_t> bytes;
};

Decoded read_rows(const std::filesystem::path& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) {
        throw IoError("cannot open for reading: " + path.string());
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("corrupt PNG: " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    png_uint_32 width = png_get_image_width(png, info);
    png_uint_32 height = png_get_image_height(png, info);
    int color = png_get_color_type(png, info);
    if (png_get_bit_depth(png, info) == 16) {
        png_set_strip_16(png);
    }
    if (color == PNG_COLOR_TYPE_PALETTE) {
        png_set_palette_to_rgb(png);
    }
    if (color & PNG_COLOR_MASK_ALPHA) {
        png_set_strip_alpha(png);
    }
    png_read_update_info(png, info);
    if (width != height) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("non-square PNG: " + path.string());
    }
    Decoded out;
    out.size = static_cast<int>(width);
    out.channels = static_cast<int>(png_get_channels(png, info));
    size_t stride = png_get_rowbytes(png, info);
    out.bytes.resize(stride * height);
    for (png_uint_32 r = 0; r < height; ++r) {
        png_read_row(png, out.bytes.data() + r * stride, nullptr);
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

}  // namespace

void write_png(const std::filesystem::path& path, const FaceImage& image) {
    if (image.channels() != 1 && image.channels() != 3) {
        throw ContractViolation("write_png supports 1 or 3 channels");
    }
    std::vector<uint8_t> bytes(image.numel());
    auto px = image.pixels();
    for (size_t i = 0; i < bytes.size(); ++i) {
        bytes[i] = to_byte(px[i]);
    }
    write_rows(path, image.size(), image.channels(), bytes);
}

FaceImage read_png(const std::filesystem::path& path) {
    Decoded d = read_rows(path);
    std::vector<float> px(d.bytes.size());
    for (size_t i = 0; i < px.size(); ++i) {
        px[i] = static_cast<float>(d.bytes[i]) / 255.0f;
    }
    return FaceImage(d.size, d.channels, std::move(px));
}

void write_mask_png(const std::filesystem::path& path, const Mask& mask) {
    std::vector<uint8_t> bytes(mask.bits().begin(), mask.bits().end());
    for (auto& b : bytes) {
        b = b ? 255 : 0;
    }
    write_rows(path, mask.size(), 1, bytes);
}

Mask read_mask_png(const std::filesystem::path& path) {
    Decoded d = read_rows(path);
    if (d.channels != 1) {
        throw IoError("mask PNG must be grayscale: " + path.string());
    }
    Mask m(d.size);
    auto bits = m.bits();
    for (size_t i = 0; i < bits.size(); ++i) {
        bits[i] = d.bytes[i] >= 128 ? 1 : 0;
    }
    return m;
}

}  // namespace gazeswap
