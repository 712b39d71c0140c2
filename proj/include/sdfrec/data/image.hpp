#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include <png.h>

#include "sdfrec/core/error.hpp"

namespace sdfrec {

// Linear-light float image, interleaved channels, rows top-down.
struct Image {
    int width = 0, height = 0, channels = 0;
    std::vector<float> px;

    Image() = default;
    Image(int w, int h, int c) : width(w), height(h), channels(c), px((size_t)w * h * c, 0.f) {}

    float& at(int x, int y, int c = 0) { return px[((size_t)y * width + x) * channels + c]; }
    float at(int x, int y, int c = 0) const { return px[((size_t)y * width + x) * channels + c]; }
    bool same_shape(const Image& o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }
};

// ---- PNG (8-bit, linear values scaled by 255 and clamped) ---------------------

inline void save_png(const std::string& path, const Image& img) {
    if (img.channels != 1 && img.channels != 3) throw IoError("png supports 1 or 3 channels");
    FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("cannot write png: " + path);
    png_structp p = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(p);
    if (setjmp(png_jmpbuf(p))) {
        png_destroy_write_struct(&p, &info);
        std::fclose(f);
        throw IoError("libpng failure writing " + path);
    }
    png_init_io(p, f);
    png_set_IHDR(p, info, img.width, img.height, 8,
                 img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(p, info);
    std::vector<png_byte> row((size_t)img.width * img.channels);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c) {
                float v = img.at(x, y, c);
                v = std::clamp(v, 0.f, 1.f);
                row[(size_t)x * img.channels + c] = (png_byte)std::lround(v * 255.0f);
            }
        png_write_row(p, row.data());
    }
    png_write_end(p, nullptr);
    png_destroy_write_struct(&p, &info);
    std::fclose(f);
}

inline Image load_png(const std::string& path) {
    FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw IoError("cannot open png: " + path);
    png_structp p = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(p);
    if (setjmp(png_jmpbuf(p))) {
        png_destroy_read_struct(&p, &info, nullptr);
        std::fclose(f);
        throw IoError("libpng failure reading " + path);
    }
    png_init_io(p, f);
    png_read_info(p, info);
    png_uint_32 w, h;
    int bit_depth, color_type;
    png_get_IHDR(p, info, &w, &h, &bit_depth, &color_type, nullptr, nullptr, nullptr);
    if (bit_depth == 16) png_set_strip_16(p);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(p);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(p);
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(p);
    png_read_update_info(p, info);
    int channels = png_get_channels(p, info);
    if (channels != 1 && channels != 3) {
        png_destroy_read_struct(&p, &info, nullptr);
        std::fclose(f);
        throw IoError("png with unsupported channel count: " + path);
    }
    Image img((int)w, (int)h, channels);
    std::vector<png_byte> row((size_t)w * channels);
    for (int y = 0; y < (int)h; ++y) {
        png_read_row(p, row.data(), nullptr);
        for (int x = 0; x < (int)w; ++x)
            for (int c = 0; c < channels; ++c)
                img.at(x, y, c) = row[(size_t)x * channels + c] / 255.0f;
    }
    png_destroy_read_struct(&p, &info, nullptr);
    std::fclose(f);
    return img;
}

// ---- PFM (float32, little-endian, bottom-up rows) ------------------------------

inline void save_pfm(const std::string& path, const Image& img) {
    if (img.channels != 1 && img.channels != 3) throw IoError("pfm supports 1 or 3 channels");
    FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("cannot write pfm: " + path);
    std::fprintf(f, "%s\n%d %d\n-1.0\n", img.channels == 3 ? "PF" : "Pf", img.width, img.height);
    for (int y = img.height - 1; y >= 0; --y)
        std::fwrite(&img.px[(size_t)y * img.width * img.channels], sizeof(float),
                    (size_t)img.width * img.channels, f);
    std::fclose(f);
}

inline Image load_pfm(const std::string& path) {
    FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw IoError("cannot open pfm: " + path);
    char tag[3] = {0};
    int w, h;
    double scale;
    if (std::fscanf(f, "%2s %d %d %lf", tag, &w, &h, &scale) != 4 ||
        (std::strcmp(tag, "PF") != 0 && std::strcmp(tag, "Pf") != 0) || scale >= 0) {
        std::fclose(f);
        throw IoError("bad pfm header (only little-endian supported): " + path);
    }
    std::fgetc(f);  // single whitespace after scale
    Image img(w, h, tag[1] == 'F' ? 3 : 1);
    for (int y = h - 1; y >= 0; --y)
        if (std::fread(&img.px[(size_t)y * w * img.channels], sizeof(float),
                       (size_t)w * img.channels, f) != (size_t)w * img.channels) {
            std::fclose(f);
            throw IoError("pfm truncated: " + path);
        }
    std::fclose(f);
    return img;
}

}  // namespace sdfrec
