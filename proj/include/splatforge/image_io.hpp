#pragma once

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "splatforge/common.hpp"
#include "splatforge/tensor.hpp"

namespace splatforge {

// ------------------------------------------------------------------- PNG
// 8-bit RGB. Values are clamped to [0,1] and rounded on write.

inline void save_png(const std::string& path, const Image& img) {
    if (img.channels() != 3) throw ValidationError("save_png: need a 3-channel image");
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw Error("save_png: cannot open " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        std::fclose(fp);
        throw Error("save_png: libpng failure writing " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, img.width(), img.height(), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_byte> row(static_cast<size_t>(img.width()) * 3);
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            for (int c = 0; c < 3; ++c) {
                float v = img.at(y, x, c);
                v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
                row[static_cast<size_t>(x) * 3 + c] = static_cast<png_byte>(std::lround(v * 255.f));
            }
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

inline Image load_png(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw ParseError("load_png: cannot open " + path);
    png_byte header[8];
    if (std::fread(header, 1, 8, fp) != 8 || png_sig_cmp(header, 0, 8)) {
        std::fclose(fp);
        throw ParseError("load_png: not a PNG file: " + path);
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        std::fclose(fp);
        throw ParseError("load_png: libpng failure reading " + path);
    }
    png_init_io(png, fp);
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    // normalize every variant to 8-bit RGB
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
        png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA) {
        png_set_gray_to_rgb(png);
    }
    png_read_update_info(png, info);
    const int W = static_cast<int>(png_get_image_width(png, info));
    const int H = static_cast<int>(png_get_image_height(png, info));
    Image img(W, H, 3);
    std::vector<png_byte> row(static_cast<size_t>(W) * 3);
    for (int y = 0; y < H; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < W; ++x) {
            for (int c = 0; c < 3; ++c) {
                img.at(y, x, c) = static_cast<float>(row[static_cast<size_t>(x) * 3 + c]) / 255.f;
            }
        }
    }
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return img;
}

// ------------------------------------------------------------------- PFM
// 32-bit float, little-endian (negative scale), rows bottom to top.
// "PF" = 3-channel, "Pf" = 1-channel.

inline void save_pfm(const std::string& path, const Image& img) {
    if (img.channels() != 1 && img.channels() != 3) {
        throw ValidationError("save_pfm: need a 1- or 3-channel image");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("save_pfm: cannot open " + path);
    out << (img.channels() == 3 ? "PF" : "Pf") << "\n"
        << img.width() << " " << img.height() << "\n" << "-1.0" << "\n";
    const size_t row_floats = static_cast<size_t>(img.width()) * img.channels();
    for (int y = img.height() - 1; y >= 0; --y) {
        out.write(reinterpret_cast<const char*>(img.row(y)), row_floats * sizeof(float));
    }
    if (!out) throw Error("save_pfm: write failure: " + path);
}

inline Image load_pfm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("load_pfm: cannot open " + path);
    std::string magic;
    int W = 0, H = 0;
    double scale = 0;
    in >> magic >> W >> H >> scale;
    if (!in || (magic != "PF" && magic != "Pf")) throw ParseError("load_pfm: bad header: " + path);
    if (W <= 0 || H <= 0) throw ParseError("load_pfm: bad dimensions: " + path);
    if (scale >= 0) throw ParseError("load_pfm: big-endian PFM not supported: " + path);
    in.get();  // single whitespace byte after the scale
    const int C = magic == "PF" ? 3 : 1;
    Image img(W, H, C);
    const size_t row_floats = static_cast<size_t>(W) * C;
    for (int y = H - 1; y >= 0; --y) {
        in.read(reinterpret_cast<char*>(img.row(y)), row_floats * sizeof(float));
        if (!in) throw ParseError("load_pfm: truncated body: " + path);
    }
    return img;
}

}  // namespace splatforge
