// Copyright Contributors to the ColonSplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <colonsplat/core/errors.hpp>
#include <colonsplat/core/types.hpp>

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

namespace colonsplat {

namespace io_detail {

struct PngRead {
    FILE* fp = nullptr;
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngRead()
    {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        if (fp) std::fclose(fp);
    }
};

struct PngWrite {
    FILE* fp = nullptr;
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngWrite()
    {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        if (fp) std::fclose(fp);
    }
};

} // namespace io_detail

// 8-bit PNG decoded to RGB floats in [0,1].
inline Image<float> read_png_rgb(const std::string& path)
{
    io_detail::PngRead s;
    s.fp = std::fopen(path.c_str(), "rb");
    if (!s.fp) throw IoError("cannot open " + path);
    s.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!s.png) throw IoError("png_create_read_struct failed");
    s.info = png_create_info_struct(s.png);
    if (!s.info) throw IoError("png_create_info_struct failed");
    if (setjmp(png_jmpbuf(s.png))) throw IoError("png decode failed: " + path);

    png_init_io(s.png, s.fp);
    png_read_info(s.png, s.info);

    const png_uint_32 w = png_get_image_width(s.png, s.info);
    const png_uint_32 h = png_get_image_height(s.png, s.info);
    const int type = png_get_color_type(s.png, s.info);
    const int depth = png_get_bit_depth(s.png, s.info);

    if (depth == 16) png_set_strip_16(s.png);
    if (type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(s.png);
    if (type == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(s.png);
    if (png_get_valid(s.png, s.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(s.png);
    if (type == PNG_COLOR_TYPE_GRAY || type == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(s.png);
    if (type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(s.png);
    png_read_update_info(s.png, s.info);

    std::vector<png_byte> row(png_get_rowbytes(s.png, s.info));
    if (row.size() < static_cast<size_t>(w) * 3) throw IoError("unexpected png row size: " + path);

    Image<float> img(static_cast<int>(w), static_cast<int>(h), 3);
    for (png_uint_32 y = 0; y < h; ++y) {
        png_read_row(s.png, row.data(), nullptr);
        for (png_uint_32 x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(static_cast<int>(y), static_cast<int>(x), c) = row[x * 3 + c] / 255.0f;
    }
    png_read_end(s.png, nullptr);
    return img;
}

// Element-wise scalar conversion, shape preserved.
template <typename To, typename From>
Image<To> image_cast(const Image<From>& img)
{
    Image<To> out(img.width, img.height, img.channels);
    for (size_t i = 0; i < img.data.size(); ++i) out.data[i] = static_cast<To>(img.data[i]);
    return out;
}

// Quantizes [0,1] floats to 8-bit RGB.
inline void write_png_rgb(const std::string& path, const Image<float>& img)
{
    if (img.channels != 3) throw DimMismatch("write_png_rgb expects 3 channels");
    io_detail::PngWrite s;
    s.fp = std::fopen(path.c_str(), "wb");
    if (!s.fp) throw IoError("cannot open " + path + " for writing");
    s.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!s.png) throw IoError("png_create_write_struct failed");
    s.info = png_create_info_struct(s.png);
    if (!s.info) throw IoError("png_create_info_struct failed");
    if (setjmp(png_jmpbuf(s.png))) throw IoError("png encode failed: " + path);

    png_init_io(s.png, s.fp);
    png_set_IHDR(s.png, s.info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(s.png, s.info);

    std::vector<png_byte> row(static_cast<size_t>(img.width) * 3);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) {
                const float v = std::clamp(img.at(y, x, c), 0.0f, 1.0f);
                row[x * 3 + c] = static_cast<png_byte>(std::lround(v * 255.0f));
            }
        png_write_row(s.png, row.data());
    }
    png_write_end(s.png, nullptr);
}

// Grayscale PFM, 32-bit floats, negative scale marks little-endian data.
// Rows are stored bottom to top per the format convention.
inline void write_pfm(const std::string& path, const Image<float>& img)
{
    if (img.channels != 1) throw DimMismatch("write_pfm expects 1 channel");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "Pf\n" << img.width << " " << img.height << "\n-1.0\n";
    for (int y = img.height - 1; y >= 0; --y)
        out.write(reinterpret_cast<const char*>(&img.at(y, 0, 0)),
                  static_cast<std::streamsize>(img.width) * sizeof(float));
    if (!out) throw IoError("short write: " + path);
}

inline Image<float> read_pfm(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string magic;
    int w = 0, h = 0;
    double scale = 0.0;
    in >> magic >> w >> h >> scale;
    if (magic != "Pf" || w <= 0 || h <= 0 || scale == 0.0 || !in)
        throw IoError("bad pfm header: " + path);
    in.get(); // single whitespace byte terminating the header
    Image<float> img(w, h, 1);
    for (int y = h - 1; y >= 0; --y)
        in.read(reinterpret_cast<char*>(&img.at(y, 0, 0)),
                static_cast<std::streamsize>(w) * sizeof(float));
    if (!in) throw IoError("short pfm read: " + path);
    if (scale > 0.0) { // big-endian payload
        for (float& v : img.data) {
            auto* b = reinterpret_cast<unsigned char*>(&v);
            std::swap(b[0], b[3]);
            std::swap(b[1], b[2]);
        }
    }
    return img;
}

} // namespace colonsplat
