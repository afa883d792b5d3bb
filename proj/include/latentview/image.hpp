// Copyright (c) 2026 latentview authors
// SPDX-License-Identifier: Apache-2.0
//
// PNG image IO and the resize/crop preprocessing rules. Images are CHW float
// tensors in [0,1]. The resize convention (bilinear, half-pixel centers,
// round-half-up long side, floor crop offsets) is part of the contract:
// golden tests hash the quantized output.

#pragma once

#include <png.h>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "latentview/common.hpp"
#include "latentview/tensor.hpp"

namespace latentview {

using Image = Tensor<float>;

inline int image_height(const Image& img) { return img.dim(1); }
inline int image_width(const Image& img) { return img.dim(2); }

// ---------------------------------------------------------------------------
// PNG IO (8-bit RGB on disk; gray/palette/alpha inputs are expanded).

namespace detail {
struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;
}  // namespace detail

inline Image read_png(const std::string& path) {
  detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw DataError("cannot open image: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DataError("png: allocation failure");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw DataError("png: allocation failure");
  }
  std::vector<png_bytep> rows;
  std::vector<png_byte> pixels;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("png: failed to decode " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS))
    png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int h = static_cast<int>(png_get_image_height(png, info));
  const int w = static_cast<int>(png_get_image_width(png, info));
  const std::size_t stride = png_get_rowbytes(png, info);
  pixels.resize(stride * static_cast<std::size_t>(h));
  rows.resize(static_cast<std::size_t>(h));
  for (int i = 0; i < h; ++i) rows[static_cast<std::size_t>(i)] = pixels.data() + stride * static_cast<std::size_t>(i);
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Image img({3, h, w});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      for (int c = 0; c < 3; ++c)
        img.at(c, i, j) =
            static_cast<float>(pixels[stride * static_cast<std::size_t>(i) + 3 * static_cast<std::size_t>(j) + static_cast<std::size_t>(c)]) / 255.0f;
  return img;
}

inline std::uint8_t quantize_u8(float v) {
  const long q = std::lround(static_cast<double>(v) * 255.0);
  return static_cast<std::uint8_t>(q < 0 ? 0 : (q > 255 ? 255 : q));
}

inline std::vector<std::uint8_t> image_to_u8(const Image& img) {
  const int h = img.dim(1), w = img.dim(2);
  std::vector<std::uint8_t> out(static_cast<std::size_t>(h) * w * 3);
  std::size_t k = 0;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      for (int c = 0; c < 3; ++c) out[k++] = quantize_u8(img.at(c, i, j));
  return out;
}

inline void write_png(const std::string& path, const Image& img) {
  if (img.rank() != 3 || img.dim(0) != 3) throw std::invalid_argument("write_png: expected 3xHxW");
  detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw DataError("cannot open for writing: " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DataError("png: allocation failure");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw DataError("png: allocation failure");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("png: failed to encode " + path);
  }
  const int h = img.dim(1), w = img.dim(2);
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * 3);
  for (int i = 0; i < h; ++i) {
    std::size_t k = 0;
    for (int j = 0; j < w; ++j)
      for (int c = 0; c < 3; ++c) row[k++] = quantize_u8(img.at(c, i, j));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// ---------------------------------------------------------------------------
// Resize and crop.

// Bilinear resample with half-pixel-center source mapping; interpolation in
// double so results are platform-stable.
inline Image resize_bilinear(const Image& img, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("resize: target must be at least 1x1");
  const int h = img.dim(1), w = img.dim(2);
  Image out({3, out_h, out_w});
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  for (int i = 0; i < out_h; ++i) {
    double fy = (i + 0.5) * sy - 0.5;
    if (fy < 0) fy = 0;
    if (fy > h - 1) fy = h - 1;
    const int y0 = static_cast<int>(fy);
    const int y1 = y0 + 1 < h ? y0 + 1 : y0;
    const double wy = fy - y0;
    for (int j = 0; j < out_w; ++j) {
      double fx = (j + 0.5) * sx - 0.5;
      if (fx < 0) fx = 0;
      if (fx > w - 1) fx = w - 1;
      const int x0 = static_cast<int>(fx);
      const int x1 = x0 + 1 < w ? x0 + 1 : x0;
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = (1 - wx) * img.at(c, y0, x0) + wx * img.at(c, y0, x1);
        const double bot = (1 - wx) * img.at(c, y1, x0) + wx * img.at(c, y1, x1);
        out.at(c, i, j) = static_cast<float>((1 - wy) * top + wy * bot);
      }
    }
  }
  return out;
}

inline Image crop(const Image& img, int top, int left, int out_h, int out_w) {
  if (top < 0 || left < 0 || top + out_h > img.dim(1) || left + out_w > img.dim(2))
    throw std::invalid_argument("crop: window outside image");
  Image out({3, out_h, out_w});
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < out_h; ++i)
      for (int j = 0; j < out_w; ++j) out.at(c, i, j) = img.at(c, top + i, left + j);
  return out;
}

inline int round_half_up(double x) { return static_cast<int>(std::floor(x + 0.5)); }

// Scale so the shorter side equals `target` (long side rounds half-up), then
// center-crop to target x target with floor offsets, dropping odd overhang
// from the bottom/right.
inline Image preprocess_image(const Image& img, int target = 512) {
  const int h = img.dim(1), w = img.dim(2);
  if (h < 1 || w < 1) throw std::invalid_argument("preprocess: empty image");
  int new_h, new_w;
  if (h <= w) {
    new_h = target;
    new_w = round_half_up(static_cast<double>(w) * target / h);
  } else {
    new_w = target;
    new_h = round_half_up(static_cast<double>(h) * target / w);
  }
  Image resized = (new_h == h && new_w == w) ? img : resize_bilinear(img, new_h, new_w);
  const int top = (new_h - target) / 2;
  const int left = (new_w - target) / 2;
  return crop(resized, top, left, target, target);
}

// Square-only protocol resize used when comparing at a common resolution.
inline Image resize_for_protocol(const Image& img, int target) {
  if (img.dim(1) != img.dim(2)) throw std::invalid_argument("protocol resize: input must be square");
  if (img.dim(1) == target) return img;
  return resize_bilinear(img, target, target);
}

}  // namespace latentview
