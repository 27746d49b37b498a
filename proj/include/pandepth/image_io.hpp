// Copyright 2026 The PanDepth Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef PANDEPTH_IMAGE_IO_HPP_
#define PANDEPTH_IMAGE_IO_HPP_

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "pandepth/types.hpp"

namespace pandepth::io {

using Rgb8 = std::array<uint8_t, 3>;

inline cv::Mat read_mat(const std::string& path, int flags) {
  cv::Mat m;
  try {
    m = cv::imread(path, flags);
  } catch (const cv::Exception& e) {
    throw IoError("cannot decode image '" + path + "': " + e.what());
  }
  if (m.empty()) throw IoError("cannot read image '" + path + "'");
  return m;
}

// 8-bit colour image as planar RGB in [0, 1].
inline ImageFrame read_rgb(const std::string& path) {
  cv::Mat m = read_mat(path, cv::IMREAD_COLOR);
  ImageFrame f(m.rows, m.cols);
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < m.cols; ++x)
      for (int c = 0; c < 3; ++c) f.at(c, y, x) = row[x][2 - c] / 255.f;
  }
  return f;
}

// 8-bit colour image as packed RGB triplets.
inline Grid<Rgb8> read_rgb8(const std::string& path) {
  cv::Mat m = read_mat(path, cv::IMREAD_COLOR);
  Grid<Rgb8> g(m.rows, m.cols);
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < m.cols; ++x) g(y, x) = {row[x][2], row[x][1], row[x][0]};
  }
  return g;
}

inline Grid<uint16_t> read_png16(const std::string& path) {
  cv::Mat m = read_mat(path, cv::IMREAD_UNCHANGED);
  if (m.type() != CV_16UC1) throw IoError("'" + path + "' is not a single-channel 16-bit PNG");
  Grid<uint16_t> g(m.rows, m.cols);
  for (int y = 0; y < m.rows; ++y) std::copy_n(m.ptr<uint16_t>(y), m.cols, &g(y, 0));
  return g;
}

inline void write_png16(const std::string& path, const Grid<uint16_t>& g) {
  cv::Mat m(static_cast<int>(g.h), static_cast<int>(g.w), CV_16UC1);
  for (int y = 0; y < m.rows; ++y) std::copy_n(&g(y, 0), m.cols, m.ptr<uint16_t>(y));
  bool ok = false;
  try {
    ok = cv::imwrite(path, m);
  } catch (const cv::Exception& e) {
    throw IoError("cannot write '" + path + "': " + e.what());
  }
  if (!ok) throw IoError("cannot write '" + path + "'");
}

inline void write_png8(const std::string& path, const Grid<uint8_t>& g) {
  cv::Mat m(static_cast<int>(g.h), static_cast<int>(g.w), CV_8UC1);
  for (int y = 0; y < m.rows; ++y) std::copy_n(&g(y, 0), m.cols, m.ptr<uint8_t>(y));
  if (!cv::imwrite(path, m)) throw IoError("cannot write '" + path + "'");
}

// Writes 8-bit RGB (PNG or JPEG chosen by extension).
inline void write_rgb(const std::string& path, const ImageFrame& f) {
  cv::Mat m(static_cast<int>(f.h), static_cast<int>(f.w), CV_8UC3);
  for (int y = 0; y < m.rows; ++y) {
    auto* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < m.cols; ++x)
      for (int c = 0; c < 3; ++c)
        row[x][2 - c] = static_cast<uint8_t>(std::lround(std::clamp(f.at(c, y, x), 0.f, 1.f) * 255.f));
  }
  if (!cv::imwrite(path, m)) throw IoError("cannot write '" + path + "'");
}

inline void write_rgb8(const std::string& path, const Grid<Rgb8>& g) {
  cv::Mat m(static_cast<int>(g.h), static_cast<int>(g.w), CV_8UC3);
  for (int y = 0; y < m.rows; ++y) {
    auto* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < m.cols; ++x) row[x] = {g(y, x)[2], g(y, x)[1], g(y, x)[0]};
  }
  if (!cv::imwrite(path, m)) throw IoError("cannot write '" + path + "'");
}

// Single-channel label PNG. Palette images yield their raw indices rather
// than expanded colours; greyscale images (8 or 16 bit) yield their values.
inline LabelMap read_label_png(const std::string& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!fp) throw IoError("cannot open '" + path + "'");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialisation failed for '" + path + "'");
  }
  LabelMap out;
  std::vector<uint8_t> buf;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("cannot decode label PNG '" + path + "'");
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const png_uint_32 w = png_get_image_width(png, info), h = png_get_image_height(png, info);
  const int depth = png_get_bit_depth(png, info), type = png_get_color_type(png, info);
  if (type != PNG_COLOR_TYPE_PALETTE && type != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("'" + path + "' is not a palette or greyscale label PNG");
  }
  if (depth < 8) png_set_packing(png);
  if (depth == 16) png_set_swap(png);
  png_read_update_info(png, info);
  const size_t stride = png_get_rowbytes(png, info);
  buf.resize(stride * h);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = buf.data() + y * stride;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  out = LabelMap(h, w);
  for (png_uint_32 y = 0; y < h; ++y)
    for (png_uint_32 x = 0; x < w; ++x) {
      if (depth == 16) {
        uint16_t v;
        std::memcpy(&v, rows[y] + 2 * x, 2);
        out(y, x) = v;
      } else {
        out(y, x) = rows[y][x];
      }
    }
  return out;
}

}  // namespace pandepth::io

#endif  // PANDEPTH_IMAGE_IO_HPP_
