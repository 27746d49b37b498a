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

#ifndef PANDEPTH_RECON3D_HPP_
#define PANDEPTH_RECON3D_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "pandepth/errors.hpp"
#include "pandepth/rng.hpp"
#include "pandepth/types.hpp"

namespace pandepth {

struct PanopticPoint {
  std::array<double, 3> xyz{};
  std::array<uint8_t, 3> rgb{};
  std::array<uint8_t, 3> segment_rgb{};
  int32_t class_id = 0;
  int32_t instance_id = 0;
};

using PanopticCloud = std::vector<PanopticPoint>;

// Display colour of a segment. Stuff and void use one colour per class;
// things get a hashed colour per (class, instance).
inline std::array<uint8_t, 3> segment_color(int32_t class_id, int32_t instance_id) {
  if (class_id == kVoidId) return {0, 0, 0};
  const uint64_t h = splitmix64((static_cast<uint64_t>(class_id) << 32) | static_cast<uint32_t>(instance_id));
  // Keep channels away from black so segments stay visible.
  return {static_cast<uint8_t>(64 + (h & 0xbf)), static_cast<uint8_t>(64 + ((h >> 8) & 0xbf)),
          static_cast<uint8_t>(64 + ((h >> 16) & 0xbf))};
}

// One point per pixel on the `stride` grid, back-projected with the pinhole
// model through the dense depth.
inline PanopticCloud build_point_cloud(const DenseDepthMap& depth, const PanopticMap& pan, const ImageFrame& rgb,
                                       const CameraIntrinsics& k, int stride = 1) {
  PANDEPTH_CHECK_ARG(stride >= 1, "point cloud: stride must be >= 1");
  validate(k);
  const int64_t h = depth.h(), w = depth.w();
  PANDEPTH_CHECK_ARG(pan.h() == h && pan.w() == w && rgb.h == h && rgb.w == w,
                     "point cloud: depth, panoptic map and image differ in size");
  PanopticCloud out;
  out.reserve(static_cast<size_t>(((h + stride - 1) / stride) * ((w + stride - 1) / stride)));
  for (int64_t v = 0; v < h; v += stride)
    for (int64_t u = 0; u < w; u += stride) {
      PanopticPoint p;
      const double d = depth.depth(v, u);
      p.xyz = {(static_cast<double>(u) - k.cx) * d / k.fx, (static_cast<double>(v) - k.cy) * d / k.fy, d};
      for (int c = 0; c < 3; ++c)
        p.rgb[c] = static_cast<uint8_t>(std::lround(std::clamp(rgb.at(c, v, u), 0.f, 1.f) * 255.f));
      p.class_id = pan.class_map(v, u);
      p.instance_id = pan.instance_map(v, u);
      p.segment_rgb = segment_color(p.class_id, p.instance_id);
      out.push_back(p);
    }
  return out;
}

enum class PlyColor { kSegment, kImage };

// ASCII PLY with per-vertex colour, class id and instance id.
inline void write_ply(std::ostream& os, const PanopticCloud& pts, PlyColor color = PlyColor::kSegment) {
  PANDEPTH_CHECK_ARG(!pts.empty(), "ply export: empty point set");
  os << "ply\nformat ascii 1.0\nelement vertex " << pts.size()
     << "\nproperty float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        "property int class_id\nproperty int instance_id\nend_header\n";
  char buf[160];
  for (const auto& p : pts) {
    const auto& c = color == PlyColor::kSegment ? p.segment_rgb : p.rgb;
    std::snprintf(buf, sizeof(buf), "%.6f %.6f %.6f %d %d %d %d %d\n", p.xyz[0], p.xyz[1], p.xyz[2], c[0], c[1], c[2],
                  p.class_id, p.instance_id);
    os << buf;
  }
}

inline void export_ply(const std::string& path, const PanopticCloud& pts, PlyColor color = PlyColor::kSegment) {
  PANDEPTH_CHECK_ARG(!pts.empty(), "ply export: empty point set for '" + path + "'");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  write_ply(os, pts, color);
  if (!os) throw IoError("failed writing '" + path + "'");
}

// Reader for the files written above. The colour read back goes to
// segment_rgb.
inline PanopticCloud read_ply(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string line;
  size_t n = 0;
  bool header_ok = false;
  if (!std::getline(in, line) || line != "ply") throw IoError("'" + path + "' is not a PLY file");
  while (std::getline(in, line)) {
    if (line.rfind("format", 0) == 0 && line != "format ascii 1.0")
      throw IoError("'" + path + "': only ascii PLY is supported");
    if (line.rfind("element vertex ", 0) == 0) n = std::stoull(line.substr(15));
    if (line == "end_header") {
      header_ok = true;
      break;
    }
  }
  if (!header_ok) throw IoError("'" + path + "': missing end_header");
  PanopticCloud out(n);
  for (size_t i = 0; i < n; ++i) {
    if (!std::getline(in, line)) throw IoError("'" + path + "': truncated vertex list");
    std::istringstream ss(line);
    int r, g, b;
    auto& p = out[i];
    if (!(ss >> p.xyz[0] >> p.xyz[1] >> p.xyz[2] >> r >> g >> b >> p.class_id >> p.instance_id))
      throw IoError("'" + path + "': malformed vertex " + std::to_string(i));
    p.segment_rgb = {static_cast<uint8_t>(r), static_cast<uint8_t>(g), static_cast<uint8_t>(b)};
  }
  return out;
}

}  // namespace pandepth

#endif  // PANDEPTH_RECON3D_HPP_
