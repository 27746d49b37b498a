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

#ifndef PANDEPTH_PANOPTIC_IO_HPP_
#define PANDEPTH_PANOPTIC_IO_HPP_

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "json.hpp"
#include "pandepth/image_io.hpp"
#include "pandepth/types.hpp"

namespace pandepth::io {

// Panoptic maps are stored as single-channel 16-bit PNGs holding
// class * 1000 + instance, with a JSON sidecar listing the segments.
inline void write_panoptic(const std::string& png_path, const PanopticMap& p, const LabelSchema& schema) {
  validate(p, schema);
  Grid<uint16_t> g(p.h(), p.w());
  for (int64_t i = 0; i < g.size(); ++i) {
    const int32_t id = p.id_at(i);
    if (id > 65535) throw CapacityError("panoptic png: id " + std::to_string(id) + " does not fit 16 bits");
    g.data[i] = static_cast<uint16_t>(id);
  }
  write_png16(png_path, g);
  nlohmann::json segs = nlohmann::json::array();
  for (const auto& [key, s] : p.segments())
    segs.push_back({{"id", encode_panoptic_id(s.class_id, s.instance_id)},
                    {"class_id", s.class_id},
                    {"class_name", schema.name(s.class_id)},
                    {"instance_id", s.instance_id},
                    {"is_thing", schema.is_thing(s.class_id)},
                    {"area", s.area},
                    {"bbox", {s.bbox.x1, s.bbox.y1, s.bbox.x2, s.bbox.y2}}});
  const std::string side = png_path + ".json";
  std::ofstream os(side);
  if (!os) throw IoError("cannot open '" + side + "' for writing");
  os << nlohmann::json{{"height", p.h()}, {"width", p.w()}, {"divisor", kPanopticDivisor}, {"segments", segs}}.dump(2)
     << "\n";
}

inline PanopticMap read_panoptic(const std::string& png_path) {
  const Grid<uint16_t> g = read_png16(png_path);
  PanopticMap p(g.h, g.w);
  for (int64_t i = 0; i < g.size(); ++i) {
    const auto [c, inst] = decode_panoptic_id(g.data[i]);
    p.class_map.data[i] = c;
    p.instance_map.data[i] = inst;
  }
  return p;
}

// Depth in centimetres, 16-bit; values are clamped to [1, 65534] cm.
inline void write_depth_png(const std::string& path, const DenseDepthMap& d) {
  Grid<uint16_t> g(d.h(), d.w());
  for (int64_t i = 0; i < g.size(); ++i)
    g.data[i] = static_cast<uint16_t>(std::clamp<long>(std::lround(d.depth.data[i] * 100.0), 1, 65534));
  write_png16(path, g);
}

inline DenseDepthMap read_depth_png(const std::string& path) {
  const Grid<uint16_t> g = read_png16(path);
  DenseDepthMap d(g.h, g.w);
  for (int64_t i = 0; i < g.size(); ++i) d.depth.data[i] = static_cast<float>(g.data[i] / 100.0);
  return d;
}

}  // namespace pandepth::io

#endif  // PANDEPTH_PANOPTIC_IO_HPP_
