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

#ifndef PANDEPTH_TYPES_HPP_
#define PANDEPTH_TYPES_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "pandepth/errors.hpp"

namespace pandepth {

inline constexpr int32_t kVoidId = 0;
inline constexpr int32_t kPanopticDivisor = 1000;
inline constexpr int kMaskSize = 28;
inline constexpr double kDefaultDepthMax = 655.35;

// Row-major H x W plane.
template <typename V>
struct Grid {
  int64_t h = 0;
  int64_t w = 0;
  std::vector<V> data;

  Grid() = default;
  Grid(int64_t hh, int64_t ww, V fill = V{}) : h(hh), w(ww), data(static_cast<size_t>(hh * ww), fill) {}

  V& operator()(int64_t y, int64_t x) { return data[static_cast<size_t>(y * w + x)]; }
  const V& operator()(int64_t y, int64_t x) const { return data[static_cast<size_t>(y * w + x)]; }
  int64_t size() const { return h * w; }
  bool operator==(const Grid&) const = default;
};

using LabelMap = Grid<int32_t>;

enum class ClassKind { kThing, kStuff };

struct ClassInfo {
  int32_t id;
  std::string name;
  ClassKind kind;
};

// Ordered class list; id 0 is void and never listed. Logit channel index
// equals class id, so the channel count is max id + 1.
class LabelSchema {
 public:
  explicit LabelSchema(std::vector<ClassInfo> classes) : classes_(std::move(classes)) {
    std::set<int32_t> ids;
    bool thing = false, stuff = false;
    for (const auto& c : classes_) {
      if (c.id < 1) throw ArgumentError("label schema: class ids must be >= 1 (0 is void)");
      if (!ids.insert(c.id).second)
        throw ArgumentError("label schema: duplicate class id " + std::to_string(c.id));
      thing = thing || c.kind == ClassKind::kThing;
      stuff = stuff || c.kind == ClassKind::kStuff;
      max_id_ = std::max(max_id_, c.id);
    }
    if (!thing || !stuff)
      throw ArgumentError("label schema needs at least one thing and one stuff class");
    kind_.assign(static_cast<size_t>(max_id_ + 1), -1);
    thing_index_.assign(static_cast<size_t>(max_id_ + 1), 0);
    for (const auto& c : classes_) {
      kind_[c.id] = c.kind == ClassKind::kThing ? 1 : 0;
      if (c.kind == ClassKind::kThing) {
        things_.push_back(c.id);
        thing_index_[c.id] = static_cast<int>(things_.size());
      }
    }
  }

  // Virtual KITTI 2 categories; "Undefined" maps to void.
  static LabelSchema vkitti2() {
    return LabelSchema({{1, "Terrain", ClassKind::kStuff},
                        {2, "Sky", ClassKind::kStuff},
                        {3, "Tree", ClassKind::kStuff},
                        {4, "Vegetation", ClassKind::kStuff},
                        {5, "Building", ClassKind::kStuff},
                        {6, "Road", ClassKind::kStuff},
                        {7, "GuardRail", ClassKind::kStuff},
                        {8, "TrafficSign", ClassKind::kStuff},
                        {9, "TrafficLight", ClassKind::kStuff},
                        {10, "Pole", ClassKind::kStuff},
                        {11, "Misc", ClassKind::kStuff},
                        {12, "Truck", ClassKind::kThing},
                        {13, "Car", ClassKind::kThing},
                        {14, "Van", ClassKind::kThing}});
  }

  const std::vector<ClassInfo>& classes() const { return classes_; }
  int num_channels() const { return max_id_ + 1; }
  int32_t max_id() const { return max_id_; }
  bool contains(int32_t id) const { return id > 0 && id <= max_id_ && kind_[id] >= 0; }
  bool is_thing(int32_t id) const { return contains(id) && kind_[id] == 1; }
  bool is_stuff(int32_t id) const { return contains(id) && kind_[id] == 0; }
  const std::vector<int32_t>& thing_classes() const { return things_; }
  int num_things() const { return static_cast<int>(things_.size()); }
  // 1-based position among thing classes (0 = background).
  int thing_index(int32_t id) const { return is_thing(id) ? thing_index_[id] : 0; }
  int32_t thing_class(int index) const { return things_.at(static_cast<size_t>(index - 1)); }
  std::string name(int32_t id) const {
    for (const auto& c : classes_)
      if (c.id == id) return c.name;
    return id == kVoidId ? "void" : "class" + std::to_string(id);
  }

 private:
  std::vector<ClassInfo> classes_;
  int32_t max_id_ = 0;
  std::vector<int> kind_;
  std::vector<int> thing_index_;
  std::vector<int32_t> things_;
};

// RGB image, planar 3 x H x W, values in [0, 1].
struct ImageFrame {
  int64_t h = 0;
  int64_t w = 0;
  std::vector<float> pixels;

  ImageFrame() = default;
  ImageFrame(int64_t hh, int64_t ww, float fill = 0.f)
      : h(hh), w(ww), pixels(static_cast<size_t>(3 * hh * ww), fill) {
    if (hh < 1 || ww < 1) throw ArgumentError("image frame must be non-empty");
  }
  float& at(int c, int64_t y, int64_t x) { return pixels[static_cast<size_t>((c * h + y) * w + x)]; }
  float at(int c, int64_t y, int64_t x) const { return pixels[static_cast<size_t>((c * h + y) * w + x)]; }
  bool operator==(const ImageFrame&) const = default;
};

inline void validate(const ImageFrame& f) {
  if (static_cast<int64_t>(f.pixels.size()) != 3 * f.h * f.w) throw ArgumentError("image frame: size mismatch");
  for (float v : f.pixels)
    if (!(v >= 0.f && v <= 1.f)) throw ArgumentError("image frame: pixel outside [0, 1]");
}

// Depth in metres; 0 marks a missing measurement.
struct SparseDepthMap {
  Grid<float> depth;
  Grid<uint8_t> valid;

  SparseDepthMap() = default;
  SparseDepthMap(int64_t h, int64_t w) : depth(h, w, 0.f), valid(h, w, 0) {}
  int64_t h() const { return depth.h; }
  int64_t w() const { return depth.w; }
  void set(int64_t i, float d) {
    depth.data[i] = d;
    valid.data[i] = d > 0.f ? 1 : 0;
  }
  int64_t count_valid() const {
    return std::count(valid.data.begin(), valid.data.end(), uint8_t{1});
  }
  bool operator==(const SparseDepthMap&) const = default;
};

inline void validate(const SparseDepthMap& s, double depth_max = kDefaultDepthMax) {
  if (s.depth.h != s.valid.h || s.depth.w != s.valid.w) throw ArgumentError("sparse depth: shape mismatch");
  for (int64_t i = 0; i < s.depth.size(); ++i) {
    const float d = s.depth.data[i];
    const bool v = s.valid.data[i] != 0;
    if (v != (d > 0.f)) throw ArgumentError("sparse depth: validity must equal depth > 0");
    if (v && (!std::isfinite(d) || d > depth_max)) throw ArgumentError("sparse depth: value out of range");
  }
}

struct DenseDepthMap {
  Grid<float> depth;

  DenseDepthMap() = default;
  DenseDepthMap(int64_t h, int64_t w, float fill = 0.f) : depth(h, w, fill) {}
  int64_t h() const { return depth.h; }
  int64_t w() const { return depth.w; }
};

inline void validate(const DenseDepthMap& d) {
  for (float v : d.depth.data)
    if (!std::isfinite(v) || v <= 0.f) throw ArgumentError("dense depth: entries must be finite and > 0");
}

struct CameraIntrinsics {
  double fx = 1, fy = 1, cx = 0, cy = 0;
};

inline void validate(const CameraIntrinsics& k) {
  if (!(k.fx > 0 && k.fy > 0)) throw ArgumentError("camera intrinsics: focal lengths must be positive");
}

// nc x H x W logits, channel index = class id.
struct SemanticLogits {
  int nc = 0;
  int64_t h = 0;
  int64_t w = 0;
  std::vector<float> logits;

  float at(int c, int64_t y, int64_t x) const { return logits[static_cast<size_t>((c * h + y) * w + x)]; }
  float& at(int c, int64_t y, int64_t x) { return logits[static_cast<size_t>((c * h + y) * w + x)]; }
};

struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return std::max(0.0, x2 - x1) * std::max(0.0, y2 - y1); }
  bool operator==(const Box&) const = default;
};

struct InstancePrediction {
  Box box;
  int32_t class_id = 0;
  float score = 0.f;
  std::array<float, kMaskSize * kMaskSize> mask_logits{};
};

inline void validate(const InstancePrediction& p, const LabelSchema& schema) {
  if (!(p.box.x1 < p.box.x2 && p.box.y1 < p.box.y2)) throw ArgumentError("instance: degenerate box");
  if (!schema.is_thing(p.class_id)) throw ArgumentError("instance: class is not a thing class");
  if (!(p.score >= 0.f && p.score <= 1.f)) throw ArgumentError("instance: score outside [0, 1]");
}

// Combined panoptic id; instance ids must stay below the divisor.
inline int32_t encode_panoptic_id(int32_t class_id, int32_t instance_id) {
  if (instance_id < 0 || class_id < 0) throw ArgumentError("panoptic id: negative component");
  if (instance_id >= kPanopticDivisor)
    throw CapacityError("panoptic id: instance id " + std::to_string(instance_id) + " exceeds capacity " +
                        std::to_string(kPanopticDivisor - 1));
  return class_id * kPanopticDivisor + instance_id;
}

inline std::pair<int32_t, int32_t> decode_panoptic_id(int32_t id) {
  return {id / kPanopticDivisor, id % kPanopticDivisor};
}

struct Segment {
  int32_t class_id = 0;
  int32_t instance_id = 0;
  int64_t area = 0;
  Box bbox;  // pixel-aligned, exclusive max
};

// Per-pixel (class, instance) labelling; instance 0 for stuff and void.
struct PanopticMap {
  LabelMap class_map;
  LabelMap instance_map;

  PanopticMap() = default;
  PanopticMap(int64_t h, int64_t w) : class_map(h, w, kVoidId), instance_map(h, w, 0) {}
  int64_t h() const { return class_map.h; }
  int64_t w() const { return class_map.w; }
  int32_t id_at(int64_t i) const { return encode_panoptic_id(class_map.data[i], instance_map.data[i]); }
  bool operator==(const PanopticMap&) const = default;

  // Non-void segments keyed by (class, instance), in key order.
  std::map<std::pair<int32_t, int32_t>, Segment> segments() const {
    std::map<std::pair<int32_t, int32_t>, Segment> out;
    for (int64_t y = 0; y < h(); ++y)
      for (int64_t x = 0; x < w(); ++x) {
        const int32_t c = class_map(y, x);
        if (c == kVoidId) continue;
        const int32_t i = instance_map(y, x);
        auto [it, fresh] = out.try_emplace({c, i});
        Segment& s = it->second;
        const double fx = static_cast<double>(x), fy = static_cast<double>(y);
        if (fresh) {
          s.class_id = c;
          s.instance_id = i;
          s.bbox = {fx, fy, fx + 1, fy + 1};
        } else {
          s.bbox = {std::min(s.bbox.x1, fx), std::min(s.bbox.y1, fy), std::max(s.bbox.x2, fx + 1),
                    std::max(s.bbox.y2, fy + 1)};
        }
        ++s.area;
      }
    return out;
  }
};

inline void validate(const PanopticMap& p, const LabelSchema& schema) {
  if (p.class_map.h != p.instance_map.h || p.class_map.w != p.instance_map.w ||
      static_cast<int64_t>(p.class_map.data.size()) != p.h() * p.w() ||
      static_cast<int64_t>(p.instance_map.data.size()) != p.h() * p.w())
    throw ArgumentError("panoptic map: class and instance planes differ in shape");
  for (int64_t i = 0; i < p.h() * p.w(); ++i) {
    const int32_t c = p.class_map.data[i], inst = p.instance_map.data[i];
    if (c != kVoidId && !schema.contains(c))
      throw ArgumentError("panoptic map: unknown class " + std::to_string(c));
    if (inst < 0 || inst >= kPanopticDivisor) throw ArgumentError("panoptic map: instance id out of range");
    if (inst > 0 && !schema.is_thing(c))
      throw ArgumentError("panoptic map: instance id on non-thing class " + std::to_string(c));
  }
}

}  // namespace pandepth

#endif  // PANDEPTH_TYPES_HPP_
