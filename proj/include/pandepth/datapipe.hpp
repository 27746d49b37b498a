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

#ifndef PANDEPTH_DATAPIPE_HPP_
#define PANDEPTH_DATAPIPE_HPP_

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "pandepth/image_io.hpp"
#include "pandepth/log.hpp"
#include "pandepth/rng.hpp"
#include "pandepth/types.hpp"

namespace pandepth {

namespace fs = std::filesystem;

// ------------------------------------------------------------------ config

struct SplitConfig {
  std::vector<std::string> train = {"Scene01", "Scene06", "Scene20"};
  std::vector<std::string> val = {"Scene18"};
  std::vector<std::string> test = {"Scene02"};
  std::vector<std::string> variations = {"clone", "fog", "morning", "overcast", "rain", "sunset"};
  std::vector<int> cameras = {0};
};

struct DataConfig {
  int64_t height = 200;
  int64_t width = 1000;
  double input_fraction = 0.05;
  double gt_fraction = 0.20;
  uint64_t seed = 0;
  double depth_max = kDefaultDepthMax;
};

// ------------------------------------------------------------------ sample

struct Sample {
  ImageFrame frame;
  SparseDepthMap input_depth;
  SparseDepthMap gt_depth;
  LabelMap semantic_gt;
  LabelMap instance_gt;
  PanopticMap panoptic_gt;
  CameraIntrinsics intrinsics;
  std::string scene;
  std::string variation;
  int camera = 0;
  int frame_index = 0;

  // Stable identity used for seeding and tie-breaking.
  uint64_t key() const {
    return fnv1a64(scene + "/" + variation + "/" + std::to_string(camera) + "/" + std::to_string(frame_index));
  }
};

// ------------------------------------------------------------------ panoptic ground truth

// Builds the panoptic map: stuff keeps its class with instance 0, thing
// pixels get per-frame dense instance ids (ascending by source id), and
// inconsistent pixels (thing without instance, stuff with instance, unknown
// class) become void.
inline PanopticMap synthesize_panoptic_gt(const LabelMap& semantic, const LabelMap& instance,
                                          const LabelSchema& schema) {
  PANDEPTH_CHECK_ARG(semantic.h == instance.h && semantic.w == instance.w,
                     "panoptic gt: semantic and instance maps differ in size");
  PanopticMap out(semantic.h, semantic.w);
  std::map<std::pair<int32_t, int32_t>, int32_t> ids;  // (source id, class) -> dense id
  for (int64_t i = 0; i < semantic.size(); ++i) {
    const int32_t c = semantic.data[i], s = instance.data[i];
    if (schema.is_thing(c) && s > 0) ids.emplace(std::make_pair(s, c), 0);
  }
  int32_t next = 0;
  for (auto& [_, id] : ids) id = ++next;
  if (next >= kPanopticDivisor)
    throw CapacityError("panoptic gt: " + std::to_string(next) + " instances exceed the id capacity");
  for (int64_t i = 0; i < semantic.size(); ++i) {
    const int32_t c = semantic.data[i], s = instance.data[i];
    if (schema.is_stuff(c) && s == 0) {
      out.class_map.data[i] = c;
    } else if (schema.is_thing(c) && s > 0) {
      out.class_map.data[i] = c;
      out.instance_map.data[i] = ids.at({s, c});
    }
  }
  return out;
}

// ------------------------------------------------------------------ sparsification

namespace detail {
// First `n` entries of a uniform random permutation of `pool`.
inline std::vector<int64_t> sample_without_replacement(std::vector<int64_t> pool, size_t n, uint64_t seed) {
  Rng rng(seed);
  for (size_t i = 0; i < n; ++i) {
    const size_t j = i + static_cast<size_t>(rng.index(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(n);
  std::sort(pool.begin(), pool.end());
  return pool;
}

inline void check_fraction(double f) {
  if (!(f > 0.0 && f <= 1.0)) throw ArgumentError("sparsify: fraction must be in (0, 1], got " + std::to_string(f));
}
}  // namespace detail

// Keeps exactly round(fraction * H * W) uniformly chosen pixels.
inline SparseDepthMap sparsify(const DenseDepthMap& dense, double fraction, uint64_t seed) {
  detail::check_fraction(fraction);
  const int64_t n = dense.h() * dense.w();
  std::vector<int64_t> pool(static_cast<size_t>(n));
  std::iota(pool.begin(), pool.end(), 0);
  const auto keep = detail::sample_without_replacement(
      std::move(pool), static_cast<size_t>(std::llround(fraction * static_cast<double>(n))), seed);
  SparseDepthMap out(dense.h(), dense.w());
  for (int64_t i : keep) out.set(i, dense.depth.data[i]);
  return out;
}

// Same contract over a map with holes: samples among valid pixels only,
// capped at the number of valid pixels.
inline SparseDepthMap sparsify(const SparseDepthMap& src, double fraction, uint64_t seed) {
  detail::check_fraction(fraction);
  std::vector<int64_t> pool;
  for (int64_t i = 0; i < src.h() * src.w(); ++i)
    if (src.valid.data[i]) pool.push_back(i);
  const size_t want = static_cast<size_t>(std::llround(fraction * static_cast<double>(src.h() * src.w())));
  const size_t n = std::min(want, pool.size());
  const auto keep = detail::sample_without_replacement(std::move(pool), n, seed);
  SparseDepthMap out(src.h(), src.w());
  for (int64_t i : keep) out.set(i, src.depth.data[i]);
  return out;
}

// ------------------------------------------------------------------ resizing

inline int64_t nearest_source(int64_t dst, int64_t in, int64_t out) {
  const auto s = static_cast<int64_t>(std::floor((static_cast<double>(dst) + 0.5) * static_cast<double>(in) /
                                                 static_cast<double>(out)));
  return std::clamp<int64_t>(s, 0, in - 1);
}

template <typename V>
Grid<V> resize_nearest(const Grid<V>& g, int64_t h, int64_t w) {
  if (g.h == h && g.w == w) return g;
  Grid<V> out(h, w);
  for (int64_t y = 0; y < h; ++y) {
    const int64_t sy = nearest_source(y, g.h, h);
    for (int64_t x = 0; x < w; ++x) out(y, x) = g(sy, nearest_source(x, g.w, w));
  }
  return out;
}

// Half-pixel-centre bilinear resampling.
inline ImageFrame resize_bilinear(const ImageFrame& f, int64_t h, int64_t w) {
  if (f.h == h && f.w == w) return f;
  ImageFrame out(h, w);
  auto taps = [](int64_t dst, int64_t in, int64_t outn, int64_t& i0, int64_t& i1, float& t) {
    double s = (static_cast<double>(dst) + 0.5) * static_cast<double>(in) / static_cast<double>(outn) - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    i0 = static_cast<int64_t>(std::floor(s));
    i1 = std::min(i0 + 1, in - 1);
    t = static_cast<float>(s - static_cast<double>(i0));
  };
  for (int64_t y = 0; y < h; ++y) {
    int64_t y0, y1;
    float ty;
    taps(y, f.h, h, y0, y1, ty);
    for (int64_t x = 0; x < w; ++x) {
      int64_t x0, x1;
      float tx;
      taps(x, f.w, w, x0, x1, tx);
      for (int c = 0; c < 3; ++c) {
        const float top = (1 - tx) * f.at(c, y0, x0) + tx * f.at(c, y0, x1);
        const float bot = (1 - tx) * f.at(c, y1, x0) + tx * f.at(c, y1, x1);
        out.at(c, y, x) = (1 - ty) * top + ty * bot;
      }
    }
  }
  return out;
}

inline SparseDepthMap resize_nearest(const SparseDepthMap& d, int64_t h, int64_t w) {
  SparseDepthMap out;
  out.depth = resize_nearest(d.depth, h, w);
  out.valid = resize_nearest(d.valid, h, w);
  return out;
}

// Pinhole intrinsics after resampling from (h, w) to (nh, nw) with
// half-pixel-centre alignment.
inline CameraIntrinsics scale_intrinsics(const CameraIntrinsics& k, int64_t h, int64_t w, int64_t nh, int64_t nw) {
  const double sx = static_cast<double>(nw) / static_cast<double>(w);
  const double sy = static_cast<double>(nh) / static_cast<double>(h);
  return {k.fx * sx, k.fy * sy, (k.cx + 0.5) * sx - 0.5, (k.cy + 0.5) * sy - 0.5};
}

// Dense instance ids (ascending by current id) after resampling may have
// dropped some instances.
inline void reindex_instances(PanopticMap& p) {
  std::map<std::pair<int32_t, int32_t>, int32_t> ids;
  for (int64_t i = 0; i < p.h() * p.w(); ++i)
    if (p.instance_map.data[i] > 0) ids.emplace(std::make_pair(p.instance_map.data[i], p.class_map.data[i]), 0);
  int32_t next = 0;
  for (auto& [_, id] : ids) id = ++next;
  for (int64_t i = 0; i < p.h() * p.w(); ++i)
    if (p.instance_map.data[i] > 0) p.instance_map.data[i] = ids.at({p.instance_map.data[i], p.class_map.data[i]});
}

inline Sample resize_sample(const Sample& s, int64_t h, int64_t w) {
  PANDEPTH_CHECK_ARG(h >= 1 && w >= 1, "resize: target size must be positive");
  if (s.frame.h == h && s.frame.w == w) return s;
  if (h > 4 * s.frame.h || w > 4 * s.frame.w)
    log::warn("resize: upscaling " + std::to_string(s.frame.h) + "x" + std::to_string(s.frame.w) + " to " +
              std::to_string(h) + "x" + std::to_string(w) + " exceeds 4x");
  Sample out;
  out.frame = resize_bilinear(s.frame, h, w);
  out.input_depth = resize_nearest(s.input_depth, h, w);
  out.gt_depth = resize_nearest(s.gt_depth, h, w);
  out.semantic_gt = resize_nearest(s.semantic_gt, h, w);
  out.instance_gt = resize_nearest(s.instance_gt, h, w);
  out.panoptic_gt.class_map = resize_nearest(s.panoptic_gt.class_map, h, w);
  out.panoptic_gt.instance_map = resize_nearest(s.panoptic_gt.instance_map, h, w);
  reindex_instances(out.panoptic_gt);
  out.intrinsics = scale_intrinsics(s.intrinsics, s.frame.h, s.frame.w, h, w);
  out.scene = s.scene;
  out.variation = s.variation;
  out.camera = s.camera;
  out.frame_index = s.frame_index;
  return out;
}

// ------------------------------------------------------------------ Virtual KITTI 2

namespace vkitti {

inline const std::map<std::string, io::Rgb8>& default_colors() {
  static const std::map<std::string, io::Rgb8> c = {
      {"Terrain", {210, 0, 200}},     {"Sky", {90, 200, 255}},        {"Tree", {0, 199, 0}},
      {"Vegetation", {90, 240, 0}},   {"Building", {140, 140, 140}},  {"Road", {100, 60, 100}},
      {"GuardRail", {250, 100, 255}}, {"TrafficSign", {255, 255, 0}}, {"TrafficLight", {200, 200, 0}},
      {"Pole", {255, 130, 0}},        {"Misc", {80, 80, 80}},         {"Truck", {160, 60, 60}},
      {"Car", {255, 127, 80}},        {"Van", {0, 139, 139}},         {"Undefined", {0, 0, 0}}};
  return c;
}

// Category colours from a colors.txt ("Category r g b" per line), falling
// back to the published defaults.
inline std::map<std::string, io::Rgb8> read_colors(const fs::path& file) {
  auto out = default_colors();
  std::ifstream in(file);
  if (!in) return out;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string name;
    int r, g, b;
    if (ss >> name >> r >> g >> b) out[name] = {static_cast<uint8_t>(r), static_cast<uint8_t>(g), static_cast<uint8_t>(b)};
  }
  return out;
}

inline uint32_t pack(const io::Rgb8& c) { return (uint32_t{c[0]} << 16) | (uint32_t{c[1]} << 8) | c[2]; }

// Colour-coded class image to class ids; unknown colours become void.
inline LabelMap decode_classes(const Grid<io::Rgb8>& img, const std::map<std::string, io::Rgb8>& colors,
                               const LabelSchema& schema) {
  std::map<uint32_t, int32_t> lut;
  for (const auto& c : schema.classes())
    if (auto it = colors.find(c.name); it != colors.end()) lut[pack(it->second)] = c.id;
  LabelMap out(img.h, img.w, kVoidId);
  for (int64_t i = 0; i < img.size(); ++i)
    if (auto it = lut.find(pack(img.data[i])); it != lut.end()) out.data[i] = it->second;
  return out;
}

inline io::Rgb8 color_of(int32_t class_id, const LabelSchema& schema) {
  const auto& c = default_colors();
  if (auto it = c.find(schema.name(class_id)); it != c.end()) return it->second;
  return {0, 0, 0};
}

// Published Virtual KITTI 2 intrinsics, used when intrinsic.txt is absent.
inline CameraIntrinsics default_intrinsics() { return {725.0087, 725.0087, 620.5, 187.0}; }

// intrinsic.txt: header, then "frame camera fx fy cx cy" rows.
inline std::map<std::pair<int, int>, CameraIntrinsics> read_intrinsics(const fs::path& file) {
  std::map<std::pair<int, int>, CameraIntrinsics> out;
  std::ifstream in(file);
  if (!in) return out;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    int f, c;
    CameraIntrinsics k;
    if (ss >> f >> c >> k.fx >> k.fy >> k.cx >> k.cy) out[{f, c}] = k;
  }
  return out;
}

inline std::string frame_name(const std::string& prefix, int frame, const std::string& ext) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%05d.%s", prefix.c_str(), frame, ext.c_str());
  return buf;
}

}  // namespace vkitti

struct SampleDescriptor {
  std::string scene;
  std::string variation;
  int camera = 0;
  int frame = 0;
  fs::path rgb, classes, instances, depth;
  CameraIntrinsics intrinsics;
  fs::path colors;
};

struct DatasetIndex {
  std::vector<SampleDescriptor> train, val, test;
  int64_t skipped = 0;

  const std::vector<SampleDescriptor>& split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw ConfigError("unknown split '" + name + "' (expected train, val or test)");
  }
};

namespace detail {

inline std::vector<SampleDescriptor> index_scene(const fs::path& root, const std::string& scene,
                                                 const SplitConfig& cfg, int64_t& skipped) {
  std::vector<SampleDescriptor> out;
  const fs::path sdir = root / scene;
  bool any_variation = false;
  for (const auto& var : cfg.variations) {
    const fs::path vdir = sdir / var;
    if (!fs::is_directory(vdir)) continue;
    const fs::path frames = vdir / "frames";
    if (!fs::is_directory(frames / "rgb"))
      throw IngestError("'" + vdir.string() + "' has no frames/rgb directory");
    any_variation = true;
    fs::path kfile = vdir / "intrinsic.txt";
    if (!fs::exists(kfile)) kfile = sdir / "intrinsic.txt";
    const auto intr = vkitti::read_intrinsics(kfile);
    if (intr.empty()) log::warn("no intrinsics for " + vdir.string() + ", using Virtual KITTI 2 defaults");
    fs::path colors = vdir / "colors.txt";
    if (!fs::exists(colors)) colors = sdir / "colors.txt";
    static const std::regex pattern(R"(rgb_(\d+)\.jpg)");
    for (int cam : cfg.cameras) {
      const std::string cname = "Camera_" + std::to_string(cam);
      const fs::path rgb_dir = frames / "rgb" / cname;
      if (!fs::is_directory(rgb_dir)) continue;
      std::vector<int> ids;
      for (const auto& e : fs::directory_iterator(rgb_dir)) {
        std::smatch m;
        const std::string name = e.path().filename().string();
        if (std::regex_match(name, m, pattern)) ids.push_back(std::stoi(m[1].str()));
      }
      std::sort(ids.begin(), ids.end());
      for (int f : ids) {
        SampleDescriptor d;
        d.scene = scene;
        d.variation = var;
        d.camera = cam;
        d.frame = f;
        d.rgb = rgb_dir / vkitti::frame_name("rgb", f, "jpg");
        d.classes = frames / "classSegmentation" / cname / vkitti::frame_name("classgt", f, "png");
        d.instances = frames / "instanceSegmentation" / cname / vkitti::frame_name("instancegt", f, "png");
        d.depth = frames / "depth" / cname / vkitti::frame_name("depth", f, "png");
        d.colors = colors;
        std::string missing;
        for (const auto* p : {&d.classes, &d.instances, &d.depth})
          if (!fs::exists(*p)) missing += " " + p->filename().string();
        if (!missing.empty()) {
          log::warn("skipping " + d.rgb.string() + ": missing" + missing);
          ++skipped;
          continue;
        }
        auto it = intr.find({f, cam});
        d.intrinsics = it != intr.end() ? it->second : vkitti::default_intrinsics();
        out.push_back(std::move(d));
      }
    }
  }
  if (!any_variation)
    throw IngestError("scene '" + sdir.string() + "' contains none of the configured variations");
  return out;
}

}  // namespace detail

// Scans a Virtual KITTI 2 tree. Configured scenes that are absent contribute
// no frames; a missing root, a root holding none of the configured scenes,
// or a scene without the expected layout is an ingestion error.
inline DatasetIndex build_index(const fs::path& root, const SplitConfig& cfg = {}) {
  if (!fs::is_directory(root)) throw IngestError("dataset root '" + root.string() + "' is not a directory");
  DatasetIndex idx;
  bool found = false;
  auto fill = [&](const std::vector<std::string>& scenes, std::vector<SampleDescriptor>& dst) {
    for (const auto& s : scenes) {
      if (!fs::is_directory(root / s)) continue;
      found = true;
      auto v = detail::index_scene(root, s, cfg, idx.skipped);
      dst.insert(dst.end(), std::make_move_iterator(v.begin()), std::make_move_iterator(v.end()));
    }
  };
  fill(cfg.train, idx.train);
  fill(cfg.val, idx.val);
  fill(cfg.test, idx.test);
  if (!found) throw IngestError("dataset root '" + root.string() + "' contains none of the configured scenes");
  return idx;
}

// Depth PNG in centimetres (65535 = no measurement) to metres.
inline SparseDepthMap decode_depth_cm(const Grid<uint16_t>& cm, double depth_max) {
  SparseDepthMap d(cm.h, cm.w);
  for (int64_t i = 0; i < cm.size(); ++i) {
    const uint16_t v = cm.data[i];
    if (v == 0 || v == 65535) continue;
    const float m = static_cast<float>(v / 100.0);
    if (m <= depth_max) d.set(i, m);
  }
  return d;
}

// Sparsifies a full-resolution depth map into the input and ground-truth
// maps with seeds derived from the sample identity.
inline void sparsify_sample(Sample& s, const SparseDepthMap& full, const DataConfig& cfg) {
  s.input_depth = sparsify(full, cfg.input_fraction, derive_seed(cfg.seed, fnv1a64("input"), s.key()));
  s.gt_depth = sparsify(full, cfg.gt_fraction, derive_seed(cfg.seed, fnv1a64("gt"), s.key()));
}

// Loads, resizes and sparsifies one frame.
inline Sample load_sample(const SampleDescriptor& d, const LabelSchema& schema, const DataConfig& cfg) {
  Sample s;
  s.scene = d.scene;
  s.variation = d.variation;
  s.camera = d.camera;
  s.frame_index = d.frame;
  s.frame = io::read_rgb(d.rgb.string());
  s.semantic_gt = vkitti::decode_classes(io::read_rgb8(d.classes.string()), vkitti::read_colors(d.colors), schema);
  s.instance_gt = io::read_label_png(d.instances.string());
  SparseDepthMap full = decode_depth_cm(io::read_png16(d.depth.string()), cfg.depth_max);
  const int64_t h = s.frame.h, w = s.frame.w;
  if (s.semantic_gt.h != h || s.semantic_gt.w != w || s.instance_gt.h != h || s.instance_gt.w != w ||
      full.h() != h || full.w() != w)
    throw IngestError("modalities of " + d.rgb.string() + " differ in size");
  s.intrinsics = d.intrinsics;
  s.panoptic_gt = synthesize_panoptic_gt(s.semantic_gt, s.instance_gt, schema);
  s.input_depth = full;
  s.gt_depth = full;
  s = resize_sample(s, cfg.height, cfg.width);
  sparsify_sample(s, s.gt_depth, cfg);
  return s;
}

// ------------------------------------------------------------------ synthetic scenes

struct SyntheticConfig {
  int max_objects = 3;
  bool constant_depth = false;  // every valid pixel at `constant_depth_m`
  double constant_depth_m = 10.0;
};

// Procedural street scene: sky, buildings, vegetation, road and a few
// vehicles, with depth from a ground-plane camera model. Deterministic in
// (seed, index).
inline Sample synthetic_sample(uint64_t seed, int64_t index, const LabelSchema& schema, const DataConfig& cfg,
                               const SyntheticConfig& sc = {}) {
  const int64_t h = cfg.height, w = cfg.width;
  Rng rng(derive_seed(seed, fnv1a64("synthetic"), static_cast<uint64_t>(index)));
  Sample s;
  s.scene = "synthetic";
  s.variation = "seed" + std::to_string(seed);
  s.frame_index = static_cast<int>(index);
  const double fx = 725.0087 * static_cast<double>(w) / 1242.0;
  s.intrinsics = {fx, fx, (static_cast<double>(w) - 1) / 2, 0.45 * static_cast<double>(h)};
  const int64_t horizon = static_cast<int64_t>(std::lround(s.intrinsics.cy));
  const int64_t skyline = static_cast<int64_t>(std::lround(horizon * rng.uniform(0.35, 0.6)));
  s.semantic_gt = LabelMap(h, w, kVoidId);
  s.instance_gt = LabelMap(h, w, 0);
  SparseDepthMap full(h, w);
  const double cam_height = 1.6;
  auto thing_id = [&](const char* name) {
    for (const auto& c : schema.classes())
      if (c.name == name) return c.id;
    return schema.thing_classes().front();
  };
  auto stuff_id = [&](const char* name, int32_t fallback) {
    for (const auto& c : schema.classes())
      if (c.name == name) return c.id;
    return fallback;
  };
  const int32_t sky = stuff_id("Sky", 1), building = stuff_id("Building", 1), road = stuff_id("Road", 1),
                tree = stuff_id("Tree", 1);
  const int64_t tree_split = static_cast<int64_t>(w * rng.uniform(0.2, 0.4));
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      int32_t c;
      double d = 0;
      if (y < skyline) {
        c = sky;
      } else if (y < horizon) {
        c = x < tree_split ? tree : building;
        d = x < tree_split ? 25.0 : 40.0;
      } else {
        c = road;
        d = std::min(60.0, s.intrinsics.fy * cam_height / (static_cast<double>(y - horizon) + 0.5));
      }
      s.semantic_gt(y, x) = c;
      if (d > 0) full.set(y * w + x, static_cast<float>(sc.constant_depth ? sc.constant_depth_m : d));
    }
  const int nobj = 1 + static_cast<int>(rng.index(static_cast<uint64_t>(std::max(1, sc.max_objects))));
  const std::vector<int32_t> things = {thing_id("Car"), thing_id("Van"), thing_id("Truck")};
  for (int o = 0; o < nobj; ++o) {
    const int32_t c = things[rng.index(things.size())];
    const double dist = rng.uniform(8.0, 30.0);
    const double ow = (c == things[0] ? 1.8 : 2.4) * fx / dist, oh = (c == things[0] ? 1.5 : 2.4) * fx / dist;
    const double base = horizon + s.intrinsics.fy * cam_height / dist;
    const double cx = rng.uniform(0.1, 0.9) * static_cast<double>(w);
    const int64_t x0 = std::clamp<int64_t>(std::lround(cx - ow / 2), 0, w), x1 = std::clamp<int64_t>(std::lround(cx + ow / 2), 0, w);
    const int64_t y0 = std::clamp<int64_t>(std::lround(base - oh), 0, h), y1 = std::clamp<int64_t>(std::lround(base), 0, h);
    for (int64_t y = y0; y < y1; ++y)
      for (int64_t x = x0; x < x1; ++x) {
        // Nearer objects occlude farther ones.
        const int64_t i = y * w + x;
        if (s.instance_gt.data[i] > 0 && full.depth.data[i] < dist) continue;
        s.semantic_gt.data[i] = c;
        s.instance_gt.data[i] = o + 1;
        full.set(i, static_cast<float>(sc.constant_depth ? sc.constant_depth_m : dist));
      }
  }
  s.frame = ImageFrame(h, w);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const auto col = vkitti::color_of(s.semantic_gt(y, x), schema);
      const double shade = 0.85 + 0.15 * std::sin(0.37 * static_cast<double>(x) + 0.11 * static_cast<double>(y));
      for (int c = 0; c < 3; ++c)
        s.frame.at(c, y, x) = static_cast<float>(std::clamp(col[c] / 255.0 * shade, 0.0, 1.0));
    }
  s.panoptic_gt = synthesize_panoptic_gt(s.semantic_gt, s.instance_gt, schema);
  sparsify_sample(s, full, cfg);
  return s;
}

// ------------------------------------------------------------------ datasets

class Dataset {
 public:
  virtual ~Dataset() = default;
  virtual size_t size() const = 0;
  virtual Sample load(size_t i) const = 0;
};

class VkittiDataset : public Dataset {
 public:
  VkittiDataset(std::vector<SampleDescriptor> items, LabelSchema schema, DataConfig cfg)
      : items_(std::move(items)), schema_(std::move(schema)), cfg_(cfg) {}
  size_t size() const override { return items_.size(); }
  Sample load(size_t i) const override { return load_sample(items_.at(i), schema_, cfg_); }

 private:
  std::vector<SampleDescriptor> items_;
  LabelSchema schema_;
  DataConfig cfg_;
};

class SyntheticDataset : public Dataset {
 public:
  SyntheticDataset(size_t count, uint64_t seed, LabelSchema schema, DataConfig cfg, SyntheticConfig sc = {})
      : count_(count), seed_(seed), schema_(std::move(schema)), cfg_(cfg), sc_(sc) {}
  size_t size() const override { return count_; }
  Sample load(size_t i) const override {
    PANDEPTH_CHECK_ARG(i < count_, "synthetic dataset: index out of range");
    return synthetic_sample(seed_, static_cast<int64_t>(i), schema_, cfg_, sc_);
  }

 private:
  size_t count_;
  uint64_t seed_;
  LabelSchema schema_;
  DataConfig cfg_;
  SyntheticConfig sc_;
};

}  // namespace pandepth

#endif  // PANDEPTH_DATAPIPE_HPP_
