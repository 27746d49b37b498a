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

#ifndef PANDEPTH_FUSION_HPP_
#define PANDEPTH_FUSION_HPP_

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "pandepth/types.hpp"

namespace pandepth {

struct FusionConfig {
  double score_thresh = 0.5;
  double overlap_thresh = 0.5;
  // Minimum stuff area in pixels at `reference_pixels`; scaled linearly
  // with the frame area.
  double min_stuff_area = 64;
  double reference_pixels = 200000;
};

inline int64_t scaled_min_stuff_area(const FusionConfig& cfg, int64_t h, int64_t w) {
  return std::llround(cfg.min_stuff_area * static_cast<double>(h * w) / cfg.reference_pixels);
}

// Argmax over non-void channels; ties go to the lower class id.
inline int32_t semantic_argmax(const SemanticLogits& s, int64_t y, int64_t x) {
  int32_t best = 1;
  for (int c = 2; c < s.nc; ++c)
    if (s.at(c, y, x) > s.at(best, y, x)) best = c;
  return best;
}

inline LabelMap semantic_argmax(const SemanticLogits& s) {
  LabelMap m(s.h, s.w);
  for (int64_t y = 0; y < s.h; ++y)
    for (int64_t x = 0; x < s.w; ++x) m(y, x) = semantic_argmax(s, y, x);
  return m;
}

// Mask logit resampled onto the frame. Covers the pixels whose centres lie
// in [x1, x2) x [y1, y2); `logit` is NaN elsewhere.
struct PastedMask {
  int64_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // pixel rectangle, exclusive max
  std::vector<float> logit;               // (y1 - y0) x (x1 - x0)
};

inline PastedMask paste_mask(const InstancePrediction& p, int64_t h, int64_t w) {
  PastedMask m;
  const Box& b = p.box;
  m.x0 = std::clamp<int64_t>(static_cast<int64_t>(std::ceil(b.x1 - 0.5)), 0, w);
  m.y0 = std::clamp<int64_t>(static_cast<int64_t>(std::ceil(b.y1 - 0.5)), 0, h);
  m.x1 = std::clamp<int64_t>(static_cast<int64_t>(std::ceil(b.x2 - 0.5)), m.x0, w);
  m.y1 = std::clamp<int64_t>(static_cast<int64_t>(std::ceil(b.y2 - 0.5)), m.y0, h);
  const int64_t bw = m.x1 - m.x0;
  m.logit.assign(static_cast<size_t>(bw * (m.y1 - m.y0)), 0.f);
  const double sx = kMaskSize / std::max(b.width(), 1e-9), sy = kMaskSize / std::max(b.height(), 1e-9);
  auto tap = [](double u, int& i0, int& i1, double& t) {
    u = std::clamp(u, 0.0, static_cast<double>(kMaskSize - 1));
    i0 = static_cast<int>(std::floor(u));
    i1 = std::min(i0 + 1, kMaskSize - 1);
    t = u - i0;
  };
  for (int64_t y = m.y0; y < m.y1; ++y) {
    int r0, r1;
    double ty;
    tap((static_cast<double>(y) + 0.5 - b.y1) * sy - 0.5, r0, r1, ty);
    for (int64_t x = m.x0; x < m.x1; ++x) {
      int c0, c1;
      double tx;
      tap((static_cast<double>(x) + 0.5 - b.x1) * sx - 0.5, c0, c1, tx);
      const auto& L = p.mask_logits;
      const double top = (1 - tx) * L[r0 * kMaskSize + c0] + tx * L[r0 * kMaskSize + c1];
      const double bot = (1 - tx) * L[r1 * kMaskSize + c0] + tx * L[r1 * kMaskSize + c1];
      m.logit[(y - m.y0) * bw + (x - m.x0)] = static_cast<float>((1 - ty) * top + ty * bot);
    }
  }
  return m;
}

namespace detail {
inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }
}  // namespace detail

// Parameter-free combination of semantic logits and instance predictions.
inline PanopticMap panoptic_fuse(const SemanticLogits& sem, const std::vector<InstancePrediction>& instances,
                                 const LabelSchema& schema, const FusionConfig& cfg = {}) {
  PANDEPTH_CHECK_ARG(sem.nc == schema.num_channels(), "fusion: logits have " + std::to_string(sem.nc) +
                                                          " channels, schema expects " +
                                                          std::to_string(schema.num_channels()));
  const int64_t h = sem.h, w = sem.w;
  PanopticMap out(h, w);
  const LabelMap arg = semantic_argmax(sem);

  std::vector<size_t> order;
  for (size_t i = 0; i < instances.size(); ++i)
    if (instances[i].score >= cfg.score_thresh && schema.is_thing(instances[i].class_id)) order.push_back(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return instances[a].score > instances[b].score; });

  // -1 = unclaimed; otherwise index into `order`.
  std::vector<int> owner(static_cast<size_t>(h * w), -1);
  std::vector<PastedMask> pasted(order.size());
  for (size_t r = 0; r < order.size(); ++r) {
    const auto& inst = instances[order[r]];
    pasted[r] = paste_mask(inst, h, w);
    const PastedMask& m = pasted[r];
    const int64_t bw = m.x1 - m.x0;
    int64_t area = 0, free = 0;
    for (int64_t y = m.y0; y < m.y1; ++y)
      for (int64_t x = m.x0; x < m.x1; ++x)
        if (m.logit[(y - m.y0) * bw + (x - m.x0)] >= 0.f) {
          ++area;
          free += owner[y * w + x] < 0;
        }
    if (area == 0 || static_cast<double>(free) / static_cast<double>(area) < cfg.overlap_thresh) continue;
    const int32_t c = inst.class_id;
    for (int64_t y = m.y0; y < m.y1; ++y)
      for (int64_t x = m.x0; x < m.x1; ++x) {
        const double mla = m.logit[(y - m.y0) * bw + (x - m.x0)];
        if (mla < 0 || owner[y * w + x] >= 0) continue;
        const int32_t alt = arg(y, x);
        if (alt != c) {
          const double keep = detail::sigmoid(mla) + detail::sigmoid(sem.at(c, y, x));
          const double yield = detail::sigmoid(-mla) + detail::sigmoid(sem.at(alt, y, x));
          if (keep < yield) continue;
        }
        owner[y * w + x] = static_cast<int>(r);
      }
  }

  // Re-index surviving instances 1..n in score order.
  std::vector<int32_t> new_id(order.size(), 0);
  for (int v : owner)
    if (v >= 0) new_id[v] = 1;
  int32_t next = 0;
  for (auto& id : new_id)
    if (id) id = ++next;
  if (next >= kPanopticDivisor)
    throw CapacityError("fusion: " + std::to_string(next) + " instances exceed the panoptic id capacity");

  std::vector<int64_t> stuff_area(static_cast<size_t>(sem.nc), 0);
  for (int64_t i = 0; i < h * w; ++i) {
    if (owner[i] >= 0) {
      out.class_map.data[i] = instances[order[owner[i]]].class_id;
      out.instance_map.data[i] = new_id[owner[i]];
    } else {
      const int32_t c = arg.data[i];
      out.class_map.data[i] = schema.is_stuff(c) ? c : kVoidId;
      if (schema.is_stuff(c)) ++stuff_area[c];
    }
  }
  const int64_t min_area = scaled_min_stuff_area(cfg, h, w);
  for (int64_t i = 0; i < h * w; ++i) {
    const int32_t c = out.class_map.data[i];
    if (out.instance_map.data[i] == 0 && c != kVoidId && stuff_area[c] < min_area) out.class_map.data[i] = kVoidId;
  }
  return out;
}

}  // namespace pandepth

#endif  // PANDEPTH_FUSION_HPP_
