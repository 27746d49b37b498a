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

#ifndef PANDEPTH_BOXES_HPP_
#define PANDEPTH_BOXES_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <vector>

#include "pandepth/rng.hpp"
#include "pandepth/types.hpp"

namespace pandepth::boxes {

inline double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

inline Box clip(const Box& b, double w, double h) {
  return {std::clamp(b.x1, 0.0, w), std::clamp(b.y1, 0.0, h), std::clamp(b.x2, 0.0, w),
          std::clamp(b.y2, 0.0, h)};
}

// Greedy non-maximum suppression. Returns kept indices ordered by
// descending score (ties by index). Suppresses IoU strictly above `thresh`.
inline std::vector<int64_t> nms(const std::vector<Box>& bx, const std::vector<double>& scores, double thresh,
                                size_t max_keep = std::numeric_limits<size_t>::max()) {
  std::vector<int64_t> order(bx.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) { return scores[a] > scores[b]; });
  std::vector<int64_t> keep;
  std::vector<char> dead(bx.size(), 0);
  for (size_t oi = 0; oi < order.size() && keep.size() < max_keep; ++oi) {
    const int64_t i = order[oi];
    if (dead[i]) continue;
    keep.push_back(i);
    for (size_t oj = oi + 1; oj < order.size(); ++oj) {
      const int64_t j = order[oj];
      if (!dead[j] && iou(bx[i], bx[j]) > thresh) dead[j] = 1;
    }
  }
  return keep;
}

// Box regression parameterisation (dx, dy, dw, dh) with per-axis weights.
struct BoxCoder {
  std::array<double, 4> weights{1, 1, 1, 1};
  double clip_log = std::log(1000.0 / 16.0);

  std::array<double, 4> encode(const Box& ref, const Box& gt) const {
    const double rw = ref.width(), rh = ref.height();
    const double rx = ref.x1 + 0.5 * rw, ry = ref.y1 + 0.5 * rh;
    const double gw = gt.width(), gh = gt.height();
    const double gx = gt.x1 + 0.5 * gw, gy = gt.y1 + 0.5 * gh;
    return {weights[0] * (gx - rx) / rw, weights[1] * (gy - ry) / rh, weights[2] * std::log(gw / rw),
            weights[3] * std::log(gh / rh)};
  }

  Box decode(const Box& ref, const double* d) const {
    const double rw = ref.width(), rh = ref.height();
    const double rx = ref.x1 + 0.5 * rw, ry = ref.y1 + 0.5 * rh;
    const double dx = d[0] / weights[0], dy = d[1] / weights[1];
    const double dw = std::min(d[2] / weights[2], clip_log), dh = std::min(d[3] / weights[3], clip_log);
    const double cx = dx * rw + rx, cy = dy * rh + ry;
    const double w = std::exp(dw) * rw, h = std::exp(dh) * rh;
    return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
  }
};

// Anchors for one pyramid level in (y, x, anchor) order, centred on the
// stride grid.
inline std::vector<Box> level_anchors(int64_t fh, int64_t fw, int stride, double size,
                                      const std::vector<double>& ratios) {
  std::vector<Box> out;
  out.reserve(static_cast<size_t>(fh * fw) * ratios.size());
  for (int64_t y = 0; y < fh; ++y)
    for (int64_t x = 0; x < fw; ++x) {
      const double cx = (static_cast<double>(x) + 0.5) * stride, cy = (static_cast<double>(y) + 0.5) * stride;
      for (double r : ratios) {
        // r = h / w, area preserved.
        const double w = size / std::sqrt(r), h = size * std::sqrt(r);
        out.push_back({cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h});
      }
    }
  return out;
}

inline constexpr int kBelowLow = -1;
inline constexpr int kBetween = -2;

// IoU matcher. Returns, for each candidate, the matched gt index, or
// kBelowLow (negative) / kBetween (ignored). With `allow_low_quality`,
// each gt also claims the candidates with its highest IoU.
inline std::vector<int> match(const std::vector<Box>& cands, const std::vector<Box>& gts, double high,
                              double low, bool allow_low_quality) {
  std::vector<int> out(cands.size(), kBelowLow);
  if (gts.empty()) return out;
  std::vector<double> best(cands.size(), -1.0);
  std::vector<double> gt_best(gts.size(), 0.0);
  std::vector<std::vector<double>> m(gts.size(), std::vector<double>(cands.size()));
  for (size_t g = 0; g < gts.size(); ++g)
    for (size_t c = 0; c < cands.size(); ++c) {
      const double v = iou(gts[g], cands[c]);
      m[g][c] = v;
      gt_best[g] = std::max(gt_best[g], v);
      if (v > best[c]) {
        best[c] = v;
        out[c] = static_cast<int>(g);
      }
    }
  std::vector<int> raw = out;
  for (size_t c = 0; c < cands.size(); ++c) {
    if (best[c] < low)
      out[c] = kBelowLow;
    else if (best[c] < high)
      out[c] = kBetween;
  }
  if (allow_low_quality)
    for (size_t g = 0; g < gts.size(); ++g) {
      if (gt_best[g] <= 0) continue;
      for (size_t c = 0; c < cands.size(); ++c)
        if (m[g][c] == gt_best[g]) out[c] = raw[c];
    }
  return out;
}

struct Sampled {
  std::vector<int64_t> positive;
  std::vector<int64_t> negative;
};

// Draws up to `batch` candidates with at most `positive_fraction` positives;
// positives are matches >= 0, negatives kBelowLow.
inline Sampled sample_balanced(const std::vector<int>& matches, size_t batch, double positive_fraction, Rng& rng) {
  std::vector<int64_t> pos, neg;
  for (size_t i = 0; i < matches.size(); ++i) {
    if (matches[i] >= 0)
      pos.push_back(static_cast<int64_t>(i));
    else if (matches[i] == kBelowLow)
      neg.push_back(static_cast<int64_t>(i));
  }
  const size_t npos = std::min(pos.size(), static_cast<size_t>(static_cast<double>(batch) * positive_fraction));
  const size_t nneg = std::min(neg.size(), batch - npos);
  rng.shuffle(pos.begin(), pos.end());
  rng.shuffle(neg.begin(), neg.end());
  pos.resize(npos);
  neg.resize(nneg);
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end());
  return {pos, neg};
}

}  // namespace pandepth::boxes

#endif  // PANDEPTH_BOXES_HPP_
