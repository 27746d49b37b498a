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

#ifndef PANDEPTH_ROI_ALIGN_HPP_
#define PANDEPTH_ROI_ALIGN_HPP_

#include <array>
#include <cmath>
#include <vector>

#include "pandepth/autograd.hpp"

namespace pandepth::ops {

// A region in image pixels together with the pyramid level it samples from.
struct LeveledBox {
  double x1, y1, x2, y2;
  int level;
};

namespace detail {

struct RoiTap {
  int64_t offset[4];
  double weight[4];
};

// Bilinear taps with the boundary convention of aligned RoIAlign: samples
// more than one pixel outside are dropped, others clamp to the border.
inline bool roi_bilinear(double y, double x, int64_t h, int64_t w, RoiTap& tap) {
  if (y < -1.0 || y > static_cast<double>(h) || x < -1.0 || x > static_cast<double>(w)) return false;
  y = std::max(y, 0.0);
  x = std::max(x, 0.0);
  int64_t y0 = static_cast<int64_t>(y), x0 = static_cast<int64_t>(x), y1, x1;
  if (y0 >= h - 1) {
    y0 = y1 = h - 1;
    y = static_cast<double>(y0);
  } else {
    y1 = y0 + 1;
  }
  if (x0 >= w - 1) {
    x0 = x1 = w - 1;
    x = static_cast<double>(x0);
  } else {
    x1 = x0 + 1;
  }
  const double ly = y - static_cast<double>(y0), lx = x - static_cast<double>(x0);
  const double hy = 1.0 - ly, hx = 1.0 - lx;
  tap.offset[0] = y0 * w + x0;
  tap.offset[1] = y0 * w + x1;
  tap.offset[2] = y1 * w + x0;
  tap.offset[3] = y1 * w + x1;
  tap.weight[0] = hy * hx;
  tap.weight[1] = hy * lx;
  tap.weight[2] = ly * hx;
  tap.weight[3] = ly * lx;
  return true;
}

// Sampling plan for one output bin: list of taps and the averaging factor.
struct BinPlan {
  std::vector<RoiTap> taps;
  double inv_count = 0.0;
};

inline std::vector<BinPlan> roi_plan(const LeveledBox& r, double scale, int64_t h, int64_t w,
                                     int out_h, int out_w, int sampling) {
  const double sx = r.x1 * scale - 0.5, sy = r.y1 * scale - 0.5;
  const double rw = (r.x2 - r.x1) * scale, rh = (r.y2 - r.y1) * scale;
  const double bin_h = rh / out_h, bin_w = rw / out_w;
  const int gh = sampling > 0 ? sampling : std::max(1, static_cast<int>(std::ceil(rh / out_h)));
  const int gw = sampling > 0 ? sampling : std::max(1, static_cast<int>(std::ceil(rw / out_w)));
  std::vector<BinPlan> plan(static_cast<size_t>(out_h * out_w));
  for (int ph = 0; ph < out_h; ++ph)
    for (int pw = 0; pw < out_w; ++pw) {
      auto& bin = plan[ph * out_w + pw];
      bin.inv_count = 1.0 / static_cast<double>(gh * gw);
      for (int iy = 0; iy < gh; ++iy) {
        const double y = sy + ph * bin_h + (iy + 0.5) * bin_h / gh;
        for (int ix = 0; ix < gw; ++ix) {
          const double x = sx + pw * bin_w + (ix + 0.5) * bin_w / gw;
          RoiTap tap;
          if (roi_bilinear(y, x, h, w, tap)) bin.taps.push_back(tap);
        }
      }
    }
  return plan;
}

}  // namespace detail

// Multi-level RoIAlign. levels[l] is [1, C, H_l, W_l] with spatial stride
// strides[l]; output is [R, C, out_h, out_w].
template <typename T>
Var<T> roi_align(const std::vector<Var<T>>& levels, const std::vector<int>& strides,
                 const std::vector<LeveledBox>& rois, int out_h, int out_w, int sampling = 2) {
  PANDEPTH_CHECK_ARG(!levels.empty() && levels.size() == strides.size(),
                     "roi_align: level/stride mismatch");
  const int64_t c = levels[0].dim(1);
  const int64_t r = static_cast<int64_t>(rois.size());
  const int64_t bins = out_h * out_w;
  Tensor<T> out(Shape{r, c, out_h, out_w});
  std::vector<std::vector<detail::BinPlan>> plans;
  plans.reserve(rois.size());
  for (int64_t i = 0; i < r; ++i) {
    const auto& roi = rois[i];
    PANDEPTH_CHECK_ARG(roi.level >= 0 && roi.level < static_cast<int>(levels.size()),
                       "roi_align: bad level");
    const auto& f = levels[roi.level];
    const int64_t h = f.dim(2), w = f.dim(3);
    plans.push_back(detail::roi_plan(roi, 1.0 / strides[roi.level], h, w, out_h, out_w, sampling));
    const auto& plan = plans.back();
    for (int64_t k = 0; k < c; ++k) {
      const T* src = f.value().data() + k * h * w;
      T* dst = out.data() + (i * c + k) * bins;
      for (int64_t b = 0; b < bins; ++b) {
        double acc = 0;
        for (const auto& t : plan[b].taps)
          for (int q = 0; q < 4; ++q) acc += t.weight[q] * src[t.offset[q]];
        dst[b] = static_cast<T>(acc * plan[b].inv_count);
      }
    }
  }
  return make_op<T>(std::move(out), levels, [levels, rois, plans = std::move(plans), c, bins](const Tensor<T>& g) {
    for (size_t i = 0; i < rois.size(); ++i) {
      const auto& f = levels[rois[i].level];
      auto* gf = grad_of(f);
      if (!gf) continue;
      const int64_t hw = f.dim(2) * f.dim(3);
      const auto& plan = plans[i];
      for (int64_t k = 0; k < c; ++k) {
        T* dst = gf->data() + k * hw;
        const T* src = g.data() + (static_cast<int64_t>(i) * c + k) * bins;
        for (int64_t b = 0; b < bins; ++b) {
          const double gv = src[b] * plan[b].inv_count;
          for (const auto& t : plan[b].taps)
            for (int q = 0; q < 4; ++q) dst[t.offset[q]] += static_cast<T>(t.weight[q] * gv);
        }
      }
    }
  });
}

}  // namespace pandepth::ops

#endif  // PANDEPTH_ROI_ALIGN_HPP_
