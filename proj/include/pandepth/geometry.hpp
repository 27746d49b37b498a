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

#ifndef PANDEPTH_GEOMETRY_HPP_
#define PANDEPTH_GEOMETRY_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pandepth/types.hpp"

namespace pandepth {

using Point3 = std::array<double, 3>;

// Back-projected valid depth pixels. pixel[i] is the flat index (v * W + u)
// of the pixel that produced xyz[i].
struct PointSet {
  std::vector<Point3> xyz;
  std::vector<int64_t> pixel;
  int64_t width = 0;
  int64_t height = 0;

  size_t size() const { return xyz.size(); }
};

// Pinhole back-projection of every valid pixel, in row-major pixel order.
inline PointSet backproject(const SparseDepthMap& depth, const CameraIntrinsics& k) {
  validate(k);
  PointSet ps;
  ps.width = depth.w();
  ps.height = depth.h();
  for (int64_t v = 0; v < depth.h(); ++v)
    for (int64_t u = 0; u < depth.w(); ++u) {
      const int64_t i = v * depth.w() + u;
      if (!depth.valid.data[i]) continue;
      const double d = depth.depth.data[i];
      ps.xyz.push_back({(static_cast<double>(u) - k.cx) * d / k.fx, (static_cast<double>(v) - k.cy) * d / k.fy, d});
      ps.pixel.push_back(i);
    }
  return ps;
}

// Pinhole projection to (u, v) pixel coordinates.
inline std::pair<double, double> project(const Point3& p, const CameraIntrinsics& k) {
  return {k.fx * p[0] / p[2] + k.cx, k.fy * p[1] / p[2] + k.cy};
}

inline double squared_distance(const Point3& a, const Point3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

// Exact k-nearest-neighbour search backed by a uniform voxel hash. Results
// are ordered by (distance, point index); each point is its own first
// neighbour unless it has an exact duplicate with lower index. When fewer
// than k points exist, rows are padded with the nearest neighbour.
class KnnIndex {
 public:
  KnnIndex(const std::vector<Point3>& points, int k) : points_(points), k_(k) {
    PANDEPTH_CHECK_ARG(k >= 1, "knn: k must be >= 1");
    PANDEPTH_CHECK_ARG(!points.empty(), "knn: empty point set");
    Point3 lo = points[0], hi = points[0];
    for (const auto& p : points)
      for (int a = 0; a < 3; ++a) {
        lo[a] = std::min(lo[a], p[a]);
        hi[a] = std::max(hi[a], p[a]);
      }
    double extent = 0, volume = 1;
    for (int a = 0; a < 3; ++a) {
      const double e = hi[a] - lo[a];
      extent = std::max(extent, e);
      volume *= std::max(e, 1e-9);
    }
    cell_ = std::cbrt(volume * static_cast<double>(std::min<size_t>(k, points.size())) /
                      static_cast<double>(points.size()));
    // Flat clouds make the volume estimate collapse; keep cells from becoming
    // vanishingly small relative to the cloud.
    cell_ = std::max(cell_, extent / 256.0);
    if (!(cell_ > 0)) cell_ = 1.0;
    origin_ = lo;
    for (int a = 0; a < 3; ++a)
      max_cell_[a] = static_cast<int64_t>(std::floor((hi[a] - lo[a]) / cell_));
    for (size_t i = 0; i < points.size(); ++i) cells_[key(cell_of(points[i]))].push_back(static_cast<int64_t>(i));
  }

  int k() const { return k_; }

  // Neighbours of point `i`, k entries.
  std::vector<int64_t> query(int64_t i) const { return query(points_[i]); }

  std::vector<int64_t> query(const Point3& q) const {
    const auto c = cell_of(q);
    std::vector<std::pair<double, int64_t>> cand;
    int64_t max_ring = 0;
    for (int a = 0; a < 3; ++a)
      max_ring = std::max({max_ring, std::abs(c[a]), std::abs(c[a] - max_cell_[a])});
    const size_t want = std::min<size_t>(k_, points_.size());
    for (int64_t r = 0; r <= max_ring; ++r) {
      visit_ring(c, r, [&](int64_t idx) { cand.emplace_back(squared_distance(q, points_[idx]), idx); });
      if (cand.size() >= want) {
        std::partial_sort(cand.begin(), cand.begin() + static_cast<int64_t>(want), cand.end());
        cand.resize(want);
        const double bound = static_cast<double>(r) * cell_;
        if (cand.back().first < bound * bound * (1.0 - 1e-12)) break;
      }
    }
    std::sort(cand.begin(), cand.end());
    std::vector<int64_t> out;
    out.reserve(k_);
    for (size_t j = 0; j < cand.size() && j < static_cast<size_t>(k_); ++j) out.push_back(cand[j].second);
    while (static_cast<int>(out.size()) < k_) out.push_back(out.front());
    return out;
  }

  // Row-major [P, k] neighbour table for every indexed point.
  std::vector<int64_t> query_all() const {
    std::vector<int64_t> out;
    out.reserve(points_.size() * k_);
    for (size_t i = 0; i < points_.size(); ++i) {
      auto n = query(static_cast<int64_t>(i));
      out.insert(out.end(), n.begin(), n.end());
    }
    return out;
  }

 private:
  using Cell = std::array<int64_t, 3>;

  Cell cell_of(const Point3& p) const {
    Cell c;
    for (int a = 0; a < 3; ++a) c[a] = static_cast<int64_t>(std::floor((p[a] - origin_[a]) / cell_));
    return c;
  }

  static uint64_t key(const Cell& c) {
    uint64_t h = 1469598103934665603ULL;
    for (int64_t v : c) h = (h ^ static_cast<uint64_t>(v)) * 0x9e3779b97f4a7c15ULL + (h >> 29);
    return h;
  }

  template <typename F>
  void visit_cell(const Cell& c, F&& f) const {
    auto it = cells_.find(key(c));
    if (it == cells_.end()) return;
    for (int64_t idx : it->second)
      if (cell_of(points_[idx]) == c) f(idx);
  }

  // Cells at Chebyshev distance exactly r from c.
  template <typename F>
  void visit_ring(const Cell& c, int64_t r, F&& f) const {
    for (int64_t dx = -r; dx <= r; ++dx)
      for (int64_t dy = -r; dy <= r; ++dy) {
        const bool edge = std::abs(dx) == r || std::abs(dy) == r;
        if (edge) {
          for (int64_t dz = -r; dz <= r; ++dz) visit_cell({c[0] + dx, c[1] + dy, c[2] + dz}, f);
        } else {
          visit_cell({c[0] + dx, c[1] + dy, c[2] - r}, f);
          if (r > 0) visit_cell({c[0] + dx, c[1] + dy, c[2] + r}, f);
        }
      }
  }

  const std::vector<Point3>& points_;
  int k_;
  double cell_ = 1.0;
  Point3 origin_{};
  int64_t max_cell_[3] = {0, 0, 0};
  std::unordered_map<uint64_t, std::vector<int64_t>> cells_;
};

}  // namespace pandepth

#endif  // PANDEPTH_GEOMETRY_HPP_
