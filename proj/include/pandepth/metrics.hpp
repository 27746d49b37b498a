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

#ifndef PANDEPTH_METRICS_HPP_
#define PANDEPTH_METRICS_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "pandepth/boxes.hpp"
#include "pandepth/types.hpp"

namespace pandepth {

// ------------------------------------------------------------------ mIoU

// Pixel confusion counts over non-void ground truth.
class ConfusionAccumulator {
 public:
  explicit ConfusionAccumulator(int num_channels = 0)
      : nc_(num_channels), counts_(static_cast<size_t>(num_channels * num_channels), 0) {}

  void add(const LabelMap& pred, const LabelMap& gt) {
    PANDEPTH_CHECK_ARG(pred.h == gt.h && pred.w == gt.w, "miou: prediction and ground truth differ in size");
    for (int64_t i = 0; i < gt.size(); ++i) {
      const int32_t g = gt.data[i], p = pred.data[i];
      if (g == kVoidId) continue;
      PANDEPTH_CHECK_ARG(g < nc_ && p >= 0 && p < nc_, "miou: class id outside schema");
      ++counts_[static_cast<size_t>(g * nc_ + p)];
    }
  }

  void merge(const ConfusionAccumulator& o) {
    PANDEPTH_CHECK_ARG(o.nc_ == nc_, "miou: merging accumulators of different class counts");
    for (size_t i = 0; i < counts_.size(); ++i) counts_[i] += o.counts_[i];
  }

  int64_t labeled() const {
    int64_t n = 0;
    for (auto c : counts_) n += c;
    return n;
  }

  // Per-class IoU for classes with a non-empty union.
  std::map<int32_t, double> per_class() const {
    std::map<int32_t, double> out;
    for (int c = 1; c < nc_; ++c) {
      int64_t tp = counts_[c * nc_ + c], fp = 0, fn = 0;
      for (int k = 0; k < nc_; ++k) {
        if (k == c) continue;
        fn += counts_[c * nc_ + k];
        fp += counts_[k * nc_ + c];
      }
      if (tp + fp + fn > 0) out[c] = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
    }
    return out;
  }

  double miou() const {
    if (labeled() == 0) throw ArgumentError("miou: no labeled pixels");
    const auto pc = per_class();
    double s = 0;
    for (const auto& [_, v] : pc) s += v;
    return pc.empty() ? 0.0 : s / static_cast<double>(pc.size());
  }

  bool operator==(const ConfusionAccumulator&) const = default;

 private:
  int nc_;
  std::vector<int64_t> counts_;
};

struct MiouResult {
  double miou = 0;
  std::map<int32_t, double> per_class;
};

inline MiouResult miou(const LabelMap& pred, const LabelMap& gt, const LabelSchema& schema) {
  ConfusionAccumulator acc(schema.num_channels());
  acc.add(pred, gt);
  return {acc.miou(), acc.per_class()};
}

// ------------------------------------------------------------------ COCO mAP

struct Detection {
  Box box;
  int32_t class_id = 0;
  double score = 0;
  std::vector<int32_t> pixels;  // sorted flat indices, used for mask AP only
};

struct GroundTruthBox {
  Box box;
  int32_t class_id = 0;
  std::vector<int32_t> pixels;
};

inline double mask_iou(const std::vector<int32_t>& a, const std::vector<int32_t>& b) {
  size_t i = 0, j = 0;
  int64_t inter = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] == b[j]) {
      ++inter, ++i, ++j;
    } else if (a[i] < b[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  const int64_t uni = static_cast<int64_t>(a.size() + b.size()) - inter;
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

// COCO-style average precision over IoU thresholds 0.50:0.05:0.95 with
// 101-point interpolated precision.
class DetectionAccumulator {
 public:
  explicit DetectionAccumulator(bool use_masks = false) : masks_(use_masks) {}

  // `frame` is a caller-chosen unique key; it orders equal-score detections
  // and makes merging order-independent.
  void add(int64_t frame, std::vector<Detection> dets, std::vector<GroundTruthBox> gts) {
    PANDEPTH_CHECK_ARG(!frames_.count(frame), "map: frame " + std::to_string(frame) + " added twice");
    frames_[frame] = {std::move(dets), std::move(gts)};
  }

  void merge(const DetectionAccumulator& o) {
    for (const auto& [k, v] : o.frames_) {
      PANDEPTH_CHECK_ARG(!frames_.count(k), "map: frame " + std::to_string(k) + " present in both accumulators");
      frames_[k] = v;
    }
  }

  static std::array<double, 10> thresholds() {
    std::array<double, 10> t{};
    for (int i = 0; i < 10; ++i) t[i] = (50 + 5 * i) / 100.0;
    return t;
  }

  // AP per class with at least one ground-truth instance.
  std::map<int32_t, double> per_class() const {
    std::map<int32_t, int64_t> npos;
    for (const auto& [_, f] : frames_)
      for (const auto& g : f.second) ++npos[g.class_id];
    std::map<int32_t, double> out;
    for (const auto& [c, n] : npos) {
      // (score, frame, index) sorted by score desc, then frame, then index.
      std::vector<std::tuple<double, int64_t, size_t>> dets;
      for (const auto& [k, f] : frames_)
        for (size_t i = 0; i < f.first.size(); ++i)
          if (f.first[i].class_id == c) dets.emplace_back(f.first[i].score, k, i);
      std::sort(dets.begin(), dets.end(), [](const auto& a, const auto& b) {
        if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
        if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) < std::get<1>(b);
        return std::get<2>(a) < std::get<2>(b);
      });
      double ap = 0;
      for (double t : thresholds()) ap += average_precision(c, n, dets, t);
      out[c] = ap / 10.0;
    }
    return out;
  }

  // Mean over classes; nullopt when no class has ground truth.
  std::optional<double> map() const {
    const auto pc = per_class();
    if (pc.empty()) return std::nullopt;
    double s = 0;
    for (const auto& [_, v] : pc) s += v;
    return s / static_cast<double>(pc.size());
  }

 private:
  double overlap(const Detection& d, const GroundTruthBox& g) const {
    return masks_ ? mask_iou(d.pixels, g.pixels) : boxes::iou(d.box, g.box);
  }

  double average_precision(int32_t c, int64_t npos, const std::vector<std::tuple<double, int64_t, size_t>>& dets,
                           double thr) const {
    std::map<int64_t, std::vector<char>> used;
    std::vector<double> prec, rec;
    int64_t tp = 0, fp = 0;
    for (const auto& [score, k, i] : dets) {
      const auto& f = frames_.at(k);
      auto& u = used[k];
      u.resize(f.second.size(), 0);
      double best = thr;
      int64_t hit = -1;
      for (size_t g = 0; g < f.second.size(); ++g) {
        if (f.second[g].class_id != c || u[g]) continue;
        const double v = overlap(f.first[i], f.second[g]);
        if (v >= best) {
          best = v;
          hit = static_cast<int64_t>(g);
        }
      }
      if (hit >= 0) {
        u[hit] = 1;
        ++tp;
      } else {
        ++fp;
      }
      rec.push_back(static_cast<double>(tp) / static_cast<double>(npos));
      prec.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    }
    for (int64_t i = static_cast<int64_t>(prec.size()) - 2; i >= 0; --i) prec[i] = std::max(prec[i], prec[i + 1]);
    double s = 0;
    for (int r = 0; r <= 100; ++r) {
      const double target = r / 100.0;
      const auto it = std::lower_bound(rec.begin(), rec.end(), target);
      if (it != rec.end()) s += prec[static_cast<size_t>(it - rec.begin())];
    }
    return s / 101.0;
  }

  bool masks_;
  std::map<int64_t, std::pair<std::vector<Detection>, std::vector<GroundTruthBox>>> frames_;
};

inline double coco_map(const std::vector<std::vector<Detection>>& preds,
                       const std::vector<std::vector<GroundTruthBox>>& gts) {
  PANDEPTH_CHECK_ARG(preds.size() == gts.size(), "map: frame count mismatch");
  DetectionAccumulator acc;
  for (size_t i = 0; i < preds.size(); ++i) acc.add(static_cast<int64_t>(i), preds[i], gts[i]);
  return acc.map().value_or(0.0);
}

// ------------------------------------------------------------------ PQ

struct PqClassStats {
  int64_t tp = 0, fp = 0, fn = 0;
  double iou_sum = 0;

  double pq() const { return denom() > 0 ? iou_sum / denom() : 0.0; }
  double rq() const { return denom() > 0 ? static_cast<double>(tp) / denom() : 0.0; }
  double sq() const { return tp > 0 ? iou_sum / static_cast<double>(tp) : 0.0; }
  double denom() const { return static_cast<double>(tp) + 0.5 * static_cast<double>(fp + fn); }
  bool operator==(const PqClassStats&) const = default;
};

struct PqResult {
  double pq = 0, rq = 0, sq = 0;
  std::map<int32_t, PqClassStats> per_class;
};

class PanopticAccumulator {
 public:
  void add(const PanopticMap& pred, const PanopticMap& gt, const LabelSchema& schema) {
    validate(pred, schema);
    validate(gt, schema);
    PANDEPTH_CHECK_ARG(pred.h() == gt.h() && pred.w() == gt.w(), "pq: prediction and ground truth differ in size");
    using Key = std::pair<int32_t, int32_t>;
    std::map<Key, int64_t> gt_area, pred_area, pred_void;
    std::map<std::pair<Key, Key>, int64_t> inter;
    for (int64_t i = 0; i < gt.h() * gt.w(); ++i) {
      const Key g{gt.class_map.data[i], gt.instance_map.data[i]};
      const Key p{pred.class_map.data[i], pred.instance_map.data[i]};
      if (g.first != kVoidId) ++gt_area[g];
      if (p.first != kVoidId) {
        ++pred_area[p];
        if (g.first == kVoidId)
          ++pred_void[p];
        else
          ++inter[{g, p}];
      }
    }
    std::map<Key, bool> gt_hit, pred_hit;
    for (const auto& [pair, n] : inter) {
      const auto& [g, p] = pair;
      if (g.first != p.first) continue;
      const double uni = static_cast<double>(gt_area[g] + pred_area[p] - n - pred_void[p]);
      const double v = static_cast<double>(n) / uni;
      if (v <= 0.5) continue;
      gt_hit[g] = pred_hit[p] = true;
      auto& s = stats_[g.first];
      ++s.tp;
      s.iou_sum += v;
    }
    for (const auto& [g, _] : gt_area)
      if (!gt_hit.count(g)) ++stats_[g.first].fn;
    for (const auto& [p, a] : pred_area) {
      if (pred_hit.count(p)) continue;
      if (static_cast<double>(pred_void[p]) / static_cast<double>(a) > 0.5) continue;
      ++stats_[p.first].fp;
    }
  }

  void merge(const PanopticAccumulator& o) {
    for (const auto& [c, s] : o.stats_) {
      auto& d = stats_[c];
      d.tp += s.tp;
      d.fp += s.fp;
      d.fn += s.fn;
      d.iou_sum += s.iou_sum;
    }
  }

  PqResult result() const {
    PqResult r;
    int n = 0;
    for (const auto& [c, s] : stats_) {
      if (s.tp + s.fp + s.fn == 0) continue;
      r.per_class[c] = s;
      r.pq += s.pq();
      r.rq += s.rq();
      r.sq += s.sq();
      ++n;
    }
    if (n > 0) {
      r.pq /= n;
      r.rq /= n;
      r.sq /= n;
    }
    return r;
  }

  bool empty() const { return stats_.empty(); }
  bool operator==(const PanopticAccumulator&) const = default;

 private:
  std::map<int32_t, PqClassStats> stats_;
};

inline PqResult pq_rq_sq(const PanopticMap& pred, const PanopticMap& gt, const LabelSchema& schema) {
  PanopticAccumulator acc;
  acc.add(pred, gt, schema);
  return acc.result();
}

// ------------------------------------------------------------------ RMSE

class DepthErrorAccumulator {
 public:
  void add(const DenseDepthMap& pred, const SparseDepthMap& gt) {
    PANDEPTH_CHECK_ARG(pred.h() == gt.h() && pred.w() == gt.w(), "rmse: prediction and ground truth differ in size");
    for (int64_t i = 0; i < gt.h() * gt.w(); ++i) {
      if (!gt.valid.data[i]) continue;
      const double d = static_cast<double>(pred.depth.data[i]) - gt.depth.data[i];
      sq_ += d * d;
      ++n_;
    }
  }

  void merge(const DepthErrorAccumulator& o) {
    sq_ += o.sq_;
    n_ += o.n_;
  }

  int64_t count() const { return n_; }

  double rmse_mm() const {
    if (n_ == 0) throw ArgumentError("rmse: no valid ground-truth pixels");
    return std::sqrt(sq_ / static_cast<double>(n_)) * 1000.0;
  }

 private:
  double sq_ = 0;
  int64_t n_ = 0;
};

inline double rmse(const DenseDepthMap& pred, const SparseDepthMap& gt) {
  DepthErrorAccumulator acc;
  acc.add(pred, gt);
  return acc.rmse_mm();
}

// ------------------------------------------------------------------ report

struct MetricReport {
  std::optional<double> miou, map, pq, rq, sq, rmse_mm;
  std::map<int32_t, double> iou_per_class;
  std::map<int32_t, double> ap_per_class;
  std::map<int32_t, PqClassStats> pq_per_class;
  int64_t frames = 0;
};

// Streams all four metric families over a split.
class MetricAccumulator {
 public:
  MetricAccumulator(int num_channels, bool mask_map = false) : confusion_(num_channels), detections_(mask_map) {}

  ConfusionAccumulator& confusion() { return confusion_; }
  DetectionAccumulator& detections() { return detections_; }
  PanopticAccumulator& panoptic() { return panoptic_; }
  DepthErrorAccumulator& depth() { return depth_; }

  void mark_frame() { ++frames_; }
  void enable(bool semantic, bool instance, bool panoptic, bool depth) {
    has_sem_ = has_sem_ || semantic;
    has_inst_ = has_inst_ || instance;
    has_pan_ = has_pan_ || panoptic;
    has_depth_ = has_depth_ || depth;
  }

  void merge(const MetricAccumulator& o) {
    confusion_.merge(o.confusion_);
    detections_.merge(o.detections_);
    panoptic_.merge(o.panoptic_);
    depth_.merge(o.depth_);
    frames_ += o.frames_;
    enable(o.has_sem_, o.has_inst_, o.has_pan_, o.has_depth_);
  }

  MetricReport report() const {
    MetricReport r;
    r.frames = frames_;
    if (has_sem_ && confusion_.labeled() > 0) {
      r.miou = confusion_.miou();
      r.iou_per_class = confusion_.per_class();
    }
    if (has_inst_) {
      r.map = detections_.map().value_or(0.0);
      r.ap_per_class = detections_.per_class();
    }
    if (has_pan_) {
      const auto p = panoptic_.result();
      r.pq = p.pq;
      r.rq = p.rq;
      r.sq = p.sq;
      r.pq_per_class = p.per_class;
    }
    if (has_depth_ && depth_.count() > 0) r.rmse_mm = depth_.rmse_mm();
    return r;
  }

 private:
  ConfusionAccumulator confusion_;
  DetectionAccumulator detections_;
  PanopticAccumulator panoptic_;
  DepthErrorAccumulator depth_;
  int64_t frames_ = 0;
  bool has_sem_ = false, has_inst_ = false, has_pan_ = false, has_depth_ = false;
};

inline nlohmann::json to_json(const MetricReport& r, const LabelSchema& schema) {
  nlohmann::json j;
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  j["frames"] = r.frames;
  j["miou"] = opt(r.miou);
  j["map"] = opt(r.map);
  j["rmse_mm"] = opt(r.rmse_mm);
  j["pq"] = opt(r.pq);
  j["rq"] = opt(r.rq);
  j["sq"] = opt(r.sq);
  nlohmann::json per = nlohmann::json::object();
  for (const auto& c : schema.classes()) {
    nlohmann::json e = nlohmann::json::object();
    if (auto it = r.iou_per_class.find(c.id); it != r.iou_per_class.end()) e["iou"] = it->second;
    if (auto it = r.ap_per_class.find(c.id); it != r.ap_per_class.end()) e["ap"] = it->second;
    if (auto it = r.pq_per_class.find(c.id); it != r.pq_per_class.end()) {
      const auto& s = it->second;
      e["pq"] = s.pq();
      e["rq"] = s.rq();
      e["sq"] = s.sq();
      e["tp"] = s.tp;
      e["fp"] = s.fp;
      e["fn"] = s.fn;
    }
    if (!e.empty()) per[c.name] = e;
  }
  j["per_class"] = per;
  return j;
}

// One-row text table with columns mIoU, mAP, RMSE(mm), PQ, RQ, SQ; "-" for
// metrics that were not computed.
inline std::string format_table(const MetricReport& r, const std::string& row_name = "PanDepth") {
  auto cell = [](const std::optional<double>& v, int decimals) {
    if (!v) return std::string("-");
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, *v);
    return std::string(buf);
  };
  char line[256];
  std::ostringstream os;
  std::snprintf(line, sizeof(line), "%-16s %8s %8s %10s %8s %8s %8s\n", "Model", "mIoU", "mAP", "RMSE(mm)", "PQ",
                "RQ", "SQ");
  os << line;
  std::snprintf(line, sizeof(line), "%-16s %8s %8s %10s %8s %8s %8s\n", row_name.c_str(), cell(r.miou, 3).c_str(),
                cell(r.map, 3).c_str(), cell(r.rmse_mm, 0).c_str(), cell(r.pq, 3).c_str(), cell(r.rq, 3).c_str(),
                cell(r.sq, 3).c_str());
  os << line;
  return os.str();
}

}  // namespace pandepth

#endif  // PANDEPTH_METRICS_HPP_
