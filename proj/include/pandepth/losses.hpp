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

#ifndef PANDEPTH_LOSSES_HPP_
#define PANDEPTH_LOSSES_HPP_

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "pandepth/instance_branch.hpp"

namespace pandepth {

struct LossReport {
  double semantic = 0, os = 0, op = 0, cls = 0, box = 0, mask = 0, depth = 0, joint = 0;

  double instance() const { return os + op + cls + box + mask; }
};

// Unweighted sum of all terms; fills report.joint.
inline double joint_loss(LossReport& r) {
  r.joint = r.semantic + r.instance() + r.depth;
  return r.joint;
}

namespace losses {

// Pixels kept by the bootstrapped log-loss: the floor(fraction * |labeled|)
// labeled pixels with the largest loss, ties broken by lower pixel index.
inline std::vector<int64_t> worst_pixels(const std::vector<double>& loss, const std::vector<int64_t>& labeled,
                                         double fraction) {
  const size_t q = static_cast<size_t>(std::floor(fraction * static_cast<double>(labeled.size())));
  std::vector<int64_t> sel = labeled;
  auto worse = [&](int64_t a, int64_t b) { return loss[a] > loss[b] || (loss[a] == loss[b] && a < b); };
  std::partial_sort(sel.begin(), sel.begin() + static_cast<int64_t>(q), sel.end(), worse);
  sel.resize(q);
  return sel;
}

}  // namespace losses

// Weighted per-pixel log-loss over the 25% worst labeled pixels, each with
// weight 4 / (W * H). logits [1, nc, H, W]; gt holds class ids (0 = void).
template <typename T>
Var<T> semantic_loss(const Var<T>& logits, const LabelMap& gt, double worst_fraction = 0.25) {
  PANDEPTH_CHECK_ARG(logits.shape().size() == 4 && logits.dim(0) == 1 && logits.dim(2) == gt.h && logits.dim(3) == gt.w,
                     "semantic loss: logits " + shape_str(logits.shape()) + " do not match labels " +
                         std::to_string(gt.h) + "x" + std::to_string(gt.w));
  const int64_t nc = logits.dim(1), hw = gt.h * gt.w;
  const T* z = logits.value().data();
  std::vector<int64_t> labeled;
  std::vector<double> loss(static_cast<size_t>(hw), 0.0);
  for (int64_t i = 0; i < hw; ++i) {
    const int32_t y = gt.data[i];
    if (y == kVoidId) continue;
    PANDEPTH_CHECK_ARG(y > 0 && y < nc, "semantic loss: label " + std::to_string(y) + " outside logit channels");
    double mx = z[i];
    for (int64_t c = 1; c < nc; ++c) mx = std::max(mx, static_cast<double>(z[c * hw + i]));
    double s = 0;
    for (int64_t c = 0; c < nc; ++c) s += std::exp(static_cast<double>(z[c * hw + i]) - mx);
    loss[i] = mx + std::log(s) - static_cast<double>(z[y * hw + i]);
    labeled.push_back(i);
  }
  if (labeled.empty()) throw ArgumentError("semantic loss: no labeled pixels");
  const std::vector<int64_t> sel = losses::worst_pixels(loss, labeled, worst_fraction);
  const double weight = 4.0 / static_cast<double>(hw);
  double total = 0;
  for (int64_t i : sel) total += weight * loss[i];
  return make_op<T>(Tensor<T>::scalar(static_cast<T>(total)), {logits},
                    [logits, sel, weight, nc, hw, labels = gt.data](const Tensor<T>& g) {
                      auto* gz = grad_of(logits);
                      if (!gz) return;
                      const T* z = logits.value().data();
                      const double go = g[0] * weight;
                      for (int64_t i : sel) {
                        double mx = z[i];
                        for (int64_t c = 1; c < nc; ++c) mx = std::max(mx, static_cast<double>(z[c * hw + i]));
                        double s = 0;
                        for (int64_t c = 0; c < nc; ++c) s += std::exp(static_cast<double>(z[c * hw + i]) - mx);
                        for (int64_t c = 0; c < nc; ++c) {
                          const double p = std::exp(static_cast<double>(z[c * hw + i]) - mx) / s;
                          (*gz)[c * hw + i] += static_cast<T>(go * (p - (c == labels[i] ? 1.0 : 0.0)));
                        }
                      }
                    });
}

// Mean squared error over pixels with valid ground truth. pred [1,1,H,W].
template <typename T>
Var<T> depth_loss(const Var<T>& pred, const SparseDepthMap& gt) {
  PANDEPTH_CHECK_ARG(pred.numel() == gt.h() * gt.w() && pred.dim(-1) == gt.w(),
                     "depth loss: prediction does not match ground truth size");
  std::vector<int64_t> idx;
  for (int64_t i = 0; i < gt.h() * gt.w(); ++i)
    if (gt.valid.data[i]) idx.push_back(i);
  if (idx.empty()) throw ArgumentError("depth loss: ground truth has no valid pixels");
  const T* p = pred.value().data();
  double s = 0;
  for (int64_t i : idx) {
    const double d = static_cast<double>(p[i]) - gt.depth.data[i];
    s += d * d;
  }
  const double n = static_cast<double>(idx.size());
  std::vector<float> target(idx.size());
  for (size_t j = 0; j < idx.size(); ++j) target[j] = gt.depth.data[idx[j]];
  return make_op<T>(Tensor<T>::scalar(static_cast<T>(s / n)), {pred},
                    [pred, idx, target, n](const Tensor<T>& g) {
                      auto* gp = grad_of(pred);
                      if (!gp) return;
                      const T* p = pred.value().data();
                      for (size_t j = 0; j < idx.size(); ++j)
                        (*gp)[idx[j]] += static_cast<T>(g[0] * 2.0 * (p[idx[j]] - target[j]) / n);
                    });
}

// Mean binary cross-entropy with logits over all entries; 0 when empty.
template <typename T>
Var<T> bce_with_logits(const Var<T>& logits, const Tensor<T>& targets) {
  const int64_t n = logits.defined() ? logits.numel() : 0;
  PANDEPTH_CHECK_ARG(n == targets.numel(), "bce: size mismatch");
  if (n == 0) return Var<T>(Tensor<T>::scalar(T(0)));
  double s = 0;
  for (int64_t i = 0; i < n; ++i) {
    const double z = logits.value()[i], t = targets[i];
    s += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
  }
  return make_op<T>(Tensor<T>::scalar(static_cast<T>(s / n)), {logits}, [logits, targets, n](const Tensor<T>& g) {
    auto* gz = grad_of(logits);
    if (!gz) return;
    for (int64_t i = 0; i < n; ++i) {
      const double p = 1.0 / (1.0 + std::exp(-static_cast<double>(logits.value()[i])));
      (*gz)[i] += static_cast<T>(g[0] * (p - targets[i]) / n);
    }
  });
}

// Mean softmax cross-entropy over rows of [R, K]; 0 when R = 0.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<int64_t>& labels) {
  const int64_t r = logits.defined() && logits.numel() > 0 ? logits.dim(0) : 0;
  PANDEPTH_CHECK_ARG(r == static_cast<int64_t>(labels.size()), "cross entropy: label count mismatch");
  if (r == 0) return Var<T>(Tensor<T>::scalar(T(0)));
  const int64_t k = logits.dim(1);
  std::vector<double> prob(static_cast<size_t>(r * k));
  double s = 0;
  for (int64_t i = 0; i < r; ++i) {
    const T* z = logits.value().data() + i * k;
    const double mx = *std::max_element(z, z + k);
    double den = 0;
    for (int64_t c = 0; c < k; ++c) den += (prob[i * k + c] = std::exp(z[c] - mx));
    for (int64_t c = 0; c < k; ++c) prob[i * k + c] /= den;
    s += mx + std::log(den) - z[labels[i]];
  }
  return make_op<T>(Tensor<T>::scalar(static_cast<T>(s / r)), {logits},
                    [logits, labels, prob = std::move(prob), r, k](const Tensor<T>& g) {
                      auto* gz = grad_of(logits);
                      if (!gz) return;
                      for (int64_t i = 0; i < r; ++i)
                        for (int64_t c = 0; c < k; ++c)
                          (*gz)[i * k + c] +=
                              static_cast<T>(g[0] * (prob[i * k + c] - (c == labels[i] ? 1.0 : 0.0)) / r);
                    });
}

// Smooth-L1 summed over entries and divided by `norm`; 0 when empty.
template <typename T>
Var<T> smooth_l1(const Var<T>& pred, const Tensor<T>& target, double beta, double norm) {
  const int64_t n = pred.defined() ? pred.numel() : 0;
  PANDEPTH_CHECK_ARG(n == target.numel(), "smooth l1: size mismatch");
  if (n == 0) return Var<T>(Tensor<T>::scalar(T(0)));
  double s = 0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = std::abs(static_cast<double>(pred.value()[i]) - target[i]);
    s += d < beta ? 0.5 * d * d / beta : d - 0.5 * beta;
  }
  return make_op<T>(Tensor<T>::scalar(static_cast<T>(s / norm)), {pred}, [pred, target, beta, norm, n](const Tensor<T>& g) {
    auto* gp = grad_of(pred);
    if (!gp) return;
    for (int64_t i = 0; i < n; ++i) {
      const double d = static_cast<double>(pred.value()[i]) - target[i];
      const double gd = std::abs(d) < beta ? d / beta : (d > 0 ? 1.0 : -1.0);
      (*gp)[i] += static_cast<T>(g[0] * gd / norm);
    }
  });
}

template <typename T>
struct InstanceLoss {
  Var<T> os, op, cls, box, mask;
  bool no_positive_anchors = false;
};

inline constexpr double kRpnSmoothL1Beta = 1.0 / 9.0;
inline constexpr double kBoxSmoothL1Beta = 1.0;

// The five instance terms. Box terms are averaged over positive samples.
template <typename T>
InstanceLoss<T> instance_loss(const InstanceTrainOutput<T>& o) {
  InstanceLoss<T> l;
  l.os = bce_with_logits(o.objectness, o.objectness_labels);
  l.no_positive_anchors = o.num_positive_anchors == 0;
  l.op = smooth_l1(o.rpn_deltas, o.rpn_targets, kRpnSmoothL1Beta, std::max<double>(1, o.num_positive_anchors));
  l.cls = cross_entropy(o.class_logits, o.class_labels);
  l.box = smooth_l1(o.box_deltas, o.box_targets, kBoxSmoothL1Beta, std::max<double>(1, o.num_positive_rois));
  l.mask = bce_with_logits(o.mask_logits, o.mask_targets);
  if (l.no_positive_anchors) {
    l.op = Var<T>(Tensor<T>::scalar(T(0)));
    l.box = Var<T>(Tensor<T>::scalar(T(0)));
    l.mask = Var<T>(Tensor<T>::scalar(T(0)));
  }
  return l;
}

}  // namespace pandepth

#endif  // PANDEPTH_LOSSES_HPP_
