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

#ifndef PANDEPTH_INSTANCE_BRANCH_HPP_
#define PANDEPTH_INSTANCE_BRANCH_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <numeric>
#include <vector>

#include "pandepth/backbone.hpp"
#include "pandepth/boxes.hpp"
#include "pandepth/roi_align.hpp"

namespace pandepth {

struct AnchorConfig {
  std::array<double, 4> sizes = {32, 64, 128, 256};  // one per pyramid level
  std::vector<double> ratios = {0.5, 1.0, 2.0};
  double rpn_nms = 0.7;
  int pre_nms_topk_train = 2000;
  int pre_nms_topk_eval = 1000;
  int post_nms_topk_train = 1000;
  int post_nms_topk_eval = 300;
  double rpn_positive_iou = 0.7;
  double rpn_negative_iou = 0.3;
  int rpn_batch = 256;
  double rpn_positive_fraction = 0.25;
  double roi_positive_iou = 0.5;
  int roi_batch = 512;
  double roi_positive_fraction = 0.25;
  double score_thresh = 0.5;
  double detection_nms = 0.5;
  int max_detections = 100;
};

struct InstanceHeadConfig {
  AnchorConfig anchors;
  int box_head_dim = 3072;
  int mask_head_convs = 4;
};

struct Proposal {
  Box box;
  double score = 0;
};

// Ground-truth thing instances of one frame.
struct InstanceTargets {
  std::vector<Box> boxes;
  std::vector<int32_t> classes;
  std::vector<Grid<uint8_t>> masks;
};

inline InstanceTargets instance_targets(const PanopticMap& gt, const LabelSchema& schema) {
  InstanceTargets t;
  for (const auto& [key, seg] : gt.segments()) {
    if (seg.instance_id == 0 || !schema.is_thing(seg.class_id)) continue;
    Grid<uint8_t> m(gt.h(), gt.w(), 0);
    for (int64_t i = 0; i < m.size(); ++i)
      m.data[i] = gt.class_map.data[i] == seg.class_id && gt.instance_map.data[i] == seg.instance_id;
    t.boxes.push_back(seg.bbox);
    t.classes.push_back(seg.class_id);
    t.masks.push_back(std::move(m));
  }
  return t;
}

// Pyramid level index (0 = stride 4) for a RoI of the given size.
inline int roi_level(const Box& b) {
  const double s = std::sqrt(std::max(b.area(), 1e-6));
  const int k = static_cast<int>(std::floor(4.0 + std::log2(s / 224.0 + 1e-8)));
  return std::clamp(k, 2, 5) - 2;
}

// Raw head outputs for one image, flattened level by level.
template <typename T>
struct RpnOutput {
  Var<T> objectness;            // [sum_l A*H_l*W_l], level-major then (a, y, x)
  Var<T> deltas;                // [sum_l 4A*H_l*W_l], level-major then (a*4+j, y, x)
  std::vector<Box> anchors;     // level-major then (y, x, a)
  std::vector<int64_t> score_index;  // anchor -> position in `objectness`
  std::vector<int64_t> delta_index;  // anchor -> position of dx in `deltas`; + j*H*W for coord j
  std::vector<int64_t> plane;        // anchor -> H_l*W_l
  std::vector<int> level;            // anchor -> level
};

// Sampled predictions and targets for the five instance loss terms.
template <typename T>
struct InstanceTrainOutput {
  Var<T> objectness;             // [S] sampled anchor logits
  Tensor<T> objectness_labels;   // [S] in {0, 1}
  Var<T> rpn_deltas;             // [P*4] positive anchor deltas
  Tensor<T> rpn_targets;         // [P*4]
  Var<T> class_logits;           // [R, T+1]
  std::vector<int64_t> class_labels;
  Var<T> box_deltas;             // [Q*4] positive RoI deltas of the gt class
  Tensor<T> box_targets;         // [Q*4]
  Var<T> mask_logits;            // [Q*28*28] gt-class mask logits
  Tensor<T> mask_targets;        // [Q*28*28] in {0, 1}
  int64_t num_positive_anchors = 0;
  int64_t num_positive_rois = 0;
};

template <typename T>
class InstanceHead : public nn::Module<T> {
 public:
  using Sep = nn::SeparableConv2d<T>;

  InstanceHead(Rng& rng, int fpn_channels, int num_things, const InstanceHeadConfig& cfg)
      : cfg_(cfg), channels_(fpn_channels), things_(num_things) {
    PANDEPTH_CHECK_ARG(num_things >= 1, "instance head: need at least one thing class");
    const int c = fpn_channels;
    const int a = static_cast<int>(cfg.anchors.ratios.size());
    typename Sep::Options conv{3, 1, 1, false, true};
    typename Sep::Options point{1, 1, 1, false, false};
    rpn_conv_ = &this->add_module("rpn_conv", std::make_unique<Sep>(rng, c, c, conv));
    rpn_score_ = &this->add_module("rpn_objectness", std::make_unique<Sep>(rng, c, a, point));
    rpn_delta_ = &this->add_module("rpn_deltas", std::make_unique<Sep>(rng, c, 4 * a, point));
    fc1_ = &this->add_module("box_fc1", std::make_unique<nn::Linear<T>>(rng, c * 49, cfg.box_head_dim));
    fc2_ = &this->add_module("box_fc2", std::make_unique<nn::Linear<T>>(rng, cfg.box_head_dim, cfg.box_head_dim));
    cls_ = &this->add_module("box_classifier", std::make_unique<nn::Linear<T>>(rng, cfg.box_head_dim, num_things + 1));
    reg_ = &this->add_module("box_regressor",
                             std::make_unique<nn::Linear<T>>(rng, cfg.box_head_dim, 4 * (num_things + 1)));
    for (int i = 0; i < cfg.mask_head_convs; ++i)
      mask_convs_.push_back(&this->add_module("mask_conv" + std::to_string(i), std::make_unique<Sep>(rng, c, c)));
    mask_up_ = &this->add_module("mask_upsample", std::make_unique<nn::SeparableConvTranspose2d<T>>(rng, c, c));
    mask_out_ = &this->add_module("mask_logits", std::make_unique<Sep>(rng, c, num_things, point));
  }

  const char* kind() const override { return "InstanceHead"; }
  const InstanceHeadConfig& config() const { return cfg_; }
  int num_things() const { return things_; }

  RpnOutput<T> rpn(const FeaturePyramid<T>& pyr) {
    RpnOutput<T> out;
    std::vector<Var<T>> scores, deltas;
    const int na = static_cast<int>(cfg_.anchors.ratios.size());
    int64_t soff = 0, doff = 0;
    for (int l = 0; l < 4; ++l) {
      const Var<T>& f = pyr.levels[l];
      PANDEPTH_CHECK_ARG(f.dim(1) == channels_, "instance head: pyramid channel mismatch");
      Var<T> h = (*rpn_conv_)(f);
      Var<T> s = (*rpn_score_)(h);
      Var<T> d = (*rpn_delta_)(h);
      scores.push_back(ops::reshape(s, Shape{s.numel()}));
      deltas.push_back(ops::reshape(d, Shape{d.numel()}));
      const int64_t fh = f.dim(2), fw = f.dim(3), hw = fh * fw;
      auto anchors = boxes::level_anchors(fh, fw, kPyramidStrides[l], cfg_.anchors.sizes[l], cfg_.anchors.ratios);
      for (int64_t y = 0; y < fh; ++y)
        for (int64_t x = 0; x < fw; ++x)
          for (int a = 0; a < na; ++a) {
            out.score_index.push_back(soff + a * hw + y * fw + x);
            out.delta_index.push_back(doff + a * 4 * hw + y * fw + x);
            out.plane.push_back(hw);
            out.level.push_back(l);
          }
      out.anchors.insert(out.anchors.end(), anchors.begin(), anchors.end());
      soff += s.numel();
      doff += d.numel();
    }
    out.objectness = ops::concat(scores, 0);
    out.deltas = ops::concat(deltas, 0);
    return out;
  }

  // Decodes, clips and suppresses anchors into at most `post_topk`
  // proposals, ordered by descending objectness.
  std::vector<Proposal> proposals(const RpnOutput<T>& r, int64_t image_h, int64_t image_w, int pre_topk,
                                  int post_topk) const {
    const boxes::BoxCoder coder;
    std::vector<Proposal> all;
    std::vector<int> all_level;
    const auto& sv = r.objectness.value();
    const auto& dv = r.deltas.value();
    for (int l = 0; l < 4; ++l) {
      std::vector<int64_t> idx;
      for (size_t i = 0; i < r.anchors.size(); ++i)
        if (r.level[i] == l) idx.push_back(static_cast<int64_t>(i));
      auto score = [&](int64_t i) { return static_cast<double>(sv[r.score_index[i]]); };
      std::stable_sort(idx.begin(), idx.end(), [&](int64_t a, int64_t b) { return score(a) > score(b); });
      if (static_cast<int>(idx.size()) > pre_topk) idx.resize(static_cast<size_t>(pre_topk));
      std::vector<Box> bx;
      std::vector<double> sc;
      for (int64_t i : idx) {
        double d[4];
        for (int j = 0; j < 4; ++j) d[j] = dv[r.delta_index[i] + j * r.plane[i]];
        Box b = boxes::clip(coder.decode(r.anchors[i], d), static_cast<double>(image_w), static_cast<double>(image_h));
        if (!(b.width() > 0 && b.height() > 0)) continue;
        bx.push_back(b);
        sc.push_back(ops::sigmoid_scalar(score(i)));
      }
      for (int64_t k : boxes::nms(bx, sc, cfg_.anchors.rpn_nms)) {
        all.push_back({bx[k], sc[k]});
        all_level.push_back(l);
      }
    }
    std::vector<size_t> order(all.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return all[a].score > all[b].score; });
    std::vector<Proposal> out;
    for (size_t i = 0; i < order.size() && static_cast<int>(out.size()) < post_topk; ++i) out.push_back(all[order[i]]);
    return out;
  }

  std::vector<Proposal> rpn_propose(const FeaturePyramid<T>& pyr, int64_t image_h, int64_t image_w) {
    const auto& a = cfg_.anchors;
    const bool train = this->training();
    return proposals(rpn(pyr), image_h, image_w, train ? a.pre_nms_topk_train : a.pre_nms_topk_eval,
                     train ? a.post_nms_topk_train : a.post_nms_topk_eval);
  }

  // Box sub-branch: [R, T+1] class logits and [R, 4(T+1)] deltas.
  std::pair<Var<T>, Var<T>> box_head(const FeaturePyramid<T>& pyr, const std::vector<Box>& rois) {
    Var<T> f = ops::roi_align(pyr.as_vector(), strides(), leveled(rois), 7, 7);
    f = ops::reshape(f, Shape{f.dim(0), f.numel() / f.dim(0)});
    f = ops::leaky_relu((*fc1_)(f), static_cast<T>(nn::kLeakySlope));
    f = ops::leaky_relu((*fc2_)(f), static_cast<T>(nn::kLeakySlope));
    return {(*cls_)(f), (*reg_)(f)};
  }

  // Mask sub-branch: [R, T, 28, 28] logits.
  Var<T> mask_head(const FeaturePyramid<T>& pyr, const std::vector<Box>& rois) {
    Var<T> f = ops::roi_align(pyr.as_vector(), strides(), leveled(rois), kMaskSize / 2, kMaskSize / 2);
    for (auto* c : mask_convs_) f = (*c)(f);
    return (*mask_out_)((*mask_up_)(f));
  }

  // Detections from proposals: per-class decoding, score filter, per-class
  // NMS, and mask logits of the predicted class.
  std::vector<InstancePrediction> roi_heads(const FeaturePyramid<T>& pyr, const std::vector<Proposal>& props,
                                            const LabelSchema& schema, int64_t image_h, int64_t image_w) {
    std::vector<InstancePrediction> out;
    if (props.empty()) return out;
    std::vector<Box> rois;
    for (const auto& p : props) rois.push_back(p.box);
    auto [logits, deltas] = box_head(pyr, rois);
    const int nk = things_ + 1;
    const boxes::BoxCoder coder{{10, 10, 5, 5}};
    std::vector<Box> cand;
    std::vector<double> cand_score;
    std::vector<int> cand_class;
    for (size_t i = 0; i < rois.size(); ++i) {
      const T* z = logits.value().data() + i * nk;
      const T mx = *std::max_element(z, z + nk);
      double den = 0;
      for (int k = 0; k < nk; ++k) den += std::exp(static_cast<double>(z[k] - mx));
      for (int k = 1; k < nk; ++k) {
        const double p = std::exp(static_cast<double>(z[k] - mx)) / den;
        if (p < cfg_.anchors.score_thresh) continue;
        double d[4];
        for (int j = 0; j < 4; ++j) d[j] = deltas.value()[i * 4 * nk + 4 * k + j];
        Box b = boxes::clip(coder.decode(rois[i], d), static_cast<double>(image_w), static_cast<double>(image_h));
        if (!(b.width() > 0 && b.height() > 0)) continue;
        cand.push_back(b);
        cand_score.push_back(p);
        cand_class.push_back(k);
      }
    }
    std::vector<int64_t> kept;
    for (int k = 1; k < nk; ++k) {
      std::vector<int64_t> idx;
      std::vector<Box> bx;
      std::vector<double> sc;
      for (size_t i = 0; i < cand.size(); ++i)
        if (cand_class[i] == k) {
          idx.push_back(static_cast<int64_t>(i));
          bx.push_back(cand[i]);
          sc.push_back(cand_score[i]);
        }
      for (int64_t j : boxes::nms(bx, sc, cfg_.anchors.detection_nms)) kept.push_back(idx[j]);
    }
    std::stable_sort(kept.begin(), kept.end(), [&](int64_t a, int64_t b) {
      return cand_score[a] > cand_score[b] || (cand_score[a] == cand_score[b] && a < b);
    });
    if (static_cast<int>(kept.size()) > cfg_.anchors.max_detections)
      kept.resize(static_cast<size_t>(cfg_.anchors.max_detections));
    if (kept.empty()) return out;
    std::vector<Box> det;
    for (int64_t i : kept) det.push_back(cand[i]);
    Var<T> masks = mask_head(pyr, det);
    constexpr int m2 = kMaskSize * kMaskSize;
    for (size_t r = 0; r < kept.size(); ++r) {
      InstancePrediction p;
      p.box = det[r];
      p.class_id = schema.thing_class(cand_class[kept[r]]);
      p.score = static_cast<float>(cand_score[kept[r]]);
      const T* src = masks.value().data() + (r * things_ + (cand_class[kept[r]] - 1)) * m2;
      for (int q = 0; q < m2; ++q) p.mask_logits[q] = static_cast<float>(src[q]);
      out.push_back(p);
    }
    return out;
  }

  std::vector<InstancePrediction> infer(const FeaturePyramid<T>& pyr, const LabelSchema& schema, int64_t image_h,
                                        int64_t image_w) {
    return roi_heads(pyr, rpn_propose(pyr, image_h, image_w), schema, image_h, image_w);
  }

  // Training pass: anchor and RoI matching, balanced sampling, and the
  // predictions/targets consumed by the instance loss.
  InstanceTrainOutput<T> train_forward(const FeaturePyramid<T>& pyr, const InstanceTargets& gt,
                                       const LabelSchema& schema, int64_t image_h, int64_t image_w, Rng& rng) {
    const auto& ac = cfg_.anchors;
    InstanceTrainOutput<T> out;
    RpnOutput<T> r = rpn(pyr);

    // Anchors.
    auto am = boxes::match(r.anchors, gt.boxes, ac.rpn_positive_iou, ac.rpn_negative_iou, true);
    auto as = boxes::sample_balanced(am, static_cast<size_t>(ac.rpn_batch), ac.rpn_positive_fraction, rng);
    std::vector<int64_t> sidx;
    std::vector<T> slab;
    for (int64_t i : as.positive) sidx.push_back(r.score_index[i]), slab.push_back(T(1));
    for (int64_t i : as.negative) sidx.push_back(r.score_index[i]), slab.push_back(T(0));
    out.objectness = ops::take(r.objectness, sidx);
    out.objectness_labels = Tensor<T>::from_vector(std::move(slab));
    const boxes::BoxCoder rpn_coder;
    std::vector<int64_t> didx;
    std::vector<T> dtgt;
    for (int64_t i : as.positive) {
      const auto t = rpn_coder.encode(r.anchors[i], gt.boxes[am[i]]);
      for (int j = 0; j < 4; ++j) {
        didx.push_back(r.delta_index[i] + j * r.plane[i]);
        dtgt.push_back(static_cast<T>(t[j]));
      }
    }
    out.num_positive_anchors = static_cast<int64_t>(as.positive.size());
    out.rpn_deltas = ops::take(r.deltas, didx);
    out.rpn_targets = Tensor<T>::from_vector(std::move(dtgt));

    // RoIs: proposals plus ground truth.
    std::vector<Box> cand;
    {
      NoGradGuard ng;
      for (const auto& p : proposals(r, image_h, image_w, ac.pre_nms_topk_train, ac.post_nms_topk_train))
        cand.push_back(p.box);
    }
    cand.insert(cand.end(), gt.boxes.begin(), gt.boxes.end());
    auto rm = boxes::match(cand, gt.boxes, ac.roi_positive_iou, ac.roi_positive_iou, false);
    auto rs = boxes::sample_balanced(rm, static_cast<size_t>(ac.roi_batch), ac.roi_positive_fraction, rng);
    std::vector<Box> rois;
    for (int64_t i : rs.positive) {
      rois.push_back(cand[i]);
      out.class_labels.push_back(schema.thing_index(gt.classes[rm[i]]));
    }
    for (int64_t i : rs.negative) {
      rois.push_back(cand[i]);
      out.class_labels.push_back(0);
    }
    out.num_positive_rois = static_cast<int64_t>(rs.positive.size());
    if (rois.empty()) {
      out.class_logits = Var<T>(Tensor<T>(Shape{0, things_ + 1}));
      out.box_deltas = Var<T>(Tensor<T>(Shape{0}));
      out.mask_logits = Var<T>(Tensor<T>(Shape{0}));
      return out;
    }
    auto [logits, deltas] = box_head(pyr, rois);
    out.class_logits = logits;
    const int nk = things_ + 1;
    const boxes::BoxCoder roi_coder{{10, 10, 5, 5}};
    std::vector<int64_t> bidx;
    std::vector<T> btgt;
    std::vector<Box> pos_rois;
    for (size_t q = 0; q < rs.positive.size(); ++q) {
      const int64_t i = rs.positive[q];
      const int k = static_cast<int>(out.class_labels[q]);
      const auto t = roi_coder.encode(cand[i], gt.boxes[rm[i]]);
      for (int j = 0; j < 4; ++j) {
        bidx.push_back(static_cast<int64_t>(q) * 4 * nk + 4 * k + j);
        btgt.push_back(static_cast<T>(t[j]));
      }
      pos_rois.push_back(cand[i]);
    }
    out.box_deltas = ops::take(deltas, bidx);
    out.box_targets = Tensor<T>::from_vector(std::move(btgt));

    // Masks of positive RoIs.
    if (pos_rois.empty()) {
      out.mask_logits = Var<T>(Tensor<T>(Shape{0}));
      return out;
    }
    Var<T> masks = mask_head(pyr, pos_rois);
    constexpr int m2 = kMaskSize * kMaskSize;
    std::vector<int64_t> midx;
    Tensor<T> mtgt(Shape{static_cast<int64_t>(pos_rois.size()) * m2});
    for (size_t q = 0; q < rs.positive.size(); ++q) {
      const int64_t i = rs.positive[q];
      const int k = static_cast<int>(out.class_labels[q]);
      for (int p = 0; p < m2; ++p) midx.push_back((static_cast<int64_t>(q) * things_ + (k - 1)) * m2 + p);
      const Tensor<T> m = mask_target(gt.masks[rm[i]], cand[i]);
      std::copy_n(m.data(), m2, mtgt.data() + q * m2);
    }
    out.mask_logits = ops::take(masks, midx);
    out.mask_targets = std::move(mtgt);
    return out;
  }

  // Ground-truth mask resampled onto the 28x28 RoI grid, binarised at 0.5.
  static Tensor<T> mask_target(const Grid<uint8_t>& mask, const Box& roi) {
    Tensor<T> plane(Shape{1, 1, mask.h, mask.w});
    for (int64_t i = 0; i < mask.size(); ++i) plane[i] = static_cast<T>(mask.data[i]);
    NoGradGuard ng;
    Var<T> a = ops::roi_align(std::vector<Var<T>>{Var<T>(plane)}, std::vector<int>{1},
                              std::vector<ops::LeveledBox>{{roi.x1, roi.y1, roi.x2, roi.y2, 0}}, kMaskSize, kMaskSize);
    Tensor<T> out(Shape{kMaskSize * kMaskSize});
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] >= T(0.5) ? T(1) : T(0);
    return out;
  }

 private:
  static std::vector<int> strides() { return {kPyramidStrides.begin(), kPyramidStrides.end()}; }

  static std::vector<ops::LeveledBox> leveled(const std::vector<Box>& rois) {
    std::vector<ops::LeveledBox> out;
    out.reserve(rois.size());
    for (const auto& b : rois) out.push_back({b.x1, b.y1, b.x2, b.y2, roi_level(b)});
    return out;
  }

  InstanceHeadConfig cfg_;
  int channels_;
  int things_;
  Sep* rpn_conv_ = nullptr;
  Sep* rpn_score_ = nullptr;
  Sep* rpn_delta_ = nullptr;
  nn::Linear<T>* fc1_ = nullptr;
  nn::Linear<T>* fc2_ = nullptr;
  nn::Linear<T>* cls_ = nullptr;
  nn::Linear<T>* reg_ = nullptr;
  std::vector<Sep*> mask_convs_;
  nn::SeparableConvTranspose2d<T>* mask_up_ = nullptr;
  Sep* mask_out_ = nullptr;
};

}  // namespace pandepth

#endif  // PANDEPTH_INSTANCE_BRANCH_HPP_
