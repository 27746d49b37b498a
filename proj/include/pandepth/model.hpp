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

#ifndef PANDEPTH_MODEL_HPP_
#define PANDEPTH_MODEL_HPP_

#include <memory>
#include <string>
#include <vector>

#include "pandepth/backbone.hpp"
#include "pandepth/depth_branch.hpp"
#include "pandepth/instance_branch.hpp"
#include "pandepth/joint_branch.hpp"
#include "pandepth/semantic_branch.hpp"

namespace pandepth {

struct BranchToggles {
  bool semantic = true;
  bool instance = true;
  bool depth = true;

  bool joint() const { return semantic && depth; }
  bool backbone() const { return semantic || instance; }
};

struct ModelConfig {
  std::string preset = "b5";
  BackboneConfig backbone;
  SemanticHeadConfig semantic;
  InstanceHeadConfig instance;
  DepthHeadConfig depth;
  JointHeadConfig joint;
  BranchToggles branches;

  // Full-size network.
  static ModelConfig b5(const LabelSchema& schema) {
    ModelConfig c;
    c.preset = "b5";
    c.set_classes(schema.num_channels());
    return c;
  }

  // Desk-scale network for tests and smoke runs.
  static ModelConfig tiny(const LabelSchema& schema) {
    ModelConfig c;
    c.preset = "tiny";
    c.backbone.width_mult = 0.25;
    c.backbone.depth_mult = 0.34;
    c.backbone.fpn_channels = 32;
    c.semantic.channels = 16;
    c.instance.box_head_dim = 64;
    c.instance.anchors.pre_nms_topk_train = 400;
    c.instance.anchors.pre_nms_topk_eval = 400;
    c.instance.anchors.post_nms_topk_train = 200;
    c.instance.anchors.post_nms_topk_eval = 100;
    c.instance.anchors.rpn_batch = 128;
    c.instance.anchors.roi_batch = 128;
    c.depth.stem_channels = 8;
    c.depth.fuse.channels = 16;
    c.depth.fuse.mlp_width = 8;
    c.joint.hidden = 16;
    c.set_classes(schema.num_channels());
    return c;
  }

  static ModelConfig from_preset(const std::string& name, const LabelSchema& schema) {
    if (name == "b5") return b5(schema);
    if (name == "tiny") return tiny(schema);
    throw ConfigError("unknown model preset '" + name + "' (expected b5 or tiny)");
  }

  void set_classes(int nc) {
    semantic.num_classes = nc;
    depth.num_classes = nc;
    joint.num_classes = nc;
  }

  void set_depth_max(double m) {
    depth.depth_max = m;
    joint.depth_max = m;
  }
};

// Differentiable outputs of the dense branches for one frame.
template <typename T>
struct DenseOutputs {
  FeaturePyramid<T> pyramid;  // on the padded frame
  Var<T> preliminary;         // [1, nc, H, W]
  Var<T> refined;             // [1, nc, H, W]; equals preliminary without the joint branch
  Var<T> depth;               // [1, 1, H, W] metres
};

// Inference result before panoptic fusion.
struct RawPrediction {
  SemanticLogits semantic;
  std::vector<InstancePrediction> instances;
  DenseDepthMap depth;
  bool has_semantic = false;
  bool has_instances = false;
  bool has_depth = false;
};

struct ParamTable {
  int64_t backbone = 0, fpn = 0, semantic = 0, instance = 0, depth = 0, joint = 0;
  int64_t total() const { return backbone + fpn + semantic + instance + depth + joint; }
};

inline int64_t padded_size(int64_t n) { return std::max<int64_t>(32, (n + 31) / 32 * 32); }

template <typename T>
class PanDepth : public nn::Module<T> {
 public:
  PanDepth(const ModelConfig& cfg, const LabelSchema& schema, uint64_t seed) : cfg_(cfg), schema_(schema) {
    PANDEPTH_CHECK_ARG(cfg.semantic.num_classes == schema.num_channels(), "model: class count does not match schema");
    Rng rng(derive_seed(seed, fnv1a64("init")));
    const auto& b = cfg.branches;
    if (b.backbone()) backbone_ = &this->add_module("backbone", std::make_unique<Backbone<T>>(rng, cfg.backbone));
    if (b.semantic)
      semantic_ = &this->add_module("semantic",
                                    std::make_unique<SemanticHead<T>>(rng, cfg.backbone.fpn_channels, cfg.semantic));
    if (b.instance)
      instance_ = &this->add_module("instance", std::make_unique<InstanceHead<T>>(
                                                    rng, cfg.backbone.fpn_channels, schema.num_things(), cfg.instance));
    if (b.depth) depth_ = &this->add_module("depth", std::make_unique<DepthHead<T>>(rng, cfg.depth));
    if (b.joint()) joint_ = &this->add_module("joint", std::make_unique<JointHead<T>>(rng, cfg.joint));
  }

  const char* kind() const override { return "PanDepth"; }
  const ModelConfig& config() const { return cfg_; }
  const LabelSchema& schema() const { return schema_; }

  Backbone<T>* backbone() { return backbone_; }
  SemanticHead<T>* semantic() { return semantic_; }
  InstanceHead<T>* instance() { return instance_; }
  DepthHead<T>* depth() { return depth_; }
  JointHead<T>* joint() { return joint_; }

  ParamTable param_table() const {
    ParamTable t;
    if (backbone_) {
      t.backbone = backbone_->encoder().num_parameters();
      t.fpn = backbone_->fpn().num_parameters();
    }
    if (semantic_) t.semantic = semantic_->num_parameters();
    if (instance_) t.instance = instance_->num_parameters();
    if (depth_) t.depth = depth_->num_parameters();
    if (joint_) t.joint = joint_->num_parameters();
    return t;
  }

  // Semantic, depth and joint branches. `graph` must come from the same
  // sparse map (see build_point_graph).
  DenseOutputs<T> forward_dense(const ImageFrame& frame, const SparseDepthMap& sparse, const PointGraph* graph) {
    validate(frame);
    DenseOutputs<T> out;
    const int64_t h = frame.h, w = frame.w;
    Var<T> rgb(frame_tensor<T>(frame));
    if (backbone_) out.pyramid = (*backbone_)(ops::crop_or_pad(rgb, padded_size(h), padded_size(w)));
    if (semantic_) {
      out.preliminary = ops::crop_or_pad((*semantic_)(out.pyramid), h, w);
      out.refined = out.preliminary;
    }
    if (depth_) {
      PANDEPTH_CHECK_ARG(sparse.h() == h && sparse.w() == w, "model: sparse depth does not match frame size");
      PANDEPTH_CHECK_ARG(graph != nullptr, "model: depth branch needs a point graph");
      Tensor<T> s(Shape{1, 1, h, w});
      for (int64_t i = 0; i < h * w; ++i) s[i] = static_cast<T>(sparse.depth.data[i]);
      Var<T> prob = semantic_ ? ops::channel_softmax(out.preliminary)
                              : Var<T>(Tensor<T>(Shape{1, cfg_.semantic.num_classes, h, w}));
      out.depth = (*depth_)(Var<T>(std::move(s)), rgb, prob, *graph);
    }
    if (joint_) out.refined = (*joint_)(out.preliminary, out.depth);
    return out;
  }

  PointGraph point_graph(const SparseDepthMap& sparse, const CameraIntrinsics& k) const {
    return build_point_graph(backproject(sparse, k), cfg_.depth.fuse.k);
  }

  // Inference in evaluation mode without graph recording.
  RawPrediction infer(const ImageFrame& frame, const SparseDepthMap& sparse, const CameraIntrinsics& k) {
    NoGradGuard ng;
    const bool was_training = this->training();
    this->set_training(false);
    RawPrediction p;
    std::unique_ptr<PointGraph> graph;
    if (depth_) graph = std::make_unique<PointGraph>(point_graph(sparse, k));
    DenseOutputs<T> d = forward_dense(frame, sparse, graph.get());
    if (semantic_) {
      p.has_semantic = true;
      p.semantic = to_logits(d.refined);
    }
    if (depth_) {
      p.has_depth = true;
      p.depth = DenseDepthMap(frame.h, frame.w);
      for (int64_t i = 0; i < frame.h * frame.w; ++i) p.depth.depth.data[i] = static_cast<float>(d.depth.value()[i]);
    }
    if (instance_) {
      p.has_instances = true;
      p.instances = instance_->infer(d.pyramid, schema_, frame.h, frame.w);
    }
    this->set_training(was_training);
    return p;
  }

  static SemanticLogits to_logits(const Var<T>& v) {
    SemanticLogits s;
    s.nc = static_cast<int>(v.dim(1));
    s.h = v.dim(2);
    s.w = v.dim(3);
    s.logits.resize(static_cast<size_t>(v.numel()));
    for (int64_t i = 0; i < v.numel(); ++i) s.logits[i] = static_cast<float>(v.value()[i]);
    return s;
  }

 private:
  ModelConfig cfg_;
  LabelSchema schema_;
  Backbone<T>* backbone_ = nullptr;
  SemanticHead<T>* semantic_ = nullptr;
  InstanceHead<T>* instance_ = nullptr;
  DepthHead<T>* depth_ = nullptr;
  JointHead<T>* joint_ = nullptr;
};

}  // namespace pandepth

#endif  // PANDEPTH_MODEL_HPP_
