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

#include <gtest/gtest.h>

#include <cmath>

#include "pandepth/harness.hpp"

namespace pandepth {
namespace {

const LabelSchema& schema() {
  static const LabelSchema s = LabelSchema::vkitti2();
  return s;
}

std::unique_ptr<Model> tiny_model(BranchToggles b = {}, uint64_t seed = 1) {
  ModelConfig cfg = ModelConfig::tiny(schema());
  cfg.branches = b;
  return std::make_unique<Model>(cfg, schema(), seed);
}

Sample sample_of_size(int64_t h, int64_t w, int64_t index = 0) {
  DataConfig dc;
  dc.height = h;
  dc.width = w;
  return synthetic_sample(5, index, schema(), dc);
}

// ------------------------------------------------------------------ shapes

class Shapes : public ::testing::TestWithParam<std::pair<int64_t, int64_t>> {};

TEST_P(Shapes, EveryOutputMatchesTheInput) {
  const auto [h, w] = GetParam();
  auto model = tiny_model();
  const Sample s = sample_of_size(h, w);
  const PointGraph g = model->point_graph(s.input_depth, s.intrinsics);
  model->set_training(true);
  DenseOutputs<float> d = model->forward_dense(s.frame, s.input_depth, &g);

  const int64_t ph = padded_size(h), pw = padded_size(w);
  const int strides[4] = {4, 8, 16, 32};
  for (int l = 0; l < 4; ++l) {
    const auto& p = d.pyramid.levels[l];
    ASSERT_EQ(p.shape().size(), 4u);
    EXPECT_EQ(p.dim(1), model->config().backbone.fpn_channels);
    EXPECT_EQ(p.dim(2) * strides[l], ph) << "level " << l;
    EXPECT_EQ(p.dim(3) * strides[l], pw) << "level " << l;
  }
  EXPECT_EQ(d.preliminary.shape(), (Shape{1, schema().num_channels(), h, w}));
  EXPECT_EQ(d.refined.shape(), (Shape{1, schema().num_channels(), h, w}));
  EXPECT_EQ(d.depth.shape(), (Shape{1, 1, h, w}));
  for (float v : d.depth.value().values()) {
    ASSERT_TRUE(std::isfinite(v));
    ASSERT_GT(v, 0.f);
  }

  Rng rng(3);
  const InstanceTargets t = instance_targets(s.panoptic_gt, schema());
  const auto io = model->instance()->train_forward(d.pyramid, t, schema(), h, w, rng);
  EXPECT_EQ(io.mask_logits.numel(), io.num_positive_rois * kMaskSize * kMaskSize);
  EXPECT_EQ(io.mask_targets.numel(), io.mask_logits.numel());
  EXPECT_EQ(io.class_logits.dim(1), schema().num_things() + 1);

  const RawPrediction raw = model->infer(s.frame, s.input_depth, s.intrinsics);
  ASSERT_TRUE(raw.has_semantic && raw.has_instances && raw.has_depth);
  EXPECT_EQ(raw.semantic.nc, schema().num_channels());
  EXPECT_EQ(raw.semantic.h, h);
  EXPECT_EQ(raw.semantic.w, w);
  EXPECT_EQ(raw.depth.h(), h);
  EXPECT_EQ(raw.depth.w(), w);
  for (const auto& inst : raw.instances) {
    EXPECT_EQ(inst.mask_logits.size(), static_cast<size_t>(kMaskSize * kMaskSize));
    EXPECT_TRUE(schema().is_thing(inst.class_id));
  }
  const PanopticMap p = panoptic_fuse(raw.semantic, raw.instances, schema());
  EXPECT_EQ(p.h(), h);
  EXPECT_EQ(p.w(), w);
  EXPECT_NO_THROW(validate(p, schema()));
}

INSTANTIATE_TEST_SUITE_P(Sizes, Shapes,
                         ::testing::Values(std::pair<int64_t, int64_t>{64, 64}, std::pair<int64_t, int64_t>{50, 70},
                                           std::pair<int64_t, int64_t>{33, 100}, std::pair<int64_t, int64_t>{96, 192},
                                           std::pair<int64_t, int64_t>{128, 96},
                                           std::pair<int64_t, int64_t>{200, 1000}));

TEST(Shapes, PaddingRoundsUpToMultiplesOf32) {
  EXPECT_EQ(padded_size(1), 32);
  EXPECT_EQ(padded_size(32), 32);
  EXPECT_EQ(padded_size(33), 64);
  EXPECT_EQ(padded_size(200), 224);
  EXPECT_EQ(padded_size(1000), 1024);
}

// ------------------------------------------------------------------ parameters

TEST(Parameters, FullSizeBudget) {
  const Model m(ModelConfig::b5(schema()), schema(), 0);
  const ParamTable t = m.param_table();
  auto within = [](int64_t got, double millions) {
    EXPECT_NEAR(static_cast<double>(got) / 1e6, millions, 0.15 * millions) << "expected about " << millions << "M";
  };
  within(t.backbone, 25.2);
  within(t.fpn, 1.5);
  within(t.semantic, 1.2);
  within(t.instance, 53.1);
  within(t.depth, 1.9);
  within(t.joint, 1.2);
  within(t.total(), 84.0);
  EXPECT_EQ(t.total(), m.num_parameters());
}

TEST(Parameters, TinyPresetIsStable) {
  const auto m = tiny_model();
  EXPECT_EQ(m->num_parameters(), 363421);
  EXPECT_EQ(m->param_table().total(), m->num_parameters());
}

TEST(Parameters, SameSeedSameWeights) {
  auto a = tiny_model({}, 4), b = tiny_model({}, 4), c = tiny_model({}, 5);
  auto pa = a->named_parameters(), pb = b->named_parameters(), pc = c->named_parameters();
  ASSERT_EQ(pa.size(), pb.size());
  bool differs = false;
  for (size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].first, pb[i].first);
    EXPECT_EQ(pa[i].second->value().values()[0], pb[i].second->value().values()[0]);
    const auto va = pa[i].second->value().values(), vc = pc[i].second->value().values();
    differs = differs || !std::equal(va.begin(), va.end(), vc.begin());
  }
  EXPECT_TRUE(differs);
}

// ------------------------------------------------------------------ branches

TEST(Branches, DisablingRemovesModules) {
  auto sem = tiny_model({true, false, false});
  EXPECT_TRUE(sem->semantic());
  EXPECT_FALSE(sem->instance());
  EXPECT_FALSE(sem->depth());
  EXPECT_FALSE(sem->joint());
  EXPECT_EQ(sem->param_table().instance, 0);

  auto depth = tiny_model({false, false, true});
  EXPECT_FALSE(depth->backbone());
  EXPECT_EQ(depth->param_table().backbone, 0);
  EXPECT_EQ(depth->param_table().fpn, 0);

  auto inst = tiny_model({false, true, false});
  EXPECT_TRUE(inst->backbone());
  EXPECT_FALSE(inst->joint());
}

TEST(Branches, EachToggleRunsEndToEnd) {
  const Sample s = sample_of_size(64, 96);
  for (BranchToggles b : {BranchToggles{true, false, false}, BranchToggles{false, true, false},
                          BranchToggles{false, false, true}, BranchToggles{true, true, false},
                          BranchToggles{true, false, true}}) {
    auto m = tiny_model(b);
    const RawPrediction raw = m->infer(s.frame, s.input_depth, s.intrinsics);
    EXPECT_EQ(raw.has_semantic, b.semantic);
    EXPECT_EQ(raw.has_instances, b.instance);
    EXPECT_EQ(raw.has_depth, b.depth);
    Rng rng(1);
    m->set_training(true);
    const StepLoss<float> l = frame_loss(*m, s, rng);
    EXPECT_TRUE(finite_report(l.report));
    EXPECT_NEAR(l.joint.item(), l.report.joint, 1e-3 * std::max(1.0, l.report.joint));
    if (!b.depth) { EXPECT_EQ(l.report.depth, 0.0); }
    if (!b.semantic) { EXPECT_EQ(l.report.semantic, 0.0); }
    if (!b.instance) { EXPECT_EQ(l.report.instance(), 0.0); }
    const FramePrediction fp = to_frame_prediction(raw, schema(), FusionConfig{}, false, s.frame.h, s.frame.w);
    EXPECT_EQ(fp.panoptic.has_value(), b.semantic && b.instance);
  }
}

// ------------------------------------------------------------------ joint head

TEST(JointHead, StartsAsIdentityResidual) {
  auto m = tiny_model();
  const Sample s = sample_of_size(40, 72);
  const PointGraph g = m->point_graph(s.input_depth, s.intrinsics);
  DenseOutputs<float> d = m->forward_dense(s.frame, s.input_depth, &g);
  EXPECT_EQ(d.refined.value().values().size(), d.preliminary.value().values().size());
  const auto a = d.refined.value().values(), b = d.preliminary.value().values();
  EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
}

TEST(JointHead, DepthInfluencesRefinedLogits) {
  Rng rng(2);
  JointHeadConfig cfg;
  cfg.hidden = 4;
  cfg.num_classes = 3;
  cfg.zero_init_last = false;
  JointHead<double> head(rng, cfg);
  Tensor<double> logits(Shape{1, 3, 5, 5}), d1(Shape{1, 1, 5, 5}, 10.0), d2(Shape{1, 1, 5, 5}, 50.0);
  const auto r1 = head(Var<double>(logits), Var<double>(d1)).value();
  const auto r2 = head(Var<double>(logits), Var<double>(d2)).value();
  EXPECT_NE(r1.values()[12], r2.values()[12]);
  EXPECT_THROW(head(Var<double>(logits), Var<double>(Tensor<double>(Shape{1, 1, 4, 5}))), ArgumentError);
}

TEST(DepthHead, StartsNearConfiguredDepth) {
  auto m = tiny_model();
  const Sample s = sample_of_size(48, 64);
  const RawPrediction raw = m->infer(s.frame, s.input_depth, s.intrinsics);
  for (float v : raw.depth.depth.data) ASSERT_NEAR(v, 20.f, 1e-3f);
}

TEST(DepthHead, NeedsAtLeastOneSparsePoint) {
  auto m = tiny_model();
  const Sample s = sample_of_size(32, 32);
  EXPECT_THROW(m->infer(s.frame, SparseDepthMap(32, 32), s.intrinsics), ArgumentError);
}

}  // namespace
}  // namespace pandepth
