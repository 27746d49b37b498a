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

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <set>

#include "pandepth/boxes.hpp"
#include "pandepth/depth_branch.hpp"
#include "pandepth/geometry.hpp"
#include "pandepth/losses.hpp"
#include "pandepth/ops.hpp"
#include "pandepth/rng.hpp"
#include "pandepth/tensor.hpp"
#include "oracles.hpp"

namespace pandepth {
namespace {

using D = double;
using VarD = Var<D>;
using oracle::gradient_error;
using oracle::leaf;
using oracle::random_tensor;
using oracle::weighted_sum;

// ------------------------------------------------------------------ rng

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const uint64_t x = a.next();
    EXPECT_EQ(x, b.next());
    differs = differs || x != c.next();
  }
  EXPECT_TRUE(differs);
}

TEST(Rng, DeriveSeedDependsOnEveryKey) {
  const uint64_t s = derive_seed(1, 2, 3);
  EXPECT_EQ(s, derive_seed(1, 2, 3));
  EXPECT_NE(s, derive_seed(1, 3, 2));
  EXPECT_NE(s, derive_seed(2, 2, 3));
  EXPECT_NE(s, derive_seed(1, 2));
}

TEST(Rng, UniformAndIndexRanges) {
  Rng r(9);
  std::vector<int> hist(7, 0);
  for (int i = 0; i < 70000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    ++hist[r.index(7)];
  }
  for (int c : hist) EXPECT_NEAR(c, 10000, 500);
}

TEST(Rng, NormalMoments) {
  Rng r(5);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Rng, ShuffleIsAPermutation) {
  Rng r(3);
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  r.shuffle(v.begin(), v.end());
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
  EXPECT_FALSE(std::is_sorted(v.begin(), v.end()));
}

// ------------------------------------------------------------------ tensor

TEST(Tensor, ShapeAndIndexing) {
  Tensor<float> t(Shape{2, 3, 4});
  EXPECT_EQ(t.numel(), 24);
  t.at(1, 2, 3) = 5.f;
  EXPECT_EQ(t[23], 5.f);
  EXPECT_EQ(t.dim(-1), 4);
  EXPECT_THROW(Tensor<float>(Shape{2, 2}, std::vector<float>(3)), ArgumentError);
}

TEST(Tensor, FromVectorKeepsData) {
  const auto t = Tensor<double>::from_vector({1, 2, 3});
  ASSERT_EQ(t.shape(), Shape{3});
  EXPECT_EQ(t[2], 3.0);
}

TEST(Tensor, ReshapeChecksCount) {
  Tensor<float> t(Shape{4, 6});
  t.reshape(Shape{2, 12});
  EXPECT_EQ(t.dim(1), 12);
  EXPECT_THROW(t.reshape(Shape{5, 5}), ArgumentError);
}

// ------------------------------------------------------------------ gradients

constexpr double kTol = 1e-4;

TEST(Gradient, ElementwiseOps) {
  Rng rng(1);
  auto a = leaf(rng, {2, 3, 4, 5}), b = leaf(rng, {2, 3, 4, 5});
  EXPECT_LT(gradient_error({a, b}, [](const auto& v) { return weighted_sum(ops::mul(ops::add(v[0], v[1]), v[0])); }), kTol);
  EXPECT_LT(gradient_error({a}, [](const auto& v) { return weighted_sum(ops::sigmoid(v[0])); }), kTol);
  EXPECT_LT(gradient_error({a}, [](const auto& v) { return weighted_sum(ops::softplus(v[0])); }), kTol);
  EXPECT_LT(gradient_error({a}, [](const auto& v) { return weighted_sum(ops::leaky_relu(v[0], 0.1)); }), kTol);
}

TEST(Gradient, Conv2d) {
  Rng rng(2);
  auto x = leaf(rng, {2, 3, 7, 6}), w = leaf(rng, {4, 3, 3, 3}), b = leaf(rng, {4});
  EXPECT_LT(gradient_error({x, w, b},
                           [](const auto& v) { return weighted_sum(ops::conv2d(v[0], v[1], v[2], 2, 1, 1)); }),
            kTol);
  auto w1 = leaf(rng, {5, 3, 1, 1});
  EXPECT_LT(gradient_error({x, w1}, [](const auto& v) { return weighted_sum(ops::conv2d(v[0], v[1], VarD(), 1, 0, 1)); }),
            kTol);
  EXPECT_LT(gradient_error({x, w, b},
                           [](const auto& v) { return weighted_sum(ops::conv2d(v[0], v[1], v[2], 1, 2, 2)); }),
            kTol);
}

TEST(Gradient, DepthwiseConvolutions) {
  Rng rng(3);
  auto x = leaf(rng, {1, 3, 6, 5}), w = leaf(rng, {3, 1, 3, 3});
  EXPECT_LT(gradient_error({x, w},
                           [](const auto& v) { return weighted_sum(ops::depthwise_conv2d(v[0], v[1], 2, 1, 1)); }),
            kTol);
  auto wt = leaf(rng, {3, 1, 4, 4});
  EXPECT_LT(gradient_error({x, wt},
                           [](const auto& v) { return weighted_sum(ops::depthwise_conv_transpose2d(v[0], v[1], 2)); }),
            kTol);
}

TEST(Gradient, BatchNormTraining) {
  Rng rng(4);
  auto x = leaf(rng, {2, 3, 4, 4}), g = leaf(rng, {3}), b = leaf(rng, {3});
  Tensor<D> rm(Shape{3}), rv(Shape{3}, 1.0);
  EXPECT_LT(gradient_error({x, g, b},
                           [&](const auto& v) {
                             return weighted_sum(ops::batch_norm(v[0], v[1], v[2], rm, rv, true, 0.1, 1e-5));
                           }),
            kTol);
}

TEST(Gradient, SoftmaxResizeAndConcat) {
  Rng rng(5);
  auto a = leaf(rng, {1, 4, 3, 5}), b = leaf(rng, {1, 2, 3, 5});
  EXPECT_LT(gradient_error({a}, [](const auto& v) { return weighted_sum(ops::channel_softmax(v[0])); }), kTol);
  EXPECT_LT(gradient_error({a}, [](const auto& v) { return weighted_sum(ops::resize_bilinear(v[0], 7, 11)); }), kTol);
  EXPECT_LT(gradient_error({a}, [](const auto& v) { return weighted_sum(ops::resize_bilinear(v[0], 2, 2)); }), kTol);
  EXPECT_LT(gradient_error({a, b}, [](const auto& v) { return weighted_sum(ops::concat(std::vector<VarD>{v[0], v[1]}, 1)); }), kTol);
  EXPECT_LT(gradient_error({a}, [](const auto& v) { return weighted_sum(ops::spatial_mean(v[0])); }), kTol);
}

TEST(Gradient, Linear) {
  Rng rng(6);
  auto x = leaf(rng, {5, 4}), w = leaf(rng, {3, 4}), b = leaf(rng, {3});
  EXPECT_LT(gradient_error({x, w, b}, [](const auto& v) { return weighted_sum(ops::linear(v[0], v[1], v[2])); }), kTol);
}

TEST(Gradient, SemanticLoss) {
  Rng rng(7);
  const int64_t nc = 6, h = 5, w = 7;
  auto z = leaf(rng, {1, nc, h, w}, 2.0);
  LabelMap gt(h, w);
  for (auto& v : gt.data) v = static_cast<int32_t>(rng.index(nc));  // includes some void
  EXPECT_LT(gradient_error({z}, [&](const auto& v) { return semantic_loss(v[0], gt); }), kTol);
}

TEST(Gradient, SemanticLossKeepsWorstQuarter) {
  const int64_t nc = 3, h = 1, w = 8;
  Tensor<D> z(Shape{1, nc, h, w});
  LabelMap gt(h, w, 1);
  // Pixel i scores log-odds i for the correct class, so pixels 0 and 1 are
  // the two worst of eight.
  for (int64_t i = 0; i < w; ++i) z[1 * w + i] = static_cast<double>(i);
  const double l0 = std::log(2.0 + std::exp(0.0)) - 0.0, l1 = std::log(2.0 + std::exp(1.0)) - 1.0;
  EXPECT_NEAR(semantic_loss(VarD(z), gt).item(), 4.0 / 8.0 * (l0 + l1), 1e-12);
}

TEST(Gradient, DepthLoss) {
  Rng rng(8);
  auto p = leaf(rng, {1, 1, 6, 9}, 10.0);
  SparseDepthMap gt(6, 9);
  for (int64_t i = 0; i < 54; i += 3) gt.set(i, static_cast<float>(rng.uniform(1, 80)));
  EXPECT_LT(gradient_error({p}, [&](const auto& v) { return depth_loss(v[0], gt); }), kTol);
}

TEST(Gradient, DepthLossIsMeanSquaredMetres) {
  SparseDepthMap gt(1, 3);
  gt.set(0, 10.f);
  gt.set(2, 10.f);
  Tensor<D> p(Shape{1, 1, 1, 3});
  p[0] = 12;
  p[1] = 1000;
  p[2] = 6;
  EXPECT_NEAR(depth_loss(VarD(p), gt).item(), 10.0, 1e-12);
}

PointGraph random_graph(Rng& rng, int64_t h, int64_t w, int k) {
  SparseDepthMap d(h, w);
  for (int64_t i = 0; i < h * w; ++i)
    if (rng.uniform() < 0.4) d.set(i, static_cast<float>(rng.uniform(2, 40)));
  d.set(0, 5.f);
  return build_point_graph(backproject(d, CameraIntrinsics{20, 20, w / 2.0, h / 2.0}), k);
}

void randomize_bias(FuseBlock<D>& block, Rng& rng) {
  for (auto& [name, p] : block.named_parameters())
    if (name == "mlp1.bias")
      for (auto& v : p->mutable_value().values()) v = rng.uniform(0.1, 0.5) * (rng.uniform() < 0.5 ? -1 : 1);
}

TEST(Gradient, FuseBlockPointConvolution) {
  Rng rng(9);
  FuseBlockConfig cfg;
  cfg.channels = 4;
  cfg.mlp_width = 5;
  cfg.k = 3;
  FuseBlock<D> block(rng, cfg);
  const PointGraph g = random_graph(rng, 5, 6, cfg.k);
  auto x = leaf(rng, {1, cfg.channels, 5, 6});
  std::vector<VarD> inputs{x};
  // A zero bias puts every self-neighbour (offset 0) exactly on the leaky
  // ReLU kink, where central differences are meaningless.
  randomize_bias(block, rng);
  for (auto& [name, p] : block.named_parameters())
    if (name.rfind("mlp", 0) == 0) inputs.push_back(*p);
  ASSERT_EQ(inputs.size(), 5u);
  EXPECT_LT(gradient_error(inputs, [&](const auto& v) { return weighted_sum(block.point_conv(v[0], g)); }), kTol);
}

TEST(Gradient, FuseBlockFullForward) {
  Rng rng(10);
  FuseBlockConfig cfg;
  cfg.channels = 3;
  cfg.mlp_width = 4;
  cfg.k = 2;
  FuseBlock<D> block(rng, cfg);
  const PointGraph g = random_graph(rng, 4, 5, cfg.k);
  auto x = leaf(rng, {1, cfg.channels, 4, 5});
  std::vector<VarD> inputs{x};
  // A zero bias puts every self-neighbour (offset 0) exactly on the leaky
  // ReLU kink, where central differences are meaningless.
  randomize_bias(block, rng);
  for (auto& [name, p] : block.named_parameters()) inputs.push_back(*p);
  EXPECT_LT(gradient_error(inputs, [&](const auto& v) { return weighted_sum(block(v[0], g)); }), kTol);
}

TEST(Autograd, NoGradGuardSkipsGraph) {
  Rng rng(11);
  auto a = leaf(rng, {3});
  {
    NoGradGuard guard;
    EXPECT_FALSE(ops::sum(ops::mul(a, a)).requires_grad());
  }
  EXPECT_TRUE(ops::sum(ops::mul(a, a)).requires_grad());
}

TEST(Autograd, GradientsAccumulateUntilCleared) {
  auto a = VarD(Tensor<D>::from_vector({1, 2}), true);
  ops::sum(ops::mul(a, a)).backward();
  ops::sum(ops::mul(a, a)).backward();
  EXPECT_DOUBLE_EQ(a.grad()[1], 8.0);
  a.zero_grad();
  EXPECT_EQ(a.grad().numel(), 0);
}

// ------------------------------------------------------------------ losses

TEST(Losses, SemanticMatchesNaiveOracle) {
  Rng rng(31);
  for (int t = 0; t < 250; ++t) {
    const int64_t nc = 2 + static_cast<int64_t>(rng.index(14)), h = 1 + static_cast<int64_t>(rng.index(8)),
                  w = 1 + static_cast<int64_t>(rng.index(8));
    Tensor<D> z(Shape{1, nc, h, w});
    // Coarse logits produce ties in the per-pixel loss.
    const bool coarse = t % 3 == 0;
    for (auto& v : z.values()) v = coarse ? static_cast<double>(rng.index(3)) : rng.normal() * 3.0;
    LabelMap gt(h, w);
    for (auto& v : gt.data) v = static_cast<int32_t>(rng.index(static_cast<uint64_t>(nc)));
    gt.data[rng.index(gt.data.size())] = 1;
    const double got = semantic_loss(VarD(z), gt).item();
    ASSERT_NEAR(got, oracle::naive_semantic_loss(z.values(), nc, h, w, gt), 1e-6) << "trial " << t;
    ASSERT_GE(got, 0.0);
  }
}

TEST(Losses, SemanticUniformLogits) {
  LabelMap gt(2, 2);
  gt.data = {1, 2, 3, 1};
  EXPECT_NEAR(semantic_loss(VarD(Tensor<D>(Shape{1, 4, 2, 2})), gt).item(), std::log(4.0), 1e-12);
}

TEST(Losses, SemanticPerfectPredictionIsNearZero) {
  LabelMap gt(2, 4, 2);
  Tensor<D> z(Shape{1, 3, 2, 4});
  for (int64_t i = 0; i < 8; ++i) z[2 * 8 + i] = 60.0;
  EXPECT_LT(semantic_loss(VarD(z), gt).item(), 1e-20);
}

TEST(Losses, SemanticNeedsLabeledPixels) {
  EXPECT_THROW(semantic_loss(VarD(Tensor<D>(Shape{1, 3, 2, 2})), LabelMap(2, 2, kVoidId)), ArgumentError);
}

TEST(Losses, DepthIgnoresInvalidPixelsExactly) {
  Rng rng(32);
  for (int t = 0; t < 50; ++t) {
    SparseDepthMap gt(6, 7);
    for (int64_t i = 0; i < 42; ++i)
      if (rng.uniform() < 0.3 || i == 0) gt.set(i, static_cast<float>(rng.uniform(1, 80)));
    Tensor<D> p = random_tensor(rng, {1, 1, 6, 7}, 20.0);
    const double base = depth_loss(VarD(p), gt).item();
    for (int64_t i = 0; i < 42; ++i)
      if (!gt.valid.data[i]) p[i] = rng.uniform(-1e4, 1e4);
    ASSERT_EQ(depth_loss(VarD(p), gt).item(), base);
    ASSERT_GE(base, 0.0);
  }
  EXPECT_THROW(depth_loss(VarD(Tensor<D>(Shape{1, 1, 2, 2})), SparseDepthMap(2, 2)), ArgumentError);
}

TEST(Losses, DepthHandExample) {
  SparseDepthMap gt(1, 2);
  gt.set(0, 0.f);
  gt.set(1, 0.f);
  gt.valid.data = {1, 1};
  Tensor<D> p(Shape{1, 1, 1, 2});
  p[0] = 2;
  p[1] = 4;
  EXPECT_NEAR(depth_loss(VarD(p), gt).item(), 10.0, 1e-12);
}

TEST(Losses, JointIsTheUnweightedSum) {
  LossReport r{1.0, 0.5, 0.5, 0.25, 0.25, 0.5, 0.5, 0};
  EXPECT_NEAR(joint_loss(r), 3.5, 1e-12);
  EXPECT_DOUBLE_EQ(r.joint, 3.5);
  LossReport zero;
  EXPECT_EQ(joint_loss(zero), 0.0);
  Rng rng(33);
  for (int t = 0; t < 200; ++t) {
    std::array<double, 7> v;
    for (auto& x : v) x = rng.uniform(0, 100);
    LossReport a{v[0], v[1], v[2], v[3], v[4], v[5], v[6], 0};
    LossReport b{v[6], v[5], v[4], v[3], v[2], v[1], v[0], 0};
    const double sum = std::accumulate(v.begin(), v.end(), 0.0);
    ASSERT_NEAR(joint_loss(a), sum, 1e-6);
    ASSERT_NEAR(joint_loss(b), joint_loss(a), 1e-6);
  }
}

TEST(Losses, ObjectnessBceOfZeroLogit) {
  Tensor<D> logit(Shape{1}), target(Shape{1});
  EXPECT_NEAR(bce_with_logits(VarD(logit), target).item(), std::log(2.0), 1e-12);
  Rng rng(34);
  auto z = leaf(rng, {12});
  Tensor<D> y(Shape{12});
  for (int64_t i = 0; i < 12; i += 3) y[i] = 1;
  EXPECT_LT(gradient_error({z}, [&](const auto& v) { return bce_with_logits(v[0], y); }), kTol);
  EXPECT_LT(gradient_error({z}, [&](const auto& v) { return smooth_l1(v[0], y, 1.0 / 9.0, 4.0); }), kTol);
  auto zc = leaf(rng, {5, 4});
  EXPECT_LT(gradient_error({zc}, [&](const auto& v) { return cross_entropy(v[0], {0, 3, 1, 1, 2}); }), kTol);
}

// ------------------------------------------------------------------ boxes

TEST(Boxes, IouBasics) {
  const Box a{0, 0, 10, 10};
  EXPECT_DOUBLE_EQ(boxes::iou(a, a), 1.0);
  EXPECT_DOUBLE_EQ(boxes::iou(a, {10, 0, 20, 10}), 0.0);
  EXPECT_NEAR(boxes::iou(a, {5, 0, 15, 10}), 50.0 / 150.0, 1e-12);
  EXPECT_DOUBLE_EQ(boxes::iou(a, {2, 2, 4, 4}), 0.04);
}

TEST(Boxes, CoderRoundTrip) {
  Rng rng(12);
  boxes::BoxCoder coder;
  coder.weights = {10, 10, 5, 5};
  for (int i = 0; i < 200; ++i) {
    const double x = rng.uniform(0, 100), y = rng.uniform(0, 100);
    const Box ref{x, y, x + rng.uniform(2, 50), y + rng.uniform(2, 50)};
    const Box gt{x + rng.uniform(-5, 5), y + rng.uniform(-5, 5), ref.x2 + rng.uniform(-1, 20), ref.y2 + rng.uniform(-1, 20)};
    const auto d = coder.encode(ref, gt);
    const Box back = coder.decode(ref, d.data());
    EXPECT_NEAR(back.x1, gt.x1, 1e-9);
    EXPECT_NEAR(back.y2, gt.y2, 1e-9);
  }
}

TEST(Boxes, NmsMatchesDefinition) {
  Rng rng(13);
  for (int t = 0; t < 50; ++t) {
    std::vector<Box> bx;
    std::vector<double> sc;
    for (int i = 0; i < 30; ++i) {
      const double x = rng.uniform(0, 50), y = rng.uniform(0, 50);
      bx.push_back({x, y, x + rng.uniform(5, 20), y + rng.uniform(5, 20)});
      sc.push_back(rng.uniform());
    }
    const auto keep = boxes::nms(bx, sc, 0.5);
    for (size_t i = 0; i < keep.size(); ++i)
      for (size_t j = i + 1; j < keep.size(); ++j) {
        EXPECT_LE(boxes::iou(bx[keep[i]], bx[keep[j]]), 0.5);
        EXPECT_GE(sc[keep[i]], sc[keep[j]]);
      }
    // Every dropped box overlaps some kept box with a higher score.
    std::set<int64_t> kept(keep.begin(), keep.end());
    for (int64_t i = 0; i < 30; ++i) {
      if (kept.count(i)) continue;
      bool covered = false;
      for (int64_t k : keep) covered = covered || (sc[k] >= sc[i] && boxes::iou(bx[k], bx[i]) > 0.5);
      EXPECT_TRUE(covered);
    }
  }
}

TEST(Boxes, AnchorsAreCentredOnStrideGrid) {
  const auto a = boxes::level_anchors(2, 3, 8, 32, {0.5, 1.0, 2.0});
  ASSERT_EQ(a.size(), 18u);
  EXPECT_NEAR(0.5 * (a[4].x1 + a[4].x2), 12.0, 1e-12);
  EXPECT_NEAR(a[4].width() * a[4].height(), 32.0 * 32.0, 1e-9);
  EXPECT_NEAR(0.5 * (a[17].y1 + a[17].y2), 12.0, 1e-12);
}

// ------------------------------------------------------------------ knn

std::vector<int64_t> brute_knn(const std::vector<Point3>& pts, const Point3& q, int k) {
  std::vector<std::pair<double, int64_t>> d;
  for (size_t i = 0; i < pts.size(); ++i) d.emplace_back(squared_distance(q, pts[i]), static_cast<int64_t>(i));
  std::sort(d.begin(), d.end());
  std::vector<int64_t> out;
  for (int j = 0; j < k && j < static_cast<int>(d.size()); ++j) out.push_back(d[j].second);
  while (static_cast<int>(out.size()) < k) out.push_back(out.front());
  return out;
}

TEST(Knn, MatchesBruteForce) {
  Rng rng(14);
  for (int t = 0; t < 20; ++t) {
    const size_t n = 1 + rng.index(400);
    const int k = 1 + static_cast<int>(rng.index(12));
    std::vector<Point3> pts(n);
    const bool flat = t % 4 == 0;
    for (auto& p : pts) p = {rng.uniform(-20, 20), flat ? 1.5 : rng.uniform(-2, 2), rng.uniform(1, 80)};
    if (n > 3) pts[1] = pts[0];  // exact duplicate
    KnnIndex idx(pts, k);
    const auto all = idx.query_all();
    ASSERT_EQ(all.size(), n * static_cast<size_t>(k));
    for (size_t i = 0; i < n; ++i) {
      const auto ref = brute_knn(pts, pts[i], k);
      for (int j = 0; j < k; ++j) ASSERT_EQ(all[i * k + j], ref[j]) << "point " << i << " neighbour " << j;
    }
    for (int q = 0; q < 20; ++q) {
      const Point3 p{rng.uniform(-30, 30), rng.uniform(-5, 5), rng.uniform(0, 90)};
      ASSERT_EQ(idx.query(p), brute_knn(pts, p, k));
    }
  }
}

TEST(Geometry, BackprojectInvertsProjection) {
  SparseDepthMap d(4, 5);
  d.set(7, 12.5f);
  d.set(19, 3.f);
  const CameraIntrinsics k{100, 90, 2.5, 1.5};
  const PointSet ps = backproject(d, k);
  ASSERT_EQ(ps.size(), 2u);
  EXPECT_EQ(ps.pixel[0], 7);
  const auto [u, v] = project(ps.xyz[0], k);
  EXPECT_NEAR(u, 2.0, 1e-9);
  EXPECT_NEAR(v, 1.0, 1e-9);
  EXPECT_NEAR(ps.xyz[1][2], 3.0, 1e-9);
}

}  // namespace
}  // namespace pandepth
