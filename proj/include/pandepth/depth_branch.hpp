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

#ifndef PANDEPTH_DEPTH_BRANCH_HPP_
#define PANDEPTH_DEPTH_BRANCH_HPP_

#include <memory>
#include <vector>

#include "pandepth/geometry.hpp"
#include "pandepth/nn.hpp"

namespace pandepth {

struct FuseBlockConfig {
  int blocks = 3;
  int channels = 64;
  int k = 9;
  int mlp_width = 128;
};

struct DepthHeadConfig {
  FuseBlockConfig fuse;
  int stem_channels = 32;
  int num_classes = 15;
  double depth_norm = 80.0;  // metres per unit of network output
  double depth_max = kDefaultDepthMax;
  double eps = 1e-3;
  // The last refinement conv starts at zero weights with its bias set so the
  // initial prediction is this depth everywhere.
  double init_depth = 20.0;
};

// Point cloud plus its neighbour table, shared by all fuse blocks of a
// forward pass.
struct PointGraph {
  PointSet points;
  int k = 0;
  std::vector<int64_t> neighbors;  // [P, k]
  std::vector<double> offsets;     // [P*k, 3], neighbour minus centre

  size_t size() const { return points.size(); }
};

inline PointGraph build_point_graph(PointSet points, int k) {
  PANDEPTH_CHECK_ARG(points.size() > 0, "depth branch: at least one valid sparse depth pixel is required");
  PointGraph g;
  g.k = k;
  g.neighbors = KnnIndex(points.xyz, k).query_all();
  g.offsets.resize(g.neighbors.size() * 3);
  for (size_t i = 0; i < points.size(); ++i)
    for (int j = 0; j < k; ++j) {
      const auto& q = points.xyz[g.neighbors[i * k + j]];
      for (int a = 0; a < 3; ++a) g.offsets[(i * k + j) * 3 + a] = q[a] - points.xyz[i][a];
    }
  g.points = std::move(points);
  return g;
}

// 2D path of two separable convolutions plus a 3D path of parametric
// continuous convolution over the k nearest back-projected neighbours.
//
// The continuous kernel for neighbour j is W_j = W2 a_j + b2 with
// a_j = act(W1 (p_j - p_i) + b1). Rather than materialising every C x C
// kernel, the block aggregates a_j (x) f_j over neighbours and applies a
// single [C, (M+1) C] matrix holding W2 and b2.
template <typename T>
class FuseBlock : public nn::Module<T> {
 public:
  FuseBlock(Rng& rng, const FuseBlockConfig& cfg)
      : cfg_(cfg),
        mlp1_(this->add_module("mlp1", std::make_unique<nn::Linear<T>>(rng, 3, cfg.mlp_width))),
        mlp2_(this->add_module("mlp2", std::make_unique<nn::Linear<T>>(rng, (cfg.mlp_width + 1) * cfg.channels,
                                                                        cfg.channels))),
        conv_a_(this->add_module("conv2d_0", std::make_unique<nn::SeparableConv2d<T>>(rng, cfg.channels, cfg.channels))),
        conv_b_(this->add_module("conv2d_1", std::make_unique<nn::SeparableConv2d<T>>(rng, cfg.channels, cfg.channels))),
        proj_(this->add_module("project",
                               std::make_unique<nn::Conv2d<T>>(rng, cfg.channels, cfg.channels, nn::ConvOptions{1}))) {
    PANDEPTH_CHECK_ARG(cfg.blocks >= 1 && cfg.k >= 1, "fuse block: blocks and k must be >= 1");
    // The aggregated term sums k neighbours; scale the kernel generator so
    // the initial output variance does not grow with k and M.
    for (auto& v : mlp2_.weight().mutable_value().values())
      v = static_cast<T>(v / std::sqrt(static_cast<double>(cfg.k)));
  }

  const char* kind() const override { return "FuseBlock"; }

  // Continuous convolution at the points only: [P, C].
  Var<T> point_conv(const Var<T>& x, const PointGraph& g) {
    const int64_t pk = static_cast<int64_t>(g.neighbors.size());
    Tensor<T> off(Shape{pk, 3});
    for (int64_t i = 0; i < pk * 3; ++i) off[i] = static_cast<T>(g.offsets[i]);
    Var<T> a = ops::leaky_relu(mlp1_(Var<T>(std::move(off))), static_cast<T>(nn::kLeakySlope));
    Var<T> f = ops::gather_pixels(x, g.points.pixel);
    return mlp2_(ops::neighbor_outer(a, f, g.neighbors, g.k));
  }

  Var<T> operator()(const Var<T>& x, const PointGraph& g) {
    PANDEPTH_CHECK_ARG(x.dim(1) == cfg_.channels, "fuse block: channel mismatch");
    Var<T> p3 = ops::scatter_pixels(point_conv(x, g), g.points.pixel, x.dim(2), x.dim(3));
    Var<T> p2 = conv_b_(conv_a_(x));
    return ops::leaky_relu(proj_(ops::add(p2, p3)), static_cast<T>(nn::kLeakySlope));
  }

 private:
  FuseBlockConfig cfg_;
  nn::Linear<T>& mlp1_;
  nn::Linear<T>& mlp2_;
  nn::SeparableConv2d<T>& conv_a_;
  nn::SeparableConv2d<T>& conv_b_;
  nn::Conv2d<T>& proj_;
};

// Depth completion head: sparse-depth and guidance stems, stacked fuse
// blocks, and a two-layer refinement to a positive depth map in metres.
template <typename T>
class DepthHead : public nn::Module<T> {
 public:
  DepthHead(Rng& rng, const DepthHeadConfig& cfg) : cfg_(cfg) {
    const int s = cfg.stem_channels;
    PANDEPTH_CHECK_ARG(2 * s == cfg.fuse.channels, "depth head: fuse channels must be twice the stem width");
    depth_stem_[0] = &add_conv("depth_stem0", rng, 1, s);
    depth_stem_[1] = &add_conv("depth_stem1", rng, s, s);
    guide_stem_[0] = &add_conv("guide_stem0", rng, 3 + cfg.num_classes, s);
    guide_stem_[1] = &add_conv("guide_stem1", rng, s, s);
    for (int i = 0; i < cfg.fuse.blocks; ++i)
      blocks_.push_back(&this->add_module("fuse" + std::to_string(i), std::make_unique<FuseBlock<T>>(rng, cfg.fuse)));
    refine_[0] = &add_conv("refine0", rng, cfg.fuse.channels, cfg.fuse.channels);
    refine_[1] = &add_conv("refine1", rng, cfg.fuse.channels, 1);
    refine_[1]->weight().mutable_value().fill(T(0));
    const double u = std::max(cfg.init_depth - cfg.eps, 1e-3) / cfg.depth_norm;
    refine_[1]->bias().mutable_value().fill(static_cast<T>(u > 20 ? u : std::log(std::expm1(u))));
  }

  const char* kind() const override { return "DepthHead"; }
  const DepthHeadConfig& config() const { return cfg_; }
  FuseBlock<T>& block(int i) { return *blocks_.at(static_cast<size_t>(i)); }

  // sparse [1,1,H,W] in metres (0 = missing), rgb [1,3,H,W], semantic
  // probabilities [1,nc,H,W]. Returns [1,1,H,W] depth in metres.
  Var<T> operator()(const Var<T>& sparse, const Var<T>& rgb, const Var<T>& sem_prob, const PointGraph& g) {
    PANDEPTH_CHECK_ARG(sparse.dim(2) == rgb.dim(2) && sparse.dim(3) == rgb.dim(3) && sem_prob.dim(2) == rgb.dim(2) &&
                           sem_prob.dim(3) == rgb.dim(3),
                       "depth head: inputs are not spatially aligned");
    PANDEPTH_CHECK_ARG(sem_prob.dim(1) == cfg_.num_classes, "depth head: semantic channel mismatch");
    const T slope = static_cast<T>(nn::kLeakySlope);
    Var<T> d = ops::scale(sparse, static_cast<T>(1.0 / cfg_.depth_norm));
    d = ops::leaky_relu((*depth_stem_[1])(ops::leaky_relu((*depth_stem_[0])(d), slope)), slope);
    Var<T> q = ops::concat(std::vector<Var<T>>{rgb, sem_prob}, 1);
    q = ops::leaky_relu((*guide_stem_[1])(ops::leaky_relu((*guide_stem_[0])(q), slope)), slope);
    Var<T> x = ops::concat(std::vector<Var<T>>{d, q}, 1);
    for (auto* b : blocks_) x = (*b)(x, g);
    x = ops::leaky_relu((*refine_[0])(x), slope);
    x = (*refine_[1])(x);
    Var<T> depth = ops::add_scalar(ops::scale(ops::softplus(x), static_cast<T>(cfg_.depth_norm)), static_cast<T>(cfg_.eps));
    return ops::clamp_max(depth, static_cast<T>(cfg_.depth_max));
  }

 private:
  nn::Conv2d<T>& add_conv(const std::string& name, Rng& rng, int cin, int cout) {
    return this->add_module(name, std::make_unique<nn::Conv2d<T>>(rng, cin, cout, nn::ConvOptions{3}));
  }

  DepthHeadConfig cfg_;
  std::array<nn::Conv2d<T>*, 2> depth_stem_{};
  std::array<nn::Conv2d<T>*, 2> guide_stem_{};
  std::vector<FuseBlock<T>*> blocks_;
  std::array<nn::Conv2d<T>*, 2> refine_{};
};

}  // namespace pandepth

#endif  // PANDEPTH_DEPTH_BRANCH_HPP_
