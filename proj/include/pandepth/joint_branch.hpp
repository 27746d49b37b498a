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

#ifndef PANDEPTH_JOINT_BRANCH_HPP_
#define PANDEPTH_JOINT_BRANCH_HPP_

#include <array>
#include <memory>
#include <vector>

#include "pandepth/nn.hpp"

namespace pandepth {

struct JointHeadConfig {
  int hidden = 256;
  int num_classes = 15;
  double depth_max = kDefaultDepthMax;
  bool zero_init_last = true;
};

// Refines semantic logits with the completed depth: four 3x3 convolutions
// over [logits, depth / depth_max], added to the incoming logits.
template <typename T>
class JointHead : public nn::Module<T> {
 public:
  JointHead(Rng& rng, const JointHeadConfig& cfg) : cfg_(cfg) {
    const int h = cfg.hidden;
    const std::array<std::pair<int, int>, 4> dims = {
        {{cfg.num_classes + 1, h}, {h, h}, {h, h}, {h, cfg.num_classes}}};
    for (int i = 0; i < 4; ++i)
      convs_[i] = &this->add_module("conv" + std::to_string(i), std::make_unique<nn::Conv2d<T>>(
                                                                     rng, dims[i].first, dims[i].second,
                                                                     nn::ConvOptions{3}));
    if (cfg.zero_init_last) nn::zero_parameters(*convs_[3]);
  }

  const char* kind() const override { return "JointHead"; }

  // logits [1, nc, H, W], depth [1, 1, H, W] in metres.
  Var<T> operator()(const Var<T>& logits, const Var<T>& depth) {
    PANDEPTH_CHECK_ARG(logits.shape().size() == 4 && depth.shape().size() == 4 && depth.dim(1) == 1 &&
                           logits.dim(2) == depth.dim(2) && logits.dim(3) == depth.dim(3),
                       "joint head: logits " + shape_str(logits.shape()) + " and depth " + shape_str(depth.shape()) +
                           " are not aligned");
    PANDEPTH_CHECK_ARG(logits.dim(1) == cfg_.num_classes, "joint head: class count mismatch");
    Var<T> x = ops::concat(
        std::vector<Var<T>>{logits, ops::scale(depth, static_cast<T>(1.0 / cfg_.depth_max))}, 1);
    for (int i = 0; i < 3; ++i) x = ops::leaky_relu((*convs_[i])(x), static_cast<T>(nn::kLeakySlope));
    return ops::add(logits, (*convs_[3])(x));
  }

 private:
  JointHeadConfig cfg_;
  std::array<nn::Conv2d<T>*, 4> convs_{};
};

}  // namespace pandepth

#endif  // PANDEPTH_JOINT_BRANCH_HPP_
