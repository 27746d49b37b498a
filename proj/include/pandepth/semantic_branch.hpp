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

#ifndef PANDEPTH_SEMANTIC_BRANCH_HPP_
#define PANDEPTH_SEMANTIC_BRANCH_HPP_

#include <array>
#include <memory>
#include <utility>
#include <vector>

#include "pandepth/backbone.hpp"

namespace pandepth {

struct SemanticHeadConfig {
  int channels = 128;
  int num_classes = 15;
  std::vector<std::pair<int, int>> dpc_rates = {{1, 1}, {1, 6}, {6, 21}, {18, 15}, {6, 3}};
};

namespace semantic {

template <typename T>
using Sep = nn::SeparableConv2d<T>;

// Two separable 3x3 convolutions at full pyramid resolution.
template <typename T>
class Lsfe : public nn::Module<T> {
 public:
  Lsfe(Rng& rng, int cin, int c)
      : a_(this->add_module("conv0", std::make_unique<Sep<T>>(rng, cin, c))),
        b_(this->add_module("conv1", std::make_unique<Sep<T>>(rng, c, c))) {}
  const char* kind() const override { return "Lsfe"; }
  Var<T> operator()(const Var<T>& x) { return b_(a_(x)); }

 private:
  Sep<T>& a_;
  Sep<T>& b_;
};

// Parallel dilated separable convolutions, concatenated and projected.
template <typename T>
class Dpc : public nn::Module<T> {
 public:
  Dpc(Rng& rng, int cin, int c, const std::vector<std::pair<int, int>>& rates) {
    for (size_t i = 0; i < rates.size(); ++i) {
      typename Sep<T>::Options o;
      o.dilation = nn::Pair(rates[i].first, rates[i].second);
      arms_.push_back(&this->add_module("arm" + std::to_string(i), std::make_unique<Sep<T>>(rng, cin, cin, o)));
    }
    proj_ = &this->add_module("project", std::make_unique<nn::ConvBnAct<T>>(
                                             rng, cin * static_cast<int>(rates.size()), c, 1));
  }
  const char* kind() const override { return "Dpc"; }
  Var<T> operator()(const Var<T>& x) {
    std::vector<Var<T>> outs;
    for (auto* a : arms_) outs.push_back((*a)(x));
    return (*proj_)(ops::concat(outs, 1));
  }

 private:
  std::vector<Sep<T>*> arms_;
  nn::ConvBnAct<T>* proj_ = nullptr;
};

}  // namespace semantic

// Preliminary semantic head. Returns logits at the padded input
// resolution; the caller crops to the frame size.
template <typename T>
class SemanticHead : public nn::Module<T> {
 public:
  SemanticHead(Rng& rng, int fpn_channels, const SemanticHeadConfig& cfg) : cfg_(cfg), fpn_channels_(fpn_channels) {
    PANDEPTH_CHECK_ARG(cfg.num_classes >= 2, "semantic head: need at least two classes");
    const int c = cfg.channels;
    lsfe_[0] = &this->add_module("lsfe4", std::make_unique<semantic::Lsfe<T>>(rng, fpn_channels, c));
    lsfe_[1] = &this->add_module("lsfe8", std::make_unique<semantic::Lsfe<T>>(rng, fpn_channels, c));
    dpc_[0] = &this->add_module("dpc16", std::make_unique<semantic::Dpc<T>>(rng, fpn_channels, c, cfg.dpc_rates));
    dpc_[1] = &this->add_module("dpc32", std::make_unique<semantic::Dpc<T>>(rng, fpn_channels, c, cfg.dpc_rates));
    for (int i = 0; i < 3; ++i)
      mc_[i] = &this->add_module("mc" + std::to_string(i), std::make_unique<semantic::Sep<T>>(rng, c, c));
    classifier_ = &this->add_module("classifier",
                                    std::make_unique<nn::Conv2d<T>>(rng, c, cfg.num_classes, nn::ConvOptions{1}));
  }

  const char* kind() const override { return "SemanticHead"; }

  Var<T> operator()(const FeaturePyramid<T>& pyr) {
    for (const auto& l : pyr.levels)
      if (l.dim(1) != fpn_channels_)
        throw ConfigError("semantic head: pyramid has " + std::to_string(l.dim(1)) + " channels, head expects " +
                          std::to_string(fpn_channels_));
    std::array<Var<T>, 4> s = {(*lsfe_[0])(pyr.p4()), (*lsfe_[1])(pyr.p8()), (*dpc_[0])(pyr.p16()),
                               (*dpc_[1])(pyr.p32())};
    Var<T> agg = s[3];
    for (int l = 2, m = 0; l >= 0; --l, ++m) {
      Var<T> up = (*mc_[m])(agg);
      agg = ops::add(s[l], ops::resize_bilinear(up, s[l].dim(2), s[l].dim(3)));
    }
    Var<T> logits = (*classifier_)(agg);
    return ops::resize_bilinear(logits, logits.dim(2) * 4, logits.dim(3) * 4);
  }

  nn::Conv2d<T>& classifier() { return *classifier_; }
  const SemanticHeadConfig& config() const { return cfg_; }

 private:
  SemanticHeadConfig cfg_;
  int fpn_channels_;
  std::array<semantic::Lsfe<T>*, 2> lsfe_{};
  std::array<semantic::Dpc<T>*, 2> dpc_{};
  std::array<semantic::Sep<T>*, 3> mc_{};
  nn::Conv2d<T>* classifier_ = nullptr;
};

}  // namespace pandepth

#endif  // PANDEPTH_SEMANTIC_BRANCH_HPP_
