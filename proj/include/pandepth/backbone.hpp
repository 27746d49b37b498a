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

#ifndef PANDEPTH_BACKBONE_HPP_
#define PANDEPTH_BACKBONE_HPP_

#include <array>
#include <cmath>
#include <memory>
#include <vector>

#include "pandepth/nn.hpp"
#include "pandepth/types.hpp"

namespace pandepth {

struct BackboneConfig {
  double width_mult = 1.6;  // EfficientNet-B5 compound scaling
  double depth_mult = 2.2;
  bool squeeze_excitation = false;
  int fpn_channels = 256;
  double norm_eps = 1e-5;
};

inline constexpr std::array<int, 4> kPyramidStrides = {4, 8, 16, 32};

// Four maps at strides 4, 8, 16, 32 sharing one channel count.
template <typename T>
struct FeaturePyramid {
  std::array<Var<T>, 4> levels;

  const Var<T>& p4() const { return levels[0]; }
  const Var<T>& p8() const { return levels[1]; }
  const Var<T>& p16() const { return levels[2]; }
  const Var<T>& p32() const { return levels[3]; }
  std::vector<Var<T>> as_vector() const { return {levels.begin(), levels.end()}; }
};

namespace efficientnet {

struct StageSpec {
  int expand, kernel, stride, out, repeats;
};

// EfficientNet-B0 stage table.
inline constexpr std::array<StageSpec, 7> kBaseStages = {{{1, 3, 1, 16, 1},
                                                         {6, 3, 2, 24, 2},
                                                         {6, 5, 2, 40, 2},
                                                         {6, 3, 2, 80, 3},
                                                         {6, 5, 1, 112, 3},
                                                         {6, 5, 2, 192, 4},
                                                         {6, 3, 1, 320, 1}}};
inline constexpr int kBaseStem = 32;
inline constexpr int kBaseHead = 1280;
// Stage indices whose outputs feed strides 4, 8 and 16; stride 32 comes
// from the head convolution.
inline constexpr std::array<int, 3> kTapStages = {1, 2, 4};

inline int round_filters(int c, double width, int divisor = 8) {
  const double scaled = c * width;
  int n = std::max(divisor, static_cast<int>(scaled + divisor / 2.0) / divisor * divisor);
  if (n < 0.9 * scaled) n += divisor;
  return n;
}

inline int round_repeats(int r, double depth) { return static_cast<int>(std::ceil(depth * r)); }

// Channel counts of the four encoder taps.
inline std::array<int, 4> tap_channels(double width) {
  return {round_filters(kBaseStages[1].out, width), round_filters(kBaseStages[2].out, width),
          round_filters(kBaseStages[4].out, width), round_filters(kBaseHead, width)};
}

// Inverted residual block: 1x1 expand, depthwise k x k, optional
// squeeze-excitation, 1x1 project; identity skip when shapes allow.
template <typename T>
class MBConv : public nn::Module<T> {
 public:
  MBConv(Rng& rng, int cin, int cout, int expand, int kernel, int stride, bool se)
      : residual_(stride == 1 && cin == cout), stride_(stride), kernel_(kernel) {
    const int mid = cin * expand;
    if (expand != 1) expand_ = &this->add_module("expand", std::make_unique<nn::ConvBnAct<T>>(rng, cin, mid, 1));
    dw_ = &this->add_parameter("depthwise", nn::he_normal<T>(rng, Shape{mid, 1, kernel, kernel}, kernel * kernel));
    dw_bn_ = &this->add_module("depthwise_bn", std::make_unique<nn::BatchNorm2d<T>>(mid));
    if (se) {
      const int sq = std::max(1, cin / 4);
      se_reduce_ = &this->add_module("se_reduce", std::make_unique<nn::Conv2d<T>>(rng, mid, sq, nn::ConvOptions{1}));
      se_expand_ = &this->add_module("se_expand", std::make_unique<nn::Conv2d<T>>(rng, sq, mid, nn::ConvOptions{1}));
    }
    project_ = &this->add_module("project", std::make_unique<nn::ConvBnAct<T>>(rng, mid, cout, 1, 1, false));
  }

  const char* kind() const override { return "MBConv"; }

  Var<T> operator()(const Var<T>& x) {
    Var<T> y = expand_ ? (*expand_)(x) : x;
    const int pad = (kernel_ - 1) / 2;
    y = ops::depthwise_conv2d(y, *dw_, nn::Pair(stride_), nn::Pair(pad), nn::Pair(1));
    y = ops::leaky_relu((*dw_bn_)(y), static_cast<T>(nn::kLeakySlope));
    if (se_reduce_) {
      Var<T> s = ops::spatial_mean(y);
      s = ops::leaky_relu((*se_reduce_)(s), static_cast<T>(nn::kLeakySlope));
      s = ops::sigmoid((*se_expand_)(s));
      y = ops::channel_scale(y, s);
    }
    y = (*project_)(y);
    return residual_ ? ops::add(y, x) : y;
  }

 private:
  bool residual_;
  int stride_, kernel_;
  nn::ConvBnAct<T>* expand_ = nullptr;
  Var<T>* dw_ = nullptr;
  nn::BatchNorm2d<T>* dw_bn_ = nullptr;
  nn::Conv2d<T>* se_reduce_ = nullptr;
  nn::Conv2d<T>* se_expand_ = nullptr;
  nn::ConvBnAct<T>* project_ = nullptr;
};

}  // namespace efficientnet

// Compound-scaled EfficientNet encoder returning the stride 4/8/16/32 taps.
template <typename T>
class Encoder : public nn::Module<T> {
 public:
  Encoder(Rng& rng, const BackboneConfig& cfg) {
    using namespace efficientnet;
    const int stem = round_filters(kBaseStem, cfg.width_mult);
    stem_ = &this->add_module("stem", std::make_unique<nn::ConvBnAct<T>>(rng, 3, stem, 3, 2));
    int cin = stem;
    for (size_t s = 0; s < kBaseStages.size(); ++s) {
      const auto& st = kBaseStages[s];
      const int cout = round_filters(st.out, cfg.width_mult);
      const int reps = round_repeats(st.repeats, cfg.depth_mult);
      std::vector<MBConv<T>*> blocks;
      for (int r = 0; r < reps; ++r) {
        blocks.push_back(&this->add_module(
            "stage" + std::to_string(s + 1) + "." + std::to_string(r),
            std::make_unique<MBConv<T>>(rng, cin, cout, st.expand, st.kernel, r == 0 ? st.stride : 1,
                                        cfg.squeeze_excitation)));
        cin = cout;
      }
      stages_.push_back(std::move(blocks));
    }
    head_ = &this->add_module("head", std::make_unique<nn::ConvBnAct<T>>(rng, cin, round_filters(kBaseHead, cfg.width_mult), 1));
  }

  const char* kind() const override { return "Encoder"; }

  std::array<Var<T>, 4> operator()(const Var<T>& x) {
    std::array<Var<T>, 4> taps;
    Var<T> y = (*stem_)(x);
    int tap = 0;
    for (size_t s = 0; s < stages_.size(); ++s) {
      for (auto* b : stages_[s]) y = (*b)(y);
      if (tap < 3 && static_cast<int>(s) == efficientnet::kTapStages[tap]) taps[tap++] = y;
    }
    taps[3] = (*head_)(y);
    return taps;
  }

 private:
  nn::ConvBnAct<T>* stem_ = nullptr;
  std::vector<std::vector<efficientnet::MBConv<T>*>> stages_;
  nn::ConvBnAct<T>* head_ = nullptr;
};

// Two-way feature pyramid: a top-down pathway (bilinear upsampling) and a
// bottom-up pathway (strided separable convolution), each fed by its own
// 1x1 lateral projections; the two are summed per level.
template <typename T>
class TwoWayFpn : public nn::Module<T> {
 public:
  TwoWayFpn(Rng& rng, const std::array<int, 4>& in_channels, int channels) {
    for (int l = 0; l < 4; ++l) {
      top_down_[l] = &this->add_module("top_down_lateral" + std::to_string(l),
                                       std::make_unique<nn::Conv2d<T>>(rng, in_channels[l], channels, nn::ConvOptions{1}));
      bottom_up_[l] = &this->add_module("bottom_up_lateral" + std::to_string(l),
                                        std::make_unique<nn::Conv2d<T>>(rng, in_channels[l], channels, nn::ConvOptions{1}));
    }
    for (int l = 0; l < 3; ++l)
      down_[l] = &this->add_module("down" + std::to_string(l),
                                   std::make_unique<nn::SeparableConv2d<T>>(
                                       rng, channels, channels, typename nn::SeparableConv2d<T>::Options{3, 2}));
  }

  const char* kind() const override { return "TwoWayFpn"; }

  FeaturePyramid<T> operator()(const std::array<Var<T>, 4>& taps) {
    std::array<Var<T>, 4> td, bu;
    td[3] = (*top_down_[3])(taps[3]);
    for (int l = 2; l >= 0; --l) {
      Var<T> lat = (*top_down_[l])(taps[l]);
      td[l] = ops::add(lat, ops::resize_bilinear(td[l + 1], lat.dim(2), lat.dim(3)));
    }
    bu[0] = (*bottom_up_[0])(taps[0]);
    for (int l = 1; l < 4; ++l) bu[l] = ops::add((*bottom_up_[l])(taps[l]), (*down_[l - 1])(bu[l - 1]));
    FeaturePyramid<T> out;
    for (int l = 0; l < 4; ++l) out.levels[l] = ops::add(td[l], bu[l]);
    return out;
  }

 private:
  std::array<nn::Conv2d<T>*, 4> top_down_{};
  std::array<nn::Conv2d<T>*, 4> bottom_up_{};
  std::array<nn::SeparableConv2d<T>*, 3> down_{};
};

// Shared feature extractor: encoder wrapped in the two-way FPN.
template <typename T>
class Backbone : public nn::Module<T> {
 public:
  Backbone(Rng& rng, const BackboneConfig& cfg)
      : cfg_(cfg),
        encoder_(this->add_module("encoder", std::make_unique<Encoder<T>>(rng, cfg))),
        fpn_(this->add_module("fpn", std::make_unique<TwoWayFpn<T>>(
                                         rng, efficientnet::tap_channels(cfg.width_mult), cfg.fpn_channels))) {}

  const char* kind() const override { return "Backbone"; }

  // x is [1, 3, H, W] with H, W multiples of 32.
  FeaturePyramid<T> operator()(const Var<T>& x) {
    PANDEPTH_CHECK_ARG(x.shape().size() == 4 && x.dim(1) == 3, "backbone: expected [N, 3, H, W] input");
    PANDEPTH_CHECK_ARG(x.dim(2) >= 32 && x.dim(3) >= 32, "backbone: input smaller than 32x32");
    PANDEPTH_CHECK_ARG(x.dim(2) % 32 == 0 && x.dim(3) % 32 == 0,
                       "backbone: input must be padded to a multiple of 32, got " + shape_str(x.shape()));
    return fpn_(encoder_(x));
  }

  Encoder<T>& encoder() { return encoder_; }
  TwoWayFpn<T>& fpn() { return fpn_; }
  const BackboneConfig& config() const { return cfg_; }

 private:
  BackboneConfig cfg_;
  Encoder<T>& encoder_;
  TwoWayFpn<T>& fpn_;
};

// Planar RGB frame as a [1, 3, H, W] tensor.
template <typename T>
Tensor<T> frame_tensor(const ImageFrame& f) {
  Tensor<T> t(Shape{1, 3, f.h, f.w});
  for (size_t i = 0; i < f.pixels.size(); ++i) t[static_cast<int64_t>(i)] = static_cast<T>(f.pixels[i]);
  return t;
}

template <typename T>
FeaturePyramid<T> extract_pyramid(Backbone<T>& backbone, const ImageFrame& frame) {
  return backbone(Var<T>(frame_tensor<T>(frame)));
}

}  // namespace pandepth

#endif  // PANDEPTH_BACKBONE_HPP_
