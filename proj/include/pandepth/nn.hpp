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

#ifndef PANDEPTH_NN_HPP_
#define PANDEPTH_NN_HPP_

#include <cmath>
#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "pandepth/ops.hpp"
#include "pandepth/rng.hpp"

namespace pandepth::nn {

using ops::Pair;

inline constexpr double kLeakySlope = 0.01;

// Base of every learnable block: owns named parameters, buffers and
// children. Blocks are not copyable or movable; build them in place.
template <typename T>
class Module {
 public:
  Module() = default;
  virtual ~Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;

  virtual const char* kind() const { return "Module"; }

  void set_training(bool on) {
    training_ = on;
    for (auto& [_, m] : children_) m->set_training(on);
  }
  bool training() const { return training_; }

  std::vector<std::pair<std::string, Var<T>*>> named_parameters(const std::string& prefix = "") {
    std::vector<std::pair<std::string, Var<T>*>> out;
    collect(prefix, out, [](Module& m) -> auto& { return m.params_; });
    return out;
  }

  std::vector<std::pair<std::string, Tensor<T>*>> named_buffers(const std::string& prefix = "") {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    collect(prefix, out, [](Module& m) -> auto& { return m.buffers_; });
    return out;
  }

  int64_t num_parameters() const {
    int64_t n = 0;
    for (const auto& [_, p] : params_) n += p.numel();
    for (const auto& [_, m] : children_) n += m->num_parameters();
    return n;
  }

  void zero_grad() {
    for (auto& [_, p] : params_) p.zero_grad();
    for (auto& [_, m] : children_) m->zero_grad();
  }

  // Depth-first walk over this module and all descendants.
  void visit(const std::function<void(const std::string&, const Module&)>& fn,
             const std::string& path = "") const {
    fn(path, *this);
    for (const auto& [name, m] : children_) m->visit(fn, path.empty() ? name : path + "." + name);
  }

 protected:
  Var<T>& add_parameter(std::string name, Tensor<T> init) {
    params_.emplace_back(std::move(name), Var<T>(std::move(init), true));
    return params_.back().second;
  }

  Tensor<T>& add_buffer(std::string name, Tensor<T> init) {
    buffers_.emplace_back(std::move(name), std::move(init));
    return buffers_.back().second;
  }

  template <typename M>
  M& add_module(std::string name, std::unique_ptr<M> m) {
    M& ref = *m;
    ref.set_training(training_);
    children_.emplace_back(std::move(name), std::move(m));
    return ref;
  }

 private:
  template <typename Out, typename Get>
  void collect(const std::string& prefix, Out& out, Get get) {
    for (auto& [name, v] : get(*this)) out.emplace_back(prefix + name, &v);
    for (auto& [name, m] : children_) m->collect(prefix + name + ".", out, get);
  }

  bool training_ = true;
  std::deque<std::pair<std::string, Var<T>>> params_;
  std::deque<std::pair<std::string, Tensor<T>>> buffers_;
  std::vector<std::pair<std::string, std::unique_ptr<Module>>> children_;
};

// He-normal initialisation for leaky-ReLU networks.
template <typename T>
Tensor<T> he_normal(Rng& rng, Shape shape, int64_t fan_in) {
  Tensor<T> t(std::move(shape));
  const double std = std::sqrt(2.0 / (1.0 + kLeakySlope * kLeakySlope) / static_cast<double>(fan_in));
  for (auto& v : t.values()) v = static_cast<T>(rng.normal() * std);
  return t;
}

template <typename T>
class BatchNorm2d : public Module<T> {
 public:
  explicit BatchNorm2d(int64_t c, T momentum = T(0.1), T eps = T(1e-5))
      : gamma_(this->add_parameter("weight", Tensor<T>(Shape{c}, T(1)))),
        beta_(this->add_parameter("bias", Tensor<T>(Shape{c}))),
        mean_(this->add_buffer("running_mean", Tensor<T>(Shape{c}))),
        var_(this->add_buffer("running_var", Tensor<T>(Shape{c}, T(1)))),
        momentum_(momentum),
        eps_(eps) {}

  const char* kind() const override { return "BatchNorm2d"; }

  Var<T> operator()(const Var<T>& x) {
    return ops::batch_norm(x, gamma_, beta_, mean_, var_, this->training(), momentum_, eps_);
  }

 private:
  Var<T>& gamma_;
  Var<T>& beta_;
  Tensor<T>& mean_;
  Tensor<T>& var_;
  T momentum_, eps_;
};

struct ConvOptions {
  int kernel = 3;
  Pair stride = 1;
  Pair dilation = 1;
  bool bias = true;
};

// Dense 2D convolution with "same" padding for odd kernels.
template <typename T>
class Conv2d : public Module<T> {
 public:
  Conv2d(Rng& rng, int64_t cin, int64_t cout, ConvOptions opt = {})
      : opt_(opt),
        weight_(this->add_parameter("weight", he_normal<T>(rng, Shape{cout, cin, opt.kernel, opt.kernel},
                                                           cin * opt.kernel * opt.kernel))) {
    if (opt.bias) bias_ = this->add_parameter("bias", Tensor<T>(Shape{cout}));
  }

  const char* kind() const override { return "Conv2d"; }

  Var<T> operator()(const Var<T>& x) const {
    const Pair pad(opt_.dilation.h * (opt_.kernel - 1) / 2, opt_.dilation.w * (opt_.kernel - 1) / 2);
    return ops::conv2d(x, weight_, bias_, opt_.stride, pad, opt_.dilation);
  }

  Var<T>& weight() { return weight_; }
  Var<T>& bias() { return bias_; }

 private:
  ConvOptions opt_;
  Var<T>& weight_;
  Var<T> bias_;
};

// Depthwise k x k convolution followed by a pointwise 1 x 1 projection,
// optionally normalised and activated.
template <typename T>
class SeparableConv2d : public Module<T> {
 public:
  struct Options {
    int kernel = 3;
    Pair stride = 1;
    Pair dilation = 1;
    bool norm = true;
    bool act = true;
  };

  SeparableConv2d(Rng& rng, int64_t cin, int64_t cout, Options opt)
      : opt_(opt),
        depthwise_(this->add_parameter("depthwise", he_normal<T>(rng, Shape{cin, 1, opt.kernel, opt.kernel},
                                                                 opt.kernel * opt.kernel))),
        pointwise_(this->add_parameter("pointwise", he_normal<T>(rng, Shape{cout, cin, 1, 1}, cin))) {
    if (opt.norm)
      bn_ = &this->add_module("bn", std::make_unique<BatchNorm2d<T>>(cout));
    else
      bias_ = this->add_parameter("bias", Tensor<T>(Shape{cout}));
  }
  SeparableConv2d(Rng& rng, int64_t cin, int64_t cout) : SeparableConv2d(rng, cin, cout, Options{}) {}

  const char* kind() const override { return "SeparableConv2d"; }

  Var<T> operator()(const Var<T>& x) const {
    const Pair pad(opt_.dilation.h * (opt_.kernel - 1) / 2, opt_.dilation.w * (opt_.kernel - 1) / 2);
    Var<T> y = ops::depthwise_conv2d(x, depthwise_, opt_.stride, pad, opt_.dilation);
    y = ops::conv2d(y, pointwise_, bias_, Pair(1), Pair(0), Pair(1));
    if (bn_) y = (*bn_)(y);
    if (opt_.act) y = ops::leaky_relu(y, static_cast<T>(kLeakySlope));
    return y;
  }

  Var<T>& pointwise() { return pointwise_; }
  Var<T>& bias() { return bias_; }

 private:
  Options opt_;
  Var<T>& depthwise_;
  Var<T>& pointwise_;
  Var<T> bias_;
  BatchNorm2d<T>* bn_ = nullptr;
};

// Depthwise transposed convolution (upsampling by `stride`) followed by a
// pointwise projection.
template <typename T>
class SeparableConvTranspose2d : public Module<T> {
 public:
  SeparableConvTranspose2d(Rng& rng, int64_t cin, int64_t cout, int kernel = 2, int stride = 2)
      : stride_(stride),
        depthwise_(this->add_parameter("depthwise", he_normal<T>(rng, Shape{cin, 1, kernel, kernel},
                                                                 kernel * kernel))),
        pointwise_(this->add_parameter("pointwise", he_normal<T>(rng, Shape{cout, cin, 1, 1}, cin))),
        bn_(this->add_module("bn", std::make_unique<BatchNorm2d<T>>(cout))) {}

  const char* kind() const override { return "SeparableConvTranspose2d"; }

  Var<T> operator()(const Var<T>& x) {
    Var<T> y = ops::depthwise_conv_transpose2d(x, depthwise_, stride_);
    y = ops::conv2d(y, pointwise_, Var<T>(), Pair(1), Pair(0), Pair(1));
    return ops::leaky_relu(bn_(y), static_cast<T>(kLeakySlope));
  }

 private:
  int stride_;
  Var<T>& depthwise_;
  Var<T>& pointwise_;
  BatchNorm2d<T>& bn_;
};

template <typename T>
class Linear : public Module<T> {
 public:
  Linear(Rng& rng, int64_t in, int64_t out)
      : weight_(this->add_parameter("weight", he_normal<T>(rng, Shape{out, in}, in))),
        bias_(this->add_parameter("bias", Tensor<T>(Shape{out}))) {}

  const char* kind() const override { return "Linear"; }

  Var<T> operator()(const Var<T>& x) const { return ops::linear(x, weight_, bias_); }

  Var<T>& weight() { return weight_; }
  Var<T>& bias() { return bias_; }

 private:
  Var<T>& weight_;
  Var<T>& bias_;
};

// Conv2d (no bias) + BatchNorm2d + optional leaky ReLU.
template <typename T>
class ConvBnAct : public Module<T> {
 public:
  ConvBnAct(Rng& rng, int64_t cin, int64_t cout, int kernel = 3, Pair stride = 1, bool act = true)
      : conv_(this->add_module("conv", std::make_unique<Conv2d<T>>(
                                           rng, cin, cout, ConvOptions{kernel, stride, 1, false}))),
        bn_(this->add_module("bn", std::make_unique<BatchNorm2d<T>>(cout))),
        act_(act) {}

  const char* kind() const override { return "ConvBnAct"; }

  Var<T> operator()(const Var<T>& x) {
    Var<T> y = bn_(conv_(x));
    return act_ ? ops::leaky_relu(y, static_cast<T>(kLeakySlope)) : y;
  }

 private:
  Conv2d<T>& conv_;
  BatchNorm2d<T>& bn_;
  bool act_;
};

// Sets every parameter of `m` to zero.
template <typename T>
void zero_parameters(Module<T>& m) {
  for (auto& [_, p] : m.named_parameters()) p->mutable_value().fill(T(0));
}

}  // namespace pandepth::nn

#endif  // PANDEPTH_NN_HPP_
