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

#ifndef PANDEPTH_OPTIM_HPP_
#define PANDEPTH_OPTIM_HPP_

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "pandepth/nn.hpp"

namespace pandepth {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moments are stored in double regardless of the
// parameter type. Parameters that received no gradient this step are left
// untouched and their moments do not advance.
template <typename T>
class Adam {
 public:
  Adam(std::vector<std::pair<std::string, Var<T>*>> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    PANDEPTH_CHECK_ARG(cfg.lr >= 0, "adam: learning rate must be >= 0");
    PANDEPTH_CHECK_ARG(cfg.beta1 >= 0 && cfg.beta1 < 1 && cfg.beta2 >= 0 && cfg.beta2 < 1,
                       "adam: betas must lie in [0, 1)");
    for (auto& [_, p] : params_) {
      m_.emplace_back(static_cast<size_t>(p->numel()), 0.0);
      v_.emplace_back(static_cast<size_t>(p->numel()), 0.0);
    }
  }

  const AdamConfig& config() const { return cfg_; }
  int64_t steps() const { return t_; }

  void zero_grad() {
    for (auto& [_, p] : params_) p->zero_grad();
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t k = 0; k < params_.size(); ++k) {
      Var<T>& p = *params_[k].second;
      const Tensor<T>& g = p.grad();
      if (g.numel() != p.numel()) continue;
      T* w = p.mutable_value().data();
      auto& m = m_[k];
      auto& v = v_[k];
      for (int64_t i = 0; i < p.numel(); ++i) {
        const double gi = static_cast<double>(g[i]);
        m[i] = cfg_.beta1 * m[i] + (1 - cfg_.beta1) * gi;
        v[i] = cfg_.beta2 * v[i] + (1 - cfg_.beta2) * gi * gi;
        const double upd = cfg_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
        w[i] = static_cast<T>(static_cast<double>(w[i]) - upd);
      }
    }
  }

  // State access for checkpointing.
  const std::vector<std::pair<std::string, Var<T>*>>& params() const { return params_; }
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  void set_steps(int64_t t) { t_ = t; }

 private:
  std::vector<std::pair<std::string, Var<T>*>> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  int64_t t_ = 0;
};

}  // namespace pandepth

#endif  // PANDEPTH_OPTIM_HPP_
