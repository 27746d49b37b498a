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

#ifndef PANDEPTH_TESTS_ORACLES_HPP_
#define PANDEPTH_TESTS_ORACLES_HPP_

// Independent reference implementations and random input generators shared
// by the unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <vector>

#include "pandepth/fusion.hpp"
#include "pandepth/losses.hpp"
#include "pandepth/metrics.hpp"
#include "pandepth/ops.hpp"
#include "pandepth/rng.hpp"

namespace pandepth::oracle {

// ------------------------------------------------------------------ gradients

inline Tensor<double> random_tensor(Rng& rng, Shape s, double scale = 1.0) {
  Tensor<double> t(std::move(s));
  for (auto& v : t.values()) v = rng.normal() * scale;
  return t;
}

inline Var<double> leaf(Rng& rng, Shape s, double scale = 1.0) {
  return Var<double>(random_tensor(rng, std::move(s), scale), true);
}

// Reduces any output to a scalar with fixed random weights so every output
// entry contributes a distinct gradient.
inline Var<double> weighted_sum(const Var<double>& y, uint64_t seed = 17) {
  Rng rng(seed);
  return ops::sum(ops::mul(y, Var<double>(random_tensor(rng, y.shape()))));
}

using ScalarFn = std::function<Var<double>(const std::vector<Var<double>>&)>;

// ||analytic - numeric|| / max(||analytic||, ||numeric||) over every entry of
// every input, numeric from central differences.
inline double gradient_error(std::vector<Var<double>> inputs, const ScalarFn& f, double h = 1e-6) {
  for (auto& v : inputs) v.zero_grad();
  f(inputs).backward();
  double diff = 0, norm_a = 0, norm_n = 0;
  for (auto& v : inputs) {
    const Tensor<double> analytic = v.grad();
    if (analytic.numel() != v.numel()) return INFINITY;
    for (int64_t i = 0; i < v.numel(); ++i) {
      const double orig = v.value()[i];
      v.mutable_value()[i] = orig + h;
      const double up = f(inputs).item();
      v.mutable_value()[i] = orig - h;
      const double down = f(inputs).item();
      v.mutable_value()[i] = orig;
      const double numeric = (up - down) / (2 * h);
      diff += (analytic[i] - numeric) * (analytic[i] - numeric);
      norm_a += analytic[i] * analytic[i];
      norm_n += numeric * numeric;
    }
  }
  const double norm = std::sqrt(std::max(norm_a, norm_n));
  return norm > 0 ? std::sqrt(diff) / norm : std::sqrt(diff);
}

// ------------------------------------------------------------------ semantic loss

// Full softmax, full sort of every labeled pixel and an explicit weight
// vector over the whole image.
inline double naive_semantic_loss(std::span<const double> z, int64_t nc, int64_t h, int64_t w, const LabelMap& gt) {
  const int64_t hw = h * w;
  std::vector<double> nll(static_cast<size_t>(hw), 0.0);
  std::vector<int64_t> labeled;
  for (int64_t i = 0; i < hw; ++i) {
    if (gt.data[i] == kVoidId) continue;
    std::vector<double> p(static_cast<size_t>(nc));
    double total = 0;
    for (int64_t c = 0; c < nc; ++c) total += p[c] = std::exp(z[c * hw + i]);
    nll[i] = -std::log(p[gt.data[i]] / total);
    labeled.push_back(i);
  }
  std::sort(labeled.begin(), labeled.end(),
            [&](int64_t a, int64_t b) { return nll[a] != nll[b] ? nll[a] > nll[b] : a < b; });
  const size_t q = labeled.size() / 4;
  std::vector<double> weight(static_cast<size_t>(hw), 0.0);
  for (size_t j = 0; j < q; ++j) weight[labeled[j]] = 4.0 / static_cast<double>(hw);
  double loss = 0;
  for (int64_t i = 0; i < hw; ++i) loss += weight[i] * nll[i];
  return loss;
}

// ------------------------------------------------------------------ panoptic quality

struct BruteStats {
  int64_t tp = 0, fp = 0, fn = 0;
  double iou = 0;
  bool one_to_one = true;
};

// Enumerates every (gt, pred) segment pair of the same class, matches pairs
// with IoU > 0.5 (prediction pixels on void excluded from the union) and
// counts unmatched predictions unless most of their area lies on void.
inline std::map<int32_t, BruteStats> brute_pq(const PanopticMap& pred, const PanopticMap& gt) {
  using Key = std::pair<int32_t, int32_t>;
  std::set<Key> gsegs, psegs;
  const int64_t n = gt.h() * gt.w();
  for (int64_t i = 0; i < n; ++i) {
    if (gt.class_map.data[i]) gsegs.insert({gt.class_map.data[i], gt.instance_map.data[i]});
    if (pred.class_map.data[i]) psegs.insert({pred.class_map.data[i], pred.instance_map.data[i]});
  }
  auto in = [](const PanopticMap& m, int64_t i, const Key& k) {
    return m.class_map.data[i] == k.first && m.instance_map.data[i] == k.second;
  };
  std::map<int32_t, BruteStats> out;
  std::map<Key, int> gmatch, pmatch;
  for (const auto& g : gsegs)
    for (const auto& p : psegs) {
      if (g.first != p.first) continue;
      int64_t inter = 0, uni = 0;
      for (int64_t i = 0; i < n; ++i) {
        const bool a = in(gt, i, g), b = in(pred, i, p);
        inter += a && b;
        uni += a || (b && gt.class_map.data[i] != kVoidId);
      }
      const double v = static_cast<double>(inter) / static_cast<double>(uni);
      if (v > 0.5) {
        ++gmatch[g];
        ++pmatch[p];
        ++out[g.first].tp;
        out[g.first].iou += v;
      }
    }
  for (const auto& [k, c] : gmatch)
    if (c != 1) out[k.first].one_to_one = false;
  for (const auto& [k, c] : pmatch)
    if (c != 1) out[k.first].one_to_one = false;
  for (const auto& g : gsegs)
    if (!gmatch.count(g)) ++out[g.first].fn;
  for (const auto& p : psegs) {
    if (pmatch.count(p)) continue;
    int64_t area = 0, on_void = 0;
    for (int64_t i = 0; i < n; ++i)
      if (in(pred, i, p)) {
        ++area;
        on_void += gt.class_map.data[i] == kVoidId;
      }
    if (2 * on_void > area) continue;
    ++out[p.first].fp;
  }
  return out;
}

// Class-averaged PQ, RQ and SQ from brute-force counts.
struct BruteResult {
  double pq = 0, rq = 0, sq = 0;
  std::map<int32_t, BruteStats> per_class;
};

inline BruteResult brute_pq_rq_sq(const PanopticMap& pred, const PanopticMap& gt) {
  BruteResult r;
  int n = 0;
  for (const auto& [c, s] : brute_pq(pred, gt)) {
    if (s.tp + s.fp + s.fn == 0) continue;
    r.per_class[c] = s;
    const double denom = static_cast<double>(s.tp) + 0.5 * static_cast<double>(s.fp + s.fn);
    r.pq += s.iou / denom;
    r.rq += static_cast<double>(s.tp) / denom;
    r.sq += s.tp ? s.iou / static_cast<double>(s.tp) : 0.0;
    ++n;
  }
  if (n) {
    r.pq /= n;
    r.rq /= n;
    r.sq /= n;
  }
  return r;
}

// Stuff classes 1..2, thing classes 13, 14 with up to 3 instances, and void.
inline PanopticMap random_panoptic(Rng& rng, const LabelSchema& schema, int64_t h, int64_t w) {
  static const int32_t classes[] = {0, 1, 2, 13, 14};
  PanopticMap m(h, w);
  for (int64_t i = 0; i < h * w; ++i) {
    const int32_t c = classes[rng.index(5)];
    m.class_map.data[i] = c;
    m.instance_map.data[i] = schema.is_thing(c) ? 1 + static_cast<int32_t>(rng.index(3)) : 0;
  }
  return m;
}

// Copy of `gt` with a random fraction of pixels replaced, which keeps many
// segments above the matching threshold.
inline PanopticMap perturbed(const PanopticMap& gt, const LabelSchema& schema, Rng& rng) {
  PanopticMap p = gt;
  const double rate = rng.uniform(0.0, 0.5);
  Rng local(rng.next());
  const PanopticMap noise = random_panoptic(local, schema, gt.h(), gt.w());
  for (int64_t i = 0; i < gt.h() * gt.w(); ++i)
    if (rng.uniform() < rate) {
      p.class_map.data[i] = noise.class_map.data[i];
      p.instance_map.data[i] = noise.instance_map.data[i];
    }
  return p;
}

// Random prediction/ground-truth pair for trial `t` of a sweep.
inline std::pair<PanopticMap, PanopticMap> random_pq_pair(Rng& rng, const LabelSchema& schema, int trial) {
  const int64_t h = 1 + static_cast<int64_t>(rng.index(8)), w = 1 + static_cast<int64_t>(rng.index(8));
  PanopticMap gt = random_panoptic(rng, schema, h, w);
  PanopticMap pred = trial % 3 == 0 ? random_panoptic(rng, schema, h, w) : perturbed(gt, schema, rng);
  return {std::move(pred), std::move(gt)};
}

// ------------------------------------------------------------------ fusion inputs

inline SemanticLogits random_logits(Rng& rng, const LabelSchema& schema, int64_t h, int64_t w) {
  SemanticLogits s;
  s.nc = schema.num_channels();
  s.h = h;
  s.w = w;
  s.logits.resize(static_cast<size_t>(s.nc * h * w));
  for (auto& v : s.logits) v = static_cast<float>(rng.normal() * 3.0);
  return s;
}

inline InstancePrediction random_instance(Rng& rng, const LabelSchema& schema, int64_t h, int64_t w) {
  InstancePrediction p;
  const double x = rng.uniform(-4, static_cast<double>(w)), y = rng.uniform(-4, static_cast<double>(h));
  p.box = {x, y, x + rng.uniform(1, static_cast<double>(w) / 2), y + rng.uniform(1, static_cast<double>(h) / 2)};
  const auto& things = schema.thing_classes();
  p.class_id = things[rng.index(things.size())];
  p.score = static_cast<float>(rng.uniform());
  for (auto& v : p.mask_logits) v = static_cast<float>(rng.normal() * 4.0);
  return p;
}

// Checks the partition contract of a fused map: valid ids, instance ids
// 1..k without gaps, one thing class per instance, at most `max_instances`.
inline bool is_valid_partition(const PanopticMap& p, const LabelSchema& schema, size_t max_instances) {
  try {
    validate(p, schema);
  } catch (const Error&) {
    return false;
  }
  std::map<int32_t, int32_t> cls;
  for (int64_t i = 0; i < p.h() * p.w(); ++i) {
    const int32_t id = p.instance_map.data[i], c = p.class_map.data[i];
    if (id == 0) {
      if (c != kVoidId && !schema.is_stuff(c)) return false;
      continue;
    }
    if (!schema.is_thing(c)) return false;
    auto [it, fresh] = cls.emplace(id, c);
    if (it->second != c) return false;
  }
  int32_t expect = 1;
  for (const auto& [id, _] : cls)
    if (id != expect++) return false;
  return cls.size() <= max_instances;
}

// Ground truth with two stuff bands and up to three disjoint rectangular
// instances, plus the semantic logits and instance predictions that encode
// it exactly.
struct FusionCase {
  PanopticMap gt;
  SemanticLogits semantic;
  std::vector<InstancePrediction> instances;
};

inline FusionCase ground_truth_case(Rng& rng, const LabelSchema& schema) {
  FusionCase fc;
  const int64_t h = 16 + static_cast<int64_t>(rng.index(32)), w = 16 + static_cast<int64_t>(rng.index(48));
  fc.gt = PanopticMap(h, w);
  const int32_t top = 1 + static_cast<int32_t>(rng.index(5)), bottom = 6 + static_cast<int32_t>(rng.index(5));
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) fc.gt.class_map(y, x) = y < h / 2 ? top : bottom;
  const int n = static_cast<int>(rng.index(4));
  for (int i = 0; i < n; ++i) {
    const int64_t bw = 3 + static_cast<int64_t>(rng.index(static_cast<uint64_t>(w / 3)));
    const int64_t bh = 3 + static_cast<int64_t>(rng.index(static_cast<uint64_t>(h / 3)));
    const int64_t x0 = static_cast<int64_t>(rng.index(static_cast<uint64_t>(w - bw)));
    const int64_t y0 = static_cast<int64_t>(rng.index(static_cast<uint64_t>(h - bh)));
    const Box b{static_cast<double>(x0), static_cast<double>(y0), static_cast<double>(x0 + bw),
                static_cast<double>(y0 + bh)};
    bool clash = false;
    for (const auto& o : fc.instances)
      clash = clash || (b.x1 < o.box.x2 && o.box.x1 < b.x2 && b.y1 < o.box.y2 && o.box.y1 < b.y2);
    if (clash) continue;
    InstancePrediction p;
    p.box = b;
    p.class_id = schema.thing_classes()[rng.index(schema.thing_classes().size())];
    p.score = 1.f;
    p.mask_logits.fill(20.f);
    for (int64_t y = y0; y < y0 + bh; ++y)
      for (int64_t x = x0; x < x0 + bw; ++x) {
        fc.gt.class_map(y, x) = p.class_id;
        fc.gt.instance_map(y, x) = static_cast<int32_t>(fc.instances.size()) + 1;
      }
    fc.instances.push_back(p);
  }
  fc.semantic.nc = schema.num_channels();
  fc.semantic.h = h;
  fc.semantic.w = w;
  fc.semantic.logits.assign(static_cast<size_t>(fc.semantic.nc * h * w), -10.f);
  for (int64_t i = 0; i < h * w; ++i) fc.semantic.logits[fc.gt.class_map.data[i] * h * w + i] = 10.f;
  return fc;
}

}  // namespace pandepth::oracle

#endif  // PANDEPTH_TESTS_ORACLES_HPP_
