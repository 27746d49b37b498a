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

// Acceptance runner. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "pandepth/harness.hpp"

namespace pandepth {
namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void fail(const std::string& why) {
    if (pass) detail.clear();
    pass = false;
    if (!detail.empty()) detail += "; ";
    detail += why;
  }
  void note(const std::string& s) {
    if (!pass) return;
    if (!detail.empty()) detail += ", ";
    detail += s;
  }
};

std::string fmt(const char* f, double a) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), f, a);
  return buf;
}

const LabelSchema& schema() {
  static const LabelSchema s = LabelSchema::vkitti2();
  return s;
}

// ------------------------------------------------------------------ 1

Outcome parameter_budget() {
  Outcome o;
  const Model m(ModelConfig::b5(schema()), schema(), 0);
  const ParamTable t = m.param_table();
  const std::vector<std::pair<const char*, std::pair<int64_t, double>>> rows = {
      {"Backbone", {t.backbone, 25.2}}, {"FPN", {t.fpn, 1.5}},         {"Semantic", {t.semantic, 1.2}},
      {"Instance", {t.instance, 53.1}}, {"Depth", {t.depth, 1.9}},     {"Joint", {t.joint, 1.2}},
      {"Total", {t.total(), 84.0}}};
  for (const auto& [name, v] : rows) {
    const double got = static_cast<double>(v.first) / 1e6;
    if (std::abs(got - v.second) > 0.15 * v.second)
      o.fail(std::string(name) + " " + fmt("%.2fM", got) + " vs " + fmt("%.1fM", v.second));
  }
  o.note("total " + fmt("%.1fM", static_cast<double>(t.total()) / 1e6));
  return o;
}

// ------------------------------------------------------------------ 2

Outcome metric_oracles() {
  Outcome o;
  Rng rng(20240611);
  const int trials = 600;
  for (int t = 0; t < trials; ++t) {
    const auto [pred, gt] = oracle::random_pq_pair(rng, schema(), t);
    const auto ref = oracle::brute_pq_rq_sq(pred, gt);
    const auto got = pq_rq_sq(pred, gt, schema());
    bool same = got.pq == ref.pq && got.rq == ref.rq && got.sq == ref.sq &&
                got.per_class.size() == ref.per_class.size();
    for (const auto& [c, s] : ref.per_class) {
      const auto it = got.per_class.find(c);
      same = same && s.one_to_one && it != got.per_class.end() && it->second.tp == s.tp && it->second.fp == s.fp &&
             it->second.fn == s.fn && it->second.iou_sum == s.iou;
    }
    if (!same) {
      o.fail("PQ differs from brute force on pair " + std::to_string(t));
      break;
    }
  }
  o.note(std::to_string(trials) + " PQ pairs");

  LabelMap gt(2, 2), pr(2, 2);
  gt.data = {1, 1, 2, 2};
  pr.data = {1, 2, 2, 2};
  if (std::abs(miou(pr, gt, schema()).miou - 7.0 / 12.0) > 1e-6) o.fail("mIoU example");

  SparseDepthMap dg(1, 2);
  dg.set(0, 10.f);
  dg.set(1, 10.f);
  DenseDepthMap dp(1, 2);
  dp.depth.data = {12.f, 6.f};
  if (std::abs(rmse(dp, dg) - std::sqrt(10.0) * 1000.0) > 1e-6) o.fail("RMSE example");

  const std::vector<std::vector<GroundTruthBox>> gts = {{{{0, 0, 16, 10}, 13, {}}}};
  const double perfect = coco_map({{{{0, 0, 16, 10}, 13, 1.0, {}}}}, gts);
  const double shifted = coco_map({{{{4, 0, 20, 10}, 13, 1.0, {}}}}, gts);
  const double none = coco_map({{}}, gts);
  if (std::abs(perfect - 1.0) > 1e-6 || std::abs(shifted - 0.3) > 1e-6 || std::abs(none) > 1e-6)
    o.fail("mAP examples " + fmt("%.6f", perfect) + "/" + fmt("%.6f", shifted) + "/" + fmt("%.6f", none));

  PanopticMap pg(2, 8), pp(2, 8);
  for (int64_t x = 0; x < 8; ++x) {
    pg.class_map(0, x) = 13;
    pg.instance_map(0, x) = 1;
    pg.class_map(1, x) = 6;
    pp.class_map(1, x) = 6;
  }
  for (int64_t x = 0; x < 6; ++x) {
    pp.class_map(0, x) = 13;
    pp.instance_map(0, x) = 1;
  }
  for (int64_t x = 0; x < 2; ++x) {
    pp.class_map(1, x) = 13;
    pp.instance_map(1, x) = 1;
  }
  const PqClassStats car = pq_rq_sq(pp, pg, schema()).per_class.at(13);
  if (std::abs(car.pq() - 0.6) > 1e-6 || std::abs(car.rq() - 1.0) > 1e-6 || std::abs(car.sq() - 0.6) > 1e-6)
    o.fail("PQ example");
  return o;
}

// ------------------------------------------------------------------ 3

Outcome loss_oracles() {
  using VarD = Var<double>;
  Outcome o;
  Rng rng(31);
  const int trials = 250;
  double worst = 0;
  for (int t = 0; t < trials; ++t) {
    const int64_t nc = 2 + static_cast<int64_t>(rng.index(14)), h = 1 + static_cast<int64_t>(rng.index(8)),
                  w = 1 + static_cast<int64_t>(rng.index(8));
    Tensor<double> z(Shape{1, nc, h, w});
    const bool coarse = t % 3 == 0;
    for (auto& v : z.values()) v = coarse ? static_cast<double>(rng.index(3)) : rng.normal() * 3.0;
    LabelMap gt(h, w);
    for (auto& v : gt.data) v = static_cast<int32_t>(rng.index(static_cast<uint64_t>(nc)));
    gt.data[rng.index(gt.data.size())] = 1;
    worst = std::max(worst, std::abs(semantic_loss(VarD(z), gt).item() -
                                     oracle::naive_semantic_loss(z.values(), nc, h, w, gt)));
  }
  if (worst > 1e-6) o.fail("semantic loss off oracle by " + fmt("%.3g", worst));
  o.note(std::to_string(trials) + " semantic inputs");

  for (int t = 0; t < 100; ++t) {
    SparseDepthMap gt(6, 7);
    for (int64_t i = 0; i < 42; ++i)
      if (rng.uniform() < 0.3 || i == 0) gt.set(i, static_cast<float>(rng.uniform(1, 80)));
    Tensor<double> p = oracle::random_tensor(rng, {1, 1, 6, 7}, 20.0);
    const double base = depth_loss(VarD(p), gt).item();
    for (int64_t i = 0; i < 42; ++i)
      if (!gt.valid.data[i]) p[i] = rng.uniform(-1e4, 1e4);
    if (depth_loss(VarD(p), gt).item() != base) {
      o.fail("depth loss depends on invalid pixels");
      break;
    }
  }

  for (int t = 0; t < 200; ++t) {
    LossReport r{rng.uniform(0, 10), rng.uniform(0, 10), rng.uniform(0, 10), rng.uniform(0, 10),
                 rng.uniform(0, 10), rng.uniform(0, 10), rng.uniform(0, 10), 0};
    const double sum = r.semantic + r.os + r.op + r.cls + r.box + r.mask + r.depth;
    if (std::abs(joint_loss(r) - sum) > 1e-6) {
      o.fail("joint loss is not the sum of its terms");
      break;
    }
  }

  double grad = 0;
  {
    auto z = oracle::leaf(rng, {1, 6, 5, 7}, 2.0);
    LabelMap gt(5, 7);
    for (auto& v : gt.data) v = static_cast<int32_t>(rng.index(6));
    grad = std::max(grad, oracle::gradient_error({z}, [&](const auto& v) { return semantic_loss(v[0], gt); }));
  }
  {
    auto p = oracle::leaf(rng, {1, 1, 6, 9}, 10.0);
    SparseDepthMap gt(6, 9);
    for (int64_t i = 0; i < 54; i += 3) gt.set(i, static_cast<float>(rng.uniform(1, 80)));
    grad = std::max(grad, oracle::gradient_error({p}, [&](const auto& v) { return depth_loss(v[0], gt); }));
  }
  {
    FuseBlockConfig cfg;
    cfg.channels = 4;
    cfg.mlp_width = 5;
    cfg.k = 3;
    FuseBlock<double> block(rng, cfg);
    // Keep every self-neighbour pre-activation off the leaky ReLU kink.
    for (auto& [name, p] : block.named_parameters())
      if (name == "mlp1.bias")
        for (auto& v : p->mutable_value().values()) v = rng.uniform(0.1, 0.5) * (rng.uniform() < 0.5 ? -1 : 1);
    SparseDepthMap d(5, 6);
    for (int64_t i = 0; i < 30; ++i)
      if (rng.uniform() < 0.4 || i == 0) d.set(i, static_cast<float>(rng.uniform(2, 40)));
    const PointGraph g = build_point_graph(backproject(d, CameraIntrinsics{20, 20, 3, 2.5}), cfg.k);
    std::vector<VarD> inputs{oracle::leaf(rng, {1, cfg.channels, 5, 6})};
    for (auto& [name, p] : block.named_parameters()) inputs.push_back(*p);
    grad = std::max(grad, oracle::gradient_error(
                              inputs, [&](const auto& v) { return oracle::weighted_sum(block(v[0], g)); }));
  }
  if (grad > 1e-4) o.fail("gradient check rel. err " + fmt("%.3g", grad));
  o.note("max grad rel. err " + fmt("%.2g", grad));
  return o;
}

// ------------------------------------------------------------------ 4

Outcome fusion_partition() {
  Outcome o;
  Rng rng(99);
  const int trials = 150;
  for (int t = 0; t < trials && o.pass; ++t) {
    const int64_t h = 4 + static_cast<int64_t>(rng.index(40)), w = 4 + static_cast<int64_t>(rng.index(40));
    const SemanticLogits sem = oracle::random_logits(rng, schema(), h, w);
    std::vector<InstancePrediction> inst;
    const size_t n = rng.index(12);
    for (size_t i = 0; i < n; ++i) inst.push_back(oracle::random_instance(rng, schema(), h, w));
    FusionConfig cfg;
    cfg.score_thresh = rng.uniform(0.0, 0.7);
    const PanopticMap p = panoptic_fuse(sem, inst, schema(), cfg);
    if (p.h() != h || p.w() != w || !oracle::is_valid_partition(p, schema(), n))
      o.fail("invalid partition on input " + std::to_string(t));
  }
  Rng grng(2024);
  for (int t = 0; t < 100 && o.pass; ++t) {
    const oracle::FusionCase fc = oracle::ground_truth_case(grng, schema());
    const auto r = pq_rq_sq(panoptic_fuse(fc.semantic, fc.instances, schema()), fc.gt, schema());
    if (r.pq != 1.0) o.fail("ground truth through fusion gives PQ " + fmt("%.6f", r.pq));
  }
  o.note(std::to_string(trials) + " random inputs, 100 ground-truth inputs");
  return o;
}

// ------------------------------------------------------------------ 5

Outcome pipeline_shapes() {
  Outcome o;
  Model m(ModelConfig::tiny(schema()), schema(), 1);
  const std::vector<std::pair<int64_t, int64_t>> sizes = {{64, 64}, {50, 70}, {33, 100}, {96, 192}, {128, 96}, {200, 1000}};
  for (const auto& [h, w] : sizes) {
    const std::string tag = std::to_string(h) + "x" + std::to_string(w);
    DataConfig dc;
    dc.height = h;
    dc.width = w;
    const Sample s = synthetic_sample(5, 0, schema(), dc);
    const PointGraph g = m.point_graph(s.input_depth, s.intrinsics);
    m.set_training(true);
    DenseOutputs<float> d = m.forward_dense(s.frame, s.input_depth, &g);
    const int strides[4] = {4, 8, 16, 32};
    for (int l = 0; l < 4; ++l) {
      const auto& p = d.pyramid.levels[l];
      if (p.dim(2) * strides[l] != padded_size(h) || p.dim(3) * strides[l] != padded_size(w))
        o.fail(tag + ": pyramid level " + std::to_string(l) + " is " + shape_str(p.shape()));
    }
    if (d.refined.shape() != Shape{1, schema().num_channels(), h, w}) o.fail(tag + ": logits " + shape_str(d.refined.shape()));
    if (d.depth.shape() != Shape{1, 1, h, w}) o.fail(tag + ": depth " + shape_str(d.depth.shape()));
    Rng rng(3);
    const auto io = m.instance()->train_forward(d.pyramid, instance_targets(s.panoptic_gt, schema()), schema(), h, w, rng);
    if (io.mask_logits.numel() != io.num_positive_rois * kMaskSize * kMaskSize)
      o.fail(tag + ": training masks are not " + std::to_string(kMaskSize) + "x" + std::to_string(kMaskSize));
    const RawPrediction raw = m.infer(s.frame, s.input_depth, s.intrinsics);
    if (raw.semantic.nc != schema().num_channels() || raw.semantic.h != h || raw.semantic.w != w)
      o.fail(tag + ": inferred logits");
    if (raw.depth.h() != h || raw.depth.w() != w) o.fail(tag + ": inferred depth");
  }
  o.note(std::to_string(sizes.size()) + " input sizes");
  return o;
}

// ------------------------------------------------------------------ 6

Outcome sparsifier() {
  Outcome o;
  DenseDepthMap d(200, 1000);
  for (int64_t i = 0; i < d.h() * d.w(); ++i) d.depth.data[i] = 1.f + static_cast<float>(i % 97);
  const auto a5 = sparsify(d, 0.05, 42), a20 = sparsify(d, 0.20, 42);
  if (a5.count_valid() != 10000) o.fail("5%: " + std::to_string(a5.count_valid()) + " pixels");
  if (a20.count_valid() != 40000) o.fail("20%: " + std::to_string(a20.count_valid()) + " pixels");
  if (!(sparsify(d, 0.05, 42) == a5) || !(sparsify(d, 0.20, 42) == a20)) o.fail("not deterministic under seed");
  if (sparsify(d, 0.05, 43).valid.data == a5.valid.data) o.fail("seed has no effect");
  o.note("10000 and 40000 pixels");
  return o;
}

// ------------------------------------------------------------------ 7

double pixel_accuracy(Model& m, const Sample& s) {
  const RawPrediction raw = m.infer(s.frame, s.input_depth, s.intrinsics);
  const LabelMap am = semantic_argmax(raw.semantic);
  int64_t ok = 0, n = 0;
  for (int64_t i = 0; i < am.size(); ++i)
    if (s.semantic_gt.data[i] != kVoidId) {
      ++n;
      ok += am.data[i] == s.semantic_gt.data[i];
    }
  return static_cast<double>(ok) / static_cast<double>(n);
}

Outcome overfit() {
  Outcome o;
  RunConfig cfg;
  cfg.preset = "tiny";
  cfg.synthetic_frames = 2;
  cfg.data.height = 96;
  cfg.data.width = 192;
  cfg.batch_size = 1;
  cfg.adam.lr = 3e-3;
  cfg.max_steps = 200;
  cfg.epochs = 100000;
  cfg.checkpoint_dir = (std::filesystem::temp_directory_path() / "pandepth_acceptance_overfit").string();
  const double kRmseLimitMm = 5000.0;

  Trainer t(cfg, schema());
  while (!t.finished()) t.step();
  const auto& h = t.history();
  // One epoch covers both frames, so compare the first and last epochs.
  const double first = 0.5 * (h[0].loss.joint + h[1].loss.joint);
  const double last = 0.5 * (h[h.size() - 2].loss.joint + h.back().loss.joint);
  const double drop = 1.0 - last / first;
  if (drop < 0.9) o.fail("joint loss dropped " + fmt("%.1f%%", 100 * drop));

  auto train = make_dataset(cfg, schema(), "train");
  double worst_acc = 1.0;
  for (size_t i = 0; i < train->size(); ++i) worst_acc = std::min(worst_acc, pixel_accuracy(t.model(), train->load(i)));
  if (worst_acc < 0.95) o.fail("pixel accuracy " + fmt("%.4f", worst_acc));
  const MetricReport rep = evaluate(t.model(), *train, cfg);
  const double rmse_mm = rep.rmse_mm.value_or(INFINITY);
  if (!(rmse_mm <= kRmseLimitMm)) o.fail("RMSE " + fmt("%.0f mm", rmse_mm));
  std::filesystem::remove_all(cfg.checkpoint_dir);
  o.note(std::to_string(h.size()) + " steps, joint " + fmt("%.2f", first) + " -> " + fmt("%.2f", last) + " (" +
         fmt("-%.1f%%", 100 * drop) + "), accuracy " + fmt("%.4f", worst_acc) + ", RMSE " + fmt("%.0f mm", rmse_mm));
  return o;
}

// ------------------------------------------------------------------ 8

std::vector<float> weights(Model& m) {
  std::vector<float> out;
  for (auto& [n, p] : m.named_parameters()) out.insert(out.end(), p->value().values().begin(), p->value().values().end());
  for (auto& [n, b] : m.named_buffers()) out.insert(out.end(), b->values().begin(), b->values().end());
  return out;
}

bool same_history(const std::vector<StepRecord>& a, const std::vector<StepRecord>& b, size_t offset = 0) {
  for (size_t i = 0; i < b.size(); ++i) {
    const LossReport &x = a[i + offset].loss, &y = b[i].loss;
    if (x.semantic != y.semantic || x.os != y.os || x.op != y.op || x.cls != y.cls || x.box != y.box ||
        x.mask != y.mask || x.depth != y.depth || x.joint != y.joint)
      return false;
  }
  return true;
}

Outcome reproducibility() {
  Outcome o;
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "pandepth_acceptance_repro";
  RunConfig cfg;
  cfg.preset = "tiny";
  cfg.synthetic_frames = 3;
  cfg.data.height = 48;
  cfg.data.width = 80;
  cfg.batch_size = 2;
  cfg.adam.lr = 1e-3;
  cfg.epochs = 1000;
  cfg.max_steps = 50;
  cfg.seed = cfg.data.seed = 7;
  cfg.checkpoint_dir = dir.string();

  Trainer a(cfg, schema()), b(cfg, schema());
  while (!a.finished()) a.step();
  while (!b.finished()) b.step();
  if (!same_history(a.history(), b.history()) || weights(a.model()) != weights(b.model()))
    o.fail("two identical 50-step runs differ");

  Trainer first(cfg, schema());
  for (int i = 0; i < 25; ++i) first.step();
  const std::string mid = (dir / "mid.ckpt").string();
  first.save(mid);
  Trainer second(cfg, schema(), mid);
  while (!second.finished()) second.step();
  if (second.progress().step != 50 || !same_history(a.history(), second.history(), 25) ||
      weights(second.model()) != weights(a.model()))
    o.fail("resumed run differs from uninterrupted run");
  fs::remove_all(dir);
  o.note("50 steps bitwise identical, resume at step 25 identical");
  return o;
}

}  // namespace
}  // namespace pandepth

int main() {
  using namespace pandepth;
  log::set_level(log::Level::kWarning);
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"parameter budget", parameter_budget},  {"metric oracles", metric_oracles},
      {"loss oracles", loss_oracles},          {"fusion partition", fusion_partition},
      {"pipeline shapes", pipeline_shapes},    {"sparsifier contract", sparsifier},
      {"overfit smoke test", overfit},         {"reproducibility", reproducibility}};
  int failed = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.fail(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s criterion %zu: %s (%s; %.1f s)\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first,
                o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
