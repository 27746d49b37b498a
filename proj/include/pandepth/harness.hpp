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

#ifndef PANDEPTH_HARNESS_HPP_
#define PANDEPTH_HARNESS_HPP_

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "pandepth/checkpoint.hpp"
#include "pandepth/config.hpp"
#include "pandepth/datapipe.hpp"
#include "pandepth/fusion.hpp"
#include "pandepth/log.hpp"
#include "pandepth/losses.hpp"
#include "pandepth/metrics.hpp"
#include "pandepth/model.hpp"
#include "pandepth/optim.hpp"
#include "pandepth/panoptic_io.hpp"
#include "pandepth/recon3d.hpp"

namespace pandepth {

using Model = PanDepth<float>;

// ------------------------------------------------------------------ data

inline std::unique_ptr<Dataset> make_dataset(const RunConfig& cfg, const LabelSchema& schema,
                                             const std::string& split) {
  if (cfg.data_root.empty()) {
    if (split != "train" && split != "val" && split != "test")
      throw ConfigError("unknown split '" + split + "' (expected train, val or test)");
    return std::make_unique<SyntheticDataset>(static_cast<size_t>(cfg.synthetic_frames),
                                              derive_seed(cfg.seed, fnv1a64("synthetic-split"), fnv1a64(split)),
                                              schema, cfg.data);
  }
  const DatasetIndex idx = build_index(cfg.data_root, cfg.splits);
  if (idx.skipped > 0) log::warn(std::to_string(idx.skipped) + " frames skipped for missing modalities");
  return std::make_unique<VkittiDataset>(idx.split(split), schema, cfg.data);
}

// ------------------------------------------------------------------ losses

template <typename T>
struct StepLoss {
  Var<T> joint;
  LossReport report;
};

// Every enabled loss term for one frame. The semantic term supervises the
// refined logits and, when the joint branch exists, the preliminary ones.
template <typename T>
StepLoss<T> frame_loss(PanDepth<T>& model, const Sample& s, Rng& rng) {
  std::unique_ptr<PointGraph> graph;
  if (model.depth()) graph = std::make_unique<PointGraph>(model.point_graph(s.input_depth, s.intrinsics));
  DenseOutputs<T> d = model.forward_dense(s.frame, s.input_depth, graph.get());
  std::vector<Var<T>> terms;
  StepLoss<T> out;
  if (model.semantic()) {
    Var<T> sem = semantic_loss(d.refined, s.semantic_gt);
    if (model.joint()) sem = ops::add(sem, semantic_loss(d.preliminary, s.semantic_gt));
    out.report.semantic = static_cast<double>(sem.item());
    terms.push_back(sem);
  }
  if (model.instance()) {
    const InstanceTargets gt = instance_targets(s.panoptic_gt, model.schema());
    const auto io = model.instance()->train_forward(d.pyramid, gt, model.schema(), s.frame.h, s.frame.w, rng);
    const InstanceLoss<T> il = instance_loss(io);
    out.report.os = static_cast<double>(il.os.item());
    out.report.op = static_cast<double>(il.op.item());
    out.report.cls = static_cast<double>(il.cls.item());
    out.report.box = static_cast<double>(il.box.item());
    out.report.mask = static_cast<double>(il.mask.item());
    for (const auto* v : {&il.os, &il.op, &il.cls, &il.box, &il.mask})
      if (v->requires_grad()) terms.push_back(*v);
  }
  if (model.depth()) {
    Var<T> dl = depth_loss(d.depth, s.gt_depth);
    out.report.depth = static_cast<double>(dl.item());
    terms.push_back(dl);
  }
  joint_loss(out.report);
  out.joint = terms.size() == 1 ? terms[0] : ops::add_n(terms);
  return out;
}

inline bool finite_report(const LossReport& r) {
  for (double v : {r.semantic, r.os, r.op, r.cls, r.box, r.mask, r.depth, r.joint})
    if (!std::isfinite(v)) return false;
  return true;
}

// ------------------------------------------------------------------ evaluation

// Per-frame prediction in the form consumed by the metrics. Missing members
// belong to disabled branches.
struct FramePrediction {
  std::optional<LabelMap> semantic;
  std::optional<std::vector<Detection>> detections;
  std::optional<PanopticMap> panoptic;
  std::optional<DenseDepthMap> depth;
};

inline std::vector<Detection> to_detections(const std::vector<InstancePrediction>& inst, int64_t h, int64_t w,
                                            bool with_pixels) {
  std::vector<Detection> out;
  for (const auto& p : inst) {
    Detection d{p.box, p.class_id, p.score, {}};
    if (with_pixels) {
      const PastedMask m = paste_mask(p, h, w);
      for (int64_t y = m.y0; y < m.y1; ++y)
        for (int64_t x = m.x0; x < m.x1; ++x)
          if (m.logit[(y - m.y0) * (m.x1 - m.x0) + (x - m.x0)] > 0) d.pixels.push_back(static_cast<int32_t>(y * w + x));
    }
    out.push_back(std::move(d));
  }
  return out;
}

inline std::vector<GroundTruthBox> ground_truth_boxes(const Sample& s, const LabelSchema& schema) {
  const InstanceTargets t = instance_targets(s.panoptic_gt, schema);
  std::vector<GroundTruthBox> out;
  for (size_t i = 0; i < t.boxes.size(); ++i) {
    GroundTruthBox g{t.boxes[i], t.classes[i], {}};
    for (int64_t p = 0; p < t.masks[i].size(); ++p)
      if (t.masks[i].data[p]) g.pixels.push_back(static_cast<int32_t>(p));
    out.push_back(std::move(g));
  }
  return out;
}

inline FramePrediction to_frame_prediction(const RawPrediction& raw, const LabelSchema& schema,
                                           const FusionConfig& fusion, bool mask_pixels, int64_t h, int64_t w) {
  FramePrediction f;
  if (raw.has_semantic) f.semantic = semantic_argmax(raw.semantic);
  if (raw.has_instances) f.detections = to_detections(raw.instances, h, w, mask_pixels);
  if (raw.has_semantic && raw.has_instances) f.panoptic = panoptic_fuse(raw.semantic, raw.instances, schema, fusion);
  if (raw.has_depth) f.depth = raw.depth;
  return f;
}

inline void accumulate_frame(MetricAccumulator& acc, const FramePrediction& f, const Sample& s,
                             const LabelSchema& schema, int64_t frame_id) {
  acc.enable(f.semantic.has_value(), f.detections.has_value(), f.panoptic.has_value(), f.depth.has_value());
  if (f.semantic) acc.confusion().add(*f.semantic, s.semantic_gt);
  if (f.detections) acc.detections().add(frame_id, *f.detections, ground_truth_boxes(s, schema));
  if (f.panoptic) acc.panoptic().add(*f.panoptic, s.panoptic_gt, schema);
  if (f.depth && s.gt_depth.count_valid() > 0) acc.depth().add(*f.depth, s.gt_depth);
  acc.mark_frame();
}

inline MetricReport evaluate(Model& model, const Dataset& data, const RunConfig& cfg, int64_t max_frames = 0) {
  const size_t n = max_frames > 0 ? std::min(data.size(), static_cast<size_t>(max_frames)) : data.size();
  if (n == 0) throw ArgumentError("evaluate: the split holds no frames");
  MetricAccumulator acc(model.schema().num_channels(), cfg.mask_map);
  for (size_t i = 0; i < n; ++i) {
    const Sample s = data.load(i);
    const RawPrediction raw = model.infer(s.frame, s.input_depth, s.intrinsics);
    accumulate_frame(acc, to_frame_prediction(raw, model.schema(), cfg.fusion, cfg.mask_map, s.frame.h, s.frame.w), s,
                     model.schema(), static_cast<int64_t>(i));
  }
  return acc.report();
}

// ------------------------------------------------------------------ training

struct StepRecord {
  int64_t step = 0;
  int64_t epoch = 0;
  LossReport loss;  // mean over the batch
};

class Trainer {
 public:
  // `resume` names a checkpoint to continue from; empty starts fresh.
  Trainer(RunConfig cfg, LabelSchema schema, const std::string& resume = "")
      : cfg_(std::move(cfg)),
        schema_(std::move(schema)),
        model_(cfg_.model_config(schema_), schema_, cfg_.seed),
        adam_(model_.named_parameters(), cfg_.adam),
        train_(make_dataset(cfg_, schema_, "train")) {
    cfg_.check();
    if (train_->size() == 0) throw ArgumentError("train: the training split holds no frames");
    if (!resume.empty()) prog_ = load_checkpoint(resume, model_, cfg_.architecture_hash(), &adam_);
  }

  Model& model() { return model_; }
  const TrainProgress& progress() const { return prog_; }
  const std::vector<StepRecord>& history() const { return history_; }
  const RunConfig& config() const { return cfg_; }

  int64_t batches_per_epoch() const {
    return (static_cast<int64_t>(train_->size()) + cfg_.batch_size - 1) / cfg_.batch_size;
  }

  bool finished() const {
    return prog_.epoch >= cfg_.epochs || (cfg_.max_steps > 0 && prog_.step >= cfg_.max_steps);
  }

  // Frame order of an epoch; a pure function of (seed, epoch).
  std::vector<size_t> epoch_order(int64_t epoch) const {
    std::vector<size_t> order(train_->size());
    std::iota(order.begin(), order.end(), size_t{0});
    Rng rng(derive_seed(cfg_.seed, fnv1a64("epoch"), static_cast<uint64_t>(epoch)));
    rng.shuffle(order.begin(), order.end());
    return order;
  }

  // One optimizer step over the next batch. Returns the batch-mean losses.
  StepRecord step() {
    PANDEPTH_CHECK_ARG(!finished(), "train: no steps left");
    model_.set_training(true);
    const auto order = epoch_order(prog_.epoch);
    const size_t b0 = static_cast<size_t>(prog_.epoch_step * cfg_.batch_size);
    const size_t b1 = std::min(order.size(), b0 + static_cast<size_t>(cfg_.batch_size));
    const double inv = 1.0 / static_cast<double>(b1 - b0);
    adam_.zero_grad();
    StepRecord rec{prog_.step, prog_.epoch, {}};
    std::vector<std::string> keys;
    for (size_t j = b0; j < b1; ++j) {
      const Sample s = train_->load(order[j]);
      keys.push_back(std::to_string(order[j]) + ":" + s.scene + "/" + s.variation + "/" + std::to_string(s.frame_index));
      Rng rng(derive_seed(cfg_.seed, fnv1a64("step"), static_cast<uint64_t>(prog_.step), static_cast<uint64_t>(j)));
      StepLoss<float> l = frame_loss(model_, s, rng);
      if (!finite_report(l.report)) abort_non_finite(keys, l.report);
      ops::scale(l.joint, static_cast<float>(inv)).backward();
      for (auto [dst, src] : {std::pair{&rec.loss.semantic, l.report.semantic}, {&rec.loss.os, l.report.os},
                              {&rec.loss.op, l.report.op}, {&rec.loss.cls, l.report.cls}, {&rec.loss.box, l.report.box},
                              {&rec.loss.mask, l.report.mask}, {&rec.loss.depth, l.report.depth}})
        *dst += src * inv;
    }
    joint_loss(rec.loss);
    adam_.step();
    ++prog_.step;
    if (++prog_.epoch_step >= batches_per_epoch()) {
      prog_.epoch_step = 0;
      ++prog_.epoch;
    }
    history_.push_back(rec);
    return rec;
  }

  void save(const std::string& path) { save_checkpoint(path, model_, cfg_.architecture_hash(), prog_, &adam_); }

  // Full loop with CSV logging, per-epoch validation, best-by-PQ and last
  // checkpoints.
  void run() {
    namespace fs = std::filesystem;
    fs::create_directories(cfg_.checkpoint_dir);
    const fs::path csv = fs::path(cfg_.checkpoint_dir) / "train_log.csv";
    const bool fresh = prog_.step == 0 || !fs::exists(csv);
    std::ofstream log_csv(csv, fresh ? std::ios::trunc : std::ios::app);
    if (!log_csv) throw IoError("cannot open '" + csv.string() + "'");
    if (fresh) log_csv << "step,epoch,joint,semantic,os,op,cls,box,mask,depth\n";
    std::unique_ptr<Dataset> val;
    if (cfg_.validate_each_epoch) val = make_dataset(cfg_, schema_, "val");
    const std::string last = (fs::path(cfg_.checkpoint_dir) / "last.ckpt").string();
    while (!finished()) {
      const int64_t epoch = prog_.epoch;
      const StepRecord r = step();
      char line[256];
      std::snprintf(line, sizeof(line), "%lld,%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                    static_cast<long long>(r.step), static_cast<long long>(r.epoch), r.loss.joint, r.loss.semantic,
                    r.loss.os, r.loss.op, r.loss.cls, r.loss.box, r.loss.mask, r.loss.depth);
      log_csv << line << std::flush;
      if (prog_.epoch != epoch) end_epoch(epoch, val.get());
    }
    save(last);
  }

 private:
  [[noreturn]] void abort_non_finite(const std::vector<std::string>& keys, const LossReport& r) {
    std::string msg = "non-finite loss at step " + std::to_string(prog_.step) + " (epoch " +
                      std::to_string(prog_.epoch) + "); batch frames:";
    for (const auto& k : keys) msg += " " + k;
    char buf[256];
    std::snprintf(buf, sizeof(buf), "; terms semantic=%g os=%g op=%g cls=%g box=%g mask=%g depth=%g", r.semantic,
                  r.os, r.op, r.cls, r.box, r.mask, r.depth);
    msg += buf;
    std::filesystem::create_directories(cfg_.checkpoint_dir);
    std::ofstream((std::filesystem::path(cfg_.checkpoint_dir) / "nonfinite_batch.txt").string()) << msg << "\n";
    throw NumericError(msg);
  }

  void end_epoch(int64_t epoch, const Dataset* val) {
    namespace fs = std::filesystem;
    save((fs::path(cfg_.checkpoint_dir) / "last.ckpt").string());
    if (!val || val->size() == 0) return;
    const MetricReport rep = evaluate(model_, *val, cfg_, cfg_.max_eval_frames);
    std::ofstream((fs::path(cfg_.checkpoint_dir) / ("val_epoch" + std::to_string(epoch) + ".json")).string())
        << to_json(rep, schema_).dump(2) << "\n";
    log::info("epoch " + std::to_string(epoch) + "\n" + format_table(rep));
    const double pq = rep.pq.value_or(rep.miou.value_or(0.0));
    if (pq > prog_.best_pq) {
      prog_.best_pq = pq;
      save((fs::path(cfg_.checkpoint_dir) / "best.ckpt").string());
    }
  }

  RunConfig cfg_;
  LabelSchema schema_;
  Model model_;
  Adam<float> adam_;
  std::unique_ptr<Dataset> train_;
  TrainProgress prog_;
  std::vector<StepRecord> history_;
};

// ------------------------------------------------------------------ prediction

struct PredictionFiles {
  std::string panoptic, depth, ply;
};

// Writes <stem>.panoptic.png (+ .json sidecar), <stem>.depth.png and, with
// `ply`, <stem>.ply for one frame. Files of disabled branches are skipped.
inline PredictionFiles write_prediction(const RawPrediction& raw, const Sample& s, const LabelSchema& schema,
                                        const RunConfig& cfg, const std::string& dir, const std::string& stem,
                                        bool ply) {
  std::filesystem::create_directories(dir);
  const std::string base = (std::filesystem::path(dir) / stem).string();
  PredictionFiles files;
  std::optional<PanopticMap> pan;
  if (raw.has_semantic) pan = panoptic_fuse(raw.semantic, raw.has_instances ? raw.instances : std::vector<InstancePrediction>{},
                                            schema, cfg.fusion);
  if (pan) {
    files.panoptic = base + ".panoptic.png";
    io::write_panoptic(files.panoptic, *pan, schema);
  }
  if (raw.has_depth) {
    files.depth = base + ".depth.png";
    io::write_depth_png(files.depth, raw.depth);
    if (ply) {
      files.ply = base + ".ply";
      const PanopticMap labels = pan ? *pan : PanopticMap(s.frame.h, s.frame.w);
      export_ply(files.ply, build_point_cloud(raw.depth, labels, s.frame, s.intrinsics, cfg.ply_stride));
    }
  }
  return files;
}

inline std::string sample_stem(const Sample& s) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%05d", s.frame_index);
  return s.scene + "_" + s.variation + "_cam" + std::to_string(s.camera) + "_" + buf;
}

// ------------------------------------------------------------------ model size

inline std::string format_param_table(const ParamTable& t) {
  std::string out = "Structure   Params\n";
  auto row = [&](const char* name, int64_t n) {
    char buf[80];
    std::snprintf(buf, sizeof(buf), "%-10s  %6.1fM  (%lld)\n", name, static_cast<double>(n) / 1e6,
                  static_cast<long long>(n));
    out += buf;
  };
  row("Backbone", t.backbone);
  row("FPN", t.fpn);
  row("Semantic", t.semantic);
  row("Instance", t.instance);
  row("Depth", t.depth);
  row("Joint", t.joint);
  row("Total", t.total());
  return out;
}

}  // namespace pandepth

#endif  // PANDEPTH_HARNESS_HPP_
