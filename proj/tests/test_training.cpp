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

#include <cmath>
#include <filesystem>
#include <fstream>

#include <unistd.h>

#include "pandepth/harness.hpp"

namespace pandepth {
namespace {

namespace fs = std::filesystem;

const LabelSchema& schema() {
  static const LabelSchema s = LabelSchema::vkitti2();
  return s;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag)
      : path_(fs::temp_directory_path() / ("pandepth_train_" + tag + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string str(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

RunConfig small_run(const std::string& dir) {
  RunConfig c;
  c.preset = "tiny";
  c.synthetic_frames = 3;
  c.data.height = 48;
  c.data.width = 80;
  c.batch_size = 2;
  c.epochs = 100;
  c.adam.lr = 1e-3;
  c.seed = 12;
  c.data.seed = 12;
  c.checkpoint_dir = dir + "/ckpt";
  c.output_dir = dir + "/out";
  return c;
}

std::vector<std::vector<float>> snapshot(Model& m) {
  std::vector<std::vector<float>> out;
  for (auto& [n, p] : m.named_parameters()) out.emplace_back(p->value().values().begin(), p->value().values().end());
  for (auto& [n, b] : m.named_buffers()) out.emplace_back(b->values().begin(), b->values().end());
  return out;
}

std::vector<std::vector<float>> parameters_only(Model& m) {
  std::vector<std::vector<float>> out;
  for (auto& [n, p] : m.named_parameters()) out.emplace_back(p->value().values().begin(), p->value().values().end());
  return out;
}

bool same_losses(const LossReport& a, const LossReport& b) {
  return a.semantic == b.semantic && a.os == b.os && a.op == b.op && a.cls == b.cls && a.box == b.box &&
         a.mask == b.mask && a.depth == b.depth && a.joint == b.joint;
}

TEST(Training, ZeroLearningRateLeavesParametersUnchanged) {
  TempDir dir("lr0");
  RunConfig c = small_run(dir.str(""));
  c.adam.lr = 0;
  Trainer t(c, schema());
  const auto before = parameters_only(t.model());
  for (int i = 0; i < 3; ++i) {
    const StepRecord r = t.step();
    EXPECT_TRUE(finite_report(r.loss));
  }
  EXPECT_EQ(parameters_only(t.model()), before);
}

TEST(Training, StepsMoveParametersAndCountEpochs) {
  TempDir dir("move");
  Trainer t(small_run(dir.str("")), schema());
  EXPECT_EQ(t.batches_per_epoch(), 2);
  const auto before = parameters_only(t.model());
  t.step();
  EXPECT_NE(parameters_only(t.model()), before);
  EXPECT_EQ(t.progress().epoch, 0);
  t.step();  // second batch holds the leftover frame
  EXPECT_EQ(t.progress().epoch, 1);
  EXPECT_EQ(t.progress().epoch_step, 0);
  EXPECT_EQ(t.progress().step, 2);
}

TEST(Training, EpochOrderIsAPermutationFixedBySeed) {
  TempDir dir("order");
  RunConfig c = small_run(dir.str(""));
  c.synthetic_frames = 9;
  Trainer a(c, schema()), b(c, schema());
  for (int64_t e = 0; e < 4; ++e) {
    auto o = a.epoch_order(e);
    EXPECT_EQ(o, b.epoch_order(e));
    std::sort(o.begin(), o.end());
    for (size_t i = 0; i < o.size(); ++i) EXPECT_EQ(o[i], i);
  }
}

TEST(Training, FixedSeedIsBitwiseRepeatable) {
  TempDir dir("repeat");
  const RunConfig c = small_run(dir.str(""));
  Trainer a(c, schema()), b(c, schema());
  for (int i = 0; i < 6; ++i) {
    const StepRecord ra = a.step(), rb = b.step();
    ASSERT_TRUE(same_losses(ra.loss, rb.loss)) << "step " << i;
  }
  EXPECT_EQ(snapshot(a.model()), snapshot(b.model()));
}

TEST(Training, ResumeEqualsUninterrupted) {
  TempDir dir("resume");
  const RunConfig c = small_run(dir.str(""));
  Trainer full(c, schema());
  for (int i = 0; i < 5; ++i) full.step();

  Trainer first(c, schema());
  for (int i = 0; i < 3; ++i) first.step();
  first.save(dir.str("mid.ckpt"));
  Trainer second(c, schema(), dir.str("mid.ckpt"));
  EXPECT_EQ(second.progress().step, 3);
  EXPECT_EQ(second.progress().epoch, 1);
  EXPECT_EQ(second.progress().epoch_step, 1);
  for (int i = 0; i < 2; ++i) {
    const StepRecord r = second.step();
    ASSERT_TRUE(same_losses(r.loss, full.history()[static_cast<size_t>(3 + i)].loss)) << "step " << 3 + i;
  }
  EXPECT_EQ(snapshot(second.model()), snapshot(full.model()));
}

TEST(Training, ResumeRejectsOtherArchitecture) {
  TempDir dir("arch");
  RunConfig c = small_run(dir.str(""));
  Trainer t(c, schema());
  t.save(dir.str("a.ckpt"));
  c.branches.instance = false;
  EXPECT_THROW(Trainer(c, schema(), dir.str("a.ckpt")), CheckpointError);
}

TEST(Training, RunWritesLogAndCheckpoints) {
  TempDir dir("run");
  RunConfig c = small_run(dir.str(""));
  c.epochs = 2;
  c.synthetic_frames = 2;
  c.max_eval_frames = 1;
  Trainer t(c, schema());
  t.run();
  EXPECT_TRUE(t.finished());
  EXPECT_EQ(t.progress().step, 2);
  EXPECT_GE(t.progress().best_pq, 0.0);
  for (const char* f : {"train_log.csv", "last.ckpt", "best.ckpt", "val_epoch0.json", "val_epoch1.json"})
    EXPECT_TRUE(fs::exists(fs::path(c.checkpoint_dir) / f)) << f;
  std::ifstream in(fs::path(c.checkpoint_dir) / "train_log.csv");
  std::string header, line;
  std::getline(in, header);
  EXPECT_EQ(header, "step,epoch,joint,semantic,os,op,cls,box,mask,depth");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 2);
  // max_steps stops early.
  RunConfig capped = c;
  capped.epochs = 50;
  capped.max_steps = 1;
  capped.validate_each_epoch = false;
  capped.checkpoint_dir = dir.str("capped");
  Trainer tc(capped, schema());
  tc.run();
  EXPECT_EQ(tc.progress().step, 1);
}

TEST(Training, NonFiniteLossAbortsWithReport) {
  TempDir dir("nan");
  Trainer t(small_run(dir.str("")), schema());
  for (auto& [n, p] : t.model().named_parameters())
    if (n.rfind("depth.", 0) == 0) p->mutable_value().fill(std::nanf(""));
  EXPECT_THROW(t.step(), NumericError);
  EXPECT_TRUE(fs::exists(fs::path(t.config().checkpoint_dir) / "nonfinite_batch.txt"));
}

TEST(Training, JointLossIsTheSumOfTerms) {
  TempDir dir("sum");
  Trainer t(small_run(dir.str("")), schema());
  for (int i = 0; i < 3; ++i) {
    const StepRecord r = t.step();
    EXPECT_NEAR(r.loss.joint, r.loss.semantic + r.loss.instance() + r.loss.depth, 1e-6);
    EXPECT_GT(r.loss.semantic, 0);
    EXPECT_GT(r.loss.depth, 0);
    EXPECT_GT(r.loss.os, 0);
  }
}

// ------------------------------------------------------------------ evaluation and outputs

TEST(Evaluation, ReportAndPredictionFiles) {
  TempDir dir("eval");
  RunConfig c = small_run(dir.str(""));
  c.ply_stride = 4;
  Model m(c.model_config(schema()), schema(), 3);
  auto data = make_dataset(c, schema(), "val");
  const MetricReport r = evaluate(m, *data, c, 2);
  ASSERT_TRUE(r.miou && r.map && r.pq && r.rmse_mm);
  EXPECT_GE(*r.miou, 0.0);
  EXPECT_LE(*r.pq, 1.0);
  EXPECT_GT(*r.rmse_mm, 0.0);

  const Sample s = data->load(0);
  const RawPrediction raw = m.infer(s.frame, s.input_depth, s.intrinsics);
  const PredictionFiles f = write_prediction(raw, s, schema(), c, dir.str("pred"), sample_stem(s), true);
  EXPECT_TRUE(fs::exists(f.panoptic));
  EXPECT_TRUE(fs::exists(f.panoptic + ".json"));
  EXPECT_TRUE(fs::exists(f.depth));
  const PanopticCloud cloud = read_ply(f.ply);
  EXPECT_EQ(cloud.size(), static_cast<size_t>(((s.frame.h + 3) / 4) * ((s.frame.w + 3) / 4)));
  EXPECT_EQ(io::read_panoptic(f.panoptic).h(), s.frame.h);
  EXPECT_EQ(sample_stem(s), s.scene + "_" + s.variation + "_cam0_00000");
}

TEST(Evaluation, DisabledBranchesLeaveColumnsEmpty) {
  TempDir dir("eval_sem");
  RunConfig c = small_run(dir.str(""));
  c.branches = {true, false, false};
  Model m(c.model_config(schema()), schema(), 3);
  auto data = make_dataset(c, schema(), "test");
  const MetricReport r = evaluate(m, *data, c, 1);
  EXPECT_TRUE(r.miou.has_value());
  EXPECT_FALSE(r.map.has_value());
  EXPECT_FALSE(r.pq.has_value());
  EXPECT_FALSE(r.rmse_mm.has_value());
}

TEST(Evaluation, SplitsDifferAndUnknownSplitFails) {
  RunConfig c = small_run("/tmp");
  auto tr = make_dataset(c, schema(), "train"), va = make_dataset(c, schema(), "val");
  EXPECT_NE(tr->load(0).frame, va->load(0).frame);
  EXPECT_THROW(make_dataset(c, schema(), "dev"), ConfigError);
}

TEST(Evaluation, ParamTableFormatting) {
  ParamTable t{25'200'000, 1'500'000, 1'200'000, 53'100'000, 1'900'000, 1'200'000};
  const std::string s = format_param_table(t);
  EXPECT_NE(s.find("Backbone"), std::string::npos);
  EXPECT_NE(s.find("25.2M"), std::string::npos);
  EXPECT_NE(s.find("84.1M"), std::string::npos);
}

}  // namespace
}  // namespace pandepth
