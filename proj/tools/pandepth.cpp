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

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pandepth.hpp"

namespace {

using namespace pandepth;

struct Options {
  std::string config;
  std::string checkpoint;
  std::string split = "test";
  bool ply = false;
  std::vector<std::string> disable;
  std::vector<std::string> overrides;
  bool quiet = false;
};

RunConfig resolve_config(const Options& o) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : load_config(o.config);
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, config_detail::trim(kv.substr(0, eq)), config_detail::trim(kv.substr(eq + 1)));
  }
  if (!o.disable.empty()) {
    std::vector<std::string> all = config_detail::disabled_list(cfg.branches);
    all.insert(all.end(), o.disable.begin(), o.disable.end());
    config_detail::apply_disabled(cfg.branches, all);
  }
  cfg.check();
  return cfg;
}

std::string row_name(const RunConfig& cfg) {
  const auto& b = cfg.branches;
  if (b.semantic && b.instance && b.depth) return "PanDepth";
  if (b.semantic && !b.instance && !b.depth) return "Semantic_only";
  if (!b.semantic && b.instance && !b.depth) return "Instance_only";
  if (!b.semantic && !b.instance && b.depth) return "Depth_only";
  return "PanDepth(-" + config_detail::join(config_detail::disabled_list(b)) + ")";
}

std::unique_ptr<Model> load_model(const RunConfig& cfg, const LabelSchema& schema, const std::string& ckpt) {
  if (ckpt.empty()) throw ConfigError("--checkpoint is required");
  auto m = std::make_unique<Model>(cfg.model_config(schema), schema, cfg.seed);
  load_checkpoint(ckpt, *m, cfg.architecture_hash());
  return m;
}

int run_train(const Options& o) {
  const RunConfig cfg = resolve_config(o);
  Trainer t(cfg, LabelSchema::vkitti2(), o.checkpoint);
  t.run();
  std::cout << "trained " << t.progress().step << " steps; checkpoints in " << cfg.checkpoint_dir << "\n";
  return 0;
}

int run_eval(const Options& o) {
  const RunConfig cfg = resolve_config(o);
  const LabelSchema schema = LabelSchema::vkitti2();
  auto m = load_model(cfg, schema, o.checkpoint);
  const auto data = make_dataset(cfg, schema, o.split);
  const MetricReport rep = evaluate(*m, *data, cfg, cfg.max_eval_frames);
  std::filesystem::create_directories(cfg.output_dir);
  const auto path = std::filesystem::path(cfg.output_dir) / ("metrics_" + o.split + ".json");
  std::ofstream(path) << to_json(rep, schema).dump(2) << "\n";
  std::cout << format_table(rep, row_name(cfg)) << "report: " << path.string() << "\n";
  return 0;
}

int run_predict(const Options& o) {
  const RunConfig cfg = resolve_config(o);
  const LabelSchema schema = LabelSchema::vkitti2();
  auto m = load_model(cfg, schema, o.checkpoint);
  const auto data = make_dataset(cfg, schema, o.split);
  if (data->size() == 0) throw ArgumentError("predict: the split holds no frames");
  const size_t n = cfg.max_eval_frames > 0 ? std::min(data->size(), static_cast<size_t>(cfg.max_eval_frames))
                                           : data->size();
  for (size_t i = 0; i < n; ++i) {
    const Sample s = data->load(i);
    const RawPrediction raw = m->infer(s.frame, s.input_depth, s.intrinsics);
    const auto files = write_prediction(raw, s, schema, cfg, cfg.output_dir, sample_stem(s), o.ply);
    for (const auto* f : {&files.panoptic, &files.depth, &files.ply})
      if (!f->empty()) std::cout << *f << "\n";
  }
  return 0;
}

int run_param_count(const Options& o) {
  const RunConfig cfg = resolve_config(o);
  const LabelSchema schema = LabelSchema::vkitti2();
  Model m(cfg.model_config(schema), schema, cfg.seed);
  std::cout << "preset " << cfg.preset << "\n" << format_param_table(m.param_table());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint panoptic segmentation and depth completion"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "flat key = value config file");
    sub->add_option("--checkpoint", o.checkpoint, "checkpoint to load (train: resume from it)");
    sub->add_option("--disable-branch", o.disable, "drop a branch: semantic, instance or depth")
        ->check(CLI::IsMember({"semantic", "instance", "depth"}));
    sub->add_option("--set", o.overrides, "override a config key, key=value");
    sub->add_flag("--quiet", o.quiet, "only print errors");
  };
  auto* train = app.add_subcommand("train", "train a model");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  auto* predict = app.add_subcommand("predict", "write panoptic, depth and point cloud outputs");
  auto* params = app.add_subcommand("param-count", "print parameter counts per structure");
  auto* dump = app.add_subcommand("print-config", "print every config key with its value");
  for (auto* s : {train, eval, predict, params, dump}) common(s);
  for (auto* s : {eval, predict})
    s->add_option("--split", o.split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  predict->add_flag("--ply", o.ply, "also export a PLY point cloud");
  CLI11_PARSE(app, argc, argv);
  if (o.quiet) log::set_level(log::Level::kError);
  try {
    if (*train) return run_train(o);
    if (*eval) return run_eval(o);
    if (*predict) return run_predict(o);
    if (*params) return run_param_count(o);
    if (*dump) {
      std::cout << format_config(resolve_config(o));
      return 0;
    }
  } catch (const pandepth::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
