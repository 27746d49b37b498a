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

#ifndef PANDEPTH_CONFIG_HPP_
#define PANDEPTH_CONFIG_HPP_

#include <algorithm>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pandepth/datapipe.hpp"
#include "pandepth/fusion.hpp"
#include "pandepth/model.hpp"
#include "pandepth/optim.hpp"

namespace pandepth {

struct RunConfig {
  // Empty root selects the procedural synthetic dataset.
  std::string data_root;
  int64_t synthetic_frames = 8;
  SplitConfig splits;
  DataConfig data;
  std::string preset = "b5";
  BranchToggles branches;
  AdamConfig adam;
  int64_t epochs = 50;
  int64_t batch_size = 2;
  int64_t max_steps = 0;  // 0 = no limit
  uint64_t seed = 0;
  FusionConfig fusion;
  std::string checkpoint_dir = "checkpoints";
  std::string output_dir = "outputs";
  bool validate_each_epoch = true;
  int64_t max_eval_frames = 0;  // 0 = whole split
  bool mask_map = false;
  int ply_stride = 1;

  void check() const {
    if (!(adam.lr >= 0)) throw ConfigError("optim.lr must be >= 0");
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (max_steps < 0) throw ConfigError("train.max_steps must be >= 0");
    for (double f : {data.input_fraction, data.gt_fraction})
      if (!(f > 0 && f <= 1)) throw ConfigError("sparsity fractions must lie in (0, 1]");
    if (data.height < 1 || data.width < 1) throw ConfigError("data.height and data.width must be positive");
    if (!branches.semantic && !branches.instance && !branches.depth)
      throw ConfigError("model.disable: at least one branch must stay enabled");
    if (ply_stride < 1) throw ConfigError("output.ply_stride must be >= 1");
  }

  ModelConfig model_config(const LabelSchema& schema) const {
    ModelConfig m = ModelConfig::from_preset(preset, schema);
    m.branches = branches;
    m.set_depth_max(data.depth_max);
    return m;
  }

  // Identity of everything that shapes the parameter set.
  uint64_t architecture_hash() const {
    std::ostringstream s;
    s << "preset=" << preset << ";sem=" << branches.semantic << ";inst=" << branches.instance
      << ";depth=" << branches.depth << ";depth_max=" << data.depth_max;
    return fnv1a64(s.str());
  }
};

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (auto t = trim(item); !t.empty()) out.push_back(t);
  return out;
}

inline std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
  return out;
}

template <typename N>
N parse_number(const std::string& key, const std::string& v) {
  std::istringstream ss(v);
  N n;
  if (!(ss >> n) || !(ss >> std::ws).eof()) throw ConfigError("config key '" + key + "': cannot parse '" + v + "'");
  return n;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
}

// Shortest of the 6- and 17-digit renderings that parses back exactly.
inline std::string fmt(double v) {
  for (int prec : {6, 17}) {
    std::ostringstream s;
    s.precision(prec);
    s << v;
    if (std::stod(s.str()) == v || prec == 17) return s.str();
  }
  return {};
}

struct Key {
  const char* name;
  const char* doc;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline std::vector<std::string> disabled_list(const BranchToggles& b) {
  std::vector<std::string> out;
  if (!b.semantic) out.push_back("semantic");
  if (!b.instance) out.push_back("instance");
  if (!b.depth) out.push_back("depth");
  return out;
}

inline void apply_disabled(BranchToggles& b, const std::vector<std::string>& names) {
  b = BranchToggles{};
  for (const auto& n : names) {
    if (n == "semantic")
      b.semantic = false;
    else if (n == "instance")
      b.instance = false;
    else if (n == "depth")
      b.depth = false;
    else
      throw ConfigError("unknown branch '" + n + "' (expected semantic, instance or depth)");
  }
}

#define PANDEPTH_NUM_KEY(NAME, DOC, FIELD, TYPE)                                                          \
  Key {                                                                                                   \
    NAME, DOC, [](RunConfig& c, const std::string& v) { c.FIELD = parse_number<TYPE>(NAME, v); },         \
        [](const RunConfig& c) { return fmt(static_cast<double>(c.FIELD)); }                              \
  }
#define PANDEPTH_STR_KEY(NAME, DOC, FIELD)                                                                 \
  Key {                                                                                                   \
    NAME, DOC, [](RunConfig& c, const std::string& v) { c.FIELD = v; }, [](const RunConfig& c) { return c.FIELD; } \
  }
#define PANDEPTH_LIST_KEY(NAME, DOC, FIELD)                                                               \
  Key {                                                                                                   \
    NAME, DOC, [](RunConfig& c, const std::string& v) { c.FIELD = split_list(v); },                       \
        [](const RunConfig& c) { return join(c.FIELD); }                                                  \
  }

inline const std::vector<Key>& keys() {
  static const std::vector<Key> k = {
      PANDEPTH_STR_KEY("data.root", "Virtual KITTI 2 root; empty uses synthetic frames", data_root),
      PANDEPTH_NUM_KEY("data.synthetic_frames", "frames per split when data.root is empty", synthetic_frames, int64_t),
      PANDEPTH_LIST_KEY("data.train_scenes", "scenes of the training split", splits.train),
      PANDEPTH_LIST_KEY("data.val_scenes", "scenes of the validation split", splits.val),
      PANDEPTH_LIST_KEY("data.test_scenes", "scenes of the test split", splits.test),
      PANDEPTH_LIST_KEY("data.variations", "scene variations to include", splits.variations),
      Key{"data.cameras", "camera indices to include",
          [](RunConfig& c, const std::string& v) {
            c.splits.cameras.clear();
            for (const auto& s : split_list(v)) c.splits.cameras.push_back(parse_number<int>("data.cameras", s));
          },
          [](const RunConfig& c) {
            std::vector<std::string> s;
            for (int v : c.splits.cameras) s.push_back(std::to_string(v));
            return join(s);
          }},
      PANDEPTH_NUM_KEY("data.height", "input height in pixels", data.height, int64_t),
      PANDEPTH_NUM_KEY("data.width", "input width in pixels", data.width, int64_t),
      PANDEPTH_NUM_KEY("data.input_fraction", "fraction of pixels kept as sparse input depth", data.input_fraction,
                       double),
      PANDEPTH_NUM_KEY("data.gt_fraction", "fraction of pixels kept as depth ground truth", data.gt_fraction, double),
      PANDEPTH_NUM_KEY("data.depth_max", "largest valid depth in metres", data.depth_max, double),
      PANDEPTH_STR_KEY("model.preset", "b5 or tiny", preset),
      Key{"model.disable", "comma list of branches to drop: semantic, instance, depth",
          [](RunConfig& c, const std::string& v) { apply_disabled(c.branches, split_list(v)); },
          [](const RunConfig& c) { return join(disabled_list(c.branches)); }},
      PANDEPTH_NUM_KEY("optim.lr", "Adam learning rate", adam.lr, double),
      PANDEPTH_NUM_KEY("optim.beta1", "Adam first-moment decay", adam.beta1, double),
      PANDEPTH_NUM_KEY("optim.beta2", "Adam second-moment decay", adam.beta2, double),
      PANDEPTH_NUM_KEY("optim.eps", "Adam denominator epsilon", adam.eps, double),
      PANDEPTH_NUM_KEY("train.epochs", "passes over the training split", epochs, int64_t),
      PANDEPTH_NUM_KEY("train.batch_size", "frames accumulated per optimizer step", batch_size, int64_t),
      PANDEPTH_NUM_KEY("train.max_steps", "stop after this many optimizer steps; 0 for no limit", max_steps, int64_t),
      Key{"train.validate", "evaluate on the validation split after each epoch",
          [](RunConfig& c, const std::string& v) { c.validate_each_epoch = parse_bool("train.validate", v); },
          [](const RunConfig& c) { return std::string(c.validate_each_epoch ? "true" : "false"); }},
      Key{"seed", "base seed for initialisation, sampling and sparsification",
          [](RunConfig& c, const std::string& v) {
            c.seed = parse_number<uint64_t>("seed", v);
            c.data.seed = c.seed;
          },
          [](const RunConfig& c) { return std::to_string(c.seed); }},
      PANDEPTH_NUM_KEY("fusion.score_thresh", "minimum detection score kept by fusion", fusion.score_thresh, double),
      PANDEPTH_NUM_KEY("fusion.overlap_thresh", "minimum unclaimed fraction of an instance mask", fusion.overlap_thresh,
                       double),
      PANDEPTH_NUM_KEY("fusion.min_stuff_area", "minimum stuff area at the reference resolution", fusion.min_stuff_area,
                       int64_t),
      PANDEPTH_NUM_KEY("eval.max_frames", "evaluate at most this many frames; 0 for all", max_eval_frames, int64_t),
      Key{"eval.mask_map", "score mAP on masks instead of boxes",
          [](RunConfig& c, const std::string& v) { c.mask_map = parse_bool("eval.mask_map", v); },
          [](const RunConfig& c) { return std::string(c.mask_map ? "true" : "false"); }},
      PANDEPTH_STR_KEY("checkpoint.dir", "directory for checkpoints and training logs", checkpoint_dir),
      PANDEPTH_STR_KEY("output.dir", "directory for predictions and reports", output_dir),
      PANDEPTH_NUM_KEY("output.ply_stride", "pixel stride of exported point clouds", ply_stride, int),
  };
  return k;
}

#undef PANDEPTH_NUM_KEY
#undef PANDEPTH_STR_KEY
#undef PANDEPTH_LIST_KEY

}  // namespace config_detail

// Applies one "key = value" setting.
inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  for (const auto& k : config_detail::keys())
    if (key == k.name) {
      k.set(c, value);
      return;
    }
  throw ConfigError("unknown config key '" + key + "'");
}

// Parses "key = value" lines; '#' starts a comment.
inline RunConfig parse_config(const std::string& text, RunConfig base = {}) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = config_detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = config_detail::trim(line.substr(0, eq));
    if (!seen.insert(key).second) throw ConfigError("config key '" + key + "' given twice");
    set_config_value(base, key, config_detail::trim(line.substr(eq + 1)));
  }
  base.check();
  return base;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

// Every key with its documentation and current value; parses back to `c`.
inline std::string format_config(const RunConfig& c) {
  std::string out;
  for (const auto& k : config_detail::keys()) out += std::string("# ") + k.doc + "\n" + k.name + " = " + k.get(c) + "\n";
  return out;
}

}  // namespace pandepth

#endif  // PANDEPTH_CONFIG_HPP_
