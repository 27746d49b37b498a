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

#ifndef PANDEPTH_CHECKPOINT_HPP_
#define PANDEPTH_CHECKPOINT_HPP_

#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "pandepth/nn.hpp"
#include "pandepth/optim.hpp"

namespace pandepth {

inline constexpr char kCheckpointMagic[4] = {'P', 'D', 'C', 'K'};
inline constexpr uint32_t kCheckpointVersion = 1;

// Training progress stored next to the weights.
struct TrainProgress {
  int64_t step = 0;
  int64_t epoch = 0;        // completed epochs
  int64_t epoch_step = 0;   // batches done inside the current epoch
  double best_pq = -1.0;    // < 0 when no validation has run
};

namespace ckpt_detail {

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}
  template <typename V>
  void pod(const V& v) {
    os_.write(reinterpret_cast<const char*>(&v), sizeof(V));
  }
  void str(const std::string& s) {
    pod(static_cast<uint32_t>(s.size()));
    os_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  template <typename V>
  void array(const V* p, size_t n) {
    pod(static_cast<uint64_t>(n));
    os_.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(V)));
  }

 private:
  std::ostream& os_;
};

class Reader {
 public:
  Reader(std::istream& is, std::string path) : is_(is), path_(std::move(path)) {}
  template <typename V>
  V pod() {
    V v;
    is_.read(reinterpret_cast<char*>(&v), sizeof(V));
    check();
    return v;
  }
  std::string str() {
    const auto n = pod<uint32_t>();
    if (n > (1u << 20)) fail("implausible string length");
    std::string s(n, '\0');
    is_.read(s.data(), n);
    check();
    return s;
  }
  template <typename V>
  void array(V* p, size_t expect, const std::string& what) {
    const auto n = pod<uint64_t>();
    if (n != expect)
      fail(what + " holds " + std::to_string(n) + " values, model expects " + std::to_string(expect));
    is_.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(V)));
    check();
  }
  [[noreturn]] void fail(const std::string& msg) const { throw CheckpointError("checkpoint '" + path_ + "': " + msg); }

 private:
  void check() const {
    if (!is_) fail("truncated file");
  }
  std::istream& is_;
  std::string path_;
};

}  // namespace ckpt_detail

// Writes parameters, buffers, optional Adam state and progress. The file is
// written beside the target and renamed into place.
template <typename T>
void save_checkpoint(const std::string& path, nn::Module<T>& model, uint64_t arch_hash, const TrainProgress& prog,
                     Adam<T>* adam = nullptr) {
  namespace fs = std::filesystem;
  if (const auto dir = fs::path(path).parent_path(); !dir.empty()) fs::create_directories(dir);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw IoError("cannot open '" + tmp + "' for writing");
    ckpt_detail::Writer w(os);
    os.write(kCheckpointMagic, 4);
    w.pod(kCheckpointVersion);
    w.pod(arch_hash);
    w.pod(static_cast<uint8_t>(sizeof(T)));
    w.pod(prog.step);
    w.pod(prog.epoch);
    w.pod(prog.epoch_step);
    w.pod(prog.best_pq);
    const auto params = model.named_parameters();
    w.pod(static_cast<uint64_t>(params.size()));
    for (const auto& [name, p] : params) {
      w.str(name);
      w.array(p->value().data(), static_cast<size_t>(p->numel()));
    }
    const auto buffers = model.named_buffers();
    w.pod(static_cast<uint64_t>(buffers.size()));
    for (const auto& [name, b] : buffers) {
      w.str(name);
      w.array(b->data(), static_cast<size_t>(b->numel()));
    }
    w.pod(static_cast<uint8_t>(adam ? 1 : 0));
    if (adam) {
      w.pod(adam->steps());
      for (size_t k = 0; k < adam->first_moments().size(); ++k) {
        w.array(adam->first_moments()[k].data(), adam->first_moments()[k].size());
        w.array(adam->second_moments()[k].data(), adam->second_moments()[k].size());
      }
    }
    if (!os) throw IoError("failed writing '" + tmp + "'");
  }
  fs::rename(tmp, path);
}

// Restores a checkpoint written by save_checkpoint. Any difference in
// version, architecture hash, parameter names or sizes is an error.
template <typename T>
TrainProgress load_checkpoint(const std::string& path, nn::Module<T>& model, uint64_t arch_hash,
                              Adam<T>* adam = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint '" + path + "'");
  ckpt_detail::Reader r(is, path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0) r.fail("not a checkpoint file");
  if (const auto v = r.pod<uint32_t>(); v != kCheckpointVersion)
    r.fail("format version " + std::to_string(v) + ", expected " + std::to_string(kCheckpointVersion));
  if (r.pod<uint64_t>() != arch_hash) r.fail("architecture does not match the configured model");
  if (r.pod<uint8_t>() != sizeof(T)) r.fail("stored with a different scalar type");
  TrainProgress prog;
  prog.step = r.pod<int64_t>();
  prog.epoch = r.pod<int64_t>();
  prog.epoch_step = r.pod<int64_t>();
  prog.best_pq = r.pod<double>();
  auto params = model.named_parameters();
  if (r.pod<uint64_t>() != params.size()) r.fail("parameter count differs from the model");
  for (auto& [name, p] : params) {
    if (const auto stored = r.str(); stored != name) r.fail("found parameter '" + stored + "', expected '" + name + "'");
    r.array(p->mutable_value().data(), static_cast<size_t>(p->numel()), name);
  }
  auto buffers = model.named_buffers();
  if (r.pod<uint64_t>() != buffers.size()) r.fail("buffer count differs from the model");
  for (auto& [name, b] : buffers) {
    if (const auto stored = r.str(); stored != name) r.fail("found buffer '" + stored + "', expected '" + name + "'");
    r.array(b->data(), static_cast<size_t>(b->numel()), name);
  }
  const bool has_adam = r.pod<uint8_t>() != 0;
  if (adam) {
    if (!has_adam) r.fail("no optimizer state stored");
    adam->set_steps(r.pod<int64_t>());
    for (size_t k = 0; k < adam->first_moments().size(); ++k) {
      r.array(adam->first_moments()[k].data(), adam->first_moments()[k].size(), "adam moment");
      r.array(adam->second_moments()[k].data(), adam->second_moments()[k].size(), "adam moment");
    }
  }
  return prog;
}

}  // namespace pandepth

#endif  // PANDEPTH_CHECKPOINT_HPP_
