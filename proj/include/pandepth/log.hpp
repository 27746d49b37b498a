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

#ifndef PANDEPTH_LOG_HPP_
#define PANDEPTH_LOG_HPP_

#include <atomic>
#include <iostream>
#include <string>

namespace pandepth::log {

enum class Level { kDebug = 0, kInfo = 1, kWarning = 2, kError = 3, kOff = 4 };

inline std::atomic<int>& threshold() {
  static std::atomic<int> level{static_cast<int>(Level::kInfo)};
  return level;
}

inline void set_level(Level l) { threshold() = static_cast<int>(l); }

inline void write(Level l, const std::string& msg) {
  if (static_cast<int>(l) < threshold()) return;
  static const char* tags[] = {"debug", "info", "warning", "error"};
  std::clog << "[" << tags[static_cast<int>(l)] << "] " << msg << std::endl;
}

inline void info(const std::string& msg) { write(Level::kInfo, msg); }
inline void warn(const std::string& msg) { write(Level::kWarning, msg); }

}  // namespace pandepth::log

#endif  // PANDEPTH_LOG_HPP_
