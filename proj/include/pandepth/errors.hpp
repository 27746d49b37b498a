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

#ifndef PANDEPTH_ERRORS_HPP_
#define PANDEPTH_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace pandepth {

// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid argument or violated precondition.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Encoding ran out of id space.
class CapacityError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Dataset tree is malformed or incomplete.
class IngestError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Checkpoint does not belong to the configured architecture.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

// Training diverged.
class NumericError : public Error {
 public:
  using Error::Error;
};

#define PANDEPTH_CHECK_ARG(cond, msg)                   \
  do {                                                  \
    if (!(cond)) throw ::pandepth::ArgumentError(msg);  \
  } while (0)

}  // namespace pandepth

#endif  // PANDEPTH_ERRORS_HPP_
