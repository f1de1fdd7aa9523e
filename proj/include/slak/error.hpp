// Copyright 2026 The slak Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace slak {

enum class ErrorKind {
  kInvalidShape,
  kInvalidMask,
  kInvalidCount,
  kInvalidConfig,
  kConfigMismatch,
  kNumeric,
  kDegeneratePlan,
  kDegenerateStatistics,
  kDegenerateMap,
  kScheduleRange,
  kCache,
  kFormat,
  kIo,
};

const char* to_string(ErrorKind kind);

// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what),
        kind_(kind) {}

  // Format errors carry the byte offset at which decoding failed.
  Error(ErrorKind kind, const std::string& what, std::size_t offset)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what +
                           " (at offset " + std::to_string(offset) + ")"),
        kind_(kind),
        offset_(offset) {}

  ErrorKind kind() const noexcept { return kind_; }
  std::size_t offset() const noexcept { return offset_; }

 private:
  ErrorKind kind_;
  std::size_t offset_ = 0;
};

}  // namespace slak
