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

#include "slak/tensor.hpp"

namespace slak {

std::string shape_str(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

std::size_t checked_numel(const Shape& shape) {
  if (shape.empty() || shape.size() > 4) {
    throw Error(ErrorKind::kInvalidShape,
                "rank must be 1..4, got shape " + shape_str(shape));
  }
  std::size_t n = 1;
  for (auto e : shape) {
    if (e < 1) {
      throw Error(ErrorKind::kInvalidShape,
                  "extents must be >= 1, got shape " + shape_str(shape));
    }
    n *= static_cast<std::size_t>(e);
  }
  return n;
}

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidShape: return "invalid-shape";
    case ErrorKind::kInvalidMask: return "invalid-mask";
    case ErrorKind::kInvalidCount: return "invalid-count";
    case ErrorKind::kInvalidConfig: return "invalid-config";
    case ErrorKind::kConfigMismatch: return "config-mismatch";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kDegeneratePlan: return "degenerate-plan";
    case ErrorKind::kDegenerateStatistics: return "degenerate-statistics";
    case ErrorKind::kDegenerateMap: return "degenerate-map";
    case ErrorKind::kScheduleRange: return "schedule-range";
    case ErrorKind::kCache: return "cache";
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

}  // namespace slak
