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

// Tap-walk helpers shared by the kernel backends.

#include <algorithm>

#include "slak/kernels.hpp"

namespace slak::kernels::detail {

// Output rows/cols [y0, y1) x [x0, x1) whose reads for this tap land inside
// the input plane. Empty ranges mean the tap is entirely in the padding.
struct TapRange {
  int y0, y1, x0, x1;
  bool empty() const { return y0 >= y1 || x0 >= x1; }
};

template <typename T>
inline TapRange tap_range(const Tap<T>& t, PlaneDims d) {
  return {std::max(0, -t.dy), std::min(d.out_h, d.in_h - t.dy),
          std::max(0, -t.dx), std::min(d.out_w, d.in_w - t.dx)};
}

}  // namespace slak::kernels::detail
