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

#include <cmath>
#include <functional>
#include <string>

#include "slak/tensor.hpp"

namespace slak {

// Central-difference gradient of a scalar function, in double precision.
//
//   grad_i = (f(x + eps e_i) - f(x - eps e_i)) / (2 eps)
//
// Throws kNumeric naming the index whose perturbed evaluation is not finite.
inline Tensor64 finite_diff_grad(const std::function<double(const Tensor64&)>& f,
                                 const Tensor64& x, double eps = 1e-5) {
  if (!(eps > 0.0)) {
    throw Error(ErrorKind::kInvalidConfig, "finite_diff_grad: eps must be > 0");
  }
  Tensor64 probe = x;
  Tensor64 grad(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double plus = f(probe);
    probe[i] = orig - eps;
    const double minus = f(probe);
    probe[i] = orig;
    if (!std::isfinite(plus) || !std::isfinite(minus)) {
      throw Error(ErrorKind::kNumeric,
                  "finite_diff_grad: non-finite f at index " + std::to_string(i));
    }
    grad[i] = (plus - minus) / (2.0 * eps);
  }
  return grad;
}

}  // namespace slak
