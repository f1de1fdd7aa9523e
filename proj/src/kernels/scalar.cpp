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

#include <cmath>
#include <numbers>

#include "slak/kernels.hpp"
#include "tap_range.hpp"

namespace slak::kernels {
namespace {

template <typename T>
void axpy(T a, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <typename T>
T dot(const T* x, const T* y, std::size_t n) {
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

template <typename T>
void dw_forward(const T* in, T* out, PlaneDims d, const Tap<T>* taps,
                std::size_t n_taps) {
  for (std::size_t t = 0; t < n_taps; ++t) {
    const auto& tap = taps[t];
    const auto r = detail::tap_range(tap, d);
    if (r.empty()) continue;
    const auto len = static_cast<std::size_t>(r.x1 - r.x0);
    for (int y = r.y0; y < r.y1; ++y) {
      axpy(tap.weight, in + (y + tap.dy) * d.in_w + r.x0 + tap.dx,
           out + y * d.out_w + r.x0, len);
    }
  }
}

template <typename T>
void dw_backward_input(const T* dout, T* din, PlaneDims d, const Tap<T>* taps,
                       std::size_t n_taps) {
  for (std::size_t t = 0; t < n_taps; ++t) {
    const auto& tap = taps[t];
    const auto r = detail::tap_range(tap, d);
    if (r.empty()) continue;
    const auto len = static_cast<std::size_t>(r.x1 - r.x0);
    for (int y = r.y0; y < r.y1; ++y) {
      axpy(tap.weight, dout + y * d.out_w + r.x0,
           din + (y + tap.dy) * d.in_w + r.x0 + tap.dx, len);
    }
  }
}

template <typename T>
void dw_backward_weight(const T* in, const T* dout, PlaneDims d,
                        const Tap<T>* taps, std::size_t n_taps, T* grad) {
  for (std::size_t t = 0; t < n_taps; ++t) {
    const auto& tap = taps[t];
    const auto r = detail::tap_range(tap, d);
    if (r.empty()) continue;
    const auto len = static_cast<std::size_t>(r.x1 - r.x0);
    T acc = 0;
    for (int y = r.y0; y < r.y1; ++y) {
      acc += dot(in + (y + tap.dy) * d.in_w + r.x0 + tap.dx,
                 dout + y * d.out_w + r.x0, len);
    }
    grad[t] += acc;
  }
}

template <typename T>
void gelu_forward(const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const T v = x[i];
    y[i] = v * T(0.5) * (T(1) + std::erf(v * T(std::numbers::sqrt2 / 2)));
  }
}

template <typename T>
void gelu_backward(const T* x, const T* dy, T* dx, std::size_t n) {
  const T inv_sqrt_2pi = T(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
  for (std::size_t i = 0; i < n; ++i) {
    const T v = x[i];
    const T cdf = T(0.5) * (T(1) + std::erf(v * T(std::numbers::sqrt2 / 2)));
    const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
    dx[i] = dy[i] * (cdf + v * pdf);
  }
}

template <typename T>
const KernelTable<T> kTable = {
    "scalar",          &dw_forward<T>,   &dw_backward_input<T>,
    &dw_backward_weight<T>, &gelu_forward<T>, &gelu_backward<T>,
    &axpy<T>,          &dot<T>,
};

}  // namespace

template <typename T>
const KernelTable<T>& scalar_table() {
  return kTable<T>;
}

template const KernelTable<float>& scalar_table<float>();
template const KernelTable<double>& scalar_table<double>();

}  // namespace slak::kernels
