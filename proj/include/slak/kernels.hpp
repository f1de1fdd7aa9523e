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
#include <string_view>

namespace slak::kernels {

// One depthwise kernel tap. Output (y, x) reads input (y + dy, x + dx);
// reads outside the input plane contribute zero.
template <typename T>
struct Tap {
  int dy;
  int dx;
  T weight;
};

struct PlaneDims {
  int in_h, in_w;
  int out_h, out_w;
};

// Inner loops that carry the arithmetic. Every backend implements the same
// table; the scalar backend is the portable reference the SIMD ones are
// tested against.
template <typename T>
struct KernelTable {
  std::string_view name;

  // out[y, x] += sum_t w_t * in[y + dy_t, x + dx_t]
  void (*dw_forward)(const T* in, T* out, PlaneDims dims, const Tap<T>* taps,
                     std::size_t n_taps);
  // din[y + dy_t, x + dx_t] += w_t * dout[y, x]
  void (*dw_backward_input)(const T* dout, T* din, PlaneDims dims,
                            const Tap<T>* taps, std::size_t n_taps);
  // grad[t] += sum_{y, x} dout[y, x] * in[y + dy_t, x + dx_t]
  void (*dw_backward_weight)(const T* in, const T* dout, PlaneDims dims,
                             const Tap<T>* taps, std::size_t n_taps, T* grad);

  // y = x * Phi(x)
  void (*gelu_forward)(const T* x, T* y, std::size_t n);
  // dx = dy * (Phi(x) + x * phi(x))
  void (*gelu_backward)(const T* x, const T* dy, T* dx, std::size_t n);

  // y += a * x
  void (*axpy)(T a, const T* x, T* y, std::size_t n);
  T (*dot)(const T* x, const T* y, std::size_t n);
};

enum class Backend { kScalar, kAvx2 };

template <typename T>
const KernelTable<T>& scalar_table();

// nullptr when the running CPU lacks AVX2+FMA or the build has no AVX2 code.
template <typename T>
const KernelTable<T>* avx2_table();

// Process-wide table, chosen on first use: AVX2 when available, unless the
// environment variable SLAK_KERNELS=scalar forces the portable backend.
template <typename T>
const KernelTable<T>& active();

Backend active_backend();
// Overrides the automatic choice; falls back to scalar if AVX2 is missing.
void set_backend(Backend backend);
bool avx2_supported();

}  // namespace slak::kernels
