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

#include <atomic>
#include <cstdlib>
#include <cstring>

#include "slak/kernels.hpp"

namespace slak::kernels {

#if defined(SLAK_HAVE_AVX2)
namespace detail {
const KernelTable<float>* avx2_float_table();
const KernelTable<double>* avx2_double_table();
}  // namespace detail
#endif

bool avx2_supported() {
#if defined(SLAK_HAVE_AVX2)
  static const bool ok =
      __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return ok;
#else
  return false;
#endif
}

template <>
const KernelTable<float>* avx2_table<float>() {
#if defined(SLAK_HAVE_AVX2)
  if (avx2_supported()) return detail::avx2_float_table();
#endif
  return nullptr;
}

template <>
const KernelTable<double>* avx2_table<double>() {
#if defined(SLAK_HAVE_AVX2)
  if (avx2_supported()) return detail::avx2_double_table();
#endif
  return nullptr;
}

namespace {

Backend default_backend() {
  const char* env = std::getenv("SLAK_KERNELS");
  if (env != nullptr && std::strcmp(env, "scalar") == 0) return Backend::kScalar;
  return avx2_supported() ? Backend::kAvx2 : Backend::kScalar;
}

std::atomic<Backend>& backend_slot() {
  static std::atomic<Backend> slot{default_backend()};
  return slot;
}

}  // namespace

Backend active_backend() { return backend_slot().load(); }

void set_backend(Backend backend) {
  if (backend == Backend::kAvx2 && !avx2_supported()) backend = Backend::kScalar;
  backend_slot().store(backend);
}

template <typename T>
const KernelTable<T>& active() {
  if (active_backend() == Backend::kAvx2) {
    if (const auto* table = avx2_table<T>()) return *table;
  }
  return scalar_table<T>();
}

template const KernelTable<float>& active<float>();
template const KernelTable<double>& active<double>();

}  // namespace slak::kernels
