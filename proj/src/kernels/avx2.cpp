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

// AVX2/FMA backend. Functions carry target attributes instead of the file
// being built with -mavx2, so nothing here leaks AVX2 code into callers that
// run on older CPUs; dispatch.cpp only hands this table out after a CPUID
// check.

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "slak/kernels.hpp"
#include "tap_range.hpp"

#define SLAK_AVX2 __attribute__((target("avx2,fma")))

namespace slak::kernels {
namespace {

template <typename T>
struct Vec;

template <>
struct Vec<float> {
  using R = __m256;
  static constexpr int kLanes = 8;
  SLAK_AVX2 static R load(const float* p) { return _mm256_loadu_ps(p); }
  SLAK_AVX2 static void store(float* p, R v) { _mm256_storeu_ps(p, v); }
  SLAK_AVX2 static R set1(float v) { return _mm256_set1_ps(v); }
  SLAK_AVX2 static R zero() { return _mm256_setzero_ps(); }
  SLAK_AVX2 static R fmadd(R a, R b, R c) { return _mm256_fmadd_ps(a, b, c); }
  // Lanes [0, n) active.
  SLAK_AVX2 static __m256i mask(int n) {
    return _mm256_cmpgt_epi32(_mm256_set1_epi32(n),
                              _mm256_setr_epi32(0, 1, 2, 3, 4, 5, 6, 7));
  }
  SLAK_AVX2 static R maskload(const float* p, __m256i m) {
    return _mm256_maskload_ps(p, m);
  }
  SLAK_AVX2 static void maskstore(float* p, __m256i m, R v) {
    _mm256_maskstore_ps(p, m, v);
  }
  SLAK_AVX2 static float hsum(R v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    lo = _mm_add_ps(lo, _mm_movehl_ps(lo, lo));
    lo = _mm_add_ss(lo, _mm_shuffle_ps(lo, lo, 1));
    return _mm_cvtss_f32(lo);
  }
};

template <>
struct Vec<double> {
  using R = __m256d;
  static constexpr int kLanes = 4;
  SLAK_AVX2 static R load(const double* p) { return _mm256_loadu_pd(p); }
  SLAK_AVX2 static void store(double* p, R v) { _mm256_storeu_pd(p, v); }
  SLAK_AVX2 static R set1(double v) { return _mm256_set1_pd(v); }
  SLAK_AVX2 static R zero() { return _mm256_setzero_pd(); }
  SLAK_AVX2 static R fmadd(R a, R b, R c) { return _mm256_fmadd_pd(a, b, c); }
  SLAK_AVX2 static __m256i mask(int n) {
    return _mm256_cmpgt_epi64(_mm256_set1_epi64x(n),
                              _mm256_setr_epi64x(0, 1, 2, 3));
  }
  SLAK_AVX2 static R maskload(const double* p, __m256i m) {
    return _mm256_maskload_pd(p, m);
  }
  SLAK_AVX2 static void maskstore(double* p, __m256i m, R v) {
    _mm256_maskstore_pd(p, m, v);
  }
  SLAK_AVX2 static double hsum(R v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    lo = _mm_add_sd(lo, _mm_unpackhi_pd(lo, lo));
    return _mm_cvtsd_f64(lo);
  }
};

template <typename T>
SLAK_AVX2 void axpy(T a, const T* x, T* y, std::size_t n) {
  using V = Vec<T>;
  const auto va = V::set1(a);
  std::size_t i = 0;
  for (; i + V::kLanes <= n; i += V::kLanes) {
    V::store(y + i, V::fmadd(va, V::load(x + i), V::load(y + i)));
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

template <typename T>
SLAK_AVX2 T dot(const T* x, const T* y, std::size_t n) {
  using V = Vec<T>;
  auto acc0 = V::zero();
  auto acc1 = V::zero();
  std::size_t i = 0;
  for (; i + 2 * V::kLanes <= n; i += 2 * V::kLanes) {
    acc0 = V::fmadd(V::load(x + i), V::load(y + i), acc0);
    acc1 = V::fmadd(V::load(x + i + V::kLanes), V::load(y + i + V::kLanes),
                    acc1);
  }
  for (; i + V::kLanes <= n; i += V::kLanes) {
    acc0 = V::fmadd(V::load(x + i), V::load(y + i), acc0);
  }
  T acc = V::hsum(acc0) + V::hsum(acc1);
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

// Zero-padded copy of an input plane large enough that every tap read for
// every output position is in bounds.
template <typename T>
struct PaddedPlane {
  std::vector<T> buf;
  int top = 0, left = 0, stride = 0, rows = 0, in_h = 0, in_w = 0;

  const T* at(int y, int x) const {
    return buf.data() + static_cast<std::ptrdiff_t>(y + top) * stride + x + left;
  }
};

// The border is only zeroed when the geometry changes; consecutive planes of
// one tensor reuse it and only the interior is copied.
template <typename T>
void pad_plane(const T* in, PlaneDims d, const Tap<T>* taps, std::size_t n,
               PaddedPlane<T>& p) {
  int min_dy = 0, max_dy = 0, min_dx = 0, max_dx = 0;
  for (std::size_t t = 0; t < n; ++t) {
    min_dy = std::min(min_dy, taps[t].dy);
    max_dy = std::max(max_dy, taps[t].dy);
    min_dx = std::min(min_dx, taps[t].dx);
    max_dx = std::max(max_dx, taps[t].dx);
  }
  const int top = -min_dy;
  const int left = -min_dx;
  const int bottom = std::max(0, d.out_h + max_dy - d.in_h);
  const int right = std::max(0, d.out_w + max_dx - d.in_w);
  // One extra vector of zero columns (and one row) keeps full-width loads of
  // partial rows inside the buffer.
  const int stride = left + std::max(d.in_w, d.out_w) + right + Vec<T>::kLanes;
  const int rows = top + std::max(d.in_h, d.out_h) + bottom + 1;
  if (top != p.top || left != p.left || stride != p.stride || rows != p.rows ||
      d.in_h != p.in_h || d.in_w != p.in_w) {
    p.top = top;
    p.left = left;
    p.stride = stride;
    p.rows = rows;
    p.in_h = d.in_h;
    p.in_w = d.in_w;
    p.buf.assign(static_cast<std::size_t>(rows) * stride, T(0));
  }
  for (int y = 0; y < d.in_h; ++y) {
    std::copy_n(in + y * d.in_w, d.in_w,
                p.buf.data() + static_cast<std::ptrdiff_t>(y + p.top) * p.stride +
                    p.left);
  }
}

// Register-blocked forward. A block of kRows output rows by kVecs vectors
// stays in registers while the taps accumulate into it. Taps are sorted by dy
// so the ones reading inside the plane for any row of the block form one
// contiguous run; rows where such a tap falls outside read the zero padding.
// off[t] is tap t's displacement in the padded plane.
template <typename T, int kRows, int kVecs>
SLAK_AVX2 inline void dw_block(const T* base, std::ptrdiff_t stride, T* out,
                               int out_w, const std::ptrdiff_t* off,
                               const T* wt, std::size_t n) {
  using V = Vec<T>;
  constexpr int kL = V::kLanes;
  typename V::R acc[kRows][kVecs];
#pragma GCC unroll 8
  for (int r = 0; r < kRows; ++r) {
#pragma GCC unroll 4
    for (int v = 0; v < kVecs; ++v) acc[r][v] = V::load(out + r * out_w + v * kL);
  }
  for (std::size_t t = 0; t < n; ++t) {
    const auto w = V::set1(wt[t]);
    const T* src = base + off[t];
#pragma GCC unroll 8
    for (int r = 0; r < kRows; ++r) {
#pragma GCC unroll 4
      for (int v = 0; v < kVecs; ++v) {
        acc[r][v] = V::fmadd(w, V::load(src + r * stride + v * kL), acc[r][v]);
      }
    }
  }
#pragma GCC unroll 8
  for (int r = 0; r < kRows; ++r) {
#pragma GCC unroll 4
    for (int v = 0; v < kVecs; ++v) V::store(out + r * out_w + v * kL, acc[r][v]);
  }
}

// Same as dw_block<T, kRows, 1> for the last n < kLanes columns.
template <typename T, int kRows>
SLAK_AVX2 inline void dw_block_tail(const T* base, std::ptrdiff_t stride, T* out,
                                    int out_w, int n_cols,
                                    const std::ptrdiff_t* off, const T* wt,
                                    std::size_t n) {
  using V = Vec<T>;
  const __m256i m = V::mask(n_cols);
  typename V::R acc[kRows];
#pragma GCC unroll 8
  for (int r = 0; r < kRows; ++r) acc[r] = V::maskload(out + r * out_w, m);
  for (std::size_t t = 0; t < n; ++t) {
    const auto w = V::set1(wt[t]);
    const T* src = base + off[t];
#pragma GCC unroll 8
    for (int r = 0; r < kRows; ++r) {
      acc[r] = V::fmadd(w, V::load(src + r * stride), acc[r]);
    }
  }
#pragma GCC unroll 8
  for (int r = 0; r < kRows; ++r) V::maskstore(out + r * out_w, m, acc[r]);
}

template <typename T, int kRows>
SLAK_AVX2 inline void dw_rows(const PaddedPlane<T>& plane, T* out, PlaneDims d,
                              int y, const std::ptrdiff_t* off, const T* wt,
                              std::size_t n) {
  constexpr int kL = Vec<T>::kLanes;
  T* orow = out + y * d.out_w;
  const std::ptrdiff_t stride = plane.stride;
  int x = 0;
  for (; x + 2 * kL <= d.out_w; x += 2 * kL) {
    dw_block<T, kRows, 2>(plane.at(y, x), stride, orow + x, d.out_w, off, wt, n);
  }
  for (; x + kL <= d.out_w; x += kL) {
    dw_block<T, kRows, 1>(plane.at(y, x), stride, orow + x, d.out_w, off, wt, n);
  }
  if (x < d.out_w) {
    dw_block_tail<T, kRows>(plane.at(y, x), stride, orow + x, d.out_w,
                            d.out_w - x, off, wt, n);
  }
}

template <typename T, int kRows>
SLAK_AVX2 void dw_plane(const PaddedPlane<T>& plane, T* out, PlaneDims d,
                        const Tap<T>* first, std::size_t n_taps,
                        const std::ptrdiff_t* off, const T* wt) {
  const Tap<T>* last = first + n_taps;
  auto bound = [&](const Tap<T>* from, int v) {
    return std::lower_bound(from, last, v,
                            [](const Tap<T>& t, int k) { return t.dy < k; });
  };
  int y = 0;
  for (; y + kRows <= d.out_h; y += kRows) {
    // Union over the block: row y + kRows - 1 admits the smallest dy, row y
    // the largest.
    const Tap<T>* lo = bound(first, -(y + kRows - 1));
    const Tap<T>* hi = bound(lo, d.in_h - y);
    const std::size_t a = std::size_t(lo - first), b = std::size_t(hi - first);
    if (a != b) dw_rows<T, kRows>(plane, out, d, y, off + a, wt + a, b - a);
  }
  for (; y < d.out_h; ++y) {
    const Tap<T>* lo = bound(first, -y);
    const Tap<T>* hi = bound(lo, d.in_h - y);
    const std::size_t a = std::size_t(lo - first), b = std::size_t(hi - first);
    if (a != b) dw_rows<T, 1>(plane, out, d, y, off + a, wt + a, b - a);
  }
}

template <typename T>
SLAK_AVX2 void dw_forward(const T* in, T* out, PlaneDims d, const Tap<T>* taps_in,
                          std::size_t n_taps) {
  if (n_taps == 0) return;
  thread_local std::vector<Tap<T>> sorted;
  thread_local std::vector<std::ptrdiff_t> off;
  thread_local std::vector<T> wt;
  thread_local PaddedPlane<T> plane;
  auto by_dy = [](const Tap<T>& a, const Tap<T>& b) { return a.dy < b.dy; };
  const Tap<T>* first = taps_in;
  if (!std::is_sorted(taps_in, taps_in + n_taps, by_dy)) {
    sorted.assign(taps_in, taps_in + n_taps);
    std::stable_sort(sorted.begin(), sorted.end(), by_dy);
    first = sorted.data();
  }
  pad_plane(in, d, first, n_taps, plane);
  off.resize(n_taps);
  wt.resize(n_taps);
  for (std::size_t t = 0; t < n_taps; ++t) {
    off[t] = std::ptrdiff_t(first[t].dy) * plane.stride + first[t].dx;
    wt[t] = first[t].weight;
  }
  // Narrow rows get taller blocks so there are enough independent
  // accumulators to hide FMA latency.
  if (d.out_w < 2 * Vec<T>::kLanes) {
    dw_plane<T, 8>(plane, out, d, first, n_taps, off.data(), wt.data());
  } else {
    dw_plane<T, 4>(plane, out, d, first, n_taps, off.data(), wt.data());
  }
}

// The input gradient is a forward correlation of dout with mirrored taps.
template <typename T>
SLAK_AVX2 void dw_backward_input(const T* dout, T* din, PlaneDims d,
                                 const Tap<T>* taps, std::size_t n_taps) {
  thread_local std::vector<Tap<T>> mirrored;
  // Reversed so that row-major input taps stay sorted by dy.
  mirrored.resize(n_taps);
  for (std::size_t t = 0; t < n_taps; ++t) {
    const auto& src = taps[n_taps - 1 - t];
    mirrored[t] = {-src.dy, -src.dx, src.weight};
  }
  dw_forward(dout, din, PlaneDims{d.out_h, d.out_w, d.in_h, d.in_w},
             mirrored.data(), n_taps);
}

// Weight gradient: grad[t] = sum over output positions of
// dout * input shifted by tap t. Taps are handled eight at a time so one
// load of a dout vector feeds eight independent accumulators; each group
// walks only the output rows where some of its taps read inside the plane.
template <typename T>
SLAK_AVX2 void dw_backward_weight(const T* in, const T* dout, PlaneDims d,
                                  const Tap<T>* taps, std::size_t n_taps,
                                  T* grad) {
  using V = Vec<T>;
  using R = typename V::R;
  constexpr int kL = V::kLanes;
  constexpr std::size_t kGroup = 8;
  if (n_taps == 0) return;
  thread_local PaddedPlane<T> plane;
  thread_local std::vector<std::size_t> order;
  thread_local std::vector<std::ptrdiff_t> off;
  pad_plane(in, d, taps, n_taps, plane);
  order.resize(n_taps);
  for (std::size_t t = 0; t < n_taps; ++t) order[t] = t;
  auto by_dy = [](const Tap<T>& a, const Tap<T>& b) { return a.dy < b.dy; };
  if (!std::is_sorted(taps, taps + n_taps, by_dy)) {
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return taps[a].dy < taps[b].dy;
    });
  }
  off.resize(n_taps);
  for (std::size_t k = 0; k < n_taps; ++k) {
    const auto& t = taps[order[k]];
    off[k] = std::ptrdiff_t(t.dy) * plane.stride + t.dx;
  }
  const int full = d.out_w / kL * kL;
  const int rest = d.out_w - full;
  const __m256i m = V::mask(rest);
  for (std::size_t g0 = 0; g0 < n_taps; g0 += kGroup) {
    const std::size_t n = std::min(kGroup, n_taps - g0);
    const int dy_lo = taps[order[g0]].dy, dy_hi = taps[order[g0 + n - 1]].dy;
    const int y0 = std::max(0, -dy_hi);
    const int y1 = std::min(d.out_h, d.in_h - dy_lo);
    R acc[kGroup];
#pragma GCC unroll 8
    for (std::size_t k = 0; k < kGroup; ++k) acc[k] = V::zero();
    const std::ptrdiff_t* o = off.data() + g0;
    for (int y = y0; y < y1; ++y) {
      const T* g = dout + y * d.out_w;
      const T* base = plane.at(y, 0);
      auto body = [&](int x, R gv) SLAK_AVX2 {
        if (n == kGroup) {
#pragma GCC unroll 8
          for (std::size_t k = 0; k < kGroup; ++k) {
            acc[k] = V::fmadd(V::load(base + o[k] + x), gv, acc[k]);
          }
        } else {
          for (std::size_t k = 0; k < n; ++k) {
            acc[k] = V::fmadd(V::load(base + o[k] + x), gv, acc[k]);
          }
        }
      };
      for (int x = 0; x < full; x += kL) body(x, V::load(g + x));
      if (rest != 0) body(full, V::maskload(g + full, m));
    }
    for (std::size_t k = 0; k < n; ++k) grad[order[g0 + k]] += V::hsum(acc[k]);
  }
}

// exp for float lanes: Cephes-style range reduction and degree-5 polynomial.
SLAK_AVX2 inline __m256 exp_ps(__m256 x) {
  x = _mm256_min_ps(_mm256_max_ps(x, _mm256_set1_ps(-87.3f)),
                    _mm256_set1_ps(88.3f));
  const __m256 n = _mm256_round_ps(
      _mm256_mul_ps(x, _mm256_set1_ps(1.44269504088896341f)),
      _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256 r = _mm256_fnmadd_ps(n, _mm256_set1_ps(0.693359375f), x);
  r = _mm256_fnmadd_ps(n, _mm256_set1_ps(-2.12194440e-4f), r);
  __m256 p = _mm256_set1_ps(1.9875691500e-4f);
  p = _mm256_fmadd_ps(p, r, _mm256_set1_ps(1.3981999507e-3f));
  p = _mm256_fmadd_ps(p, r, _mm256_set1_ps(8.3334519073e-3f));
  p = _mm256_fmadd_ps(p, r, _mm256_set1_ps(4.1665795894e-2f));
  p = _mm256_fmadd_ps(p, r, _mm256_set1_ps(1.6666665459e-1f));
  p = _mm256_fmadd_ps(p, r, _mm256_set1_ps(5.0000001201e-1f));
  p = _mm256_fmadd_ps(p, _mm256_mul_ps(r, r), r);
  p = _mm256_add_ps(p, _mm256_set1_ps(1.0f));
  const __m256i e = _mm256_slli_epi32(
      _mm256_add_epi32(_mm256_cvtps_epi32(n), _mm256_set1_epi32(127)), 23);
  return _mm256_mul_ps(p, _mm256_castsi256_ps(e));
}

// Standard normal CDF. erf from Abramowitz & Stegun 7.1.26 (|error| < 1.5e-7).
SLAK_AVX2 inline __m256 normal_cdf_ps(__m256 x) {
  const __m256 sign_mask = _mm256_set1_ps(-0.0f);
  const __m256 z = _mm256_mul_ps(x, _mm256_set1_ps(0.70710678118654752f));
  const __m256 a = _mm256_andnot_ps(sign_mask, z);
  const __m256 t = _mm256_div_ps(
      _mm256_set1_ps(1.0f),
      _mm256_fmadd_ps(_mm256_set1_ps(0.3275911f), a, _mm256_set1_ps(1.0f)));
  __m256 poly = _mm256_set1_ps(1.061405429f);
  poly = _mm256_fmadd_ps(poly, t, _mm256_set1_ps(-1.453152027f));
  poly = _mm256_fmadd_ps(poly, t, _mm256_set1_ps(1.421413741f));
  poly = _mm256_fmadd_ps(poly, t, _mm256_set1_ps(-0.284496736f));
  poly = _mm256_fmadd_ps(poly, t, _mm256_set1_ps(0.254829592f));
  poly = _mm256_mul_ps(poly, t);
  const __m256 tail = _mm256_mul_ps(
      poly, exp_ps(_mm256_sub_ps(_mm256_setzero_ps(), _mm256_mul_ps(a, a))));
  // erf(|z|) = 1 - tail; Phi = 0.5 (1 + sign(z) erf(|z|))
  const __m256 erf_abs = _mm256_sub_ps(_mm256_set1_ps(1.0f), tail);
  const __m256 erf_z = _mm256_or_ps(erf_abs, _mm256_and_ps(z, sign_mask));
  return _mm256_mul_ps(_mm256_set1_ps(0.5f),
                       _mm256_add_ps(_mm256_set1_ps(1.0f), erf_z));
}

SLAK_AVX2 void gelu_forward_f32(const float* x, float* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(x + i);
    _mm256_storeu_ps(y + i, _mm256_mul_ps(v, normal_cdf_ps(v)));
  }
  if (i < n) scalar_table<float>().gelu_forward(x + i, y + i, n - i);
}

SLAK_AVX2 void gelu_backward_f32(const float* x, const float* dy, float* dx,
                                 std::size_t n) {
  const __m256 inv_sqrt_2pi = _mm256_set1_ps(0.39894228040143268f);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(x + i);
    const __m256 pdf = _mm256_mul_ps(
        inv_sqrt_2pi,
        exp_ps(_mm256_mul_ps(_mm256_set1_ps(-0.5f), _mm256_mul_ps(v, v))));
    const __m256 deriv = _mm256_fmadd_ps(v, pdf, normal_cdf_ps(v));
    _mm256_storeu_ps(dx + i, _mm256_mul_ps(_mm256_loadu_ps(dy + i), deriv));
  }
  if (i < n) scalar_table<float>().gelu_backward(x + i, dy + i, dx + i, n - i);
}

const KernelTable<float> kFloatTable = {
    "avx2",
    &dw_forward<float>,
    &dw_backward_input<float>,
    &dw_backward_weight<float>,
    &gelu_forward_f32,
    &gelu_backward_f32,
    &axpy<float>,
    &dot<float>,
};

// The 64-bit path serves gradient checks; GELU stays on the exact libm erf.
const KernelTable<double>& double_table() {
  static const KernelTable<double> table = {
      "avx2",
      &dw_forward<double>,
      &dw_backward_input<double>,
      &dw_backward_weight<double>,
      scalar_table<double>().gelu_forward,
      scalar_table<double>().gelu_backward,
      &axpy<double>,
      &dot<double>,
  };
  return table;
}

}  // namespace

namespace detail {
const KernelTable<float>* avx2_float_table() { return &kFloatTable; }
const KernelTable<double>* avx2_double_table() { return &double_table(); }
}  // namespace detail

}  // namespace slak::kernels
