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

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "slak/error.hpp"
#include "slak/rng.hpp"

namespace slak {

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& shape);

// Validates rank (1..4) and positive extents; returns the element count.
std::size_t checked_numel(const Shape& shape);

// Dense row-major array of rank 1..4. Images are (batch, channel, h, w).
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  // Zero-filled.
  explicit BasicTensor(Shape shape)
      : shape_(std::move(shape)), data_(checked_numel(shape_), T(0)) {}

  BasicTensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)) {
    const std::size_t n = checked_numel(shape_);
    if (values.size() != n) {
      throw Error(ErrorKind::kInvalidShape,
                  "shape " + shape_str(shape_) + " needs " + std::to_string(n) +
                      " values, got " + std::to_string(values.size()));
    }
    data_ = std::move(values);
  }

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape)); }

  static BasicTensor constant(Shape shape, T value) {
    BasicTensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  static BasicTensor ones(Shape shape) { return constant(std::move(shape), T(1)); }

  static BasicTensor from_values(Shape shape, std::vector<T> values) {
    return BasicTensor(std::move(shape), std::move(values));
  }

  // Normal(0, sigma) with values outside +-2 sigma resampled.
  static BasicTensor trunc_normal(Shape shape, double sigma, RngStream& rng) {
    BasicTensor t(std::move(shape));
    for (auto& v : t.data_) {
      double z;
      do {
        z = rng.normal();
      } while (std::abs(z) > 2.0);
      v = static_cast<T>(z * sigma);
    }
    return t;
  }

  static BasicTensor uniform(Shape shape, double lo, double hi, RngStream& rng) {
    BasicTensor t(std::move(shape));
    for (auto& v : t.data_) v = static_cast<T>(lo + (hi - lo) * rng.uniform());
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::int64_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return data_[offset4(n, c, h, w)];
  }
  const T& at(std::int64_t n, std::int64_t c, std::int64_t h,
              std::int64_t w) const {
    return data_[offset4(n, c, h, w)];
  }

  // Same data, new shape with equal element count.
  BasicTensor reshaped(Shape shape) const {
    return BasicTensor(std::move(shape), data_);
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  bool same_shape(const BasicTensor& other) const {
    return shape_ == other.shape_;
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::size_t offset4(std::int64_t n, std::int64_t c, std::int64_t h,
                      std::int64_t w) const {
    return static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) *
                                        shape_[3] +
                                    w);
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

// Throws kInvalidShape unless a and b have identical shapes.
template <typename T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b,
                        const char* what) {
  if (!a.same_shape(b)) {
    throw Error(ErrorKind::kInvalidShape, std::string(what) + ": " +
                                              shape_str(a.shape()) + " vs " +
                                              shape_str(b.shape()));
  }
}

// Throws kNumeric naming the first non-finite element.
template <typename T>
void require_finite(const BasicTensor<T>& t, const std::string& what) {
  for (std::size_t i = 0; i < t.numel(); ++i) {
    if (!std::isfinite(t[i])) {
      throw Error(ErrorKind::kNumeric,
                  what + ": non-finite value at flat index " + std::to_string(i));
    }
  }
}

// Output guard for engine operations; compiled out with NDEBUG.
template <typename T>
inline void debug_check_finite([[maybe_unused]] const BasicTensor<T>& t,
                               [[maybe_unused]] const char* what) {
#ifndef NDEBUG
  require_finite(t, what);
#endif
}

// max_i |a_i - b_i| / max(max_i |b_i|, floor)
template <typename T>
double max_rel_error(const BasicTensor<T>& a, const BasicTensor<T>& b,
                     double floor = 1e-12) {
  require_same_shape(a, b, "max_rel_error");
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    diff = std::max(diff, std::abs(double(a[i]) - double(b[i])));
    scale = std::max(scale, std::abs(double(b[i])));
  }
  return diff / std::max(scale, floor);
}

}  // namespace slak
