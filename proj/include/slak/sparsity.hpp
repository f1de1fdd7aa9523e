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

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "slak/rng.hpp"
#include "slak/tensor.hpp"

namespace slak {

// Binary occupancy congruent to one weight tensor, with a cached count of
// active entries.
class Mask {
 public:
  Mask() = default;
  explicit Mask(Shape shape, bool active = true);

  // Throws kInvalidMask if any value is not exactly 0 or 1.
  template <typename T>
  static Mask from_tensor(const BasicTensor<T>& values);

  const Shape& shape() const { return shape_; }
  std::size_t numel() const { return occupancy_.size(); }
  std::size_t nnz() const { return nnz_; }
  double density() const {
    return numel() == 0 ? 0.0 : double(nnz_) / double(numel());
  }

  bool active(std::size_t i) const { return occupancy_[i] != 0; }
  void set(std::size_t i, bool on);

  const std::vector<std::uint8_t>& occupancy() const { return occupancy_; }

  template <typename T>
  BasicTensor<T> to_tensor() const;

  friend bool operator==(const Mask& a, const Mask& b) {
    return a.shape_ == b.shape_ && a.occupancy_ == b.occupancy_;
  }

 private:
  Shape shape_;
  std::vector<std::uint8_t> occupancy_;
  std::size_t nnz_ = 0;
};

// Global bookkeeping for a sparse model.
struct SparsityPlan {
  double target_sparsity = 0.0;
  std::vector<std::string> included_layers;
  std::vector<std::size_t> per_layer_numel;
  std::vector<std::size_t> per_layer_nnz;

  std::size_t total_numel() const;
  std::size_t total_nnz() const;
  double density(std::size_t layer) const {
    return double(per_layer_nnz[layer]) / double(per_layer_numel[layer]);
  }

  // Every layer at density (1 - s); remainders are distributed by largest
  // fractional part (then ascending layer index) so that the total equals
  // round((1 - s) * total).
  static SparsityPlan uniform(std::vector<std::string> layers,
                              std::vector<std::size_t> numels, double s);
  static SparsityPlan from_masks(std::vector<std::string> layers,
                                 std::span<const Mask> masks, double s);
};

struct AdaptationConfig {
  long frequency = 100;       // steps between adaptations
  double initial_rate = 0.3;  // p0
  long horizon = 0;           // final training step T
  std::uint64_t seed = 0;
  // Fraction of the horizon at which the rate reaches zero; 1 decays exactly
  // at T.
  double stop_fraction = 1.0;
  // Prune/grow counts per layer (true) or over the pooled layers (false).
  bool per_layer = true;

  void validate() const;
  bool adapts_at(long step) const {
    return step > 0 && step % frequency == 0 && step < horizon;
  }
};

// |w * g| elementwise.
template <typename T>
BasicTensor<T> snip_scores(const BasicTensor<T>& w, const BasicTensor<T>& g);

// Keeps the K = round((1 - s) * total) highest scores across all layers.
// Ties rank by ascending (layer index, flat index).
template <typename T>
std::vector<Mask> build_masks_global_topk(
    const std::vector<BasicTensor<T>>& scores, double sparsity);

// Deactivates the k active entries with the smallest |w|, ties by ascending
// flat index. `pruned` (optional) receives their indices in ascending order.
template <typename T>
Mask magnitude_prune(const BasicTensor<T>& w, const Mask& mask, std::size_t k,
                     std::vector<std::size_t>* pruned = nullptr);

struct GrowResult {
  Mask mask;
  std::vector<std::size_t> grown;  // in draw order
};

// Activates k inactive entries drawn uniformly without replacement.
GrowResult random_grow(const Mask& mask, std::size_t k, RngStream& rng);

struct AdaptationResult {
  Mask mask;
  std::vector<std::size_t> pruned;
  std::vector<std::size_t> grown;
};

// Prunes k = floor(p * nnz) by magnitude and grows the same number among the
// entries that were inactive before the step (k is capped by that count).
// Pruned and grown weights are set to zero in w.
template <typename T>
AdaptationResult adaptation_step(BasicTensor<T>& w, const Mask& mask,
                                 double rate, RngStream& rng);

// The same step with counts taken over all layers at once: the globally
// smallest magnitudes are pruned and growth draws from the pooled inactive
// set. Ties by ascending (layer, flat index).
template <typename T>
std::vector<AdaptationResult> adaptation_step_global(
    std::vector<BasicTensor<T>*> weights, const std::vector<Mask>& masks,
    double rate, RngStream& rng);

// p0 / 2 * (1 + cos(pi * t / T)); throws kScheduleRange outside [0, T].
double cosine_adaptation_rate(double initial_rate, long step, long horizon);

// Zeroes the inactive entries of w.
template <typename T>
void apply_mask(BasicTensor<T>& w, const Mask& mask);

struct WidthPlan {
  double factor = 1.0;
  std::vector<int> dims;
  double baseline_params = 0.0;  // dense, unwidened
  double planned_params = 0.0;   // sparsity-aware, at dims
  double relative_gap() const {
    return (planned_params - baseline_params) / baseline_params;
  }
};

// Channel count for a width factor: round(base * factor) to the nearest
// multiple of 8, at least 8.
int widen(int base, double factor);

// Counts parameters of the model at the given stage widths and sparsity.
using ParamCounter = std::function<double(std::span<const int> dims, double s)>;

// Picks the factor in {1.0, 1.1, ..., 3.0} whose sparse parameter count at
// the widened dims is closest to the dense count at base_dims. Exact ties go
// to the smaller factor.
WidthPlan width_plan(std::span<const int> base_dims, double sparsity,
                     const ParamCounter& counter);

}  // namespace slak
