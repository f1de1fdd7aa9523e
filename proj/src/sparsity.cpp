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

#include "slak/sparsity.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <tuple>

namespace slak {
namespace {

void check_sparsity(double s, const char* what) {
  if (!(s >= 0.0 && s < 1.0)) {
    throw Error(ErrorKind::kInvalidConfig,
                std::string(what) + ": sparsity must be in [0, 1), got " +
                    std::to_string(s));
  }
}

std::size_t keep_count(std::size_t total, double s) {
  return static_cast<std::size_t>(std::llround((1.0 - s) * double(total)));
}

}  // namespace

Mask::Mask(Shape shape, bool active)
    : shape_(std::move(shape)),
      occupancy_(checked_numel(shape_), active ? 1 : 0),
      nnz_(active ? occupancy_.size() : 0) {}

template <typename T>
Mask Mask::from_tensor(const BasicTensor<T>& values) {
  Mask m(values.shape(), false);
  for (std::size_t i = 0; i < values.numel(); ++i) {
    if (values[i] == T(1)) {
      m.set(i, true);
    } else if (values[i] != T(0)) {
      throw Error(ErrorKind::kInvalidMask,
                  "mask value at flat index " + std::to_string(i) +
                      " is neither 0 nor 1");
    }
  }
  return m;
}

void Mask::set(std::size_t i, bool on) {
  const bool was = occupancy_[i] != 0;
  if (was == on) return;
  occupancy_[i] = on ? 1 : 0;
  nnz_ = on ? nnz_ + 1 : nnz_ - 1;
}

template <typename T>
BasicTensor<T> Mask::to_tensor() const {
  BasicTensor<T> t(shape_);
  for (std::size_t i = 0; i < numel(); ++i) t[i] = occupancy_[i] ? T(1) : T(0);
  return t;
}

std::size_t SparsityPlan::total_numel() const {
  return std::accumulate(per_layer_numel.begin(), per_layer_numel.end(),
                         std::size_t{0});
}

std::size_t SparsityPlan::total_nnz() const {
  return std::accumulate(per_layer_nnz.begin(), per_layer_nnz.end(),
                         std::size_t{0});
}

SparsityPlan SparsityPlan::uniform(std::vector<std::string> layers,
                                   std::vector<std::size_t> numels, double s) {
  check_sparsity(s, "SparsityPlan::uniform");
  SparsityPlan plan;
  plan.target_sparsity = s;
  plan.included_layers = std::move(layers);
  plan.per_layer_numel = std::move(numels);
  const std::size_t n = plan.per_layer_numel.size();
  plan.per_layer_nnz.resize(n);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double exact = (1.0 - s) * double(plan.per_layer_numel[i]);
    plan.per_layer_nnz[i] = static_cast<std::size_t>(std::floor(exact));
    assigned += plan.per_layer_nnz[i];
    remainders.emplace_back(exact - std::floor(exact), i);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  const std::size_t target = keep_count(plan.total_numel(), s);
  for (std::size_t r = 0; assigned < target && r < remainders.size(); ++r) {
    ++plan.per_layer_nnz[remainders[r].second];
    ++assigned;
  }
  return plan;
}

SparsityPlan SparsityPlan::from_masks(std::vector<std::string> layers,
                                      std::span<const Mask> masks, double s) {
  SparsityPlan plan;
  plan.target_sparsity = s;
  plan.included_layers = std::move(layers);
  for (const auto& m : masks) {
    plan.per_layer_numel.push_back(m.numel());
    plan.per_layer_nnz.push_back(m.nnz());
  }
  return plan;
}

void AdaptationConfig::validate() const {
  if (frequency < 1) {
    throw Error(ErrorKind::kInvalidConfig, "adaptation.frequency: must be >= 1");
  }
  if (!(initial_rate > 0.0 && initial_rate <= 1.0)) {
    throw Error(ErrorKind::kInvalidConfig,
                "adaptation.initial_rate: must be in (0, 1]");
  }
  if (!(stop_fraction > 0.0 && stop_fraction <= 1.0)) {
    throw Error(ErrorKind::kInvalidConfig,
                "adaptation.stop_fraction: must be in (0, 1]");
  }
}

template <typename T>
BasicTensor<T> snip_scores(const BasicTensor<T>& w, const BasicTensor<T>& g) {
  require_same_shape(w, g, "snip_scores");
  BasicTensor<T> s(w.shape());
  for (std::size_t i = 0; i < w.numel(); ++i) s[i] = std::abs(w[i] * g[i]);
  return s;
}

template <typename T>
std::vector<Mask> build_masks_global_topk(
    const std::vector<BasicTensor<T>>& scores, double sparsity) {
  check_sparsity(sparsity, "build_masks_global_topk");
  struct Entry {
    T score;
    std::uint32_t layer;
    std::size_t index;
  };
  std::vector<Entry> entries;
  for (std::size_t l = 0; l < scores.size(); ++l) {
    for (std::size_t i = 0; i < scores[l].numel(); ++i) {
      entries.push_back({scores[l][i], static_cast<std::uint32_t>(l), i});
    }
  }
  const std::size_t k = keep_count(entries.size(), sparsity);
  if (k == 0) {
    throw Error(ErrorKind::kDegeneratePlan,
                "sparsity " + std::to_string(sparsity) + " over " +
                    std::to_string(entries.size()) + " weights keeps nothing");
  }
  auto better = [](const Entry& a, const Entry& b) {
    if (a.score != b.score) return a.score > b.score;
    return std::tie(a.layer, a.index) < std::tie(b.layer, b.index);
  };
  if (k < entries.size()) {
    std::nth_element(entries.begin(), entries.begin() + std::ptrdiff_t(k),
                     entries.end(), better);
  }
  std::vector<Mask> masks;
  for (const auto& s : scores) masks.emplace_back(s.shape(), false);
  for (std::size_t e = 0; e < k; ++e) {
    masks[entries[e].layer].set(entries[e].index, true);
  }
  return masks;
}

template <typename T>
Mask magnitude_prune(const BasicTensor<T>& w, const Mask& mask, std::size_t k,
                     std::vector<std::size_t>* pruned) {
  if (w.shape() != mask.shape()) {
    throw Error(ErrorKind::kInvalidShape, "magnitude_prune: weight " +
                                              shape_str(w.shape()) + " vs mask " +
                                              shape_str(mask.shape()));
  }
  if (k > mask.nnz()) {
    throw Error(ErrorKind::kInvalidCount,
                "magnitude_prune: k=" + std::to_string(k) + " exceeds nnz=" +
                    std::to_string(mask.nnz()));
  }
  std::vector<std::size_t> active;
  active.reserve(mask.nnz());
  for (std::size_t i = 0; i < mask.numel(); ++i) {
    if (mask.active(i)) active.push_back(i);
  }
  auto smaller = [&](std::size_t a, std::size_t b) {
    const T ma = std::abs(w[a]), mb = std::abs(w[b]);
    if (ma != mb) return ma < mb;
    return a < b;
  };
  if (k < active.size()) {
    std::nth_element(active.begin(), active.begin() + std::ptrdiff_t(k),
                     active.end(), smaller);
  }
  active.resize(k);
  std::sort(active.begin(), active.end());
  Mask out = mask;
  for (auto i : active) out.set(i, false);
  if (pruned != nullptr) *pruned = std::move(active);
  return out;
}

GrowResult random_grow(const Mask& mask, std::size_t k, RngStream& rng) {
  std::vector<std::size_t> inactive;
  inactive.reserve(mask.numel() - mask.nnz());
  for (std::size_t i = 0; i < mask.numel(); ++i) {
    if (!mask.active(i)) inactive.push_back(i);
  }
  if (k > inactive.size()) {
    throw Error(ErrorKind::kInvalidCount,
                "random_grow: k=" + std::to_string(k) + " exceeds inactive=" +
                    std::to_string(inactive.size()));
  }
  GrowResult r{mask, {}};
  r.grown.reserve(k);
  // Partial Fisher-Yates: the first k slots become a uniform sample.
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t pick = j + rng.below(inactive.size() - j);
    std::swap(inactive[j], inactive[pick]);
    r.grown.push_back(inactive[j]);
    r.mask.set(inactive[j], true);
  }
  return r;
}

template <typename T>
AdaptationResult adaptation_step(BasicTensor<T>& w, const Mask& mask,
                                 double rate, RngStream& rng) {
  if (!(rate >= 0.0 && rate <= 1.0)) {
    throw Error(ErrorKind::kInvalidConfig,
                "adaptation rate must be in [0, 1], got " + std::to_string(rate));
  }
  const std::size_t inactive = mask.numel() - mask.nnz();
  const std::size_t k = std::min(
      static_cast<std::size_t>(std::floor(rate * double(mask.nnz()))), inactive);
  AdaptationResult r;
  r.mask = magnitude_prune(w, mask, k, &r.pruned);
  // Candidates are drawn from the pre-step inactive set, so nothing pruned
  // now can come straight back.
  GrowResult g = random_grow(mask, k, rng);
  r.grown = std::move(g.grown);
  for (auto i : r.grown) r.mask.set(i, true);
  for (auto i : r.pruned) w[i] = T(0);
  for (auto i : r.grown) w[i] = T(0);
  return r;
}

template <typename T>
std::vector<AdaptationResult> adaptation_step_global(
    std::vector<BasicTensor<T>*> weights, const std::vector<Mask>& masks,
    double rate, RngStream& rng) {
  if (weights.size() != masks.size()) {
    throw Error(ErrorKind::kInvalidShape,
                "adaptation_step_global: weight/mask count mismatch");
  }
  if (!(rate >= 0.0 && rate <= 1.0)) {
    throw Error(ErrorKind::kInvalidConfig,
                "adaptation rate must be in [0, 1], got " + std::to_string(rate));
  }
  struct Slot {
    std::uint32_t layer;
    std::size_t index;
  };
  std::vector<Slot> active, inactive;
  for (std::size_t l = 0; l < masks.size(); ++l) {
    require_same_shape(*weights[l], masks[l].to_tensor<T>(), "adaptation_step_global");
    for (std::size_t i = 0; i < masks[l].numel(); ++i) {
      (masks[l].active(i) ? active : inactive)
          .push_back({static_cast<std::uint32_t>(l), i});
    }
  }
  const std::size_t k = std::min(
      static_cast<std::size_t>(std::floor(rate * double(active.size()))),
      inactive.size());
  auto smaller = [&](const Slot& a, const Slot& b) {
    const T ma = std::abs((*weights[a.layer])[a.index]);
    const T mb = std::abs((*weights[b.layer])[b.index]);
    if (ma != mb) return ma < mb;
    return std::tie(a.layer, a.index) < std::tie(b.layer, b.index);
  };
  if (k < active.size()) {
    std::nth_element(active.begin(), active.begin() + std::ptrdiff_t(k),
                     active.end(), smaller);
  }
  std::vector<AdaptationResult> out(masks.size());
  for (std::size_t l = 0; l < masks.size(); ++l) out[l].mask = masks[l];
  for (std::size_t j = 0; j < k; ++j) {
    const Slot s = active[j];
    out[s.layer].mask.set(s.index, false);
    out[s.layer].pruned.push_back(s.index);
    (*weights[s.layer])[s.index] = T(0);
  }
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t pick = j + rng.below(inactive.size() - j);
    std::swap(inactive[j], inactive[pick]);
    const Slot s = inactive[j];
    out[s.layer].mask.set(s.index, true);
    out[s.layer].grown.push_back(s.index);
    (*weights[s.layer])[s.index] = T(0);
  }
  for (auto& r : out) std::sort(r.pruned.begin(), r.pruned.end());
  return out;
}

double cosine_adaptation_rate(double initial_rate, long step, long horizon) {
  if (step < 0 || step > horizon || horizon <= 0) {
    throw Error(ErrorKind::kScheduleRange,
                "adaptation step " + std::to_string(step) + " outside [0, " +
                    std::to_string(horizon) + "]");
  }
  if (step == horizon) return 0.0;
  return initial_rate / 2.0 *
         (1.0 + std::cos(std::numbers::pi * double(step) / double(horizon)));
}

template <typename T>
void apply_mask(BasicTensor<T>& w, const Mask& mask) {
  if (w.shape() != mask.shape()) {
    throw Error(ErrorKind::kInvalidShape, "apply_mask: weight " +
                                              shape_str(w.shape()) + " vs mask " +
                                              shape_str(mask.shape()));
  }
  const auto& occ = mask.occupancy();
  for (std::size_t i = 0; i < w.numel(); ++i) {
    if (!occ[i]) w[i] = T(0);
  }
}

int widen(int base, double factor) {
  const double scaled = std::round(double(base) * factor);
  return std::max(8, static_cast<int>(std::lround(scaled / 8.0)) * 8);
}

WidthPlan width_plan(std::span<const int> base_dims, double sparsity,
                     const ParamCounter& counter) {
  check_sparsity(sparsity, "width_plan");
  WidthPlan best;
  best.baseline_params = counter(base_dims, 0.0);
  double best_gap = -1.0;
  for (int step = 10; step <= 30; ++step) {
    const double factor = step / 10.0;
    std::vector<int> dims;
    for (int d : base_dims) dims.push_back(widen(d, factor));
    const double count = counter(dims, sparsity);
    const double gap = std::abs(count - best.baseline_params);
    if (best_gap < 0.0 || gap < best_gap) {
      best_gap = gap;
      best.factor = factor;
      best.dims = std::move(dims);
      best.planned_params = count;
    }
  }
  return best;
}

#define SLAK_INSTANTIATE(T)                                                    \
  template Mask Mask::from_tensor(const BasicTensor<T>&);                      \
  template BasicTensor<T> Mask::to_tensor() const;                             \
  template BasicTensor<T> snip_scores(const BasicTensor<T>&,                   \
                                      const BasicTensor<T>&);                  \
  template std::vector<Mask> build_masks_global_topk(                          \
      const std::vector<BasicTensor<T>>&, double);                             \
  template Mask magnitude_prune(const BasicTensor<T>&, const Mask&,            \
                                std::size_t, std::vector<std::size_t>*);       \
  template AdaptationResult adaptation_step(BasicTensor<T>&, const Mask&,      \
                                            double, RngStream&);               \
  template std::vector<AdaptationResult> adaptation_step_global(               \
      std::vector<BasicTensor<T>*>, const std::vector<Mask>&, double,          \
      RngStream&);                                                             \
  template void apply_mask(BasicTensor<T>&, const Mask&);

SLAK_INSTANTIATE(float)
SLAK_INSTANTIATE(double)

#undef SLAK_INSTANTIATE

}  // namespace slak
