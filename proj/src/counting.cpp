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

#include <span>
#include <unordered_map>

#include "slak/model.hpp"

namespace slak {

PlanScope parse_plan_scope(const std::string& text) {
  if (text == "blocks") return PlanScope::kBlocks;
  if (text == "dw") return PlanScope::kDwOnly;
  if (text == "all") return PlanScope::kAllLayers;
  throw Error(ErrorKind::kInvalidConfig,
              "plan scope: expected blocks, dw or all, got '" + text + "'");
}

std::string to_string(PlanScope scope) {
  switch (scope) {
    case PlanScope::kBlocks: return "blocks";
    case PlanScope::kDwOnly: return "dw";
    case PlanScope::kAllLayers: return "all";
  }
  return "?";
}

namespace {

bool in_scope(const TensorInfo& t, PlanScope scope) {
  switch (scope) {
    case PlanScope::kBlocks:
      return t.in_block &&
             (t.role == ParamRole::kDwWeight || t.role == ParamRole::kPwWeight);
    case PlanScope::kDwOnly:
      return t.role == ParamRole::kDwWeight;
    case PlanScope::kAllLayers:
      return t.macs > 0;
  }
  return false;
}

std::unordered_map<std::string, double> densities(const SparsityPlan* plan) {
  std::unordered_map<std::string, double> d;
  if (plan == nullptr) return d;
  for (std::size_t i = 0; i < plan->included_layers.size(); ++i) {
    d[plan->included_layers[i]] = plan->density(i);
  }
  return d;
}

}  // namespace

SparsityPlan make_plan(const ModelConfig& config, double sparsity,
                       PlanScope scope) {
  std::vector<std::string> ids;
  std::vector<std::size_t> numels;
  for (const auto& t : describe(config)) {
    if (!in_scope(t, scope)) continue;
    ids.push_back(t.id);
    numels.push_back(checked_numel(t.shape));
  }
  return SparsityPlan::uniform(std::move(ids), std::move(numels), sparsity);
}

CountReport count_params(const ModelConfig& config, const SparsityPlan* plan) {
  std::unordered_map<std::string, std::size_t> nnz;
  if (plan != nullptr) {
    for (std::size_t i = 0; i < plan->included_layers.size(); ++i) {
      nnz[plan->included_layers[i]] = plan->per_layer_nnz[i];
    }
  }
  CountReport r;
  for (const auto& t : describe(config)) {
    if (t.role == ParamRole::kBuffer) continue;
    auto it = nnz.find(t.id);
    const double n = it != nnz.end() ? double(it->second)
                                     : double(checked_numel(t.shape));
    r.layers.push_back({t.id, n, 0.0});
    r.total += n;
  }
  return r;
}

CountReport count_flops(const ModelConfig& config, int input_size,
                        const SparsityPlan* plan) {
  ModelConfig c = config;
  c.input_size = input_size;
  const auto dens = densities(plan);
  CountReport r;
  for (const auto& t : describe(c)) {
    if (t.macs == 0) continue;
    auto it = dens.find(t.id);
    const double m = t.macs * (it != dens.end() ? it->second : 1.0);
    r.layers.push_back({t.id, 0.0, m});
    r.total += m;
  }
  return r;
}

WidthPlan plan_width(const ModelConfig& base, double sparsity,
                     PlanScope scope) {
  base.validate();
  auto counter = [&](std::span<const int> dims, double s) {
    ModelConfig c = base;
    c.stage_dims.assign(dims.begin(), dims.end());
    if (s == 0.0) return count_params(c).total;
    const SparsityPlan plan = make_plan(c, s, scope);
    return count_params(c, &plan).total;
  };
  return width_plan(base.stage_dims, sparsity, counter);
}

}  // namespace slak
