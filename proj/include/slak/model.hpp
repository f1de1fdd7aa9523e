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
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "slak/conv.hpp"
#include "slak/norm.hpp"
#include "slak/rng.hpp"
#include "slak/sparsity.hpp"
#include "slak/tensor.hpp"

namespace slak {

struct DwVariant {
  enum class Kind {
    kFull,
    kDecomposedParallel,
    kDecomposedSequential,
    kDilated,
    kStackedSmall
  };
  Kind kind = Kind::kDecomposedParallel;
  int rate = 3;    // kDilated
  int count = 10;  // kStackedSmall: number of stacked 3x3 convs

  static DwVariant full() { return {Kind::kFull}; }
  static DwVariant parallel() { return {Kind::kDecomposedParallel}; }
  static DwVariant sequential() { return {Kind::kDecomposedSequential}; }
  static DwVariant dilated(int rate) { return {Kind::kDilated, rate}; }
  static DwVariant stacked(int count) { return {Kind::kStackedSmall, 3, count}; }

  // "full", "parallel", "sequential", "dilated:3", "stacked:10".
  std::string str() const;
  static DwVariant parse(const std::string& text);
  friend bool operator==(const DwVariant&, const DwVariant&) = default;
};

// Kernel size of the dilated branch whose receptive field spans M.
int dilated_kernel_size(int m, int rate);

inline constexpr int kSmallKernel = 5;

struct ModelConfig {
  std::vector<int> stage_blocks{3, 3, 9, 3};
  std::vector<int> stage_dims{96, 192, 384, 768};
  std::vector<int> stage_kernels{51, 49, 47, 13};
  int short_edge = 5;
  DwVariant dw_variant;
  double layer_scale_init = 1e-6;
  double drop_path_rate = 0.0;
  int num_classes = 1000;
  int in_channels = 3;
  int input_size = 224;

  static ModelConfig slak_t();
  static ModelConfig convnext_t();
  static ModelConfig slak_micro();

  // Throws kInvalidConfig naming the offending field.
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class ParamRole { kDwWeight, kPwWeight, kOther, kBuffer };

// Static description of one stored tensor. macs is the per-image
// multiply-accumulate count of the conv/linear layer the tensor weights
// (zero for biases, norms and buffers).
struct TensorInfo {
  std::string id;
  ParamRole role;
  Shape shape;
  double macs = 0.0;
  bool in_block = false;
};

// Every tensor the model stores, in build order.
std::vector<TensorInfo> describe(const ModelConfig& config);

template <typename T>
struct Param {
  std::string id;
  ParamRole role;
  BasicTensor<T> value;
};

template <typename T>
class ParamStore {
 public:
  std::size_t add(std::string id, ParamRole role, BasicTensor<T> value);
  std::size_t size() const { return params_.size(); }
  const Param<T>& operator[](std::size_t i) const { return params_[i]; }
  Param<T>& operator[](std::size_t i) { return params_[i]; }
  std::optional<std::size_t> find(const std::string& id) const;
  std::size_t index(const std::string& id) const;  // throws kInvalidConfig

  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<Param<T>> params_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

struct ForwardOptions {
  Mode mode = Mode::kTrain;
  // GELU becomes the identity; with eval-mode BN the blocks are then affine.
  bool linear = false;
  // Required in train mode when drop_path_rate > 0.
  RngStream* drop_rng = nullptr;
};

template <typename T>
struct ForwardCache;

template <typename T>
struct Gradients {
  std::vector<BasicTensor<T>> params;  // aligned with the store, zero for buffers
  BasicTensor<T> input;
};

template <typename T>
class Model {
 public:
  static Model build(const ModelConfig& config, RngStream& rng);

  Model(Model&&) noexcept;
  Model& operator=(Model&&) noexcept;
  Model(const Model&);
  ~Model();

  const ModelConfig& config() const { return config_; }
  const ParamStore<T>& params() const { return store_; }
  // Mutable access invalidates outstanding caches.
  ParamStore<T>& mutable_params() {
    ++version_;
    return store_;
  }
  std::uint64_t version() const { return version_; }

  // Indices of depthwise weights (the tensors dynamic sparsity targets by
  // default).
  std::vector<std::size_t> indices_with_role(ParamRole role) const;

  // Zero-weight taps are skipped in depthwise convs. Exact for finite inputs.
  void set_skip_zero_taps(bool on) { conv_options_.skip_zero_taps = on; }

  BasicTensor<T> forward(const BasicTensor<T>& x, const ForwardOptions& options,
                         ForwardCache<T>* cache = nullptr);
  // Stops before the head: returns the last stage's feature map.
  BasicTensor<T> forward_features(const BasicTensor<T>& x,
                                  const ForwardOptions& options,
                                  ForwardCache<T>* cache = nullptr);

  // Throws kCache if the cache is empty, from another model, or older than
  // the last parameter mutation.
  Gradients<T> backward(const ForwardCache<T>& cache,
                        const BasicTensor<T>& dlogits) const;
  Gradients<T> backward_features(const ForwardCache<T>& cache,
                                 const BasicTensor<T>& dfeatures) const;

  struct Layout;

 private:
  Model();

  ModelConfig config_;
  ParamStore<T> store_;
  std::unique_ptr<Layout> layout_;
  std::uint64_t version_ = 0;
  std::uint64_t uid_ = 0;
  ConvOptions conv_options_;
};

template <typename T>
struct ForwardCache {
  ForwardCache();
  ForwardCache(ForwardCache&&) noexcept;
  ForwardCache& operator=(ForwardCache&&) noexcept;
  ~ForwardCache();

  bool empty() const { return model_uid == 0; }

  std::uint64_t model_uid = 0;
  std::uint64_t version = 0;
  bool has_head = false;
  struct Tape;
  std::unique_ptr<Tape> tape;
};

// Sparsity scope: which weight tensors a plan covers.
enum class PlanScope {
  kBlocks,    // depthwise and pointwise weights inside blocks
  kDwOnly,    // depthwise weights only
  kAllLayers  // every conv and linear weight
};

PlanScope parse_plan_scope(const std::string& text);
std::string to_string(PlanScope scope);

// Uniform-density plan over the tensors in scope.
SparsityPlan make_plan(const ModelConfig& config, double sparsity,
                       PlanScope scope = PlanScope::kBlocks);

struct LayerCount {
  std::string id;
  double params = 0.0;  // after sparsity
  double macs = 0.0;    // after sparsity
};

struct CountReport {
  double total = 0.0;
  std::vector<LayerCount> layers;
};

// Buffers (BN running statistics) are not parameters. With a plan, layers it
// includes contribute their nnz and density-scaled MACs.
CountReport count_params(const ModelConfig& config,
                         const SparsityPlan* plan = nullptr);
CountReport count_flops(const ModelConfig& config, int input_size,
                        const SparsityPlan* plan = nullptr);

// Width-for-sparsity over the stage dims: the factor whose sparse parameter
// count (plan over `scope`) best matches the dense count of `base`.
WidthPlan plan_width(const ModelConfig& base, double sparsity,
                     PlanScope scope = PlanScope::kBlocks);

}  // namespace slak
