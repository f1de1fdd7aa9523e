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
#include <optional>
#include <string>
#include <vector>

#include "slak/model.hpp"
#include "slak/rng.hpp"
#include "slak/sparsity.hpp"
#include "slak/tensor.hpp"

namespace slak {

// Two bright square markers on a noisy background. Label 1 iff the
// Chebyshev distance between the markers' top-left corners exceeds d_star.
struct SyntheticTask {
  int image_size = 64;
  int channels = 3;
  int marker_size = 4;
  int d_star = 16;
  double noise = 0.02;
  double intensity = 1.0;
  // Marker corners on the marker_size lattice, so each marker fills one
  // stem patch.
  bool aligned = true;

  void validate() const;
};

struct MarkerPair {
  int ay, ax, by, bx;
  int distance() const;
};

int synth_label(const SyntheticTask& task, const MarkerPair& m);

// One image with the given markers; noise drawn from rng.
Tensor synth_image(const SyntheticTask& task, const MarkerPair& m,
                   RngStream& rng);

struct SynthBatch {
  Tensor images;
  std::vector<int> labels;
  std::vector<MarkerPair> markers;
};

// The label is drawn first (fair coin), then marker positions are sampled
// uniformly until they satisfy it.
SynthBatch synth_batch(const SyntheticTask& task, RngStream& rng, int n);

struct OptimState {
  std::vector<Tensor> m, v;
  long step = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  static OptimState zeros_like(const std::vector<Tensor*>& params);
};

// One AdamW step over params[i] with gradient grads[i]. wd[i] is the decay
// applied to params[i] (decoupled, scaled by lr). names label errors.
void adamw_step(const std::vector<Tensor*>& params,
                const std::vector<const Tensor*>& grads, OptimState& state,
                double lr, const std::vector<double>& wd,
                const std::vector<std::string>* names = nullptr);

struct LossResult {
  double loss;
  Tensor dlogits;
};

// Mean label-smoothed cross-entropy: target (1 - eps) on the label plus
// eps / K everywhere.
LossResult cross_entropy_ls(const Tensor& logits, const std::vector<int>& labels,
                            double eps);

struct TrainConfig {
  double peak_lr = 0.0;  // <= 0: 4e-3 * batch / 4096
  long warmup_steps = -1;  // < 0: 5% of total_steps
  long total_steps = 2000;
  double weight_decay = 0.05;
  double label_smoothing = 0.1;
  int batch = 64;
  std::uint64_t seed = 0;
  double sparsity = 0.0;
  PlanScope scope = PlanScope::kBlocks;
  AdaptationConfig adaptation;  // horizon is set from total_steps
  SyntheticTask task;

  double resolved_peak_lr() const;
  long resolved_warmup() const;
  void validate() const;
};

// Linear warmup from 0, then cosine decay to 0 at total_steps.
double lr_schedule(long step, const TrainConfig& config);

struct StepMetrics {
  long step = 0;
  double loss = 0, acc = 0, lr = 0, p_t = 0, global_sparsity = 0;
};

struct AdaptationRecord {
  long step;
  double rate;
  std::vector<double> layer_sparsity;
  std::size_t pruned, grown;
};

struct TrainResult {
  StepMetrics initial;
  std::vector<StepMetrics> log;
  std::vector<std::string> sparse_layers;
  std::vector<AdaptationRecord> adaptations;
  std::vector<Mask> masks;
  bool stopped_early = false;
};

// Masks for the model's in-scope weights: one seeded batch, |w * dL/dw|
// scores, global top-k. Weights outside the masks are zeroed.
std::vector<Mask> snip_masks(Model<float>& model, const TrainConfig& config,
                             std::vector<std::string>* layer_ids = nullptr);

using StepCallback = std::function<void(const StepMetrics&, const Model<float>&,
                                        const std::vector<Mask>&)>;

// Ends a run after the current step when it returns true. The schedules
// still follow total_steps; result.masks is not filled yet when it is called.
using StopPredicate = std::function<bool(const TrainResult&)>;

// Stops once the mean accuracy over the last `window` steps reaches target.
StopPredicate accuracy_stop(double target, int window);

// Model initialized from the run seed.
Model<float> init_model(const ModelConfig& config, std::uint64_t seed);

// Runs total_steps optimizer steps. masks align with layer_ids (both empty
// for dense training).
TrainResult train(Model<float>& model, std::vector<Mask> masks,
                  const std::vector<std::string>& layer_ids,
                  const TrainConfig& config, const StepCallback& on_step = {},
                  const StopPredicate& stop = {});

// Σ |θ| over inactive entries of every masked layer.
double masked_magnitude(const Model<float>& model,
                        const std::vector<std::string>& layer_ids,
                        const std::vector<Mask>& masks);

void write_metrics_csv(const std::string& path,
                       const std::vector<StepMetrics>& log);
void write_adaptation_csv(const std::string& path, const TrainResult& result);

}  // namespace slak
