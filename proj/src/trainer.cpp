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

#include "slak/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

namespace slak {

void SyntheticTask::validate() const {
  auto fail = [](const std::string& f, const std::string& why) {
    throw Error(ErrorKind::kInvalidConfig, "task." + f + ": " + why);
  };
  if (image_size < 4 || image_size % 4 != 0) {
    fail("image_size", "must be a positive multiple of 4");
  }
  if (channels < 1) fail("channels", "must be >= 1");
  if (marker_size < 1 || marker_size * 2 > image_size) {
    fail("marker_size", "must be in [1, image_size / 2]");
  }
  if (d_star < marker_size || d_star >= image_size - marker_size) {
    fail("d_star", "must leave both labels reachable");
  }
  if (!(noise >= 0.0) || !std::isfinite(noise)) fail("noise", "must be >= 0");
}

int MarkerPair::distance() const {
  return std::max(std::abs(ay - by), std::abs(ax - bx));
}

int synth_label(const SyntheticTask& task, const MarkerPair& m) {
  return m.distance() > task.d_star ? 1 : 0;
}

Tensor synth_image(const SyntheticTask& task, const MarkerPair& m,
                   RngStream& rng) {
  const int g = task.image_size, c = task.channels, s = task.marker_size;
  Tensor img({1, c, g, g});
  for (auto& v : img.values()) v = static_cast<float>(task.noise * rng.normal());
  for (auto [y0, x0] : {std::pair{m.ay, m.ax}, std::pair{m.by, m.bx}}) {
    for (int ch = 0; ch < c; ++ch) {
      for (int y = y0; y < std::min(g, y0 + s); ++y) {
        for (int x = x0; x < std::min(g, x0 + s); ++x) {
          img.at(0, ch, y, x) += static_cast<float>(task.intensity);
        }
      }
    }
  }
  return img;
}

SynthBatch synth_batch(const SyntheticTask& task, RngStream& rng, int n) {
  task.validate();
  if (n < 1) throw Error(ErrorKind::kInvalidConfig, "batch size must be >= 1");
  const int g = task.image_size, s = task.marker_size;
  const std::uint64_t slots = task.aligned ? std::uint64_t(g / s)
                                           : std::uint64_t(g - s + 1);
  const int pitch = task.aligned ? s : 1;
  SynthBatch out;
  out.images = Tensor({n, task.channels, g, g});
  const std::size_t per = out.images.numel() / std::size_t(n);
  for (int i = 0; i < n; ++i) {
    const int label = static_cast<int>(rng.below(2));
    MarkerPair m{};
    do {
      m.ay = int(rng.below(slots)) * pitch;
      m.ax = int(rng.below(slots)) * pitch;
      m.by = int(rng.below(slots)) * pitch;
      m.bx = int(rng.below(slots)) * pitch;
    } while (m.distance() < s || synth_label(task, m) != label);
    Tensor img = synth_image(task, m, rng);
    std::copy(img.values().begin(), img.values().end(),
              out.images.values().begin() + std::ptrdiff_t(i * per));
    out.labels.push_back(label);
    out.markers.push_back(m);
  }
  return out;
}

OptimState OptimState::zeros_like(const std::vector<Tensor*>& params) {
  OptimState s;
  for (const Tensor* p : params) {
    s.m.emplace_back(p->shape());
    s.v.emplace_back(p->shape());
  }
  return s;
}

void adamw_step(const std::vector<Tensor*>& params,
                const std::vector<const Tensor*>& grads, OptimState& state,
                double lr, const std::vector<double>& wd,
                const std::vector<std::string>* names) {
  if (params.size() != grads.size() || params.size() != state.m.size() ||
      params.size() != wd.size()) {
    throw Error(ErrorKind::kInvalidShape, "adamw_step: list lengths differ");
  }
  auto name = [&](std::size_t i) {
    return names != nullptr ? (*names)[i] : "param " + std::to_string(i);
  };
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->same_shape(*grads[i]) || !params[i]->same_shape(state.m[i])) {
      throw Error(ErrorKind::kInvalidShape,
                  "adamw_step: shape mismatch for " + name(i));
    }
    const Tensor& g = *grads[i];
    for (std::size_t k = 0; k < g.numel(); ++k) {
      if (!std::isfinite(g[k])) {
        throw Error(ErrorKind::kNumeric, "non-finite gradient in " + name(i) +
                                             " at flat index " +
                                             std::to_string(k));
      }
    }
  }
  ++state.step;
  const double b1 = state.beta1, b2 = state.beta2;
  const double c1 = 1.0 - std::pow(b1, double(state.step));
  const double c2 = 1.0 - std::pow(b2, double(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    float* p = params[i]->data();
    const float* g = grads[i]->data();
    float* m = state.m[i].data();
    float* v = state.v[i].data();
    const double decay = wd[i];
    for (std::size_t k = 0; k < params[i]->numel(); ++k) {
      const double gk = g[k];
      const double mk = b1 * m[k] + (1.0 - b1) * gk;
      const double vk = b2 * v[k] + (1.0 - b2) * gk * gk;
      m[k] = float(mk);
      v[k] = float(vk);
      const double update = (mk / c1) / (std::sqrt(vk / c2) + state.eps);
      p[k] = float(p[k] - lr * (update + decay * p[k]));
    }
  }
}

LossResult cross_entropy_ls(const Tensor& logits, const std::vector<int>& labels,
                            double eps) {
  if (logits.rank() != 2 || logits.dim(0) != std::int64_t(labels.size())) {
    throw Error(ErrorKind::kInvalidShape,
                "cross_entropy_ls: logits " + shape_str(logits.shape()) +
                    " vs " + std::to_string(labels.size()) + " labels");
  }
  const std::int64_t B = logits.dim(0), K = logits.dim(1);
  if (K < 2) throw Error(ErrorKind::kInvalidShape, "cross_entropy_ls: K < 2");
  if (!(eps >= 0.0 && eps < 1.0)) {
    throw Error(ErrorKind::kInvalidConfig, "label_smoothing must be in [0, 1)");
  }
  LossResult r{0.0, Tensor(logits.shape())};
  std::vector<double> logp(static_cast<std::size_t>(K));
  for (std::int64_t b = 0; b < B; ++b) {
    const int y = labels[std::size_t(b)];
    if (y < 0 || y >= K) {
      throw Error(ErrorKind::kInvalidConfig,
                  "label " + std::to_string(y) + " out of range [0, " +
                      std::to_string(K) + ")");
    }
    const float* z = logits.data() + b * K;
    double mx = z[0];
    for (std::int64_t k = 1; k < K; ++k) mx = std::max(mx, double(z[k]));
    double sum = 0;
    for (std::int64_t k = 0; k < K; ++k) sum += std::exp(double(z[k]) - mx);
    const double lse = mx + std::log(sum);
    for (std::int64_t k = 0; k < K; ++k) {
      logp[k] = double(z[k]) - lse;
      const double target = eps / double(K) + (k == y ? 1.0 - eps : 0.0);
      r.loss -= target * logp[k];
      r.dlogits[b * K + k] = float((std::exp(logp[k]) - target) / double(B));
    }
  }
  r.loss /= double(B);
  if (!std::isfinite(r.loss)) {
    throw Error(ErrorKind::kNumeric, "non-finite loss");
  }
  return r;
}

double TrainConfig::resolved_peak_lr() const {
  return peak_lr > 0 ? peak_lr : 4e-3 * double(batch) / 4096.0;
}

long TrainConfig::resolved_warmup() const {
  return warmup_steps >= 0 ? warmup_steps
                           : static_cast<long>(0.05 * double(total_steps));
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& f, const std::string& why) {
    throw Error(ErrorKind::kInvalidConfig, f + ": " + why);
  };
  if (total_steps < 0) fail("total_steps", "must be >= 0");
  if (total_steps > 0 && resolved_warmup() >= total_steps) {
    fail("warmup_steps", "must be < total_steps");
  }
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) {
    fail("label_smoothing", "must be in [0, 1)");
  }
  if (batch < 1) fail("batch", "must be >= 1");
  if (!(weight_decay >= 0.0)) fail("weight_decay", "must be >= 0");
  if (!(sparsity >= 0.0 && sparsity < 1.0)) fail("sparsity", "must be in [0, 1)");
  adaptation.validate();
  task.validate();
}

double lr_schedule(long step, const TrainConfig& config) {
  const long T = config.total_steps, W = config.resolved_warmup();
  if (step < 0 || step > T) {
    throw Error(ErrorKind::kScheduleRange,
                "lr step " + std::to_string(step) + " outside [0, " +
                    std::to_string(T) + "]");
  }
  const double peak = config.resolved_peak_lr();
  if (step < W) return peak * double(step) / double(W);
  if (T == W) return peak;
  return peak * 0.5 *
         (1.0 + std::cos(std::numbers::pi * double(step - W) / double(T - W)));
}

namespace {

std::vector<std::size_t> resolve_ids(const Model<float>& model,
                                     const std::vector<std::string>& ids) {
  std::vector<std::size_t> idx;
  for (const auto& id : ids) idx.push_back(model.params().index(id));
  return idx;
}

double global_sparsity(const std::vector<Mask>& masks) {
  std::size_t total = 0, nnz = 0;
  for (const auto& m : masks) {
    total += m.numel();
    nnz += m.nnz();
  }
  return total == 0 ? 0.0 : 1.0 - double(nnz) / double(total);
}

// Adaptation rate at step t, reaching zero at stop_fraction * T.
double adaptation_rate(const TrainConfig& c, long t) {
  const long stop = std::max<long>(
      1, std::lround(c.adaptation.stop_fraction * double(c.total_steps)));
  if (c.total_steps == 0) return c.adaptation.initial_rate;
  return cosine_adaptation_rate(c.adaptation.initial_rate, std::min(t, stop), stop);
}

}  // namespace

std::vector<Mask> snip_masks(Model<float>& model, const TrainConfig& config,
                             std::vector<std::string>* layer_ids) {
  const SparsityPlan plan =
      make_plan(model.config(), config.sparsity, config.scope);
  if (layer_ids != nullptr) *layer_ids = plan.included_layers;
  if (config.sparsity == 0.0) {
    std::vector<Mask> dense;
    for (const auto& id : plan.included_layers) {
      dense.emplace_back(model.params()[model.params().index(id)].value.shape());
    }
    return dense;
  }
  RngStream rng = RngStream(config.seed).split(0x5119);
  SynthBatch batch = synth_batch(config.task, rng, config.batch);
  ForwardCache<float> cache;
  Tensor logits = model.forward(batch.images, {Mode::kTrain}, &cache);
  LossResult loss = cross_entropy_ls(logits, batch.labels, config.label_smoothing);
  Gradients<float> grads = model.backward(cache, loss.dlogits);
  const auto idx = resolve_ids(model, plan.included_layers);
  std::vector<Tensor> scores;
  for (auto i : idx) {
    scores.push_back(snip_scores(model.params()[i].value, grads.params[i]));
  }
  std::vector<Mask> masks = build_masks_global_topk(scores, config.sparsity);
  auto& store = model.mutable_params();
  for (std::size_t k = 0; k < idx.size(); ++k) {
    apply_mask(store[idx[k]].value, masks[k]);
  }
  return masks;
}

double masked_magnitude(const Model<float>& model,
                        const std::vector<std::string>& layer_ids,
                        const std::vector<Mask>& masks) {
  double total = 0.0;
  for (std::size_t k = 0; k < layer_ids.size(); ++k) {
    const Tensor& w = model.params()[model.params().index(layer_ids[k])].value;
    for (std::size_t i = 0; i < w.numel(); ++i) {
      if (!masks[k].active(i)) total += std::abs(double(w[i]));
    }
  }
  return total;
}

TrainResult train(Model<float>& model, std::vector<Mask> masks,
                  const std::vector<std::string>& layer_ids,
                  const TrainConfig& config, const StepCallback& on_step,
                  const StopPredicate& stop) {
  config.validate();
  if (masks.size() != layer_ids.size()) {
    throw Error(ErrorKind::kInvalidShape, "train: masks and layer ids differ");
  }
  const auto mask_idx = resolve_ids(model, layer_ids);
  for (std::size_t k = 0; k < masks.size(); ++k) {
    if (masks[k].shape() != model.params()[mask_idx[k]].value.shape()) {
      throw Error(ErrorKind::kInvalidMask,
                  "mask for " + layer_ids[k] + " has shape " +
                      shape_str(masks[k].shape()));
    }
  }
  const bool sparse = global_sparsity(masks) > 0.0;
  model.set_skip_zero_taps(sparse);

  std::vector<std::size_t> trainable;
  std::vector<double> decay;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    const auto& p = model.params()[i];
    if (p.role == ParamRole::kBuffer) continue;
    trainable.push_back(i);
    decay.push_back(p.value.rank() >= 2 ? config.weight_decay : 0.0);
    names.push_back(p.id);
  }
  // Position of each masked layer within `trainable`.
  std::vector<std::size_t> mask_slot;
  for (auto i : mask_idx) {
    mask_slot.push_back(std::size_t(
        std::find(trainable.begin(), trainable.end(), i) - trainable.begin()));
  }
  std::vector<Tensor*> ptrs;
  {
    auto& store = model.mutable_params();
    for (auto i : trainable) ptrs.push_back(&store[i].value);
    for (std::size_t k = 0; k < masks.size(); ++k) apply_mask(*ptrs[mask_slot[k]], masks[k]);
  }
  OptimState opt = OptimState::zeros_like(ptrs);

  TrainResult result;
  result.sparse_layers = layer_ids;
  result.initial = {0, std::nan(""), std::nan(""), lr_schedule(0, config),
                    adaptation_rate(config, 0), global_sparsity(masks)};

  RngStream root(config.seed);
  RngStream data_rng = root.split(1);
  RngStream grow_rng = root.split(2);
  RngStream drop_rng = root.split(3);
  AdaptationConfig adapt = config.adaptation;
  adapt.horizon = config.total_steps;

  for (long t = 1; t <= config.total_steps; ++t) {
    SynthBatch batch = synth_batch(config.task, data_rng, config.batch);
    ForwardCache<float> cache;
    ForwardOptions fo{Mode::kTrain, false, &drop_rng};
    Tensor logits = model.forward(batch.images, fo, &cache);
    LossResult loss = cross_entropy_ls(logits, batch.labels, config.label_smoothing);
    Gradients<float> grads = model.backward(cache, loss.dlogits);

    int correct = 0;
    const std::int64_t K = logits.dim(1);
    for (int b = 0; b < config.batch; ++b) {
      const float* z = logits.data() + b * K;
      const auto pred = std::max_element(z, z + K) - z;
      correct += pred == batch.labels[std::size_t(b)] ? 1 : 0;
    }

    std::vector<const Tensor*> gptrs;
    for (auto i : trainable) gptrs.push_back(&grads.params[i]);
    for (std::size_t k = 0; k < masks.size(); ++k) {
      apply_mask(grads.params[mask_idx[k]], masks[k]);
    }
    const double lr = lr_schedule(t, config);
    {
      model.mutable_params();  // invalidates caches
      adamw_step(ptrs, gptrs, opt, lr, decay, &names);
    }
    for (std::size_t k = 0; k < masks.size(); ++k) apply_mask(*ptrs[mask_slot[k]], masks[k]);

    const double p_t = adaptation_rate(config, t);
    if (sparse && adapt.adapts_at(t)) {
      AdaptationRecord rec{t, p_t, {}, 0, 0};
      std::vector<AdaptationResult> res;
      if (adapt.per_layer) {
        for (std::size_t k = 0; k < masks.size(); ++k) {
          res.push_back(adaptation_step(*ptrs[mask_slot[k]], masks[k], p_t, grow_rng));
        }
      } else {
        std::vector<Tensor*> ws;
        for (auto s : mask_slot) ws.push_back(ptrs[s]);
        res = adaptation_step_global(ws, masks, p_t, grow_rng);
      }
      for (std::size_t k = 0; k < masks.size(); ++k) {
        masks[k] = std::move(res[k].mask);
        const std::size_t s = mask_slot[k];
        for (auto i : res[k].pruned) opt.m[s][i] = opt.v[s][i] = 0.0f;
        for (auto i : res[k].grown) opt.m[s][i] = opt.v[s][i] = 0.0f;
        rec.pruned += res[k].pruned.size();
        rec.grown += res[k].grown.size();
        rec.layer_sparsity.push_back(1.0 - masks[k].density());
      }
      result.adaptations.push_back(std::move(rec));
    }

    StepMetrics row{t, loss.loss, double(correct) / config.batch, lr, p_t,
                    global_sparsity(masks)};
    result.log.push_back(row);
    if (on_step) on_step(row, model, masks);
    if (stop && t < config.total_steps && stop(result)) {
      result.stopped_early = true;
      break;
    }
  }
  result.masks = std::move(masks);
  return result;
}

StopPredicate accuracy_stop(double target, int window) {
  if (window < 1) {
    throw Error(ErrorKind::kInvalidConfig, "stop window must be >= 1");
  }
  return [target, window](const TrainResult& r) {
    if (r.log.size() < std::size_t(window)) return false;
    double sum = 0.0;
    for (auto it = r.log.end() - window; it != r.log.end(); ++it) sum += it->acc;
    return sum / window >= target;
  };
}

Model<float> init_model(const ModelConfig& config, std::uint64_t seed) {
  RngStream rng = RngStream(seed).split(4);
  return Model<float>::build(config, rng);
}

void write_metrics_csv(const std::string& path,
                       const std::vector<StepMetrics>& log) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::kIo, "cannot write " + path);
  f << "step,loss,acc,lr,p_t,global_sparsity\n";
  char line[256];
  for (const auto& r : log) {
    std::snprintf(line, sizeof line, "%ld,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.step,
                  r.loss, r.acc, r.lr, r.p_t, r.global_sparsity);
    f << line;
  }
  if (!f) throw Error(ErrorKind::kIo, "write failed: " + path);
}

void write_adaptation_csv(const std::string& path, const TrainResult& result) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::kIo, "cannot write " + path);
  f << "step,rate,layer,sparsity\n";
  char line[512];
  for (const auto& a : result.adaptations) {
    for (std::size_t k = 0; k < a.layer_sparsity.size(); ++k) {
      std::snprintf(line, sizeof line, "%ld,%.9g,%s,%.9g\n", a.step, a.rate,
                    result.sparse_layers[k].c_str(), a.layer_sparsity[k]);
      f << line;
    }
  }
  if (!f) throw Error(ErrorKind::kIo, "write failed: " + path);
}

}  // namespace slak
