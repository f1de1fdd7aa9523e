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


// slak: train, bench, erf, flops and plan front-ends.
// Exit codes: 0 success, 2 configuration error, 3 numeric error.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "slak/bench.hpp"
#include "slak/checkpoint.hpp"
#include "slak/erf.hpp"
#include "slak/error.hpp"
#include "slak/model.hpp"
#include "slak/run_config.hpp"
#include "slak/trainer.hpp"

namespace fs = std::filesystem;
using namespace slak;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kNumericError = 3;

std::uint64_t seed_or_env(std::int64_t flag) {
  if (flag >= 0) return std::uint64_t(flag);
  if (const char* env = std::getenv("SLAK_SEED"); env != nullptr && *env) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (*end != '\0') {
      throw Error(ErrorKind::kInvalidConfig,
                  std::string("SLAK_SEED: not an unsigned integer: ") + env);
    }
    return v;
  }
  return 0;
}

fs::path prepare_out(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    throw Error(ErrorKind::kInvalidConfig,
                "out: cannot create " + dir + ": " + ec.message());
  }
  return fs::path(dir);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) throw Error(ErrorKind::kIo, "cannot write " + path.string());
}

std::vector<int> parse_ints(const std::string& text, const char* what) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw Error(ErrorKind::kInvalidConfig,
                  std::string(what) + ": not an integer list: " + text);
    }
  }
  if (out.empty()) {
    throw Error(ErrorKind::kInvalidConfig, std::string(what) + ": empty list");
  }
  return out;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
};

int cmd_train(const TrainArgs& a) {
  RunConfig rc = load_run_config(a.config);
  for (const auto& s : a.sets) apply_override(rc, s);
  if (!a.out.empty()) rc.out_dir = a.out;
  rc.resolve();
  const fs::path out = prepare_out(rc.out_dir);
  write_text(out / "config.json", rc.to_json().dump(2) + "\n");

  Model<float> model = init_model(rc.model, rc.train.seed);
  std::vector<std::string> layers;
  std::vector<Mask> masks;
  if (rc.train.sparsity > 0.0) masks = snip_masks(model, rc.train, &layers);
  StopPredicate stop;
  if (rc.stop_accuracy > 0.0) stop = accuracy_stop(rc.stop_accuracy, rc.stop_window);
  const TrainResult r = train(model, masks, layers, rc.train, {}, stop);

  write_metrics_csv((out / "metrics.csv").string(), r.log);
  write_adaptation_csv((out / "adaptation.csv").string(), r);
  save_checkpoint((out / "model.slak").string(), model, r.sparse_layers, r.masks);
  const StepMetrics last = r.log.empty() ? r.initial : r.log.back();
  std::printf("steps %zu%s  loss %.4f  acc %.4f  sparsity %.4f  -> %s\n",
              r.log.size(), r.stopped_early ? " (stopped early)" : "", last.loss,
              last.acc, last.global_sparsity, out.string().c_str());
  return kOk;
}

// ---------------------------------------------------------------------------

struct BenchArgs {
  std::string variants = "dense,sparse_masked,sparse_decomposed,sparse_decomposed_masked";
  std::string resolutions = "16,32,64,128";
  int m = 51, n = 5, channels = 64, batch = 8, reps = 5, warmup = 1;
  double sparsity = 0.4;
  std::int64_t seed = -1;
  bool json = false;
  std::string out = "out";
};

int cmd_bench(const BenchArgs& a) {
  std::vector<BenchVariant> variants;
  {
    std::stringstream ss(a.variants);
    std::string item;
    while (std::getline(ss, item, ',')) variants.push_back(parse_bench_variant(item));
  }
  const auto resolutions = parse_ints(a.resolutions, "resolutions");
  const fs::path out = prepare_out(a.out);
  std::vector<BenchRecord> records;
  for (int r : resolutions) {
    std::vector<BenchSpec> specs;
    for (auto v : variants) {
      BenchSpec s;
      s.variant = v;
      s.batch = a.batch;
      s.channels = a.channels;
      s.resolution = r;
      s.m = a.m;
      s.n = a.n;
      s.sparsity = a.sparsity;
      s.reps = a.reps;
      s.warmup = a.warmup;
      s.seed = seed_or_env(a.seed);
      specs.push_back(s);
    }
    for (auto& rec : bench_interleaved(specs)) {
      std::fprintf(stderr, "%s R=%d median %.6f s\n", to_string(rec.variant).c_str(), r,
                   rec.median_s);
      records.push_back(std::move(rec));
    }
  }
  if (a.json) {
    const std::string text = bench_json(records).dump(2) + "\n";
    write_text(out / "bench.json", text);
    std::fputs(text.c_str(), stdout);
  } else {
    const std::string text = speedup_report(records);
    write_text(out / "bench.csv", text);
    std::fputs(text.c_str(), stdout);
  }
  return kOk;
}

// ---------------------------------------------------------------------------

struct ErfArgs {
  std::string config;
  std::vector<std::string> sets;
  std::string checkpoint;
  int kernel = 0;
  int images = 4;
  std::int64_t seed = -1;
  bool linear = false;
  bool per_image = false;
  bool svg = false;
  std::string out = "out";
};

int cmd_erf(const ErfArgs& a) {
  RunConfig rc = a.config.empty() ? RunConfig{} : load_run_config(a.config);
  for (const auto& s : a.sets) apply_override(rc, s);
  if (a.kernel > 0) rc.model.stage_kernels.front() = a.kernel;
  rc.model.validate();
  if (a.images < 1) throw Error(ErrorKind::kInvalidConfig, "images: must be >= 1");
  const std::uint64_t seed = seed_or_env(a.seed);
  const fs::path out = prepare_out(a.out);

  // An explicit model description must agree with the checkpoint.
  const bool described = !a.config.empty() || !a.sets.empty() || a.kernel > 0;
  Model<float> model = a.checkpoint.empty() ? init_model(rc.model, seed)
                       : described          ? load_checkpoint(a.checkpoint, rc.model).model
                                            : load_checkpoint(a.checkpoint).model;
  const ModelConfig& mc = model.config();
  RngStream rng = RngStream(seed).split(5);
  std::vector<Tensor> images;
  for (int i = 0; i < a.images; ++i) {
    images.push_back(Tensor::uniform({1, mc.in_channels, mc.input_size, mc.input_size},
                                     -1.0, 1.0, rng));
  }
  const ContributionMap map = contribution_map(
      model, images, a.linear,
      a.per_image ? ErfAccumulation::kPerImage : ErfAccumulation::kRaw);
  write_map_csv(map, (out / "erf_map.csv").string());
  if (a.svg) write_map_svg(map, (out / "erf_map.svg").string());
  nlohmann::ordered_json summary;
  for (const auto& [t, r] : area_summary(map)) summary[t] = r;
  const std::string text = summary.dump(2) + "\n";
  write_text(out / "erf_summary.json", text);
  std::fputs(text.c_str(), stdout);
  return kOk;
}

// ---------------------------------------------------------------------------

struct FlopsArgs {
  std::string preset = "convnext_t";
  std::string kernels = "7,31,51,61,101,151";
  std::string variant = "both";
  int input = 224;
  std::string out = "out";
};

int cmd_flops(const FlopsArgs& a) {
  if (a.variant != "both" && a.variant != "full" && a.variant != "decomposed") {
    throw Error(ErrorKind::kInvalidConfig,
                "variant: expected full, decomposed or both, got " + a.variant);
  }
  const auto kernels = parse_ints(a.kernels, "kernels");
  auto records = flops_sweep(model_preset(a.preset), kernels, a.input);
  if (a.variant != "both") {
    std::erase_if(records, [&](const FlopRecord& r) { return r.variant != a.variant; });
  }
  const fs::path out = prepare_out(a.out);
  const std::string text = flops_csv(records);
  write_text(out / "flops.csv", text);
  std::fputs(text.c_str(), stdout);
  return kOk;
}

// ---------------------------------------------------------------------------

struct PlanArgs {
  double sparsity = 0.4;
  std::string preset = "slak_t";
  std::string scope = "blocks";
  std::string out;
};

int cmd_plan(const PlanArgs& a) {
  const ModelConfig base = model_preset(a.preset);
  const WidthPlan p = plan_width(base, a.sparsity, parse_plan_scope(a.scope));
  nlohmann::ordered_json j;
  j["sparsity"] = a.sparsity;
  j["factor"] = p.factor;
  j["base_dims"] = base.stage_dims;
  j["dims"] = p.dims;
  j["baseline_params"] = p.baseline_params;
  j["planned_params"] = p.planned_params;
  j["relative_gap"] = p.relative_gap();
  std::printf("factor %.1f\n", p.factor);
  std::printf("dims");
  for (int d : p.dims) std::printf(" %d", d);
  std::printf("\nparams dense %.0f, sparse widened %.0f (%+.2f%%)\n",
              p.baseline_params, p.planned_params, 100.0 * p.relative_gap());
  if (!a.out.empty()) {
    write_text(prepare_out(a.out) / "plan.json", j.dump(2) + "\n");
  }
  return kOk;
}

int exit_code_for(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::kNumeric:
    case ErrorKind::kDegenerateStatistics:
    case ErrorKind::kDegenerateMap:
      return kNumericError;
    default:
      return kConfigError;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse large-kernel convnets: training, benchmarks and analysis"};
  app.name("slak");
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train on the synthetic task");
  train_cmd->add_option("--config", ta.config, "JSON run config (dotted keys)")
      ->required();
  train_cmd->add_option("--set", ta.sets, "Override a key: key=value (repeatable)")
      ->default_str("");
  train_cmd->add_option("--out", ta.out, "Output directory (overrides run.out)");

  BenchArgs ba;
  auto* bench_cmd = app.add_subcommand("bench", "Time one depthwise layer per variant");
  bench_cmd->add_option("--variants", ba.variants, "Comma-separated variants");
  bench_cmd->add_option("--resolutions", ba.resolutions, "Comma-separated R values");
  bench_cmd->add_option("--m", ba.m, "Long kernel edge M");
  bench_cmd->add_option("--n", ba.n, "Short kernel edge N");
  bench_cmd->add_option("--channels", ba.channels, "Channels C");
  bench_cmd->add_option("--batch", ba.batch, "Batch size");
  bench_cmd->add_option("--sparsity", ba.sparsity, "Weight sparsity of sparse variants");
  bench_cmd->add_option("--reps", ba.reps, "Timed repetitions (>= 3)");
  bench_cmd->add_option("--warmup", ba.warmup, "Untimed warmup runs (>= 1)");
  bench_cmd->add_option("--seed", ba.seed, "Seed (-1: SLAK_SEED or 0)");
  bench_cmd->add_flag("--json", ba.json, "Write bench.json instead of bench.csv");
  bench_cmd->add_option("--out", ba.out, "Output directory");

  ErfArgs ea;
  auto* erf_cmd = app.add_subcommand("erf", "Effective receptive field of a model");
  erf_cmd->add_option("--config", ea.config, "JSON run config (model keys are used)");
  erf_cmd->add_option("--set", ea.sets, "Override a key: key=value (repeatable)")
      ->default_str("");
  erf_cmd->add_option("--checkpoint", ea.checkpoint, "Load weights from a checkpoint");
  erf_cmd->add_option("--kernel", ea.kernel, "Stage-1 kernel size (0: from config)");
  erf_cmd->add_option("--images", ea.images, "Number of random input images");
  erf_cmd->add_option("--seed", ea.seed, "Seed (-1: SLAK_SEED or 0)");
  erf_cmd->add_flag("--linear", ea.linear, "Replace GELU by the identity");
  erf_cmd->add_flag("--per-image", ea.per_image, "Normalize each image before summing");
  erf_cmd->add_flag("--svg", ea.svg, "Also write an SVG heatmap");
  erf_cmd->add_option("--out", ea.out, "Output directory");

  FlopsArgs fa;
  auto* flops_cmd = app.add_subcommand("flops", "MAC and parameter sweep over kernel sizes");
  flops_cmd->add_option("--preset", fa.preset, "Base model: convnext_t, slak_t or micro");
  flops_cmd->add_option("--kernels", fa.kernels, "Comma-separated kernel sizes in [3, 151]");
  flops_cmd->add_option("--variant", fa.variant, "full, decomposed or both");
  flops_cmd->add_option("--input", fa.input, "Input resolution");
  flops_cmd->add_option("--out", fa.out, "Output directory");

  PlanArgs pa;
  auto* plan_cmd = app.add_subcommand("plan", "Width factor that matches dense parameters");
  plan_cmd->add_option("--sparsity", pa.sparsity, "Target sparsity in [0, 1)");
  plan_cmd->add_option("--preset", pa.preset, "Base model: slak_t, convnext_t or micro");
  plan_cmd->add_option("--scope", pa.scope, "Sparsified tensors: blocks, dw or all");
  plan_cmd->add_option("--out", pa.out, "Write plan.json here (optional)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  try {
    if (*train_cmd) return cmd_train(ta);
    if (*bench_cmd) return cmd_bench(ba);
    if (*erf_cmd) return cmd_erf(ea);
    if (*flops_cmd) return cmd_flops(fa);
    if (*plan_cmd) return cmd_plan(pa);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e);
  }
  return kConfigError;
}
