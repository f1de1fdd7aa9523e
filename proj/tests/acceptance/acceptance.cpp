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

// Acceptance suite: one PASS/FAIL line per criterion. Arguments select a
// subset by number; no arguments runs all nine. Exit status is 1 if any
// selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "slak/bench.hpp"
#include "slak/conv.hpp"
#include "slak/erf.hpp"
#include "slak/error.hpp"
#include "slak/finite_diff.hpp"
#include "slak/model.hpp"
#include "slak/norm.hpp"
#include "slak/sparsity.hpp"
#include "slak/trainer.hpp"

using namespace slak;

namespace {

// Pinned tolerances.
constexpr double kCountTolerance = 0.05;
constexpr double kWideCountTolerance = 0.08;
constexpr double kFitResidual = 0.05;
constexpr double kMinSpeedup = 2.5;
constexpr double kParityLow = 1.0 / 1.25;
constexpr double kParityHigh = 1.25;
constexpr int kBenchReps = 21;
constexpr double kFdTolerance = 1e-4;
constexpr double kPathTolerance = 1e-6;
constexpr int kPropertyShapes = 200;
constexpr int kAdaptationCycles = 100;
constexpr double kTargetAccuracy = 0.9;
constexpr int kAccuracyWindow = 25;
constexpr long kTrainSteps = 2000;
constexpr long kReplaySteps = 60;
constexpr double kPlanGap = 0.05;
constexpr double kErfThreshold = 0.2;
constexpr int kErfGrid = 224;
constexpr double kErfLayerScale = 100.0;

// Runtime budgets in seconds.
constexpr double kBenchBudget = 120.0;
constexpr double kErfBudget = 60.0;
constexpr double kTrainBudget = 900.0;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    if (!detail.empty()) detail += "; ";
    detail += (ok ? "" : "FAILED ") + what;
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

bool within(double value, double target, double tol) {
  return std::abs(value / target - 1.0) <= tol;
}

// ---------------------------------------------------------------- 1

Outcome counting() {
  Outcome o;
  const double ct_p = count_params(ModelConfig::convnext_t()).total;
  const double ct_f = count_flops(ModelConfig::convnext_t(), 224).total;
  o.require(within(ct_p, 29e6, kCountTolerance), "7x7 params " + fmt("%.2fM", ct_p / 1e6));
  o.require(within(ct_f, 4.5e9, kCountTolerance), "7x7 MACs " + fmt("%.2fG", ct_f / 1e9));
  const double sl_p = count_params(ModelConfig::slak_t()).total;
  const double sl_f = count_flops(ModelConfig::slak_t(), 224).total;
  o.require(within(sl_p, 31e6, kCountTolerance), "decomposed params " + fmt("%.2fM", sl_p / 1e6));
  o.require(within(sl_f, 5.4e9, kCountTolerance), "decomposed MACs " + fmt("%.2fG", sl_f / 1e9));
  ModelConfig wide = ModelConfig::slak_t();
  for (int& d : wide.stage_dims) d = widen(d, 1.3);
  const SparsityPlan plan = make_plan(wide, 0.4);
  const double sp_p = count_params(wide, &plan).total;
  const double sp_f = count_flops(wide, 224, &plan).total;
  o.require(within(sp_p, 30e6, kWideCountTolerance), "sparse 1.3x params " + fmt("%.2fM", sp_p / 1e6));
  o.require(within(sp_f, 5.0e9, kWideCountTolerance), "sparse 1.3x MACs " + fmt("%.2fG", sp_f / 1e9));
  return o;
}

// ---------------------------------------------------------------- 2

// Least squares y = a * basis(k) + b; returns the largest relative residual.
double fit_residual(const std::vector<double>& ks, const std::vector<double>& ys,
                    const std::function<double(double)>& basis) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = double(ks.size());
  for (std::size_t i = 0; i < ks.size(); ++i) {
    const double x = basis(ks[i]);
    sx += x;
    sy += ys[i];
    sxx += x * x;
    sxy += x * ys[i];
  }
  const double a = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  const double b = (sy - a * sx) / n;
  double worst = 0.0;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    worst = std::max(worst, std::abs(ys[i] - (a * basis(ks[i]) + b)) / ys[i]);
  }
  return worst;
}

Outcome scaling_law() {
  Outcome o;
  const std::vector<int> kernels{7, 31, 51, 101, 151};
  const auto rs = flops_sweep(ModelConfig::convnext_t(), kernels, 224);
  std::vector<double> ks, full, dec;
  for (int k : kernels) ks.push_back(k);
  for (int k : kernels) {
    for (const auto& r : rs) {
      if (r.kernel != k) continue;
      (r.variant == "full" ? full : dec).push_back(r.dw_macs);
    }
  }
  const auto square = [](double k) { return k * k; };
  const auto line = [](double k) { return k; };
  const double rf = fit_residual(ks, full, square);
  const double rd = fit_residual(ks, dec, line);
  o.require(rf < kFitResidual, "full vs quadratic residual " + fmt("%.2e", rf));
  o.require(rd < kFitResidual, "decomposed vs linear residual " + fmt("%.2e", rd));
  o.detail += "; full vs linear residual " + fmt("%.2f", fit_residual(ks, full, line));
  return o;
}

// ---------------------------------------------------------------- 3

Outcome latency() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  // Repetitions are interleaved across variants so that drift on a shared
  // CPU affects all three alike.
  std::vector<BenchSpec> specs;
  for (auto v : {BenchVariant::kDense, BenchVariant::kSparseMasked, BenchVariant::kSparseDecomposed}) {
    BenchSpec s;
    s.variant = v;
    s.resolution = 64;
    s.m = 51;
    s.n = 5;
    s.reps = kBenchReps;
    s.seed = 3;
    specs.push_back(s);
  }
  const auto records = bench_interleaved(specs);
  const double dense = records[0].median_s;
  const double masked = records[1].median_s;
  const double decomposed = records[2].median_s;
  const double speedup = dense / decomposed;
  const double parity = masked / dense;
  o.require(speedup >= kMinSpeedup, "decomposed speedup " + fmt("%.2fx", speedup) +
                                        " (dense " + fmt("%.1f ms", dense * 1e3) + ", 51x5+5x51 " +
                                        fmt("%.1f ms", decomposed * 1e3) + ")");
  o.require(parity >= kParityLow && parity <= kParityHigh,
            "masked/dense " + fmt("%.3f", parity));
  const double elapsed = seconds_since(t0);
  o.require(elapsed < kBenchBudget, "runtime " + fmt("%.0f s", elapsed));
  return o;
}

// ---------------------------------------------------------------- 4

std::vector<Mask> topk_oracle(const std::vector<Tensor64>& scores, double s) {
  std::vector<std::tuple<double, std::size_t, std::size_t>> all;
  for (std::size_t l = 0; l < scores.size(); ++l)
    for (std::size_t i = 0; i < scores[l].numel(); ++i) all.emplace_back(-scores[l][i], l, i);
  std::sort(all.begin(), all.end());
  const auto keep = static_cast<std::size_t>(std::llround((1.0 - s) * double(all.size())));
  std::vector<Mask> masks;
  for (const auto& t : scores) masks.emplace_back(t.shape(), false);
  for (std::size_t r = 0; r < keep; ++r) masks[std::get<1>(all[r])].set(std::get<2>(all[r]), true);
  return masks;
}

Outcome adaptation_invariants() {
  Outcome o;
  RngStream rng(4);
  // SNIP against the sort oracle, with ties.
  int oracle_ok = 0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Tensor64> w, g, scores;
    for (Shape s : {Shape{16, 1, 31, 5}, Shape{16, 1, 5, 31}, Shape{16, 1, 5, 5}, Shape{64, 16, 1, 1}}) {
      w.push_back(Tensor64::uniform(s, -1, 1, rng));
      g.push_back(Tensor64::uniform(s, -1, 1, rng));
      if (trial % 2 == 0) {
        for (auto& v : g.back().values()) v = std::round(v * 4) / 4;
        for (auto& v : w.back().values()) v = std::round(v * 4) / 4;
      }
      scores.push_back(snip_scores(w.back(), g.back()));
    }
    const double s = 0.1 + 0.8 * rng.uniform();
    const auto got = build_masks_global_topk(scores, s);
    const auto want = topk_oracle(scores, s);
    oracle_ok += got == want ? 1 : 0;
  }
  o.require(oracle_ok == 20, std::to_string(oracle_ok) + "/20 SNIP instances equal the oracle");

  // Randomized adaptation cycles over several layers.
  std::vector<Tensor64> weights;
  std::vector<Tensor64> scores;
  for (Shape s : {Shape{32, 1, 31, 5}, Shape{32, 1, 5, 31}, Shape{32, 1, 5, 5}}) {
    weights.push_back(Tensor64::uniform(s, -1, 1, rng));
    scores.push_back(snip_scores(weights.back(), Tensor64::uniform(s, -1, 1, rng)));
  }
  auto masks = build_masks_global_topk(scores, 0.4);
  std::size_t total = 0, numel = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    apply_mask(weights[l], masks[l]);
    total += masks[l].nnz();
    numel += masks[l].numel();
  }
  const double initial_sparsity = 1.0 - double(total) / double(numel);
  bool nnz_ok = true, sparsity_ok = true, disjoint_ok = true, zero_ok = true;
  for (int cycle = 0; cycle < kAdaptationCycles; ++cycle) {
    const double rate = cosine_adaptation_rate(0.3, cycle, kAdaptationCycles);
    std::size_t now = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      const std::size_t before = masks[l].nnz();
      auto r = adaptation_step(weights[l], masks[l], rate, rng);
      nnz_ok &= r.mask.nnz() == before;
      const std::set<std::size_t> pruned(r.pruned.begin(), r.pruned.end());
      for (std::size_t i : r.grown) {
        disjoint_ok &= pruned.count(i) == 0;
        zero_ok &= weights[l][i] == 0.0;
      }
      masks[l] = r.mask;
      for (auto& v : weights[l].values()) v += 0.01 * (rng.uniform() - 0.5);
      apply_mask(weights[l], masks[l]);
      now += masks[l].nnz();
    }
    sparsity_ok &= 1.0 - double(now) / double(numel) == initial_sparsity;
  }
  o.require(nnz_ok, "nnz conserved over " + std::to_string(kAdaptationCycles) + " cycles");
  o.require(sparsity_ok, "global sparsity constant at " + fmt("%.6f", initial_sparsity));
  o.require(disjoint_ok && zero_ok, "grown positions disjoint from pruned and zero-initialized");
  const bool ends = cosine_adaptation_rate(0.3, 0, 1000) == 0.3 &&
                    cosine_adaptation_rate(0.3, 1000, 1000) == 0.0 &&
                    cosine_adaptation_rate(0.3, 500, 1000) == 0.15;
  o.require(ends, "cosine endpoints p0, p0/2, 0");
  return o;
}

// ---------------------------------------------------------------- 5

double weighted(const Tensor64& y, const Tensor64& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.numel(); ++i) s += y[i] * r[i];
  return s;
}

double fd_error(const std::function<Tensor64(const Tensor64&)>& f, const Tensor64& x,
                const Tensor64& r, const Tensor64& analytic) {
  const Tensor64 numeric =
      finite_diff_grad([&](const Tensor64& v) { return weighted(f(v), r); }, x, 1e-6);
  return max_rel_error(analytic, numeric);
}

Outcome numerics() {
  Outcome o;
  RngStream rng(5);
  const Tensor64* none = nullptr;
  double worst = 0.0;
  std::string worst_name;
  auto note = [&](const std::string& name, double e) {
    if (e > worst) {
      worst = e;
      worst_name = name;
    }
  };

  // Convolutions.
  std::vector<ConvSpec> specs{ConvSpec::depthwise(4, 7, 7), ConvSpec::depthwise(3, 9, 3),
                              ConvSpec::depthwise(2, 3, 3, 3), ConvSpec::full(3, 4, 4, 4, 4),
                              ConvSpec::full(4, 6, 1, 1, 1)};
  for (const auto& s : specs) {
    const Tensor64 x = Tensor64::uniform({2, s.in_channels, 9, 9}, -1, 1, rng);
    const Tensor64 w = Tensor64::uniform(s.weight_shape(), -1, 1, rng);
    const Tensor64 r = Tensor64::uniform(conv2d_forward(x, w, none, s).shape(), -1, 1, rng);
    const auto g = conv2d_backward(x, w, s, r, false);
    note("conv dx", fd_error([&](const Tensor64& v) { return conv2d_forward(v, w, none, s); }, x, r, g.dx));
    note("conv dw", fd_error([&](const Tensor64& v) { return conv2d_forward(x, v, none, s); }, w, r, g.dw));
  }
  // Norms and activation.
  {
    const Tensor64 x = Tensor64::uniform({3, 4, 3, 3}, -1, 1, rng);
    const Tensor64 r = Tensor64::uniform(x.shape(), -1, 1, rng);
    const Tensor64 gamma = Tensor64::uniform({4}, 0.5, 1.5, rng), beta = Tensor64::uniform({4}, -1, 1, rng);
    LayerNormCache<double> lc;
    layernorm_forward(x, gamma, beta, 1e-6, &lc);
    const auto lg = layernorm_backward(lc, gamma, r);
    note("layer norm", fd_error([&](const Tensor64& v) { return layernorm_forward(v, gamma, beta, 1e-6); }, x, r, lg.dx));
    auto bn = BatchNormState<double>::identity(4);
    bn.gamma = gamma;
    bn.beta = beta;
    BatchNormCache<double> bc;
    auto tmp = bn;
    batchnorm_forward(x, tmp.view(), Mode::kTrain, &bc);
    const auto bg = batchnorm_backward(bc, gamma, r);
    note("batch norm", fd_error([&](const Tensor64& v) {
           auto c = bn;
           return batchnorm_forward(v, c.view(), Mode::kTrain);
         }, x, r, bg.dx));
    note("gelu", fd_error([](const Tensor64& v) { return gelu_forward(v); }, x, r, gelu_backward(x, r)));
  }
  // Blocks of every depthwise variant inside a one-block model.
  for (const DwVariant v : {DwVariant::full(), DwVariant::parallel(), DwVariant::sequential(),
                            DwVariant::dilated(2), DwVariant::stacked(3)}) {
    ModelConfig c;
    c.stage_blocks = {1};
    c.stage_dims = {8};
    c.stage_kernels = {7};
    c.dw_variant = v;
    c.num_classes = 3;
    c.input_size = 16;
    c.layer_scale_init = 1.0;
    RngStream mr(6);
    const auto base = Model<double>::build(c, mr);
    const Tensor64 x = Tensor64::uniform({2, 3, 16, 16}, -1, 1, rng);
    const Tensor64 r = Tensor64::uniform({2, 3}, -1, 1, rng);
    auto m = base;
    ForwardCache<double> cache;
    m.forward(x, {Mode::kTrain}, &cache);
    const auto g = m.backward(cache, r);
    for (std::size_t i = 0; i < base.params().size(); ++i) {
      if (base.params()[i].role == ParamRole::kBuffer) continue;
      note("block " + v.str() + " " + base.params()[i].id,
           fd_error([&](const Tensor64& value) {
             auto p = base;
             p.mutable_params()[i].value = value;
             return p.forward(x, {Mode::kTrain});
           }, base.params()[i].value, r, g.params[i]));
    }
  }
  // Full micro model on sampled coordinates.
  {
    ModelConfig c = ModelConfig::slak_micro();
    c.layer_scale_init = 1.0;
    RngStream mr(7);
    auto m = Model<double>::build(c, mr);
    const Tensor64 x = Tensor64::uniform({2, 3, 64, 64}, -1, 1, rng);
    const Tensor64 r = Tensor64::uniform({2, 2}, -1, 1, rng);
    ForwardCache<double> cache;
    m.forward(x, {Mode::kTrain}, &cache);
    const auto g = m.backward(cache, r);
    Tensor64 a({int(m.params().size())}), n({int(m.params().size())});
    for (std::size_t i = 0; i < m.params().size(); ++i) {
      if (m.params()[i].role == ParamRole::kBuffer) continue;
      const std::size_t j = rng.below(m.params()[i].value.numel());
      auto& value = m.mutable_params()[i].value;
      const double orig = value[j];
      value[j] = orig + 1e-6;
      const double plus = weighted(m.forward(x, {Mode::kTrain}), r);
      value[j] = orig - 1e-6;
      const double minus = weighted(m.forward(x, {Mode::kTrain}), r);
      value[j] = orig;
      a[i] = g.params[i][j];
      n[i] = (plus - minus) / 2e-6;
    }
    note("micro model", max_rel_error(a, n));
  }
  o.require(worst < kFdTolerance, "worst finite-difference error " + fmt("%.2e", worst) + " (" + worst_name + ")");

  // Optimized paths against the naive reference.
  double path_worst = 0.0;
  for (int trial = 0; trial < kPropertyShapes; ++trial) {
    const int ch = 1 + int(rng.below(6));
    const bool dw = trial % 2 == 0;
    ConvSpec s = dw ? ConvSpec::depthwise(ch, 1 + int(rng.below(15)), 1 + int(rng.below(15)),
                                          1 + int(rng.below(2)))
                    : ConvSpec::full(ch, 1 + int(rng.below(6)), 1 + int(rng.below(4)),
                                     1 + int(rng.below(4)), 1 + int(rng.below(3)));
    const int eh = s.dilation * (s.kernel_h - 1) + 1, ew = s.dilation * (s.kernel_w - 1) + 1;
    const Tensor x = Tensor::uniform({1 + int(rng.below(3)), ch, eh + int(rng.below(12)),
                                      ew + int(rng.below(20))}, -1, 1, rng);
    Tensor w = Tensor::uniform(s.weight_shape(), -1, 1, rng);
    for (auto& v : w.values()) {
      if (rng.uniform() < 0.4) v = 0.0f;
    }
    const Tensor* nb = nullptr;
    const Tensor ref = conv2d_reference(x, w, nb, s);
    for (bool skip : {false, true}) {
      path_worst = std::max(path_worst, max_rel_error(conv2d_forward(x, w, nb, s, ConvOptions{skip}), ref));
    }
  }
  o.require(path_worst < kPathTolerance, std::to_string(kPropertyShapes) + " shapes, worst path error " +
                                             fmt("%.2e", path_worst));
  return o;
}

// ---------------------------------------------------------------- 6

Outcome decomposition() {
  Outcome o;
  RngStream rng(8);
  const int c = 4, m = 51, n = 5;
  const Tensor64 x = Tensor64::uniform({2, c, 40, 40}, -1, 1, rng);
  const Tensor64 a = Tensor64::uniform({c, 1, m, n}, -1, 1, rng);
  const Tensor64 b = Tensor64::uniform({c, 1, n, m}, -1, 1, rng);
  const Tensor64 s = Tensor64::uniform({c, 1, 5, 5}, -1, 1, rng);
  auto bn = BatchNormState<double>::identity(c);
  bn.eps = 0.0;
  const Tensor64 y = decomposed_dw_forward(x, a, b, s, bn.view(), bn.view(), bn.view(), Mode::kEval);
  Tensor64 dense = embed_kernel(a, m);
  const Tensor64 eb = embed_kernel(b, m), es = embed_kernel(s, m);
  for (std::size_t i = 0; i < dense.numel(); ++i) dense[i] += eb[i] + es[i];
  const Tensor64* nb = nullptr;
  const double err = max_rel_error(y, conv2d_reference(x, dense, nb, ConvSpec::depthwise(c, m, m)));
  o.require(err < kPathTolerance, "embedding error " + fmt("%.2e", err));

  // Cross support of one decomposed layer, via unit responses.
  const int mm = 15, g = 21;
  auto bn1 = BatchNormState<double>::identity(1);
  bn1.eps = 0.0;
  const Tensor64 a1 = Tensor64::uniform({1, 1, mm, n}, 0.1, 1.0, rng);
  const Tensor64 b1 = Tensor64::uniform({1, 1, n, mm}, 0.1, 1.0, rng);
  const Tensor64 s1 = Tensor64::uniform({1, 1, 5, 5}, 0.1, 1.0, rng);
  const GradientProbe<double> probe = [&](const Tensor64& img) {
    Tensor64 grad(img.shape());
    for (std::size_t i = 0; i < img.numel(); ++i) {
      Tensor64 e(img.shape());
      e[i] = 1.0;
      grad[i] = decomposed_dw_forward(e, a1, b1, s1, bn1.view(), bn1.view(), bn1.view(), Mode::kEval)
                    .at(0, 0, g / 2, g / 2);
    }
    return grad;
  };
  const auto map = contribution_map(probe, {Tensor64({1, 1, g, g})});
  bool cross = true;
  for (int i = 0; i < g; ++i) {
    for (int j = 0; j < g; ++j) {
      const int di = std::abs(i - g / 2), dj = std::abs(j - g / 2);
      const bool in = (di <= mm / 2 && dj <= n / 2) || (di <= n / 2 && dj <= mm / 2);
      cross &= (map.at(i, j) > 0.0) == in;
    }
  }
  o.require(cross, "decomposed map support equals the 15x5 and 5x15 cross");

  // Linear stacks: analytic backward through stacked convs.
  bool stacks = true;
  for (const auto& stack : std::vector<std::vector<StackLayer>>{
           {{3, 3}, {3, 3}}, {{7, 3}, {3, 7}}, {{5, 5, 2}, {3, 3}, {3, 3}}, {{11, 3}, {3, 11}, {3, 3, 3}}}) {
    std::vector<std::pair<ConvSpec, Tensor64>> layers;
    for (const auto& l : stack) {
      const ConvSpec sp = ConvSpec::depthwise(2, l.kh, l.kw, l.dilation);
      layers.emplace_back(sp, Tensor64::uniform(sp.weight_shape(), 0.1, 1.0, rng));
    }
    const GradientProbe<double> p = [&](const Tensor64& img) {
      std::vector<Tensor64> ins{img};
      const Tensor64* nb64 = nullptr;
      for (const auto& [sp, w] : layers) ins.push_back(conv2d_forward(ins.back(), w, nb64, sp));
      Tensor64 dy(ins.back().shape());
      for (int ch = 0; ch < 2; ++ch) dy.at(0, ch, dy.dim(2) / 2, dy.dim(3) / 2) = 1.0;
      for (std::size_t l = layers.size(); l-- > 0;) {
        dy = conv2d_backward(ins[l], layers[l].second, layers[l].first, dy, false).dx;
      }
      return dy;
    };
    const auto smap = contribution_map(p, {Tensor64::uniform({1, 2, 31, 31}, -1, 1, rng)});
    stacks &= support_extent(smap) == linear_stack_support(stack);
  }
  o.require(stacks, "linear stack supports equal 1 + sum (k - 1) d");
  return o;
}

// ---------------------------------------------------------------- 7

Outcome erf_ordering() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  double prev = 0.0;
  bool monotone = true;
  std::string trace;
  for (int m : {7, 31, 51}) {
    ModelConfig c = ModelConfig::slak_micro();
    c.input_size = kErfGrid;
    c.layer_scale_init = kErfLayerScale;
    c.stage_kernels.front() = m;
    Model<float> model = init_model(c, 0);
    RngStream rng = RngStream(0).split(5);
    const std::vector<Tensor> images{Tensor::uniform({1, 3, kErfGrid, kErfGrid}, -1, 1, rng)};
    const auto map = contribution_map(model, images, true);
    const double r = area_ratio(map, kErfThreshold);
    trace += (trace.empty() ? "" : ", ") + std::string("M=") + std::to_string(m) + " r=" + fmt("%.4f", r);
    monotone &= r >= prev;
    prev = r;
  }
  o.require(monotone, "r(0.2) non-decreasing in M: " + trace);
  const double elapsed = seconds_since(t0);
  o.require(elapsed < kErfBudget, "runtime " + fmt("%.0f s", elapsed));
  return o;
}

// ---------------------------------------------------------------- 8

std::string read_all(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string first_lines(const std::string& text, std::size_t n) {
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n && pos != std::string::npos; ++i) {
    pos = text.find('\n', pos);
    if (pos != std::string::npos) ++pos;
  }
  return text.substr(0, pos);
}

TrainConfig smoke_config() {
  TrainConfig t;
  t.total_steps = kTrainSteps;
  t.batch = 64;
  t.seed = 7;
  t.sparsity = 0.4;
  t.peak_lr = 2e-3;
  t.adaptation.frequency = 100;
  t.adaptation.initial_rate = 0.3;
  return t;
}

ModelConfig smoke_model() {
  ModelConfig c = ModelConfig::slak_micro();
  c.layer_scale_init = 1.0;
  return c;
}

Outcome training() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const TrainConfig t = smoke_config();
  Model<float> model = init_model(smoke_model(), t.seed);
  std::vector<std::string> ids;
  auto masks = snip_masks(model, t, &ids);
  double worst_masked = 0.0;
  const auto log_masks = [&](const StepMetrics&, const Model<float>& m, const std::vector<Mask>& ms) {
    worst_masked = std::max(worst_masked, masked_magnitude(m, ids, ms));
  };
  const TrainResult r =
      train(model, masks, ids, t, log_masks, accuracy_stop(kTargetAccuracy, kAccuracyWindow));
  double window = 0.0;
  const std::size_t n = std::min<std::size_t>(r.log.size(), kAccuracyWindow);
  for (std::size_t i = r.log.size() - n; i < r.log.size(); ++i) window += r.log[i].acc / double(n);
  o.require(r.stopped_early && window >= kTargetAccuracy,
            "trailing " + std::to_string(kAccuracyWindow) + "-step accuracy " + fmt("%.3f", window) +
                " at step " + std::to_string(r.log.empty() ? 0 : r.log.back().step) + " of " +
                std::to_string(kTrainSteps));
  o.require(worst_masked == 0.0, "masked weight magnitude " + fmt("%g", worst_masked) + " at every step");

  const auto dir = std::filesystem::temp_directory_path() / "slak_acceptance";
  std::filesystem::create_directories(dir);
  write_metrics_csv((dir / "full.csv").string(), r.log);
  Model<float> again = init_model(smoke_model(), t.seed);
  std::vector<std::string> ids2;
  auto masks2 = snip_masks(again, t, &ids2);
  const auto replay = train(again, masks2, ids2, t, {}, [](const TrainResult& res) {
    return res.log.size() >= std::size_t(kReplaySteps);
  });
  write_metrics_csv((dir / "replay.csv").string(), replay.log);
  const std::string full = read_all(dir / "full.csv"), rerun = read_all(dir / "replay.csv");
  o.require(first_lines(full, kReplaySteps + 1) == rerun,
            "replay of the first " + std::to_string(kReplaySteps) + " steps is byte-identical");
  std::filesystem::remove_all(dir);
  const double elapsed = seconds_since(t0);
  o.require(elapsed < kTrainBudget, "runtime " + fmt("%.0f s", elapsed));
  return o;
}

// ---------------------------------------------------------------- 9

Outcome planner() {
  Outcome o;
  const WidthPlan p4 = plan_width(ModelConfig::slak_t(), 0.4);
  const WidthPlan p55 = plan_width(ModelConfig::slak_t(), 0.55);
  o.require(std::abs(p4.factor - 1.3) < 1e-9, "s=0.4 factor " + fmt("%.1f", p4.factor));
  o.require(std::abs(p55.factor - 1.5) < 1e-9, "s=0.55 factor " + fmt("%.1f", p55.factor));
  o.require(std::abs(p4.relative_gap()) < kPlanGap, "s=0.4 parameter gap " + fmt("%+.2f%%", 100 * p4.relative_gap()));
  return o;
}

struct Criterion {
  int id;
  const char* name;
  Outcome (*run)();
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "FLOP and parameter counts", counting},
      {2, "depthwise scaling laws", scaling_law},
      {3, "latency trend", latency},
      {4, "dynamic sparsity invariants", adaptation_invariants},
      {5, "numerical correctness", numerics},
      {6, "decomposition structure", decomposition},
      {7, "ERF ordering", erf_ordering},
      {8, "training smoke run", training},
      {9, "width planner", planner},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failures = 0;
  for (const auto& c : all) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("error: ") + e.what();
    }
    std::printf("criterion %d %s: %s (%.1f s) | %s\n", c.id, c.name, o.pass ? "PASS" : "FAIL",
                seconds_since(t0), o.detail.c_str());
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
