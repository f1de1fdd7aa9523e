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


#include "slak/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>

#include "slak/conv.hpp"
#include "slak/error.hpp"
#include "slak/sparsity.hpp"

namespace slak {
namespace {

struct Layer {
  ConvSpec spec;
  Tensor w;
};

// Uniformly random exact-nnz mask applied in place.
void sparsify(Tensor& w, double sparsity, RngStream& rng) {
  const std::size_t n = w.numel();
  const auto keep = static_cast<std::size_t>(std::llround((1.0 - sparsity) * double(n)));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = 0; i < n; ++i) {
    std::swap(order[i], order[i + rng.below(n - i)]);
  }
  for (std::size_t i = keep; i < n; ++i) w[order[i]] = 0.0f;
}

std::vector<Layer> make_layers(const BenchSpec& s, int channels, RngStream& rng) {
  std::vector<Layer> layers;
  auto add = [&](int kh, int kw, bool sparse) {
    ConvSpec spec = ConvSpec::depthwise(channels, kh, kw);
    Tensor w = Tensor::trunc_normal(spec.weight_shape(), 0.02, rng);
    if (sparse) sparsify(w, s.sparsity, rng);
    layers.push_back({spec, std::move(w)});
  };
  switch (s.variant) {
    case BenchVariant::kDense:
      add(s.m, s.m, false);
      break;
    case BenchVariant::kSparseMasked:
      add(s.m, s.m, true);
      break;
    case BenchVariant::kSparseDecomposed:
    case BenchVariant::kSparseDecomposedMasked:
      add(s.m, s.n, true);
      add(s.n, s.m, true);
      break;
  }
  return layers;
}

bool skips_zeros(BenchVariant v) { return v == BenchVariant::kSparseDecomposed; }

Tensor run(const std::vector<Layer>& layers, const Tensor& x, bool skip,
           bool reference) {
  Tensor out;
  for (const Layer& l : layers) {
    Tensor y = reference
                   ? conv2d_reference(x, l.w, static_cast<const Tensor*>(nullptr), l.spec)
                   : conv2d_forward(x, l.w, static_cast<const Tensor*>(nullptr), l.spec,
                                    ConvOptions{skip});
    if (out.numel() == 0) {
      out = std::move(y);
    } else {
      for (std::size_t i = 0; i < out.numel(); ++i) out[i] += y[i];
    }
  }
  return out;
}

void equivalence_gate(const BenchSpec& s) {
  RngStream rng = RngStream(s.seed).split(0x9a7e);
  const int c = std::min(2, s.channels);
  const auto layers = make_layers(s, c, rng);
  const Tensor x = Tensor::uniform({1, c, s.resolution, s.resolution}, -1.0, 1.0, rng);
  const Tensor fast = run(layers, x, skips_zeros(s.variant), false);
  const Tensor ref = run(layers, x, false, true);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < ref.numel(); ++i) {
    num = std::max(num, std::abs(double(fast[i]) - double(ref[i])));
    den = std::max(den, std::abs(double(ref[i])));
  }
  const double rel = den > 0.0 ? num / den : num;
  if (!(rel < 1e-5)) {
    throw Error(ErrorKind::kNumeric,
                "bench: " + to_string(s.variant) +
                    " disagrees with the reference conv (max rel err " +
                    std::to_string(rel) + ")");
  }
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

std::string to_string(BenchVariant v) {
  switch (v) {
    case BenchVariant::kDense: return "dense";
    case BenchVariant::kSparseMasked: return "sparse_masked";
    case BenchVariant::kSparseDecomposed: return "sparse_decomposed";
    case BenchVariant::kSparseDecomposedMasked: return "sparse_decomposed_masked";
  }
  return "?";
}

BenchVariant parse_bench_variant(const std::string& text) {
  for (auto v : {BenchVariant::kDense, BenchVariant::kSparseMasked,
                 BenchVariant::kSparseDecomposed,
                 BenchVariant::kSparseDecomposedMasked}) {
    if (text == to_string(v)) return v;
  }
  throw Error(ErrorKind::kInvalidConfig,
              "variant: unknown '" + text +
                  "' (expected dense, sparse_masked, sparse_decomposed or "
                  "sparse_decomposed_masked)");
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) {
    throw Error(ErrorKind::kInvalidCount, "quantile of an empty sample");
  }
  std::sort(values.begin(), values.end());
  const double pos = q * double(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - double(lo)) * (values[hi] - values[lo]);
}

namespace {

void validate(const BenchSpec& s) {
  if (s.reps < 3) {
    throw Error(ErrorKind::kInvalidConfig,
                "reps: must be >= 3, got " + std::to_string(s.reps));
  }
  if (s.warmup < 1) {
    throw Error(ErrorKind::kInvalidConfig,
                "warmup: must be >= 1, got " + std::to_string(s.warmup));
  }
  if (s.batch < 1 || s.channels < 1 || s.resolution < 1 || s.m < 1 || s.n < 1) {
    throw Error(ErrorKind::kInvalidConfig,
                "batch, channels, resolution, M and N must be >= 1");
  }
  if (!(s.sparsity >= 0.0 && s.sparsity < 1.0)) {
    throw Error(ErrorKind::kInvalidConfig, "sparsity: must be in [0, 1)");
  }
}

struct Prepared {
  std::vector<Layer> layers;
  Tensor x;
  bool skip;
};

}  // namespace

std::vector<BenchRecord> bench_interleaved(const std::vector<BenchSpec>& specs) {
  if (specs.empty()) {
    throw Error(ErrorKind::kInvalidCount, "bench: no variants requested");
  }
  for (const auto& s : specs) {
    validate(s);
    if (s.reps != specs.front().reps) {
      throw Error(ErrorKind::kInvalidConfig, "reps: interleaved specs must agree");
    }
  }
  std::vector<Prepared> prepared;
  for (const auto& s : specs) {
    equivalence_gate(s);
    RngStream rng(s.seed);
    auto layers = make_layers(s, s.channels, rng);
    Tensor x = Tensor::uniform({s.batch, s.channels, s.resolution, s.resolution},
                               -1.0, 1.0, rng);
    prepared.push_back({std::move(layers), std::move(x), skips_zeros(s.variant)});
  }
  for (std::size_t v = 0; v < specs.size(); ++v) {
    for (int i = 0; i < specs[v].warmup; ++i) {
      run(prepared[v].layers, prepared[v].x, prepared[v].skip, false);
    }
  }

  std::vector<BenchRecord> records;
  for (const auto& s : specs) {
    records.push_back({s.variant, s.batch, s.channels, s.resolution, s.m, s.n,
                       s.sparsity, s.reps, s.warmup, 1, 0, 0, 0, {}});
  }
  using clock = std::chrono::steady_clock;
  for (int i = 0; i < specs.front().reps; ++i) {
    for (std::size_t v = 0; v < specs.size(); ++v) {
      const auto t0 = clock::now();
      const Tensor y = run(prepared[v].layers, prepared[v].x, prepared[v].skip, false);
      const auto t1 = clock::now();
      records[v].samples_s.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
  }
  for (auto& r : records) {
    r.median_s = quantile(r.samples_s, 0.5);
    r.p10_s = quantile(r.samples_s, 0.1);
    r.p90_s = quantile(r.samples_s, 0.9);
  }
  return records;
}

BenchRecord bench_variant(const BenchSpec& s) { return bench_interleaved({s}).front(); }

std::vector<FlopRecord> flops_sweep(const ModelConfig& base,
                                    const std::vector<int>& kernels,
                                    int input_size) {
  std::vector<FlopRecord> out;
  for (int k : kernels) {
    if (k < 3 || k > 151) {
      throw Error(ErrorKind::kInvalidConfig,
                  "kernels: sizes must lie in [3, 151], got " + std::to_string(k));
    }
    for (auto variant : {DwVariant::full(), DwVariant::parallel()}) {
      ModelConfig c = base;
      c.dw_variant = variant;
      std::fill(c.stage_kernels.begin(), c.stage_kernels.end(), k);
      if (c.short_edge > k) c.short_edge = k % 2 == 1 ? k : k - 1;
      c.validate();
      const auto info = describe(c);
      std::map<std::string, ParamRole> role;
      for (const auto& t : info) role[t.id] = t.role;
      const CountReport flops = count_flops(c, input_size);
      const CountReport params = count_params(c);
      FlopRecord r{k, variant.kind == DwVariant::Kind::kFull ? "full" : "decomposed",
                   flops.total, params.total, 0.0, 0.0};
      for (const auto& l : flops.layers) {
        if (role[l.id] == ParamRole::kDwWeight) r.dw_macs += l.macs;
      }
      for (const auto& l : params.layers) {
        if (role[l.id] == ParamRole::kDwWeight) r.dw_params += l.params;
      }
      out.push_back(std::move(r));
    }
  }
  return out;
}

std::string flops_csv(const std::vector<FlopRecord>& records) {
  std::string s = "kernel,variant,macs,params,dw_macs,dw_params\n";
  for (const auto& r : records) {
    s += std::to_string(r.kernel) + "," + r.variant + "," + fmt(r.macs) + "," +
         fmt(r.params) + "," + fmt(r.dw_macs) + "," + fmt(r.dw_params) + "\n";
  }
  return s;
}

std::string speedup_report(const std::vector<BenchRecord>& records) {
  if (records.empty()) {
    throw Error(ErrorKind::kInvalidCount, "speedup_report: no records");
  }
  std::string s = "variant,M,N,C,R,median_s,speedup_vs_dense\n";
  for (const auto& r : records) {
    double base = std::nan("");
    for (const auto& d : records) {
      if (d.variant == BenchVariant::kDense && d.m == r.m &&
          d.channels == r.channels && d.resolution == r.resolution) {
        base = d.median_s;
        break;
      }
    }
    s += to_string(r.variant) + "," + std::to_string(r.m) + "," +
         std::to_string(r.n) + "," + std::to_string(r.channels) + "," +
         std::to_string(r.resolution) + "," + fmt(r.median_s) + "," +
         (std::isnan(base) ? std::string("nan") : fmt(base / r.median_s)) + "\n";
  }
  return s;
}

nlohmann::ordered_json bench_json(const std::vector<BenchRecord>& records) {
  nlohmann::ordered_json out = nlohmann::ordered_json::array();
  for (const auto& r : records) {
    out.push_back({{"variant", to_string(r.variant)},
                   {"batch", r.batch},
                   {"channels", r.channels},
                   {"resolution", r.resolution},
                   {"M", r.m},
                   {"N", r.n},
                   {"sparsity", r.sparsity},
                   {"reps", r.reps},
                   {"warmup", r.warmup},
                   {"workers", r.workers},
                   {"median_s", r.median_s},
                   {"p10_s", r.p10_s},
                   {"p90_s", r.p90_s}});
  }
  return out;
}

}  // namespace slak
