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
#include <string>
#include <vector>

#include <json.hpp>

#include "slak/model.hpp"

namespace slak {

enum class BenchVariant {
  kDense,                   // dense M x M
  kSparseMasked,            // M x M with zeroed weights, dense loops
  kSparseDecomposed,        // M x N + N x M, zero taps skipped
  kSparseDecomposedMasked,  // M x N + N x M, zeroed weights, dense loops
};

std::string to_string(BenchVariant v);
BenchVariant parse_bench_variant(const std::string& text);

struct BenchSpec {
  BenchVariant variant = BenchVariant::kDense;
  int batch = 8;
  int channels = 64;
  int resolution = 32;
  int m = 51;
  int n = 5;
  double sparsity = 0.4;
  int reps = 5;
  int warmup = 1;
  std::uint64_t seed = 0;
};

struct BenchRecord {
  BenchVariant variant;
  int batch, channels, resolution, m, n;
  double sparsity;
  int reps, warmup;
  int workers = 1;
  double median_s, p10_s, p90_s;
  std::vector<double> samples_s;
};

// One depthwise layer forward, timed with a monotonic clock after `warmup`
// untimed runs. Each variant is first checked against the naive reference
// on a (1, 2, R, R) slice with the same kernels; a mismatch throws
// kNumeric. reps < 3 or warmup < 1 throws kInvalidConfig.
BenchRecord bench_variant(const BenchSpec& spec);
// Times several specs with their repetitions interleaved round-robin, so
// slow drift of a shared CPU affects every variant alike. All specs must
// share the repetition count.
std::vector<BenchRecord> bench_interleaved(const std::vector<BenchSpec>& specs);

// Linear interpolation between order statistics, q in [0, 1].
double quantile(std::vector<double> values, double q);

struct FlopRecord {
  int kernel;
  std::string variant;  // "full" or "decomposed"
  double macs, params;
  double dw_macs, dw_params;
};

// Every stage kernel replaced by each size in turn, for the full and the
// parallel-decomposed variants. Sizes must lie in [3, 151]. The short edge
// shrinks to the largest odd value <= k for k below it.
std::vector<FlopRecord> flops_sweep(const ModelConfig& base,
                                    const std::vector<int>& kernels,
                                    int input_size);

std::string flops_csv(const std::vector<FlopRecord>& records);

// Rows "variant,M,N,C,R,median_s,speedup_vs_dense"; speedup against the
// dense record with the same M, C and R ("nan" if none).
std::string speedup_report(const std::vector<BenchRecord>& records);
nlohmann::ordered_json bench_json(const std::vector<BenchRecord>& records);

}  // namespace slak
