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
#include <random>
#include <vector>

namespace slak {

// Deterministic random stream.
//
// The engine is std::mt19937_64, whose output sequence is fixed by the C++
// standard. Floating-point conversions are done here rather than through
// <random> distributions, which are implementation-defined, so a seed yields
// the same values with any conforming standard library.
//
//   uniform()  53 high bits of one engine draw, scaled to [0, 1)
//   below(n)   Lemire's multiply-shift with rejection, unbiased
//   normal()   Box-Muller from two uniform draws, cosine branch only
//   split(id)  child seed = splitmix64(seed ^ splitmix64(id)); distinct ids
//              give distinct, non-overlapping seeds for practical purposes
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }
  // Number of engine draws consumed so far.
  std::uint64_t draws() const { return draws_; }

  std::uint64_t next_u64() {
    ++draws_;
    return engine_();
  }

  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  std::vector<double> uniform(std::size_t n);

  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);

  double normal();

  RngStream split(std::uint64_t stream_id) const;

  static std::uint64_t splitmix64(std::uint64_t x);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::uint64_t draws_ = 0;
};

}  // namespace slak
