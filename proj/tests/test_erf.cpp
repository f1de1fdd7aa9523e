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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <doctest.h>

#include "slak/conv.hpp"
#include "slak/erf.hpp"
#include "slak/error.hpp"
#include "test_util.hpp"

using namespace slak;
using namespace slak::test;

namespace {

ContributionMap from_grid(int g, std::vector<double> values) {
  ContributionMap m;
  m.size = g;
  m.grid = std::move(values);
  return m;
}

ContributionMap uniform(int g) { return from_grid(g, std::vector<double>(std::size_t(g) * g, 1.0)); }

// Gradient of the summed centre output of a stack of same-padded depthwise
// convs, through the analytic backward pass.
GradientProbe<double> stack_probe(std::vector<std::pair<ConvSpec, Tensor64>> layers) {
  return [layers](const Tensor64& x) {
    std::vector<Tensor64> inputs{x};
    for (const auto& [spec, w] : layers) {
      inputs.push_back(conv2d_forward(inputs.back(), w, static_cast<const Tensor64*>(nullptr), spec));
    }
    Tensor64 dy(inputs.back().shape());
    const int h = dy.dim(2), w = dy.dim(3);
    for (int c = 0; c < dy.dim(1); ++c) dy.at(0, c, h / 2, w / 2) = 1.0;
    for (std::size_t l = layers.size(); l-- > 0;) {
      dy = conv2d_backward(inputs[l], layers[l].second, layers[l].first, dy, false).dx;
    }
    return dy;
  };
}

// For a linear map the gradient of the centre output is its response to
// unit inputs.
GradientProbe<double> response_probe(const std::function<Tensor64(const Tensor64&)>& f) {
  return [f](const Tensor64& x) {
    Tensor64 grad(x.shape());
    const Tensor64 base = f(Tensor64(x.shape()));
    const int h = base.dim(2), w = base.dim(3);
    for (std::size_t i = 0; i < x.numel(); ++i) {
      Tensor64 e(x.shape());
      e[i] = 1.0;
      const Tensor64 y = f(e);
      double s = 0.0;
      for (int c = 0; c < y.dim(1); ++c) s += y.at(0, c, h / 2, w / 2) - base.at(0, c, h / 2, w / 2);
      grad[i] = s;
    }
    return grad;
  };
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::kIo;
}

}  // namespace

TEST_SUITE("contribution maps") {
  TEST_CASE("one by one conv gives a centre delta") {
    Tensor64 w({1, 1, 1, 1});
    w[0] = 2.0;
    const auto map = contribution_map(stack_probe({{ConvSpec::depthwise(1, 1, 1), w}}),
                                      {Tensor64::ones({1, 1, 8, 8})});
    CHECK(map.at(4, 4) == 1.0);
    CHECK(map.total() == 1.0);
    CHECK(support_extent(map) == Extent{1, 1});
  }

  TEST_CASE("single conv reproduces the kernel magnitudes") {
    RngStream rng(1);
    for (auto [kh, kw] : {std::pair{5, 5}, std::pair{7, 3}, std::pair{4, 6}}) {
      const ConvSpec s = ConvSpec::depthwise(1, kh, kw);
      const Tensor64 w = random64(s.weight_shape(), rng, 0.1, 1.0);
      const int g = 17;
      const auto map = contribution_map(stack_probe({{s, w}}), {random64({1, 1, g, g}, rng)});
      const Padding p = s.resolved_padding();
      double peak = 0.0;
      for (double v : w.values()) peak = std::max(peak, std::abs(v));
      CHECK(support_extent(map) == Extent{kh, kw});
      for (int i = 0; i < kh; ++i) {
        for (int j = 0; j < kw; ++j) {
          const double got = map.at(g / 2 - p.top + i, g / 2 - p.left + j);
          CHECK(got == doctest::Approx(std::abs(w.at(0, 0, i, j)) / peak).epsilon(1e-12));
        }
      }
    }
  }

  TEST_CASE("linear stacks are supported on the oracle extent") {
    RngStream rng(2);
    const std::vector<std::vector<StackLayer>> stacks = {
        {{3, 3}, {3, 3}}, {{7, 3}, {3, 7}}, {{5, 5, 2}, {3, 3}}, {{3, 3}, {3, 3}, {3, 3}, {3, 3}}};
    for (const auto& stack : stacks) {
      std::vector<std::pair<ConvSpec, Tensor64>> layers;
      for (const auto& l : stack) {
        const ConvSpec s = ConvSpec::depthwise(2, l.kh, l.kw, l.dilation);
        layers.emplace_back(s, random64(s.weight_shape(), rng, 0.1, 1.0));
      }
      const auto map = contribution_map(stack_probe(layers), {random64({1, 2, 25, 25}, rng)});
      CHECK(support_extent(map) == linear_stack_support(stack));
    }
    CHECK(linear_stack_support({{3, 3}}) == Extent{3, 3});
    CHECK(linear_stack_support({{3, 3}, {3, 3}}) == Extent{5, 5});
    CHECK(linear_stack_support({{51, 5}, {5, 51}}) == Extent{55, 55});
  }

  TEST_CASE("decomposed layer is supported on a cross") {
    RngStream rng(3);
    const int m = 15, n = 5, g = 21;
    const Tensor64 a = random64({1, 1, m, n}, rng, 0.1, 1.0);
    const Tensor64 b = random64({1, 1, n, m}, rng, 0.1, 1.0);
    const Tensor64 s = random64({1, 1, 5, 5}, rng, 0.1, 1.0);
    auto bn = BatchNormState<double>::identity(1);
    bn.eps = 0.0;
    const auto probe = response_probe([&](const Tensor64& x) {
      return decomposed_dw_forward(x, a, b, s, bn.view(), bn.view(), bn.view(), Mode::kEval);
    });
    const auto map = contribution_map(probe, {Tensor64({1, 1, g, g})});
    CHECK(support_extent(map) == Extent{m, m});
    const int c = g / 2;
    for (int i = 0; i < g; ++i) {
      for (int j = 0; j < g; ++j) {
        const bool in_bar = (std::abs(i - c) <= m / 2 && std::abs(j - c) <= n / 2) ||
                            (std::abs(i - c) <= n / 2 && std::abs(j - c) <= m / 2);
        REQUIRE((map.at(i, j) > 0.0) == in_bar);
      }
    }
  }

  TEST_CASE("model maps are normalized and checked") {
    ModelConfig c;
    c.stage_blocks = {1};
    c.stage_dims = {8};
    c.stage_kernels = {7};
    c.num_classes = 2;
    c.input_size = 32;
    c.layer_scale_init = 1.0;
    RngStream rng(4);
    auto model = Model<double>::build(c, rng);
    std::vector<Tensor64> images{random64({1, 3, 32, 32}, rng), random64({1, 3, 32, 32}, rng)};
    for (auto mode : {ErfAccumulation::kRaw, ErfAccumulation::kPerImage}) {
      for (bool linear : {false, true}) {
        const auto map = contribution_map(model, images, linear, mode);
        CHECK(map.size == 32);
        CHECK(map.max() == 1.0);
        for (double v : map.grid) REQUIRE(v >= 0.0);
      }
    }
    CHECK(kind_of([&] { contribution_map(model, {random64({1, 3, 16, 16}, rng)}); }) ==
          ErrorKind::kInvalidShape);
  }
}

TEST_SUITE("area ratio") {
  TEST_CASE("examples") {
    CHECK(area_ratio(uniform(8), 1.0) == 1.0);
    CHECK(area_ratio(uniform(7), 1.0) == 1.0);
    std::vector<double> delta(64, 0.0);
    delta[4 * 8 + 4] = 1.0;
    for (double t : {0.01, 0.3, 1.0}) {
      CHECK(area_side(from_grid(8, delta), t) == 1);
      CHECK(area_ratio(from_grid(8, delta), t) == doctest::Approx(1.0 / 64));
    }
    CHECK(area_side(uniform(10), 0.25) == 5);
    CHECK(area_ratio(uniform(10), 0.25) == doctest::Approx(0.25));
  }

  TEST_CASE("errors") {
    CHECK(kind_of([] { area_ratio(from_grid(4, std::vector<double>(16, 0.0)), 0.5); }) ==
          ErrorKind::kDegenerateMap);
    CHECK(kind_of([] { area_ratio(uniform(4), 0.0); }) == ErrorKind::kInvalidConfig);
    CHECK(kind_of([] { area_ratio(uniform(4), 1.5); }) == ErrorKind::kInvalidConfig);
  }

  TEST_CASE("window side by enumeration") {
    RngStream rng(5);
    for (int trial = 0; trial < 30; ++trial) {
      const int g = 4 + int(rng.below(20));
      std::vector<double> v(std::size_t(g) * g);
      for (auto& x : v) x = rng.uniform() < 0.3 ? 0.0 : rng.uniform();
      v[std::size_t(g / 2) * g + g / 2] += 0.01;
      const auto map = from_grid(g, v);
      const double t = 0.05 + 0.95 * rng.uniform();
      int want = g;
      for (int a = 1; a <= g; ++a) {
        const int lo = g / 2 - a / 2;
        double mass = 0.0;
        for (int i = std::max(0, lo); i < std::min(g, lo + a); ++i)
          for (int j = std::max(0, lo); j < std::min(g, lo + a); ++j) mass += map.at(i, j);
        if (mass >= t * map.total() - 1e-12 * map.total()) {
          want = a;
          break;
        }
      }
      CHECK(area_side(map, t) == want);
    }
  }

  TEST_CASE("non-decreasing in t") {
    RngStream rng(6);
    for (int trial = 0; trial < 20; ++trial) {
      const int g = 8 + int(rng.below(40));
      std::vector<double> v(std::size_t(g) * g);
      for (auto& x : v) x = std::pow(rng.uniform(), 4);
      const auto map = from_grid(g, v);
      double prev = 0.0;
      for (int k = 1; k <= 100; ++k) {
        const double r = area_ratio(map, k / 100.0);
        REQUIRE(r >= prev);
        prev = r;
      }
    }
  }

  TEST_CASE("summary and exports") {
    const auto summary = area_summary(uniform(10));
    CHECK(summary.size() == 4);
    CHECK(summary.at("0.99") == 1.0);
    const auto dir = std::filesystem::temp_directory_path();
    const auto csv = dir / "slak_test_erf.csv", svg = dir / "slak_test_erf.svg";
    write_map_csv(uniform(3), csv.string());
    write_map_svg(uniform(3), svg.string());
    std::ifstream in(csv);
    std::string line;
    int rows = 0;
    while (std::getline(in, line)) {
      CHECK(line == "1,1,1");
      ++rows;
    }
    CHECK(rows == 3);
    CHECK(std::filesystem::file_size(svg) > 0);
    std::filesystem::remove(csv);
    std::filesystem::remove(svg);
  }
}
