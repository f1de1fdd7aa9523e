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
#include <numeric>
#include <string>
#include <vector>

#include <doctest.h>

#include "slak/error.hpp"
#include "slak/trainer.hpp"

using namespace slak;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::kIo;
}

Tensor row(std::vector<float> v) {
  Tensor t({1, static_cast<int>(v.size())});
  for (std::size_t i = 0; i < v.size(); ++i) t[i] = v[i];
  return t;
}

// A model and task small enough for multi-step runs inside a unit test.
ModelConfig small_model() {
  ModelConfig c;
  c.stage_blocks = {1, 1};
  c.stage_dims = {16, 32};
  c.stage_kernels = {9, 5};
  c.num_classes = 2;
  c.input_size = 32;
  c.layer_scale_init = 1.0;
  return c;
}

TrainConfig small_train(long steps) {
  TrainConfig t;
  t.total_steps = steps;
  t.batch = 8;
  t.seed = 3;
  t.sparsity = 0.4;
  t.peak_lr = 2e-3;
  t.adaptation.frequency = 3;
  t.task.image_size = 32;
  t.task.marker_size = 4;
  t.task.d_star = 12;
  return t;
}

struct Run {
  TrainResult result;
  Model<float> model;
};

Run run(const TrainConfig& t, const StepCallback& on_step = {}) {
  Model<float> model = init_model(small_model(), t.seed);
  std::vector<std::string> ids;
  auto masks = snip_masks(model, t, &ids);
  TrainResult r = train(model, masks, ids, t, on_step);
  return {std::move(r), std::move(model)};
}

}  // namespace

TEST_SUITE("optimizer") {
  TEST_CASE("zero gradient, zero decay") {
    Tensor p = row({1, -2, 3});
    const Tensor g({1, 3});
    auto s = OptimState::zeros_like({&p});
    adamw_step({&p}, {&g}, s, 0.1, {0.0});
    CHECK(p == row({1, -2, 3}));
  }

  TEST_CASE("first step with unit gradient") {
    Tensor p = row({0.5f});
    const Tensor g = row({1});
    auto s = OptimState::zeros_like({&p});
    adamw_step({&p}, {&g}, s, 0.01, {0.0});
    // Bias correction makes m_hat = 1 and v_hat = 1 on the first step.
    CHECK(double(p[0]) == doctest::Approx(0.5 - 0.01 / (1.0 + 1e-8)).epsilon(1e-6));
    CHECK(s.step == 1);
    CHECK(s.v[0][0] >= 0.0f);
  }

  TEST_CASE("decoupled decay") {
    Tensor p = row({2.0f});
    const Tensor g({1, 1});
    auto s = OptimState::zeros_like({&p});
    adamw_step({&p}, {&g}, s, 0.1, {0.05});
    CHECK(double(p[0]) == doctest::Approx(2.0 * (1 - 0.1 * 0.05)).epsilon(1e-6));
  }

  TEST_CASE("non-finite gradient names the layer") {
    Tensor p = row({1});
    Tensor g = row({std::nanf("")});
    auto s = OptimState::zeros_like({&p});
    const std::vector<std::string> names{"stages.0.pw1.weight"};
    try {
      adamw_step({&p}, {&g}, s, 0.1, {0.0}, &names);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kNumeric);
      CHECK(std::string(e.what()).find("stages.0.pw1.weight") != std::string::npos);
    }
  }

  TEST_CASE("converges on a convex quadratic") {
    const std::vector<float> curvature{1.0f, 4.0f, 0.25f, 9.0f};
    const std::vector<float> target{0.3f, -1.2f, 2.0f, 0.05f};
    Tensor p({4});
    auto s = OptimState::zeros_like({&p});
    Tensor g({4});
    double lr = 0.05;
    for (int t = 0; t < 12000; ++t) {
      for (int i = 0; i < 4; ++i) g[i] = curvature[i] * (p[i] - target[i]);
      adamw_step({&p}, {&g}, s, lr, {0.0});
      lr *= 0.999;
    }
    for (int i = 0; i < 4; ++i) CHECK(std::abs(double(p[i]) - target[i]) < 1e-6);
  }
}

TEST_SUITE("loss and schedule") {
  TEST_CASE("uniform logits give ln K") {
    for (int k : {2, 5, 10}) {
      for (double eps : {0.0, 0.1, 0.5}) {
        const auto r = cross_entropy_ls(Tensor({3, k}), {0, 1, k - 1}, eps);
        CHECK(r.loss == doctest::Approx(std::log(double(k))));
      }
    }
    CHECK(cross_entropy_ls(Tensor({1, 2}), {0}, 0.1).loss == doctest::Approx(0.6931).epsilon(1e-4));
  }

  TEST_CASE("confident correct logit") {
    CHECK(cross_entropy_ls(row({60, 0, 0}), {0}, 0.0).loss < 1e-20);
    CHECK(cross_entropy_ls(row({60, 0, 0}), {0}, 0.1).loss > 1.0);
  }

  TEST_CASE("gradient matches finite differences") {
    const Tensor logits = row({0.3f, -1.1f, 2.0f, 0.5f});
    const auto r = cross_entropy_ls(logits, {1}, 0.1);
    for (int i = 0; i < 4; ++i) {
      Tensor hi = logits, lo = logits;
      hi[i] += 1e-2f;
      lo[i] -= 1e-2f;
      const double fd = (cross_entropy_ls(hi, {1}, 0.1).loss - cross_entropy_ls(lo, {1}, 0.1).loss) / 2e-2;
      CHECK(double(r.dlogits[i]) == doctest::Approx(fd).epsilon(1e-3));
    }
  }

  TEST_CASE("label out of range") {
    CHECK_THROWS_AS(cross_entropy_ls(Tensor({1, 2}), {2}, 0.1), Error);
    CHECK_THROWS_AS(cross_entropy_ls(Tensor({1, 2}), {-1}, 0.1), Error);
  }

  TEST_CASE("warmup and cosine") {
    TrainConfig c;
    c.total_steps = 1000;
    c.peak_lr = 1e-3;
    CHECK(c.resolved_warmup() == 50);
    CHECK(lr_schedule(0, c) == 0.0);
    CHECK(lr_schedule(25, c) == doctest::Approx(5e-4));
    CHECK(lr_schedule(50, c) == doctest::Approx(1e-3));
    CHECK(lr_schedule(525, c) == doctest::Approx(5e-4));
    CHECK(lr_schedule(1000, c) == doctest::Approx(0.0));
    CHECK(kind_of([&] { lr_schedule(1001, c); }) == ErrorKind::kScheduleRange);
    c.peak_lr = 0.0;
    c.batch = 64;
    CHECK(c.resolved_peak_lr() == doctest::Approx(4e-3 * 64 / 4096));
  }
}

TEST_SUITE("synthetic task") {
  TEST_CASE("distance rule") {
    const SyntheticTask t;
    CHECK(synth_label(t, {0, 0, 0, 4}) == 0);
    CHECK(synth_label(t, {0, 0, 60, 60}) == 1);
    CHECK(synth_label(t, {0, 0, 16, 0}) == 0);
    CHECK(synth_label(t, {0, 0, 17, 3}) == 1);
  }

  TEST_CASE("markers are drawn where stated") {
    SyntheticTask t;
    t.noise = 0.0;
    RngStream rng(1);
    const Tensor img = synth_image(t, {8, 12, 40, 44}, rng);
    CHECK(img.at(0, 0, 8, 12) == 1.0f);
    CHECK(img.at(0, 2, 43, 47) == 1.0f);
    CHECK(img.at(0, 1, 0, 0) == 0.0f);
    double sum = 0.0;
    for (float v : img.values()) sum += v;
    CHECK(sum == doctest::Approx(2 * 3 * 16));
  }

  TEST_CASE("seeded batches replay") {
    const SyntheticTask t;
    RngStream a(9), b(9);
    const auto x = synth_batch(t, a, 6), y = synth_batch(t, b, 6);
    CHECK(x.images == y.images);
    CHECK(x.labels == y.labels);
    for (std::size_t i = 0; i < x.markers.size(); ++i) {
      CHECK(synth_label(t, x.markers[i]) == x.labels[i]);
    }
  }

  TEST_CASE("labels are balanced") {
    SyntheticTask t;
    t.noise = 0.0;
    RngStream rng(10);
    const auto b = synth_batch(t, rng, 10000);
    const int ones = std::accumulate(b.labels.begin(), b.labels.end(), 0);
    CHECK(std::abs(ones / 10000.0 - 0.5) <= 0.05);
  }
}

TEST_SUITE("training loop") {
  TEST_CASE("zero steps returns the initial metrics") {
    const Run r = run(small_train(0));
    CHECK(r.result.log.empty());
    CHECK(r.result.initial.step == 0);
    CHECK(r.result.initial.global_sparsity == doctest::Approx(0.4).epsilon(0.01));
  }

  TEST_CASE("masked weights stay zero and sparsity is conserved") {
    const TrainConfig t = small_train(10);
    int checked = 0;
    std::vector<double> sparsity;
    std::vector<std::string> ids;
    {
      Model<float> probe = init_model(small_model(), t.seed);
      snip_masks(probe, t, &ids);
    }
    const Run r = run(t, [&](const StepMetrics& m, const Model<float>& model,
                             const std::vector<Mask>& masks) {
      REQUIRE(masked_magnitude(model, ids, masks) == 0.0);
      sparsity.push_back(m.global_sparsity);
      ++checked;
    });
    CHECK(checked == 10);
    for (double v : sparsity) CHECK(v == r.result.initial.global_sparsity);
    CHECK(r.result.log.size() == 10);
    CHECK(r.result.adaptations.size() == 3);
    for (const auto& a : r.result.adaptations) CHECK(a.pruned == a.grown);
    CHECK(masked_magnitude(r.model, r.result.sparse_layers, r.result.masks) == 0.0);
  }

  TEST_CASE("identical seeds give identical logs") {
    const TrainConfig t = small_train(6);
    const Run a = run(t), b = run(t);
    REQUIRE(a.result.log.size() == b.result.log.size());
    for (std::size_t i = 0; i < a.result.log.size(); ++i) {
      CHECK(a.result.log[i].loss == b.result.log[i].loss);
      CHECK(a.result.log[i].acc == b.result.log[i].acc);
      CHECK(a.result.log[i].p_t == b.result.log[i].p_t);
    }
    CHECK(a.result.masks == b.result.masks);
    TrainConfig other = t;
    other.seed = 4;
    CHECK(run(other).result.log[0].loss != a.result.log[0].loss);
  }

  TEST_CASE("early stop") {
    TrainConfig t = small_train(20);
    Model<float> model = init_model(small_model(), t.seed);
    std::vector<std::string> ids;
    auto masks = snip_masks(model, t, &ids);
    const auto r = train(model, masks, ids, t, {},
                         [](const TrainResult& res) { return res.log.size() >= 4; });
    CHECK(r.stopped_early);
    CHECK(r.log.size() == 4);
    const auto stop = accuracy_stop(0.9, 2);
    TrainResult fake;
    fake.log = {{1, 0, 0.95}, {2, 0, 0.8}};
    CHECK_FALSE(stop(fake));
    fake.log.push_back({3, 0, 1.0});
    CHECK(stop(fake));
  }

  TEST_CASE("loss falls on the small task") {
    TrainConfig t = small_train(60);
    t.batch = 16;
    const Run r = run(t);
    double head = 0.0, tail = 0.0;
    for (int i = 0; i < 10; ++i) {
      head += r.result.log[i].loss;
      tail += r.result.log[r.result.log.size() - 1 - i].loss;
    }
    CHECK(tail < head);
  }
}
