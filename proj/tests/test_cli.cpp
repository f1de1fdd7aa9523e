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

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <doctest.h>
#include <json.hpp>

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
};

Result run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + std::string(SLAK_CLI_PATH) + " " + args + " 2>/dev/null";
  std::FILE* p = ::popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  std::string out;
  char buf[4096];
  for (std::size_t n; (n = std::fread(buf, 1, sizeof buf, p)) > 0;) out.append(buf, n);
  const int status = ::pclose(p);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("slak_test_cli_" + name);
  fs::remove_all(dir);
  return dir;
}

const std::string kConfig = std::string(SLAK_SOURCE_DIR) + "/configs/micro.json";
const std::string kShort =
    "--config " + kConfig + " --set train.total_steps=10 --set train.batch=4 --set train.adaptation.frequency=4";

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("help output matches the golden files") {
    for (std::string sub : {"", "train", "bench", "erf", "flops", "plan"}) {
      const std::string name = sub.empty() ? "main" : sub;
      INFO("help for " << name);
      const Result r = run(sub + " --help");
      CHECK(r.code == 0);
      CHECK(r.out == slurp(fs::path(SLAK_GOLDEN_DIR) / ("help_" + name + ".txt")));
    }
  }

  TEST_CASE("config errors exit with 2") {
    CHECK(run("").code == 2);
    CHECK(run("train --config /nonexistent/run.json").code == 2);
    CHECK(run("train " + kShort + " --set train.no_such_key=1").code == 2);
    CHECK(run("train " + kShort + " --set train.sparsity=1.5").code == 2);
    CHECK(run("plan --sparsity 1.0").code == 2);
    CHECK(run("flops --kernels 7,x").code == 2);
    CHECK(run("bench --reps 1 --resolutions 16 --variants dense").code == 2);
  }

  TEST_CASE("numeric failure exits with 3") {
    const fs::path dir = scratch("nan");
    const Result r = run("train " + kShort +
                         " --set train.peak_lr=1e30 --set train.warmup_steps=0 --out " + dir.string());
    CHECK(r.code == 3);
    fs::remove_all(dir);
  }

  TEST_CASE("plan reports factor and parameter match") {
    const Result dense = run("plan --sparsity 0");
    CHECK(dense.code == 0);
    CHECK(dense.out.find("factor 1.0") != std::string::npos);
    const Result s4 = run("plan --sparsity 0.4");
    CHECK(s4.out.find("factor 1.3") != std::string::npos);
    CHECK(s4.out.find("params") != std::string::npos);
    CHECK(run("plan --sparsity 0.55").out.find("factor 1.5") != std::string::npos);
    const fs::path dir = scratch("plan");
    CHECK(run("plan --sparsity 0.4 --out " + dir.string()).code == 0);
    const auto j = nlohmann::json::parse(slurp(dir / "plan.json"));
    CHECK(j["factor"].get<double>() == doctest::Approx(1.3));
    fs::remove_all(dir);
  }

  TEST_CASE("flops sweep rows are monotone") {
    const fs::path dir = scratch("flops");
    CHECK(run("flops --kernels 7,31,51,61 --variant decomposed --out " + dir.string()).code == 0);
    const auto rows = lines(slurp(dir / "flops.csv"));
    REQUIRE(rows.size() == 5);
    double prev = 0.0;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      std::vector<std::string> f;
      std::istringstream in(rows[i]);
      for (std::string c; std::getline(in, c, ',');) f.push_back(c);
      const double macs = std::stod(f.at(2));
      CHECK(macs > prev);
      prev = macs;
    }
    fs::remove_all(dir);
  }

  TEST_CASE("train writes replayable, deterministic artifacts") {
    const fs::path a = scratch("train_a"), b = scratch("train_b"), c = scratch("train_c");
    REQUIRE(run("train " + kShort + " --out " + a.string()).code == 0);
    REQUIRE(run("train " + kShort + " --out " + b.string()).code == 0);
    for (const char* f : {"config.json", "metrics.csv", "adaptation.csv", "model.slak"}) {
      CHECK(fs::exists(a / f));
    }
    const auto metrics = lines(slurp(a / "metrics.csv"));
    REQUIRE(metrics.size() == 11);
    CHECK(metrics[0] == "step,loss,acc,lr,p_t,global_sparsity");
    CHECK(slurp(a / "metrics.csv") == slurp(b / "metrics.csv"));
    CHECK(slurp(a / "model.slak") == slurp(b / "model.slak"));
    // Replay from the resolved config alone.
    REQUIRE(run("train --config " + (a / "config.json").string() + " --out " + c.string()).code == 0);
    CHECK(slurp(a / "metrics.csv") == slurp(c / "metrics.csv"));

    const fs::path e = scratch("erf");
    REQUIRE(run("erf --config " + (a / "config.json").string() + " --checkpoint " +
                (a / "model.slak").string() + " --images 1 --linear --svg --out " + e.string())
                .code == 0);
    const auto summary = nlohmann::json::parse(slurp(e / "erf_summary.json"));
    CHECK(summary.dump().find("0.2") != std::string::npos);
    CHECK(lines(slurp(e / "erf_map.csv")).size() == 64);
    CHECK(fs::exists(e / "erf_map.svg"));
    CHECK(run("erf --config " + (a / "config.json").string() + " --checkpoint " +
              (a / "model.slak").string() + " --kernel 9 --images 1 --out " + e.string())
              .code == 2);
    for (const auto& d : {a, b, c, e}) fs::remove_all(d);
  }

  TEST_CASE("seed falls back to SLAK_SEED") {
    const fs::path dir = scratch("seed");
    const fs::path cfg = fs::temp_directory_path() / "slak_test_cli_noseed.json";
    {
      auto j = nlohmann::json::parse(slurp(kConfig));
      j.erase("train.seed");
      std::ofstream(cfg) << j.dump();
    }
    REQUIRE(run("train --config " + cfg.string() +
                    " --set train.total_steps=2 --set train.batch=2 --out " + dir.string(),
                "SLAK_SEED=77")
                .code == 0);
    const auto resolved = nlohmann::json::parse(slurp(dir / "config.json"));
    CHECK(resolved.dump().find("77") != std::string::npos);
    fs::remove_all(dir);
    fs::remove(cfg);
  }

  TEST_CASE("bench writes csv or json") {
    const fs::path dir = scratch("bench");
    const std::string base = "bench --variants dense,sparse_decomposed --resolutions 16 --channels 4 "
                             "--batch 1 --m 13 --n 3 --reps 3 --out " + dir.string();
    const Result csv = run(base);
    CHECK(csv.code == 0);
    const auto rows = lines(slurp(dir / "bench.csv"));
    REQUIRE(rows.size() == 3);
    CHECK(rows[0] == "variant,M,N,C,R,median_s,speedup_vs_dense");
    CHECK(run(base + " --json").code == 0);
    const auto j = nlohmann::json::parse(slurp(dir / "bench.json"));
    CHECK(j.size() == 2);
    fs::remove_all(dir);
  }
}
