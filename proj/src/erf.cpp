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


#include "slak/erf.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "slak/error.hpp"

namespace slak {

double ContributionMap::total() const {
  double s = 0.0;
  for (double v : grid) s += v;
  return s;
}

double ContributionMap::max() const {
  return grid.empty() ? 0.0 : *std::max_element(grid.begin(), grid.end());
}

namespace {

void normalize(std::vector<double>& g) {
  const double m = g.empty() ? 0.0 : *std::max_element(g.begin(), g.end());
  if (m > 0.0) {
    for (double& v : g) v /= m;
  }
}

}  // namespace

template <typename T>
ContributionMap contribution_map(const GradientProbe<T>& probe,
                                 const std::vector<BasicTensor<T>>& images,
                                 ErfAccumulation mode) {
  if (images.empty()) {
    throw Error(ErrorKind::kInvalidConfig, "contribution_map: no images");
  }
  const Shape& s0 = images.front().shape();
  if (s0.size() != 4 || s0[0] != 1 || s0[2] != s0[3]) {
    throw Error(ErrorKind::kInvalidShape,
                "contribution_map: images must be (1, C, G, G), got " +
                    shape_str(s0));
  }
  const int g = static_cast<int>(s0[2]);
  const std::size_t plane = std::size_t(g) * g;
  ContributionMap out{g, std::vector<double>(plane, 0.0)};
  std::vector<double> one(plane);
  for (const auto& image : images) {
    if (image.shape() != s0) {
      throw Error(ErrorKind::kInvalidShape,
                  "contribution_map: image shape " + shape_str(image.shape()) +
                      " differs from " + shape_str(s0));
    }
    const BasicTensor<T> grad = probe(image);
    require_same_shape(grad, image, "contribution_map probe");
    std::fill(one.begin(), one.end(), 0.0);
    for (std::int64_t c = 0; c < s0[1]; ++c) {
      const T* p = grad.data() + std::size_t(c) * plane;
      for (std::size_t i = 0; i < plane; ++i) one[i] += std::abs(double(p[i]));
    }
    if (mode == ErfAccumulation::kPerImage) normalize(one);
    for (std::size_t i = 0; i < plane; ++i) out.grid[i] += one[i];
  }
  normalize(out.grid);
  return out;
}

template <typename T>
GradientProbe<T> feature_probe(Model<T>& model, bool linear) {
  return [&model, linear](const BasicTensor<T>& image) {
    const ModelConfig& cfg = model.config();
    if (image.shape().size() != 4 || image.shape()[1] != cfg.in_channels ||
        image.shape()[2] != cfg.input_size || image.shape()[3] != cfg.input_size) {
      throw Error(ErrorKind::kInvalidShape,
                  "contribution_map: model expects (1, " +
                      std::to_string(cfg.in_channels) + ", " +
                      std::to_string(cfg.input_size) + ", " +
                      std::to_string(cfg.input_size) + ") inputs, got " +
                      shape_str(image.shape()));
    }
    ForwardOptions opt;
    opt.mode = Mode::kEval;
    opt.linear = linear;
    ForwardCache<T> cache;
    const BasicTensor<T> f = model.forward_features(image, opt, &cache);
    const auto& fs = f.shape();
    BasicTensor<T> df(fs);
    const std::int64_t h = fs[2], w = fs[3];
    for (std::int64_t c = 0; c < fs[1]; ++c) {
      df.at(0, c, h / 2, w / 2) = T(1);
    }
    return model.backward_features(cache, df).input;
  };
}

template <typename T>
ContributionMap contribution_map(Model<T>& model,
                                 const std::vector<BasicTensor<T>>& images,
                                 bool linear, ErfAccumulation mode) {
  return contribution_map<T>(feature_probe(model, linear), images, mode);
}

int area_side(const ContributionMap& map, double t) {
  if (!(t > 0.0 && t <= 1.0)) {
    throw Error(ErrorKind::kInvalidConfig,
                "area_ratio: t must be in (0, 1], got " + std::to_string(t));
  }
  const int g = map.size;
  const double total = map.total();
  if (!(total > 0.0)) {
    throw Error(ErrorKind::kDegenerateMap, "area_ratio: map has zero mass");
  }
  // Summed-area table in long double keeps window sums exact enough that
  // uniform maps hit their closed-form sides.
  std::vector<long double> sat(std::size_t(g + 1) * (g + 1), 0.0L);
  auto S = [&](int i, int j) -> long double& {
    return sat[std::size_t(i) * (g + 1) + j];
  };
  for (int i = 0; i < g; ++i) {
    for (int j = 0; j < g; ++j) {
      S(i + 1, j + 1) = map.at(i, j) + S(i, j + 1) + S(i + 1, j) - S(i, j);
    }
  }
  const long double target = (long double)t * S(g, g);
  const long double slack = 1e-12L * S(g, g);
  const int c = g / 2;
  for (int a = 1; a <= g; ++a) {
    const int lo = std::max(0, c - a / 2);
    const int hi = std::min(g, c - a / 2 + a);
    const long double mass = S(hi, hi) - S(lo, hi) - S(hi, lo) + S(lo, lo);
    if (mass + slack >= target) return a;
  }
  return g;
}

double area_ratio(const ContributionMap& map, double t) {
  const double a = area_side(map, t);
  return (a / map.size) * (a / map.size);
}

Extent linear_stack_support(const std::vector<StackLayer>& layers) {
  if (layers.empty()) {
    throw Error(ErrorKind::kInvalidConfig, "linear_stack_support: no layers");
  }
  Extent e{1, 1};
  for (const auto& l : layers) {
    if (l.kh < 1 || l.kw < 1 || l.dilation < 1) {
      throw Error(ErrorKind::kInvalidConfig,
                  "linear_stack_support: kernel sizes and dilation must be >= 1");
    }
    e.height += (l.kh - 1) * l.dilation;
    e.width += (l.kw - 1) * l.dilation;
  }
  return e;
}

Extent support_extent(const ContributionMap& map, double threshold) {
  int r0 = map.size, r1 = -1, c0 = map.size, c1 = -1;
  for (int i = 0; i < map.size; ++i) {
    for (int j = 0; j < map.size; ++j) {
      if (map.at(i, j) > threshold) {
        r0 = std::min(r0, i);
        r1 = std::max(r1, i);
        c0 = std::min(c0, j);
        c1 = std::max(c1, j);
      }
    }
  }
  if (r1 < 0) return {0, 0};
  return {r1 - r0 + 1, c1 - c0 + 1};
}

void write_map_csv(const ContributionMap& map, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (f == nullptr) throw Error(ErrorKind::kIo, "cannot write " + path);
  for (int i = 0; i < map.size; ++i) {
    for (int j = 0; j < map.size; ++j) {
      std::fprintf(f, j == 0 ? "%.9g" : ",%.9g", map.at(i, j));
    }
    std::fputc('\n', f);
  }
  if (std::fclose(f) != 0) throw Error(ErrorKind::kIo, "cannot write " + path);
}

void write_map_svg(const ContributionMap& map, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path);
  const double top = std::log1p(1000.0 * std::max(map.max(), 0.0));
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << map.size
      << ' ' << map.size << "\" shape-rendering=\"crispEdges\">\n";
  for (int i = 0; i < map.size; ++i) {
    for (int j = 0; j < map.size; ++j) {
      const double v =
          top > 0.0 ? std::log1p(1000.0 * map.at(i, j)) / top : 0.0;
      const int level = static_cast<int>(std::lround(255.0 * v));
      out << "<rect x=\"" << j << "\" y=\"" << i
          << "\" width=\"1\" height=\"1\" fill=\"rgb(" << level << ',' << level
          << ',' << level << ")\"/>\n";
    }
  }
  out << "</svg>\n";
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path);
}

std::map<std::string, double> area_summary(const ContributionMap& map) {
  std::map<std::string, double> out;
  for (double t : erf_thresholds()) {
    char key[16];
    std::snprintf(key, sizeof key, "%g", t);
    out[key] = area_ratio(map, t);
  }
  return out;
}

template ContributionMap contribution_map<float>(
    const GradientProbe<float>&, const std::vector<BasicTensor<float>>&,
    ErfAccumulation);
template ContributionMap contribution_map<double>(
    const GradientProbe<double>&, const std::vector<BasicTensor<double>>&,
    ErfAccumulation);
template GradientProbe<float> feature_probe(Model<float>&, bool);
template GradientProbe<double> feature_probe(Model<double>&, bool);
template ContributionMap contribution_map<float>(
    Model<float>&, const std::vector<BasicTensor<float>>&, bool,
    ErfAccumulation);
template ContributionMap contribution_map<double>(
    Model<double>&, const std::vector<BasicTensor<double>>&, bool,
    ErfAccumulation);

}  // namespace slak
