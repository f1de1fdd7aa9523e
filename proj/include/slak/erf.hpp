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

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "slak/model.hpp"
#include "slak/tensor.hpp"

namespace slak {

// G x G map of non-negative input contributions to the central output.
struct ContributionMap {
  int size = 0;
  std::vector<double> grid;  // row-major

  double at(int i, int j) const { return grid[std::size_t(i) * size + j]; }
  double total() const;
  double max() const;
};

enum class ErfAccumulation {
  kRaw,       // sum raw magnitudes over images, normalize once
  kPerImage,  // normalize each image's map before summing
};

// Input gradient of sum_c f[c, center] for one (1, C, G, G) image.
template <typename T>
using GradientProbe = std::function<BasicTensor<T>(const BasicTensor<T>&)>;

// score(i, j) = sum over images and channels of |probe(image)[., i, j]|,
// then scaled so the maximum is 1 (left as zeros if all zero).
template <typename T>
ContributionMap contribution_map(const GradientProbe<T>& probe,
                                 const std::vector<BasicTensor<T>>& images,
                                 ErfAccumulation mode = ErfAccumulation::kRaw);

// Probe through the model's last feature map, in eval mode. The feature
// center for even sizes is (H/2, W/2).
template <typename T>
GradientProbe<T> feature_probe(Model<T>& model, bool linear);

template <typename T>
ContributionMap contribution_map(Model<T>& model,
                                 const std::vector<BasicTensor<T>>& images,
                                 bool linear = false,
                                 ErfAccumulation mode = ErfAccumulation::kRaw);

// Side A of the smallest centered square holding at least t of the mass.
// The window of side A covers [G/2 - floor(A/2), G/2 - floor(A/2) + A).
int area_side(const ContributionMap& map, double t);
// (A / G)^2. Throws kInvalidConfig unless t in (0, 1] and kDegenerateMap on
// zero mass.
double area_ratio(const ContributionMap& map, double t);

struct StackLayer {
  int kh, kw;
  int dilation = 1;
};

struct Extent {
  int height, width;
  friend bool operator==(const Extent&, const Extent&) = default;
};

// 1 + sum (k_i - 1) * d_i per axis for stride-1 linear stacks.
Extent linear_stack_support(const std::vector<StackLayer>& layers);

// Bounding box of entries above threshold; {0, 0} for an all-zero map.
Extent support_extent(const ContributionMap& map, double threshold = 0.0);

inline const std::vector<double>& erf_thresholds() {
  static const std::vector<double> t{0.2, 0.3, 0.5, 0.99};
  return t;
}

void write_map_csv(const ContributionMap& map, const std::string& path);
// Heatmap of log(1 + 1000 * value), grayscale.
void write_map_svg(const ContributionMap& map, const std::string& path);
// {"0.2": r, ...}
std::map<std::string, double> area_summary(const ContributionMap& map);

}  // namespace slak
