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

#include <vector>

#include "slak/tensor.hpp"

namespace slak {

enum class Mode { kTrain, kEval };

// Non-owning view over batch-norm tensors, so layers can keep their
// parameters in a shared store.
template <typename T>
struct BatchNormView {
  const BasicTensor<T>* gamma;
  const BasicTensor<T>* beta;
  BasicTensor<T>* running_mean;
  BasicTensor<T>* running_var;
  double eps;
  double momentum;
};

template <typename T>
struct BatchNormState {
  BasicTensor<T> gamma, beta, running_mean, running_var;
  double eps = 1e-5;
  double momentum = 0.1;

  // gamma = 1, beta = 0, running statistics (0, 1).
  static BatchNormState identity(int channels);

  int channels() const { return static_cast<int>(gamma.numel()); }
  BatchNormView<T> view() {
    return {&gamma, &beta, &running_mean, &running_var, eps, momentum};
  }
};

template <typename T>
struct BatchNormCache {
  BasicTensor<T> xhat;
  std::vector<T> inv_std;
  Mode mode = Mode::kEval;
};

template <typename T>
struct NormGrads {
  BasicTensor<T> dx, dgamma, dbeta;
};

// Per-channel normalization of (B, C, H, W). Train mode uses batch
// statistics and moves the running ones by `momentum` (running variance is
// the unbiased estimate); eval mode applies the running statistics.
template <typename T>
BasicTensor<T> batchnorm_forward(const BasicTensor<T>& x, BatchNormView<T> bn,
                                 Mode mode, BatchNormCache<T>* cache = nullptr);

template <typename T>
NormGrads<T> batchnorm_backward(const BatchNormCache<T>& cache,
                                const BasicTensor<T>& gamma,
                                const BasicTensor<T>& dy);

template <typename T>
struct LayerNormState {
  BasicTensor<T> gamma, beta;
  double eps = 1e-6;

  static LayerNormState identity(int channels);
};

template <typename T>
struct LayerNormCache {
  BasicTensor<T> xhat;
  std::vector<T> inv_std;  // one per (b, h, w) site
};

// Normalizes over the channel axis at every site of a (B, C, H, W) or (B, C)
// tensor. Identical in train and eval.
template <typename T>
BasicTensor<T> layernorm_forward(const BasicTensor<T>& x,
                                 const BasicTensor<T>& gamma,
                                 const BasicTensor<T>& beta, double eps,
                                 LayerNormCache<T>* cache = nullptr);

template <typename T>
NormGrads<T> layernorm_backward(const LayerNormCache<T>& cache,
                                const BasicTensor<T>& gamma,
                                const BasicTensor<T>& dy);

// Exact GELU, x * Phi(x).
template <typename T>
BasicTensor<T> gelu_forward(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> gelu_backward(const BasicTensor<T>& x, const BasicTensor<T>& dy);

}  // namespace slak
