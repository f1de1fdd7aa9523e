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

#include "slak/norm.hpp"

#include <cmath>

#include "slak/kernels.hpp"

namespace slak {
namespace {

struct Nchw {
  std::int64_t b, c, hw;
};

template <typename T>
Nchw nchw_of(const BasicTensor<T>& x, const char* what) {
  if (x.rank() == 4) return {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)};
  if (x.rank() == 2) return {x.dim(0), x.dim(1), 1};
  throw Error(ErrorKind::kInvalidShape,
              std::string(what) + ": expected rank 2 or 4, got " +
                  shape_str(x.shape()));
}

template <typename T>
void require_channels(const BasicTensor<T>& p, std::int64_t c, const char* what) {
  if (static_cast<std::int64_t>(p.numel()) != c) {
    throw Error(ErrorKind::kInvalidShape,
                std::string(what) + ": parameter has " +
                    std::to_string(p.numel()) + " channels, input has " +
                    std::to_string(c));
  }
}

}  // namespace

template <typename T>
BatchNormState<T> BatchNormState<T>::identity(int channels) {
  const Shape s{channels};
  return {BasicTensor<T>::ones(s), BasicTensor<T>::zeros(s),
          BasicTensor<T>::zeros(s), BasicTensor<T>::ones(s)};
}

template <typename T>
LayerNormState<T> LayerNormState<T>::identity(int channels) {
  const Shape s{channels};
  return {BasicTensor<T>::ones(s), BasicTensor<T>::zeros(s)};
}

namespace {

// Plane reductions with 8 independent partial sums so the loops vectorize.
template <typename T>
double lane_sum(const T* p, std::int64_t n, T shift) {
  T acc[8] = {};
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (int k = 0; k < 8; ++k) acc[k] += p[i + k] - shift;
  }
  double s = 0.0;
  for (int k = 0; k < 8; ++k) s += acc[k];
  for (; i < n; ++i) s += p[i] - shift;
  return s;
}

template <typename T>
double lane_sqdev(const T* p, std::int64_t n, T mean) {
  T acc[8] = {};
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (int k = 0; k < 8; ++k) {
      const T d = p[i + k] - mean;
      acc[k] += d * d;
    }
  }
  double s = 0.0;
  for (int k = 0; k < 8; ++k) s += acc[k];
  for (; i < n; ++i) {
    const double d = double(p[i]) - double(mean);
    s += d * d;
  }
  return s;
}

}  // namespace

template <typename T>
BasicTensor<T> batchnorm_forward(const BasicTensor<T>& x, BatchNormView<T> bn,
                                 Mode mode, BatchNormCache<T>* cache) {
  const auto [nb, nc, hw] = nchw_of(x, "batchnorm_forward");
  require_channels(*bn.gamma, nc, "batchnorm_forward");
  require_channels(*bn.running_mean, nc, "batchnorm_forward");
  const std::int64_t m = nb * hw;
  if (mode == Mode::kTrain && m < 2) {
    throw Error(ErrorKind::kDegenerateStatistics,
                "batchnorm_forward: train mode needs more than one value per "
                "channel, got shape " + shape_str(x.shape()));
  }
  BasicTensor<T> y(x.shape());
  BasicTensor<T> xhat(x.shape());
  std::vector<T> inv_std(static_cast<std::size_t>(nc));
  for (std::int64_t c = 0; c < nc; ++c) {
    double mean, var;
    if (mode == Mode::kTrain) {
      double sum = 0.0;
      for (std::int64_t b = 0; b < nb; ++b) {
        sum += lane_sum(x.data() + (b * nc + c) * hw, hw, T(0));
      }
      mean = sum / double(m);
      double sq = 0.0;
      for (std::int64_t b = 0; b < nb; ++b) {
        sq += lane_sqdev(x.data() + (b * nc + c) * hw, hw, T(mean));
      }
      var = sq / double(m);
      auto& rm = (*bn.running_mean)[c];
      auto& rv = (*bn.running_var)[c];
      rm = T((1.0 - bn.momentum) * rm + bn.momentum * mean);
      rv = T((1.0 - bn.momentum) * rv + bn.momentum * var * double(m) / double(m - 1));
    } else {
      mean = (*bn.running_mean)[c];
      var = (*bn.running_var)[c];
    }
    const T rstd = T(1.0 / std::sqrt(var + bn.eps));
    inv_std[c] = rstd;
    const T g = (*bn.gamma)[c];
    const T be = (*bn.beta)[c];
    const T mu = T(mean);
    for (std::int64_t b = 0; b < nb; ++b) {
      const std::int64_t off = (b * nc + c) * hw;
      const T* p = x.data() + off;
      T* xh = xhat.data() + off;
      T* q = y.data() + off;
      for (std::int64_t i = 0; i < hw; ++i) {
        xh[i] = (p[i] - mu) * rstd;
        q[i] = g * xh[i] + be;
      }
    }
  }
  if (cache != nullptr) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
    cache->mode = mode;
  }
  debug_check_finite(y, "batchnorm_forward");
  return y;
}

template <typename T>
NormGrads<T> batchnorm_backward(const BatchNormCache<T>& cache,
                                const BasicTensor<T>& gamma,
                                const BasicTensor<T>& dy) {
  require_same_shape(dy, cache.xhat, "batchnorm_backward");
  const auto [nb, nc, hw] = nchw_of(dy, "batchnorm_backward");
  NormGrads<T> g{BasicTensor<T>(dy.shape()), BasicTensor<T>(Shape{nc}),
                 BasicTensor<T>(Shape{nc})};
  const double m = double(nb * hw);
  for (std::int64_t c = 0; c < nc; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::int64_t b = 0; b < nb; ++b) {
      const std::int64_t off = (b * nc + c) * hw;
      sum_dy += lane_sum(dy.data() + off, hw, T(0));
      sum_dy_xhat += kernels::active<T>().dot(dy.data() + off,
                                              cache.xhat.data() + off,
                                              static_cast<std::size_t>(hw));
    }
    g.dgamma[c] = T(sum_dy_xhat);
    g.dbeta[c] = T(sum_dy);
    const T scale = gamma[c] * cache.inv_std[c];
    for (std::int64_t b = 0; b < nb; ++b) {
      const std::int64_t off = (b * nc + c) * hw;
      if (cache.mode == Mode::kEval) {
        for (std::int64_t i = 0; i < hw; ++i) g.dx[off + i] = scale * dy[off + i];
      } else {
        const T mean_dy = T(sum_dy / m);
        const T mean_dy_xhat = T(sum_dy_xhat / m);
        for (std::int64_t i = 0; i < hw; ++i) {
          g.dx[off + i] =
              scale * (dy[off + i] - mean_dy - cache.xhat[off + i] * mean_dy_xhat);
        }
      }
    }
  }
  return g;
}

template <typename T>
BasicTensor<T> layernorm_forward(const BasicTensor<T>& x,
                                 const BasicTensor<T>& gamma,
                                 const BasicTensor<T>& beta, double eps,
                                 LayerNormCache<T>* cache) {
  const auto [nb, nc, hw] = nchw_of(x, "layernorm_forward");
  require_channels(gamma, nc, "layernorm_forward");
  require_channels(beta, nc, "layernorm_forward");
  BasicTensor<T> y(x.shape());
  BasicTensor<T> xhat(x.shape());
  std::vector<T> inv_std(static_cast<std::size_t>(nb * hw));
  std::vector<T> mean(static_cast<std::size_t>(hw));
  std::vector<T> var(static_cast<std::size_t>(hw));
  const T inv_c = T(1) / T(nc);
  for (std::int64_t b = 0; b < nb; ++b) {
    const T* xb = x.data() + b * nc * hw;
    std::fill(mean.begin(), mean.end(), T(0));
    std::fill(var.begin(), var.end(), T(0));
    // Channel-outer loops keep the spatial axis contiguous.
    for (std::int64_t c = 0; c < nc; ++c) {
      const T* p = xb + c * hw;
      for (std::int64_t i = 0; i < hw; ++i) mean[i] += p[i];
    }
    for (auto& v : mean) v *= inv_c;
    for (std::int64_t c = 0; c < nc; ++c) {
      const T* p = xb + c * hw;
      for (std::int64_t i = 0; i < hw; ++i) {
        const T d = p[i] - mean[i];
        var[i] += d * d;
      }
    }
    T* rs = inv_std.data() + b * hw;
    for (std::int64_t i = 0; i < hw; ++i) {
      rs[i] = T(1.0 / std::sqrt(double(var[i] * inv_c) + eps));
    }
    for (std::int64_t c = 0; c < nc; ++c) {
      const std::int64_t off = (b * nc + c) * hw;
      const T* p = x.data() + off;
      T* xh = xhat.data() + off;
      T* q = y.data() + off;
      const T g = gamma[c], be = beta[c];
      for (std::int64_t i = 0; i < hw; ++i) {
        xh[i] = (p[i] - mean[i]) * rs[i];
        q[i] = g * xh[i] + be;
      }
    }
  }
  if (cache != nullptr) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  debug_check_finite(y, "layernorm_forward");
  return y;
}

template <typename T>
NormGrads<T> layernorm_backward(const LayerNormCache<T>& cache,
                                const BasicTensor<T>& gamma,
                                const BasicTensor<T>& dy) {
  require_same_shape(dy, cache.xhat, "layernorm_backward");
  const auto [nb, nc, hw] = nchw_of(dy, "layernorm_backward");
  NormGrads<T> g{BasicTensor<T>(dy.shape()), BasicTensor<T>(Shape{nc}),
                 BasicTensor<T>(Shape{nc})};
  std::vector<T> mean_g(static_cast<std::size_t>(hw));
  std::vector<T> mean_gx(static_cast<std::size_t>(hw));
  const T inv_c = T(1) / T(nc);
  for (std::int64_t b = 0; b < nb; ++b) {
    std::fill(mean_g.begin(), mean_g.end(), T(0));
    std::fill(mean_gx.begin(), mean_gx.end(), T(0));
    for (std::int64_t c = 0; c < nc; ++c) {
      const std::int64_t off = (b * nc + c) * hw;
      const T* d = dy.data() + off;
      const T* xh = cache.xhat.data() + off;
      const T gm = gamma[c];
      T sum_dx = 0, sum_d = 0;
      for (std::int64_t i = 0; i < hw; ++i) {
        const T gi = d[i] * gm;
        mean_g[i] += gi;
        mean_gx[i] += gi * xh[i];
        sum_dx += d[i] * xh[i];
        sum_d += d[i];
      }
      g.dgamma[c] += sum_dx;
      g.dbeta[c] += sum_d;
    }
    const T* rs = cache.inv_std.data() + b * hw;
    for (std::int64_t c = 0; c < nc; ++c) {
      const std::int64_t off = (b * nc + c) * hw;
      const T* d = dy.data() + off;
      const T* xh = cache.xhat.data() + off;
      T* out = g.dx.data() + off;
      const T gm = gamma[c];
      for (std::int64_t i = 0; i < hw; ++i) {
        out[i] = rs[i] * (d[i] * gm - mean_g[i] * inv_c - xh[i] * mean_gx[i] * inv_c);
      }
    }
  }
  return g;
}

template <typename T>
BasicTensor<T> gelu_forward(const BasicTensor<T>& x) {
  BasicTensor<T> y(x.shape());
  kernels::active<T>().gelu_forward(x.data(), y.data(), x.numel());
  return y;
}

template <typename T>
BasicTensor<T> gelu_backward(const BasicTensor<T>& x, const BasicTensor<T>& dy) {
  require_same_shape(x, dy, "gelu_backward");
  BasicTensor<T> dx(x.shape());
  kernels::active<T>().gelu_backward(x.data(), dy.data(), dx.data(), x.numel());
  return dx;
}

#define SLAK_INSTANTIATE(T)                                                    \
  template struct BatchNormState<T>;                                           \
  template struct LayerNormState<T>;                                           \
  template BasicTensor<T> batchnorm_forward(const BasicTensor<T>&,             \
                                            BatchNormView<T>, Mode,            \
                                            BatchNormCache<T>*);               \
  template NormGrads<T> batchnorm_backward(const BatchNormCache<T>&,           \
                                           const BasicTensor<T>&,              \
                                           const BasicTensor<T>&);             \
  template BasicTensor<T> layernorm_forward(                                   \
      const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,     \
      double, LayerNormCache<T>*);                                             \
  template NormGrads<T> layernorm_backward(const LayerNormCache<T>&,           \
                                           const BasicTensor<T>&,              \
                                           const BasicTensor<T>&);             \
  template BasicTensor<T> gelu_forward(const BasicTensor<T>&);                 \
  template BasicTensor<T> gelu_backward(const BasicTensor<T>&,                 \
                                        const BasicTensor<T>&);

SLAK_INSTANTIATE(float)
SLAK_INSTANTIATE(double)

#undef SLAK_INSTANTIATE

}  // namespace slak
