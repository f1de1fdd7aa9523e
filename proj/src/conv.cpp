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

#include "slak/conv.hpp"

#include <string>
#include <vector>

#include "slak/gemm.hpp"
#include "slak/kernels.hpp"

namespace slak {
namespace {

struct Geometry {
  int batch, in_h, in_w, out_h, out_w;
  Padding pad;
};

template <typename T>
Geometry check_shapes(const BasicTensor<T>& x, const BasicTensor<T>& w,
                      const BasicTensor<T>* bias, const ConvSpec& spec) {
  spec.validate();
  if (x.rank() != 4 || x.dim(1) != spec.in_channels) {
    throw Error(ErrorKind::kInvalidShape,
                "conv input " + shape_str(x.shape()) + " does not match weight " +
                    shape_str(w.shape()) + " (" + std::to_string(spec.in_channels) +
                    " input channels)");
  }
  if (w.shape() != spec.weight_shape()) {
    throw Error(ErrorKind::kInvalidShape,
                "conv weight " + shape_str(w.shape()) + " vs expected " +
                    shape_str(spec.weight_shape()) + " for input " + shape_str(x.shape()));
  }
  if (bias != nullptr &&
      (bias->rank() != 1 || bias->dim(0) != spec.out_channels)) {
    throw Error(ErrorKind::kInvalidShape,
                "conv bias " + shape_str(bias->shape()) + " vs " +
                    std::to_string(spec.out_channels) + " output channels");
  }
  const auto [oh, ow] = spec.output_hw(int(x.dim(2)), int(x.dim(3)));
  if (oh < 1 || ow < 1) {
    throw Error(ErrorKind::kInvalidShape,
                "conv input " + shape_str(x.shape()) + " too small for kernel " +
                    std::to_string(spec.kernel_h) + "x" +
                    std::to_string(spec.kernel_w));
  }
  return {int(x.dim(0)), int(x.dim(2)), int(x.dim(3)), oh, ow,
          spec.resolved_padding()};
}

bool use_tap_path(const ConvSpec& spec) {
  return spec.is_depthwise() && spec.stride == 1;
}

template <typename T>
void channel_taps(const BasicTensor<T>& w, int c, const ConvSpec& spec,
                  const Padding& pad, bool skip_zero,
                  std::vector<kernels::Tap<T>>& taps) {
  taps.clear();
  const T* k = w.data() + std::size_t(c) * spec.kernel_h * spec.kernel_w;
  for (int i = 0; i < spec.kernel_h; ++i) {
    for (int j = 0; j < spec.kernel_w; ++j) {
      const T v = k[i * spec.kernel_w + j];
      if (skip_zero && v == T(0)) continue;
      taps.push_back({i * spec.dilation - pad.top, j * spec.dilation - pad.left, v});
    }
  }
}

// Columns for one (batch, group): rows (ci, i, j), columns (oy, ox).
template <typename T>
void im2col(const T* x, int channels, const Geometry& g, const ConvSpec& spec,
            T* cols) {
  const int n = g.out_h * g.out_w;
  for (int ci = 0; ci < channels; ++ci) {
    const T* plane = x + std::size_t(ci) * g.in_h * g.in_w;
    for (int i = 0; i < spec.kernel_h; ++i) {
      for (int j = 0; j < spec.kernel_w; ++j) {
        T* row = cols + (std::size_t(ci * spec.kernel_h + i) * spec.kernel_w + j) * n;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * spec.stride + i * spec.dilation - g.pad.top;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * spec.stride + j * spec.dilation - g.pad.left;
            row[oy * g.out_w + ox] =
                (iy >= 0 && iy < g.in_h && ix >= 0 && ix < g.in_w)
                    ? plane[iy * g.in_w + ix]
                    : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, int channels, const Geometry& g, const ConvSpec& spec,
            T* dx) {
  const int n = g.out_h * g.out_w;
  for (int ci = 0; ci < channels; ++ci) {
    T* plane = dx + std::size_t(ci) * g.in_h * g.in_w;
    for (int i = 0; i < spec.kernel_h; ++i) {
      for (int j = 0; j < spec.kernel_w; ++j) {
        const T* row =
            cols + (std::size_t(ci * spec.kernel_h + i) * spec.kernel_w + j) * n;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * spec.stride + i * spec.dilation - g.pad.top;
          if (iy < 0 || iy >= g.in_h) continue;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * spec.stride + j * spec.dilation - g.pad.left;
            if (ix >= 0 && ix < g.in_w) plane[iy * g.in_w + ix] += row[oy * g.out_w + ox];
          }
        }
      }
    }
  }
}

bool is_pointwise(const ConvSpec& spec, const Padding& pad) {
  return spec.kernel_h == 1 && spec.kernel_w == 1 && spec.stride == 1 &&
         pad == Padding{};
}

}  // namespace

ConvSpec ConvSpec::depthwise(int channels, int kernel_h, int kernel_w,
                             int dilation) {
  ConvSpec s;
  s.in_channels = s.out_channels = s.groups = channels;
  s.kernel_h = kernel_h;
  s.kernel_w = kernel_w;
  s.dilation = dilation;
  return s;
}

ConvSpec ConvSpec::full(int in_channels, int out_channels, int kernel_h,
                        int kernel_w, int stride, Padding padding) {
  ConvSpec s;
  s.in_channels = in_channels;
  s.out_channels = out_channels;
  s.kernel_h = kernel_h;
  s.kernel_w = kernel_w;
  s.stride = stride;
  s.padding = padding;
  return s;
}

Padding ConvSpec::resolved_padding() const {
  if (padding) return *padding;
  const int th = dilation * (kernel_h - 1);
  const int tw = dilation * (kernel_w - 1);
  return {th / 2, th - th / 2, tw / 2, tw - tw / 2};
}

std::pair<int, int> ConvSpec::output_hw(int h, int w) const {
  const Padding p = resolved_padding();
  const int eff_h = dilation * (kernel_h - 1) + 1;
  const int eff_w = dilation * (kernel_w - 1) + 1;
  return {(h + p.top + p.bottom - eff_h) / stride + 1,
          (w + p.left + p.right - eff_w) / stride + 1};
}

void ConvSpec::validate() const {
  auto fail = [](const std::string& m) {
    throw Error(ErrorKind::kInvalidConfig, "ConvSpec: " + m);
  };
  if (in_channels < 1 || out_channels < 1 || groups < 1) fail("channels and groups must be >= 1");
  if (kernel_h < 1 || kernel_w < 1) fail("kernel extents must be >= 1");
  if (stride < 1 || dilation < 1) fail("stride and dilation must be >= 1");
  if (in_channels % groups != 0 || out_channels % groups != 0) {
    fail("channels " + std::to_string(in_channels) + "->" +
         std::to_string(out_channels) + " not divisible by groups " +
         std::to_string(groups));
  }
  if (!padding && stride != 1) fail("\"same\" padding requires stride 1");
  if (padding && (padding->top < 0 || padding->bottom < 0 || padding->left < 0 ||
                  padding->right < 0)) {
    fail("negative padding");
  }
}

template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& x, const BasicTensor<T>& w,
                              const BasicTensor<T>* bias, const ConvSpec& spec,
                              ConvOptions options) {
  const Geometry g = check_shapes(x, w, bias, spec);
  BasicTensor<T> y(Shape{g.batch, spec.out_channels, g.out_h, g.out_w});
  const std::size_t in_plane = std::size_t(g.in_h) * g.in_w;
  const std::size_t out_plane = std::size_t(g.out_h) * g.out_w;

  if (use_tap_path(spec)) {
    const auto& k = kernels::active<T>();
    const kernels::PlaneDims dims{g.in_h, g.in_w, g.out_h, g.out_w};
    std::vector<kernels::Tap<T>> taps;
    for (int c = 0; c < spec.out_channels; ++c) {
      channel_taps(w, c, spec, g.pad, options.skip_zero_taps, taps);
      for (int b = 0; b < g.batch; ++b) {
        const std::size_t plane = std::size_t(b) * spec.out_channels + c;
        k.dw_forward(x.data() + plane * in_plane, y.data() + plane * out_plane,
                     dims, taps.data(), taps.size());
      }
    }
  } else {
    const int cin_g = spec.in_channels / spec.groups;
    const int cout_g = spec.out_channels / spec.groups;
    const int kdim = cin_g * spec.kernel_h * spec.kernel_w;
    const int n = int(out_plane);
    const bool pointwise = is_pointwise(spec, g.pad);
    std::vector<T> cols(pointwise ? 0 : std::size_t(kdim) * n);
    for (int b = 0; b < g.batch; ++b) {
      for (int grp = 0; grp < spec.groups; ++grp) {
        const T* xin = x.data() + (std::size_t(b) * spec.in_channels + grp * cin_g) * in_plane;
        const T* src = xin;
        if (!pointwise) {
          im2col(xin, cin_g, g, spec, cols.data());
          src = cols.data();
        }
        T* yout = y.data() + (std::size_t(b) * spec.out_channels + grp * cout_g) * out_plane;
        gemm<T>(Trans::kNo, Trans::kNo, cout_g, n, kdim, T(1),
                w.data() + std::size_t(grp) * cout_g * kdim, kdim, src, n, T(0),
                yout, n);
      }
    }
  }
  if (bias != nullptr) {
    for (int b = 0; b < g.batch; ++b) {
      for (int c = 0; c < spec.out_channels; ++c) {
        T* p = y.data() + (std::size_t(b) * spec.out_channels + c) * out_plane;
        const T v = (*bias)[c];
        for (std::size_t i = 0; i < out_plane; ++i) p[i] += v;
      }
    }
  }
  debug_check_finite(y, "conv2d_forward");
  return y;
}

template <typename T>
BasicTensor<T> conv2d_reference(const BasicTensor<T>& x,
                                const BasicTensor<T>& w,
                                const BasicTensor<T>* bias,
                                const ConvSpec& spec) {
  const Geometry g = check_shapes(x, w, bias, spec);
  BasicTensor<T> y(Shape{g.batch, spec.out_channels, g.out_h, g.out_w});
  const int cin_g = spec.in_channels / spec.groups;
  const int cout_g = spec.out_channels / spec.groups;
  for (int b = 0; b < g.batch; ++b) {
    for (int co = 0; co < spec.out_channels; ++co) {
      const int grp = co / cout_g;
      for (int oy = 0; oy < g.out_h; ++oy) {
        for (int ox = 0; ox < g.out_w; ++ox) {
          T acc = 0;
          for (int ci = 0; ci < cin_g; ++ci) {
            for (int i = 0; i < spec.kernel_h; ++i) {
              const int iy = oy * spec.stride + i * spec.dilation - g.pad.top;
              for (int j = 0; j < spec.kernel_w; ++j) {
                const int ix = ox * spec.stride + j * spec.dilation - g.pad.left;
                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                acc += w.at(co, ci, i, j) * x.at(b, grp * cin_g + ci, iy, ix);
              }
            }
          }
          if (bias != nullptr) acc += (*bias)[co];
          y.at(b, co, oy, ox) = acc;
        }
      }
    }
  }
  return y;
}

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& x, const BasicTensor<T>& w,
                             const ConvSpec& spec, const BasicTensor<T>& dy,
                             bool with_bias, ConvOptions options) {
  const Geometry g = check_shapes(x, w, static_cast<const BasicTensor<T>*>(nullptr), spec);
  const Shape out_shape{g.batch, spec.out_channels, g.out_h, g.out_w};
  if (dy.shape() != out_shape) {
    throw Error(ErrorKind::kInvalidShape,
                "conv2d_backward: dy " + shape_str(dy.shape()) +
                    " vs forward output " + shape_str(out_shape));
  }
  ConvGrads<T> grads{BasicTensor<T>(x.shape()), BasicTensor<T>(w.shape()), {}};
  const std::size_t in_plane = std::size_t(g.in_h) * g.in_w;
  const std::size_t out_plane = std::size_t(g.out_h) * g.out_w;

  if (use_tap_path(spec)) {
    const auto& k = kernels::active<T>();
    const kernels::PlaneDims dims{g.in_h, g.in_w, g.out_h, g.out_w};
    std::vector<kernels::Tap<T>> taps, active_taps;
    const std::size_t ksize = std::size_t(spec.kernel_h) * spec.kernel_w;
    for (int c = 0; c < spec.out_channels; ++c) {
      channel_taps(w, c, spec, g.pad, false, taps);
      const std::vector<kernels::Tap<T>>* input_taps = &taps;
      if (options.skip_zero_taps) {
        channel_taps(w, c, spec, g.pad, true, active_taps);
        input_taps = &active_taps;
      }
      T* dwc = grads.dw.data() + std::size_t(c) * ksize;
      for (int b = 0; b < g.batch; ++b) {
        const std::size_t plane = std::size_t(b) * spec.out_channels + c;
        k.dw_backward_input(dy.data() + plane * out_plane,
                            grads.dx.data() + plane * in_plane, dims,
                            input_taps->data(), input_taps->size());
        k.dw_backward_weight(x.data() + plane * in_plane,
                             dy.data() + plane * out_plane, dims, taps.data(),
                             taps.size(), dwc);
      }
    }
  } else {
    const int cin_g = spec.in_channels / spec.groups;
    const int cout_g = spec.out_channels / spec.groups;
    const int kdim = cin_g * spec.kernel_h * spec.kernel_w;
    const int n = int(out_plane);
    const bool pointwise = is_pointwise(spec, g.pad);
    std::vector<T> cols(pointwise ? 0 : std::size_t(kdim) * n);
    std::vector<T> dcols(pointwise ? 0 : std::size_t(kdim) * n);
    for (int b = 0; b < g.batch; ++b) {
      for (int grp = 0; grp < spec.groups; ++grp) {
        const std::size_t in_off = (std::size_t(b) * spec.in_channels + grp * cin_g) * in_plane;
        const T* xin = x.data() + in_off;
        const T* dyg = dy.data() + (std::size_t(b) * spec.out_channels + grp * cout_g) * out_plane;
        const T* wg = w.data() + std::size_t(grp) * cout_g * kdim;
        T* dwg = grads.dw.data() + std::size_t(grp) * cout_g * kdim;
        if (pointwise) {
          gemm<T>(Trans::kNo, Trans::kYes, cout_g, kdim, n, T(1), dyg, n, xin, n,
                  T(1), dwg, kdim);
          gemm<T>(Trans::kYes, Trans::kNo, kdim, n, cout_g, T(1), wg, kdim, dyg,
                  n, T(0), grads.dx.data() + in_off, n);
        } else {
          im2col(xin, cin_g, g, spec, cols.data());
          gemm<T>(Trans::kNo, Trans::kYes, cout_g, kdim, n, T(1), dyg, n,
                  cols.data(), n, T(1), dwg, kdim);
          gemm<T>(Trans::kYes, Trans::kNo, kdim, n, cout_g, T(1), wg, kdim, dyg,
                  n, T(0), dcols.data(), n);
          col2im(dcols.data(), cin_g, g, spec, grads.dx.data() + in_off);
        }
      }
    }
  }
  if (with_bias) {
    grads.db = BasicTensor<T>(Shape{spec.out_channels});
    for (int b = 0; b < g.batch; ++b) {
      for (int c = 0; c < spec.out_channels; ++c) {
        const T* p = dy.data() + (std::size_t(b) * spec.out_channels + c) * out_plane;
        T acc = 0;
        for (std::size_t i = 0; i < out_plane; ++i) acc += p[i];
        grads.db[c] += acc;
      }
    }
  }
  return grads;
}

template <typename T>
BasicTensor<T> sparse_dw_conv_forward(const BasicTensor<T>& x,
                                      const BasicTensor<T>& w,
                                      const BasicTensor<T>& mask,
                                      const ConvSpec& spec) {
  if (!spec.is_depthwise()) {
    throw Error(ErrorKind::kInvalidConfig,
                "sparse_dw_conv_forward: spec is not depthwise");
  }
  require_same_shape(w, mask, "sparse_dw_conv_forward mask");
  BasicTensor<T> masked(w.shape());
  for (std::size_t i = 0; i < w.numel(); ++i) {
    if (mask[i] != T(0) && mask[i] != T(1)) {
      throw Error(ErrorKind::kInvalidMask,
                  "mask value at flat index " + std::to_string(i) +
                      " is neither 0 nor 1");
    }
    masked[i] = mask[i] == T(1) ? w[i] : T(0);
  }
  return conv2d_forward(x, masked, static_cast<const BasicTensor<T>*>(nullptr), spec, ConvOptions{true});
}

template <typename T>
BasicTensor<T> decomposed_dw_forward(const BasicTensor<T>& x,
                                     const BasicTensor<T>& w_long_h,
                                     const BasicTensor<T>& w_long_w,
                                     const BasicTensor<T>& w_small,
                                     BatchNormView<T> bn_a,
                                     BatchNormView<T> bn_b,
                                     BatchNormView<T> bn_c, Mode mode) {
  auto branch = [&](const BasicTensor<T>& w, BatchNormView<T> bn) {
    if (w.rank() != 4 || x.rank() != 4 || w.dim(0) != x.dim(1) || w.dim(1) != 1) {
      throw Error(ErrorKind::kInvalidShape,
                  "decomposed_dw_forward: kernel " + shape_str(w.shape()) +
                      " is not depthwise for input " + shape_str(x.shape()));
    }
    const auto spec = ConvSpec::depthwise(int(x.dim(1)), int(w.dim(2)), int(w.dim(3)));
    return batchnorm_forward(conv2d_forward(x, w, static_cast<const BasicTensor<T>*>(nullptr), spec), bn, mode);
  };
  BasicTensor<T> y = branch(w_long_h, bn_a);
  const BasicTensor<T> b = branch(w_long_w, bn_b);
  const BasicTensor<T> c = branch(w_small, bn_c);
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] += b[i] + c[i];
  return y;
}

template <typename T>
BasicTensor<T> seq_decomposed_dw_forward(const BasicTensor<T>& x,
                                         const BasicTensor<T>& w_long_h,
                                         const BasicTensor<T>& w_long_w) {
  auto conv = [](const BasicTensor<T>& in, const BasicTensor<T>& w) {
    if (w.rank() != 4 || in.rank() != 4 || w.dim(0) != in.dim(1) || w.dim(1) != 1) {
      throw Error(ErrorKind::kInvalidShape,
                  "seq_decomposed_dw_forward: kernel " + shape_str(w.shape()) +
                      " is not depthwise for input " + shape_str(in.shape()));
    }
    return conv2d_forward(
        in, w, static_cast<const BasicTensor<T>*>(nullptr),
        ConvSpec::depthwise(int(in.dim(1)), int(w.dim(2)), int(w.dim(3))));
  };
  return conv(conv(x, w_long_h), w_long_w);
}

template <typename T>
BasicTensor<T> embed_kernel(const BasicTensor<T>& w, int size) {
  const int kh = int(w.dim(2)), kw = int(w.dim(3));
  if (kh > size || kw > size) {
    throw Error(ErrorKind::kInvalidShape,
                "embed_kernel: " + shape_str(w.shape()) + " larger than " +
                    std::to_string(size));
  }
  BasicTensor<T> out(Shape{w.dim(0), w.dim(1), size, size});
  const int oy = (size - 1) / 2 - (kh - 1) / 2;
  const int ox = (size - 1) / 2 - (kw - 1) / 2;
  for (std::int64_t c = 0; c < w.dim(0); ++c) {
    for (std::int64_t g = 0; g < w.dim(1); ++g) {
      for (int i = 0; i < kh; ++i) {
        for (int j = 0; j < kw; ++j) out.at(c, g, oy + i, ox + j) = w.at(c, g, i, j);
      }
    }
  }
  return out;
}

#define SLAK_INSTANTIATE(T)                                                    \
  template BasicTensor<T> conv2d_forward(const BasicTensor<T>&,                \
                                         const BasicTensor<T>&,                \
                                         const BasicTensor<T>*,                \
                                         const ConvSpec&, ConvOptions);        \
  template BasicTensor<T> conv2d_reference(const BasicTensor<T>&,              \
                                           const BasicTensor<T>&,              \
                                           const BasicTensor<T>*,              \
                                           const ConvSpec&);                   \
  template ConvGrads<T> conv2d_backward(const BasicTensor<T>&,                 \
                                        const BasicTensor<T>&,                 \
                                        const ConvSpec&,                       \
                                        const BasicTensor<T>&, bool,           \
                                        ConvOptions);                          \
  template BasicTensor<T> sparse_dw_conv_forward(                              \
      const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,     \
      const ConvSpec&);                                                        \
  template BasicTensor<T> decomposed_dw_forward(                               \
      const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,     \
      const BasicTensor<T>&, BatchNormView<T>, BatchNormView<T>,               \
      BatchNormView<T>, Mode);                                                 \
  template BasicTensor<T> seq_decomposed_dw_forward(                           \
      const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);    \
  template BasicTensor<T> embed_kernel(const BasicTensor<T>&, int);

SLAK_INSTANTIATE(float)
SLAK_INSTANTIATE(double)

#undef SLAK_INSTANTIATE

}  // namespace slak
