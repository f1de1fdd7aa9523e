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

#include <optional>
#include <utility>

#include "slak/norm.hpp"
#include "slak/tensor.hpp"

namespace slak {

struct Padding {
  int top = 0, bottom = 0, left = 0, right = 0;
  friend bool operator==(const Padding&, const Padding&) = default;
};

// Geometry of one 2-D convolution. Weights are (out, in / groups, kh, kw).
struct ConvSpec {
  int in_channels = 1;
  int out_channels = 1;
  int groups = 1;
  int kernel_h = 1;
  int kernel_w = 1;
  int stride = 1;
  int dilation = 1;
  // nullopt means "same": total padding dilation * (k - 1) per axis, the odd
  // cell going bottom/right. Only valid with stride 1.
  std::optional<Padding> padding;

  static ConvSpec depthwise(int channels, int kernel_h, int kernel_w,
                            int dilation = 1);
  static ConvSpec full(int in_channels, int out_channels, int kernel_h,
                       int kernel_w, int stride, Padding padding = {});

  bool is_depthwise() const {
    return groups == in_channels && in_channels == out_channels;
  }
  Padding resolved_padding() const;
  std::pair<int, int> output_hw(int h, int w) const;
  Shape weight_shape() const {
    return {out_channels, in_channels / groups, kernel_h, kernel_w};
  }
  // Throws kInvalidConfig on non-positive sizes, indivisible groups or
  // "same" padding with stride > 1.
  void validate() const;
};

struct ConvOptions {
  // Drop zero weights from the depthwise tap list. Numerically identical to
  // the dense path for finite inputs, but the work scales with nnz.
  bool skip_zero_taps = false;
};

// Cross-correlation (no kernel flip). bias may be null.
template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& x, const BasicTensor<T>& w,
                              const BasicTensor<T>* bias, const ConvSpec& spec,
                              ConvOptions options = {});

// Naive loops, one output element at a time, accumulating over
// (input channel, kernel row, kernel column) in that order.
template <typename T>
BasicTensor<T> conv2d_reference(const BasicTensor<T>& x,
                                const BasicTensor<T>& w,
                                const BasicTensor<T>* bias,
                                const ConvSpec& spec);

template <typename T>
struct ConvGrads {
  BasicTensor<T> dx, dw, db;
};

// db is left empty when with_bias is false.
template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& x, const BasicTensor<T>& w,
                             const ConvSpec& spec, const BasicTensor<T>& dy,
                             bool with_bias = true, ConvOptions options = {});

// Depthwise conv of w masked by a binary mask, skipping inactive taps.
// Throws kInvalidMask if the mask has values other than 0 and 1.
template <typename T>
BasicTensor<T> sparse_dw_conv_forward(const BasicTensor<T>& x,
                                      const BasicTensor<T>& w,
                                      const BasicTensor<T>& mask,
                                      const ConvSpec& spec);

// BN_a(conv(x, w_long_h)) + BN_b(conv(x, w_long_w)) + BN_c(conv(x, w_small)),
// all depthwise, stride 1, "same" padding.
template <typename T>
BasicTensor<T> decomposed_dw_forward(const BasicTensor<T>& x,
                                     const BasicTensor<T>& w_long_h,
                                     const BasicTensor<T>& w_long_w,
                                     const BasicTensor<T>& w_small,
                                     BatchNormView<T> bn_a,
                                     BatchNormView<T> bn_b,
                                     BatchNormView<T> bn_c, Mode mode);

// conv(conv(x, w_long_h), w_long_w), each depthwise with "same" padding.
template <typename T>
BasicTensor<T> seq_decomposed_dw_forward(const BasicTensor<T>& x,
                                         const BasicTensor<T>& w_long_h,
                                         const BasicTensor<T>& w_long_w);

// Zero-pads a (C, 1, kh, kw) kernel into (C, 1, size, size), centered the
// same way "same" padding centers it.
template <typename T>
BasicTensor<T> embed_kernel(const BasicTensor<T>& w, int size);

}  // namespace slak
