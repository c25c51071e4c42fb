// Copyright (c) 2026, The guideseg Authors
// SPDX-License-Identifier: Apache-2.0
//
// Forward and backward kernels on plain tensors. The differentiable
// wrappers in ops.hpp call these; tests use the forward kernels directly.
//
// Layout conventions: images and feature maps are [C,H,W]; token and
// projection matrices are [rows, cols]; all buffers are row-major.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "guideseg/numerics/tensor.hpp"

namespace guideseg::num {

/// Cross-correlation of x[C_in,H,W] with w[C_out,C_in,kh,kw] plus bias[C_out].
/// Output is [C_out, (H+2pad-kh)/stride+1, (W+2pad-kw)/stride+1].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::size_t stride,
                 std::size_t pad);

/// Bilinear resampling of x[C,H,W] with the align-corners-false convention
/// (source = (dst + 0.5) * in/out - 0.5, clamped to the valid range).
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::size_t out_h, std::size_t out_w);

/// a[n,k] * b[k,m].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Row-wise softmax of x[n,m].
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x);

/// softmax(Q K^T / sqrt(dh)) V, single head, Q,K,V of shape [n,dh].
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v);

/// 2x2 max pooling with stride 2 on x[C,H,W] (H, W even).
template <typename T>
Tensor<T> max_pool2x2(const Tensor<T>& x);

template <typename T>
T sigmoid(T x);

namespace detail {

/// Accumulates gradients of conv2d into gx, gw, gb (each may be empty).
template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, std::span<const T> gout,
                     std::size_t stride, std::size_t pad, std::span<T> gx, std::span<T> gw,
                     std::span<T> gb);

template <typename T>
void bilinear_resize_backward(const Shape& in_shape, std::size_t out_h, std::size_t out_w,
                              std::span<const T> gout, std::span<T> gin);

/// Multi-head attention over column blocks of width d/heads. Returns the
/// output and stores each head's probability matrix in `probs` when given.
template <typename T>
Tensor<T> mha_forward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                      std::size_t heads, std::vector<std::vector<T>>* probs);

template <typename T>
void mha_backward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                  const std::vector<std::vector<T>>& probs, std::span<const T> gout,
                  std::span<T> gq, std::span<T> gk, std::span<T> gv);

}  // namespace detail

}  // namespace guideseg::num
