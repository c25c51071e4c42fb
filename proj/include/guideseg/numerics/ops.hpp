// Copyright (c) 2026, The guideseg Authors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable operations recorded on a Graph.
//
// Broadcasting is limited to bias adds and scalar ops; every other binary op
// requires identical shapes and throws ConfigError naming both shapes.

#pragma once

#include <cstddef>

#include "guideseg/numerics/graph.hpp"
#include "guideseg/numerics/kernels.hpp"

namespace guideseg::num {

template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> sub(Var<T> a, Var<T> b);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);
template <typename T>
Var<T> scale(Var<T> a, T s);
template <typename T>
Var<T> add_scalar(Var<T> a, T s);
template <typename T>
Var<T> clamp(Var<T> a, T lo, T hi);

/// Sum of all entries, shape [1].
template <typename T>
Var<T> sum(Var<T> a);
template <typename T>
Var<T> mean(Var<T> a);

template <typename T>
Var<T> reshape(Var<T> a, Shape shape);

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);
/// x[n,d] + bias[d] on every row.
template <typename T>
Var<T> add_row_bias(Var<T> x, Var<T> bias);

template <typename T>
Var<T> relu(Var<T> a);
/// Exact (erf-based) GELU.
template <typename T>
Var<T> gelu(Var<T> a);
template <typename T>
Var<T> sigmoid(Var<T> a);

/// Normalises each row of x[n,d], then applies gamma[d] and beta[d].
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5));
/// Normalises x[C,H,W] over `groups` channel groups, then applies
/// per-channel gamma[C] and beta[C].
template <typename T>
Var<T> group_norm(Var<T> x, Var<T> gamma, Var<T> beta, std::size_t groups, T eps = T(1e-5));

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> bias, std::size_t stride, std::size_t pad);
template <typename T>
Var<T> max_pool2x2(Var<T> x);
template <typename T>
Var<T> bilinear_resize(Var<T> x, std::size_t out_h, std::size_t out_w);
/// Stacks a[C1,H,W] and b[C2,H,W] into [C1+C2,H,W].
template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b);

/// Splits x[C,H,W] into non-overlapping patch rows: [(H/p)(W/p), C*p*p].
template <typename T>
Var<T> patchify(Var<T> x, std::size_t patch);

template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v);
/// Attention applied independently to `heads` column blocks of Q, K, V.
template <typename T>
Var<T> multi_head_attention(Var<T> q, Var<T> k, Var<T> v, std::size_t heads);

}  // namespace guideseg::num
