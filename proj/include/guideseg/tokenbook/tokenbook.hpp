// Copyright (c) 2026, The guideseg Authors
// SPDX-License-Identifier: Apache-2.0
//
// TokenBook: a learnable bank of K prototypes with aggregation weights that
// turns encoder tokens into a spatial guide mask.
//
// For every token position i the score is
//
//   s_i = sum_k alpha_k * sim(T_i, P_k)
//
// and the guide is sigmoid(s / temperature) at token resolution, bilinearly
// resized to the requested output size. Cosine similarity divides by
// |T_i| |P_k| + 1e-8.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "guideseg/encoder/encoder.hpp"
#include "guideseg/numerics/graph.hpp"

namespace guideseg::tokenbook {

using num::Graph;
using num::Tensor;
using num::Var;

enum class Similarity { kCosine, kDot };

std::string to_string(Similarity s);
Similarity similarity_from_string(const std::string& s);

struct TokenBookConfig {
  std::size_t prototypes = 16;
  double temperature = 1.0;
  Similarity similarity = Similarity::kCosine;
  /// Prototype entries ~ N(0, prototype_std^2). A small scale lets Adam-sized
  /// steps rotate the cosine prototypes.
  double prototype_std = 0.1;
  /// Alphas start at zero (a neutral 0.5 guide) unless this is positive.
  double alpha_std = 0.0;
  std::uint64_t seed = 0;
};

/// Guide logits are clamped to +-kGuideLogitLimit before the sigmoid so
/// that single-precision guides stay strictly inside (0,1).
inline constexpr double kGuideLogitLimit = 15.0;
inline constexpr double kCosineEps = 1e-8;

template <typename T>
struct TokenBook {
  Tensor<T> prototypes;  // [K, d]
  Tensor<T> alphas;      // [K]
  T temperature = T(1);
  Similarity similarity = Similarity::kCosine;

  std::size_t size() const { return alphas.numel(); }
  std::size_t dim() const { return prototypes.dim(1); }
  std::vector<std::pair<std::string, Tensor<T>*>> named_parameters();
  template <typename U>
  TokenBook<U> cast() const {
    TokenBook<U> o;
    o.prototypes = prototypes.template cast<U>();
    o.alphas = alphas.template cast<U>();
    o.temperature = static_cast<U>(temperature);
    o.similarity = similarity;
    return o;
  }
};

template <typename T>
struct GuideMask {
  std::size_t h = 0, w = 0;
  Tensor<T> values;  // [h, w], entries in (0,1)
};

/// Prototypes ~ N(0, prototype_std^2), alphas ~ N(0, alpha_std^2); both trainable.
template <typename T>
TokenBook<T> init_tokenbook(const TokenBookConfig& cfg, std::size_t dim);

/// Per-token score grid [ht, wt].
template <typename T>
Var<T> token_scores(const encoder::TokenVars<T>& tokens, TokenBook<T>& book);
template <typename T>
Tensor<T> token_scores(const encoder::TokenGrid<T>& tokens, TokenBook<T>& book);

/// Guide mask [out_h, out_w].
template <typename T>
Var<T> guide_mask(const encoder::TokenVars<T>& tokens, TokenBook<T>& book, std::size_t out_h,
                  std::size_t out_w);
template <typename T>
GuideMask<T> guide_mask(const encoder::TokenGrid<T>& tokens, TokenBook<T>& book,
                        std::size_t out_h, std::size_t out_w);

}  // namespace guideseg::tokenbook
