// Copyright (c) 2026, The guideseg Authors
// SPDX-License-Identifier: Apache-2.0
//
// Frozen ViT-style patch-token encoder used as the guide generator, with
// optional low-rank (LoRA) adapters on the attention projections.
//
// The encoder is randomly initialised from a fixed seed and never updated.
// Externally converted weights can replace it through the checkpoint
// container (component tag "encoder").

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "guideseg/numerics/graph.hpp"
#include "guideseg/numerics/tensor.hpp"

namespace guideseg::encoder {

using num::Graph;
using num::Tensor;
using num::Var;

struct EncoderConfig {
  std::size_t in_channels = 1;
  std::size_t image_size = 64;  // square input edge; fixes the positional table
  std::size_t patch = 8;
  std::size_t dim = 64;
  std::size_t depth = 4;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  std::uint64_t seed = 0;

  std::size_t grid() const { return image_size / patch; }
  std::size_t tokens() const { return grid() * grid(); }
  /// Throws ConfigError when the fields are inconsistent.
  void validate() const;
};

enum class Projection : std::size_t { kQuery = 0, kKey = 1, kValue = 2, kOutput = 3 };
inline constexpr std::array<const char*, 4> kProjectionNames{"query", "key", "value", "output"};

struct LoraConfig {
  std::size_t rank = 4;
  double scale = 2.0;
  std::array<bool, 4> targets{true, false, true, false};  // query and value
  std::uint64_t seed = 0;

  bool targets_projection(Projection p) const { return targets[static_cast<std::size_t>(p)]; }
};

template <typename T>
struct EncoderBlock {
  Tensor<T> ln1_g, ln1_b;
  std::array<Tensor<T>, 4> proj_w;  // [d,d], indexed by Projection
  std::array<Tensor<T>, 4> proj_b;  // [d]
  Tensor<T> ln2_g, ln2_b;
  Tensor<T> fc1_w, fc1_b;  // [d, mlp*d], [mlp*d]
  Tensor<T> fc2_w, fc2_b;  // [mlp*d, d], [d]
};

template <typename T>
struct EncoderWeights {
  Tensor<T> patch_w;  // [C*p*p, d]
  Tensor<T> patch_b;  // [d]
  Tensor<T> pos;      // [tokens, d]
  std::vector<EncoderBlock<T>> blocks;
  Tensor<T> norm_g, norm_b;

  /// Stable names ("patch.w", "blocks.0.query.w", ...) in a fixed order.
  std::vector<std::pair<std::string, Tensor<T>*>> named_parameters();
  template <typename U>
  EncoderWeights<U> cast() const;
};

template <typename T>
struct LoraPair {
  Tensor<T> a;  // [d, r]
  Tensor<T> b;  // [r, d]
};

template <typename T>
struct LoraWeights {
  LoraConfig config;
  // blocks[i][projection] is set for every targeted projection.
  std::vector<std::array<std::optional<LoraPair<T>>, 4>> blocks;

  std::vector<std::pair<std::string, Tensor<T>*>> named_parameters();
  template <typename U>
  LoraWeights<U> cast() const;
};

template <typename T>
struct TokenGrid {
  std::size_t ht = 0, wt = 0, dim = 0;
  Tensor<T> features;  // [ht*wt, dim]
};

/// Token features still attached to a graph.
template <typename T>
struct TokenVars {
  std::size_t ht = 0, wt = 0, dim = 0;
  Var<T> features;
};

/// Seeded initialisation; every tensor is frozen (non-trainable).
template <typename T>
EncoderWeights<T> init_encoder(const EncoderConfig& cfg);

/// A ~ N(0, 1/d), B = 0, both trainable. Throws ConfigError if rank > dim.
template <typename T>
LoraWeights<T> init_lora(const EncoderConfig& cfg, const LoraConfig& lora);

/// Checks every tensor shape against the configuration.
template <typename T>
void check_shapes(const EncoderConfig& cfg, const EncoderWeights<T>& w);
template <typename T>
void check_shapes(const EncoderConfig& cfg, const LoraWeights<T>& lora);

/// x W + scale * (x A) B.
template <typename T>
Var<T> lora_project(Var<T> x, Var<T> w, Var<T> a, Var<T> b, T scale);
template <typename T>
Tensor<T> lora_project(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& a,
                       const Tensor<T>& b, T scale);

/// Linear patch embedding plus positional table.
template <typename T>
TokenVars<T> patchify_embed(Graph<T>& g, Var<T> image, const EncoderConfig& cfg,
                            EncoderWeights<T>& w);
template <typename T>
TokenGrid<T> patchify_embed(const Tensor<T>& image, const EncoderConfig& cfg,
                            EncoderWeights<T>& w);

/// Patch embedding followed by `depth` pre-norm transformer blocks and a
/// final layer norm.
template <typename T>
TokenVars<T> encode(Graph<T>& g, Var<T> image, const EncoderConfig& cfg, EncoderWeights<T>& w,
                    LoraWeights<T>* lora);
template <typename T>
TokenGrid<T> encode(const Tensor<T>& image, const EncoderConfig& cfg, EncoderWeights<T>& w,
                    LoraWeights<T>* lora = nullptr);

}  // namespace guideseg::encoder
