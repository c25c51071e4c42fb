// Copyright (c) 2026, The guideseg Authors
// SPDX-License-Identifier: Apache-2.0
//
// Compact UNet whose encoder-stage outputs can be gated by a guide mask:
//
//   gate(f, G, beta) = f * (1 + beta * resize(G))
//
// broadcast over channels. With beta = 0 the gate is the identity, so a
// freshly initialised guided model computes exactly the plain backbone.
//
// Layout for depth D and base width b: D+1 encoder stages (stage 0 at full
// resolution, stage D is the bottleneck), each a pair of 3x3 conv + ReLU.
// Encoder widths are b*2^i with the bottleneck kept at the width of stage
// D-1; decoder levels upsample bilinearly, concatenate the skip and apply a
// double conv whose first layer halves the concatenated width. A final 1x1
// conv produces one logit per pixel.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "guideseg/mask.hpp"
#include "guideseg/numerics/graph.hpp"

namespace guideseg::segnet {

using num::Graph;
using num::Tensor;
using num::Var;

struct UNetConfig {
  std::size_t in_channels = 1;
  std::size_t base_channels = 16;
  std::size_t depth = 3;
  /// Encoder stages (0..depth) that receive gating; unset means all.
  std::optional<std::vector<std::size_t>> gate_stages;
  std::uint64_t seed = 0;

  std::size_t stages() const { return depth + 1; }
  std::vector<std::size_t> gated_stages() const;
  std::size_t stage_channels(std::size_t stage) const;
  void validate() const;
};

template <typename T>
struct ConvLayer {
  Tensor<T> w;  // [out, in, k, k]
  Tensor<T> b;  // [out]
};

template <typename T>
struct DoubleConv {
  ConvLayer<T> first, second;
};

template <typename T>
struct UNetWeights {
  std::vector<DoubleConv<T>> down;  // depth + 1 stages
  std::vector<DoubleConv<T>> up;    // depth levels, up[0] is the coarsest
  ConvLayer<T> head;                // 1x1 conv to one channel

  std::vector<std::pair<std::string, Tensor<T>*>> named_parameters();
  template <typename U>
  UNetWeights<U> cast() const;
};

/// One scalar per gated stage, stored as [1] tensors.
template <typename T>
struct GateParams {
  std::vector<std::size_t> stages;
  std::vector<Tensor<T>> beta;

  std::vector<std::pair<std::string, Tensor<T>*>> named_parameters();
  template <typename U>
  GateParams<U> cast() const {
    GateParams<U> o;
    o.stages = stages;
    for (const auto& b : beta) o.beta.push_back(b.template cast<U>());
    return o;
  }
};

/// He-normal conv weights, zero biases; all trainable.
template <typename T>
UNetWeights<T> init_unet(const UNetConfig& cfg);
/// Every beta starts at exactly 0.
template <typename T>
GateParams<T> init_gates(const UNetConfig& cfg);

template <typename T>
void check_shapes(const UNetConfig& cfg, const UNetWeights<T>& w);
template <typename T>
void check_shapes(const UNetConfig& cfg, const GateParams<T>& gates);

/// features [C,h,w], guide [H,W] (any size), beta [1] -> [C,h,w].
template <typename T>
Var<T> gate(Var<T> features, Var<T> guide, Var<T> beta);

/// Per-pixel logits [1,H,W]. A null guide (or null gates) runs the ungated
/// backbone.
template <typename T>
Var<T> forward(Graph<T>& g, Var<T> image, const Var<T>* guide, const UNetConfig& cfg,
               UNetWeights<T>& w, GateParams<T>* gates);
template <typename T>
Tensor<T> forward(const Tensor<T>& image, const Tensor<T>* guide, const UNetConfig& cfg,
                  UNetWeights<T>& w, GateParams<T>* gates);
/// Ungated backbone.
template <typename T>
Tensor<T> forward(const Tensor<T>& image, const UNetConfig& cfg, UNetWeights<T>& w) {
  return forward<T>(image, nullptr, cfg, w, nullptr);
}

/// sigmoid(logit) >= threshold, evaluated in double precision.
template <typename T>
Mask predict(const Tensor<T>& logits, double threshold = 0.5);

}  // namespace guideseg::segnet
