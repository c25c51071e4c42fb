// Copyright (c) 2026, The guideseg Authors
// SPDX-License-Identifier: Apache-2.0
//
// Composite training objective
//
//   L = w_dice * Dice + w_bce * BCE(logits) + lambda * BCE(guide) [+ hinge]
//
// All terms are scalar graph nodes with analytic backward passes. Ground
// truth is passed as a 0/1 tensor with the same spatial size as the
// prediction.

#pragma once

#include <cstddef>
#include <string>

#include "guideseg/mask.hpp"
#include "guideseg/numerics/graph.hpp"

namespace guideseg::objectives {

using num::Tensor;
using num::Var;

struct LossConfig {
  double lambda = 0.5;
  double seg_dice_weight = 1.0;
  double seg_bce_weight = 1.0;
  bool hinge_enabled = false;
  double hinge_margin = 0.2;
  std::size_t band_radius = 2;
  double eps = 1e-6;

  void validate() const;
};

/// Scalar values of every term, for logging.
struct LossTerms {
  double dice = 0, bce = 0, seg = 0, guide = 0, hinge = 0, total = 0;
};

template <typename T>
struct LossResult {
  Var<T> total;
  LossTerms terms;
};

template <typename T>
Tensor<T> mask_tensor(const Mask& m);

/// 1 - (2 sum p y + eps) / (sum p + sum y + eps).
template <typename T>
Var<T> dice_loss(Var<T> probs, const Tensor<T>& gt, double eps);

/// Mean of softplus(l) - y l, the BCE of sigmoid(l) computed stably.
template <typename T>
Var<T> bce_with_logits(Var<T> logits, const Tensor<T>& gt);

/// -(1/N) sum [y log g + (1-y) log(1-g)]. Throws ContractError if any guide
/// entry is outside (0,1).
template <typename T>
Var<T> guide_bce(Var<T> guide, const Tensor<T>& gt);

/// Pixels within Chebyshev distance `radius` of a ground-truth boundary
/// pixel (a pixel with a 4-neighbour of the opposite label).
Mask boundary_band(const Mask& gt, std::size_t radius);

/// Mean of max(0, m - (2p-1)(2y-1)) over the boundary band; 0 if the band
/// is empty.
template <typename T>
Var<T> boundary_hinge(Var<T> probs, const Tensor<T>& gt, double margin, std::size_t radius);

/// The weighted sum used by total_loss, on plain numbers.
double combine_terms(const LossTerms& t, const LossConfig& cfg);

/// logits [1,H,W]; guide [H,W] or null for the ungated model; gt [H,W].
template <typename T>
LossResult<T> total_loss(Var<T> logits, const Var<T>* guide, const Tensor<T>& gt,
                         const LossConfig& cfg);

}  // namespace guideseg::objectives
