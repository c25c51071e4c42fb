// Copyright (c) 2026, The guideseg Authors
// SPDX-License-Identifier: Apache-2.0
//
// AdamW with decoupled weight decay:
//
//   w <- w - lr * wd * w
//   m <- b1 m + (1-b1) g,   v <- b2 v + (1-b2) g^2
//   w <- w - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
//
// Arithmetic runs in double; moments are stored at parameter precision.

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "guideseg/numerics/tensor.hpp"

namespace guideseg::train {

struct AdamWConfig {
  double lr = 1e-3;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  /// Throws ConfigError on a non-positive lr or betas outside [0,1).
  void validate() const;
};

template <typename T>
class AdamW {
 public:
  /// `group` names the parameter group in error messages.
  AdamW(std::string group, std::vector<num::Tensor<T>*> params, AdamWConfig cfg);

  /// One update from the accumulated Tensor::grad() buffers (missing
  /// buffers count as zero). Throws NumericalError naming the group if any
  /// gradient is non-finite; no parameter is modified in that case.
  void step();

  /// Zeroes every gradient buffer.
  void zero_grad();

  std::size_t steps() const noexcept { return t_; }
  const std::string& group() const noexcept { return group_; }
  const AdamWConfig& config() const noexcept { return cfg_; }
  const std::vector<std::vector<T>>& first_moments() const noexcept { return m_; }
  const std::vector<std::vector<T>>& second_moments() const noexcept { return v_; }

 private:
  std::string group_;
  std::vector<num::Tensor<T>*> params_;
  AdamWConfig cfg_;
  std::vector<std::vector<T>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace guideseg::train
