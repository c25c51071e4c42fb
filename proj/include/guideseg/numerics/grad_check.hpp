// Copyright (c) 2026, The guideseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "guideseg/numerics/graph.hpp"

namespace guideseg::num {

struct GradReport {
  std::string op_name;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::size_t n_params_checked = 0;

  bool passed(double tol) const { return max_rel_err <= tol; }
};

/// Builds a fresh graph and returns a scalar. The function must read the
/// checked tensors through Graph::param so that both the analytic and the
/// perturbed passes see the current parameter values.
using ScalarFn = std::function<Var<double>(Graph<double>&)>;

/// Central differences at eps = 1e-5 carry ~1e-11 of roundoff on O(1)
/// losses, so gradients below this floor are compared in absolute terms.
inline constexpr double kGradDenominatorFloor = 1e-6;

/// Compares the tape gradient of `f` against central differences
/// (f(p+eps) - f(p-eps)) / (2 eps) for every entry of every tensor in
/// `params`. Relative error uses max(|analytic|, |numeric|, floor) as the
/// denominator. Tensors are marked trainable for the duration of the check
/// and restored afterwards. Throws EvalError on a non-finite function value.
GradReport grad_check(const std::string& op_name, const ScalarFn& f,
                      const std::vector<Tensor<double>*>& params, double eps = 1e-5);

}  // namespace guideseg::num
