// Copyright (c) 2026, The guideseg Authors
// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference checks of every operation on the trainable path, in
// double precision, on small seeded instances.

#pragma once

#include <ostream>
#include <vector>

#include "guideseg/numerics/grad_check.hpp"

namespace guideseg::train {

inline constexpr double kGradTolerance = 1e-4;
inline constexpr double kGradEps = 1e-5;

/// Per-operation checks; `full` adds the end-to-end 16x16 pipeline over
/// every TokenBook, gate, UNet and LoRA parameter.
std::vector<num::GradReport> gradcheck_suite(bool full, double eps = kGradEps);

/// Fixed-width table, one row per report, with a PASS/FAIL column.
void print_gradcheck_table(const std::vector<num::GradReport>& reports, std::ostream& out,
                           double tol = kGradTolerance);

}  // namespace guideseg::train
