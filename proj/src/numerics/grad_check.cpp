// Copyright (c) 2026, The guideseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "guideseg/numerics/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace guideseg::num {
namespace {

double evaluate(const ScalarFn& f, std::size_t param_index) {
  Graph<double> g;
  const Var<double> out = f(g);
  if (out.numel() != 1) throw ConfigError("grad_check function must return a scalar");
  const double v = out.value()[0];
  if (!std::isfinite(v)) throw EvalError("non-finite function value during grad_check", param_index);
  return v;
}

}  // namespace

GradReport grad_check(const std::string& op_name, const ScalarFn& f,
                      const std::vector<Tensor<double>*>& params, double eps) {
  if (params.empty()) throw ConfigError("grad_check needs at least one parameter tensor");
  if (!(eps > 0.0)) throw ConfigError("grad_check eps must be positive");

  std::vector<bool> was_trainable;
  for (Tensor<double>* p : params) {
    was_trainable.push_back(p->trainable());
    p->set_trainable(true);
    p->clear_grad();
  }

  {
    Graph<double> g;
    const Var<double> out = f(g);
    if (out.numel() != 1) throw ConfigError("grad_check function must return a scalar");
    if (!std::isfinite(out.value()[0])) {
      throw EvalError("non-finite function value during grad_check", 0);
    }
    g.backward(out);
  }

  GradReport report;
  report.op_name = op_name;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<double>& p = *params[pi];
    const std::vector<double> analytic(p.grad().begin(), p.grad().end());
    for (std::size_t k = 0; k < p.numel(); ++k) {
      const double orig = p[k];
      p[k] = orig + eps;
      const double fp = evaluate(f, pi);
      p[k] = orig - eps;
      const double fm = evaluate(f, pi);
      p[k] = orig;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double abs_err = std::abs(analytic[k] - numeric);
      const double denom = std::max({std::abs(analytic[k]), std::abs(numeric), kGradDenominatorFloor});
      report.max_abs_err = std::max(report.max_abs_err, abs_err);
      report.max_rel_err = std::max(report.max_rel_err, abs_err / denom);
      ++report.n_params_checked;
    }
  }

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    params[pi]->clear_grad();
    params[pi]->set_trainable(was_trainable[pi]);
  }
  return report;
}

}  // namespace guideseg::num
