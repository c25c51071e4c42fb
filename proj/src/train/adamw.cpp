// Copyright (c) 2026, The guideseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "guideseg/train/adamw.hpp"

#include <cmath>
#include <utility>

#include "guideseg/errors.hpp"

namespace guideseg::train {

void AdamWConfig::validate() const {
  if (!(lr > 0) || !std::isfinite(lr)) throw ConfigError("learning rate must be positive");
  if (!(weight_decay >= 0) || !std::isfinite(weight_decay)) {
    throw ConfigError("weight decay must be finite and nonnegative");
  }
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) {
    throw ConfigError("Adam betas must lie in [0,1)");
  }
  if (!(eps > 0)) throw ConfigError("Adam eps must be positive");
}

template <typename T>
AdamW<T>::AdamW(std::string group, std::vector<num::Tensor<T>*> params, AdamWConfig cfg)
    : group_(std::move(group)), params_(std::move(params)), cfg_(cfg) {
  cfg_.validate();
  for (const num::Tensor<T>* p : params_) {
    m_.emplace_back(p->numel(), T(0));
    v_.emplace_back(p->numel(), T(0));
  }
}

template <typename T>
void AdamW<T>::step() {
  for (const num::Tensor<T>* p : params_) {
    if (p->has_grad() && !num::all_finite(p->grad())) {
      throw NumericalError("non-finite gradient in parameter group '" + group_ + "'");
    }
  }
  ++t_;
  const double lr = cfg_.lr, b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double decay = 1.0 - lr * cfg_.weight_decay;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    num::Tensor<T>& p = *params_[k];
    const std::span<const T> g = std::as_const(p).grad();
    std::vector<T>& m = m_[k];
    std::vector<T>& v = v_[k];
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double gi = g.empty() ? 0.0 : static_cast<double>(g[i]);
      const double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * gi;
      const double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double w = static_cast<double>(p[i]) * decay;
      p[i] = static_cast<T>(w - lr * (mi / c1) / (std::sqrt(vi / c2) + cfg_.eps));
    }
  }
}

template <typename T>
void AdamW<T>::zero_grad() {
  for (num::Tensor<T>* p : params_) p->zero_grad();
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace guideseg::train
