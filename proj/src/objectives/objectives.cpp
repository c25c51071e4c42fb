// Copyright (c) 2026, The guideseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "guideseg/objectives/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "guideseg/numerics/kernels.hpp"
#include "guideseg/numerics/ops.hpp"

namespace guideseg::objectives {
namespace {

template <typename T>
void require_match(const char* op, const Var<T>& x, const Tensor<T>& gt) {
  const num::Shape& xs = x.shape();
  const num::Shape& gs = gt.shape();
  const bool ok = x.numel() == gt.numel() && xs.size() >= 2 && gs.size() >= 2 &&
                  xs[xs.size() - 2] == gs[gs.size() - 2] && xs.back() == gs.back();
  if (!ok) {
    throw ConfigError(std::string(op) + ": prediction " + num::shape_str(xs) +
                      " and ground truth " + num::shape_str(gs) + " differ");
  }
}

template <typename T>
Mask to_mask(const Tensor<T>& gt) {
  const num::Shape& s = gt.shape();
  Mask m(s[s.size() - 2], s.back());
  for (std::size_t i = 0; i < m.size(); ++i) m.data[i] = gt[i] > T(0.5) ? 1 : 0;
  return m;
}

template <typename T>
T softplus(T x) {
  return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace

void LossConfig::validate() const {
  auto nonneg = [](double v, const char* name) {
    if (!std::isfinite(v) || v < 0.0) {
      throw ConfigError(std::string("loss weight ") + name + " must be finite and >= 0");
    }
  };
  nonneg(lambda, "lambda");
  nonneg(seg_dice_weight, "seg_dice_weight");
  nonneg(seg_bce_weight, "seg_bce_weight");
  nonneg(eps, "eps");
  if (!(hinge_margin > 0.0 && hinge_margin <= 1.0)) {
    throw ConfigError("hinge margin must lie in (0,1]");
  }
  if (band_radius == 0) throw ConfigError("hinge band radius must be >= 1");
}

template <typename T>
Tensor<T> mask_tensor(const Mask& m) {
  Tensor<T> t({m.h, m.w});
  for (std::size_t i = 0; i < m.size(); ++i) t[i] = m.data[i] ? T(1) : T(0);
  return t;
}

template <typename T>
Var<T> dice_loss(Var<T> probs, const Tensor<T>& gt, double eps) {
  require_match("dice_loss", probs, gt);
  const Tensor<T>& p = probs.value();
  T inter = 0, sp = 0, sy = 0;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    inter += p[i] * gt[i];
    sp += p[i];
    sy += gt[i];
  }
  const T e = static_cast<T>(eps);
  const T num = T(2) * inter + e, den = sp + sy + e;
  Tensor<T> out({1}, T(1) - num / den);
  auto y = std::make_shared<Tensor<T>>(gt);
  return probs.graph().record(std::move(out), {probs}, [probs, y, num, den](std::span<const T> g) {
    std::span<T> gp = probs.graph().grad_of(probs);
    const T inv = T(1) / (den * den);
    for (std::size_t i = 0; i < gp.size(); ++i) {
      gp[i] -= g[0] * (T(2) * (*y)[i] * den - num) * inv;
    }
  });
}

template <typename T>
Var<T> bce_with_logits(Var<T> logits, const Tensor<T>& gt) {
  require_match("bce_with_logits", logits, gt);
  const Tensor<T>& l = logits.value();
  const std::size_t n = l.numel();
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += softplus(l[i]) - gt[i] * l[i];
  Tensor<T> out({1}, acc / static_cast<T>(n));
  auto y = std::make_shared<Tensor<T>>(gt);
  return logits.graph().record(std::move(out), {logits}, [logits, y, n](std::span<const T> g) {
    const Tensor<T>& l = logits.value();
    std::span<T> gl = logits.graph().grad_of(logits);
    const T s = g[0] / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i) gl[i] += s * (num::sigmoid(l[i]) - (*y)[i]);
  });
}

template <typename T>
Var<T> guide_bce(Var<T> guide, const Tensor<T>& gt) {
  require_match("guide_bce", guide, gt);
  const Tensor<T>& gv = guide.value();
  const std::size_t n = gv.numel();
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T v = gv[i];
    if (!(v > T(0) && v < T(1))) {
      throw ContractError("guide value " + std::to_string(v) + " at index " + std::to_string(i) +
                          " is outside (0,1)");
    }
    acc -= gt[i] * std::log(v) + (T(1) - gt[i]) * std::log1p(-v);
  }
  Tensor<T> out({1}, acc / static_cast<T>(n));
  auto y = std::make_shared<Tensor<T>>(gt);
  return guide.graph().record(std::move(out), {guide}, [guide, y, n](std::span<const T> g) {
    const Tensor<T>& gv = guide.value();
    std::span<T> gg = guide.graph().grad_of(guide);
    const T s = g[0] / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const T v = gv[i], yi = (*y)[i];
      gg[i] += s * (-yi / v + (T(1) - yi) / (T(1) - v));
    }
  });
}

Mask boundary_band(const Mask& gt, std::size_t radius) {
  Mask edge(gt.h, gt.w);
  for (std::size_t i = 0; i < gt.h; ++i) {
    for (std::size_t j = 0; j < gt.w; ++j) {
      const auto v = gt.at(i, j);
      const bool b = (i > 0 && gt.at(i - 1, j) != v) || (i + 1 < gt.h && gt.at(i + 1, j) != v) ||
                     (j > 0 && gt.at(i, j - 1) != v) || (j + 1 < gt.w && gt.at(i, j + 1) != v);
      edge.at(i, j) = b ? 1 : 0;
    }
  }
  // Separable square dilation: rows, then columns.
  Mask rows(gt.h, gt.w), band(gt.h, gt.w);
  const auto r = static_cast<std::ptrdiff_t>(radius);
  auto clampi = [](std::ptrdiff_t v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(v, 0, static_cast<std::ptrdiff_t>(n) - 1));
  };
  for (std::size_t i = 0; i < gt.h; ++i) {
    for (std::size_t j = 0; j < gt.w; ++j) {
      const auto sj = static_cast<std::ptrdiff_t>(j);
      for (std::size_t k = clampi(sj - r, gt.w); k <= clampi(sj + r, gt.w); ++k) {
        if (edge.at(i, k)) {
          rows.at(i, j) = 1;
          break;
        }
      }
    }
  }
  for (std::size_t i = 0; i < gt.h; ++i) {
    const auto si = static_cast<std::ptrdiff_t>(i);
    for (std::size_t j = 0; j < gt.w; ++j) {
      for (std::size_t k = clampi(si - r, gt.h); k <= clampi(si + r, gt.h); ++k) {
        if (rows.at(k, j)) {
          band.at(i, j) = 1;
          break;
        }
      }
    }
  }
  return band;
}

template <typename T>
Var<T> boundary_hinge(Var<T> probs, const Tensor<T>& gt, double margin, std::size_t radius) {
  require_match("boundary_hinge", probs, gt);
  auto band = std::make_shared<std::vector<std::size_t>>();
  const Mask bm = boundary_band(to_mask(gt), radius);
  for (std::size_t i = 0; i < bm.size(); ++i) {
    if (bm.data[i]) band->push_back(i);
  }
  const Tensor<T>& p = probs.value();
  const T m = static_cast<T>(margin);
  T acc = 0;
  for (std::size_t i : *band) {
    const T sy = T(2) * gt[i] - T(1);
    acc += std::max(T(0), m - (T(2) * p[i] - T(1)) * sy);
  }
  const T n = static_cast<T>(std::max<std::size_t>(band->size(), 1));
  Tensor<T> out({1}, acc / n);
  auto y = std::make_shared<Tensor<T>>(gt);
  return probs.graph().record(std::move(out), {probs}, [probs, y, band, m, n](std::span<const T> g) {
    const Tensor<T>& p = probs.value();
    std::span<T> gp = probs.graph().grad_of(probs);
    for (std::size_t i : *band) {
      const T sy = T(2) * (*y)[i] - T(1);
      if (m - (T(2) * p[i] - T(1)) * sy > T(0)) gp[i] -= g[0] * T(2) * sy / n;
    }
  });
}

double combine_terms(const LossTerms& t, const LossConfig& cfg) {
  const double seg = cfg.seg_dice_weight * t.dice + cfg.seg_bce_weight * t.bce;
  double total = seg;
  if (cfg.lambda != 0.0) total += cfg.lambda * t.guide;
  if (cfg.hinge_enabled) total += t.hinge;
  return total;
}

template <typename T>
LossResult<T> total_loss(Var<T> logits, const Var<T>* guide, const Tensor<T>& gt,
                         const LossConfig& cfg) {
  cfg.validate();
  const num::Shape& ls = logits.shape();
  if (ls.size() != 3 || ls[0] != 1) {
    throw ConfigError("total_loss expects logits [1,H,W], got " + num::shape_str(ls));
  }
  LossResult<T> r;
  Var<T> probs = num::sigmoid(logits);
  Var<T> dice = dice_loss(probs, gt, cfg.eps);
  Var<T> bce = bce_with_logits(logits, gt);
  r.terms.dice = static_cast<double>(dice.value()[0]);
  r.terms.bce = static_cast<double>(bce.value()[0]);
  Var<T> total = num::add(num::scale(dice, static_cast<T>(cfg.seg_dice_weight)),
                          num::scale(bce, static_cast<T>(cfg.seg_bce_weight)));
  r.terms.seg = static_cast<double>(total.value()[0]);
  if (guide) {
    Var<T> gl = guide_bce(*guide, gt);
    r.terms.guide = static_cast<double>(gl.value()[0]);
    if (cfg.lambda != 0.0) total = num::add(total, num::scale(gl, static_cast<T>(cfg.lambda)));
  }
  if (cfg.hinge_enabled) {
    Var<T> h = boundary_hinge(probs, gt, cfg.hinge_margin, cfg.band_radius);
    r.terms.hinge = static_cast<double>(h.value()[0]);
    total = num::add(total, h);
  }
  r.terms.total = static_cast<double>(total.value()[0]);
  r.total = total;
  return r;
}

#define GUIDESEG_INSTANTIATE_OBJECTIVES(T)                                                  \
  template Tensor<T> mask_tensor<T>(const Mask&);                                           \
  template Var<T> dice_loss<T>(Var<T>, const Tensor<T>&, double);                           \
  template Var<T> bce_with_logits<T>(Var<T>, const Tensor<T>&);                             \
  template Var<T> guide_bce<T>(Var<T>, const Tensor<T>&);                                   \
  template Var<T> boundary_hinge<T>(Var<T>, const Tensor<T>&, double, std::size_t);         \
  template LossResult<T> total_loss<T>(Var<T>, const Var<T>*, const Tensor<T>&,             \
                                       const LossConfig&);

GUIDESEG_INSTANTIATE_OBJECTIVES(float)
GUIDESEG_INSTANTIATE_OBJECTIVES(double)

}  // namespace guideseg::objectives
