// Copyright (c) 2026, The guideseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "guideseg/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <tuple>

namespace guideseg::metrics {
namespace {

constexpr double kFar = 1e20;

// Squared-distance lower envelope along one line (Felzenszwalb and
// Huttenlocher). Results are exact integers whenever a site exists.
void edt_1d(const double* f, std::size_t n, std::size_t stride, double* out,
            std::vector<std::size_t>& v, std::vector<double>& z) {
  v.assign(n, 0);
  z.assign(n + 1, 0.0);
  std::size_t k = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  auto fv = [&](std::size_t q) { return f[q * stride]; };
  for (std::size_t q = 1; q < n; ++q) {
    const double dq = static_cast<double>(q);
    double s;
    while (true) {
      const double dv = static_cast<double>(v[k]);
      s = ((fv(q) + dq * dq) - (fv(v[k]) + dv * dv)) / (2.0 * dq - 2.0 * dv);
      if (s <= z[k] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    if (s <= z[k]) {  // k == 0
      v[0] = q;
      z[0] = -std::numeric_limits<double>::infinity();
      z[1] = std::numeric_limits<double>::infinity();
      continue;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const double d = static_cast<double>(q) - static_cast<double>(v[k]);
    out[q * stride] = d * d + fv(v[k]);
  }
}

// Squared distance from every pixel to the nearest site of `sites`.
std::vector<double> squared_edt(const Mask& sites) {
  const std::size_t h = sites.h, w = sites.w;
  std::vector<double> f(sites.size()), tmp(sites.size());
  for (std::size_t p = 0; p < f.size(); ++p) f[p] = sites.data[p] ? 0.0 : kFar;
  std::vector<std::size_t> v;
  std::vector<double> z;
  for (std::size_t j = 0; j < w; ++j) edt_1d(f.data() + j, h, w, tmp.data() + j, v, z);
  for (std::size_t i = 0; i < h; ++i) edt_1d(tmp.data() + i * w, w, 1, f.data() + i * w, v, z);
  return f;
}

std::vector<double> pooled_distances(const Mask& a, const Mask& b) {
  const Mask ba = boundary(a), bb = boundary(b);
  const auto da = squared_edt(ba), db = squared_edt(bb);
  std::vector<double> d;
  for (std::size_t p = 0; p < ba.size(); ++p) {
    if (ba.data[p]) d.push_back(std::sqrt(db[p]));
  }
  for (std::size_t p = 0; p < bb.size(); ++p) {
    if (bb.data[p]) d.push_back(std::sqrt(da[p]));
  }
  return d;
}

double diagonal(const Mask& m) {
  return std::sqrt(static_cast<double>(m.h * m.h + m.w * m.w));
}

// Population mean and standard deviation.
std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double s = 0;
  for (double x : v) s += x;
  const double mean = s / static_cast<double>(v.size());
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size()))};
}

}  // namespace

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j;
  j["n_samples"] = n_samples();
  j["iou_mean"] = iou_mean;
  j["dsc_mean"] = dsc_mean;
  j["hd95_mean"] = hd95_mean;
  j["iou_std"] = iou_std;
  j["dsc_std"] = dsc_std;
  j["hd95_std"] = hd95_std;
  j["seeds"] = seeds;
  nlohmann::json rows = nlohmann::json::array();
  for (const SampleMetrics& s : per_sample) {
    rows.push_back({{"iou", s.iou}, {"dsc", s.dsc}, {"hd95", s.hd95}});
  }
  j["per_sample"] = std::move(rows);
  return j;
}

Overlap overlap_metrics(const Mask& pred, const Mask& gt) {
  require_same_shape(pred, gt, "overlap_metrics");
  std::size_t inter = 0, np = 0, ng = 0;
  for (std::size_t p = 0; p < pred.size(); ++p) {
    inter += pred.data[p] & gt.data[p];
    np += pred.data[p];
    ng += gt.data[p];
  }
  if (np + ng == 0) return {1.0, 1.0};
  const double i = static_cast<double>(inter);
  return {i / static_cast<double>(np + ng - inter), 2.0 * i / static_cast<double>(np + ng)};
}

Mask boundary(const Mask& m) {
  Mask b(m.h, m.w);
  for (std::size_t i = 0; i < m.h; ++i) {
    for (std::size_t j = 0; j < m.w; ++j) {
      if (!m.at(i, j)) continue;
      const bool edge = i == 0 || j == 0 || i + 1 == m.h || j + 1 == m.w || !m.at(i - 1, j) ||
                        !m.at(i + 1, j) || !m.at(i, j - 1) || !m.at(i, j + 1);
      b.at(i, j) = edge ? 1 : 0;
    }
  }
  return b;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw InputError("percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

double hd95(const Mask& pred, const Mask& gt) {
  require_same_shape(pred, gt, "hd95");
  const bool ep = pred.count() == 0, eg = gt.count() == 0;
  if (ep && eg) return 0.0;
  if (ep || eg) return diagonal(gt);
  return percentile(pooled_distances(pred, gt), 0.95);
}

double hausdorff(const Mask& pred, const Mask& gt) {
  require_same_shape(pred, gt, "hausdorff");
  const bool ep = pred.count() == 0, eg = gt.count() == 0;
  if (ep && eg) return 0.0;
  if (ep || eg) return diagonal(gt);
  const auto d = pooled_distances(pred, gt);
  return *std::max_element(d.begin(), d.end());
}

SampleMetrics sample_metrics(const Mask& pred, const Mask& gt) {
  const Overlap o = overlap_metrics(pred, gt);
  return {o.iou, o.dsc, hd95(pred, gt)};
}

MetricsReport aggregate(std::vector<SampleMetrics> per_sample) {
  MetricsReport r;
  std::vector<double> iou, dsc, hd;
  for (const SampleMetrics& s : per_sample) {
    iou.push_back(s.iou);
    dsc.push_back(s.dsc);
    hd.push_back(s.hd95);
  }
  std::tie(r.iou_mean, r.iou_std) = mean_std(iou);
  std::tie(r.dsc_mean, r.dsc_std) = mean_std(dsc);
  std::tie(r.hd95_mean, r.hd95_std) = mean_std(hd);
  r.per_sample = std::move(per_sample);
  return r;
}

double auroc(std::span<const float> scores, const Mask& labels) {
  if (scores.size() != labels.size()) {
    throw InputError("auroc: " + std::to_string(scores.size()) + " scores for " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = scores.size(), pos = labels.count(), neg = n - pos;
  if (pos == 0 || neg == 0) throw InputError("auroc needs both classes present");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Mann-Whitney statistic from midranks.
  double rank_sum = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels.data[order[k]]) rank_sum += midrank;
    }
    i = j;
  }
  const double p = static_cast<double>(pos), q = static_cast<double>(neg);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

num::Tensor<float> flip(const num::Tensor<float>& t, bool horizontal, bool vertical) {
  if (t.ndim() != 2 && t.ndim() != 3) {
    throw ConfigError("flip expects [H,W] or [C,H,W], got " + num::shape_str(t.shape()));
  }
  const std::size_t h = t.dim(t.ndim() - 2), w = t.dim(t.ndim() - 1);
  const std::size_t planes = t.numel() / (h * w);
  num::Tensor<float> out(t.shape());
  for (std::size_t c = 0; c < planes; ++c) {
    for (std::size_t i = 0; i < h; ++i) {
      const std::size_t si = vertical ? h - 1 - i : i;
      for (std::size_t j = 0; j < w; ++j) {
        const std::size_t sj = horizontal ? w - 1 - j : j;
        out[(c * h + i) * w + j] = t[(c * h + si) * w + sj];
      }
    }
  }
  return out;
}

num::Tensor<float> flip_averaged(const ProbabilityFn& f, const num::Tensor<float>& image) {
  num::Tensor<float> views[4];
  for (int k = 0; k < 4; ++k) {
    const bool hz = k & 1, vt = k & 2;
    views[k] = flip(f(flip(image, hz, vt)), hz, vt);
  }
  num::Tensor<float> out(views[0].shape());
  for (std::size_t p = 0; p < out.numel(); ++p) {
    const double a = static_cast<double>(views[0][p]) + static_cast<double>(views[1][p]);
    const double b = static_cast<double>(views[2][p]) + static_cast<double>(views[3][p]);
    out[p] = static_cast<float>((a + b) * 0.25);
  }
  return out;
}

MetricsReport evaluate_dataset(const ProbabilityFn& f, const std::vector<data::SegSample>& dataset,
                               bool tta_flips) {
  std::vector<SampleMetrics> rows;
  rows.reserve(dataset.size());
  for (const data::SegSample& s : dataset) {
    const num::Tensor<float> probs = tta_flips ? flip_averaged(f, s.image) : f(s.image);
    if (probs.numel() != s.mask.size()) {
      throw InputError("prediction of " + std::to_string(probs.numel()) +
                       " pixels does not match the " + std::to_string(s.mask.h) + "x" +
                       std::to_string(s.mask.w) + " ground truth");
    }
    Mask pred(s.mask.h, s.mask.w);
    for (std::size_t p = 0; p < pred.size(); ++p) pred.data[p] = probs[p] >= 0.5f ? 1 : 0;
    rows.push_back(sample_metrics(pred, s.mask));
  }
  return aggregate(std::move(rows));
}

}  // namespace guideseg::metrics
