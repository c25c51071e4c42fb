// Copyright (c) 2026, The guideseg Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "guideseg/metrics/metrics.hpp"

using namespace guideseg;
using namespace guideseg::metrics;

namespace {

Mask random_mask(std::mt19937_64& rng, std::size_t h, std::size_t w, double p) {
  std::bernoulli_distribution fg(p);
  Mask m(h, w);
  for (auto& v : m.data) v = fg(rng) ? 1 : 0;
  return m;
}

Mask from_rows(const std::vector<std::string>& rows) {
  Mask m(rows.size(), rows[0].size());
  for (std::size_t i = 0; i < m.h; ++i) {
    for (std::size_t j = 0; j < m.w; ++j) m.at(i, j) = rows[i][j] == '#' ? 1 : 0;
  }
  return m;
}

// All-pairs reference for the pooled boundary distances.
double brute_hd(const Mask& a, const Mask& b, double q) {
  auto edge = [](const Mask& m, std::size_t i, std::size_t j) {
    if (!m.at(i, j)) return false;
    if (i == 0 || j == 0 || i + 1 == m.h || j + 1 == m.w) return true;
    return !m.at(i - 1, j) || !m.at(i + 1, j) || !m.at(i, j - 1) || !m.at(i, j + 1);
  };
  std::vector<std::pair<long, long>> pa, pb;
  for (std::size_t i = 0; i < a.h; ++i) {
    for (std::size_t j = 0; j < a.w; ++j) {
      if (edge(a, i, j)) pa.emplace_back(i, j);
      if (edge(b, i, j)) pb.emplace_back(i, j);
    }
  }
  std::vector<double> d;
  auto directed = [&](const auto& from, const auto& to) {
    for (auto [i, j] : from) {
      long best = -1;
      for (auto [k, l] : to) {
        const long s = (i - k) * (i - k) + (j - l) * (j - l);
        if (best < 0 || s < best) best = s;
      }
      d.push_back(std::sqrt(static_cast<double>(best)));
    }
  };
  directed(pa, pb);
  directed(pb, pa);
  std::sort(d.begin(), d.end());
  const double pos = q * static_cast<double>(d.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, d.size() - 1);
  return d[lo] + (pos - static_cast<double>(lo)) * (d[hi] - d[lo]);
}

num::Tensor<float> as_probs(const Mask& m) {
  num::Tensor<float> t({m.h, m.w});
  for (std::size_t p = 0; p < m.size(); ++p) t[p] = m.data[p] ? 1.0f : 0.0f;
  return t;
}

}  // namespace

TEST_CASE("overlap of two 2-pixel masks sharing one pixel") {
  Mask a = from_rows({"##.", "..."});
  Mask b = from_rows({".##", "..."});
  const Overlap o = overlap_metrics(a, b);
  CHECK(o.iou == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(o.dsc == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("empty-mask conventions") {
  Mask e(8, 6), f(8, 6);
  f.at(3, 3) = 1;
  CHECK(overlap_metrics(e, e).iou == 1.0);
  CHECK(overlap_metrics(e, e).dsc == 1.0);
  CHECK(hd95(e, e) == 0.0);
  CHECK(overlap_metrics(e, f).iou == 0.0);
  CHECK(hd95(e, f) == std::sqrt(100.0));
  CHECK(hd95(f, e) == std::sqrt(100.0));
  CHECK(hd95(f, f) == 0.0);
  CHECK_THROWS_AS(overlap_metrics(e, Mask(6, 8)), InputError);
  CHECK_THROWS_AS(hd95(e, Mask(6, 8)), InputError);
}

TEST_CASE("single pixels one step apart give distance 1") {
  Mask a(5, 5), b(5, 5);
  a.at(2, 2) = 1;
  b.at(2, 3) = 1;
  CHECK(hd95(a, b) == 1.0);
  CHECK(hausdorff(a, b) == 1.0);
  b = Mask(5, 5);
  b.at(4, 4) = 1;
  CHECK(hausdorff(a, b) == std::sqrt(8.0));
}

TEST_CASE("boundary of a filled block") {
  Mask m = from_rows({".....", ".###.", ".###.", ".###.", "....."});
  Mask b = boundary(m);
  CHECK(b.count() == 8);
  CHECK(b.at(2, 2) == 0);
  Mask full(3, 3, 1);
  CHECK(boundary(full).count() == 8);
}

TEST_CASE("distance transform matches the all-pairs reference exactly") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> dim(1, 32);
  std::uniform_real_distribution<double> dens(0.02, 0.6);
  int checked = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t h = dim(rng), w = dim(rng);
    Mask a = random_mask(rng, h, w, dens(rng));
    Mask b = random_mask(rng, h, w, dens(rng));
    if (a.count() == 0 || b.count() == 0) continue;
    CHECK(hd95(a, b) == brute_hd(a, b, 0.95));
    CHECK(hausdorff(a, b) == brute_hd(a, b, 1.0));
    ++checked;
  }
  CHECK(checked > 90);
}

TEST_CASE("metric invariants on random pairs") {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 100; ++t) {
    Mask a = random_mask(rng, 20, 24, 0.3);
    Mask b = random_mask(rng, 20, 24, 0.3);
    const Overlap o = overlap_metrics(a, b);
    CHECK(o.dsc == doctest::Approx(2.0 * o.iou / (1.0 + o.iou)).epsilon(1e-9));
    CHECK(o.iou >= 0.0);
    CHECK(o.iou <= 1.0);
    const Overlap r = overlap_metrics(b, a);
    CHECK(r.iou == o.iou);
    CHECK(r.dsc == o.dsc);
    CHECK(hd95(a, b) == hd95(b, a));
    CHECK(hd95(a, b) <= hausdorff(a, b));
  }
}

TEST_CASE("hd95 is invariant to translating both masks inside a padded frame") {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 20; ++t) {
    Mask a = random_mask(rng, 12, 12, 0.4);
    Mask b = random_mask(rng, 12, 12, 0.4);
    if (a.count() == 0 || b.count() == 0) continue;
    auto embed = [](const Mask& m, std::size_t di, std::size_t dj) {
      Mask out(32, 32);
      for (std::size_t i = 0; i < m.h; ++i) {
        for (std::size_t j = 0; j < m.w; ++j) out.at(i + di, j + dj) = m.at(i, j);
      }
      return out;
    };
    // Both placements keep clear of the image border.
    const double base = hd95(embed(a, 2, 3), embed(b, 2, 3));
    CHECK(hd95(embed(a, 15, 9), embed(b, 15, 9)) == base);
  }
}

TEST_CASE("aggregation uses population statistics") {
  auto r = aggregate({{0.5, 0.6, 1.0}, {0.7, 0.8, 2.0}, {0.9, 1.0, 6.0}});
  CHECK(r.n_samples() == 3);
  CHECK(r.iou_mean == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(r.dsc_mean == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(r.hd95_mean == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(r.iou_std == doctest::Approx(std::sqrt(0.08 / 3.0)).epsilon(1e-12));
  CHECK(r.hd95_std == doctest::Approx(std::sqrt(14.0 / 3.0)).epsilon(1e-12));

  const auto j = r.to_json();
  for (const char* key : {"iou_mean", "dsc_mean", "hd95_mean", "iou_std", "dsc_std", "hd95_std",
                          "per_sample", "n_samples"}) {
    CHECK(j.contains(key));
  }
  CHECK(j["per_sample"].size() == 3);
  CHECK(j["per_sample"][1]["hd95"].get<double>() == 2.0);
}

TEST_CASE("percentile interpolates between order statistics") {
  CHECK(percentile({3.0, 1.0, 2.0}, 0.5) == 2.0);
  CHECK(percentile({0.0, 10.0}, 0.95) == doctest::Approx(9.5));
  CHECK(percentile({4.0}, 0.95) == 4.0);
  CHECK_THROWS_AS(percentile({}, 0.5), InputError);
}

TEST_CASE("an oracle predictor scores perfectly") {
  data::SynthConfig cfg;
  cfg.n_samples = 6;
  auto ds = data::generate_dataset(cfg);
  std::size_t idx = 0;
  ProbabilityFn oracle = [&](const num::Tensor<float>&) { return as_probs(ds[idx++].mask); };
  auto r = evaluate_dataset(oracle, ds, false);
  CHECK(r.n_samples() == 6);
  CHECK(r.iou_mean == 1.0);
  CHECK(r.dsc_mean == 1.0);
  CHECK(r.hd95_mean == 0.0);
  CHECK(r.iou_std == 0.0);
}

TEST_CASE("flip averaging is exact on a flip-symmetric input with a pointwise model") {
  num::Tensor<float> img({1, 8, 8});
  for (std::size_t i = 0; i < 8; ++i) {
    for (std::size_t j = 0; j < 8; ++j) {
      const double di = std::abs(static_cast<double>(i) - 3.5);
      const double dj = std::abs(static_cast<double>(j) - 3.5);
      img[i * 8 + j] = static_cast<float>(0.1 + 0.1 * di * dj);
    }
  }
  ProbabilityFn pointwise = [](const num::Tensor<float>& x) {
    num::Tensor<float> p({x.dim(1), x.dim(2)});
    for (std::size_t k = 0; k < p.numel(); ++k) p[k] = 1.0f / (1.0f + std::exp(4.0f - 6.0f * x[k]));
    return p;
  };
  CHECK(flip_averaged(pointwise, img).same_values(pointwise(img)));

  data::SegSample s;
  s.image = img;
  s.mask = Mask(8, 8);
  s.mask.at(0, 0) = s.mask.at(7, 7) = s.mask.at(0, 7) = s.mask.at(7, 0) = 1;
  auto a = evaluate_dataset(pointwise, {s}, false);
  auto b = evaluate_dataset(pointwise, {s}, true);
  CHECK(a.to_json() == b.to_json());
}

TEST_CASE("flips compose to the identity") {
  num::Tensor<float> t({2, 3, 4});
  for (std::size_t k = 0; k < t.numel(); ++k) t[k] = static_cast<float>(k);
  CHECK(flip(flip(t, true, false), true, false).same_values(t));
  CHECK(flip(flip(t, true, true), true, true).same_values(t));
  CHECK(flip(t, true, false)[0] == 3.0f);
  CHECK(flip(t, false, true)[0] == 8.0f);
  CHECK_THROWS_AS(flip(num::Tensor<float>({4}), true, false), ConfigError);
}

TEST_CASE("prediction size mismatches are input errors") {
  data::SegSample s;
  s.image = num::Tensor<float>({1, 4, 4}, 0.0f);
  s.mask = Mask(4, 4);
  ProbabilityFn bad = [](const num::Tensor<float>&) { return num::Tensor<float>({3, 3}); };
  CHECK_THROWS_AS(evaluate_dataset(bad, {s}, false), InputError);
}

TEST_CASE("auroc counts ordered pairs with ties as one half") {
  Mask y(1, 4);
  y.data = {0, 1, 0, 1};
  const std::vector<float> perfect{0.1f, 0.9f, 0.2f, 0.8f};
  CHECK(auroc(perfect, y) == 1.0);
  const std::vector<float> reversed{0.9f, 0.1f, 0.8f, 0.2f};
  CHECK(auroc(reversed, y) == 0.0);
  const std::vector<float> flat(4, 0.5f);
  CHECK(auroc(flat, y) == 0.5);
  // Pairs (pos, neg): (0.5,0.1) win, (0.5,0.5) tie, (0.7,0.1) win, (0.7,0.5) win.
  const std::vector<float> mixed{0.1f, 0.5f, 0.5f, 0.7f};
  CHECK(auroc(mixed, y) == 3.5 / 4.0);
  CHECK_THROWS_AS(auroc(perfect, Mask(1, 4)), InputError);
  CHECK_THROWS_AS(auroc(std::vector<float>(3, 0.f), y), InputError);
}
