// Copyright (c) 2026, The guideseg Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "guideseg/numerics/grad_check.hpp"
#include "guideseg/numerics/kernels.hpp"
#include "guideseg/numerics/ops.hpp"
#include "guideseg/tokenbook/tokenbook.hpp"
#include "test_util.hpp"

using namespace guideseg;
using namespace guideseg::tokenbook;
using guideseg::encoder::TokenGrid;
using guideseg::encoder::TokenVars;
using guideseg::num::Rng;
using guideseg::testing::random_tensor;

namespace {

template <typename T = double>
TokenGrid<T> random_grid(std::size_t ht, std::size_t wt, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  return TokenGrid<T>{ht, wt, d, random_tensor<T>({ht * wt, d}, rng)};
}

template <typename T = double>
TokenBook<T> book_from(num::Tensor<T> protos, num::Tensor<T> alphas, Similarity sim,
                       double temperature = 1.0) {
  TokenBook<T> b;
  b.prototypes = std::move(protos);
  b.alphas = std::move(alphas);
  b.similarity = sim;
  b.temperature = static_cast<T>(temperature);
  return b;
}

double sigmoid_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("zero aggregation weights give a flat one-half guide") {
  auto grid = random_grid(4, 4, 6, 3);
  auto book = init_tokenbook<double>({.prototypes = 5, .alpha_std = 0.1, .seed = 2}, 6);
  std::fill(book.alphas.data().begin(), book.alphas.data().end(), 0.0);
  auto s = token_scores(grid, book);
  for (double v : s.data()) CHECK(v == 0.0);
  auto g = guide_mask(grid, book, 16, 16);
  CHECK(g.values.shape() == num::Shape{16, 16});
  for (double v : g.values.data()) CHECK(v == 0.5);
}

TEST_CASE("tokens parallel to a single prototype score one") {
  num::Tensor<double> feats({4, 3});
  for (std::size_t i = 0; i < 4; ++i) {
    const double c = 0.5 + static_cast<double>(i);
    feats.at(i, 0) = 1.0 * c;
    feats.at(i, 1) = -2.0 * c;
    feats.at(i, 2) = 0.5 * c;
  }
  TokenGrid<double> grid{2, 2, 3, feats};
  auto book = book_from<double>(num::Tensor<double>({1, 3}, {2.0, -4.0, 1.0}),
                                num::Tensor<double>({1}, {1.0}), Similarity::kCosine);
  auto s = token_scores(grid, book);
  for (double v : s.data()) CHECK(v == doctest::Approx(1.0).epsilon(1e-6));
  auto g = guide_mask(grid, book, 2, 2);
  for (double v : g.values.data()) CHECK(v == doctest::Approx(0.7310585786).epsilon(1e-6));
}

TEST_CASE("dot-product scores on a two-prototype hand case") {
  TokenGrid<double> grid{1, 2, 2, num::Tensor<double>({2, 2}, {1, 2, 3, -1})};
  auto book = book_from<double>(num::Tensor<double>({2, 2}, {1, 0, 0.5, 1}),
                                num::Tensor<double>({2}, {2, -1}), Similarity::kDot);
  auto s = token_scores(grid, book);
  CHECK(s.shape() == num::Shape{1, 2});
  CHECK(s[0] == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(s[1] == doctest::Approx(5.5).epsilon(1e-12));
  auto g = guide_mask(grid, book, 1, 2);
  CHECK(g.values[0] == doctest::Approx(sigmoid_ref(-0.5)).epsilon(1e-12));
  CHECK(g.values[1] == doctest::Approx(sigmoid_ref(5.5)).epsilon(1e-12));
}

TEST_CASE("guide equals a composition of independent reference pieces") {
  for (Similarity sim : {Similarity::kCosine, Similarity::kDot}) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(seed + 100);
      const std::size_t ht = 2 + rng.below(4), wt = 2 + rng.below(4), d = 1 + rng.below(8);
      const std::size_t K = 1 + rng.below(6);
      auto grid = random_grid(ht, wt, d, seed);
      auto book = book_from<double>(random_tensor<double>({K, d}, rng),
                                    random_tensor<double>({K}, rng), sim, 0.5 + rng.uniform());
      const std::size_t oh = 1 + rng.below(20), ow = 1 + rng.below(20);

      num::Tensor<double> logits({1, ht, wt});
      for (std::size_t i = 0; i < ht * wt; ++i) {
        double s = 0;
        for (std::size_t k = 0; k < K; ++k) {
          double dot = 0, nt = 0, np = 0;
          for (std::size_t j = 0; j < d; ++j) {
            const double t = grid.features.at(i, j), p = book.prototypes.at(k, j);
            dot += t * p;
            nt += t * t;
            np += p * p;
          }
          const double c =
              sim == Similarity::kCosine ? dot / (std::sqrt(nt) * std::sqrt(np) + 1e-8) : dot;
          s += book.alphas[k] * c;
        }
        logits[i] = sigmoid_ref(std::clamp(s / book.temperature, -15.0, 15.0));
      }
      auto expect = num::bilinear_resize(logits, oh, ow);
      auto got = guide_mask(grid, book, oh, ow);
      for (std::size_t i = 0; i < expect.numel(); ++i) {
        CHECK(got.values[i] == doctest::Approx(expect[i]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("guide values stay strictly inside the unit interval") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    auto grid = random_grid<float>(4, 4, 8, seed);
    for (float& v : grid.features.data()) v *= 100.0f;
    auto book = init_tokenbook<float>({.prototypes = 4, .temperature = 0.01, .alpha_std = 0.1, .seed = seed}, 8);
    for (float& a : book.alphas.data()) a = static_cast<float>(rng.uniform(-50.0, 50.0));
    auto g = guide_mask(grid, book, 64, 64);
    for (float v : g.values.data()) {
      CHECK(v > 0.0f);
      CHECK(v < 1.0f);
    }
  }
}

TEST_CASE("cosine scores ignore token and prototype scale; dot scores are linear") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed + 7);
    auto grid = random_grid(3, 3, 5, seed);
    auto protos = random_tensor<double>({4, 5}, rng);
    auto alphas = random_tensor<double>({4}, rng);
    const double c = 0.1 + 10.0 * rng.uniform();

    auto cos_book = book_from<double>(protos, alphas, Similarity::kCosine);
    auto base = token_scores(grid, cos_book);
    TokenGrid<double> scaled = grid;
    for (double& v : scaled.features.data()) v *= c;
    auto s1 = token_scores(scaled, cos_book);
    auto scaled_book = cos_book;
    for (double& v : scaled_book.prototypes.data()) v *= c;
    auto s2 = token_scores(grid, scaled_book);
    for (std::size_t i = 0; i < base.numel(); ++i) {
      CHECK(std::abs(s1[i] - base[i]) <= 1e-6);
      CHECK(std::abs(s2[i] - base[i]) <= 1e-6);
    }

    auto dot_book = book_from<double>(protos, alphas, Similarity::kDot);
    auto d0 = token_scores(grid, dot_book);
    auto d1 = token_scores(scaled, dot_book);
    for (std::size_t i = 0; i < d0.numel(); ++i) {
      CHECK(d1[i] == doctest::Approx(c * d0[i]).epsilon(1e-10));
    }
  }
}

TEST_CASE("permuting prototypes with their weights leaves the guide bit-identical") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const std::size_t K = 2 + rng.below(15), d = 3 + rng.below(6);
    auto grid = random_grid<float>(4, 4, d, seed + 50);
    auto book = init_tokenbook<float>({.prototypes = K, .alpha_std = 0.1, .seed = seed}, d);
    std::vector<std::size_t> perm(K);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = K - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
    auto shuffled = book;
    for (std::size_t k = 0; k < K; ++k) {
      shuffled.alphas[k] = book.alphas[perm[k]];
      for (std::size_t j = 0; j < d; ++j) shuffled.prototypes.at(k, j) = book.prototypes.at(perm[k], j);
    }
    auto a = guide_mask(grid, book, 32, 32);
    auto b = guide_mask(grid, shuffled, 32, 32);
    CHECK(a.values.same_values(b.values));
  }
}

TEST_CASE("guide mask gradients match finite differences") {
  for (Similarity sim : {Similarity::kCosine, Similarity::kDot}) {
    Rng rng(42);
    num::Tensor<double> feats = random_tensor<double>({9, 4}, rng);
    auto book = book_from<double>(random_tensor<double>({3, 4}, rng),
                                  random_tensor<double>({3}, rng), sim, 0.7);
    auto f = [&](num::Graph<double>& g) {
      TokenVars<double> tv{3, 3, 4, g.param(feats)};
      return testing::weighted_sum(guide_mask(tv, book, 7, 5), 11);
    };
    auto report =
        num::grad_check("guide_mask/" + to_string(sim), f, {&feats, &book.prototypes, &book.alphas});
    CHECK(report.passed(1e-4));
    CHECK(report.n_params_checked == 36 + 12 + 3);
  }
}

TEST_CASE("frozen tokens receive no gradient while the book does") {
  auto grid = random_grid<float>(2, 2, 4, 9);
  auto book = init_tokenbook<float>({.prototypes = 3, .alpha_std = 0.1, .seed = 1}, 4);
  num::Graph<float> g;
  TokenVars<float> tv{2, 2, 4, g.constant(grid.features)};
  auto loss = num::sum(guide_mask(tv, book, 8, 8));
  g.backward(loss);
  CHECK_FALSE(g.requires_grad(tv.features));
  bool any = false;
  for (float v : book.prototypes.grad()) any = any || v != 0.0f;
  CHECK(any);
}

TEST_CASE("configuration and shape errors") {
  CHECK_THROWS_AS(init_tokenbook<float>({.prototypes = 0}, 4), ConfigError);
  CHECK_THROWS_AS(init_tokenbook<float>({.temperature = 0.0}, 4), ConfigError);
  CHECK_THROWS_AS(init_tokenbook<float>({}, 0), ConfigError);
  CHECK_THROWS_AS(similarity_from_string("l2"), ConfigError);
  CHECK(similarity_from_string("dot") == Similarity::kDot);
  auto grid = random_grid<float>(2, 2, 4, 1);
  auto book = init_tokenbook<float>({.prototypes = 3}, 5);
  CHECK_THROWS_AS(token_scores(grid, book), ConfigError);
  auto ok = init_tokenbook<float>({.prototypes = 3}, 4);
  CHECK_THROWS_AS(guide_mask(grid, ok, 0, 4), ConfigError);
}
