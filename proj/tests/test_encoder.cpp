// Copyright (c) 2026, The guideseg Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include <Eigen/Dense>

#include "guideseg/encoder/encoder.hpp"
#include "guideseg/numerics/grad_check.hpp"
#include "guideseg/numerics/ops.hpp"
#include "test_util.hpp"

using namespace guideseg;
using namespace guideseg::encoder;
using guideseg::num::Rng;
using guideseg::testing::random_tensor;

namespace {

EncoderConfig small_config() {
  EncoderConfig cfg;
  cfg.image_size = 16;
  cfg.patch = 4;
  cfg.dim = 8;
  cfg.depth = 2;
  cfg.heads = 2;
  cfg.seed = 17;
  return cfg;
}

// Plain scalar reference for a tiny encoder; shares no code with the tape.
using Mat = std::vector<std::vector<double>>;

Mat layer_norm_ref(const Mat& x, const num::Tensor<double>& g, const num::Tensor<double>& b) {
  Mat out = x;
  for (auto& row : out) {
    double mu = 0, var = 0;
    for (double v : row) mu += v;
    mu /= row.size();
    for (double v : row) var += (v - mu) * (v - mu);
    var /= row.size();
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = (row[j] - mu) / std::sqrt(var + 1e-5) * g[j] + b[j];
  }
  return out;
}

Mat linear_ref(const Mat& x, const num::Tensor<double>& w, const num::Tensor<double>& b) {
  const std::size_t din = w.dim(0), dout = w.dim(1);
  Mat out(x.size(), std::vector<double>(dout));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < dout; ++j) {
      double acc = b[j];
      for (std::size_t k = 0; k < din; ++k) acc += x[i][k] * w.at(k, j);
      out[i][j] = acc;
    }
  return out;
}

}  // namespace

TEST_CASE("patchify_embed token grid shapes") {
  EncoderConfig cfg;
  auto w = init_encoder<float>(cfg);
  const TokenGrid<float> t = patchify_embed(num::Tensor<float>({1, 64, 64}, 0.5f), cfg, w);
  CHECK(t.ht == 8);
  CHECK(t.wt == 8);
  CHECK(t.features.shape() == num::Shape{64, 64});

  EncoderConfig one = small_config();
  one.patch = 16;
  auto w1 = init_encoder<float>(one);
  CHECK(patchify_embed(num::Tensor<float>({1, 16, 16}, 0.1f), one, w1).features.dim(0) == 1);

  CHECK_THROWS_AS(patchify_embed(num::Tensor<float>({1, 18, 16}), small_config(), w1), ConfigError);
  EncoderConfig bad = small_config();
  bad.patch = 5;
  CHECK_THROWS_AS(init_encoder<float>(bad), ConfigError);
  bad = small_config();
  bad.heads = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("zero image through a zero-bias projection yields the positional table") {
  const EncoderConfig cfg = small_config();
  auto w = init_encoder<double>(cfg);
  const TokenGrid<double> t = patchify_embed(num::Tensor<double>({1, 16, 16}), cfg, w);
  CHECK(t.features.same_values(w.pos));
}

TEST_CASE("token count equals (H/patch)*(W/patch)") {
  for (std::size_t patch : {1u, 2u, 4u, 8u, 16u}) {
    EncoderConfig cfg = small_config();
    cfg.patch = patch;
    cfg.depth = 1;
    auto w = init_encoder<float>(cfg);
    CHECK(encode(num::Tensor<float>({1, 16, 16}, 0.2f), cfg, w).features.dim(0) ==
          (16 / patch) * (16 / patch));
  }
}

TEST_CASE("encode is deterministic and LoRA with B = 0 is an exact no-op") {
  const EncoderConfig cfg = small_config();
  auto w = init_encoder<float>(cfg);
  auto w2 = init_encoder<float>(cfg);
  LoraConfig lc;
  lc.rank = 2;
  auto lora = init_lora<float>(cfg, lc);
  Rng rng(3);
  for (int i = 0; i < 5; ++i) {
    const auto img = random_tensor<float>({1, 16, 16}, rng, 0, 1);
    const auto a = encode(img, cfg, w);
    CHECK(a.features.same_values(encode(img, cfg, w2).features));
    CHECK(a.features.same_values(encode(img, cfg, w, &lora).features));
  }
}

TEST_CASE("single attention block matches a scalar reference") {
  EncoderConfig cfg;
  cfg.image_size = 2;
  cfg.patch = 1;
  cfg.dim = 2;
  cfg.depth = 1;
  cfg.heads = 1;
  cfg.mlp_ratio = 1;
  auto w = init_encoder<double>(cfg);
  // Hand-set weights.
  w.patch_w = num::Tensor<double>({1, 2}, std::vector<double>{1.0, -0.5});
  w.patch_b = num::Tensor<double>({2}, std::vector<double>{0.1, 0.2});
  w.pos = num::Tensor<double>({4, 2}, std::vector<double>{0.0, 0.1, 0.2, 0.0, -0.1, 0.3, 0.05, -0.2});
  auto& b = w.blocks[0];
  b.proj_w[0] = num::Tensor<double>({2, 2}, std::vector<double>{0.5, -0.2, 0.3, 0.8});
  b.proj_w[1] = num::Tensor<double>({2, 2}, std::vector<double>{-0.4, 0.6, 0.9, 0.1});
  b.proj_w[2] = num::Tensor<double>({2, 2}, std::vector<double>{0.7, 0.2, -0.3, 0.5});
  b.proj_w[3] = num::Tensor<double>({2, 2}, std::vector<double>{1.0, 0.0, 0.2, -0.6});
  b.proj_b[1] = num::Tensor<double>({2}, std::vector<double>{0.05, -0.05});
  b.fc1_w = num::Tensor<double>({2, 2}, std::vector<double>{0.3, -0.7, 0.4, 0.2});
  b.fc2_w = num::Tensor<double>({2, 2}, std::vector<double>{-0.5, 0.25, 0.6, 0.9});
  b.fc2_b = num::Tensor<double>({2}, std::vector<double>{0.01, 0.02});
  b.ln1_g = num::Tensor<double>({2}, std::vector<double>{1.5, 0.5});
  const num::Tensor<double> image({1, 2, 2}, std::vector<double>{0.2, 0.9, 0.4, 0.1});
  const TokenGrid<double> got = encode(image, cfg, w);

  Mat x(4, std::vector<double>(2));
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t j = 0; j < 2; ++j)
      x[t][j] = image[t] * w.patch_w.at(0, j) + w.patch_b[j] + w.pos.at(t, j);
  const Mat h = layer_norm_ref(x, b.ln1_g, b.ln1_b);
  const Mat q = linear_ref(h, b.proj_w[0], b.proj_b[0]);
  const Mat k = linear_ref(h, b.proj_w[1], b.proj_b[1]);
  const Mat v = linear_ref(h, b.proj_w[2], b.proj_b[2]);
  Mat att(4, std::vector<double>(2, 0.0));
  for (std::size_t i = 0; i < 4; ++i) {
    std::vector<double> s(4);
    double mx = -1e300, z = 0;
    for (std::size_t j = 0; j < 4; ++j) {
      s[j] = (q[i][0] * k[j][0] + q[i][1] * k[j][1]) / std::sqrt(2.0);
      mx = std::max(mx, s[j]);
    }
    for (double& e : s) z += (e = std::exp(e - mx));
    for (std::size_t j = 0; j < 4; ++j)
      for (std::size_t c = 0; c < 2; ++c) att[i][c] += s[j] / z * v[j][c];
  }
  const Mat o = linear_ref(att, b.proj_w[3], b.proj_b[3]);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 2; ++c) x[i][c] += o[i][c];
  Mat mid = linear_ref(layer_norm_ref(x, b.ln2_g, b.ln2_b), b.fc1_w, b.fc1_b);
  for (auto& row : mid)
    for (double& e : row) e = 0.5 * e * (1 + std::erf(e / std::sqrt(2.0)));
  const Mat m2 = linear_ref(mid, b.fc2_w, b.fc2_b);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 2; ++c) x[i][c] += m2[i][c];
  const Mat want = layer_norm_ref(x, w.norm_g, w.norm_b);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 2; ++c) CHECK(std::abs(got.features.at(i, c) - want[i][c]) <= 1e-6);
}

TEST_CASE("lora_project") {
  Rng rng(5);
  const auto x = random_tensor({3, 4}, rng);
  const auto W = random_tensor({4, 4}, rng);
  const auto A = random_tensor({4, 2}, rng);
  const num::Tensor<double> zeroB({2, 4});
  CHECK(lora_project(x, W, A, zeroB, 2.0).same_values(num::matmul(x, W)));

  // W = 0, A = e_0, B = e_1^T: output column 1 copies input column 0.
  num::Tensor<double> a1({4, 1}), b1({1, 4});
  a1[0] = 1.0;
  b1[1] = 1.0;
  const auto y = lora_project(x, num::Tensor<double>({4, 4}), a1, b1, 1.0);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(y.at(i, j) == (j == 1 ? x.at(i, 0) : 0.0));

  auto Wf = W, Af = A;
  auto Bf = random_tensor({2, 4}, rng);
  const auto report = num::grad_check(
      "lora_project",
      [&](num::Graph<double>& g) {
        num::Var<double> xv = g.constant(x);
        num::Var<double> wv = g.param(Wf);
        return num::sum(lora_project(xv, wv, g.param(Af), g.param(Bf), 2.0));
      },
      {&Af, &Bf});
  CHECK(report.max_rel_err <= 1e-6);

  num::Graph<double> g;
  CHECK_THROWS_AS(lora_project(g.constant(x), g.constant(W), g.constant(random_tensor({4, 5}, rng)),
                               g.constant(random_tensor({5, 4}, rng)), 1.0),
                  ConfigError);
}

TEST_CASE("LoRA configuration errors") {
  EncoderConfig cfg = small_config();
  LoraConfig lc;
  lc.rank = cfg.dim + 1;
  CHECK_THROWS_AS(init_lora<float>(cfg, lc), ConfigError);

  lc.rank = 2;
  auto lora = init_lora<float>(cfg, lc);
  auto w = init_encoder<float>(cfg);
  lora.blocks.pop_back();
  CHECK_THROWS_AS(encode(num::Tensor<float>({1, 16, 16}), cfg, w, &lora), ConfigError);
}

TEST_CASE("frozen encoder weights stay gradient-free while LoRA factors learn") {
  const EncoderConfig cfg = small_config();
  auto w = init_encoder<float>(cfg);
  LoraConfig lc;
  lc.rank = 2;
  auto lora = init_lora<float>(cfg, lc);
  for (auto& [name, t] : lora.named_parameters()) {
    if (name.back() == 'b') {
      Rng rng(1);
      for (float& v : t->data()) v = static_cast<float>(rng.uniform(-0.1, 0.1));
    }
  }
  Rng rng(2);
  num::Graph<float> g;
  const auto tv = encode(g, g.constant(random_tensor<float>({1, 16, 16}, rng, 0, 1)), cfg, w, &lora);
  g.backward(guideseg::testing::weighted_sum(tv.features, 4));
  for (auto& [name, t] : w.named_parameters()) {
    INFO(name);
    CHECK_FALSE(t->trainable());
    for (float v : t->grad()) CHECK(v == 0.0f);
  }
  bool any = false;
  for (auto& [name, t] : lora.named_parameters())
    for (float v : t->grad()) any = any || v != 0.0f;
  CHECK(any);
}

TEST_CASE("rank-1 deltas factor exactly with r = 1") {
  Rng rng(77);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t d = 6;
    const double scale = 2.0;
    Eigen::VectorXd u(d), v(d);
    for (std::size_t i = 0; i < d; ++i) {
      u[i] = rng.uniform(-1, 1);
      v[i] = rng.uniform(-1, 1);
    }
    const Eigen::MatrixXd delta = u * v.transpose();
    // Fix A to a column of delta and solve for B by least squares.
    const Eigen::MatrixXd A = delta.col(0);
    const Eigen::MatrixXd B = A.colPivHouseholderQr().solve(delta) / scale;
    const double residual = (scale * A * B - delta).norm();
    CHECK(residual <= 1e-8);
  }
}
