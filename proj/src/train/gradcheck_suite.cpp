// Copyright (c) 2026, The guideseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "guideseg/train/gradcheck_suite.hpp"

#include <cstdio>
#include <string>

#include "guideseg/data/synth.hpp"
#include "guideseg/numerics/ops.hpp"
#include "guideseg/numerics/random.hpp"
#include "guideseg/objectives/objectives.hpp"
#include "guideseg/train/model.hpp"

namespace guideseg::train {
namespace {

using num::Graph;
using num::Tensor;
using num::Var;
using D = double;

Tensor<D> uniform(num::Shape shape, num::Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<D> t(std::move(shape));
  for (D& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Scalar with a distinct random weight per output entry.
Var<D> weighted_sum(Var<D> y, std::uint64_t seed) {
  num::Rng rng(seed);
  return num::sum(num::mul(y, y.graph().constant(uniform(y.shape(), rng))));
}

Tensor<D> binary_target(std::size_t h, std::size_t w, num::Rng& rng) {
  Tensor<D> t({h, w});
  for (D& v : t.data()) v = rng.coin(0.4) ? 1.0 : 0.0;
  t[0] = 1.0;
  t[1] = 0.0;
  return t;
}

// Tiny guided-lora configuration for the end-to-end check.
TrainConfig pipeline_config() {
  TrainConfig cfg;
  cfg.mode = Mode::kGuidedLora;
  cfg.seed = 17;
  cfg.encoder.image_size = 16;
  cfg.encoder.patch = 4;
  cfg.encoder.dim = 8;
  cfg.encoder.depth = 1;
  cfg.encoder.heads = 2;
  cfg.encoder.mlp_ratio = 2;
  cfg.lora.rank = 2;
  cfg.tokenbook.prototypes = 3;
  cfg.tokenbook.alpha_std = 0.5;
  cfg.unet.base_channels = 2;
  cfg.unet.depth = 2;
  cfg.loss.hinge_enabled = true;
  cfg.loss.hinge_margin = 0.8;
  cfg.loss.band_radius = 1;
  return with_run_seed(cfg);
}

num::GradReport full_pipeline(double eps) {
  const TrainConfig cfg = pipeline_config();
  Model<D> model = build_model<D>(cfg);
  num::Rng rng(num::derive_seed(cfg.seed, "gradcheck.pipeline"));
  // Nonzero gates and adapter B factors so every parameter has a gradient,
  // and nonzero biases so no pre-activation sits exactly on a ReLU kink.
  for (Tensor<D>& b : model.gates.beta) b[0] = rng.uniform(0.2, 0.6);
  for (auto& [name, t] : model.unet.named_parameters()) {
    if (!name.ends_with(".b")) continue;
    for (D& v : t->data()) v = rng.uniform(-0.2, 0.2);
  }
  for (auto& blk : model.lora->blocks) {
    for (auto& pair : blk) {
      if (!pair) continue;
      for (D& v : pair->b.data()) v = rng.uniform(-0.3, 0.3);
    }
  }
  data::SynthConfig sc;
  sc.size = 16;
  const data::SegSample s = data::generate_sample(cfg.seed, sc);
  const Tensor<D> image = s.image.cast<D>();
  const Tensor<D> gt = objectives::mask_tensor<D>(s.mask);

  std::vector<Tensor<D>*> params;
  for (ParamGroup<D>& g : model.groups()) {
    if (g.name == "encoder") continue;
    for (auto& [name, t] : g.params) params.push_back(t);
  }
  return num::grad_check(
      "pipeline 16x16 (tokenbook+gates+unet+lora)",
      [&](Graph<D>& g) { return sample_loss(g, model, image, gt, cfg.loss).total; }, params, eps);
}

}  // namespace

std::vector<num::GradReport> gradcheck_suite(bool full, double eps) {
  std::vector<num::GradReport> out;
  num::Rng rng(20260101);
  auto run = [&](const std::string& name, const num::ScalarFn& f,
                 std::vector<Tensor<D>*> params) {
    out.push_back(num::grad_check(name, f, params, eps));
  };

  Tensor<D> x = uniform({2, 6, 6}, rng), w = uniform({3, 2, 3, 3}, rng), b = uniform({3}, rng);
  run("conv2d 3x3 stride 1 pad 1",
      [&](Graph<D>& g) { return weighted_sum(num::conv2d(g.param(x), g.param(w), g.param(b), 1, 1), 1); },
      {&x, &w, &b});
  run("conv2d 3x3 stride 2 pad 1",
      [&](Graph<D>& g) { return weighted_sum(num::conv2d(g.param(x), g.param(w), g.param(b), 2, 1), 2); },
      {&x, &w, &b});
  Tensor<D> w1 = uniform({3, 2, 1, 1}, rng);
  run("conv2d 1x1",
      [&](Graph<D>& g) { return weighted_sum(num::conv2d(g.param(x), g.param(w1), g.param(b), 1, 0), 3); },
      {&x, &w1, &b});
  run("relu", [&](Graph<D>& g) { return weighted_sum(num::relu(g.param(x)), 4); }, {&x});
  run("max_pool2x2", [&](Graph<D>& g) { return weighted_sum(num::max_pool2x2(g.param(x)), 5); }, {&x});
  run("bilinear_resize up",
      [&](Graph<D>& g) { return weighted_sum(num::bilinear_resize(g.param(x), 11, 9), 6); }, {&x});
  run("bilinear_resize down",
      [&](Graph<D>& g) { return weighted_sum(num::bilinear_resize(g.param(x), 4, 3), 7); }, {&x});
  Tensor<D> x2 = uniform({1, 6, 6}, rng);
  run("concat_channels",
      [&](Graph<D>& g) { return weighted_sum(num::concat_channels(g.param(x), g.param(x2)), 8); },
      {&x, &x2});

  Tensor<D> q = uniform({5, 6}, rng), k = uniform({5, 6}, rng), v = uniform({5, 6}, rng);
  run("multi_head_attention (2 heads)",
      [&](Graph<D>& g) {
        return weighted_sum(num::multi_head_attention(g.param(q), g.param(k), g.param(v), 2), 9);
      },
      {&q, &k, &v});
  Tensor<D> gamma = uniform({6}, rng, 0.5, 1.5), beta = uniform({6}, rng);
  run("layer_norm",
      [&](Graph<D>& g) {
        return weighted_sum(num::layer_norm(g.param(q), g.param(gamma), g.param(beta)), 10);
      },
      {&q, &gamma, &beta});
  run("gelu", [&](Graph<D>& g) { return weighted_sum(num::gelu(g.param(q)), 11); }, {&q});

  Tensor<D> lw = uniform({6, 6}, rng), la = uniform({6, 2}, rng), lb = uniform({2, 6}, rng);
  run("lora_project (A, B; W frozen)",
      [&](Graph<D>& g) {
        return weighted_sum(
            encoder::lora_project(g.constant(q), g.constant(lw), g.param(la), g.param(lb), 2.0), 12);
      },
      {&la, &lb});

  tokenbook::TokenBook<D> book = tokenbook::init_tokenbook<D>(
      {.prototypes = 3, .alpha_std = 0.5, .seed = 3}, 6);
  Tensor<D> feats = uniform({6, 6}, rng);
  for (tokenbook::Similarity sim : {tokenbook::Similarity::kCosine, tokenbook::Similarity::kDot}) {
    book.similarity = sim;
    run("token_scores " + tokenbook::to_string(sim),
        [&](Graph<D>& g) {
          encoder::TokenVars<D> tv{2, 3, 6, g.param(feats)};
          return weighted_sum(tokenbook::token_scores(tv, book), 13);
        },
        {&feats, &book.prototypes, &book.alphas});
  }
  book.similarity = tokenbook::Similarity::kCosine;
  run("guide_mask",
      [&](Graph<D>& g) {
        encoder::TokenVars<D> tv{2, 3, 6, g.param(feats)};
        return weighted_sum(tokenbook::guide_mask(tv, book, 7, 9), 14);
      },
      {&feats, &book.prototypes, &book.alphas});

  Tensor<D> guide = uniform({7, 5}, rng, 0.05, 0.95), gbeta({1}, 0.7);
  run("gate",
      [&](Graph<D>& g) {
        return weighted_sum(segnet::gate(g.param(x), g.param(guide), g.param(gbeta)), 15);
      },
      {&x, &guide, &gbeta});

  const Tensor<D> gt = binary_target(6, 6, rng);
  Tensor<D> logits = uniform({6, 6}, rng, -2.0, 2.0);
  run("dice_loss",
      [&](Graph<D>& g) { return objectives::dice_loss(num::sigmoid(g.param(logits)), gt, 1e-6); },
      {&logits});
  run("bce_with_logits",
      [&](Graph<D>& g) { return objectives::bce_with_logits(g.param(logits), gt); }, {&logits});
  run("guide_bce",
      [&](Graph<D>& g) { return objectives::guide_bce(num::sigmoid(g.param(logits)), gt); },
      {&logits});
  run("boundary_hinge",
      [&](Graph<D>& g) {
        return objectives::boundary_hinge(num::sigmoid(g.param(logits)), gt, 0.8, 1);
      },
      {&logits});

  if (full) out.push_back(full_pipeline(eps));
  return out;
}

void print_gradcheck_table(const std::vector<num::GradReport>& reports, std::ostream& out,
                           double tol) {
  char line[160];
  std::snprintf(line, sizeof line, "%-44s %8s %13s %13s  %s\n", "operation", "params",
                "max_rel_err", "max_abs_err", "status");
  out << line;
  for (const num::GradReport& r : reports) {
    std::snprintf(line, sizeof line, "%-44s %8zu %13.3e %13.3e  %s\n", r.op_name.c_str(),
                  r.n_params_checked, r.max_rel_err, r.max_abs_err,
                  r.passed(tol) ? "PASS" : "FAIL");
    out << line;
  }
}

}  // namespace guideseg::train
