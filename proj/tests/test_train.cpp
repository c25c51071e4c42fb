// Copyright (c) 2026, The guideseg Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "guideseg/train/checkpoint.hpp"
#include "guideseg/train/trainer.hpp"

using namespace guideseg;
using namespace guideseg::train;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "guideseg_test_train";
  std::filesystem::create_directories(dir);
  return dir / name;
}

std::vector<char> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::filesystem::path& p, const std::vector<char>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// A reduced configuration that trains in well under a second per epoch.
TrainConfig small_config(Mode mode) {
  TrainConfig cfg;
  cfg.mode = mode;
  cfg.epochs = 1;
  cfg.batch = 4;
  cfg.encoder.image_size = 32;
  cfg.encoder.patch = 8;
  cfg.encoder.dim = 16;
  cfg.encoder.depth = 1;
  cfg.encoder.heads = 2;
  cfg.encoder.mlp_ratio = 2;
  cfg.lora.rank = 2;
  cfg.tokenbook.prototypes = 4;
  cfg.unet.base_channels = 4;
  cfg.unet.depth = 2;
  return cfg;
}

std::vector<data::SegSample> small_set(std::size_t n, std::uint64_t seed) {
  data::SynthConfig sc;
  sc.size = 32;
  sc.n_samples = n;
  sc.seed = seed;
  return data::generate_dataset(sc);
}

std::string history_text(const std::vector<EpochRecord>& h) {
  std::ostringstream out;
  write_history(h, out);
  return out.str();
}

bool same_params(NamedParams<float> a, NamedParams<float> b) {
  if (a.size() != b.size()) return false;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[k].first != b[k].first || !a[k].second->same_values(*b[k].second)) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("AdamW with zero gradient applies only the decoupled decay") {
  num::Tensor<double> w({3}, std::vector<double>{1.0, -2.0, 0.5});
  w.set_trainable(true);
  num::Tensor<double> untouched = w;
  AdamWConfig cfg{0.1, 0.01, 0.9, 0.999, 1e-8};
  AdamW<double> opt("weights", {&w}, cfg);
  opt.step();
  for (std::size_t i = 0; i < 3; ++i) CHECK(w[i] == untouched[i] * (1.0 - 0.1 * 0.01));
  w.grad();
  opt.step();
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(w[i] == untouched[i] * (1.0 - 0.1 * 0.01) * (1.0 - 0.1 * 0.01));
  }
}

TEST_CASE("first AdamW step moves each weight by about lr against the gradient sign") {
  num::Tensor<double> w({4}, std::vector<double>{0.3, 0.3, -0.7, 2.0});
  w.set_trainable(true);
  const std::vector<double> g{0.5, -3.0, 1e-3, -40.0};
  std::copy(g.begin(), g.end(), w.grad().begin());
  const num::Tensor<double> before = w;
  AdamW<double> opt("w", {&w}, {1e-3, 0.0, 0.9, 0.999, 1e-8});
  opt.step();
  for (std::size_t i = 0; i < 4; ++i) {
    const double expect = before[i] - 1e-3 * (g[i] > 0 ? 1.0 : -1.0);
    CHECK(std::abs(w[i] - expect) <= 1e-3 * 1e-8 / std::abs(g[i]) + 1e-15);
  }
}

TEST_CASE("two AdamW steps match the hand-rolled moment recursion") {
  const double lr = 0.05, wd = 0.1, b1 = 0.8, b2 = 0.9, eps = 1e-6;
  num::Tensor<double> w({2}, std::vector<double>{1.5, -0.25});
  w.set_trainable(true);
  AdamW<double> opt("w", {&w}, {lr, wd, b1, b2, eps});
  const double g[2][2] = {{0.4, -1.2}, {-0.1, 0.6}};
  double ref[2] = {1.5, -0.25}, m[2] = {0, 0}, v[2] = {0, 0};
  for (int t = 1; t <= 2; ++t) {
    w.grad()[0] = g[t - 1][0];
    w.grad()[1] = g[t - 1][1];
    opt.step();
    for (int i = 0; i < 2; ++i) {
      ref[i] -= lr * wd * ref[i];
      m[i] = b1 * m[i] + (1 - b1) * g[t - 1][i];
      v[i] = b2 * v[i] + (1 - b2) * g[t - 1][i] * g[t - 1][i];
      const double mh = m[i] / (1 - std::pow(b1, t)), vh = v[i] / (1 - std::pow(b2, t));
      ref[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
  CHECK(std::abs(w[0] - ref[0]) <= 1e-10);
  CHECK(std::abs(w[1] - ref[1]) <= 1e-10);
  CHECK(opt.steps() == 2);
}

TEST_CASE("AdamW rejects non-finite gradients without touching parameters") {
  num::Tensor<float> w({2}, 1.0f);
  w.set_trainable(true);
  w.grad()[1] = std::numeric_limits<float>::quiet_NaN();
  AdamW<float> opt("segnet", {&w}, {});
  try {
    opt.step();
    FAIL("expected a numerical error");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("segnet") != std::string::npos);
  }
  CHECK(w[0] == 1.0f);
  CHECK(opt.steps() == 0);
  CHECK_THROWS_AS(AdamW<float>("x", {}, AdamWConfig{0.0}), ConfigError);
}

TEST_CASE("training configuration survives a JSON round trip") {
  TrainConfig cfg = small_config(Mode::kGuidedLora);
  cfg.unet.gate_stages = std::vector<std::size_t>{0, 2};
  cfg.loss.hinge_enabled = true;
  cfg.tokenbook.similarity = tokenbook::Similarity::kDot;
  cfg.lora.targets = {false, true, false, true};
  cfg.seed = 0xFFFFFFFFFFFFFFF1ULL;
  const auto j = to_json(cfg);
  const TrainConfig back = train_config_from_json(j);
  CHECK(to_json(back) == j);
  CHECK(back.seed == cfg.seed);
  CHECK(back.unet.gate_stages == cfg.unet.gate_stages);

  auto bad = j;
  bad["learning_rate"] = 1.0;
  CHECK_THROWS_AS(train_config_from_json(bad), ConfigError);
  bad = j;
  bad["unet"]["depth"] = "three";
  CHECK_THROWS_AS(train_config_from_json(bad), ConfigError);
  CHECK_THROWS_AS(mode_from_string("frozen"), ConfigError);
  CHECK(mode_from_string("guided-frozen") == Mode::kGuided);
  CHECK(mode_from_string("ungated-baseline") == Mode::kBaseline);

  TrainConfig zero = cfg;
  zero.epochs = 0;
  CHECK_THROWS_AS(zero.validate(), ConfigError);
  zero = cfg;
  zero.lr_lora = -1;
  CHECK_THROWS_AS(zero.validate(), ConfigError);
}

TEST_CASE("baseline and guided runs start from the same validation DSC") {
  const auto tr = small_set(8, 1), va = small_set(4, 2);
  auto base = train::train(small_config(Mode::kBaseline), tr, va);
  auto guided = train::train(small_config(Mode::kGuided), tr, va);
  REQUIRE(base.history.size() == 2);
  REQUIRE(guided.history.size() == 2);
  CHECK_FALSE(base.history[0].trained);
  CHECK(base.history[0].val_dsc == guided.history[0].val_dsc);
  CHECK(base.history[0].to_json()["loss"].is_null());
}

TEST_CASE("training is deterministic and keeps the encoder frozen") {
  const auto tr = small_set(8, 3), va = small_set(4, 4);
  const TrainConfig cfg = small_config(Mode::kGuidedLora);
  auto a = train::train(cfg, tr, va);
  auto b = train::train(cfg, tr, va);
  CHECK(history_text(a.history) == history_text(b.history));

  Model<float> fresh = build_model<float>(with_run_seed(cfg));
  CHECK(same_params(a.last.encoder.named_parameters(), fresh.encoder.named_parameters()));
  CHECK_FALSE(same_params(a.last.lora->named_parameters(), fresh.lora->named_parameters()));
  CHECK_FALSE(same_params(a.last.book.named_parameters(), fresh.book.named_parameters()));
  CHECK(a.last.gates.beta[0][0] != 0.0f);
}

TEST_CASE("with lambda 0 and a frozen guide, guided training retraces the baseline") {
  const auto tr = small_set(8, 5), va = small_set(4, 6);
  TrainConfig base = small_config(Mode::kBaseline);
  base.epochs = 2;
  base.loss.lambda = 0.0;
  TrainConfig guided = base;
  guided.mode = Mode::kGuided;
  guided.train_guide = false;
  auto a = train::train(base, tr, va);
  auto b = train::train(guided, tr, va);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t e = 0; e < a.history.size(); ++e) {
    CHECK(a.history[e].train.dice == b.history[e].train.dice);
    CHECK(a.history[e].train.bce == b.history[e].train.bce);
    CHECK(a.history[e].train.total == b.history[e].train.total);
    CHECK(a.history[e].val_dsc == b.history[e].val_dsc);
  }
  CHECK(same_params(a.last.unet.named_parameters(), b.last.unet.named_parameters()));
  CHECK(b.last.gates.beta[0][0] == 0.0f);
}

TEST_CASE("the returned checkpoint is the best validation snapshot") {
  const auto tr = small_set(8, 7), va = small_set(4, 8);
  TrainConfig cfg = small_config(Mode::kGuided);
  cfg.epochs = 3;
  cfg.lr_main = 3e-3;
  std::vector<EpochRecord> streamed;
  auto r = train::train(cfg, tr, va, [&](const EpochRecord& e) { streamed.push_back(e); });
  CHECK(history_text(streamed) == history_text(r.history));
  double best = -1;
  std::size_t best_epoch = 0;
  for (const auto& e : r.history) {
    if (e.val_dsc > best) {
      best = e.val_dsc;
      best_epoch = e.epoch;
    }
  }
  CHECK(r.best.val_dsc == best);
  CHECK(r.best.epoch == best_epoch);
  CHECK(validation_dsc(r.best.model, va) == best);
}

TEST_CASE("non-finite losses abort with the epoch and batch") {
  auto tr = small_set(8, 9);
  const auto va = small_set(4, 10);
  for (auto& s : tr) s.image[0] = std::numeric_limits<float>::quiet_NaN();
  try {
    train::train(small_config(Mode::kBaseline), tr, va);
    FAIL("expected divergence");
  } catch (const NumericalError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("epoch 1") != std::string::npos);
    CHECK(msg.find("batch 0") != std::string::npos);
  }
  CHECK_THROWS_AS(train::train(small_config(Mode::kBaseline), {}, va), ConfigError);
  data::SynthConfig big;
  big.n_samples = 2;
  CHECK_THROWS_AS(train::train(small_config(Mode::kGuided), data::generate_dataset(big), va),
                  ConfigError);
}

TEST_CASE("cached tokens give the same loss as the graph encoder") {
  const auto tr = small_set(2, 11);
  Model<float> m = build_model<float>(with_run_seed(small_config(Mode::kGuided)));
  const auto gt = objectives::mask_tensor<float>(tr[0].mask);
  num::Graph<float> g1, g2;
  const auto tokens = m.tokens(tr[0].image);
  auto a = sample_loss(g1, m, tr[0].image, gt, objectives::LossConfig{}, &tokens);
  auto b = sample_loss(g2, m, tr[0].image, gt, objectives::LossConfig{});
  CHECK(a.terms.total == doctest::Approx(b.terms.total).epsilon(1e-6));
  CHECK(a.terms.guide == doctest::Approx(b.terms.guide).epsilon(1e-6));
}

TEST_CASE("checkpoints round trip bit exactly") {
  const auto tr = small_set(8, 12), va = small_set(2, 13);
  TrainConfig cfg = small_config(Mode::kGuidedLora);
  auto r = train::train(cfg, tr, va);
  const auto path = temp_file("lora.gck");
  save_checkpoint(r.best, path);
  Checkpoint back = load_checkpoint(path);
  CHECK(to_json(back.config) == to_json(r.best.config));
  CHECK(back.val_dsc == r.best.val_dsc);
  CHECK(back.epoch == r.best.epoch);
  CHECK(back.model.logits(va[0].image).same_values(r.best.model.logits(va[0].image)));
  const auto path2 = temp_file("lora2.gck");
  save_checkpoint(back, path2);
  CHECK(slurp(path) == slurp(path2));

  const RawContainer raw = read_container(path);
  REQUIRE(raw.groups.size() == 5);
  CHECK(raw.groups[0].name == "encoder");
  CHECK(raw.groups[0].frozen);
  CHECK(raw.groups[1].name == "lora");
  CHECK_FALSE(raw.groups[1].frozen);

  // Stripping the adapters gives the frozen-encoder guide path.
  Model<float> stripped = back.model;
  stripped.lora.reset();
  TrainConfig frozen_cfg = back.config;
  frozen_cfg.mode = Mode::kGuided;
  Model<float> frozen = build_model<float>(frozen_cfg);
  CHECK(stripped.tokens(va[0].image).features.same_values(frozen.tokens(va[0].image).features));
  CHECK_FALSE(
      stripped.tokens(va[0].image).features.same_values(back.model.tokens(va[0].image).features));
}

TEST_CASE("malformed checkpoints raise format errors") {
  const auto tr = small_set(4, 14), va = small_set(2, 15);
  auto r = train::train(small_config(Mode::kGuided), tr, va);
  const auto path = temp_file("bad.gck");
  save_checkpoint(r.best, path);
  const auto good = slurp(path);

  auto bad = good;
  bad[0] = 'X';
  spit(path, bad);
  try {
    load_checkpoint(path);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 0);
  }

  bad = good;
  bad.resize(good.size() - 3);
  spit(path, bad);
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);

  bad = good;
  bad.push_back(0);
  spit(path, bad);
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);

  bad = good;
  bad[4] = 7;
  spit(path, bad);
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);

  // A config that disagrees with the stored tensor shapes.
  spit(path, good);
  RawContainer raw = read_container(path);
  raw.config["unet"]["base_channels"] = 8;
  write_container(raw, path);
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);

  CHECK_THROWS_AS(load_checkpoint(temp_file("missing.gck")), InputError);
}

TEST_CASE("encoder weights can be exported and imported") {
  TrainConfig a_cfg = small_config(Mode::kGuided);
  TrainConfig b_cfg = a_cfg;
  b_cfg.encoder.seed = 99;
  Model<float> a = build_model<float>(a_cfg), b = build_model<float>(b_cfg);
  CHECK_FALSE(same_params(a.encoder.named_parameters(), b.encoder.named_parameters()));
  const auto path = temp_file("enc.gck");
  export_encoder(a, path);
  import_encoder(path, b);
  CHECK(same_params(a.encoder.named_parameters(), b.encoder.named_parameters()));
  for (auto& [name, t] : b.encoder.named_parameters()) CHECK_FALSE(t->trainable());

  TrainConfig c_cfg = a_cfg;
  c_cfg.encoder.dim = 8;
  Model<float> c = build_model<float>(c_cfg);
  CHECK_THROWS_AS(import_encoder(path, c), FormatError);
}
