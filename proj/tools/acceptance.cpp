// Copyright (c) 2026, The guideseg Authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: one PASS/FAIL line per gating criterion (1-8) and an INFO
// line for the informational LoRA comparison (9). Exits 0 only if every
// gating criterion passes. A JSON summary is written with --report.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "guideseg/data/synth.hpp"
#include "guideseg/encoder/encoder.hpp"
#include "guideseg/metrics/metrics.hpp"
#include "guideseg/numerics/memory.hpp"
#include "guideseg/numerics/random.hpp"
#include "guideseg/objectives/objectives.hpp"
#include "guideseg/segnet/segnet.hpp"
#include "guideseg/train/gradcheck_suite.hpp"
#include "guideseg/train/model.hpp"
#include "guideseg/train/trainer.hpp"

using namespace guideseg;
namespace fs = std::filesystem;
using json = nlohmann::json;
using clk = std::chrono::steady_clock;

namespace {

constexpr double kCritGradTol = 1e-4;
constexpr double kCritGradSeconds = 120.0;
constexpr double kCritGateTol = 1e-6;
constexpr double kCritOverlapTol = 1e-9;
constexpr double kCritLossTol = 1e-6;
constexpr double kCritMargin = 0.01;
constexpr double kCritMinDsc = 0.80;
constexpr double kCritTrainSeconds = 900.0;
constexpr double kCritAuroc = 0.90;
constexpr int kRandomInputs = 20;
constexpr int kMaskPairs = 100;

double seconds_since(clk::time_point t0) {
  return std::chrono::duration<double>(clk::now() - t0).count();
}

struct Outcome {
  int id;
  bool gating;
  bool pass;
  std::string detail;
};

class Report {
 public:
  void add(int id, bool gating, bool pass, const std::string& detail, json data) {
    rows_.push_back({id, gating, pass, detail});
    const char* tag = gating ? (pass ? "PASS" : "FAIL") : "INFO";
    std::printf("criterion %d %s  %s\n", id, tag, detail.c_str());
    std::fflush(stdout);
    data["status"] = tag;
    json_[std::to_string(id)] = std::move(data);
  }
  bool all_gating_pass() const {
    return std::all_of(rows_.begin(), rows_.end(),
                       [](const Outcome& o) { return !o.gating || o.pass; });
  }
  std::size_t gating_passed() const {
    return static_cast<std::size_t>(std::count_if(
        rows_.begin(), rows_.end(), [](const Outcome& o) { return o.gating && o.pass; }));
  }
  std::size_t gating_total() const {
    return static_cast<std::size_t>(
        std::count_if(rows_.begin(), rows_.end(), [](const Outcome& o) { return o.gating; }));
  }
  const json& data() const { return json_; }

 private:
  std::vector<Outcome> rows_;
  json json_ = json::object();
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// 1 -------------------------------------------------------------------------

void gradient_suite(Report& rep) {
  const auto t0 = clk::now();
  const std::vector<num::GradReport> reports = train::gradcheck_suite(true, train::kGradEps);
  const double secs = seconds_since(t0);
  double worst = 0;
  std::string worst_op;
  json rows = json::array();
  for (const auto& r : reports) {
    // A NaN error counts as the worst possible.
    const double e = std::isnan(r.max_rel_err) ? std::numeric_limits<double>::infinity()
                                               : r.max_rel_err;
    if (worst_op.empty() || e > worst) {
      worst = e;
      worst_op = r.op_name;
    }
    rows.push_back({{"op", r.op_name}, {"max_rel_err", r.max_rel_err}, {"n", r.n_params_checked}});
  }
  const bool pass = worst <= kCritGradTol && secs < kCritGradSeconds;
  rep.add(1, true, pass,
          "gradcheck --full: " + std::to_string(reports.size()) + " checks, max_rel_err " +
              fmt("%.3e", worst) + " (" + worst_op + ") <= 1e-4, " + fmt("%.2f", secs) +
              " s < 120 s",
          {{"checks", rows}, {"max_rel_err", worst}, {"seconds", secs}});
}

// 2 -------------------------------------------------------------------------

void gate_equivalence(Report& rep) {
  segnet::UNetConfig cfg;
  cfg.seed = 11;
  segnet::UNetWeights<float> w = segnet::init_unet<float>(cfg);
  segnet::GateParams<float> gates = segnet::init_gates<float>(cfg);
  num::Rng rng(12);
  // Nonzero biases so the comparison is not helped by symmetric zeros.
  for (auto& [name, t] : w.named_parameters()) {
    if (name.size() > 2 && name.substr(name.size() - 2) == ".b") {
      for (float& v : t->data()) v = static_cast<float>(rng.uniform(-0.2, 0.2));
    }
  }
  for (auto& b : gates.beta) std::fill(b.data().begin(), b.data().end(), 0.0f);
  double worst = 0;
  for (int i = 0; i < kRandomInputs; ++i) {
    num::Tensor<float> image({1, 64, 64});
    for (float& v : image.data()) v = static_cast<float>(rng.uniform());
    num::Tensor<float> guide({64, 64});
    for (float& v : guide.data()) v = static_cast<float>(rng.uniform(0.01, 0.99));
    const num::Tensor<float> gated = segnet::forward<float>(image, &guide, cfg, w, &gates);
    const num::Tensor<float> plain = segnet::forward<float>(image, nullptr, cfg, w, nullptr);
    for (std::size_t p = 0; p < plain.numel(); ++p) {
      worst = std::max(worst, std::abs(static_cast<double>(gated[p]) - plain[p]));
    }
  }
  rep.add(2, true, worst <= kCritGateTol,
          "all beta = 0 vs ungated UNet on " + std::to_string(kRandomInputs) +
              " random inputs: max |logit diff| " + fmt("%.3e", worst) + " <= 1e-6",
          {{"max_abs_diff", worst}, {"inputs", kRandomInputs}});
}

// 3 -------------------------------------------------------------------------

void lora_identity(Report& rep) {
  encoder::EncoderConfig cfg;
  cfg.seed = 21;
  encoder::LoraConfig lc;
  lc.seed = 22;
  encoder::EncoderWeights<float> w = encoder::init_encoder<float>(cfg);
  encoder::LoraWeights<float> lora = encoder::init_lora<float>(cfg, lc);
  for (auto& block : lora.blocks) {
    for (auto& pair : block) {
      if (pair) std::fill(pair->b.data().begin(), pair->b.data().end(), 0.0f);
    }
  }
  num::Rng rng(23);
  int identical = 0;
  for (int i = 0; i < kRandomInputs; ++i) {
    num::Tensor<float> image({1, 64, 64});
    for (float& v : image.data()) v = static_cast<float>(rng.uniform());
    const auto with = encoder::encode<float>(image, cfg, w, &lora);
    const auto without = encoder::encode<float>(image, cfg, w, nullptr);
    if (with.features.same_values(without.features)) ++identical;
  }
  rep.add(3, true, identical == kRandomInputs,
          "LoRA B = 0 encode bit-identical to frozen encode on " + std::to_string(identical) +
              "/" + std::to_string(kRandomInputs) + " random inputs",
          {{"identical", identical}, {"inputs", kRandomInputs}});
}

// 4 -------------------------------------------------------------------------

// All-pairs boundary distances, pooled in both directions.
double brute_hd95(const Mask& a, const Mask& b) {
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
  const double pos = 0.95 * static_cast<double>(d.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, d.size() - 1);
  return d[lo] + (pos - static_cast<double>(lo)) * (d[hi] - d[lo]);
}

Mask random_mask(num::Rng& rng, std::size_t h, std::size_t w, double density) {
  Mask m(h, w);
  for (auto& v : m.data) v = rng.coin(density) ? 1 : 0;
  return m;
}

void metric_oracles(Report& rep) {
  num::Rng rng(31);
  int hd_match = 0, overlap_ok = 0;
  for (int t = 0; t < kMaskPairs;) {
    const std::size_t h = 1 + rng.bits() % 32, w = 1 + rng.bits() % 32;
    const double density = rng.uniform(0.02, 0.6);
    const Mask a = random_mask(rng, h, w, density), b = random_mask(rng, h, w, density);
    if (a.count() == 0 || b.count() == 0) continue;
    ++t;
    if (metrics::hd95(a, b) == brute_hd95(a, b)) ++hd_match;
    const metrics::Overlap o = metrics::overlap_metrics(a, b);
    if (std::abs(o.dsc - 2.0 * o.iou / (1.0 + o.iou)) <= kCritOverlapTol) ++overlap_ok;
  }

  Mask sq(8, 8);
  for (std::size_t i = 2; i < 5; ++i) {
    for (std::size_t j = 2; j < 5; ++j) sq.at(i, j) = 1;
  }
  Mask shifted(8, 8);
  for (std::size_t i = 2; i < 5; ++i) {
    for (std::size_t j = 3; j < 6; ++j) shifted.at(i, j) = 1;
  }
  const metrics::SampleMetrics same = metrics::sample_metrics(sq, sq);
  const bool identical = same.iou == 1.0 && same.dsc == 1.0 && same.hd95 == 0.0;
  const bool unit_shift = metrics::hd95(sq, shifted) == 1.0;

  const bool pass = hd_match == kMaskPairs && overlap_ok == kMaskPairs && identical && unit_shift;
  rep.add(4, true, pass,
          "hd95 == all-pairs oracle on " + std::to_string(hd_match) + "/" +
              std::to_string(kMaskPairs) + " pairs; dsc = 2iou/(1+iou) on " +
              std::to_string(overlap_ok) + "/" + std::to_string(kMaskPairs) +
              "; identical -> (1,1,0) " + (identical ? "yes" : "no") + "; unit shift -> 1 " +
              (unit_shift ? "yes" : "no"),
          {{"hd95_matches", hd_match},
           {"overlap_identity", overlap_ok},
           {"identical_case", identical},
           {"unit_shift_case", unit_shift}});
}

// 5 -------------------------------------------------------------------------

void loss_hand_check(Report& rep) {
  using num::Graph;
  using num::Tensor;
  const double eps = 1e-6;
  const std::vector<double> p = {0.8, 0.2, 0.6, 0.1};
  const std::vector<double> y = {1, 0, 1, 0};
  const std::vector<double> gv = {0.9, 0.2, 0.9, 0.2};

  // Hand values: dice on the 2x2 instance, logit BCE, guide BCE of the
  // (0.9, 0.2) / (1, 0) pair (repeated per row), and a hinge that vanishes
  // because every band pixel already clears the margin.
  const double dice_hand = 1.0 - (2.0 * 1.4 + eps) / (1.7 + 2.0 + eps);
  const double bce_hand = -(std::log(0.8) + std::log(0.8) + std::log(0.6) + std::log(0.9)) / 4.0;
  const double guide_hand = -0.5 * (std::log(0.9) + std::log(0.8));
  const double hinge_hand = 0.0;
  const double lambda = 0.5;
  const double total_hand = dice_hand + bce_hand + lambda * guide_hand + hinge_hand;

  Graph<double> g;
  Tensor<double> logit_t({1, 2, 2});
  for (std::size_t i = 0; i < 4; ++i) logit_t[i] = std::log(p[i] / (1.0 - p[i]));
  const Tensor<double> gt({2, 2}, y);
  objectives::LossConfig cfg;
  cfg.lambda = lambda;
  cfg.eps = eps;
  cfg.hinge_enabled = true;
  cfg.hinge_margin = 0.2;
  cfg.band_radius = 1;
  auto logits = g.constant(logit_t);
  auto guide = g.constant(Tensor<double>({2, 2}, gv));
  const objectives::LossResult<double> r = objectives::total_loss(logits, &guide, gt, cfg);

  // Stand-alone examples: the two-pixel guide BCE, a 0.5 hinge equal to the
  // margin, and the weighted sum of hand-set terms.
  const double guide_pair = objectives::guide_bce(g.constant(Tensor<double>({1, 2}, {0.9, 0.2})),
                                                  Tensor<double>({1, 2}, {1, 0}))
                                .value()[0];
  Tensor<double> band_gt({4, 4}, 0.0);
  band_gt[5] = band_gt[6] = 1.0;
  const double hinge_half =
      objectives::boundary_hinge(g.constant(Tensor<double>({4, 4}, 0.5)), band_gt, 0.2, 1)
          .value()[0];
  objectives::LossTerms set;
  set.dice = 0.2;
  set.bce = 0.1;
  set.guide = 0.4;
  const double weighted = objectives::combine_terms(set, objectives::LossConfig{});

  const double errs[] = {std::abs(r.terms.dice - dice_hand),
                         std::abs(r.terms.bce - bce_hand),
                         std::abs(r.terms.guide - guide_hand),
                         std::abs(r.terms.hinge - hinge_hand),
                         std::abs(r.terms.total - total_hand),
                         std::abs(guide_pair - guide_hand),
                         std::abs(hinge_half - 0.2),
                         std::abs(weighted - 0.5)};
  const double worst = *std::max_element(std::begin(errs), std::end(errs));
  rep.add(5, true, worst <= kCritLossTol,
          "total_loss " + fmt("%.9f", r.terms.total) + " vs hand " + fmt("%.9f", total_hand) +
              "; 8 hand values, max abs err " + fmt("%.3e", worst) + " <= 1e-6",
          {{"total", r.terms.total}, {"total_hand", total_hand}, {"max_abs_err", worst}});
}

// 6, 7, 9 -----------------------------------------------------------------

struct Datasets {
  std::vector<data::SegSample> train, val, shifted;
};

Datasets default_task() {
  data::SynthConfig sc;
  sc.n_samples = 200;
  sc.seed = 1;
  Datasets d;
  d.train = data::generate_dataset(sc);
  sc.n_samples = 50;
  sc.seed = 2;
  d.val = data::generate_dataset(sc);
  sc.texture = data::Texture::kShifted;
  sc.seed = 3;
  d.shifted = data::generate_dataset(sc);
  return d;
}

train::TrainResult run_training(train::Mode mode, std::uint64_t seed, const Datasets& d) {
  train::TrainConfig cfg;
  cfg.mode = mode;
  cfg.seed = seed;
  const auto t0 = clk::now();
  train::TrainResult r = train::train(cfg, d.train, d.val);
  std::fprintf(stderr, "  %-11s seed %llu  best val DSC %.4f at epoch %zu  (%.1f s)\n",
               train::to_string(mode).c_str(), static_cast<unsigned long long>(seed),
               r.best.val_dsc, r.best.epoch, seconds_since(t0));
  return r;
}

void training_criteria(Report& rep, const std::vector<std::uint64_t>& seeds, bool with_lora) {
  const auto t0 = clk::now();
  const Datasets d = default_task();
  std::vector<double> base_dsc, guided_dsc, auroc;
  std::vector<train::Checkpoint> guided_best;
  for (std::uint64_t s : seeds) {
    base_dsc.push_back(run_training(train::Mode::kBaseline, s, d).best.val_dsc);
    train::TrainResult g = run_training(train::Mode::kGuided, s, d);
    guided_dsc.push_back(g.best.val_dsc);
    guided_best.push_back(std::move(g.best));
  }
  const double secs = seconds_since(t0);
  const double mb = mean(base_dsc), mg = mean(guided_dsc);
  const bool pass6 = mg >= mb - kCritMargin && mg >= kCritMinDsc && secs < kCritTrainSeconds;
  rep.add(6, true, pass6,
          "guided mean DSC " + fmt("%.4f", mg) + " >= baseline " + fmt("%.4f", mb) +
              " - 0.01 and >= 0.80 over " + std::to_string(seeds.size()) + " seeds; " +
              fmt("%.0f", secs) + " s < 900 s",
          {{"seeds", seeds},
           {"baseline_dsc", base_dsc},
           {"guided_dsc", guided_dsc},
           {"baseline_mean", mb},
           {"guided_mean", mg},
           {"seconds", secs}});

  for (train::Checkpoint& c : guided_best) auroc.push_back(train::guide_alignment(c.model, d.val));
  const double ma = mean(auroc);
  rep.add(7, true, ma >= kCritAuroc,
          "mean guide AUROC on validation " + fmt("%.4f", ma) + " >= 0.90",
          {{"auroc", auroc}, {"mean", ma}});

  if (!with_lora) return;
  std::vector<double> lora_shift, frozen_shift;
  std::string per_seed;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    train::TrainResult l = run_training(train::Mode::kGuidedLora, seeds[i], d);
    lora_shift.push_back(train::validation_dsc(l.best.model, d.shifted));
    frozen_shift.push_back(train::validation_dsc(guided_best[i].model, d.shifted));
    per_seed += (i ? "; " : "") + std::string("seed ") + std::to_string(seeds[i]) + " lora " +
                fmt("%.4f", lora_shift[i]) + " frozen " + fmt("%.4f", frozen_shift[i]);
  }
  rep.add(9, false, true, "shifted-texture DSC: " + per_seed,
          {{"seeds", seeds}, {"guided_lora_dsc", lora_shift}, {"guided_dsc", frozen_shift}});
}

// 8 -------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::string quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

void reproducibility(Report& rep, const fs::path& cli, const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  const fs::path log = dir / "cli.log";
  int failures = 0;
  auto call = [&](const std::vector<std::string>& args) {
    std::string cmd = quote(cli.string());
    for (const auto& a : args) cmd += " " + quote(a);
    cmd += " >>" + quote(log.string()) + " 2>&1";
    if (std::system(cmd.c_str()) != 0) ++failures;
  };
  auto at = [&](const std::string& name) { return (dir / name).string(); };

  call({"gen-data", "--out", at("train.gds"), "--n", "8", "--size", "32", "--seed", "1"});
  call({"gen-data", "--out", at("val.gds"), "--n", "4", "--size", "32", "--seed", "2",
        "--texture", "shifted"});
  call({"train", "--data", at("train.gds"), "--val", at("val.gds"), "--mode", "guided-lora",
        "--epochs", "2", "--seed", "3", "--out", at("model.gck")});
  call({"eval", "--ckpt", at("model.gck"), "--data", at("val.gds"), "--tta", "--out",
        at("report.json")});
  call({"guide-dump", "--ckpt", at("model.gck"), "--data", at("val.gds"), "--out", at("guides")});

  const std::vector<std::string> outputs = {
      "train.gds",   "val.gds",           "model.gck",           "model.gck.history.jsonl",
      "report.json", "guides/guide_0000.pgm", "guides/guide_0001.pgm", "guides/guide_0002.pgm",
      "guides/guide_0003.pgm"};
  const std::vector<std::string> manifests = {"train.gds.manifest.json", "val.gds.manifest.json",
                                              "model.gck.manifest.json",
                                              "report.json.manifest.json", "guides/manifest.json"};
  std::vector<std::string> before;
  for (const auto& f : outputs) {
    before.push_back(slurp(dir / f));
    fs::remove(dir / f);
  }
  for (const auto& m : manifests) call({"rerun", "--manifest", at(m)});
  int identical = 0;
  json files = json::array();
  for (std::size_t k = 0; k < outputs.size(); ++k) {
    const bool same = !before[k].empty() && slurp(dir / outputs[k]) == before[k];
    identical += same ? 1 : 0;
    files.push_back({{"file", outputs[k]}, {"identical", same}});
  }
  const bool pass = failures == 0 && identical == static_cast<int>(outputs.size());
  rep.add(8, true, pass,
          "rerun of " + std::to_string(manifests.size()) + " manifests: " +
              std::to_string(identical) + "/" + std::to_string(outputs.size()) +
              " GDS1/GCK1/JSON/PGM outputs byte-identical, " + std::to_string(failures) +
              " failed commands",
          {{"files", files}, {"failed_commands", failures}});
}

}  // namespace

int main(int argc, char** argv) {
  guideseg::num::keep_heap_resident();
  CLI::App app{"Acceptance checks for guideseg"};
  std::string cli_path = GUIDESEG_CLI_PATH;
  std::string work = (fs::temp_directory_path() / "guideseg_acceptance").string();
  std::string report_path;
  std::size_t n_seeds = 3;
  bool skip_lora = false;
  app.add_option("--cli", cli_path, "guideseg executable used for the reproducibility check");
  app.add_option("--work-dir", work, "Scratch directory for CLI outputs");
  app.add_option("--report", report_path, "Write a JSON summary here");
  app.add_option("--seeds", n_seeds, "Training seeds 0..N-1")->check(CLI::Range(1, 10));
  app.add_flag("--skip-lora", skip_lora, "Skip the informational LoRA comparison");
  CLI11_PARSE(app, argc, argv);

  std::vector<std::uint64_t> seeds;
  for (std::size_t s = 0; s < n_seeds; ++s) seeds.push_back(s);

  Report rep;
  try {
    gradient_suite(rep);
    gate_equivalence(rep);
    lora_identity(rep);
    metric_oracles(rep);
    loss_hand_check(rep);
    reproducibility(rep, cli_path, work);
    training_criteria(rep, seeds, !skip_lora);
  } catch (const std::exception& e) {
    std::printf("acceptance aborted: %s\n", e.what());
    return 1;
  }
  std::printf("acceptance: %zu/%zu gating criteria passed\n", rep.gating_passed(),
              rep.gating_total());
  if (!report_path.empty()) std::ofstream(report_path) << rep.data().dump(2) << "\n";
  return rep.all_gating_pass() ? 0 : 1;
}
