// Copyright (c) 2026, The guideseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "guideseg/cli/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "guideseg/data/synth.hpp"
#include "guideseg/errors.hpp"
#include "guideseg/json_reader.hpp"
#include "guideseg/metrics/metrics.hpp"
#include "guideseg/train/checkpoint.hpp"
#include "guideseg/train/gradcheck_suite.hpp"
#include "guideseg/train/model.hpp"
#include "guideseg/train/trainer.hpp"

namespace guideseg::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Everything a command needs to run: reconstructed verbatim by `rerun`.
struct Invocation {
  std::string command;
  std::vector<std::string> argv;
  json config = json::object();
  json inputs = json::object();
  json outputs = json::object();
  std::vector<std::uint64_t> seeds;
};

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

json synth_json(const data::SynthConfig& c) {
  return {{"size", c.size},
          {"n_samples", c.n_samples},
          {"contrast", c.contrast},
          {"noise_sigma", c.noise_sigma},
          {"blob_complexity", c.blob_complexity},
          {"area_min", c.area_min},
          {"area_max", c.area_max},
          {"texture", data::to_string(c.texture)},
          {"seed", c.seed}};
}

data::SynthConfig synth_from_json(const json& j) {
  data::SynthConfig c;
  JsonReader r(j, "config");
  r.get("size", c.size);
  r.get("n_samples", c.n_samples);
  r.get("contrast", c.contrast);
  r.get("noise_sigma", c.noise_sigma);
  r.get("blob_complexity", c.blob_complexity);
  r.get("area_min", c.area_min);
  r.get("area_max", c.area_max);
  std::string texture = data::to_string(c.texture);
  r.get("texture", texture);
  c.texture = data::texture_from_string(texture);
  r.get("seed", c.seed);
  r.finish();
  return c;
}

std::string path_field(const json& section, const char* key) {
  if (!section.contains(key) || !section.at(key).is_string()) {
    throw ConfigError(std::string("manifest lacks path '") + key + "'");
  }
  return section.at(key).get<std::string>();
}

std::string absolute(const std::string& p) {
  return fs::absolute(fs::path(p)).lexically_normal().string();
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw InputError("cannot open '" + path.string() + "' for writing");
  f << text;
  if (!f) throw InputError("failed writing '" + path.string() + "'");
}

fs::path manifest_path(const Invocation& inv) {
  if (inv.command == "guide-dump") return fs::path(path_field(inv.outputs, "dir")) / "manifest.json";
  const char* key = inv.command == "gen-data" ? "data" : inv.command == "train" ? "checkpoint" : "report";
  return path_field(inv.outputs, key) + ".manifest.json";
}

void write_manifest(const Invocation& inv, const std::string& started, double seconds) {
  json m;
  m["artifact"] = kArtifactName;
  m["artifact_version"] = kArtifactVersion;
  m["command"] = inv.command;
  m["argv"] = inv.argv;
  m["config"] = inv.config;
  m["seeds"] = inv.seeds;
  m["inputs"] = inv.inputs;
  m["outputs"] = inv.outputs;
  m["started_utc"] = started;
  m["wall_clock_seconds"] = seconds;
  write_text(manifest_path(inv), m.dump(2) + "\n");
}

void run_gen_data(Invocation& inv, Streams io) {
  data::SynthConfig cfg = synth_from_json(inv.config);
  for (const std::string& note : data::sanitize(cfg)) io.err << "warning: " << note << "\n";
  if (cfg.n_samples == 0) throw ConfigError("--n_samples must be at least 1");
  inv.config = synth_json(cfg);
  inv.seeds = {cfg.seed};
  const std::string out = path_field(inv.outputs, "data");
  data::write_dataset(data::generate_dataset(cfg), out);
  io.out << "wrote " << cfg.n_samples << " samples of " << cfg.size << "x" << cfg.size << " to "
         << out << "\n";
}

void run_train(Invocation& inv, Streams io) {
  train::TrainConfig cfg = train::train_config_from_json(inv.config);
  const auto train_set = data::read_dataset(path_field(inv.inputs, "data"));
  const auto val_set = data::read_dataset(path_field(inv.inputs, "val"));
  // The encoder input size follows the data.
  cfg.encoder.image_size = train_set.front().mask.h;
  cfg.validate();
  inv.config = train::to_json(cfg);
  inv.seeds = {cfg.seed};

  const std::string ckpt = path_field(inv.outputs, "checkpoint");
  const std::string history_path = path_field(inv.outputs, "history");
  std::ofstream history(history_path, std::ios::binary | std::ios::trunc);
  if (!history) throw InputError("cannot open '" + history_path + "' for writing");
  const train::HistorySink sink = [&](const train::EpochRecord& r) {
    history << r.to_json().dump() << '\n';
    history.flush();
    io.err << "epoch " << r.epoch << "/" << cfg.epochs << " val_dsc " << r.val_dsc << "\n";
  };
  const train::TrainResult result = train::train(cfg, train_set, val_set, sink);
  if (!history) throw InputError("failed writing '" + history_path + "'");
  train::save_checkpoint(result.best, ckpt);
  io.out << "best val_dsc " << result.best.val_dsc << " at epoch " << result.best.epoch << " -> "
         << ckpt << "\n";
}

void run_eval(Invocation& inv, Streams io) {
  JsonReader r(inv.config, "config");
  bool tta = false;
  r.get("tta", tta);
  r.finish();
  const auto set = data::read_dataset(path_field(inv.inputs, "data"));

  metrics::MetricsReport report;
  if (inv.inputs.contains("pred")) {
    if (tta) throw ConfigError("--tta needs a checkpoint; fixed predictions cannot be flipped");
    const auto pred = data::read_dataset(path_field(inv.inputs, "pred"));
    if (pred.size() != set.size()) {
      throw InputError("prediction file has " + std::to_string(pred.size()) + " samples, data has " +
                       std::to_string(set.size()));
    }
    std::vector<metrics::SampleMetrics> per_sample;
    for (std::size_t i = 0; i < set.size(); ++i) {
      per_sample.push_back(metrics::sample_metrics(pred[i].mask, set[i].mask));
    }
    report = metrics::aggregate(std::move(per_sample));
  } else {
    train::Checkpoint c = train::load_checkpoint(path_field(inv.inputs, "checkpoint"));
    const metrics::ProbabilityFn f = [&](const num::Tensor<float>& x) {
      return c.model.probabilities(x);
    };
    report = metrics::evaluate_dataset(f, set, tta);
    report.seeds = {c.config.seed};
    inv.seeds = {c.config.seed};
  }
  const std::string out = path_field(inv.outputs, "report");
  write_text(out, report.to_json().dump(2) + "\n");
  io.out << std::setprecision(6) << "iou_mean " << report.iou_mean << " dsc_mean "
         << report.dsc_mean << " hd95_mean " << report.hd95_mean << " -> " << out << "\n";
}

std::string pgm(const tokenbook::GuideMask<float>& g) {
  std::string s = "P5\n" + std::to_string(g.w) + " " + std::to_string(g.h) + "\n255\n";
  for (float v : g.values.data()) {
    const long q = std::lround(255.0 * static_cast<double>(v));
    s.push_back(static_cast<char>(static_cast<unsigned char>(std::clamp(q, 0L, 255L))));
  }
  return s;
}

void run_guide_dump(Invocation& inv, Streams io) {
  JsonReader(inv.config, "config").finish();
  train::Checkpoint c = train::load_checkpoint(path_field(inv.inputs, "checkpoint"));
  if (!c.model.guided()) throw ConfigError("a baseline checkpoint has no guide mask to dump");
  const auto set = data::read_dataset(path_field(inv.inputs, "data"));
  inv.seeds = {c.config.seed};

  const fs::path dir = path_field(inv.outputs, "dir");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw InputError("cannot create directory '" + dir.string() + "': " + ec.message());
  json files = json::array();
  for (std::size_t i = 0; i < set.size(); ++i) {
    std::ostringstream name;
    name << "guide_" << std::setw(4) << std::setfill('0') << i << ".pgm";
    write_text(dir / name.str(), pgm(c.model.guide(set[i].image)));
    files.push_back(name.str());
  }
  inv.outputs["files"] = files;
  io.out << "wrote " << set.size() << " guide masks to " << dir.string() << "\n";
}

int run_gradcheck(bool full, Streams io) {
  const auto reports = train::gradcheck_suite(full);
  train::print_gradcheck_table(reports, io.out);
  const bool ok = std::all_of(reports.begin(), reports.end(),
                              [](const num::GradReport& r) { return r.passed(train::kGradTolerance); });
  if (!ok) io.err << "gradient check failed: max_rel_err above " << train::kGradTolerance << "\n";
  return ok ? kExitOk : kExitNumerical;
}

int execute(Invocation& inv, Streams io) {
  const std::string started = utc_now();
  const auto t0 = std::chrono::steady_clock::now();
  if (inv.command == "gen-data") {
    run_gen_data(inv, io);
  } else if (inv.command == "train") {
    run_train(inv, io);
  } else if (inv.command == "eval") {
    run_eval(inv, io);
  } else if (inv.command == "guide-dump") {
    run_guide_dump(inv, io);
  } else {
    throw ConfigError("manifest command '" + inv.command + "' cannot be rerun");
  }
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_manifest(inv, started, seconds);
  return kExitOk;
}

Invocation load_manifest(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot open manifest '" + path.string() + "'");
  json m;
  try {
    m = json::parse(f);
  } catch (const json::exception& e) {
    throw InputError("manifest '" + path.string() + "' is not valid JSON: " + e.what());
  }
  if (!m.is_object() || !m.contains("command") || !m.contains("config") ||
      !m.contains("inputs") || !m.contains("outputs")) {
    throw InputError("manifest '" + path.string() + "' lacks command, config, inputs or outputs");
  }
  Invocation inv;
  try {
    inv.command = m.at("command").get<std::string>();
    if (m.contains("argv")) inv.argv = m.at("argv").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw InputError("manifest '" + path.string() + "': " + e.what());
  }
  inv.config = m.at("config");
  inv.inputs = m.at("inputs");
  inv.outputs = m.at("outputs");
  inv.outputs.erase("files");
  return inv;
}

// Copies an option's value into the config JSON only when it was given, so
// defaults stay owned by the config structs.
template <typename V>
struct Flag {
  V value{};
  CLI::Option* opt = nullptr;
  void apply(json& j, const char* key) const {
    if (opt->count() > 0) j[key] = value;
  }
};

using FlagStore = std::vector<std::shared_ptr<void>>;

template <typename V>
Flag<V>* add_flag(CLI::App* app, FlagStore& store, const std::string& name,
                  const std::string& help) {
  auto f = std::make_shared<Flag<V>>();
  store.push_back(f);
  f->opt = app->add_option(name, f->value, help);
  return f.get();
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Streams io{out, err};
  CLI::App app{"Guided segmentation with a frozen-encoder token guide", kArtifactName};
  app.set_version_flag("--version", kArtifactVersion);
  app.require_subcommand(1);
  FlagStore flags;

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic GDS1 dataset");
  std::string gen_out;
  gen->add_option("--out", gen_out, "Output GDS1 file")->required();
  auto* g_n = add_flag<std::size_t>(gen, flags, "--n,--n_samples", "Number of samples");
  auto* g_size = add_flag<std::size_t>(gen, flags, "--size", "Image edge in pixels");
  auto* g_contrast = add_flag<double>(gen, flags, "--contrast", "Target/background gap in [0,1]");
  auto* g_noise = add_flag<double>(gen, flags, "--noise_sigma", "Gaussian noise level");
  auto* g_blob = add_flag<std::size_t>(gen, flags, "--blob_complexity", "Shape harmonics");
  auto* g_amin = add_flag<double>(gen, flags, "--area_min", "Minimum foreground fraction");
  auto* g_amax = add_flag<double>(gen, flags, "--area_max", "Maximum foreground fraction");
  auto* g_tex = add_flag<std::string>(gen, flags, "--texture", "standard or shifted");
  auto* g_seed = add_flag<std::uint64_t>(gen, flags, "--seed", "Dataset seed");

  // train
  auto* tr = app.add_subcommand("train", "Train a model and write the best checkpoint");
  std::string tr_data, tr_val, tr_out, tr_history, tr_config;
  tr->add_option("--data", tr_data, "Training GDS1 file")->required();
  tr->add_option("--val", tr_val, "Validation GDS1 file")->required();
  tr->add_option("--out", tr_out, "Output GCK1 checkpoint")->required();
  tr->add_option("--history", tr_history, "JSON-lines history (default OUT.history.jsonl)");
  tr->add_option("--config", tr_config, "Base configuration JSON; flags override it");
  auto* t_mode = add_flag<std::string>(tr, flags, "--mode", "baseline, guided or guided-lora");
  auto* t_epochs = add_flag<std::size_t>(tr, flags, "--epochs", "Training epochs");
  auto* t_lambda = add_flag<double>(tr, flags, "--lambda", "Guide loss weight");
  auto* t_seed = add_flag<std::uint64_t>(tr, flags, "--seed", "Run seed");
  auto* t_batch = add_flag<std::size_t>(tr, flags, "--batch", "Mini-batch size");
  auto* t_lr = add_flag<double>(tr, flags, "--lr_main", "Learning rate of TokenBook, UNet, gates");
  auto* t_lr_lora = add_flag<double>(tr, flags, "--lr_lora", "Learning rate of LoRA adapters");
  auto* t_wd = add_flag<double>(tr, flags, "--weight_decay", "Decoupled weight decay");
  auto* t_hinge = add_flag<bool>(tr, flags, "--hinge_enabled", "Add the boundary hinge term");
  auto* t_protos = add_flag<std::size_t>(tr, flags, "--prototypes", "TokenBook prototype count");
  auto* t_rank = add_flag<std::size_t>(tr, flags, "--lora_rank", "LoRA rank");

  // eval
  auto* ev = app.add_subcommand("eval", "Score a checkpoint (or fixed predictions) on a dataset");
  std::string ev_ckpt, ev_pred, ev_data, ev_out;
  bool ev_tta = false;
  auto* ev_ckpt_opt = ev->add_option("--ckpt", ev_ckpt, "GCK1 checkpoint");
  auto* ev_pred_opt = ev->add_option("--pred", ev_pred, "GDS1 file whose masks are the predictions");
  ev_ckpt_opt->excludes(ev_pred_opt);
  ev->add_option("--data", ev_data, "Ground-truth GDS1 file")->required();
  ev->add_option("--out", ev_out, "Output report JSON")->required();
  ev->add_flag("--tta", ev_tta, "Average the four flip views");

  // guide-dump
  auto* gd = app.add_subcommand("guide-dump", "Write each sample's guide mask as an 8-bit PGM");
  std::string gd_ckpt, gd_data, gd_out;
  gd->add_option("--ckpt", gd_ckpt, "GCK1 checkpoint of a guided mode")->required();
  gd->add_option("--data", gd_data, "GDS1 file")->required();
  gd->add_option("--out", gd_out, "Output directory")->required();

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every gradient");
  bool gc_full = false;
  gc->add_flag("--full", gc_full, "Include the end-to-end 16x16 pipeline");

  // rerun
  auto* rr = app.add_subcommand("rerun", "Repeat a run from its manifest");
  std::string rr_manifest;
  rr->add_option("--manifest", rr_manifest, "Manifest JSON")->required();

  try {
    try {
      std::vector<std::string> reversed(args.rbegin(), args.rend());
      app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
      out << app.help();
      return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
      out << app.help("", CLI::AppFormatMode::All);
      return kExitOk;
    } catch (const CLI::CallForVersion&) {
      out << kArtifactVersion << "\n";
      return kExitOk;
    } catch (const CLI::ParseError& e) {
      err << "error: " << e.what() << "\n\n";
      const CLI::App* failing = &app;
      for (const CLI::App* s : app.get_subcommands()) failing = s;
      err << failing->help();
      return kExitUsage;
    }

    Invocation inv;
    inv.argv = args;
    if (gen->parsed()) {
      inv.command = "gen-data";
      json& c = inv.config;
      g_n->apply(c, "n_samples");
      g_size->apply(c, "size");
      g_contrast->apply(c, "contrast");
      g_noise->apply(c, "noise_sigma");
      g_blob->apply(c, "blob_complexity");
      g_amin->apply(c, "area_min");
      g_amax->apply(c, "area_max");
      g_tex->apply(c, "texture");
      g_seed->apply(c, "seed");
      inv.config = synth_json(synth_from_json(c));
      inv.outputs["data"] = absolute(gen_out);
      return execute(inv, io);
    }
    if (tr->parsed()) {
      inv.command = "train";
      train::TrainConfig cfg;
      if (!tr_config.empty()) {
        std::ifstream f(tr_config, std::ios::binary);
        if (!f) throw InputError("cannot open config '" + tr_config + "'");
        try {
          cfg = train::train_config_from_json(json::parse(f));
        } catch (const json::parse_error& e) {
          throw InputError("config '" + tr_config + "' is not valid JSON: " + e.what());
        }
      }
      if (t_mode->opt->count()) cfg.mode = train::mode_from_string(t_mode->value);
      if (t_epochs->opt->count()) cfg.epochs = t_epochs->value;
      if (t_lambda->opt->count()) cfg.loss.lambda = t_lambda->value;
      if (t_seed->opt->count()) cfg.seed = t_seed->value;
      if (t_batch->opt->count()) cfg.batch = t_batch->value;
      if (t_lr->opt->count()) cfg.lr_main = t_lr->value;
      if (t_lr_lora->opt->count()) cfg.lr_lora = t_lr_lora->value;
      if (t_wd->opt->count()) cfg.weight_decay = t_wd->value;
      if (t_hinge->opt->count()) cfg.loss.hinge_enabled = t_hinge->value;
      if (t_protos->opt->count()) cfg.tokenbook.prototypes = t_protos->value;
      if (t_rank->opt->count()) cfg.lora.rank = t_rank->value;
      inv.config = train::to_json(cfg);
      inv.inputs = {{"data", absolute(tr_data)}, {"val", absolute(tr_val)}};
      inv.outputs = {{"checkpoint", absolute(tr_out)},
                     {"history", absolute(tr_history.empty() ? tr_out + ".history.jsonl" : tr_history)}};
      return execute(inv, io);
    }
    if (ev->parsed()) {
      inv.command = "eval";
      if (ev_ckpt.empty() == ev_pred.empty()) {
        throw ConfigError("eval needs exactly one of --ckpt and --pred");
      }
      inv.config = {{"tta", ev_tta}};
      inv.inputs["data"] = absolute(ev_data);
      if (ev_pred.empty()) {
        inv.inputs["checkpoint"] = absolute(ev_ckpt);
      } else {
        inv.inputs["pred"] = absolute(ev_pred);
      }
      inv.outputs["report"] = absolute(ev_out);
      return execute(inv, io);
    }
    if (gd->parsed()) {
      inv.command = "guide-dump";
      inv.inputs = {{"checkpoint", absolute(gd_ckpt)}, {"data", absolute(gd_data)}};
      inv.outputs["dir"] = absolute(gd_out);
      return execute(inv, io);
    }
    if (gc->parsed()) return run_gradcheck(gc_full, io);
    Invocation loaded = load_manifest(rr_manifest);
    return execute(loaded, io);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const InputError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const NumericalError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
}

}  // namespace guideseg::cli
