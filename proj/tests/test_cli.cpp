// Copyright (c) 2026, The guideseg Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "guideseg/cli/cli.hpp"
#include "guideseg/data/synth.hpp"
#include "guideseg/train/checkpoint.hpp"

using namespace guideseg;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run_command(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("guideseg_cli_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

// Small guided-lora run shared by several cases.
void small_run(const TempDir& d, const std::string& mode) {
  REQUIRE(run({"gen-data", "--out", d / "tr.gds", "--n", "6", "--size", "32", "--seed", "1"}).code == 0);
  REQUIRE(run({"gen-data", "--out", d / "va.gds", "--n", "3", "--size", "32", "--seed", "2"}).code == 0);
  const Run t = run({"train", "--data", d / "tr.gds", "--val", d / "va.gds", "--mode", mode,
                     "--epochs", "1", "--seed", "5", "--prototypes", "4", "--out", d / "m.gck"});
  REQUIRE_MESSAGE(t.code == 0, t.err);
}

}  // namespace

TEST_CASE("gen-data writes an exactly sized GDS1 file and a complete manifest") {
  TempDir d("gen");
  const Run r = run({"gen-data", "--out", d / "a.gds", "--n_samples", "3", "--size", "16",
                     "--contrast", "0.4", "--seed", "9"});
  REQUIRE(r.code == 0);
  CHECK(fs::file_size(d / "a.gds") == data::gds1_size(3, 16, 16));
  const auto m = read_json(d / "a.gds.manifest.json");
  CHECK(m["command"] == "gen-data");
  CHECK(m["artifact_version"] == cli::kArtifactVersion);
  CHECK(m["config"]["contrast"] == 0.4);
  CHECK(m["config"]["noise_sigma"] == 0.1);  // default materialized
  CHECK(m["seeds"] == nlohmann::json::array({9}));
  CHECK(m["outputs"]["data"] == fs::absolute(d / "a.gds").lexically_normal().string());
  CHECK(m.contains("wall_clock_seconds"));
  CHECK(m.contains("started_utc"));

  data::SynthConfig sc;
  sc.n_samples = 3;
  sc.size = 16;
  sc.contrast = 0.4;
  sc.seed = 9;
  const auto expect = data::generate_dataset(sc);
  const auto got = data::read_dataset(d / "a.gds");
  REQUIRE(got.size() == expect.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    CHECK(got[i].mask == expect[i].mask);
    CHECK(got[i].image.same_values(expect[i].image));
  }
}

TEST_CASE("usage, input and configuration errors map to their exit codes") {
  TempDir d("errors");
  const Run unknown = run({"gen-data", "--out", d / "a.gds", "--bogus", "1"});
  CHECK(unknown.code == cli::kExitUsage);
  CHECK(unknown.err.find("--bogus") != std::string::npos);
  CHECK(unknown.err.find("--out") != std::string::npos);  // usage text
  CHECK(run({}).code == cli::kExitUsage);
  CHECK(run({"frobnicate"}).code == cli::kExitUsage);
  CHECK(run({"--help"}).code == cli::kExitOk);

  const Run missing = run({"eval", "--ckpt", d / "none.gck", "--data", d / "none.gds", "--out",
                           d / "r.json"});
  CHECK(missing.code == cli::kExitInput);
  CHECK(missing.err.find("none.gds") != std::string::npos);

  REQUIRE(run({"gen-data", "--out", d / "a.gds", "--n", "2", "--size", "16"}).code == 0);
  const Run bad_mode = run({"train", "--data", d / "a.gds", "--val", d / "a.gds", "--mode",
                            "sideways", "--out", d / "m.gck"});
  CHECK(bad_mode.code == cli::kExitUsage);
  CHECK(run({"eval", "--ckpt", d / "a.gds", "--data", d / "a.gds", "--out", d / "r.json"}).code ==
        cli::kExitInput);  // not a GCK1 file
  CHECK(run({"eval", "--data", d / "a.gds", "--out", d / "r.json"}).code == cli::kExitUsage);
  CHECK(run({"eval", "--pred", d / "a.gds", "--data", d / "a.gds", "--tta", "--out", d / "r.json"})
            .code == cli::kExitUsage);

  std::ofstream(d / "bad.json") << "{\"epochs\": 2, \"colour\": 1}";
  CHECK(run({"train", "--data", d / "a.gds", "--val", d / "a.gds", "--config", d / "bad.json",
             "--out", d / "m.gck"})
            .code == cli::kExitUsage);
  std::ofstream(d / "broken.json") << "{ not json";
  CHECK(run({"rerun", "--manifest", d / "broken.json"}).code == cli::kExitInput);
}

TEST_CASE("eval of the ground truth as its own prediction gives a perfect report") {
  TempDir d("oracle");
  REQUIRE(run({"gen-data", "--out", d / "a.gds", "--n", "5", "--size", "32", "--seed", "4"}).code == 0);
  REQUIRE(run({"eval", "--pred", d / "a.gds", "--data", d / "a.gds", "--out", d / "r.json"}).code == 0);
  const auto r = read_json(d / "r.json");
  CHECK(r["iou_mean"] == 1.0);
  CHECK(r["dsc_mean"] == 1.0);
  CHECK(r["hd95_mean"] == 0.0);
  CHECK(r["n_samples"] == 5);
  CHECK(r["per_sample"].size() == 5);
}

TEST_CASE("train writes checkpoint, history and manifest; flags override a config file") {
  TempDir d("train");
  REQUIRE(run({"gen-data", "--out", d / "tr.gds", "--n", "4", "--size", "32", "--seed", "1"}).code == 0);
  std::ofstream(d / "cfg.json") << R"({"epochs": 5, "batch": 2, "loss": {"lambda": 0.25}})";
  const Run t = run({"train", "--data", d / "tr.gds", "--val", d / "tr.gds", "--config",
                     d / "cfg.json", "--epochs", "2", "--mode", "baseline", "--out", d / "m.gck"});
  REQUIRE_MESSAGE(t.code == 0, t.err);
  const auto m = read_json(d / "m.gck.manifest.json");
  CHECK(m["config"]["epochs"] == 2);
  CHECK(m["config"]["batch"] == 2);
  CHECK(m["config"]["loss"]["lambda"] == 0.25);
  CHECK(m["config"]["mode"] == "baseline");
  CHECK(m["config"]["encoder"]["image_size"] == 32);

  std::istringstream hist(slurp(d / "m.gck.history.jsonl"));
  std::vector<nlohmann::json> rows;
  for (std::string line; std::getline(hist, line);) rows.push_back(nlohmann::json::parse(line));
  REQUIRE(rows.size() == 3);
  CHECK(rows[0]["epoch"] == 0);
  CHECK(rows[0]["loss"].is_null());
  CHECK(rows[2]["trained"] == true);

  const train::Checkpoint c = train::load_checkpoint(d / "m.gck");
  double best = 0;
  for (const auto& row : rows) best = std::max(best, row["val_dsc"].get<double>());
  CHECK(c.val_dsc == best);
  CHECK(c.config.mode == train::Mode::kBaseline);

  CHECK(run({"guide-dump", "--ckpt", d / "m.gck", "--data", d / "tr.gds", "--out", d / "g"}).code ==
        cli::kExitUsage);
}

TEST_CASE("guide-dump writes 8-bit PGMs of round(255 g)") {
  TempDir d("dump");
  small_run(d, "guided");
  REQUIRE(run({"guide-dump", "--ckpt", d / "m.gck", "--data", d / "va.gds", "--out", d / "g"}).code == 0);
  train::Checkpoint c = train::load_checkpoint(d / "m.gck");
  const auto set = data::read_dataset(d / "va.gds");
  for (std::size_t i = 0; i < set.size(); ++i) {
    const std::string bytes = slurp(fs::path(d / "g") / ("guide_000" + std::to_string(i) + ".pgm"));
    const std::string header = "P5\n32 32\n255\n";
    REQUIRE(bytes.size() == header.size() + 32 * 32);
    CHECK(bytes.substr(0, header.size()) == header);
    const auto g = c.model.guide(set[i].image);
    for (std::size_t p = 0; p < 32 * 32; p += 37) {
      const auto v = static_cast<unsigned char>(bytes[header.size() + p]);
      CHECK(v == std::lround(255.0 * static_cast<double>(g.values[p])));
    }
  }
  const auto m = read_json(fs::path(d / "g") / "manifest.json");
  CHECK(m["outputs"]["files"].size() == 3);
}

TEST_CASE("rerunning every manifest reproduces every output byte for byte") {
  TempDir d("rerun");
  small_run(d, "guided-lora");
  REQUIRE(run({"eval", "--ckpt", d / "m.gck", "--data", d / "va.gds", "--tta", "--out",
               d / "r.json"}).code == 0);
  REQUIRE(run({"guide-dump", "--ckpt", d / "m.gck", "--data", d / "va.gds", "--out", d / "g"}).code == 0);

  const std::vector<std::string> outputs = {"tr.gds", "va.gds", "m.gck", "m.gck.history.jsonl",
                                            "r.json", "g/guide_0000.pgm", "g/guide_0002.pgm"};
  std::vector<std::string> before;
  for (const auto& f : outputs) before.push_back(slurp(d / f));
  for (const auto& f : outputs) fs::remove(d / f);

  for (const std::string m : {"tr.gds.manifest.json", "va.gds.manifest.json", "m.gck.manifest.json",
                              "r.json.manifest.json", "g/manifest.json"}) {
    const Run r = run({"rerun", "--manifest", d / m});
    CHECK_MESSAGE(r.code == 0, m << ": " << r.err);
  }
  for (std::size_t k = 0; k < outputs.size(); ++k) {
    CHECK_MESSAGE(slurp(d / outputs[k]) == before[k], outputs[k]);
  }
}

TEST_CASE("gradcheck prints a passing table") {
  const Run r = run({"gradcheck"});
  CHECK(r.code == 0);
  CHECK(r.out.find("max_rel_err") != std::string::npos);
  CHECK(r.out.find("FAIL") == std::string::npos);
  CHECK(r.out.find("conv2d") != std::string::npos);
}
