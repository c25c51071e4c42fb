// Copyright (c) 2026, The guideseg Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Every file-producing command writes a JSON run
// manifest next to its output; `rerun --manifest M` repeats the run from the
// materialized configuration stored in M.
//
//   gen-data    synthetic GDS1 dataset            manifest: OUT.manifest.json
//   train       GCK1 checkpoint + OUT.history.jsonl         OUT.manifest.json
//   eval        metrics report JSON                         OUT.manifest.json
//   guide-dump  one P5 PGM guide mask per sample            DIR/manifest.json
//   gradcheck   gradient table on standard output
//   rerun       repeat a manifest
//
// Exit codes: 0 success, 2 usage or configuration error, 3 input or format
// error, 4 numerical failure (divergence, failed gradient check), 1 internal.

#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace guideseg::cli {

inline constexpr const char* kArtifactName = "guideseg";
inline constexpr const char* kArtifactVersion = "0.1.0";

enum ExitCode : int {
  kExitOk = 0,
  kExitInternal = 1,
  kExitUsage = 2,
  kExitInput = 3,
  kExitNumerical = 4,
};

/// Runs one command; `args` excludes the program name. Normal output goes to
/// `out`, progress and diagnostics to `err`.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace guideseg::cli
