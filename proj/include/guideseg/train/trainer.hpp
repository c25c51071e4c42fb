// Copyright (c) 2026, The guideseg Authors
// SPDX-License-Identifier: Apache-2.0
//
// Mini-batch training with per-group AdamW, flip augmentation and
// best-on-validation snapshot selection.

#pragma once

#include <cstddef>
#include <functional>
#include <ostream>
#include <vector>

#include <nlohmann/json.hpp>

#include "guideseg/data/synth.hpp"
#include "guideseg/objectives/objectives.hpp"
#include "guideseg/train/checkpoint.hpp"
#include "guideseg/train/model.hpp"

namespace guideseg::train {

struct EpochRecord {
  std::size_t epoch = 0;
  /// False for the epoch-0 evaluation that precedes any update.
  bool trained = false;
  /// Per-sample means over the epoch.
  objectives::LossTerms train;
  double val_dsc = 0.0;

  /// One JSON-lines row; loss fields are null for untrained rows.
  nlohmann::json to_json() const;
};

struct TrainResult {
  /// Snapshot with the highest validation DSC (earliest on ties).
  Checkpoint best;
  Model<float> last;
  std::vector<EpochRecord> history;
};

using HistorySink = std::function<void(const EpochRecord&)>;

/// Trains a model built from `with_run_seed(cfg)`. Every row of the history
/// (epoch 0 first) is passed to `sink` as soon as it is known. Fully
/// deterministic in (cfg, data). Throws ConfigError on empty or
/// incompatible datasets and NumericalError naming the epoch and batch on a
/// non-finite loss.
TrainResult train(const TrainConfig& cfg, const std::vector<data::SegSample>& train_set,
                  const std::vector<data::SegSample>& val_set, const HistorySink& sink = {});

/// Mean DSC of thresholded predictions over `set`.
double validation_dsc(Model<float>& model, const std::vector<data::SegSample>& set);

/// Mean per-sample AUROC of the guide mask against the ground truth.
double guide_alignment(Model<float>& model, const std::vector<data::SegSample>& set);

/// Writes one JSON object per line.
void write_history(const std::vector<EpochRecord>& history, std::ostream& out);

}  // namespace guideseg::train
