// Copyright (c) 2026, The guideseg Authors
// SPDX-License-Identifier: Apache-2.0
//
// Overlap and surface-distance metrics with explicit empty-mask
// conventions, and dataset-level aggregation.
//
// Boundary pixels are foreground pixels with at least one 4-neighbour that
// is background or outside the image. HD95 is the 95th percentile (linear
// interpolation between order statistics) of the pooled directed
// boundary-to-boundary Euclidean distances in both directions.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "guideseg/data/synth.hpp"
#include "guideseg/mask.hpp"

namespace guideseg::metrics {

struct Overlap {
  double iou = 0, dsc = 0;
};

struct SampleMetrics {
  double iou = 0, dsc = 0, hd95 = 0;
};

struct MetricsReport {
  std::vector<SampleMetrics> per_sample;
  double iou_mean = 0, dsc_mean = 0, hd95_mean = 0;
  double iou_std = 0, dsc_std = 0, hd95_std = 0;  // population
  std::vector<std::uint64_t> seeds;

  std::size_t n_samples() const { return per_sample.size(); }
  nlohmann::json to_json() const;
};

/// Both empty -> (1,1). Throws InputError on a shape mismatch.
Overlap overlap_metrics(const Mask& pred, const Mask& gt);

Mask boundary(const Mask& m);

/// Both empty -> 0; exactly one empty -> image diagonal.
double hd95(const Mask& pred, const Mask& gt);
/// Maximum instead of the 95th percentile; same conventions.
double hausdorff(const Mask& pred, const Mask& gt);

/// Linear-interpolation percentile of unsorted values, q in [0,1].
double percentile(std::vector<double> values, double q);

SampleMetrics sample_metrics(const Mask& pred, const Mask& gt);

/// Means and population standard deviations.
MetricsReport aggregate(std::vector<SampleMetrics> per_sample);

/// Area under the ROC curve of `scores` ranking foreground above
/// background, with ties counted as one half. Throws InputError if the
/// sizes differ or either class is absent.
double auroc(std::span<const float> scores, const Mask& labels);

/// Maps an image [1,H,W] to foreground probabilities [H,W].
using ProbabilityFn = std::function<num::Tensor<float>(const num::Tensor<float>&)>;

/// Probability map averaged over the four horizontal/vertical flips.
num::Tensor<float> flip_averaged(const ProbabilityFn& f, const num::Tensor<float>& image);

/// Thresholds probabilities at >= 0.5 and scores every sample.
MetricsReport evaluate_dataset(const ProbabilityFn& f, const std::vector<data::SegSample>& dataset,
                               bool tta_flips);

/// Flip helpers on [C,H,W] and [H,W] tensors.
num::Tensor<float> flip(const num::Tensor<float>& t, bool horizontal, bool vertical);

}  // namespace guideseg::metrics
