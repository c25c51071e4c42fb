// Copyright (c) 2026, The guideseg Authors
// SPDX-License-Identifier: Apache-2.0
//
// Procedural binary-segmentation samples and the GDS1 dataset container.
//
// A sample is a single radially perturbed ellipse on a smooth sinusoidal
// background texture:
//
//   image = base + texture + contrast * soft(mask) + N(0, noise_sigma^2),
//
// clipped to [0,1]. Shape, texture and noise draw from independent streams
// so the shifted-texture variant keeps the exact same masks.
//
// GDS1 layout (little endian):
//   "GDS1" | u32 version=1 | u32 n | u32 H | u32 W |
//   n x ( H*W f32 image | H*W u8 mask )

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "guideseg/mask.hpp"
#include "guideseg/numerics/tensor.hpp"

namespace guideseg::data {

enum class Texture { kStandard, kShifted };

std::string to_string(Texture t);
Texture texture_from_string(const std::string& s);

struct SynthConfig {
  std::size_t size = 64;
  std::size_t n_samples = 200;
  double contrast = 0.25;
  double noise_sigma = 0.1;
  std::size_t blob_complexity = 4;
  double area_min = 0.05;
  double area_max = 0.35;
  Texture texture = Texture::kStandard;
  std::uint64_t seed = 0;
};

struct SegSample {
  num::Tensor<float> image;  // [1,H,W], entries in [0,1]
  Mask mask;                 // [H,W]
  std::uint64_t sample_id = 0;
};

/// Clamps out-of-range fields in place and describes each adjustment.
std::vector<std::string> sanitize(SynthConfig& cfg);

/// Deterministic in (seed, cfg).
SegSample generate_sample(std::uint64_t seed, const SynthConfig& cfg);

/// Samples 0..n-1 drawn with per-sample seeds derived from cfg.seed.
std::vector<SegSample> generate_dataset(const SynthConfig& cfg);

/// Byte size of a GDS1 file holding n samples of H x W.
std::size_t gds1_size(std::size_t n, std::size_t h, std::size_t w);

/// Throws InputError on I/O failure and ConfigError on an empty or ragged
/// sample list.
void write_dataset(const std::vector<SegSample>& samples, const std::filesystem::path& path);
/// Throws InputError if the file cannot be opened and FormatError on bad
/// magic, version, sizes, truncation or non-binary mask bytes.
std::vector<SegSample> read_dataset(const std::filesystem::path& path);

/// Number of 4-connected foreground components.
std::size_t count_components(const Mask& m);

}  // namespace guideseg::data
