// Copyright (c) 2026, The guideseg Authors
// SPDX-License-Identifier: Apache-2.0
//
// GCK1 checkpoint container (little endian):
//
//   "GCK1" | u32 version=1 | u32 L | L bytes config JSON |
//   f64 val_dsc | u32 epoch | u32 n_groups |
//   n_groups x ( u32 len | name | u8 frozen | u32 n_tensors |
//                n_tensors x ( u32 len | name | u32 ndim | ndim x u32 dim |
//                              numel x f32 ) )
//
// Group tags are "encoder", "lora", "tokenbook", "segnet" and "gates".

#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "guideseg/train/model.hpp"

namespace guideseg::train {

struct Checkpoint {
  TrainConfig config;
  Model<float> model;
  double val_dsc = 0.0;
  std::size_t epoch = 0;
};

/// Container contents without interpretation.
struct RawTensor {
  std::string name;
  num::Tensor<float> value;
};
struct RawGroup {
  std::string name;
  bool frozen = false;
  std::vector<RawTensor> tensors;
};
struct RawContainer {
  nlohmann::json config;
  double val_dsc = 0.0;
  std::size_t epoch = 0;
  std::vector<RawGroup> groups;
};

/// Serialises every group of the model. Throws InputError on I/O failure.
void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);

/// Rebuilds the model from the stored config and fills every group. Throws
/// InputError if the file cannot be opened and FormatError on bad magic,
/// version, truncation, trailing bytes, or any group or tensor that does not
/// match the stored configuration.
Checkpoint load_checkpoint(const std::filesystem::path& path);

RawContainer read_container(const std::filesystem::path& path);
void write_container(const RawContainer& c, const std::filesystem::path& path);

/// Writes a container holding only the "encoder" group of `model`.
void export_encoder(const Model<float>& model, const std::filesystem::path& path);
/// Replaces the frozen encoder weights of `model` by the "encoder" group of
/// a container, checking every name and shape. Throws FormatError on a
/// mismatch.
void import_encoder(const std::filesystem::path& path, Model<float>& model);

}  // namespace guideseg::train
