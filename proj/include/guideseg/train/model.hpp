// Copyright (c) 2026, The guideseg Authors
// SPDX-License-Identifier: Apache-2.0
//
// Training configuration and the bundle of every model component: frozen
// encoder, optional LoRA adapters, TokenBook, UNet and gate scalars.
//
// Modes:
//   baseline     ungated UNet; the guide path is not evaluated
//   guided       frozen encoder -> TokenBook guide -> gated UNet
//   guided-lora  as guided, with trainable LoRA adapters in the encoder

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "guideseg/encoder/encoder.hpp"
#include "guideseg/mask.hpp"
#include "guideseg/numerics/graph.hpp"
#include "guideseg/objectives/objectives.hpp"
#include "guideseg/segnet/segnet.hpp"
#include "guideseg/tokenbook/tokenbook.hpp"
#include "guideseg/train/adamw.hpp"

namespace guideseg::train {

enum class Mode { kBaseline, kGuided, kGuidedLora };

/// "baseline", "guided", "guided-lora".
std::string to_string(Mode m);
/// Also accepts "ungated-baseline" and "guided-frozen".
Mode mode_from_string(const std::string& s);

struct TrainConfig {
  Mode mode = Mode::kGuided;
  double lr_main = 1e-4;
  double lr_lora = 5e-4;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch = 4;
  std::size_t epochs = 30;
  std::uint64_t seed = 0;
  /// When false, TokenBook and gate parameters stay out of the optimizer.
  bool train_guide = true;
  objectives::LossConfig loss;
  encoder::EncoderConfig encoder;
  encoder::LoraConfig lora;
  tokenbook::TokenBookConfig tokenbook;
  segnet::UNetConfig unet;

  /// Throws ConfigError on non-positive learning rates, zero batch or
  /// epochs, or an invalid component configuration.
  void validate() const;
  AdamWConfig main_optimizer() const;
  AdamWConfig lora_optimizer() const;
};

/// Copies `cfg` with the TokenBook, UNet and LoRA seeds derived from the run
/// seed. The encoder seed is left alone: it identifies the frozen encoder.
TrainConfig with_run_seed(TrainConfig cfg);

nlohmann::json to_json(const TrainConfig& cfg);
/// Missing keys keep their defaults; unknown keys or bad values throw
/// ConfigError.
TrainConfig train_config_from_json(const nlohmann::json& j);

template <typename T>
using NamedParams = std::vector<std::pair<std::string, num::Tensor<T>*>>;

/// Checkpoint group tags, in storage order.
inline constexpr const char* kGroupNames[] = {"encoder", "lora", "tokenbook", "segnet", "gates"};

template <typename T>
struct ParamGroup {
  std::string name;
  bool frozen = false;
  NamedParams<T> params;
};

template <typename T>
struct Model {
  Mode mode = Mode::kGuided;
  encoder::EncoderConfig encoder_cfg;
  segnet::UNetConfig unet_cfg;
  encoder::EncoderWeights<T> encoder;
  std::optional<encoder::LoraWeights<T>> lora;
  tokenbook::TokenBook<T> book;
  segnet::UNetWeights<T> unet;
  segnet::GateParams<T> gates;

  bool guided() const noexcept { return mode != Mode::kBaseline; }

  /// Groups in kGroupNames order; the lora group is empty without
  /// adapters. The encoder is always frozen; in baseline mode the unused
  /// TokenBook and gates are flagged frozen too.
  std::vector<ParamGroup<T>> groups();

  /// Tokens of one image [C,H,W] (with LoRA when present).
  encoder::TokenGrid<T> tokens(const num::Tensor<T>& image);
  /// Guide mask at image resolution. Throws ConfigError in baseline mode.
  tokenbook::GuideMask<T> guide(const num::Tensor<T>& image);
  /// Logits [1,H,W].
  num::Tensor<T> logits(const num::Tensor<T>& image);
  /// Foreground probabilities [H,W].
  num::Tensor<T> probabilities(const num::Tensor<T>& image);

  template <typename U>
  Model<U> cast() const;
};

/// Seeded initialisation from the configured component seeds. Adapters are
/// created only in guided-lora mode.
template <typename T>
Model<T> build_model(const TrainConfig& cfg);

/// Training loss of one sample on graph `g`. `tokens`, when given, replaces
/// the encoder pass (valid only without LoRA, since the encoder is frozen).
template <typename T>
objectives::LossResult<T> sample_loss(num::Graph<T>& g, Model<T>& model,
                                      const num::Tensor<T>& image, const num::Tensor<T>& gt,
                                      const objectives::LossConfig& loss,
                                      const encoder::TokenGrid<T>* tokens = nullptr);

}  // namespace guideseg::train
