// Copyright (c) 2026, The guideseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "guideseg/train/model.hpp"

#include <cmath>

#include "guideseg/errors.hpp"
#include "guideseg/json_reader.hpp"
#include "guideseg/numerics/ops.hpp"
#include "guideseg/numerics/random.hpp"

namespace guideseg::train {
namespace {

using nlohmann::json;

json loss_json(const objectives::LossConfig& c) {
  return {{"lambda", c.lambda},           {"seg_dice_weight", c.seg_dice_weight},
          {"seg_bce_weight", c.seg_bce_weight}, {"hinge_enabled", c.hinge_enabled},
          {"hinge_margin", c.hinge_margin}, {"band_radius", c.band_radius},
          {"eps", c.eps}};
}

json encoder_json(const encoder::EncoderConfig& c) {
  return {{"in_channels", c.in_channels}, {"image_size", c.image_size}, {"patch", c.patch},
          {"dim", c.dim},   {"depth", c.depth}, {"heads", c.heads},
          {"mlp_ratio", c.mlp_ratio},     {"seed", c.seed}};
}

json lora_json(const encoder::LoraConfig& c) {
  json targets = json::array();
  for (std::size_t k = 0; k < 4; ++k) {
    if (c.targets[k]) targets.push_back(encoder::kProjectionNames[k]);
  }
  return {{"rank", c.rank}, {"scale", c.scale}, {"targets", targets}, {"seed", c.seed}};
}

json tokenbook_json(const tokenbook::TokenBookConfig& c) {
  return {{"prototypes", c.prototypes},
          {"temperature", c.temperature},
          {"similarity", tokenbook::to_string(c.similarity)},
          {"prototype_std", c.prototype_std},
          {"alpha_std", c.alpha_std},
          {"seed", c.seed}};
}

json unet_json(const segnet::UNetConfig& c) {
  json stages = c.gate_stages ? json(*c.gate_stages) : json(nullptr);
  return {{"in_channels", c.in_channels}, {"base_channels", c.base_channels},
          {"depth", c.depth},             {"gate_stages", stages},
          {"seed", c.seed}};
}

void read_loss(const json& j, objectives::LossConfig& c) {
  JsonReader r(j, "loss");
  r.get("lambda", c.lambda);
  r.get("seg_dice_weight", c.seg_dice_weight);
  r.get("seg_bce_weight", c.seg_bce_weight);
  r.get("hinge_enabled", c.hinge_enabled);
  r.get("hinge_margin", c.hinge_margin);
  r.get("band_radius", c.band_radius);
  r.get("eps", c.eps);
  r.finish();
}

void read_encoder(const json& j, encoder::EncoderConfig& c) {
  JsonReader r(j, "encoder");
  r.get("in_channels", c.in_channels);
  r.get("image_size", c.image_size);
  r.get("patch", c.patch);
  r.get("dim", c.dim);
  r.get("depth", c.depth);
  r.get("heads", c.heads);
  r.get("mlp_ratio", c.mlp_ratio);
  r.get("seed", c.seed);
  r.finish();
}

void read_lora(const json& j, encoder::LoraConfig& c) {
  JsonReader r(j, "lora");
  r.get("rank", c.rank);
  r.get("scale", c.scale);
  r.get("seed", c.seed);
  if (const json* t = r.child("targets")) {
    if (!t->is_array()) throw ConfigError("lora.targets must be an array of projection names");
    c.targets = {false, false, false, false};
    for (const json& name : *t) {
      bool found = false;
      for (std::size_t k = 0; k < 4; ++k) {
        if (name.is_string() && name.get<std::string>() == encoder::kProjectionNames[k]) {
          c.targets[k] = true;
          found = true;
        }
      }
      if (!found) throw ConfigError("unknown LoRA target " + name.dump());
    }
  }
  r.finish();
}

void read_tokenbook(const json& j, tokenbook::TokenBookConfig& c) {
  JsonReader r(j, "tokenbook");
  r.get("prototypes", c.prototypes);
  r.get("temperature", c.temperature);
  r.get("prototype_std", c.prototype_std);
  r.get("alpha_std", c.alpha_std);
  r.get("seed", c.seed);
  std::string sim = tokenbook::to_string(c.similarity);
  r.get("similarity", sim);
  c.similarity = tokenbook::similarity_from_string(sim);
  r.finish();
}

void read_unet(const json& j, segnet::UNetConfig& c) {
  JsonReader r(j, "unet");
  r.get("in_channels", c.in_channels);
  r.get("base_channels", c.base_channels);
  r.get("depth", c.depth);
  r.get("seed", c.seed);
  if (const json* s = r.child("gate_stages")) {
    if (s->is_null()) {
      c.gate_stages.reset();
    } else {
      try {
        c.gate_stages = s->get<std::vector<std::size_t>>();
      } catch (const json::exception& e) {
        throw ConfigError(std::string("unet.gate_stages: ") + e.what());
      }
    }
  }
  r.finish();
}

}  // namespace

std::string to_string(Mode m) {
  switch (m) {
    case Mode::kBaseline:
      return "baseline";
    case Mode::kGuided:
      return "guided";
    case Mode::kGuidedLora:
      return "guided-lora";
  }
  return "unknown";
}

Mode mode_from_string(const std::string& s) {
  if (s == "baseline" || s == "ungated-baseline") return Mode::kBaseline;
  if (s == "guided" || s == "guided-frozen") return Mode::kGuided;
  if (s == "guided-lora") return Mode::kGuidedLora;
  throw ConfigError("unknown mode '" + s + "' (expected baseline, guided or guided-lora)");
}

void TrainConfig::validate() const {
  main_optimizer().validate();
  lora_optimizer().validate();
  if (batch == 0) throw ConfigError("batch size must be >= 1");
  if (epochs == 0) throw ConfigError("epochs must be >= 1");
  loss.validate();
  encoder.validate();
  unet.validate();
  if (tokenbook.prototypes == 0) throw ConfigError("TokenBook needs at least one prototype");
  if (!(tokenbook.temperature > 0.0)) throw ConfigError("TokenBook temperature must be positive");
  if (unet.in_channels != encoder.in_channels) {
    throw ConfigError("UNet and encoder disagree on input channels");
  }
  if (mode == Mode::kGuidedLora && (lora.rank == 0 || lora.rank > encoder.dim)) {
    throw ConfigError("LoRA rank must lie in [1, encoder dim]");
  }
}

AdamWConfig TrainConfig::main_optimizer() const {
  return {lr_main, weight_decay, beta1, beta2, adam_eps};
}

AdamWConfig TrainConfig::lora_optimizer() const {
  return {lr_lora, weight_decay, beta1, beta2, adam_eps};
}

TrainConfig with_run_seed(TrainConfig cfg) {
  cfg.tokenbook.seed = num::derive_seed(cfg.seed, "run.tokenbook");
  cfg.unet.seed = num::derive_seed(cfg.seed, "run.unet");
  cfg.lora.seed = num::derive_seed(cfg.seed, "run.lora");
  return cfg;
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"mode", to_string(c.mode)},
          {"lr_main", c.lr_main},
          {"lr_lora", c.lr_lora},
          {"weight_decay", c.weight_decay},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},
          {"batch", c.batch},
          {"epochs", c.epochs},
          {"seed", c.seed},
          {"train_guide", c.train_guide},
          {"loss", loss_json(c.loss)},
          {"encoder", encoder_json(c.encoder)},
          {"lora", lora_json(c.lora)},
          {"tokenbook", tokenbook_json(c.tokenbook)},
          {"unet", unet_json(c.unet)}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  JsonReader r(j, "config");
  std::string mode = to_string(c.mode);
  r.get("mode", mode);
  c.mode = mode_from_string(mode);
  r.get("lr_main", c.lr_main);
  r.get("lr_lora", c.lr_lora);
  r.get("weight_decay", c.weight_decay);
  r.get("beta1", c.beta1);
  r.get("beta2", c.beta2);
  r.get("adam_eps", c.adam_eps);
  r.get("batch", c.batch);
  r.get("epochs", c.epochs);
  r.get("seed", c.seed);
  r.get("train_guide", c.train_guide);
  if (const json* s = r.child("loss")) read_loss(*s, c.loss);
  if (const json* s = r.child("encoder")) read_encoder(*s, c.encoder);
  if (const json* s = r.child("lora")) read_lora(*s, c.lora);
  if (const json* s = r.child("tokenbook")) read_tokenbook(*s, c.tokenbook);
  if (const json* s = r.child("unet")) read_unet(*s, c.unet);
  r.finish();
  return c;
}

template <typename T>
std::vector<ParamGroup<T>> Model<T>::groups() {
  std::vector<ParamGroup<T>> out;
  out.push_back({"encoder", true, encoder.named_parameters()});
  out.push_back({"lora", false, lora ? lora->named_parameters() : NamedParams<T>{}});
  out.push_back({"tokenbook", !guided(), book.named_parameters()});
  out.push_back({"segnet", false, unet.named_parameters()});
  out.push_back({"gates", !guided(), gates.named_parameters()});
  return out;
}

template <typename T>
encoder::TokenGrid<T> Model<T>::tokens(const num::Tensor<T>& image) {
  return encoder::encode(image, encoder_cfg, encoder, lora ? &*lora : nullptr);
}

template <typename T>
tokenbook::GuideMask<T> Model<T>::guide(const num::Tensor<T>& image) {
  if (!guided()) throw ConfigError("a baseline model has no guide path");
  const encoder::TokenGrid<T> tg = tokens(image);
  return tokenbook::guide_mask(tg, book, image.dim(1), image.dim(2));
}

template <typename T>
num::Tensor<T> Model<T>::logits(const num::Tensor<T>& image) {
  if (!guided()) return segnet::forward<T>(image, nullptr, unet_cfg, unet, nullptr);
  const tokenbook::GuideMask<T> g = guide(image);
  return segnet::forward<T>(image, &g.values, unet_cfg, unet, &gates);
}

template <typename T>
num::Tensor<T> Model<T>::probabilities(const num::Tensor<T>& image) {
  num::Tensor<T> l = logits(image);
  num::Tensor<T> p({l.dim(1), l.dim(2)});
  for (std::size_t i = 0; i < p.numel(); ++i) {
    p[i] = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(l[i]))));
  }
  return p;
}

template <typename T>
template <typename U>
Model<U> Model<T>::cast() const {
  Model<U> m;
  m.mode = mode;
  m.encoder_cfg = encoder_cfg;
  m.unet_cfg = unet_cfg;
  m.encoder = encoder.template cast<U>();
  if (lora) m.lora = lora->template cast<U>();
  m.book = book.template cast<U>();
  m.unet = unet.template cast<U>();
  m.gates = gates.template cast<U>();
  return m;
}

template <typename T>
Model<T> build_model(const TrainConfig& cfg) {
  cfg.validate();
  Model<T> m;
  m.mode = cfg.mode;
  m.encoder_cfg = cfg.encoder;
  m.unet_cfg = cfg.unet;
  m.encoder = encoder::init_encoder<T>(cfg.encoder);
  if (cfg.mode == Mode::kGuidedLora) m.lora = encoder::init_lora<T>(cfg.encoder, cfg.lora);
  m.book = tokenbook::init_tokenbook<T>(cfg.tokenbook, cfg.encoder.dim);
  m.book.temperature = static_cast<T>(cfg.tokenbook.temperature);
  m.book.similarity = cfg.tokenbook.similarity;
  m.unet = segnet::init_unet<T>(cfg.unet);
  m.gates = segnet::init_gates<T>(cfg.unet);
  return m;
}

template <typename T>
objectives::LossResult<T> sample_loss(num::Graph<T>& g, Model<T>& model,
                                      const num::Tensor<T>& image, const num::Tensor<T>& gt,
                                      const objectives::LossConfig& loss,
                                      const encoder::TokenGrid<T>* tokens) {
  if (image.ndim() != 3) {
    throw ConfigError("sample_loss expects an image [C,H,W], got " + num::shape_str(image.shape()));
  }
  num::Var<T> img = g.constant(image);
  if (!model.guided()) {
    num::Var<T> logits = segnet::forward<T>(g, img, nullptr, model.unet_cfg, model.unet, nullptr);
    return objectives::total_loss<T>(logits, nullptr, gt, loss);
  }
  encoder::TokenVars<T> tv;
  if (tokens) {
    if (model.lora) throw ConfigError("cached tokens cannot be used with LoRA adapters");
    tv = {tokens->ht, tokens->wt, tokens->dim, g.constant(tokens->features)};
  } else {
    tv = encoder::encode(g, img, model.encoder_cfg, model.encoder,
                         model.lora ? &*model.lora : nullptr);
  }
  num::Var<T> guide = tokenbook::guide_mask(tv, model.book, image.dim(1), image.dim(2));
  num::Var<T> logits = segnet::forward<T>(g, img, &guide, model.unet_cfg, model.unet, &model.gates);
  return objectives::total_loss(logits, &guide, gt, loss);
}

#define GUIDESEG_INSTANTIATE_MODEL(T)                                                         \
  template struct Model<T>;                                                                   \
  template Model<T> build_model<T>(const TrainConfig&);                                       \
  template objectives::LossResult<T> sample_loss<T>(num::Graph<T>&, Model<T>&,                \
                                                    const num::Tensor<T>&,                    \
                                                    const num::Tensor<T>&,                    \
                                                    const objectives::LossConfig&,            \
                                                    const encoder::TokenGrid<T>*);

GUIDESEG_INSTANTIATE_MODEL(float)
GUIDESEG_INSTANTIATE_MODEL(double)
template Model<double> Model<float>::cast<double>() const;
template Model<float> Model<double>::cast<float>() const;

}  // namespace guideseg::train
