// Copyright (c) 2026, The guideseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "guideseg/train/trainer.hpp"

#include <cmath>
#include <memory>
#include <optional>
#include <string>

#include "guideseg/errors.hpp"
#include "guideseg/metrics/metrics.hpp"
#include "guideseg/numerics/ops.hpp"
#include "guideseg/numerics/random.hpp"

namespace guideseg::train {
namespace {

void check_set(const std::vector<data::SegSample>& set, const TrainConfig& cfg, const char* what) {
  if (set.empty()) throw ConfigError(std::string(what) + " set is empty");
  for (const data::SegSample& s : set) {
    const num::Shape expect{cfg.unet.in_channels, s.mask.h, s.mask.w};
    if (s.image.shape() != expect) {
      throw ConfigError(std::string(what) + " sample " + std::to_string(s.sample_id) +
                        " has image " + num::shape_str(s.image.shape()) + " for a " +
                        std::to_string(s.mask.h) + "x" + std::to_string(s.mask.w) + " mask");
    }
    if (cfg.mode != Mode::kBaseline &&
        (s.mask.h != cfg.encoder.image_size || s.mask.w != cfg.encoder.image_size)) {
      throw ConfigError(std::string(what) + " images are " + std::to_string(s.mask.h) + "x" +
                        std::to_string(s.mask.w) + " but the encoder expects " +
                        std::to_string(cfg.encoder.image_size) + "x" +
                        std::to_string(cfg.encoder.image_size));
    }
  }
}

std::vector<num::Tensor<float>*> tensors_of(const NamedParams<float>& named) {
  std::vector<num::Tensor<float>*> out;
  for (const auto& [name, t] : named) {
    if (t->trainable()) out.push_back(t);
  }
  return out;
}

void add_terms(objectives::LossTerms& acc, const objectives::LossTerms& t) {
  acc.dice += t.dice;
  acc.bce += t.bce;
  acc.seg += t.seg;
  acc.guide += t.guide;
  acc.hinge += t.hinge;
  acc.total += t.total;
}

objectives::LossTerms scaled(objectives::LossTerms t, double s) {
  t.dice *= s;
  t.bce *= s;
  t.seg *= s;
  t.guide *= s;
  t.hinge *= s;
  t.total *= s;
  return t;
}

}  // namespace

nlohmann::json EpochRecord::to_json() const {
  nlohmann::json j;
  j["epoch"] = epoch;
  j["trained"] = trained;
  const nlohmann::json none(nullptr);
  j["loss"] = trained ? nlohmann::json(train.total) : none;
  j["dice"] = trained ? nlohmann::json(train.dice) : none;
  j["bce"] = trained ? nlohmann::json(train.bce) : none;
  j["guide"] = trained ? nlohmann::json(train.guide) : none;
  j["hinge"] = trained ? nlohmann::json(train.hinge) : none;
  j["val_dsc"] = val_dsc;
  return j;
}

double validation_dsc(Model<float>& model, const std::vector<data::SegSample>& set) {
  const metrics::ProbabilityFn f = [&](const num::Tensor<float>& x) {
    return model.probabilities(x);
  };
  return metrics::evaluate_dataset(f, set, false).dsc_mean;
}

double guide_alignment(Model<float>& model, const std::vector<data::SegSample>& set) {
  double sum = 0;
  std::size_t n = 0;
  for (const data::SegSample& s : set) {
    const std::size_t fg = s.mask.count();
    if (fg == 0 || fg == s.mask.size()) continue;
    sum += metrics::auroc(model.guide(s.image).values.data(), s.mask);
    ++n;
  }
  if (n == 0) throw InputError("guide alignment needs samples with both classes");
  return sum / static_cast<double>(n);
}

void write_history(const std::vector<EpochRecord>& history, std::ostream& out) {
  for (const EpochRecord& r : history) out << r.to_json().dump() << '\n';
}

TrainResult train(const TrainConfig& config, const std::vector<data::SegSample>& train_set,
                  const std::vector<data::SegSample>& val_set, const HistorySink& sink) {
  const TrainConfig cfg = with_run_seed(config);
  cfg.validate();
  check_set(train_set, cfg, "training");
  check_set(val_set, cfg, "validation");

  Model<float> model = build_model<float>(cfg);
  std::vector<std::unique_ptr<AdamW<float>>> optimizers;
  for (ParamGroup<float>& g : model.groups()) {
    if (g.frozen) continue;
    if ((g.name == "tokenbook" || g.name == "gates") && !cfg.train_guide) continue;
    std::vector<num::Tensor<float>*> params = tensors_of(g.params);
    if (params.empty()) continue;
    const AdamWConfig oc = g.name == "lora" ? cfg.lora_optimizer() : cfg.main_optimizer();
    optimizers.push_back(std::make_unique<AdamW<float>>(g.name, std::move(params), oc));
  }

  // Without adapters the encoder never changes, so the tokens of each
  // (sample, flip) pair are computed once.
  const bool cache_tokens = model.guided() && !model.lora;
  std::vector<std::optional<encoder::TokenGrid<float>>> token_cache(
      cache_tokens ? train_set.size() * 4 : 0);

  std::vector<num::Tensor<float>> gts;
  gts.reserve(train_set.size());
  for (const data::SegSample& s : train_set) gts.push_back(objectives::mask_tensor<float>(s.mask));

  num::Rng shuffle_rng(num::derive_seed(cfg.seed, "train.shuffle"));
  num::Rng flip_rng(num::derive_seed(cfg.seed, "train.flip"));

  TrainResult result;
  auto record = [&](const EpochRecord& r) {
    result.history.push_back(r);
    if (sink) sink(r);
    if (result.history.size() == 1 || r.val_dsc > result.best.val_dsc) {
      result.best.model = model;
      result.best.val_dsc = r.val_dsc;
      result.best.epoch = r.epoch;
    }
  };
  result.best.config = cfg;

  EpochRecord initial;
  initial.val_dsc = validation_dsc(model, val_set);
  record(initial);

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    }
    objectives::LossTerms epoch_terms;
    for (std::size_t start = 0, batch = 0; start < order.size(); start += cfg.batch, ++batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      const float inv = 1.0f / static_cast<float>(end - start);
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t idx = order[k];
        const bool hz = flip_rng.coin(0.5), vt = flip_rng.coin(0.5);
        const num::Tensor<float> image = metrics::flip(train_set[idx].image, hz, vt);
        const num::Tensor<float> gt = metrics::flip(gts[idx], hz, vt);
        const encoder::TokenGrid<float>* tokens = nullptr;
        if (cache_tokens) {
          auto& slot = token_cache[idx * 4 + (hz ? 1 : 0) + (vt ? 2 : 0)];
          if (!slot) slot = model.tokens(image);
          tokens = &*slot;
        }
        num::Graph<float> g;
        objectives::LossResult<float> r = sample_loss(g, model, image, gt, cfg.loss, tokens);
        if (!std::isfinite(r.terms.total)) {
          throw NumericalError("training diverged: non-finite loss at epoch " +
                               std::to_string(epoch) + ", batch " + std::to_string(batch));
        }
        add_terms(epoch_terms, r.terms);
        g.backward(num::scale(r.total, inv));
      }
      for (auto& opt : optimizers) {
        try {
          opt->step();
        } catch (const NumericalError& e) {
          throw NumericalError(std::string(e.what()) + " at epoch " + std::to_string(epoch) +
                               ", batch " + std::to_string(batch));
        }
        opt->zero_grad();
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.trained = true;
    rec.train = scaled(epoch_terms, 1.0 / static_cast<double>(order.size()));
    rec.val_dsc = validation_dsc(model, val_set);
    record(rec);
  }
  result.last = std::move(model);
  return result;
}

}  // namespace guideseg::train
