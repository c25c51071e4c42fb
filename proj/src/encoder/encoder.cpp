// Copyright (c) 2026, The guideseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "guideseg/encoder/encoder.hpp"

#include <cmath>
#include <string>

#include "guideseg/numerics/ops.hpp"
#include "guideseg/numerics/random.hpp"

namespace guideseg::encoder {
namespace {

template <typename T>
Tensor<T> gaussian(num::Shape shape, num::Rng& rng, double stddev) {
  Tensor<T> t(std::move(shape));
  for (T& v : t.data()) v = static_cast<T>(rng.normal(0.0, stddev));
  return t;
}

template <typename T>
void expect_shape(const Tensor<T>& t, const num::Shape& shape, const std::string& name) {
  if (t.shape() != shape) {
    throw ConfigError("encoder tensor " + name + " has shape " + num::shape_str(t.shape()) +
                      ", expected " + num::shape_str(shape));
  }
}

template <typename U, typename T>
EncoderBlock<U> cast_block(const EncoderBlock<T>& b) {
  EncoderBlock<U> o;
  o.ln1_g = b.ln1_g.template cast<U>();
  o.ln1_b = b.ln1_b.template cast<U>();
  for (std::size_t p = 0; p < 4; ++p) {
    o.proj_w[p] = b.proj_w[p].template cast<U>();
    o.proj_b[p] = b.proj_b[p].template cast<U>();
  }
  o.ln2_g = b.ln2_g.template cast<U>();
  o.ln2_b = b.ln2_b.template cast<U>();
  o.fc1_w = b.fc1_w.template cast<U>();
  o.fc1_b = b.fc1_b.template cast<U>();
  o.fc2_w = b.fc2_w.template cast<U>();
  o.fc2_b = b.fc2_b.template cast<U>();
  return o;
}

}  // namespace

void EncoderConfig::validate() const {
  if (patch == 0 || image_size == 0 || image_size % patch) {
    throw ConfigError("encoder patch " + std::to_string(patch) + " does not divide image size " +
                      std::to_string(image_size));
  }
  if (dim == 0 || heads == 0 || dim % heads) {
    throw ConfigError("encoder dim " + std::to_string(dim) + " is not divisible by heads " +
                      std::to_string(heads));
  }
  if (depth == 0) throw ConfigError("encoder depth must be >= 1");
  if (in_channels == 0 || mlp_ratio == 0) throw ConfigError("encoder channels/mlp_ratio must be >= 1");
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> EncoderWeights<T>::named_parameters() {
  std::vector<std::pair<std::string, Tensor<T>*>> out{
      {"patch.w", &patch_w}, {"patch.b", &patch_b}, {"pos", &pos}};
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    EncoderBlock<T>& b = blocks[i];
    const std::string p = "blocks." + std::to_string(i) + ".";
    out.emplace_back(p + "ln1.g", &b.ln1_g);
    out.emplace_back(p + "ln1.b", &b.ln1_b);
    for (std::size_t k = 0; k < 4; ++k) {
      out.emplace_back(p + kProjectionNames[k] + ".w", &b.proj_w[k]);
      out.emplace_back(p + kProjectionNames[k] + ".b", &b.proj_b[k]);
    }
    out.emplace_back(p + "ln2.g", &b.ln2_g);
    out.emplace_back(p + "ln2.b", &b.ln2_b);
    out.emplace_back(p + "fc1.w", &b.fc1_w);
    out.emplace_back(p + "fc1.b", &b.fc1_b);
    out.emplace_back(p + "fc2.w", &b.fc2_w);
    out.emplace_back(p + "fc2.b", &b.fc2_b);
  }
  out.emplace_back("norm.g", &norm_g);
  out.emplace_back("norm.b", &norm_b);
  return out;
}

template <typename T>
template <typename U>
EncoderWeights<U> EncoderWeights<T>::cast() const {
  EncoderWeights<U> o;
  o.patch_w = patch_w.template cast<U>();
  o.patch_b = patch_b.template cast<U>();
  o.pos = pos.template cast<U>();
  for (const auto& b : blocks) o.blocks.push_back(cast_block<U>(b));
  o.norm_g = norm_g.template cast<U>();
  o.norm_b = norm_b.template cast<U>();
  return o;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> LoraWeights<T>::named_parameters() {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    for (std::size_t k = 0; k < 4; ++k) {
      if (!blocks[i][k]) continue;
      const std::string p = "blocks." + std::to_string(i) + "." + kProjectionNames[k] + ".";
      out.emplace_back(p + "a", &blocks[i][k]->a);
      out.emplace_back(p + "b", &blocks[i][k]->b);
    }
  }
  return out;
}

template <typename T>
template <typename U>
LoraWeights<U> LoraWeights<T>::cast() const {
  LoraWeights<U> o;
  o.config = config;
  for (const auto& blk : blocks) {
    std::array<std::optional<LoraPair<U>>, 4> nb;
    for (std::size_t k = 0; k < 4; ++k) {
      if (blk[k]) nb[k] = LoraPair<U>{blk[k]->a.template cast<U>(), blk[k]->b.template cast<U>()};
    }
    o.blocks.push_back(std::move(nb));
  }
  return o;
}

template <typename T>
EncoderWeights<T> init_encoder(const EncoderConfig& cfg) {
  cfg.validate();
  num::Rng rng(num::derive_seed(cfg.seed, "encoder"));
  const std::size_t d = cfg.dim, hidden = cfg.mlp_ratio * cfg.dim;
  const std::size_t patch_in = cfg.in_channels * cfg.patch * cfg.patch;
  const double wstd = 1.0 / std::sqrt(static_cast<double>(d));
  EncoderWeights<T> w;
  w.patch_w = gaussian<T>({patch_in, d}, rng, 1.0 / std::sqrt(static_cast<double>(patch_in)));
  w.patch_b = Tensor<T>({d});
  w.pos = gaussian<T>({cfg.tokens(), d}, rng, 0.1);
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    EncoderBlock<T> b;
    b.ln1_g = Tensor<T>({d}, T(1));
    b.ln1_b = Tensor<T>({d});
    for (std::size_t k = 0; k < 4; ++k) {
      b.proj_w[k] = gaussian<T>({d, d}, rng, wstd);
      b.proj_b[k] = Tensor<T>({d});
    }
    b.ln2_g = Tensor<T>({d}, T(1));
    b.ln2_b = Tensor<T>({d});
    b.fc1_w = gaussian<T>({d, hidden}, rng, wstd);
    b.fc1_b = Tensor<T>({hidden});
    b.fc2_w = gaussian<T>({hidden, d}, rng, 1.0 / std::sqrt(static_cast<double>(hidden)));
    b.fc2_b = Tensor<T>({d});
    w.blocks.push_back(std::move(b));
  }
  w.norm_g = Tensor<T>({d}, T(1));
  w.norm_b = Tensor<T>({d});
  return w;
}

template <typename T>
LoraWeights<T> init_lora(const EncoderConfig& cfg, const LoraConfig& lora) {
  cfg.validate();
  if (lora.rank == 0 || lora.rank > cfg.dim) {
    throw ConfigError("LoRA rank " + std::to_string(lora.rank) + " must lie in [1, dim=" +
                      std::to_string(cfg.dim) + "]");
  }
  if (!(lora.scale > 0.0)) throw ConfigError("LoRA scale must be positive");
  num::Rng rng(num::derive_seed(lora.seed, "lora"));
  LoraWeights<T> out;
  out.config = lora;
  const double astd = 1.0 / static_cast<double>(cfg.dim);
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    std::array<std::optional<LoraPair<T>>, 4> blk;
    for (std::size_t k = 0; k < 4; ++k) {
      if (!lora.targets[k]) continue;
      LoraPair<T> pair{gaussian<T>({cfg.dim, lora.rank}, rng, astd),
                       Tensor<T>({lora.rank, cfg.dim})};
      pair.a.set_trainable(true);
      pair.b.set_trainable(true);
      blk[k] = std::move(pair);
    }
    out.blocks.push_back(std::move(blk));
  }
  return out;
}

template <typename T>
void check_shapes(const EncoderConfig& cfg, const EncoderWeights<T>& w) {
  cfg.validate();
  const std::size_t d = cfg.dim, hidden = cfg.mlp_ratio * cfg.dim;
  expect_shape(w.patch_w, {cfg.in_channels * cfg.patch * cfg.patch, d}, "patch.w");
  expect_shape(w.patch_b, {d}, "patch.b");
  expect_shape(w.pos, {cfg.tokens(), d}, "pos");
  if (w.blocks.size() != cfg.depth) {
    throw ConfigError("encoder has " + std::to_string(w.blocks.size()) + " blocks, expected " +
                      std::to_string(cfg.depth));
  }
  for (const auto& b : w.blocks) {
    expect_shape(b.ln1_g, {d}, "ln1.g");
    expect_shape(b.ln1_b, {d}, "ln1.b");
    for (std::size_t k = 0; k < 4; ++k) {
      expect_shape(b.proj_w[k], {d, d}, std::string(kProjectionNames[k]) + ".w");
      expect_shape(b.proj_b[k], {d}, std::string(kProjectionNames[k]) + ".b");
    }
    expect_shape(b.ln2_g, {d}, "ln2.g");
    expect_shape(b.ln2_b, {d}, "ln2.b");
    expect_shape(b.fc1_w, {d, hidden}, "fc1.w");
    expect_shape(b.fc1_b, {hidden}, "fc1.b");
    expect_shape(b.fc2_w, {hidden, d}, "fc2.w");
    expect_shape(b.fc2_b, {d}, "fc2.b");
  }
  expect_shape(w.norm_g, {d}, "norm.g");
  expect_shape(w.norm_b, {d}, "norm.b");
}

template <typename T>
void check_shapes(const EncoderConfig& cfg, const LoraWeights<T>& lora) {
  if (lora.blocks.size() != cfg.depth) {
    throw ConfigError("LoRA has " + std::to_string(lora.blocks.size()) +
                      " blocks but the encoder depth is " + std::to_string(cfg.depth));
  }
  if (lora.config.rank == 0 || lora.config.rank > cfg.dim) {
    throw ConfigError("LoRA rank " + std::to_string(lora.config.rank) + " exceeds dim " +
                      std::to_string(cfg.dim));
  }
  for (const auto& blk : lora.blocks) {
    for (std::size_t k = 0; k < 4; ++k) {
      if (blk[k].has_value() != lora.config.targets[k]) {
        throw ConfigError(std::string("LoRA target set disagrees for projection ") +
                          kProjectionNames[k]);
      }
      if (!blk[k]) continue;
      expect_shape(blk[k]->a, {cfg.dim, lora.config.rank}, "lora.a");
      expect_shape(blk[k]->b, {lora.config.rank, cfg.dim}, "lora.b");
    }
  }
}

template <typename T>
Var<T> lora_project(Var<T> x, Var<T> w, Var<T> a, Var<T> b, T scale) {
  const num::Shape& sa = a.shape();
  const num::Shape& sw = w.shape();
  if (sa.size() != 2 || sw.size() != 2 || sa[1] > sa[0]) {
    throw ConfigError("LoRA rank " + (sa.size() == 2 ? std::to_string(sa[1]) : std::string("?")) +
                      " exceeds dim " + (sa.empty() ? std::string("?") : std::to_string(sa[0])));
  }
  if (b.shape() != num::Shape{sa[1], sw[1]} || sa[0] != sw[0]) {
    throw ConfigError("LoRA factor shapes A" + num::shape_str(sa) + " B" +
                      num::shape_str(b.shape()) + " do not match W" + num::shape_str(sw));
  }
  const Var<T> base = num::matmul(x, w);
  const Var<T> delta = num::scale(num::matmul(num::matmul(x, a), b), scale);
  return num::add(base, delta);
}

template <typename T>
Tensor<T> lora_project(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& a,
                       const Tensor<T>& b, T scale) {
  Graph<T> g;
  return lora_project(g.constant(x), g.constant(w), g.constant(a), g.constant(b), scale).value();
}

template <typename T>
TokenVars<T> patchify_embed(Graph<T>& g, Var<T> image, const EncoderConfig& cfg,
                            EncoderWeights<T>& w) {
  const num::Shape& s = image.shape();
  if (s.size() != 3 || s[0] != cfg.in_channels) {
    throw ConfigError("encoder expects a [" + std::to_string(cfg.in_channels) +
                      ",H,W] image, got " + num::shape_str(s));
  }
  if (cfg.patch == 0 || s[1] % cfg.patch || s[2] % cfg.patch) {
    throw ConfigError("patch " + std::to_string(cfg.patch) + " does not divide H=" +
                      std::to_string(s[1]) + ", W=" + std::to_string(s[2]));
  }
  TokenVars<T> out;
  out.ht = s[1] / cfg.patch;
  out.wt = s[2] / cfg.patch;
  out.dim = cfg.dim;
  if (out.ht * out.wt != w.pos.dim(0)) {
    throw ConfigError("image " + std::to_string(s[1]) + "x" + std::to_string(s[2]) + " gives " +
                      std::to_string(out.ht * out.wt) + " tokens but the positional table has " +
                      std::to_string(w.pos.dim(0)));
  }
  const Var<T> rows = num::patchify(image, cfg.patch);
  const Var<T> proj = num::add_row_bias(num::matmul(rows, g.param(w.patch_w)), g.param(w.patch_b));
  out.features = num::add(proj, g.param(w.pos));
  return out;
}

template <typename T>
TokenGrid<T> patchify_embed(const Tensor<T>& image, const EncoderConfig& cfg,
                            EncoderWeights<T>& w) {
  Graph<T> g;
  const TokenVars<T> tv = patchify_embed(g, g.constant(image), cfg, w);
  return TokenGrid<T>{tv.ht, tv.wt, tv.dim, tv.features.value()};
}

template <typename T>
TokenVars<T> encode(Graph<T>& g, Var<T> image, const EncoderConfig& cfg, EncoderWeights<T>& w,
                    LoraWeights<T>* lora) {
  check_shapes(cfg, w);
  if (lora) check_shapes(cfg, *lora);
  TokenVars<T> tv = patchify_embed(g, image, cfg, w);
  Var<T> x = tv.features;
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    EncoderBlock<T>& b = w.blocks[i];
    auto project = [&](Var<T> in, Projection p) {
      const std::size_t k = static_cast<std::size_t>(p);
      Var<T> y;
      if (lora && lora->blocks[i][k]) {
        LoraPair<T>& pair = *lora->blocks[i][k];
        y = lora_project(in, g.param(b.proj_w[k]), g.param(pair.a), g.param(pair.b),
                         static_cast<T>(lora->config.scale));
      } else {
        y = num::matmul(in, g.param(b.proj_w[k]));
      }
      return num::add_row_bias(y, g.param(b.proj_b[k]));
    };
    const Var<T> h = num::layer_norm(x, g.param(b.ln1_g), g.param(b.ln1_b));
    const Var<T> att = num::multi_head_attention(project(h, Projection::kQuery),
                                                 project(h, Projection::kKey),
                                                 project(h, Projection::kValue), cfg.heads);
    x = num::add(x, project(att, Projection::kOutput));
    const Var<T> h2 = num::layer_norm(x, g.param(b.ln2_g), g.param(b.ln2_b));
    const Var<T> mid =
        num::gelu(num::add_row_bias(num::matmul(h2, g.param(b.fc1_w)), g.param(b.fc1_b)));
    x = num::add(x, num::add_row_bias(num::matmul(mid, g.param(b.fc2_w)), g.param(b.fc2_b)));
  }
  tv.features = num::layer_norm(x, g.param(w.norm_g), g.param(w.norm_b));
  return tv;
}

template <typename T>
TokenGrid<T> encode(const Tensor<T>& image, const EncoderConfig& cfg, EncoderWeights<T>& w,
                    LoraWeights<T>* lora) {
  Graph<T> g;
  const TokenVars<T> tv = encode(g, g.constant(image), cfg, w, lora);
  return TokenGrid<T>{tv.ht, tv.wt, tv.dim, tv.features.value()};
}

#define GUIDESEG_INSTANTIATE_ENCODER(T)                                                          \
  template struct EncoderWeights<T>;                                                             \
  template struct LoraWeights<T>;                                                                \
  template EncoderWeights<T> init_encoder<T>(const EncoderConfig&);                              \
  template LoraWeights<T> init_lora<T>(const EncoderConfig&, const LoraConfig&);                 \
  template void check_shapes<T>(const EncoderConfig&, const EncoderWeights<T>&);                 \
  template void check_shapes<T>(const EncoderConfig&, const LoraWeights<T>&);                    \
  template Var<T> lora_project<T>(Var<T>, Var<T>, Var<T>, Var<T>, T);                            \
  template Tensor<T> lora_project<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,       \
                                     const Tensor<T>&, T);                                       \
  template TokenVars<T> patchify_embed<T>(Graph<T>&, Var<T>, const EncoderConfig&,               \
                                          EncoderWeights<T>&);                                   \
  template TokenGrid<T> patchify_embed<T>(const Tensor<T>&, const EncoderConfig&,                \
                                          EncoderWeights<T>&);                                   \
  template TokenVars<T> encode<T>(Graph<T>&, Var<T>, const EncoderConfig&, EncoderWeights<T>&,   \
                                  LoraWeights<T>*);                                              \
  template TokenGrid<T> encode<T>(const Tensor<T>&, const EncoderConfig&, EncoderWeights<T>&,    \
                                  LoraWeights<T>*);

GUIDESEG_INSTANTIATE_ENCODER(float)
GUIDESEG_INSTANTIATE_ENCODER(double)

template EncoderWeights<double> EncoderWeights<float>::cast<double>() const;
template EncoderWeights<float> EncoderWeights<double>::cast<float>() const;
template LoraWeights<double> LoraWeights<float>::cast<double>() const;
template LoraWeights<float> LoraWeights<double>::cast<float>() const;

}  // namespace guideseg::encoder
