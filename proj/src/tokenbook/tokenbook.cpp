// Copyright (c) 2026, The guideseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "guideseg/tokenbook/tokenbook.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "guideseg/numerics/ops.hpp"
#include "guideseg/numerics/random.hpp"

namespace guideseg::tokenbook {

std::string to_string(Similarity s) { return s == Similarity::kCosine ? "cosine" : "dot"; }

Similarity similarity_from_string(const std::string& s) {
  if (s == "cosine") return Similarity::kCosine;
  if (s == "dot") return Similarity::kDot;
  throw ConfigError("unknown similarity '" + s + "' (expected cosine or dot)");
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> TokenBook<T>::named_parameters() {
  return {{"prototypes", &prototypes}, {"alphas", &alphas}};
}

template <typename T>
TokenBook<T> init_tokenbook(const TokenBookConfig& cfg, std::size_t dim) {
  if (cfg.prototypes == 0) throw ConfigError("TokenBook needs at least one prototype");
  if (!(cfg.temperature > 0.0)) throw ConfigError("TokenBook temperature must be positive");
  if (dim == 0) throw ConfigError("TokenBook prototype dimension must be >= 1");
  if (!(cfg.prototype_std > 0.0)) throw ConfigError("TokenBook prototype_std must be positive");
  if (!(cfg.alpha_std >= 0.0)) throw ConfigError("TokenBook alpha_std must be >= 0");
  num::Rng rng(num::derive_seed(cfg.seed, "tokenbook"));
  TokenBook<T> book;
  book.prototypes = Tensor<T>({cfg.prototypes, dim});
  for (T& v : book.prototypes.data()) v = static_cast<T>(rng.normal(0.0, cfg.prototype_std));
  book.alphas = Tensor<T>({cfg.prototypes});
  for (T& v : book.alphas.data()) v = static_cast<T>(rng.normal(0.0, cfg.alpha_std));
  book.prototypes.set_trainable(true);
  book.alphas.set_trainable(true);
  book.temperature = static_cast<T>(cfg.temperature);
  book.similarity = cfg.similarity;
  return book;
}

template <typename T>
Var<T> token_scores(const encoder::TokenVars<T>& tokens, TokenBook<T>& book) {
  Graph<T>& g = tokens.features.graph();
  const Var<T> feats = tokens.features;
  const Var<T> protos = g.param(book.prototypes);
  const Var<T> alphas = g.param(book.alphas);
  const std::size_t n = feats.shape()[0], d = feats.shape()[1];
  const std::size_t K = book.alphas.numel();
  if (book.prototypes.ndim() != 2 || book.prototypes.dim(1) != d || book.prototypes.dim(0) != K) {
    throw ConfigError("TokenBook prototypes " + num::shape_str(book.prototypes.shape()) +
                      " do not match token dim " + std::to_string(d) + " and " +
                      std::to_string(K) + " alphas");
  }
  if (n != tokens.ht * tokens.wt) throw ConfigError("token grid size disagrees with its features");
  const bool cosine = book.similarity == Similarity::kCosine;

  const Tensor<T>& tv = feats.value();
  const Tensor<T>& pv = protos.value();
  const Tensor<T>& av = alphas.value();
  auto tnorm = std::make_shared<std::vector<T>>(n, T(1));
  auto pnorm = std::make_shared<std::vector<T>>(K, T(1));
  auto sim = std::make_shared<std::vector<T>>(n * K);
  auto norm_of = [d](const T* v) {
    T s = 0;
    for (std::size_t j = 0; j < d; ++j) s += v[j] * v[j];
    return std::sqrt(s);
  };
  if (cosine) {
    for (std::size_t i = 0; i < n; ++i) (*tnorm)[i] = norm_of(tv.data().data() + i * d);
    for (std::size_t k = 0; k < K; ++k) (*pnorm)[k] = norm_of(pv.data().data() + k * d);
  }
  Tensor<T> out({tokens.ht, tokens.wt});
  std::vector<T> terms(K);
  for (std::size_t i = 0; i < n; ++i) {
    const T* t = tv.data().data() + i * d;
    for (std::size_t k = 0; k < K; ++k) {
      const T* p = pv.data().data() + k * d;
      T dot = 0;
      for (std::size_t j = 0; j < d; ++j) dot += t[j] * p[j];
      const T c = cosine ? dot / ((*tnorm)[i] * (*pnorm)[k] + static_cast<T>(kCosineEps)) : dot;
      (*sim)[i * K + k] = c;
      terms[k] = av[k] * c;
    }
    // Summing in sorted order makes the score independent of prototype order.
    std::sort(terms.begin(), terms.end());
    T s = 0;
    for (T v : terms) s += v;
    out[i] = s;
  }

  return g.record(std::move(out), {feats, protos, alphas},
                  [feats, protos, alphas, n, d, K, cosine, tnorm, pnorm,
                   sim](std::span<const T> gout) {
                    Graph<T>& gr = feats.graph();
                    const Tensor<T>& tv = feats.value();
                    const Tensor<T>& pv = protos.value();
                    const Tensor<T>& av = alphas.value();
                    std::span<T> gt = feats.requires_grad() ? gr.grad_of(feats) : std::span<T>{};
                    std::span<T> gp = protos.requires_grad() ? gr.grad_of(protos) : std::span<T>{};
                    std::span<T> ga = alphas.requires_grad() ? gr.grad_of(alphas) : std::span<T>{};
                    const T eps = static_cast<T>(kCosineEps);
                    for (std::size_t i = 0; i < n; ++i) {
                      const T* t = tv.data().data() + i * d;
                      for (std::size_t k = 0; k < K; ++k) {
                        const T* p = pv.data().data() + k * d;
                        const T c = (*sim)[i * K + k];
                        if (!ga.empty()) ga[k] += gout[i] * c;
                        const T dc = gout[i] * av[k];
                        if (dc == T(0) || (gt.empty() && gp.empty())) continue;
                        if (!cosine) {
                          for (std::size_t j = 0; j < d; ++j) {
                            if (!gt.empty()) gt[i * d + j] += dc * p[j];
                            if (!gp.empty()) gp[k * d + j] += dc * t[j];
                          }
                          continue;
                        }
                        // c = dot / N with N = |t||p| + eps.
                        const T nt = (*tnorm)[i], np = (*pnorm)[k];
                        const T denom = nt * np + eps;
                        const T dot = c * denom;
                        const T coef = dot / (denom * denom);
                        const T ct = nt > T(0) ? coef * np / nt : T(0);
                        const T cp = np > T(0) ? coef * nt / np : T(0);
                        for (std::size_t j = 0; j < d; ++j) {
                          if (!gt.empty()) gt[i * d + j] += dc * (p[j] / denom - ct * t[j]);
                          if (!gp.empty()) gp[k * d + j] += dc * (t[j] / denom - cp * p[j]);
                        }
                      }
                    }
                  });
}

template <typename T>
Tensor<T> token_scores(const encoder::TokenGrid<T>& tokens, TokenBook<T>& book) {
  Graph<T> g;
  encoder::TokenVars<T> tv{tokens.ht, tokens.wt, tokens.dim, g.constant(tokens.features)};
  return token_scores(tv, book).value();
}

template <typename T>
Var<T> guide_mask(const encoder::TokenVars<T>& tokens, TokenBook<T>& book, std::size_t out_h,
                  std::size_t out_w) {
  if (out_h == 0 || out_w == 0) throw ConfigError("guide mask size must be >= 1");
  if (!(book.temperature > T(0))) throw ConfigError("TokenBook temperature must be positive");
  const T lim = static_cast<T>(kGuideLogitLimit);
  Var<T> s = token_scores(tokens, book);
  s = num::clamp(num::scale(s, T(1) / book.temperature), -lim, lim);
  Var<T> g = num::reshape(num::sigmoid(s), {1, tokens.ht, tokens.wt});
  g = num::bilinear_resize(g, out_h, out_w);
  return num::reshape(g, {out_h, out_w});
}

template <typename T>
GuideMask<T> guide_mask(const encoder::TokenGrid<T>& tokens, TokenBook<T>& book,
                        std::size_t out_h, std::size_t out_w) {
  Graph<T> g;
  encoder::TokenVars<T> tv{tokens.ht, tokens.wt, tokens.dim, g.constant(tokens.features)};
  return GuideMask<T>{out_h, out_w, guide_mask(tv, book, out_h, out_w).value()};
}

#define GUIDESEG_INSTANTIATE_TOKENBOOK(T)                                                     \
  template struct TokenBook<T>;                                                               \
  template TokenBook<T> init_tokenbook<T>(const TokenBookConfig&, std::size_t);               \
  template Var<T> token_scores<T>(const encoder::TokenVars<T>&, TokenBook<T>&);               \
  template Tensor<T> token_scores<T>(const encoder::TokenGrid<T>&, TokenBook<T>&);            \
  template Var<T> guide_mask<T>(const encoder::TokenVars<T>&, TokenBook<T>&, std::size_t,     \
                                std::size_t);                                                 \
  template GuideMask<T> guide_mask<T>(const encoder::TokenGrid<T>&, TokenBook<T>&,            \
                                      std::size_t, std::size_t);

GUIDESEG_INSTANTIATE_TOKENBOOK(float)
GUIDESEG_INSTANTIATE_TOKENBOOK(double)

}  // namespace guideseg::tokenbook
