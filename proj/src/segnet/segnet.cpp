// Copyright (c) 2026, The guideseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "guideseg/segnet/segnet.hpp"

#include <algorithm>
#include <cmath>

#include "guideseg/numerics/ops.hpp"
#include "guideseg/numerics/random.hpp"

namespace guideseg::segnet {
namespace {

template <typename T>
ConvLayer<T> make_conv(std::size_t out, std::size_t in, std::size_t k, double gain,
                       num::Rng& rng) {
  ConvLayer<T> c{Tensor<T>({out, in, k, k}), Tensor<T>({out})};
  const double sd = std::sqrt(gain / static_cast<double>(in * k * k));
  for (T& v : c.w.data()) v = static_cast<T>(rng.normal(0.0, sd));
  c.w.set_trainable(true);
  c.b.set_trainable(true);
  return c;
}

template <typename T>
DoubleConv<T> make_double(std::size_t in, std::size_t mid, std::size_t out, num::Rng& rng) {
  DoubleConv<T> d;
  d.first = make_conv<T>(mid, in, 3, 2.0, rng);
  d.second = make_conv<T>(out, mid, 3, 2.0, rng);
  return d;
}

// Channel plan: {in, mid, out} per decoder level, coarsest first.
struct UpPlan {
  std::size_t in, mid, out;
};

std::vector<UpPlan> up_plan(const UNetConfig& cfg) {
  std::vector<UpPlan> plan;
  std::size_t prev = cfg.stage_channels(cfg.depth);
  for (std::size_t level = cfg.depth; level-- > 0;) {
    const std::size_t in = prev + cfg.stage_channels(level);
    const std::size_t out = cfg.stage_channels(level == 0 ? 0 : level - 1);
    plan.push_back({in, in / 2, out});
    prev = out;
  }
  return plan;
}

template <typename T>
void expect_shape(const Tensor<T>& t, const num::Shape& shape, const std::string& name) {
  if (t.shape() != shape) {
    throw ConfigError("segnet tensor " + name + " has shape " + num::shape_str(t.shape()) +
                      ", expected " + num::shape_str(shape));
  }
}

template <typename T>
void expect_conv(const ConvLayer<T>& c, std::size_t out, std::size_t in, std::size_t k,
                 const std::string& name) {
  expect_shape(c.w, {out, in, k, k}, name + ".w");
  expect_shape(c.b, {out}, name + ".b");
}

template <typename T>
Var<T> conv_relu(Graph<T>& g, Var<T> x, ConvLayer<T>& c) {
  return num::relu(num::conv2d(x, g.param(c.w), g.param(c.b), 1, 1));
}

template <typename T>
Var<T> double_conv(Graph<T>& g, Var<T> x, DoubleConv<T>& d) {
  return conv_relu(g, conv_relu(g, x, d.first), d.second);
}

template <typename U, typename T>
ConvLayer<U> cast_conv(const ConvLayer<T>& c) {
  return {c.w.template cast<U>(), c.b.template cast<U>()};
}

}  // namespace

std::vector<std::size_t> UNetConfig::gated_stages() const {
  if (!gate_stages) {
    std::vector<std::size_t> all(stages());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
  }
  std::vector<std::size_t> s = *gate_stages;
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  return s;
}

std::size_t UNetConfig::stage_channels(std::size_t stage) const {
  const std::size_t s = std::min(stage, depth - 1);
  return base_channels << s;
}

void UNetConfig::validate() const {
  if (depth == 0) throw ConfigError("UNet depth must be >= 1");
  if (base_channels == 0) throw ConfigError("UNet base_channels must be >= 1");
  if (in_channels == 0) throw ConfigError("UNet in_channels must be >= 1");
  if (gate_stages) {
    for (std::size_t s : *gate_stages) {
      if (s > depth) {
        throw ConfigError("gate stage " + std::to_string(s) + " is out of range 0.." +
                          std::to_string(depth));
      }
    }
  }
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> UNetWeights<T>::named_parameters() {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  auto add_double = [&out](const std::string& prefix, DoubleConv<T>& d) {
    out.emplace_back(prefix + ".conv1.w", &d.first.w);
    out.emplace_back(prefix + ".conv1.b", &d.first.b);
    out.emplace_back(prefix + ".conv2.w", &d.second.w);
    out.emplace_back(prefix + ".conv2.b", &d.second.b);
  };
  for (std::size_t i = 0; i < down.size(); ++i) add_double("down." + std::to_string(i), down[i]);
  for (std::size_t i = 0; i < up.size(); ++i) add_double("up." + std::to_string(i), up[i]);
  out.emplace_back("head.w", &head.w);
  out.emplace_back("head.b", &head.b);
  return out;
}

template <typename T>
template <typename U>
UNetWeights<U> UNetWeights<T>::cast() const {
  UNetWeights<U> o;
  for (const auto& d : down) o.down.push_back({cast_conv<U>(d.first), cast_conv<U>(d.second)});
  for (const auto& d : up) o.up.push_back({cast_conv<U>(d.first), cast_conv<U>(d.second)});
  o.head = cast_conv<U>(head);
  return o;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> GateParams<T>::named_parameters() {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  for (std::size_t i = 0; i < beta.size(); ++i) {
    out.emplace_back("beta." + std::to_string(stages[i]), &beta[i]);
  }
  return out;
}

template <typename T>
UNetWeights<T> init_unet(const UNetConfig& cfg) {
  cfg.validate();
  num::Rng rng(num::derive_seed(cfg.seed, "segnet"));
  UNetWeights<T> w;
  std::size_t in = cfg.in_channels;
  for (std::size_t s = 0; s <= cfg.depth; ++s) {
    const std::size_t c = cfg.stage_channels(s);
    w.down.push_back(make_double<T>(in, c, c, rng));
    in = c;
  }
  for (const UpPlan& p : up_plan(cfg)) w.up.push_back(make_double<T>(p.in, p.mid, p.out, rng));
  w.head = make_conv<T>(1, cfg.stage_channels(0), 1, 1.0, rng);
  return w;
}

template <typename T>
GateParams<T> init_gates(const UNetConfig& cfg) {
  cfg.validate();
  GateParams<T> g;
  g.stages = cfg.gated_stages();
  for (std::size_t i = 0; i < g.stages.size(); ++i) {
    g.beta.emplace_back(num::Shape{1}, T(0));
    g.beta.back().set_trainable(true);
  }
  return g;
}

template <typename T>
void check_shapes(const UNetConfig& cfg, const UNetWeights<T>& w) {
  cfg.validate();
  if (w.down.size() != cfg.stages() || w.up.size() != cfg.depth) {
    throw ConfigError("segnet has " + std::to_string(w.down.size()) + " encoder stages and " +
                      std::to_string(w.up.size()) + " decoder levels, expected " +
                      std::to_string(cfg.stages()) + " and " + std::to_string(cfg.depth));
  }
  std::size_t in = cfg.in_channels;
  for (std::size_t s = 0; s <= cfg.depth; ++s) {
    const std::size_t c = cfg.stage_channels(s);
    expect_conv(w.down[s].first, c, in, 3, "down." + std::to_string(s) + ".conv1");
    expect_conv(w.down[s].second, c, c, 3, "down." + std::to_string(s) + ".conv2");
    in = c;
  }
  const auto plan = up_plan(cfg);
  for (std::size_t i = 0; i < plan.size(); ++i) {
    expect_conv(w.up[i].first, plan[i].mid, plan[i].in, 3, "up." + std::to_string(i) + ".conv1");
    expect_conv(w.up[i].second, plan[i].out, plan[i].mid, 3, "up." + std::to_string(i) + ".conv2");
  }
  expect_conv(w.head, 1, cfg.stage_channels(0), 1, "head");
}

template <typename T>
void check_shapes(const UNetConfig& cfg, const GateParams<T>& gates) {
  if (gates.stages != cfg.gated_stages() || gates.beta.size() != gates.stages.size()) {
    throw ConfigError("gate parameters do not match the configured gate stages");
  }
  for (const auto& b : gates.beta) expect_shape(b, {1}, "gates.beta");
}

template <typename T>
Var<T> gate(Var<T> features, Var<T> guide, Var<T> beta) {
  const num::Shape& fs = features.shape();
  if (fs.size() != 3) throw ConfigError("gate expects features [C,h,w], got " + num::shape_str(fs));
  if (guide.shape().size() != 2) {
    throw ConfigError("gate expects a guide [H,W], got " + num::shape_str(guide.shape()));
  }
  if (beta.numel() != 1) throw ConfigError("gate expects a scalar beta");
  const std::size_t C = fs[0], h = fs[1], w = fs[2], hw = h * w;
  const num::Shape& gs = guide.shape();
  Var<T> r = num::bilinear_resize(num::reshape(guide, {1, gs[0], gs[1]}), h, w);

  const Tensor<T>& fv = features.value();
  const Tensor<T>& rv = r.value();
  const T b = beta.value()[0];
  Tensor<T> out(fs);
  for (std::size_t p = 0; p < hw; ++p) {
    const T factor = T(1) + b * rv[p];
    for (std::size_t c = 0; c < C; ++c) out[c * hw + p] = fv[c * hw + p] * factor;
  }
  return features.graph().record(
      std::move(out), {features, r, beta}, [features, r, beta, C, hw](std::span<const T> g) {
        Graph<T>& gr = features.graph();
        const Tensor<T>& fv = features.value();
        const Tensor<T>& rv = r.value();
        const T b = beta.value()[0];
        if (features.requires_grad()) {
          std::span<T> gf = gr.grad_of(features);
          for (std::size_t p = 0; p < hw; ++p) {
            const T factor = T(1) + b * rv[p];
            for (std::size_t c = 0; c < C; ++c) gf[c * hw + p] += g[c * hw + p] * factor;
          }
        }
        const bool need_r = r.requires_grad(), need_b = beta.requires_grad();
        if (!need_r && !need_b) return;
        std::span<T> grr = need_r ? gr.grad_of(r) : std::span<T>{};
        T gb = 0;
        for (std::size_t p = 0; p < hw; ++p) {
          T acc = 0;
          for (std::size_t c = 0; c < C; ++c) acc += g[c * hw + p] * fv[c * hw + p];
          if (need_r) grr[p] += b * acc;
          gb += acc * rv[p];
        }
        if (need_b) gr.grad_of(beta)[0] += gb;
      });
}

template <typename T>
Var<T> forward(Graph<T>& g, Var<T> image, const Var<T>* guide, const UNetConfig& cfg,
               UNetWeights<T>& w, GateParams<T>* gates) {
  cfg.validate();
  const num::Shape& is = image.shape();
  if (is.size() != 3 || is[0] != cfg.in_channels) {
    throw ConfigError("UNet expects an image [" + std::to_string(cfg.in_channels) +
                      ",H,W], got " + num::shape_str(is));
  }
  const std::size_t div = std::size_t{1} << cfg.depth;
  if (is[1] % div || is[2] % div) {
    throw ConfigError("image size " + std::to_string(is[1]) + "x" + std::to_string(is[2]) +
                      " is not divisible by 2^depth = " + std::to_string(div));
  }
  if (w.down.size() != cfg.stages() || w.up.size() != cfg.depth) {
    throw ConfigError("segnet weights do not match the configured depth");
  }
  const bool gated = guide != nullptr && gates != nullptr;
  if (gated) check_shapes(cfg, *gates);

  std::vector<Var<T>> skips;
  Var<T> x = image;
  for (std::size_t s = 0; s <= cfg.depth; ++s) {
    if (s > 0) x = num::max_pool2x2(x);
    x = double_conv(g, x, w.down[s]);
    if (gated) {
      const auto& st = gates->stages;
      auto it = std::find(st.begin(), st.end(), s);
      if (it != st.end()) {
        x = gate(x, *guide, g.param(gates->beta[static_cast<std::size_t>(it - st.begin())]));
      }
    }
    if (s < cfg.depth) skips.push_back(x);
  }
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    Var<T> skip = skips[cfg.depth - 1 - i];
    x = num::bilinear_resize(x, skip.shape()[1], skip.shape()[2]);
    x = double_conv(g, num::concat_channels(skip, x), w.up[i]);
  }
  return num::conv2d(x, g.param(w.head.w), g.param(w.head.b), 1, 0);
}

template <typename T>
Tensor<T> forward(const Tensor<T>& image, const Tensor<T>* guide, const UNetConfig& cfg,
                  UNetWeights<T>& w, GateParams<T>* gates) {
  Graph<T> g;
  Var<T> x = g.constant(image);
  if (guide) {
    Var<T> gv = g.constant(*guide);
    return forward(g, x, &gv, cfg, w, gates).value();
  }
  return forward(g, x, static_cast<const Var<T>*>(nullptr), cfg, w, gates).value();
}

template <typename T>
Mask predict(const Tensor<T>& logits, double threshold) {
  if (logits.ndim() != 3 || logits.dim(0) != 1) {
    throw ConfigError("predict expects logits [1,H,W], got " + num::shape_str(logits.shape()));
  }
  Mask m(logits.dim(1), logits.dim(2));
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double p = 1.0 / (1.0 + std::exp(-static_cast<double>(logits[i])));
    m.data[i] = p >= threshold ? 1 : 0;
  }
  return m;
}

#define GUIDESEG_INSTANTIATE_SEGNET(T)                                                          \
  template struct UNetWeights<T>;                                                               \
  template struct GateParams<T>;                                                                \
  template UNetWeights<T> init_unet<T>(const UNetConfig&);                                      \
  template GateParams<T> init_gates<T>(const UNetConfig&);                                      \
  template void check_shapes<T>(const UNetConfig&, const UNetWeights<T>&);                      \
  template void check_shapes<T>(const UNetConfig&, const GateParams<T>&);                       \
  template Var<T> gate<T>(Var<T>, Var<T>, Var<T>);                                              \
  template Var<T> forward<T>(Graph<T>&, Var<T>, const Var<T>*, const UNetConfig&,               \
                             UNetWeights<T>&, GateParams<T>*);                                  \
  template Tensor<T> forward<T>(const Tensor<T>&, const Tensor<T>*, const UNetConfig&,          \
                                UNetWeights<T>&, GateParams<T>*);                               \
  template Mask predict<T>(const Tensor<T>&, double);

GUIDESEG_INSTANTIATE_SEGNET(float)
GUIDESEG_INSTANTIATE_SEGNET(double)
template UNetWeights<double> UNetWeights<float>::cast<double>() const;
template UNetWeights<float> UNetWeights<double>::cast<float>() const;
template UNetWeights<float> UNetWeights<float>::cast<float>() const;
template UNetWeights<double> UNetWeights<double>::cast<double>() const;

}  // namespace guideseg::segnet
