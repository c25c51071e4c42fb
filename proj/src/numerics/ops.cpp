// Copyright (c) 2026, The guideseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "guideseg/numerics/ops.hpp"

#include <cmath>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace guideseg::num {
namespace {

template <typename T>
void require_same(const char* op, const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) {
    throw ConfigError(std::string(op) + " shape mismatch: " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
  }
}

template <typename T>
void accumulate(Var<T> v, std::span<const T> g) {
  if (!v.requires_grad()) return;
  std::span<T> dst = v.graph().grad_of(v);
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
}

/// Records y = f(x) elementwise with dy/dx = df(x).
template <typename T, typename F, typename DF>
Var<T> unary(Var<T> x, F f, DF df) {
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = f(xv[i]);
  return x.graph().record(std::move(out), {x}, [x, df](std::span<const T> gout) {
    const Tensor<T>& xin = x.value();
    std::span<T> gx = x.graph().grad_of(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gout[i] * df(xin[i]);
  });
}

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

}  // namespace

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same("add", a, b);
  Tensor<T> out = a.value();
  out.clear_grad();
  out.set_trainable(false);
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
  return a.graph().record(std::move(out), {a, b}, [a, b](std::span<const T> g) {
    accumulate(a, g);
    accumulate(b, g);
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same("sub", a, b);
  Tensor<T> out(a.shape());
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] - bv[i];
  return a.graph().record(std::move(out), {a, b}, [a, b](std::span<const T> g) {
    accumulate(a, g);
    if (b.requires_grad()) {
      std::span<T> gb = b.graph().grad_of(b);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same("mul", a, b);
  Tensor<T> out(a.shape());
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * bv[i];
  return a.graph().record(std::move(out), {a, b}, [a, b](std::span<const T> g) {
    const Tensor<T>& av = a.value();
    const Tensor<T>& bv = b.value();
    if (a.requires_grad()) {
      std::span<T> ga = a.graph().grad_of(a);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (b.requires_grad()) {
      std::span<T> gb = b.graph().grad_of(b);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  Tensor<T> out(a.shape());
  const Tensor<T>& av = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * s;
  return a.graph().record(std::move(out), {a}, [a, s](std::span<const T> g) {
    std::span<T> ga = a.graph().grad_of(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * s;
  });
}

template <typename T>
Var<T> add_scalar(Var<T> a, T s) {
  Tensor<T> out(a.shape());
  const Tensor<T>& av = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] + s;
  return a.graph().record(std::move(out), {a}, [a](std::span<const T> g) { accumulate(a, g); });
}

template <typename T>
Var<T> clamp(Var<T> a, T lo, T hi) {
  Tensor<T> out(a.shape());
  const Tensor<T>& av = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::min(std::max(av[i], lo), hi);
  return a.graph().record(std::move(out), {a}, [a, lo, hi](std::span<const T> g) {
    const Tensor<T>& av = a.value();
    std::span<T> ga = a.graph().grad_of(a);
    for (std::size_t i = 0; i < ga.size(); ++i) {
      if (av[i] > lo && av[i] < hi) ga[i] += g[i];
    }
  });
}

template <typename T>
Var<T> sum(Var<T> a) {
  T total = 0;
  for (T v : a.value().data()) total += v;
  return a.graph().record(Tensor<T>({1}, total), {a}, [a](std::span<const T> g) {
    std::span<T> ga = a.graph().grad_of(a);
    for (T& v : ga) v += g[0];
  });
}

template <typename T>
Var<T> mean(Var<T> a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  out.set_trainable(false);
  return a.graph().record(std::move(out), {a}, [a](std::span<const T> g) { accumulate(a, g); });
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tensor<T> out = matmul(a.value(), b.value());
  return a.graph().record(std::move(out), {a, b}, [a, b](std::span<const T> g) {
    const Tensor<T>& av = a.value();
    const Tensor<T>& bv = b.value();
    const std::size_t n = av.dim(0), k = av.dim(1), m = bv.dim(1);
    CMapMat<T> gm(g.data(), n, m);
    if (a.requires_grad()) {
      MapMat<T>(a.graph().grad_of(a).data(), n, k).noalias() +=
          gm * CMapMat<T>(bv.data().data(), k, m).transpose();
    }
    if (b.requires_grad()) {
      MapMat<T>(b.graph().grad_of(b).data(), k, m).noalias() +=
          CMapMat<T>(av.data().data(), n, k).transpose() * gm;
    }
  });
}

template <typename T>
Var<T> add_row_bias(Var<T> x, Var<T> bias) {
  const Tensor<T>& xv = x.value();
  if (xv.ndim() != 2 || bias.numel() != xv.dim(1)) {
    throw ConfigError("add_row_bias shape mismatch: " + shape_str(xv.shape()) + " + " +
                      shape_str(bias.shape()));
  }
  Tensor<T> out(xv.shape());
  const std::size_t n = xv.dim(0), d = xv.dim(1);
  const Tensor<T>& bv = bias.value();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = xv[i * d + j] + bv[j];
  }
  return x.graph().record(std::move(out), {x, bias}, [x, bias, n, d](std::span<const T> g) {
    accumulate(x, g);
    if (bias.requires_grad()) {
      std::span<T> gb = bias.graph().grad_of(bias);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) gb[j] += g[i * d + j];
      }
    }
  });
}

template <typename T>
Var<T> relu(Var<T> a) {
  return unary(
      a, [](T x) { return x > T(0) ? x : T(0); }, [](T x) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> gelu(Var<T> a) {
  constexpr T inv_sqrt2 = static_cast<T>(1.0 / std::numbers::sqrt2);
  constexpr T inv_sqrt2pi = static_cast<T>(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
  return unary(
      a, [](T x) { return T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2)); },
      [](T x) {
        const T cdf = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
        return cdf + x * inv_sqrt2pi * std::exp(T(-0.5) * x * x);
      });
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  return unary(
      a, [](T x) { return sigmoid(x); },
      [](T x) {
        const T y = sigmoid(x);
        return y * (T(1) - y);
      });
}

namespace {

/// Normalises `count` groups of `len` contiguous values; `param_of(group, k)`
/// gives the affine-parameter index of element k within the group.
template <typename T, typename ParamOf>
Var<T> normalize_groups(Var<T> x, Var<T> gamma, Var<T> beta, std::size_t count,
                        std::size_t len, T eps, ParamOf param_of) {
  const Tensor<T>& xv = x.value();
  auto xhat = std::make_shared<std::vector<T>>(xv.numel());
  auto inv_std = std::make_shared<std::vector<T>>(count);
  Tensor<T> out(xv.shape());
  const Tensor<T>& gv = gamma.value();
  const Tensor<T>& bv = beta.value();
  for (std::size_t r = 0; r < count; ++r) {
    const T* src = xv.data().data() + r * len;
    T mu = 0;
    for (std::size_t k = 0; k < len; ++k) mu += src[k];
    mu /= static_cast<T>(len);
    T var = 0;
    for (std::size_t k = 0; k < len; ++k) var += (src[k] - mu) * (src[k] - mu);
    var /= static_cast<T>(len);
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t k = 0; k < len; ++k) {
      const std::size_t idx = r * len + k;
      const std::size_t pi = param_of(r, k);
      (*xhat)[idx] = (src[k] - mu) * is;
      out[idx] = (*xhat)[idx] * gv[pi] + bv[pi];
    }
  }
  return x.graph().record(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, count, len, xhat, inv_std, param_of](std::span<const T> g) {
        const Tensor<T>& gv = gamma.value();
        std::span<T> ggam = gamma.requires_grad() ? gamma.graph().grad_of(gamma) : std::span<T>{};
        std::span<T> gbet = beta.requires_grad() ? beta.graph().grad_of(beta) : std::span<T>{};
        std::span<T> gx = x.requires_grad() ? x.graph().grad_of(x) : std::span<T>{};
        std::vector<T> dxhat(len);
        for (std::size_t r = 0; r < count; ++r) {
          T m1 = 0, m2 = 0;
          for (std::size_t k = 0; k < len; ++k) {
            const std::size_t idx = r * len + k;
            const std::size_t pi = param_of(r, k);
            if (!ggam.empty()) ggam[pi] += g[idx] * (*xhat)[idx];
            if (!gbet.empty()) gbet[pi] += g[idx];
            dxhat[k] = g[idx] * gv[pi];
            m1 += dxhat[k];
            m2 += dxhat[k] * (*xhat)[idx];
          }
          if (gx.empty()) continue;
          m1 /= static_cast<T>(len);
          m2 /= static_cast<T>(len);
          const T is = (*inv_std)[r];
          for (std::size_t k = 0; k < len; ++k) {
            const std::size_t idx = r * len + k;
            gx[idx] += is * (dxhat[k] - m1 - (*xhat)[idx] * m2);
          }
        }
      });
}

}  // namespace

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
  const Shape& s = x.shape();
  if (s.size() != 2 || gamma.numel() != s[1] || beta.numel() != s[1]) {
    throw ConfigError("layer_norm shape mismatch: x" + shape_str(s) + " gamma" +
                      shape_str(gamma.shape()) + " beta" + shape_str(beta.shape()));
  }
  return normalize_groups(x, gamma, beta, s[0], s[1], eps,
                          [](std::size_t, std::size_t k) { return k; });
}

template <typename T>
Var<T> group_norm(Var<T> x, Var<T> gamma, Var<T> beta, std::size_t groups, T eps) {
  const Shape& s = x.shape();
  if (s.size() != 3 || gamma.numel() != s[0] || beta.numel() != s[0] || groups == 0 ||
      s[0] % groups) {
    throw ConfigError("group_norm shape mismatch: x" + shape_str(s) + " gamma" +
                      shape_str(gamma.shape()) + " groups=" + std::to_string(groups));
  }
  const std::size_t per_group = s[0] / groups;
  const std::size_t hw = s[1] * s[2];
  return normalize_groups(x, gamma, beta, groups, per_group * hw, eps,
                          [per_group, hw](std::size_t grp, std::size_t k) {
                            return grp * per_group + k / hw;
                          });
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> bias, std::size_t stride, std::size_t pad) {
  Tensor<T> out = conv2d(x.value(), w.value(), bias.value(), stride, pad);
  return x.graph().record(std::move(out), {x, w, bias},
                          [x, w, bias, stride, pad](std::span<const T> g) {
                            Graph<T>& gr = x.graph();
                            detail::conv2d_backward(
                                x.value(), w.value(), g, stride, pad,
                                x.requires_grad() ? gr.grad_of(x) : std::span<T>{},
                                w.requires_grad() ? gr.grad_of(w) : std::span<T>{},
                                bias.requires_grad() ? gr.grad_of(bias) : std::span<T>{});
                          });
}

template <typename T>
Var<T> max_pool2x2(Var<T> x) {
  const Tensor<T>& xv = x.value();
  Tensor<T> out = max_pool2x2(xv);
  // Winner index per output cell; ties go to the first in row-major order.
  auto arg = std::make_shared<std::vector<std::size_t>>(out.numel());
  const std::size_t c_n = xv.dim(0), h = xv.dim(1), w = xv.dim(2), oh = h / 2, ow = w / 2;
  for (std::size_t c = 0; c < c_n; ++c) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = (c * h + 2 * i) * w + 2 * j;
        for (std::size_t di = 0; di < 2; ++di) {
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const std::size_t idx = (c * h + 2 * i + di) * w + 2 * j + dj;
            if (xv[idx] > xv[best]) best = idx;
          }
        }
        (*arg)[(c * oh + i) * ow + j] = best;
      }
    }
  }
  return x.graph().record(std::move(out), {x}, [x, arg](std::span<const T> g) {
    std::span<T> gx = x.graph().grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[(*arg)[i]] += g[i];
  });
}

template <typename T>
Var<T> bilinear_resize(Var<T> x, std::size_t out_h, std::size_t out_w) {
  Tensor<T> out = bilinear_resize(x.value(), out_h, out_w);
  return x.graph().record(std::move(out), {x}, [x, out_h, out_w](std::span<const T> g) {
    detail::bilinear_resize_backward(x.shape(), out_h, out_w, g, x.graph().grad_of(x));
  });
}

template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 3 || sb.size() != 3 || sa[1] != sb[1] || sa[2] != sb[2]) {
    throw ConfigError("concat_channels shape mismatch: " + shape_str(sa) + " and " +
                      shape_str(sb));
  }
  Tensor<T> out({sa[0] + sb[0], sa[1], sa[2]});
  const std::size_t na = a.numel();
  std::copy(a.value().data().begin(), a.value().data().end(), out.data().begin());
  std::copy(b.value().data().begin(), b.value().data().end(), out.data().begin() + na);
  return a.graph().record(std::move(out), {a, b}, [a, b, na](std::span<const T> g) {
    accumulate(a, g.first(na));
    accumulate(b, g.subspan(na));
  });
}

template <typename T>
Var<T> patchify(Var<T> x, std::size_t patch) {
  const Shape& s = x.shape();
  if (s.size() != 3 || patch == 0 || s[1] % patch || s[2] % patch) {
    throw ConfigError("patchify: patch " + std::to_string(patch) + " does not divide H=" +
                      (s.size() == 3 ? std::to_string(s[1]) : std::string("?")) + ", W=" +
                      (s.size() == 3 ? std::to_string(s[2]) : std::string("?")));
  }
  const std::size_t c_n = s[0], h = s[1], w = s[2], ht = h / patch, wt = w / patch;
  const std::size_t row = c_n * patch * patch;
  // index[r * row + k] = source offset of patch-row entry k.
  auto index = std::make_shared<std::vector<std::size_t>>(ht * wt * row);
  for (std::size_t ty = 0; ty < ht; ++ty) {
    for (std::size_t tx = 0; tx < wt; ++tx) {
      const std::size_t r = ty * wt + tx;
      for (std::size_t c = 0; c < c_n; ++c) {
        for (std::size_t i = 0; i < patch; ++i) {
          for (std::size_t j = 0; j < patch; ++j) {
            (*index)[r * row + (c * patch + i) * patch + j] =
                (c * h + ty * patch + i) * w + tx * patch + j;
          }
        }
      }
    }
  }
  Tensor<T> out({ht * wt, row});
  const Tensor<T>& xv = x.value();
  for (std::size_t k = 0; k < index->size(); ++k) out[k] = xv[(*index)[k]];
  return x.graph().record(std::move(out), {x}, [x, index](std::span<const T> g) {
    std::span<T> gx = x.graph().grad_of(x);
    for (std::size_t k = 0; k < g.size(); ++k) gx[(*index)[k]] += g[k];
  });
}

template <typename T>
Var<T> multi_head_attention(Var<T> q, Var<T> k, Var<T> v, std::size_t heads) {
  auto probs = std::make_shared<std::vector<std::vector<T>>>();
  Tensor<T> out = detail::mha_forward(q.value(), k.value(), v.value(), heads, probs.get());
  return q.graph().record(std::move(out), {q, k, v}, [q, k, v, heads, probs](std::span<const T> g) {
    Graph<T>& gr = q.graph();
    detail::mha_backward(q.value(), k.value(), v.value(), heads, *probs, g,
                         q.requires_grad() ? gr.grad_of(q) : std::span<T>{},
                         k.requires_grad() ? gr.grad_of(k) : std::span<T>{},
                         v.requires_grad() ? gr.grad_of(v) : std::span<T>{});
  });
}

template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v) {
  return multi_head_attention(q, k, v, 1);
}

#define GUIDESEG_INSTANTIATE_OPS(T)                                                 \
  template Var<T> add<T>(Var<T>, Var<T>);                                           \
  template Var<T> sub<T>(Var<T>, Var<T>);                                           \
  template Var<T> mul<T>(Var<T>, Var<T>);                                           \
  template Var<T> scale<T>(Var<T>, T);                                              \
  template Var<T> add_scalar<T>(Var<T>, T);                                         \
  template Var<T> clamp<T>(Var<T>, T, T);                                           \
  template Var<T> sum<T>(Var<T>);                                                   \
  template Var<T> mean<T>(Var<T>);                                                  \
  template Var<T> reshape<T>(Var<T>, Shape);                                        \
  template Var<T> matmul<T>(Var<T>, Var<T>);                                        \
  template Var<T> add_row_bias<T>(Var<T>, Var<T>);                                  \
  template Var<T> relu<T>(Var<T>);                                                  \
  template Var<T> gelu<T>(Var<T>);                                                  \
  template Var<T> sigmoid<T>(Var<T>);                                               \
  template Var<T> layer_norm<T>(Var<T>, Var<T>, Var<T>, T);                         \
  template Var<T> group_norm<T>(Var<T>, Var<T>, Var<T>, std::size_t, T);            \
  template Var<T> conv2d<T>(Var<T>, Var<T>, Var<T>, std::size_t, std::size_t);      \
  template Var<T> max_pool2x2<T>(Var<T>);                                           \
  template Var<T> bilinear_resize<T>(Var<T>, std::size_t, std::size_t);             \
  template Var<T> concat_channels<T>(Var<T>, Var<T>);                               \
  template Var<T> patchify<T>(Var<T>, std::size_t);                                 \
  template Var<T> attention<T>(Var<T>, Var<T>, Var<T>);                             \
  template Var<T> multi_head_attention<T>(Var<T>, Var<T>, Var<T>, std::size_t);

GUIDESEG_INSTANTIATE_OPS(float)
GUIDESEG_INSTANTIATE_OPS(double)

}  // namespace guideseg::num
