// Copyright (c) 2026, The guideseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "guideseg/numerics/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Dense>

namespace guideseg::num {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;
template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using CStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

struct ConvGeom {
  std::size_t c_in, h, w, c_out, kh, kw, stride, pad, oh, ow;
  std::size_t k() const { return c_in * kh * kw; }
  std::size_t p() const { return oh * ow; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

template <typename T>
ConvGeom conv_geometry(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride,
                       std::size_t pad) {
  if (x.ndim() != 3) throw ConfigError("conv2d input must be [C,H,W], got " + shape_str(x.shape()));
  if (w.ndim() != 4) {
    throw ConfigError("conv2d kernel must be [C_out,C_in,kh,kw], got " + shape_str(w.shape()));
  }
  if (stride == 0) throw ConfigError("conv2d stride must be >= 1");
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), w.dim(0), w.dim(2), w.dim(3), stride, pad, 0, 0};
  if (w.dim(1) != g.c_in) {
    throw ConfigError("conv2d kernel C_in=" + std::to_string(w.dim(1)) +
                      " does not match input channels C=" + std::to_string(g.c_in));
  }
  if (g.kh > g.h + 2 * pad || g.kw > g.w + 2 * pad) {
    throw ConfigError("conv2d kernel " + std::to_string(g.kh) + "x" + std::to_string(g.kw) +
                      " exceeds padded input " + std::to_string(g.h + 2 * pad) + "x" +
                      std::to_string(g.w + 2 * pad));
  }
  g.oh = (g.h + 2 * pad - g.kh) / stride + 1;
  g.ow = (g.w + 2 * pad - g.kw) / stride + 1;
  return g;
}

/// Output columns [lo, hi) whose tap j lands inside the input row.
inline void valid_span(const ConvGeom& g, std::size_t j, std::size_t& lo, std::size_t& hi) {
  // ox * stride + j - pad in [0, w)
  lo = j >= g.pad ? 0 : (g.pad - j + g.stride - 1) / g.stride;
  const std::size_t lim = g.w + g.pad;  // ox * stride + j < lim
  hi = j >= lim ? 0 : std::min(g.ow, (lim - j + g.stride - 1) / g.stride);
  if (hi < lo) hi = lo;
}

// Both helpers work on the output-row band [oy0, oy1); `cols` holds
// k() rows of (oy1 - oy0) * ow entries.
template <typename T>
void im2col(const ConvGeom& g, const T* x, T* cols, std::size_t oy0, std::size_t oy1) {
  const std::size_t pb = (oy1 - oy0) * g.ow;
  for (std::size_t c = 0; c < g.c_in; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        T* row = cols + ((c * g.kh + i) * g.kw + j) * pb;
        std::size_t lo, hi;
        valid_span(g, j, lo, hi);
        for (std::size_t oy = oy0; oy < oy1; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + i) -
                                   static_cast<std::ptrdiff_t>(g.pad);
          T* dst = row + (oy - oy0) * g.ow;
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.h) || lo >= hi) {
            std::fill(dst, dst + g.ow, T(0));
            continue;
          }
          // lo * stride + j >= pad, so the first source offset is non-negative.
          const T* src = x + (c * g.h + static_cast<std::size_t>(y)) * g.w +
                         (lo * g.stride + j - g.pad);
          std::fill(dst, dst + lo, T(0));
          if (g.stride == 1) {
            std::copy(src, src + (hi - lo), dst + lo);
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] = src[(ox - lo) * g.stride];
          }
          std::fill(dst + hi, dst + g.ow, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const ConvGeom& g, const T* cols, T* gx, std::size_t oy0, std::size_t oy1) {
  const std::size_t pb = (oy1 - oy0) * g.ow;
  for (std::size_t c = 0; c < g.c_in; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const T* row = cols + ((c * g.kh + i) * g.kw + j) * pb;
        std::size_t lo, hi;
        valid_span(g, j, lo, hi);
        if (lo >= hi) continue;
        for (std::size_t oy = oy0; oy < oy1; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + i) -
                                   static_cast<std::ptrdiff_t>(g.pad);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.h)) continue;
          T* dst = gx + (c * g.h + static_cast<std::size_t>(y)) * g.w +
                   (lo * g.stride + j - g.pad);
          const T* src = row + (oy - oy0) * g.ow;
          for (std::size_t ox = lo; ox < hi; ++ox) dst[(ox - lo) * g.stride] += src[ox];
        }
      }
    }
  }
}

// Output rows per im2col band, sized so a band stays cache resident.
inline std::size_t band_rows(const ConvGeom& g) {
  constexpr std::size_t kBandEntries = std::size_t{1} << 18;
  const std::size_t per_row = g.k() * g.ow;
  return std::clamp<std::size_t>(kBandEntries / std::max<std::size_t>(per_row, 1), 1, g.oh);
}

// Stride-1 convolution as one GEMM per kernel tap. The zero-padded input
// is stored row-major with row length Wp, so tap (i, j) of output (oy, ox)
// reads column oy*Wp + ox + i*Wp + j: a plain column shift. Outputs are
// produced on the wide grid oh x Wp and the last kw-1 columns are dropped.
struct ShiftGeom {
  std::size_t wp, len, q;  // padded row length, padded buffer length, wide columns
};

inline ShiftGeom shift_geometry(const ConvGeom& g) {
  const std::size_t wp = g.w + 2 * g.pad, hp = g.h + 2 * g.pad;
  return {wp, hp * wp + g.kw - 1, g.oh * wp};
}

// Measured crossover: small channel products starve the per-tap GEMMs and
// narrow maps waste too much of the wide grid; im2col wins there.
inline bool use_shift(const ConvGeom& g) {
  return g.stride == 1 && !g.pointwise() && g.c_in * g.c_out >= 512 && g.w >= 16;
}

template <typename T>
std::vector<T> pad_input(const ConvGeom& g, const ShiftGeom& s, const T* x) {
  std::vector<T> xp(g.c_in * s.len, T(0));
  for (std::size_t c = 0; c < g.c_in; ++c) {
    for (std::size_t y = 0; y < g.h; ++y) {
      const T* src = x + (c * g.h + y) * g.w;
      std::copy(src, src + g.w, xp.data() + c * s.len + (y + g.pad) * s.wp + g.pad);
    }
  }
  return xp;
}

template <typename T>
CStridedMap<T> tap_view(const ConvGeom& g, const ShiftGeom& s, const std::vector<T>& xp,
                        std::size_t i, std::size_t j) {
  return CStridedMap<T>(xp.data() + i * s.wp + j, static_cast<Eigen::Index>(g.c_in),
                        static_cast<Eigen::Index>(s.q),
                        Eigen::OuterStride<>(static_cast<Eigen::Index>(s.len)));
}

template <typename T>
void conv_shift(const ConvGeom& g, const T* x, const T* w, T* out, bool accumulate) {
  const ShiftGeom s = shift_geometry(g);
  const std::vector<T> xp = pad_input(g, s, x);
  const std::size_t kk = g.kh * g.kw;
  RowMat<T> wt(static_cast<Eigen::Index>(g.c_out), static_cast<Eigen::Index>(g.c_in));
  RowMat<T> wide = RowMat<T>::Zero(static_cast<Eigen::Index>(g.c_out), static_cast<Eigen::Index>(s.q));
  for (std::size_t i = 0; i < g.kh; ++i) {
    for (std::size_t j = 0; j < g.kw; ++j) {
      const std::size_t t = i * g.kw + j;
      for (std::size_t co = 0; co < g.c_out; ++co) {
        for (std::size_t ci = 0; ci < g.c_in; ++ci) wt(co, ci) = w[(co * g.c_in + ci) * kk + t];
      }
      wide.noalias() += wt * tap_view(g, s, xp, i, j);
    }
  }
  for (std::size_t co = 0; co < g.c_out; ++co) {
    for (std::size_t oy = 0; oy < g.oh; ++oy) {
      const T* src = wide.data() + co * s.q + oy * s.wp;
      T* dst = out + (co * g.oh + oy) * g.ow;
      if (accumulate) {
        for (std::size_t ox = 0; ox < g.ow; ++ox) dst[ox] += src[ox];
      } else {
        std::copy(src, src + g.ow, dst);
      }
    }
  }
}

// gw += gout * im2col(x)^T, one tap at a time on the wide grid.
template <typename T>
void conv_shift_weight_grad(const ConvGeom& g, const T* x, const T* gout, T* gw) {
  const ShiftGeom s = shift_geometry(g);
  const std::vector<T> xp = pad_input(g, s, x);
  RowMat<T> gwide = RowMat<T>::Zero(static_cast<Eigen::Index>(g.c_out), static_cast<Eigen::Index>(s.q));
  for (std::size_t co = 0; co < g.c_out; ++co) {
    for (std::size_t oy = 0; oy < g.oh; ++oy) {
      const T* src = gout + (co * g.oh + oy) * g.ow;
      std::copy(src, src + g.ow, gwide.data() + co * s.q + oy * s.wp);
    }
  }
  const std::size_t kk = g.kh * g.kw;
  RowMat<T> gt(static_cast<Eigen::Index>(g.c_out), static_cast<Eigen::Index>(g.c_in));
  for (std::size_t i = 0; i < g.kh; ++i) {
    for (std::size_t j = 0; j < g.kw; ++j) {
      const std::size_t t = i * g.kw + j;
      gt.noalias() = gwide * tap_view(g, s, xp, i, j).transpose();
      for (std::size_t co = 0; co < g.c_out; ++co) {
        for (std::size_t ci = 0; ci < g.c_in; ++ci) gw[(co * g.c_in + ci) * kk + t] += gt(co, ci);
      }
    }
  }
}

// out (+)= W * im2col(x) for one [C_in,H,W] input; out is [C_out, p].
template <typename T>
void conv_core(const ConvGeom& g, const T* x, const T* w, T* out, bool accumulate) {
  MapMat<T> o(out, g.c_out, g.p());
  CMapMat<T> wm(w, g.c_out, g.k());
  if (g.pointwise()) {
    if (accumulate) {
      o.noalias() += wm * CMapMat<T>(x, g.k(), g.p());
    } else {
      o.noalias() = wm * CMapMat<T>(x, g.k(), g.p());
    }
    return;
  }
  if (use_shift(g)) {
    conv_shift(g, x, w, out, accumulate);
    return;
  }
  const std::size_t rows = band_rows(g);
  std::vector<T> cols(g.k() * rows * g.ow);
  for (std::size_t oy0 = 0; oy0 < g.oh; oy0 += rows) {
    const std::size_t oy1 = std::min(g.oh, oy0 + rows);
    const auto n = static_cast<Eigen::Index>((oy1 - oy0) * g.ow);
    im2col(g, x, cols.data(), oy0, oy1);
    auto block = o.middleCols(static_cast<Eigen::Index>(oy0 * g.ow), n);
    if (accumulate) {
      block.noalias() += wm * CMapMat<T>(cols.data(), g.k(), n);
    } else {
      block.noalias() = wm * CMapMat<T>(cols.data(), g.k(), n);
    }
  }
}

struct ResizeTap {
  std::size_t i0, i1;
  double l1;  // weight of i1; i0 gets 1 - l1
};

std::vector<ResizeTap> resize_taps(std::size_t in, std::size_t out) {
  std::vector<ResizeTap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t d = 0; d < out; ++d) {
    double src = (static_cast<double>(d) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    std::size_t i0 = static_cast<std::size_t>(src);
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = i0 < in - 1 ? i0 + 1 : i0;
    double l1 = src - static_cast<double>(i0);
    if (i1 == i0) l1 = 0.0;
    taps[d] = {i0, i1, l1};
  }
  return taps;
}

}  // namespace

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) {
    const T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::size_t stride,
                 std::size_t pad) {
  const ConvGeom g = conv_geometry(x, w, stride, pad);
  if (bias.numel() != g.c_out) {
    throw ConfigError("conv2d bias length " + std::to_string(bias.numel()) +
                      " does not match C_out=" + std::to_string(g.c_out));
  }
  Tensor<T> out({g.c_out, g.oh, g.ow});
  conv_core(g, x.data().data(), w.data().data(), out.data().data(), false);
  MapMat<T> o(out.data().data(), g.c_out, g.p());
  for (std::size_t c = 0; c < g.c_out; ++c) o.row(c).array() += bias[c];
  return out;
}

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0) {
    throw ConfigError("bilinear_resize target " + std::to_string(out_h) + "x" +
                      std::to_string(out_w) + " has a zero dimension");
  }
  if (x.ndim() != 3) {
    throw ConfigError("bilinear_resize input must be [C,H,W], got " + shape_str(x.shape()));
  }
  const std::size_t c_n = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h == out_h && w == out_w) return x.reshaped(x.shape());
  const auto ty = resize_taps(h, out_h);
  const auto tx = resize_taps(w, out_w);
  Tensor<T> out({c_n, out_h, out_w});
  for (std::size_t c = 0; c < c_n; ++c) {
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const ResizeTap& ry = ty[oy];
      const T wy1 = static_cast<T>(ry.l1), wy0 = T(1) - wy1;
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const ResizeTap& rx = tx[ox];
        const T wx1 = static_cast<T>(rx.l1), wx0 = T(1) - wx1;
        out.at(c, oy, ox) = wy0 * (wx0 * x.at(c, ry.i0, rx.i0) + wx1 * x.at(c, ry.i0, rx.i1)) +
                            wy1 * (wx0 * x.at(c, ry.i1, rx.i0) + wx1 * x.at(c, ry.i1, rx.i1));
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
    throw ConfigError("matmul shape mismatch: " + shape_str(a.shape()) + " x " +
                      shape_str(b.shape()));
  }
  Tensor<T> out({a.dim(0), b.dim(1)});
  MapMat<T>(out.data().data(), a.dim(0), b.dim(1)).noalias() =
      CMapMat<T>(a.data().data(), a.dim(0), a.dim(1)) *
      CMapMat<T>(b.data().data(), b.dim(0), b.dim(1));
  return out;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  if (x.ndim() != 2) throw ConfigError("softmax_rows expects [n,m], got " + shape_str(x.shape()));
  Tensor<T> out(x.shape());
  const std::size_t n = x.dim(0), m = x.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    const T* src = x.data().data() + i * m;
    T* dst = out.data().data() + i * m;
    const T mx = *std::max_element(src, src + m);
    T total = 0;
    for (std::size_t j = 0; j < m; ++j) {
      dst[j] = std::exp(src[j] - mx);
      total += dst[j];
    }
    for (std::size_t j = 0; j < m; ++j) dst[j] /= total;
  }
  return out;
}

template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
  return detail::mha_forward<T>(q, k, v, 1, nullptr);
}

template <typename T>
Tensor<T> max_pool2x2(const Tensor<T>& x) {
  if (x.ndim() != 3 || x.dim(1) % 2 || x.dim(2) % 2) {
    throw ConfigError("max_pool2x2 needs [C,H,W] with even H and W, got " + shape_str(x.shape()));
  }
  const std::size_t c_n = x.dim(0), oh = x.dim(1) / 2, ow = x.dim(2) / 2;
  Tensor<T> out({c_n, oh, ow});
  for (std::size_t c = 0; c < c_n; ++c) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        out.at(c, i, j) = std::max(std::max(x.at(c, 2 * i, 2 * j), x.at(c, 2 * i, 2 * j + 1)),
                                   std::max(x.at(c, 2 * i + 1, 2 * j), x.at(c, 2 * i + 1, 2 * j + 1)));
      }
    }
  }
  return out;
}

namespace detail {

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, std::span<const T> gout,
                     std::size_t stride, std::size_t pad, std::span<T> gx, std::span<T> gw,
                     std::span<T> gb) {
  const ConvGeom g = conv_geometry(x, w, stride, pad);
  CMapMat<T> go(gout.data(), g.c_out, g.p());
  if (!gb.empty()) {
    // Plain loop: Eigen's vectorised sum depends on buffer alignment.
    const T* gp = gout.data();
    for (std::size_t c = 0; c < g.c_out; ++c) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.p(); ++i) acc += static_cast<double>(gp[c * g.p() + i]);
      gb[c] += static_cast<T>(acc);
    }
  }
  if (g.pointwise()) {
    CMapMat<T> xm(x.data().data(), g.k(), g.p());
    if (!gw.empty()) MapMat<T>(gw.data(), g.c_out, g.k()).noalias() += go * xm.transpose();
    if (!gx.empty()) {
      MapMat<T>(gx.data(), g.k(), g.p()).noalias() +=
          CMapMat<T>(w.data().data(), g.c_out, g.k()).transpose() * go;
    }
    return;
  }
  // A stride-1 conv's input gradient is a conv of gout with the flipped,
  // transposed kernel and padding k-1-pad; that avoids the col2im scatter.
  const bool transpose_conv = !gx.empty() && g.stride == 1 && g.pad < g.kh && g.pad < g.kw;
  if (transpose_conv) {
    const ConvGeom gt{g.c_out, g.oh, g.ow, g.c_in, g.kh, g.kw, 1, g.kh - 1 - g.pad, g.h, g.w};
    if (gt.kw - 1 - g.pad == gt.pad) {
      std::vector<T> wt(w.numel());
      const std::size_t kk = g.kh * g.kw;
      for (std::size_t co = 0; co < g.c_out; ++co) {
        for (std::size_t ci = 0; ci < g.c_in; ++ci) {
          const T* src = w.data().data() + (co * g.c_in + ci) * kk;
          T* dst = wt.data() + (ci * g.c_out + co) * kk;
          for (std::size_t t = 0; t < kk; ++t) dst[t] = src[kk - 1 - t];
        }
      }
      conv_core(gt, gout.data(), wt.data(), gx.data(), true);
      gx = {};
    }
  }
  if (!gw.empty() && use_shift(g)) {
    conv_shift_weight_grad(g, x.data().data(), gout.data(), gw.data());
    gw = {};
  }
  if (gw.empty() && gx.empty()) return;
  const std::size_t rows = band_rows(g);
  std::vector<T> cols(g.k() * rows * g.ow);
  for (std::size_t oy0 = 0; oy0 < g.oh; oy0 += rows) {
    const std::size_t oy1 = std::min(g.oh, oy0 + rows);
    const auto n = static_cast<Eigen::Index>((oy1 - oy0) * g.ow);
    const auto gob = go.middleCols(static_cast<Eigen::Index>(oy0 * g.ow), n);
    MapMat<T> cm(cols.data(), static_cast<Eigen::Index>(g.k()), n);
    if (!gw.empty()) {
      im2col(g, x.data().data(), cols.data(), oy0, oy1);
      MapMat<T>(gw.data(), g.c_out, g.k()).noalias() += gob * cm.transpose();
    }
    if (!gx.empty()) {
      cm.noalias() = CMapMat<T>(w.data().data(), g.c_out, g.k()).transpose() * gob;
      col2im_add(g, cols.data(), gx.data(), oy0, oy1);
    }
  }
}

template <typename T>
void bilinear_resize_backward(const Shape& in_shape, std::size_t out_h, std::size_t out_w,
                              std::span<const T> gout, std::span<T> gin) {
  const std::size_t c_n = in_shape[0], h = in_shape[1], w = in_shape[2];
  if (h == out_h && w == out_w) {
    for (std::size_t i = 0; i < gin.size(); ++i) gin[i] += gout[i];
    return;
  }
  const auto ty = resize_taps(h, out_h);
  const auto tx = resize_taps(w, out_w);
  for (std::size_t c = 0; c < c_n; ++c) {
    T* gi = gin.data() + c * h * w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const ResizeTap& ry = ty[oy];
      const T wy1 = static_cast<T>(ry.l1), wy0 = T(1) - wy1;
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const ResizeTap& rx = tx[ox];
        const T wx1 = static_cast<T>(rx.l1), wx0 = T(1) - wx1;
        const T go = gout[(c * out_h + oy) * out_w + ox];
        gi[ry.i0 * w + rx.i0] += go * wy0 * wx0;
        gi[ry.i0 * w + rx.i1] += go * wy0 * wx1;
        gi[ry.i1 * w + rx.i0] += go * wy1 * wx0;
        gi[ry.i1 * w + rx.i1] += go * wy1 * wx1;
      }
    }
  }
}

template <typename T>
Tensor<T> mha_forward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                      std::size_t heads, std::vector<std::vector<T>>* probs) {
  if (q.ndim() != 2 || q.shape() != k.shape() || q.shape() != v.shape()) {
    throw ConfigError("attention needs equal [n,d] shapes, got Q" + shape_str(q.shape()) + " K" +
                      shape_str(k.shape()) + " V" + shape_str(v.shape()));
  }
  const std::size_t n = q.dim(0), d = q.dim(1);
  if (heads == 0 || d % heads) {
    throw ConfigError("attention width " + std::to_string(d) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  const std::size_t dh = d / heads;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
  Tensor<T> out({n, d});
  if (probs) probs->assign(heads, {});
  RowMat<T> s(n, n);
  for (std::size_t h = 0; h < heads; ++h) {
    const Eigen::OuterStride<> st(static_cast<Eigen::Index>(d));
    CStridedMap<T> qh(q.data().data() + h * dh, n, dh, st);
    CStridedMap<T> kh(k.data().data() + h * dh, n, dh, st);
    CStridedMap<T> vh(v.data().data() + h * dh, n, dh, st);
    s.noalias() = (qh * kh.transpose()) * inv_sqrt;
    for (std::size_t i = 0; i < n; ++i) {
      auto row = s.row(i);
      const T mx = row.maxCoeff();
      row = (row.array() - mx).exp();
      row /= row.sum();
    }
    StridedMap<T>(out.data().data() + h * dh, n, dh, st).noalias() = s * vh;
    if (probs) (*probs)[h].assign(s.data(), s.data() + n * n);
  }
  return out;
}

template <typename T>
void mha_backward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                  const std::vector<std::vector<T>>& probs, std::span<const T> gout,
                  std::span<T> gq, std::span<T> gk, std::span<T> gv) {
  const std::size_t n = q.dim(0), d = q.dim(1), dh = d / heads;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
  const Eigen::OuterStride<> st(static_cast<Eigen::Index>(d));
  RowMat<T> dp(n, n), ds(n, n);
  for (std::size_t h = 0; h < heads; ++h) {
    CMapMat<T> p(probs[h].data(), n, n);
    CStridedMap<T> qh(q.data().data() + h * dh, n, dh, st);
    CStridedMap<T> kh(k.data().data() + h * dh, n, dh, st);
    CStridedMap<T> vh(v.data().data() + h * dh, n, dh, st);
    CStridedMap<T> go(gout.data() + h * dh, n, dh, st);
    if (!gv.empty()) StridedMap<T>(gv.data() + h * dh, n, dh, st).noalias() += p.transpose() * go;
    if (gq.empty() && gk.empty()) continue;
    dp.noalias() = go * vh.transpose();
    for (std::size_t i = 0; i < n; ++i) {
      const T dot = dp.row(i).dot(p.row(i));
      ds.row(i) = p.row(i).array() * (dp.row(i).array() - dot);
    }
    ds *= inv_sqrt;
    if (!gq.empty()) StridedMap<T>(gq.data() + h * dh, n, dh, st).noalias() += ds * kh;
    if (!gk.empty()) {
      StridedMap<T>(gk.data() + h * dh, n, dh, st).noalias() += ds.transpose() * qh;
    }
  }
}

}  // namespace detail

#define GUIDESEG_INSTANTIATE_KERNELS(T)                                                          \
  template T sigmoid<T>(T);                                                                      \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,             \
                               std::size_t, std::size_t);                                        \
  template Tensor<T> bilinear_resize<T>(const Tensor<T>&, std::size_t, std::size_t);             \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> softmax_rows<T>(const Tensor<T>&);                                          \
  template Tensor<T> attention<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);         \
  template Tensor<T> max_pool2x2<T>(const Tensor<T>&);                                           \
  template void detail::conv2d_backward<T>(const Tensor<T>&, const Tensor<T>&,                   \
                                           std::span<const T>, std::size_t, std::size_t,         \
                                           std::span<T>, std::span<T>, std::span<T>);            \
  template void detail::bilinear_resize_backward<T>(const Shape&, std::size_t, std::size_t,      \
                                                    std::span<const T>, std::span<T>);           \
  template Tensor<T> detail::mha_forward<T>(const Tensor<T>&, const Tensor<T>&,                  \
                                            const Tensor<T>&, std::size_t,                       \
                                            std::vector<std::vector<T>>*);                       \
  template void detail::mha_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                        std::size_t, const std::vector<std::vector<T>>&,         \
                                        std::span<const T>, std::span<T>, std::span<T>,          \
                                        std::span<T>);

GUIDESEG_INSTANTIATE_KERNELS(float)
GUIDESEG_INSTANTIATE_KERNELS(double)

}  // namespace guideseg::num
