// Copyright (c) 2026, The guideseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "guideseg/data/synth.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>

#include "guideseg/numerics/random.hpp"

namespace guideseg::data {
namespace {

constexpr std::array<char, 4> kMagic{'G', 'D', 'S', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 4 + 4 * 4;
constexpr int kShapeAttempts = 16;

// Keeps only the largest 4-connected foreground component.
Mask largest_component(const Mask& m) {
  std::vector<int> label(m.size(), -1);
  std::vector<std::size_t> sizes, stack;
  for (std::size_t s = 0; s < m.size(); ++s) {
    if (!m.data[s] || label[s] >= 0) continue;
    const int id = static_cast<int>(sizes.size());
    std::size_t count = 0;
    stack.push_back(s);
    label[s] = id;
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      ++count;
      const std::size_t i = p / m.w, j = p % m.w;
      auto visit = [&](std::size_t q) {
        if (m.data[q] && label[q] < 0) {
          label[q] = id;
          stack.push_back(q);
        }
      };
      if (i > 0) visit(p - m.w);
      if (i + 1 < m.h) visit(p + m.w);
      if (j > 0) visit(p - 1);
      if (j + 1 < m.w) visit(p + 1);
    }
    sizes.push_back(count);
  }
  Mask out(m.h, m.w);
  if (sizes.empty()) return out;
  const int best = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  for (std::size_t p = 0; p < m.size(); ++p) out.data[p] = label[p] == best ? 1 : 0;
  return out;
}

// One attempt at a radially perturbed ellipse of the given target area.
Mask draw_shape(const SynthConfig& cfg, num::Rng& rng, double target_frac) {
  const std::size_t n = cfg.size;
  const double sz = static_cast<double>(n);
  const double cx = rng.uniform(0.3, 0.7) * sz, cy = rng.uniform(0.3, 0.7) * sz;
  const double aspect = rng.uniform(0.6, 1.0);
  const double theta = rng.uniform(0.0, std::numbers::pi);
  std::vector<double> amp(cfg.blob_complexity), phase(cfg.blob_complexity);
  for (std::size_t k = 0; k < cfg.blob_complexity; ++k) {
    amp[k] = rng.uniform(0.0, 0.3 / static_cast<double>(cfg.blob_complexity));
    phase[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  // Normalised radius q = d / rho(phi); the region is {q <= R}.
  std::vector<double> q(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double dx = static_cast<double>(j) + 0.5 - cx;
      const double dy = static_cast<double>(i) + 0.5 - cy;
      const double phi = std::atan2(dy, dx);
      const double c = std::cos(phi - theta), s = std::sin(phi - theta) / aspect;
      double rho = 1.0 / std::sqrt(c * c + s * s);
      double wobble = 1.0;
      for (std::size_t k = 0; k < amp.size(); ++k) {
        wobble += amp[k] * std::cos(static_cast<double>(k + 2) * phi + phase[k]);
      }
      rho *= wobble;
      q[i * n + j] = std::hypot(dx, dy) / rho;
    }
  }
  const auto target = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(target_frac * static_cast<double>(n * n))), 1, n * n);
  std::vector<double> sorted = q;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(target - 1),
                   sorted.end());
  const double radius = sorted[target - 1];
  Mask m(n, n);
  for (std::size_t p = 0; p < q.size(); ++p) m.data[p] = q[p] <= radius ? 1 : 0;
  return largest_component(m);
}

Mask disk(std::size_t n, double frac) {
  const double c = static_cast<double>(n) / 2.0;
  const double r = std::sqrt(frac * static_cast<double>(n * n) / std::numbers::pi);
  Mask m(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double dx = static_cast<double>(j) + 0.5 - c, dy = static_cast<double>(i) + 0.5 - c;
      m.at(i, j) = dx * dx + dy * dy <= r * r ? 1 : 0;
    }
  }
  return m;
}

struct Wave {
  double fx, fy, amp, phase;
};

std::vector<Wave> draw_texture(Texture kind, num::Rng& rng) {
  const bool shifted = kind == Texture::kShifted;
  const std::size_t count = shifted ? 6 : 4;
  const double fmin = shifted ? 3.0 : 1.0, fmax = shifted ? 8.0 : 3.0;
  const double amin = shifted ? 0.03 : 0.02, amax = shifted ? 0.06 : 0.05;
  std::vector<Wave> waves(count);
  for (Wave& w : waves) {
    w.fx = rng.uniform(fmin, fmax) * (rng.coin() ? 1.0 : -1.0);
    w.fy = rng.uniform(fmin, fmax) * (rng.coin() ? 1.0 : -1.0);
    w.amp = rng.uniform(amin, amax);
    w.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  return waves;
}

// 3x3 binomial blur with replicated borders.
std::vector<double> soften(const Mask& m) {
  const std::size_t h = m.h, w = m.w;
  std::vector<double> tmp(m.size()), out(m.size());
  const double k[3] = {0.25, 0.5, 0.25};
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      double acc = 0;
      for (int d = -1; d <= 1; ++d) {
        const std::size_t jj = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(j) + d, 0,
                                                          static_cast<std::ptrdiff_t>(w) - 1);
        acc += k[d + 1] * m.at(i, jj);
      }
      tmp[i * w + j] = acc;
    }
  }
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      double acc = 0;
      for (int d = -1; d <= 1; ++d) {
        const std::size_t ii = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(i) + d, 0,
                                                          static_cast<std::ptrdiff_t>(h) - 1);
        acc += k[d + 1] * tmp[ii * w + j];
      }
      out[i * w + j] = acc;
    }
  }
  return out;
}

void put_u32(std::vector<char>& buf, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) buf.push_back(static_cast<char>((v >> (8 * b)) & 0xFFu));
}

std::uint32_t get_u32(const std::vector<char>& buf, std::size_t off) {
  std::uint32_t v = 0;
  for (int b = 0; b < 4; ++b) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off + b])) << (8 * b);
  }
  return v;
}

}  // namespace

std::string to_string(Texture t) { return t == Texture::kStandard ? "standard" : "shifted"; }

Texture texture_from_string(const std::string& s) {
  if (s == "standard") return Texture::kStandard;
  if (s == "shifted") return Texture::kShifted;
  throw ConfigError("unknown texture '" + s + "' (expected standard or shifted)");
}

std::vector<std::string> sanitize(SynthConfig& cfg) {
  std::vector<std::string> notes;
  auto clamp_field = [&notes](double& v, double lo, double hi, const char* name) {
    const double c = std::isfinite(v) ? std::clamp(v, lo, hi) : lo;
    if (c != v) {
      notes.push_back(std::string(name) + " " + std::to_string(v) + " clamped to " +
                      std::to_string(c));
      v = c;
    }
  };
  clamp_field(cfg.contrast, 0.0, 1.0, "contrast");
  clamp_field(cfg.noise_sigma, 0.0, 1.0, "noise_sigma");
  clamp_field(cfg.area_min, 0.01, 0.9, "area_min");
  clamp_field(cfg.area_max, cfg.area_min, 0.9, "area_max");
  if (cfg.size < 8) {
    notes.push_back("size " + std::to_string(cfg.size) + " raised to 8");
    cfg.size = 8;
  }
  return notes;
}

SegSample generate_sample(std::uint64_t seed, const SynthConfig& config) {
  SynthConfig cfg = config;
  sanitize(cfg);
  const std::size_t n = cfg.size;
  const double lo = cfg.area_min, hi = cfg.area_max;
  const double slack = 0.1 * (hi - lo);

  num::Rng shape_rng(num::derive_seed(seed, "shape"));
  Mask mask;
  for (int attempt = 0; attempt < kShapeAttempts && mask.size() == 0; ++attempt) {
    const double target = shape_rng.uniform(lo + slack, hi - slack);
    Mask m = draw_shape(cfg, shape_rng, target);
    const double frac = static_cast<double>(m.count()) / static_cast<double>(n * n);
    if (frac >= lo && frac <= hi) mask = std::move(m);
  }
  if (mask.size() == 0) mask = disk(n, 0.5 * (lo + hi));

  num::Rng tex_rng(num::derive_seed(seed, "texture"));
  const auto waves = draw_texture(cfg.texture, tex_rng);
  const double base = cfg.texture == Texture::kShifted ? 0.45 : 0.35;
  const auto soft = soften(mask);
  num::Rng noise_rng(num::derive_seed(seed, "noise"));

  SegSample s;
  s.image = num::Tensor<float>({1, n, n});
  const double two_pi_over_n = 2.0 * std::numbers::pi / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double v = base;
      for (const Wave& w : waves) {
        v += w.amp * std::sin(two_pi_over_n * (w.fx * static_cast<double>(j) +
                                               w.fy * static_cast<double>(i)) + w.phase);
      }
      v += cfg.contrast * soft[i * n + j];
      v += cfg.noise_sigma * noise_rng.normal();
      s.image[i * n + j] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  s.mask = std::move(mask);
  s.sample_id = seed;
  return s;
}

std::vector<SegSample> generate_dataset(const SynthConfig& cfg) {
  std::vector<SegSample> out;
  out.reserve(cfg.n_samples);
  for (std::size_t i = 0; i < cfg.n_samples; ++i) {
    SegSample s = generate_sample(num::mix64(cfg.seed * 0x9E3779B97F4A7C15ULL + i + 1), cfg);
    s.sample_id = i;
    out.push_back(std::move(s));
  }
  return out;
}

std::size_t gds1_size(std::size_t n, std::size_t h, std::size_t w) {
  return kHeaderBytes + n * h * w * (sizeof(float) + 1);
}

void write_dataset(const std::vector<SegSample>& samples, const std::filesystem::path& path) {
  if (samples.empty()) throw ConfigError("cannot write an empty dataset");
  const std::size_t h = samples[0].mask.h, w = samples[0].mask.w;
  for (const SegSample& s : samples) {
    if (s.mask.h != h || s.mask.w != w || s.image.shape() != num::Shape{1, h, w}) {
      throw ConfigError("dataset samples must all be [1," + std::to_string(h) + "," +
                        std::to_string(w) + "]");
    }
  }
  std::vector<char> buf;
  buf.reserve(gds1_size(samples.size(), h, w));
  buf.insert(buf.end(), kMagic.begin(), kMagic.end());
  put_u32(buf, kVersion);
  put_u32(buf, static_cast<std::uint32_t>(samples.size()));
  put_u32(buf, static_cast<std::uint32_t>(h));
  put_u32(buf, static_cast<std::uint32_t>(w));
  for (const SegSample& s : samples) {
    for (float v : s.image.data()) put_u32(buf, std::bit_cast<std::uint32_t>(v));
    for (std::uint8_t v : s.mask.data) buf.push_back(static_cast<char>(v));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot open '" + path.string() + "' for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw InputError("failed writing '" + path.string() + "'");
}

std::vector<SegSample> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open dataset '" + path.string() + "'");
  const std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 4 || !std::equal(kMagic.begin(), kMagic.end(), buf.begin())) {
    throw FormatError("'" + path.string() + "' is not a GDS1 dataset (bad magic)", 0);
  }
  if (buf.size() < kHeaderBytes) throw FormatError("truncated GDS1 header", buf.size());
  const std::uint32_t version = get_u32(buf, 4);
  if (version != kVersion) {
    throw FormatError("unsupported GDS1 version " + std::to_string(version), 4);
  }
  const std::size_t n = get_u32(buf, 8), h = get_u32(buf, 12), w = get_u32(buf, 16);
  if (n == 0) throw FormatError("GDS1 dataset holds no samples", 8);
  if (h == 0 || w == 0) throw FormatError("GDS1 sample size has a zero dimension", 12);
  const std::size_t expect = gds1_size(n, h, w);
  if (buf.size() < expect) throw FormatError("truncated GDS1 payload", buf.size());
  if (buf.size() > expect) throw FormatError("trailing bytes after GDS1 payload", expect);

  std::vector<SegSample> samples(n);
  std::size_t off = kHeaderBytes;
  for (std::size_t k = 0; k < n; ++k) {
    SegSample& s = samples[k];
    s.sample_id = k;
    s.image = num::Tensor<float>({1, h, w});
    for (float& v : s.image.data()) {
      v = std::bit_cast<float>(get_u32(buf, off));
      off += 4;
    }
    s.mask = Mask(h, w);
    for (std::uint8_t& v : s.mask.data) {
      const auto b = static_cast<unsigned char>(buf[off]);
      if (b > 1) throw FormatError("mask byte " + std::to_string(b) + " is not 0 or 1", off);
      v = b;
      ++off;
    }
  }
  return samples;
}

std::size_t count_components(const Mask& m) {
  std::vector<char> seen(m.size(), 0);
  std::vector<std::size_t> stack;
  std::size_t count = 0;
  for (std::size_t s = 0; s < m.size(); ++s) {
    if (!m.data[s] || seen[s]) continue;
    ++count;
    seen[s] = 1;
    stack.push_back(s);
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      const std::size_t i = p / m.w, j = p % m.w;
      auto visit = [&](std::size_t q) {
        if (m.data[q] && !seen[q]) {
          seen[q] = 1;
          stack.push_back(q);
        }
      };
      if (i > 0) visit(p - m.w);
      if (i + 1 < m.h) visit(p + m.w);
      if (j > 0) visit(p - 1);
      if (j + 1 < m.w) visit(p + 1);
    }
  }
  return count;
}

}  // namespace guideseg::data
