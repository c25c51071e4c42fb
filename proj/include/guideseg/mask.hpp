// Copyright (c) 2026, The guideseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "guideseg/errors.hpp"

namespace guideseg {

/// Row-major binary mask with entries in {0,1}.
struct Mask {
  std::size_t h = 0, w = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(std::size_t h_, std::size_t w_, std::uint8_t fill = 0) : h(h_), w(w_), data(h_ * w_, fill) {}

  std::size_t size() const { return data.size(); }
  std::uint8_t& at(std::size_t i, std::size_t j) { return data[i * w + j]; }
  std::uint8_t at(std::size_t i, std::size_t j) const { return data[i * w + j]; }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto v : data) n += v;
    return n;
  }
  bool operator==(const Mask&) const = default;
};

inline void require_same_shape(const Mask& a, const Mask& b, const char* what) {
  if (a.h != b.h || a.w != b.w) {
    throw InputError(std::string(what) + ": mask shapes " + std::to_string(a.h) + "x" +
                     std::to_string(a.w) + " and " + std::to_string(b.h) + "x" +
                     std::to_string(b.w) + " differ");
  }
}

}  // namespace guideseg
