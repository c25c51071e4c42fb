// Copyright (c) 2026, The guideseg Authors
// SPDX-License-Identifier: Apache-2.0
//
// Strict JSON object reader for configuration documents: every key must be
// known and well typed, otherwise ConfigError names the offending path.

#pragma once

#include <set>
#include <string>
#include <utility>

#include <nlohmann/json.hpp>

#include "guideseg/errors.hpp"

namespace guideseg {

class JsonReader {
 public:
  JsonReader(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + " must be a JSON object");
  }

  /// Leaves `out` unchanged when the key is absent.
  template <typename V>
  void get(const char* key, V& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      out = j_.at(key).get<V>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  const nlohmann::json* child(const char* key) {
    if (!j_.contains(key)) return nullptr;
    seen_.insert(key);
    return &j_.at(key);
  }

  /// Throws ConfigError on the first key that no getter consumed.
  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) {
        throw ConfigError("unknown config key " + where_ + "." + item.key());
      }
    }
  }

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace guideseg
