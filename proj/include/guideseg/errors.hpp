// Copyright (c) 2026, The guideseg Authors
// SPDX-License-Identifier: Apache-2.0
//
// Error categories shared by every module. The CLI maps each category to a
// distinct exit code.

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace guideseg {

/// Invalid shapes, sizes or hyper-parameters supplied by the caller.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Bad user-supplied data (mismatched masks, incompatible datasets).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed on-disk container. `offset` is the byte position where parsing
/// stopped.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Non-finite values during evaluation, training divergence, failed checks.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A non-finite function value met while probing parameter `param_index`.
class EvalError : public NumericalError {
 public:
  EvalError(const std::string& what, std::size_t param_index)
      : NumericalError(what + " (parameter " + std::to_string(param_index) + ")"),
        param_index_(param_index) {}
  std::size_t param_index() const noexcept { return param_index_; }

 private:
  std::size_t param_index_;
};

/// A violated internal contract (e.g. a guide value outside (0,1)).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace guideseg
