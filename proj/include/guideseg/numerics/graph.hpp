// Copyright (c) 2026, The guideseg Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation over an explicitly recorded operation tape.
//
// A Graph owns every intermediate value of one forward pass. Operations
// append a node holding their output and, when any input needs a gradient,
// a closure that pushes the node's output gradient back into its inputs.
// Parameter leaves reference model tensors without copying them; after
// backward() the leaf gradients are accumulated into Tensor::grad() of the
// trainable parameters. Frozen parameters are never written.

#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "guideseg/errors.hpp"
#include "guideseg/numerics/tensor.hpp"

namespace guideseg::num {

template <typename T>
class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Graph<T>* graph, std::size_t id) : graph_(graph), id_(id) {}

  const Tensor<T>& value() const { return graph_->value(*this); }
  const Shape& shape() const { return value().shape(); }
  std::size_t numel() const { return value().numel(); }
  bool requires_grad() const { return graph_->requires_grad(*this); }
  std::size_t id() const noexcept { return id_; }
  Graph<T>& graph() const noexcept { return *graph_; }
  bool valid() const noexcept { return graph_ != nullptr; }

 private:
  Graph<T>* graph_ = nullptr;
  std::size_t id_ = 0;
};

template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(std::span<const T> out_grad)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// A leaf that never receives a gradient.
  Var<T> constant(Tensor<T> value) {
    Node& n = nodes_.emplace_back();
    n.owned = std::move(value);
    return Var<T>(this, nodes_.size() - 1);
  }

  /// A leaf bound to a model parameter. The tensor must outlive the graph
  /// and stay unmodified until backward() returns.
  Var<T> param(Tensor<T>& p) {
    Node& n = nodes_.emplace_back();
    n.external = &p;
    n.requires_grad = p.trainable();
    if (n.requires_grad) n.sink = &p;
    return Var<T>(this, nodes_.size() - 1);
  }

  /// A leaf whose gradient is kept on the tape but not forwarded anywhere.
  Var<T> variable(Tensor<T> value) {
    Node& n = nodes_.emplace_back();
    n.owned = std::move(value);
    n.requires_grad = true;
    return Var<T>(this, nodes_.size() - 1);
  }

  /// Appends an operation result. `fn` is kept only if some parent needs a
  /// gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> parents, BackwardFn fn) {
    return record(std::move(value), std::span<const Var<T>>(parents.begin(), parents.size()),
                  std::move(fn));
  }
  Var<T> record(Tensor<T> value, std::span<const Var<T>> parents, BackwardFn fn) {
    bool needs = false;
    for (const Var<T>& p : parents) {
      if (&p.graph() != this) throw ConfigError("operation mixes variables of different graphs");
      needs = needs || nodes_[p.id()].requires_grad;
    }
    Node& n = nodes_.emplace_back();
    n.owned = std::move(value);
    n.requires_grad = needs;
    if (needs) n.backward = std::move(fn);
    return Var<T>(this, nodes_.size() - 1);
  }

  const Tensor<T>& value(const Var<T>& v) const {
    const Node& n = nodes_.at(v.id());
    return n.external ? *n.external : n.owned;
  }
  bool requires_grad(const Var<T>& v) const { return nodes_.at(v.id()).requires_grad; }

  /// Gradient accumulator of `v`, zero-initialised on first use. Only valid
  /// for variables that require a gradient.
  std::span<T> grad_of(const Var<T>& v) {
    Node& n = nodes_.at(v.id());
    if (n.grad.empty()) n.grad.assign(value(v).numel(), T(0));
    return n.grad;
  }

  /// Gradient of the last backward() root w.r.t. `v`; empty if none flowed.
  std::span<const T> grad(const Var<T>& v) const { return nodes_.at(v.id()).grad; }

  /// Seeds d(root)/d(root) = 1 and runs the tape in reverse. `root` must be
  /// a single-element tensor.
  void backward(const Var<T>& root) {
    if (value(root).numel() != 1) {
      throw ConfigError("backward root must be a scalar, got shape " +
                        shape_str(value(root).shape()));
    }
    if (!nodes_[root.id()].requires_grad) return;
    grad_of(root)[0] += T(1);
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty()) continue;
      if (n.backward) n.backward(n.grad);
      if (n.sink) {
        std::span<T> dst = n.sink->grad();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += n.grad[k];
      }
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    Tensor<T>* sink = nullptr;
    std::vector<T> grad;
    BackwardFn backward;
    bool requires_grad = false;
  };

  // deque keeps references to earlier nodes stable while appending.
  std::deque<Node> nodes_;
};

}  // namespace guideseg::num
