// Copyright 2026 The distmerge Authors
// SPDX-License-Identifier: Apache-2.0

// Eager reverse-mode autodiff. Every op computes its value immediately and,
// when gradient recording is on and some input requires a gradient, keeps
// links to its inputs plus a backward rule. backward() walks the recorded
// graph in reverse topological order.

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "distmerge/tensor.hpp"

namespace distmerge {

enum class OpKind {
  kLeaf,
  kMatmul,
  kAdd,
  kSub,
  kMul,
  kScale,
  kTranspose,
  kGelu,
  kSoftmax,
  kLayerNorm,
  kMeanAxis,
  kSumAll,
  kMeanAll,
  kL1Mean,
  kCosine,
  kLogSigmoid,
  kEmbedding,
  kConv1d,
  kReshape,
  kSplitHeads,
  kMergeHeads,
  kCrossEntropy,
};

const char* op_name(OpKind op);

struct Node {
  Tensor value;
  Tensor grad;  // empty until something flows into it
  bool requires_grad = false;
  OpKind op = OpKind::kLeaf;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad and accumulates into parents.
  std::function<void(Node&)> backward_fn;

  void accumulate(const Tensor& g);
};

/// Handle to a graph node. Cheap to copy; shares the node.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  /// Gradient after backward(); zeros of value shape when nothing reached it.
  Tensor grad() const;
  Node& node() const { return *node_; }
  const std::shared_ptr<Node>& ptr() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

Var parameter(Tensor value);  // leaf, requires grad
Var constant(Tensor value);   // leaf, no grad

/// Scoped switch that stops graph recording on the current thread.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

struct BackwardStats {
  std::size_t nodes = 0;
  std::size_t value_bytes = 0;  // activations held by the graph at backward time
};

/// Populates gradients of every node reachable from a scalar root.
BackwardStats backward(const Var& root);

// Internal helper for op implementations.
Var make_result(Tensor value, OpKind op, std::vector<Var> inputs,
                std::function<void(Node&)> backward_fn);

}  // namespace distmerge
