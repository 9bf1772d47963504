// Copyright 2026 The distmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include "distmerge/autodiff.hpp"

#include <stdexcept>
#include <unordered_set>

namespace distmerge {

namespace {
thread_local bool t_grad_enabled = true;
}

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kGelu: return "gelu";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLayerNorm: return "layer_norm";
    case OpKind::kMeanAxis: return "mean_axis";
    case OpKind::kSumAll: return "sum";
    case OpKind::kMeanAll: return "mean";
    case OpKind::kL1Mean: return "l1_mean";
    case OpKind::kCosine: return "cosine_similarity";
    case OpKind::kLogSigmoid: return "log_sigmoid";
    case OpKind::kEmbedding: return "embedding";
    case OpKind::kConv1d: return "conv1d";
    case OpKind::kReshape: return "reshape";
    case OpKind::kSplitHeads: return "split_heads";
    case OpKind::kMergeHeads: return "merge_heads";
    case OpKind::kCrossEntropy: return "cross_entropy";
  }
  return "?";
}

void Node::accumulate(const Tensor& g) {
  if (grad.empty() && !value.empty()) {
    grad = g;
    return;
  }
  if (grad.shape() != g.shape()) {
    throw ShapeError(std::string("backward: gradient shape ") + shape_str(g.shape()) +
                     " does not match value shape " + shape_str(value.shape()));
  }
  float* dst = grad.ptr();
  const float* src = g.ptr();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += src[i];
}

Tensor Var::grad() const {
  if (node_->grad.empty()) return Tensor::zeros(node_->value.shape());
  return node_->grad;
}

Var parameter(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return Var(std::move(n));
}

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Var(std::move(n));
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() { return t_grad_enabled; }

Var make_result(Tensor value, OpKind op, std::vector<Var> inputs,
                std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = op;
  if (t_grad_enabled) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
      n->requires_grad = true;
      n->parents.reserve(inputs.size());
      for (auto& in : inputs) n->parents.push_back(in.ptr());
      n->backward_fn = std::move(backward_fn);
    }
  }
  return Var(std::move(n));
}

BackwardStats backward(const Var& root) {
  if (!root) throw std::invalid_argument("backward: null root");
  if (root.value().size() != 1) {
    throw ShapeError("backward: root must be scalar, got shape " + shape_str(root.shape()));
  }
  BackwardStats stats;
  if (!root.requires_grad()) return stats;

  // Iterative post-order DFS; parents visited in input order so the
  // resulting order (and gradient accumulation order) is deterministic.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(&root.node(), 0);
  seen.insert(&root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    stats.value_bytes += n->value.size() * sizeof(float);
  }
  stats.nodes = order.size();

  root.node().accumulate(Tensor::full(root.shape(), 1.0f));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  return stats;
}

}  // namespace distmerge
