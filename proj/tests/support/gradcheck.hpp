// Copyright 2026 The distmerge Authors
// SPDX-License-Identifier: Apache-2.0

// Central finite-difference checks for every differentiable op.
//
// Each case maps inputs to an op output y; the scalar checked is
// sum_i r_i * y_i with fixed random weights r, accumulated in double.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "distmerge/autodiff.hpp"
#include "distmerge/ops.hpp"

namespace distmerge::testing {

struct GradCase {
  std::string name;
  OpKind op;
  std::function<std::vector<Tensor>(std::mt19937_64&)> inputs;
  std::function<Var(const std::vector<Var>&)> fn;
};

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, float lo = -1.0f, float hi = 1.0f) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<float> u(lo, hi);
  for (float& v : t.data()) v = u(rng);
  return t;
}

inline std::vector<GradCase> grad_cases() {
  using In = std::vector<Tensor>;
  using V = std::vector<Var>;
  return {
      {"matmul", OpKind::kMatmul, [](auto& g) { return In{random_tensor({2, 3, 4}, g), random_tensor({4, 5}, g)}; },
       [](const V& v) { return matmul(v[0], v[1]); }},
      {"matmul_batched", OpKind::kMatmul,
       [](auto& g) { return In{random_tensor({2, 3, 4}, g), random_tensor({2, 4, 3}, g)}; },
       [](const V& v) { return matmul(v[0], v[1]); }},
      {"add_broadcast", OpKind::kAdd, [](auto& g) { return In{random_tensor({2, 3, 4}, g), random_tensor({4}, g)}; },
       [](const V& v) { return add(v[0], v[1]); }},
      {"sub_broadcast", OpKind::kSub,
       [](auto& g) { return In{random_tensor({2, 3, 4}, g), random_tensor({3, 4}, g)}; },
       [](const V& v) { return sub(v[0], v[1]); }},
      {"mul", OpKind::kMul, [](auto& g) { return In{random_tensor({3, 4}, g), random_tensor({3, 4}, g)}; },
       [](const V& v) { return mul(v[0], v[1]); }},
      {"scale", OpKind::kScale, [](auto& g) { return In{random_tensor({3, 4}, g)}; },
       [](const V& v) { return scale(v[0], -1.7f); }},
      {"transpose_last2", OpKind::kTranspose, [](auto& g) { return In{random_tensor({2, 3, 4}, g)}; },
       [](const V& v) { return transpose_last2(v[0]); }},
      {"gelu", OpKind::kGelu, [](auto& g) { return In{random_tensor({3, 5}, g, -3.0f, 3.0f)}; },
       [](const V& v) { return gelu(v[0]); }},
      {"softmax_last", OpKind::kSoftmax, [](auto& g) { return In{random_tensor({2, 3, 5}, g, -2.0f, 2.0f)}; },
       [](const V& v) { return softmax_last(v[0]); }},
      {"layer_norm_last", OpKind::kLayerNorm,
       [](auto& g) {
         return In{random_tensor({2, 3, 6}, g, -2.0f, 2.0f), random_tensor({6}, g, 0.5f, 1.5f), random_tensor({6}, g)};
       },
       [](const V& v) { return layer_norm_last(v[0], v[1], v[2]); }},
      {"mean_axis", OpKind::kMeanAxis, [](auto& g) { return In{random_tensor({2, 3, 4}, g)}; },
       [](const V& v) { return mean_axis(v[0], 1); }},
      {"sum_all", OpKind::kSumAll, [](auto& g) { return In{random_tensor({3, 4}, g)}; },
       [](const V& v) { return sum_all(v[0]); }},
      {"mean_all", OpKind::kMeanAll, [](auto& g) { return In{random_tensor({3, 4}, g)}; },
       [](const V& v) { return mean_all(v[0]); }},
      {"l1_mean", OpKind::kL1Mean,
       [](auto& g) {
         // Differences kept away from the kink at zero.
         Tensor a = random_tensor({3, 4}, g), b(a.shape());
         std::uniform_real_distribution<float> off(0.2f, 1.0f);
         std::bernoulli_distribution sign(0.5);
         for (std::size_t i = 0; i < a.size(); ++i) b[i] = a[i] + (sign(g) ? off(g) : -off(g));
         return In{a, b};
       },
       [](const V& v) { return l1_mean(v[0], v[1]); }},
      {"cosine_similarity_last", OpKind::kCosine,
       [](auto& g) { return In{random_tensor({2, 3, 5}, g), random_tensor({2, 3, 5}, g)}; },
       [](const V& v) { return cosine_similarity_last(v[0], v[1]); }},
      {"log_sigmoid", OpKind::kLogSigmoid, [](auto& g) { return In{random_tensor({3, 4}, g, -4.0f, 4.0f)}; },
       [](const V& v) { return log_sigmoid(v[0]); }},
      {"embedding", OpKind::kEmbedding, [](auto& g) { return In{random_tensor({5, 3}, g)}; },
       [](const V& v) { return embedding(v[0], {4, 0, 4, 2}); }},
      {"conv1d", OpKind::kConv1d, [](auto& g) { return In{random_tensor({2, 11, 3}, g), random_tensor({4, 3, 2}, g)}; },
       [](const V& v) { return conv1d(v[0], v[1], 2); }},
      {"reshape", OpKind::kReshape, [](auto& g) { return In{random_tensor({2, 6}, g)}; },
       [](const V& v) { return reshape(v[0], {3, 4}); }},
      {"split_heads", OpKind::kSplitHeads, [](auto& g) { return In{random_tensor({2, 3, 4}, g)}; },
       [](const V& v) { return split_heads(v[0], 2); }},
      {"merge_heads", OpKind::kMergeHeads, [](auto& g) { return In{random_tensor({2, 2, 3, 2}, g)}; },
       [](const V& v) { return merge_heads(v[0]); }},
      {"cross_entropy", OpKind::kCrossEntropy, [](auto& g) { return In{random_tensor({4, 5}, g, -2.0f, 2.0f)}; },
       [](const V& v) { return cross_entropy(v[0], {0, 4, 2, 2}); }},
  };
}

/// Largest over inputs of |g_analytic - g_numeric|_2 / max(|g_analytic|_2, |g_numeric|_2, 1e-6).
inline double grad_check(const GradCase& c, std::uint64_t seed, double h = 1e-2) {
  std::mt19937_64 rng(seed);
  std::vector<Tensor> inputs = c.inputs(rng);
  Tensor weights;
  {
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(constant(t));
    weights = random_tensor(c.fn(vars).shape(), rng);
  }
  auto objective = [&](const std::vector<Tensor>& xs) {
    NoGradGuard guard;
    std::vector<Var> vars;
    for (const auto& t : xs) vars.push_back(constant(t));
    const Tensor y = c.fn(vars).value();
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += static_cast<double>(y[i]) * weights[i];
    return s;
  };

  std::vector<Var> params;
  for (const auto& t : inputs) params.push_back(parameter(t));
  Var y = c.fn(params);
  backward(sum_all(mul(y, constant(weights))));

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor analytic = params[k].grad();
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      std::vector<Tensor> plus = inputs, minus = inputs;
      plus[k][i] += static_cast<float>(h);
      minus[k][i] -= static_cast<float>(h);
      const double step = static_cast<double>(plus[k][i]) - static_cast<double>(minus[k][i]);
      const double numeric = (objective(plus) - objective(minus)) / step;
      diff += (analytic[i] - numeric) * (analytic[i] - numeric);
      na += static_cast<double>(analytic[i]) * analytic[i];
      nn += numeric * numeric;
    }
    worst = std::max(worst, std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-6}));
  }
  return worst;
}

}  // namespace distmerge::testing
