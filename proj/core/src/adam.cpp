// Copyright 2026 The distmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include "distmerge/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace distmerge {

namespace {

void require_same_keys(const TensorMap& a, const TensorMap& b, const char* what) {
  if (a.size() != b.size()) {
    throw std::invalid_argument(std::string("adam_step: ") + what + " key count differs");
  }
  for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib) {
    if (ia->first != ib->first) {
      throw std::invalid_argument(std::string("adam_step: ") + what + " key mismatch at '" + ia->first +
                                  "' vs '" + ib->first + "'");
    }
    if (ia->second.shape() != ib->second.shape()) {
      throw ShapeError("adam_step: shape mismatch for '" + ia->first + "': " +
                       shape_str(ia->second.shape()) + " vs " + shape_str(ib->second.shape()));
    }
  }
}

}  // namespace

void adam_step(TensorMap& params, const TensorMap& grads, AdamState& state, const AdamConfig& cfg) {
  require_same_keys(params, grads, "params/grads");
  if (state.t == 0 && state.m.empty()) {
    for (const auto& [name, p] : params) {
      state.m.emplace(name, Tensor::zeros(p.shape()));
      state.v.emplace(name, Tensor::zeros(p.shape()));
    }
  }
  require_same_keys(params, state.m, "params/state");
  require_same_keys(params, state.v, "params/state");

  ++state.t;
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  auto g_it = grads.begin();
  auto m_it = state.m.begin();
  auto v_it = state.v.begin();
  for (auto& [name, p] : params) {
    const Tensor& g = g_it->second;
    Tensor& m = m_it->second;
    Tensor& v = v_it->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      const double mi = b1 * m[i] + (1.0 - b1) * gi;
      const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double step = cfg.lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.eps);
      p[i] = static_cast<float>(p[i] - step);
    }
    ++g_it;
    ++m_it;
    ++v_it;
  }
}

double clip_grad_norm(TensorMap& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [_, g] : grads)
    for (float x : g.data()) sq += static_cast<double>(x) * x;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const auto s = static_cast<float>(max_norm / norm);
    for (auto& [_, g] : grads)
      for (float& x : g.data()) x *= s;
  }
  return norm;
}

}  // namespace distmerge
