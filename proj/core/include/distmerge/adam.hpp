// Copyright 2026 The distmerge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "distmerge/tensor.hpp"

namespace distmerge {

using TensorMap = std::map<std::string, Tensor>;

struct AdamConfig {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

struct AdamState {
  TensorMap m;
  TensorMap v;
  std::int64_t t = 0;
};

/// One bias-corrected Adam update in place. State entries are created on the
/// first step; afterwards params, grads and state must share one key set.
void adam_step(TensorMap& params, const TensorMap& grads, AdamState& state, const AdamConfig& cfg);

/// Scales grads so their global L2 norm is at most max_norm. Returns the norm before clipping.
double clip_grad_norm(TensorMap& grads, double max_norm);

}  // namespace distmerge
