// Copyright 2026 The distmerge Authors
// SPDX-License-Identifier: Apache-2.0

// Differentiable ops. Elementwise binaries broadcast when one operand's shape
// is a suffix of the other's (bias [d] onto [B,T,d], positions [T,d] onto
// [B,T,d]). Reductions accumulate sequentially in index order in double.

#pragma once

#include <cstddef>
#include <vector>

#include "distmerge/autodiff.hpp"

namespace distmerge {

/// a [..., m, k] @ b [k, n] or b [..., k, n] with matching leading dims.
Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, float s);
Var transpose_last2(const Var& a);
/// Exact (erf) GELU.
Var gelu(const Var& a);
Var softmax_last(const Var& a);
Var layer_norm_last(const Var& x, const Var& gain, const Var& bias, float eps = 1e-5f);
Var mean_axis(const Var& a, std::size_t axis);
Var sum_all(const Var& a);
Var mean_all(const Var& a);
/// mean(|a - b|) over every element.
Var l1_mean(const Var& a, const Var& b);
/// Cosine similarity over the last dim, a.b / (|a||b| + eps). Output drops the last dim.
Var cosine_similarity_last(const Var& a, const Var& b, float eps = 1e-8f);
/// log(sigmoid(x)) = -log(1 + exp(-x)), computed stably.
Var log_sigmoid(const Var& a);
/// Rows of table [V, d] selected by ids -> [ids.size(), d].
Var embedding(const Var& table, const std::vector<std::size_t>& ids);
/// x [B, L, Cin], w [K, Cin, Cout] -> [B, (L-K)/stride + 1, Cout]. No padding, no bias.
Var conv1d(const Var& x, const Var& w, std::size_t stride);
Var reshape(const Var& a, Shape shape);
/// [B, T, H*dh] -> [B, H, T, dh]
Var split_heads(const Var& a, std::size_t heads);
/// [B, H, T, dh] -> [B, T, H*dh]
Var merge_heads(const Var& a);
/// Mean negative log-likelihood of softmax(logits [N, C]) at labels.
Var cross_entropy(const Var& logits, const std::vector<std::size_t>& labels);

}  // namespace distmerge
