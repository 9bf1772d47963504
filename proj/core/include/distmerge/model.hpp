// Copyright 2026 The distmerge Authors
// SPDX-License-Identifier: Apache-2.0

// Convolution-frontend transformer encoders used as teachers and students.
//
// Parameter naming (stable; merge key matching depends on it). Linear layers
// compute y = x W + b with W stored [in, out]; conv kernels are [K, Cin, Cout].
//
//   frontend.conv0.weight            [K0, 1, d]
//   frontend.conv0.bias              [d]
//   frontend.conv1.weight            [K1, d, d]
//   frontend.conv1.bias              [d]
//   pos_embed.weight                 [max_positions, d]
//   encoder.layer.<i>.ln1.{weight,bias}             [d]
//   encoder.layer.<i>.attn.{q,k,v,o}.weight         [d, d]
//   encoder.layer.<i>.attn.{q,k,v,o}.bias           [d]
//   encoder.layer.<i>.ln2.{weight,bias}             [d]
//   encoder.layer.<i>.ffn.fc1.{weight,bias}         [d, f], [f]     f = ffn_mult * d
//   encoder.layer.<i>.ffn.fc2.{weight,bias}         [f, d], [d]
//   heads.<j>.{weight,bias}          [d, d], [d]    student prediction heads
//   cls_heads.<task>.{weight,bias}   [d, C], [C]    temporary teacher classifiers
//
// Layer <i> is 0-based in names; hidden state k (1-based) is the output of
// encoder.layer.<k-1>, and hidden state 0 is the frontend output (after the
// positional embeddings are added).

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "distmerge/autodiff.hpp"
#include "distmerge/checkpoint.hpp"

namespace distmerge {

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t ffn_mult = 4;
  std::size_t teacher_layers = 6;
  std::size_t student_layers = 2;
  std::size_t conv0_kernel = 10;
  std::size_t conv0_stride = 5;
  std::size_t conv1_kernel = 8;
  std::size_t conv1_stride = 4;
  std::size_t max_positions = 256;
  std::vector<std::size_t> head_targets = {2, 4, 6};

  /// Throws std::invalid_argument naming the violated constraint.
  void validate() const;
  std::size_t frames_for(std::size_t samples) const;
  std::size_t receptive_field() const;
  /// Hex digest of the dimensions; identical for teacher and student roles.
  std::string arch_id() const;
  std::map<std::string, std::string> to_kv() const;
  static ModelConfig from_kv(const std::map<std::string, std::string>& kv);
};

enum class Role { kTeacher, kStudent };

std::string layer_prefix(std::size_t index);
std::string head_prefix(std::size_t index);
bool is_head_name(const std::string& name);

/// Closed-form parameter counts.
std::size_t frontend_param_count(const ModelConfig& cfg);
std::size_t layer_param_count(const ModelConfig& cfg);
std::size_t head_param_count(const ModelConfig& cfg);
std::size_t trunk_param_count(const ModelConfig& cfg, std::size_t layers);

/// Deterministic init: linear/conv weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
/// layer-norm gains 1, biases 0, positional embeddings N(0, 0.02).
/// Teachers get teacher_layers layers and no heads; students get
/// student_layers layers and one head per head target.
ParameterSet build_model(const ModelConfig& cfg, Role role, std::uint64_t seed);

/// Adds `count` freshly seeded prediction heads named heads.<first>... .
void add_prediction_heads(ParameterSet& ps, const ModelConfig& cfg, std::size_t first, std::size_t count,
                          std::uint64_t seed);

/// Number of encoder.layer.<i> blocks present.
std::size_t layer_count(const ParameterSet& ps);
std::size_t head_count(const ParameterSet& ps);

/// Differentiable forward. `params` maps names to graph leaves; `signals` is
/// [B, samples]. Returns layers+1 states, each [B, frames, d].
std::vector<Var> forward_graph(const std::map<std::string, Var>& params, const ModelConfig& cfg,
                               const Tensor& signals, std::size_t layers);

/// Inference forward for a batch [B, samples]; no graph is recorded.
std::vector<Tensor> forward_batch(const ParameterSet& ps, const ModelConfig& cfg, const Tensor& signals);

/// Per-example hidden states, each [frames, d].
using HiddenStates = std::vector<Tensor>;
HiddenStates forward(const ParameterSet& ps, const ModelConfig& cfg, const Tensor& signal);

/// Student theta_0: frontend, positions and the first student_layers layers
/// copied bit-exactly from the teacher, plus freshly seeded heads.
/// meta.init_digest is the digest of the result.
ParameterSet init_student_from_teacher(const ParameterSet& teacher, const ModelConfig& cfg,
                                       std::uint64_t head_seed, std::size_t n_head_sets = 1);

/// Mean over frames of the last hidden state for signals [n, samples] -> [n, d],
/// computed in chunks without recording a graph.
Tensor pooled_last_layer(const ParameterSet& ps, const ModelConfig& cfg, const Tensor& signals,
                         std::size_t chunk = 32);

/// Leaves requiring gradients for every entry (or constants when trainable is false).
std::map<std::string, Var> as_vars(const ParameterSet& ps, bool trainable);

}  // namespace distmerge
