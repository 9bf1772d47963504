// Copyright 2026 The distmerge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "distmerge/autodiff.hpp"
#include "distmerge/checkpoint.hpp"
#include "distmerge/model.hpp"
#include "distmerge/synth.hpp"

namespace distmerge {

/// A run could not establish its preconditions (sanity floor missed,
/// non-finite loss, incompatible teacher/student dimensions).
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TeacherBudget {
  std::size_t max_steps = 1200;
  std::size_t min_steps = 0;
  std::size_t batch = 16;
  float lr = 1e-3f;
  std::size_t warmup_steps = 100;
  bool cosine_decay = true;  // lr follows a half cosine from warmup end to zero at max_steps
  double clip_norm = 1.0;
  std::size_t eval_every = 100;
  std::size_t dev_examples = 400;
  double floor = 0.95;  // dev accuracy every task of the domain must reach
  std::function<void(std::size_t step, const std::map<std::string, double>& dev_accuracy)> on_eval;
};

struct TeacherResult {
  ParameterSet teacher;  // classification heads stripped
  std::map<std::string, double> dev_accuracy;
  std::size_t steps = 0;
  double seconds = 0.0;
};

/// Multiplier on budget.lr at a 0-based step: linear warmup, then optional cosine decay.
double teacher_lr_factor(const TeacherBudget& b, std::size_t step);

/// Supervised training on the domain's tasks through temporary
/// cls_heads.<task> classifiers on the mean-pooled last layer. Stops at the
/// first evaluation (after min_steps) where every task clears the floor;
/// throws TrainingError if max_steps pass without that.
TeacherResult train_teacher(const ModelConfig& cfg, Domain domain, const TeacherBudget& budget, std::uint64_t seed);

struct TeacherRef {
  ParameterSet params;
  std::string label;  // "speech", "music", ...
};

struct DistillRecipe {
  std::vector<TeacherRef> teachers;  // 1 = single-teacher, 2 = ensemble
  ModelConfig student_cfg;
  std::vector<MixtureComponent> data = {{Domain::kSpeech, 1.0}};
  std::size_t steps = 2000;
  std::size_t batch = 16;
  float lr = 5e-4f;
  float loss_lambda = 1.0f;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
  /// Source of the copied trunk. Defaults to the first teacher.
  std::optional<ParameterSet> init_from;
  std::size_t log_every = 100;
};

struct DistillRunRecord {
  std::string method;
  ParameterSet student;
  ParameterSet init;  // theta_0
  std::vector<double> loss_curve;  // mean loss per log_every steps; the last window may be shorter
  double seconds = 0.0;
  double seconds_per_step = 0.0;
  std::size_t peak_bytes = 0;  // params + grads + Adam moments + largest graph + teacher states
  std::size_t param_count = 0;
  std::size_t steps = 0;
  std::size_t teacher_count = 0;
};

/// Per head i: mean L1 distance to teacher_states[head_targets[i]] minus
/// loss_lambda * mean over frames of log sigmoid(cosine similarity); summed
/// over heads. head_outputs[i] and the targets are [B, frames, d].
Var distill_loss(const std::vector<Var>& head_outputs, const std::vector<Tensor>& teacher_states,
                 const std::vector<std::size_t>& head_targets, float loss_lambda);

/// Theta_0 for a recipe: trunk copied from init_from (or the first teacher),
/// heads seeded from recipe.seed, one head set per teacher.
ParameterSet distill_init(const DistillRecipe& recipe);

DistillRunRecord distill(const DistillRecipe& recipe);

struct ResourceRow {
  std::string method;
  double seconds = 0.0;
  double seconds_per_step = 0.0;
  std::size_t peak_bytes = 0;
  std::optional<std::size_t> params;  // nullopt prints as a dash
};

struct ResourceReport {
  std::vector<ResourceRow> rows;
  std::string to_text() const;
  std::string to_csv() const;
};

/// One row per record (sorted stably by method), a case-1 row summing the
/// single-teacher distillations when there are at least two, and the
/// merge-only case-2 row with zero training time.
ResourceReport resource_report(const std::vector<DistillRunRecord>& records);

}  // namespace distmerge
