// Copyright 2026 The distmerge Authors
// SPDX-License-Identifier: Apache-2.0

// End-to-end experiment: two domain teachers, single-teacher and ensemble
// distillations from a shared trunk, task vectors, task-arithmetic and
// teacher-average merges, linear probes on every model, and the interpolation
// sweep. Every artifact lands flat in one output directory.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "distmerge/distill.hpp"
#include "distmerge/merge.hpp"
#include "distmerge/probe.hpp"
#include "distmerge/scoring.hpp"

namespace distmerge {

struct PipelineConfig {
  ModelConfig model;
  TeacherBudget teacher;
  std::uint64_t teacher_seed = 1;  // speech teacher; the music teacher uses teacher_seed + 1
  std::size_t distill_steps = 2000;
  std::size_t distill_batch = 16;
  float distill_lr = 5e-4f;
  float loss_lambda = 1.0f;
  std::uint64_t distill_seed = 7;
  std::vector<MixtureComponent> data = {{Domain::kSpeech, 1.0}};
  ProbeConfig probe;
  std::vector<std::uint64_t> probe_seeds = {0, 1, 2};
  std::pair<double, double> lambda = {0.9, 0.1};
  std::vector<std::pair<double, double>> grid = default_grid();
  bool ensemble = true;
  bool sweep = true;

  std::map<std::string, std::string> to_kv() const;
  /// Unknown keys throw std::invalid_argument. Model keys carry a "model." prefix.
  static PipelineConfig from_kv(const std::map<std::string, std::string>& kv);
};

struct TeacherPair {
  TeacherResult speech;
  TeacherResult music;
};

struct PipelineResult {
  TeacherPair teachers;
  std::vector<DistillRunRecord> records;  // distil-speech, distil-music[, ensemble]
  ParameterSet theta0;
  TaskVector tv_speech, tv_music;
  ParameterSet task_arithmetic;  // theta0 + lambda1 tv_speech + lambda2 tv_music
  ParameterSet teacher_average;
  /// model -> task -> accuracy per probe seed.
  std::map<std::string, std::map<std::string, std::vector<double>>> accuracy;
  std::vector<SweepPoint> sweep;
  std::vector<SweepPoint> endpoints;  // lambda (1,0) and (0,1)
  ResourceReport resources;
  CompatReport students_compat, teachers_compat;

  double mean_accuracy(const std::string& model, const std::string& task) const;
  /// Mean probe accuracy in percent, every model and task, higher-better.
  ScoreTable score_table() const;
};

using PipelineLog = std::function<void(const std::string&)>;

/// Trains both teachers. Throws TrainingError when either misses the floor.
TeacherPair train_teachers(const PipelineConfig& pc, const PipelineLog& log = {});

/// Runs every stage after teacher training. Writes into `out` when non-empty.
PipelineResult run_pipeline(const PipelineConfig& pc, const TeacherPair& teachers, const std::filesystem::path& out,
                            const PipelineLog& log = {});

/// File names written by run_pipeline, relative to its output directory.
std::vector<std::string> pipeline_artifacts(const PipelineConfig& pc);

/// Model labels in report order.
std::vector<std::string> pipeline_models(const PipelineConfig& pc);

}  // namespace distmerge
