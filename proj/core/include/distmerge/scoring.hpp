// Copyright 2026 The distmerge Authors
// SPDX-License-Identifier: Apache-2.0

// Aggregate rankings over per-model, per-task scores.
//
// Lower-better metrics (e.g. error rates in percent) are normalized to
// 100 - x before any comparison, so every normalized score is higher-better.

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace distmerge {

enum class Direction { kHigher, kLower };

const char* direction_name(Direction d);  // "higher", "lower"
Direction parse_direction(const std::string& s);

class ScoreTable {
 public:
  /// Adds or replaces a value. A task's direction is fixed by its first entry.
  void set(const std::string& model, const std::string& task, double value, Direction dir);

  double value(const std::string& model, const std::string& task) const;
  double normalized(const std::string& model, const std::string& task) const;
  Direction direction(const std::string& task) const;
  bool has(const std::string& model, const std::string& task) const;

  /// Models and tasks in first-seen order.
  const std::vector<std::string>& models() const { return models_; }
  const std::vector<std::string>& tasks() const { return tasks_; }

  /// Throws std::invalid_argument naming the first model lacking one of `tasks`.
  void require(const std::vector<std::string>& models, const std::vector<std::string>& tasks) const;

  /// Header `model,task,value,direction`; direction is higher|lower.
  static ScoreTable parse_csv(const std::string& text);
  static ScoreTable read_csv(const std::filesystem::path& path);
  std::string to_csv() const;

 private:
  std::vector<std::string> models_, tasks_;
  std::map<std::string, std::map<std::string, double>> rows_;
  std::map<std::string, Direction> directions_;
};

/// Per task, the best normalized score among `references`.
std::map<std::string, double> best_reference(const ScoreTable& table, const std::vector<std::string>& references,
                                             const std::vector<std::string>& tasks);

/// 1000 / |T| * sum_t (s_t - b_t) / (best_t - b_t) over normalized scores.
/// Baselines default to 0; throws std::invalid_argument when best_t <= b_t.
double superb_score(const ScoreTable& table, const std::string& model, const std::vector<std::string>& tasks,
                    const std::map<std::string, double>& best, const std::map<std::string, double>& baselines = {});

/// Per-task dense ranks by normalized score (1 = best; tied models share a
/// rank and the next score takes the following rank), averaged over `tasks`.
std::map<std::string, double> rank_average(const ScoreTable& table, const std::vector<std::string>& models,
                                           const std::vector<std::string>& tasks);

/// Spearman correlation of two equally long samples (fractional ranks).
double spearman(const std::vector<double>& x, const std::vector<double>& y);

/// Fractional ranks in ascending order of value (1-based).
std::vector<double> fractional_ranks(const std::vector<double>& values);

/// Dense ranks in ascending order of value (1-based): equal values share a
/// rank, and ranks have no gaps.
std::vector<double> dense_ranks(const std::vector<double>& values);

}  // namespace distmerge
