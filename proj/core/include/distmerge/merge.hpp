// Copyright 2026 The distmerge Authors
// SPDX-License-Identifier: Apache-2.0

// Task vectors and merge strategies over ParameterSets.
//
// All merges accumulate each element in double, in term order, and round
// once to float. A merged set never carries prediction heads unless
// include_heads is set.

#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "distmerge/checkpoint.hpp"

namespace distmerge {

class MergeError : public std::runtime_error {
 public:
  enum class Kind { kKeyMismatch, kShapeMismatch, kDivergentInit, kInvalidSpec };
  MergeError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// theta_ft - theta_0 per key. theta_ft.meta.init_digest must equal
/// init_digest(theta_0) and both must have identical keys and shapes.
TaskVector task_vector(const ParameterSet& theta_ft, const ParameterSet& theta_0, const std::string& source,
                       bool include_heads = false);

enum class MergeMode { kLinear, kTies };
enum class TrimScope { kGlobal, kPerTensor };

const char* mode_name(MergeMode m);
MergeMode parse_mode(const std::string& s);

struct MergeTerm {
  TaskVector tv;
  double lambda = 1.0;
};

struct MergeSpec {
  ParameterSet base;  // theta_0, heads included; its digest is what terms must carry
  std::vector<MergeTerm> terms;
  MergeMode mode = MergeMode::kLinear;
  double ties_density = 0.2;
  TrimScope trim = TrimScope::kGlobal;
  bool include_heads = false;
};

/// Throws MergeError on digest, key or shape violations; returns warnings
/// (currently: lambdas not summing to 1).
std::vector<std::string> validate_spec(const MergeSpec& spec);

/// theta_0 + sum_i lambda_i tv_i. Terms with lambda 0 are skipped, so an
/// all-zero lambda vector returns theta_0 bit-exactly.
ParameterSet merge_linear(const MergeSpec& spec);

/// Trim each tv to its top ties_density fraction by magnitude (ties broken by
/// lower flattened index, keys in lexicographic order), elect the sign of the
/// per-coordinate sum, average the values agreeing with it, scale by the mean
/// lambda and add to theta_0. Coordinates with no elected mass keep theta_0.
ParameterSet merge_ties(const MergeSpec& spec);

ParameterSet merge(const MergeSpec& spec);

/// Element-wise mean. Models with differing or absent init digests (e.g.
/// independently trained teachers) are refused unless allow_digest_mismatch.
/// The result is its own initialization: meta.init_digest = digest(result).
ParameterSet merge_average(const std::vector<ParameterSet>& models, bool allow_digest_mismatch = false);

struct CompatReport {
  std::vector<std::string> missing_in_a;
  std::vector<std::string> missing_in_b;
  std::vector<std::string> shape_conflicts;
  std::string digest_relation;  // "identical", "shared-init", "different-init", "unknown-init"
  double trunk_cosine = 0.0;    // over shared, shape-equal, non-head parameters
  std::size_t compared_params = 0;
  double max_abs_diff = 0.0;  // over the same parameters as trunk_cosine

  bool compatible() const { return missing_in_a.empty() && missing_in_b.empty() && shape_conflicts.empty(); }
  std::string to_text() const;
};

CompatReport compat_check(const ParameterSet& a, const ParameterSet& b);

}  // namespace distmerge
