// Copyright 2026 The distmerge Authors
// SPDX-License-Identifier: Apache-2.0

// Linear probes on frozen, mean-pooled last-layer features, and the
// interpolation-weight sweep built on them.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "distmerge/checkpoint.hpp"
#include "distmerge/merge.hpp"
#include "distmerge/model.hpp"
#include "distmerge/synth.hpp"

namespace distmerge {

struct ProbeConfig {
  float lr = 1e-3f;
  std::size_t batch = 64;
  std::size_t epochs = 20;
  std::size_t n_train = 2000;
  std::size_t n_test = 1000;
  std::uint64_t data_seed = 20260;
  bool standardize = true;  // z-score features with train-split statistics
};

struct ProbeResult {
  std::string task;
  double accuracy = 0.0;  // on the test split, in [0, 1]
  Tensor weight;          // [d, classes], applied to standardized features
  Tensor bias;            // [classes]
  std::uint64_t seed = 0;
};

/// Softmax-regression probe trained with Adam on fixed features.
/// train_x [n, d], test_x [m, d].
ProbeResult fit_linear_probe(const Tensor& train_x, const std::vector<std::size_t>& train_y, const Tensor& test_x,
                             const std::vector<std::size_t>& test_y, std::size_t classes, const ProbeConfig& pc,
                             std::uint64_t seed);

/// Probe datasets and pooled features, generated once and reused across
/// models and seeds.
class ProbeSuite {
 public:
  explicit ProbeSuite(ProbeConfig pc = {});

  const ProbeConfig& config() const { return pc_; }

  /// Throws std::invalid_argument for unknown tasks.
  ProbeResult probe(const ParameterSet& model, const ModelConfig& cfg, const std::string& task, std::uint64_t seed);

  /// Accuracy per task, features extracted once per domain.
  std::map<std::string, double> evaluate(const ParameterSet& model, const ModelConfig& cfg,
                                         const std::vector<std::string>& tasks, std::uint64_t seed);
  /// Accuracy per task for each seed, in seed order.
  std::map<std::string, std::vector<double>> evaluate(const ParameterSet& model, const ModelConfig& cfg,
                                                      const std::vector<std::string>& tasks,
                                                      const std::vector<std::uint64_t>& seeds);

 private:
  struct Split {
    Tensor signals;
    std::map<std::string, std::vector<std::size_t>> labels;
  };
  struct DomainData {
    Split train, test;
  };
  const DomainData& data(Domain d);
  std::pair<Tensor, Tensor> features(const ParameterSet& model, const ModelConfig& cfg, Domain d);

  ProbeConfig pc_;
  std::map<Domain, DomainData> data_;
};

struct SweepPoint {
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  std::map<std::string, double> accuracy;  // per task, mean over seeds
};

/// Parses "0.1:0.9,0.3:0.7".
std::vector<std::pair<double, double>> parse_grid(const std::string& s);
std::string grid_str(const std::vector<std::pair<double, double>>& grid);
const std::vector<std::pair<double, double>>& default_grid();

/// One linear merge of theta_0 + l1 tv_s + l2 tv_m per grid point, probed on
/// every task for every seed.
std::vector<SweepPoint> sweep(const ParameterSet& theta0, const TaskVector& tv_s, const TaskVector& tv_m,
                              const ModelConfig& cfg, const std::vector<std::pair<double, double>>& grid,
                              const std::vector<std::string>& tasks, const std::vector<std::uint64_t>& seeds,
                              ProbeSuite& suite);

/// Columnar csv: lambda1,lambda2,<task>... one row per point.
std::string sweep_csv(const std::vector<SweepPoint>& points, const std::vector<std::string>& tasks);

}  // namespace distmerge
