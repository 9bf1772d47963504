// Copyright 2026 The distmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include "distmerge/probe.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "distmerge/adam.hpp"
#include "distmerge/ops.hpp"

namespace distmerge {

namespace {

std::string num(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

// Column mean and std of x [n, d] (std floored to 1 when degenerate).
std::pair<std::vector<double>, std::vector<double>> column_stats(const Tensor& x) {
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<double> mean(d, 0.0), sd(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += x[i * d + j];
  for (auto& m : mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double c = x[i * d + j] - mean[j];
      sd[j] += c * c;
    }
  for (auto& s : sd) {
    s = std::sqrt(s / static_cast<double>(n));
    if (!(s > 1e-12)) s = 1.0;
  }
  return {mean, sd};
}

Tensor standardized(const Tensor& x, const std::vector<double>& mean, const std::vector<double>& sd) {
  const std::size_t n = x.dim(0), d = x.dim(1);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = static_cast<float>((x[i * d + j] - mean[j]) / sd[j]);
  return out;
}

Tensor rows(const Tensor& x, const std::vector<std::size_t>& idx, std::size_t begin, std::size_t end) {
  const std::size_t d = x.dim(1);
  Tensor out({end - begin, d});
  for (std::size_t r = begin; r < end; ++r) std::copy_n(x.ptr() + idx[r] * d, d, out.ptr() + (r - begin) * d);
  return out;
}

}  // namespace

ProbeResult fit_linear_probe(const Tensor& train_x, const std::vector<std::size_t>& train_y, const Tensor& test_x,
                             const std::vector<std::size_t>& test_y, std::size_t classes, const ProbeConfig& pc,
                             std::uint64_t seed) {
  if (train_x.rank() != 2 || test_x.rank() != 2 || train_x.dim(1) != test_x.dim(1)) {
    throw ShapeError("probe: feature shapes " + shape_str(train_x.shape()) + " vs " + shape_str(test_x.shape()));
  }
  if (train_x.dim(0) != train_y.size() || test_x.dim(0) != test_y.size() || train_y.empty() || test_y.empty()) {
    throw ShapeError("probe: feature rows do not match label counts");
  }
  if (pc.batch == 0 || pc.epochs == 0) throw std::invalid_argument("probe: batch and epochs must be positive");
  const std::size_t n = train_x.dim(0), d = train_x.dim(1);

  Tensor xtr = train_x, xte = test_x;
  if (pc.standardize) {
    const auto [mean, sd] = column_stats(train_x);
    xtr = standardized(train_x, mean, sd);
    xte = standardized(test_x, mean, sd);
  }

  std::mt19937_64 rng(seed);
  TensorMap params;
  {
    const float bound = 1.0f / std::sqrt(static_cast<float>(d));
    std::uniform_real_distribution<float> init(-bound, bound);
    Tensor w({d, classes});
    for (float& v : w.data()) v = init(rng);
    params["weight"] = std::move(w);
    params["bias"] = Tensor::zeros({classes});
  }
  AdamState state;
  AdamConfig opt;
  opt.lr = pc.lr;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < pc.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t begin = 0; begin < n; begin += pc.batch) {
      const std::size_t end = std::min(n, begin + pc.batch);
      std::vector<std::size_t> y;
      for (std::size_t r = begin; r < end; ++r) y.push_back(train_y[order[r]]);
      Var w = parameter(params.at("weight"));
      Var b = parameter(params.at("bias"));
      Var loss = cross_entropy(add(matmul(constant(rows(xtr, order, begin, end)), w), b), y);
      backward(loss);
      adam_step(params, {{"weight", w.grad()}, {"bias", b.grad()}}, state, opt);
    }
  }

  const Tensor& w = params.at("weight");
  const Tensor& b = params.at("bias");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test_y.size(); ++i) {
    std::size_t best = 0;
    double best_v = -INFINITY;
    for (std::size_t k = 0; k < classes; ++k) {
      double v = b[k];
      for (std::size_t j = 0; j < d; ++j) v += static_cast<double>(xte[i * d + j]) * w[j * classes + k];
      if (v > best_v) {
        best_v = v;
        best = k;
      }
    }
    correct += best == test_y[i];
  }
  ProbeResult r;
  r.accuracy = static_cast<double>(correct) / static_cast<double>(test_y.size());
  r.weight = w;
  r.bias = b;
  r.seed = seed;
  return r;
}

ProbeSuite::ProbeSuite(ProbeConfig pc) : pc_(pc) {}

const ProbeSuite::DomainData& ProbeSuite::data(Domain d) {
  auto it = data_.find(d);
  if (it != data_.end()) return it->second;
  auto fill = [&](distmerge::Split split, std::size_t n) {
    Split s;
    const auto ex = generate(d, split, n, pc_.data_seed);
    s.signals = stack_signals(ex);
    for (const auto& e : ex)
      for (const auto& [task, label] : e.labels) s.labels[task].push_back(label);
    return s;
  };
  DomainData dd{fill(distmerge::Split::kTrain, pc_.n_train), fill(distmerge::Split::kTest, pc_.n_test)};
  return data_.emplace(d, std::move(dd)).first->second;
}

std::pair<Tensor, Tensor> ProbeSuite::features(const ParameterSet& model, const ModelConfig& cfg, Domain d) {
  const DomainData& dd = data(d);
  return {pooled_last_layer(model, cfg, dd.train.signals), pooled_last_layer(model, cfg, dd.test.signals)};
}

ProbeResult ProbeSuite::probe(const ParameterSet& model, const ModelConfig& cfg, const std::string& task,
                              std::uint64_t seed) {
  const TaskInfo& info = task_info(task);
  const auto [tr, te] = features(model, cfg, info.domain);
  const DomainData& dd = data(info.domain);
  ProbeResult r = fit_linear_probe(tr, dd.train.labels.at(task), te, dd.test.labels.at(task), info.classes, pc_, seed);
  r.task = task;
  return r;
}

std::map<std::string, double> ProbeSuite::evaluate(const ParameterSet& model, const ModelConfig& cfg,
                                                   const std::vector<std::string>& tasks, std::uint64_t seed) {
  std::map<std::string, double> acc;
  for (const auto& [task, v] : evaluate(model, cfg, tasks, std::vector<std::uint64_t>{seed})) acc[task] = v.front();
  return acc;
}

std::map<std::string, std::vector<double>> ProbeSuite::evaluate(const ParameterSet& model, const ModelConfig& cfg,
                                                                const std::vector<std::string>& tasks,
                                                                const std::vector<std::uint64_t>& seeds) {
  std::map<Domain, std::pair<Tensor, Tensor>> feats;
  std::map<std::string, std::vector<double>> acc;
  for (const auto& task : tasks) {
    const TaskInfo& info = task_info(task);
    auto it = feats.find(info.domain);
    if (it == feats.end()) it = feats.emplace(info.domain, features(model, cfg, info.domain)).first;
    const DomainData& dd = data(info.domain);
    for (auto seed : seeds) {
      acc[task].push_back(fit_linear_probe(it->second.first, dd.train.labels.at(task), it->second.second,
                                           dd.test.labels.at(task), info.classes, pc_, seed)
                              .accuracy);
    }
  }
  return acc;
}

std::vector<std::pair<double, double>> parse_grid(const std::string& s) {
  std::vector<std::pair<double, double>> grid;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw std::invalid_argument("grid: expected 'a:b' pairs, got '" + item + "'");
    try {
      std::size_t p1 = 0, p2 = 0;
      const std::string a = item.substr(0, colon), b = item.substr(colon + 1);
      const double l1 = std::stod(a, &p1), l2 = std::stod(b, &p2);
      if (p1 != a.size() || p2 != b.size()) throw std::invalid_argument("trailing characters");
      grid.emplace_back(l1, l2);
    } catch (const std::exception&) {
      throw std::invalid_argument("grid: cannot parse '" + item + "'");
    }
  }
  if (grid.empty()) throw std::invalid_argument("grid: empty");
  return grid;
}

std::string grid_str(const std::vector<std::pair<double, double>>& grid) {
  std::string out;
  for (std::size_t i = 0; i < grid.size(); ++i) out += (i ? "," : "") + num(grid[i].first) + ":" + num(grid[i].second);
  return out;
}

const std::vector<std::pair<double, double>>& default_grid() {
  static const std::vector<std::pair<double, double>> g = {{0.1, 0.9}, {0.3, 0.7}, {0.5, 0.5}, {0.7, 0.3}, {0.9, 0.1}};
  return g;
}

std::vector<SweepPoint> sweep(const ParameterSet& theta0, const TaskVector& tv_s, const TaskVector& tv_m,
                              const ModelConfig& cfg, const std::vector<std::pair<double, double>>& grid,
                              const std::vector<std::string>& tasks, const std::vector<std::uint64_t>& seeds,
                              ProbeSuite& suite) {
  if (seeds.empty()) throw std::invalid_argument("sweep: need at least one probe seed");
  std::vector<SweepPoint> out;
  for (const auto& [l1, l2] : grid) {
    MergeSpec spec;
    spec.base = theta0;
    spec.terms = {{tv_s, l1}, {tv_m, l2}};
    const ParameterSet merged = merge_linear(spec);
    SweepPoint p{l1, l2, {}};
    for (const auto& [task, accs] : suite.evaluate(merged, cfg, tasks, seeds)) {
      p.accuracy[task] = std::accumulate(accs.begin(), accs.end(), 0.0) / static_cast<double>(accs.size());
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::string sweep_csv(const std::vector<SweepPoint>& points, const std::vector<std::string>& tasks) {
  std::ostringstream os;
  os << "lambda1,lambda2";
  for (const auto& t : tasks) os << ',' << t;
  os << '\n';
  for (const auto& p : points) {
    os << num(p.lambda1) << ',' << num(p.lambda2);
    for (const auto& t : tasks) os << ',' << num(p.accuracy.at(t));
    os << '\n';
  }
  return os.str();
}

}  // namespace distmerge
