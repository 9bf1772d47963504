// Copyright 2026 The distmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include "distmerge/scoring.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace distmerge {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string num(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

}  // namespace

const char* direction_name(Direction d) { return d == Direction::kHigher ? "higher" : "lower"; }

Direction parse_direction(const std::string& s) {
  if (s == "higher" || s == "up") return Direction::kHigher;
  if (s == "lower" || s == "down") return Direction::kLower;
  throw std::invalid_argument("unknown direction '" + s + "' (expected higher or lower)");
}

void ScoreTable::set(const std::string& model, const std::string& task, double value, Direction dir) {
  if (!std::isfinite(value)) throw std::invalid_argument("score table: non-finite value for " + model + "/" + task);
  auto d = directions_.find(task);
  if (d == directions_.end()) {
    directions_.emplace(task, dir);
    tasks_.push_back(task);
  } else if (d->second != dir) {
    throw std::invalid_argument("score table: task '" + task + "' given conflicting directions");
  }
  if (!rows_.count(model)) models_.push_back(model);
  rows_[model][task] = value;
}

bool ScoreTable::has(const std::string& model, const std::string& task) const {
  auto r = rows_.find(model);
  return r != rows_.end() && r->second.count(task);
}

double ScoreTable::value(const std::string& model, const std::string& task) const {
  if (!has(model, task)) throw std::invalid_argument("score table: no value for " + model + "/" + task);
  return rows_.at(model).at(task);
}

Direction ScoreTable::direction(const std::string& task) const {
  auto d = directions_.find(task);
  if (d == directions_.end()) throw std::invalid_argument("score table: unknown task '" + task + "'");
  return d->second;
}

double ScoreTable::normalized(const std::string& model, const std::string& task) const {
  const double v = value(model, task);
  return direction(task) == Direction::kLower ? 100.0 - v : v;
}

void ScoreTable::require(const std::vector<std::string>& models, const std::vector<std::string>& tasks) const {
  for (const auto& m : models)
    for (const auto& t : tasks)
      if (!has(m, t)) throw std::invalid_argument("score table: model '" + m + "' has no value for task '" + t + "'");
}

ScoreTable ScoreTable::parse_csv(const std::string& text) {
  ScoreTable table;
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(ss, line)) {
    ++lineno;
    if (trim(line).empty() || trim(line)[0] == '#') continue;
    const auto f = split_csv_line(line);
    if (!header) {
      if (f != std::vector<std::string>{"model", "task", "value", "direction"}) {
        throw std::invalid_argument("score csv: expected header 'model,task,value,direction', got '" + line + "'");
      }
      header = true;
      continue;
    }
    if (f.size() != 4) {
      throw std::invalid_argument("score csv line " + std::to_string(lineno) + ": expected 4 fields");
    }
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(f[2].data(), f[2].data() + f[2].size(), v);
    if (ec != std::errc() || ptr != f[2].data() + f[2].size()) {
      throw std::invalid_argument("score csv line " + std::to_string(lineno) + ": bad value '" + f[2] + "'");
    }
    table.set(f[0], f[1], v, parse_direction(f[3]));
  }
  if (!header) throw std::invalid_argument("score csv: empty input");
  return table;
}

ScoreTable ScoreTable::read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open score table " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str());
}

std::string ScoreTable::to_csv() const {
  std::ostringstream os;
  os << "model,task,value,direction\n";
  for (const auto& m : models_)
    for (const auto& t : tasks_)
      if (has(m, t)) os << m << ',' << t << ',' << num(value(m, t)) << ',' << direction_name(direction(t)) << '\n';
  return os.str();
}

std::map<std::string, double> best_reference(const ScoreTable& table, const std::vector<std::string>& references,
                                             const std::vector<std::string>& tasks) {
  if (references.empty()) throw std::invalid_argument("best_reference: no reference models");
  table.require(references, tasks);
  std::map<std::string, double> best;
  for (const auto& t : tasks) {
    double b = -INFINITY;
    for (const auto& r : references) b = std::max(b, table.normalized(r, t));
    best[t] = b;
  }
  return best;
}

double superb_score(const ScoreTable& table, const std::string& model, const std::vector<std::string>& tasks,
                    const std::map<std::string, double>& best, const std::map<std::string, double>& baselines) {
  if (tasks.empty()) throw std::invalid_argument("superb_score: empty task set");
  double sum = 0.0;
  for (const auto& t : tasks) {
    auto bi = best.find(t);
    if (bi == best.end()) throw std::invalid_argument("superb_score: no reference value for task '" + t + "'");
    auto bl = baselines.find(t);
    const double base = bl == baselines.end() ? 0.0 : bl->second;
    if (!(bi->second > base)) {
      throw std::invalid_argument("superb_score: degenerate denominator for task '" + t + "' (best " +
                                  num(bi->second) + " <= baseline " + num(base) + ")");
    }
    sum += (table.normalized(model, t) - base) / (bi->second - base);
  }
  return 1000.0 / static_cast<double>(tasks.size()) * sum;
}

std::vector<double> fractional_ranks(const std::vector<double>& values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && values[idx[j + 1]] == values[idx[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

std::map<std::string, double> rank_average(const ScoreTable& table, const std::vector<std::string>& models,
                                           const std::vector<std::string>& tasks) {
  if (models.size() < 2) throw std::invalid_argument("rank_average: need at least two models");
  if (tasks.empty()) throw std::invalid_argument("rank_average: empty task set");
  table.require(models, tasks);
  std::map<std::string, double> avg;
  for (const auto& t : tasks) {
    std::vector<double> neg;
    for (const auto& m : models) neg.push_back(-table.normalized(m, t));
    const auto r = dense_ranks(neg);
    for (std::size_t i = 0; i < models.size(); ++i) avg[models[i]] += r[i];
  }
  for (auto& [_, v] : avg) v /= static_cast<double>(tasks.size());
  return avg;
}

std::vector<double> dense_ranks(const std::vector<double>& values) {
  std::vector<double> distinct = values;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  std::vector<double> r;
  r.reserve(values.size());
  for (double v : values)
    r.push_back(static_cast<double>(std::lower_bound(distinct.begin(), distinct.end(), v) - distinct.begin() + 1));
  return r;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("spearman: need two equal samples of size >= 2");
  const auto rx = fractional_ranks(x), ry = fractional_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace distmerge
