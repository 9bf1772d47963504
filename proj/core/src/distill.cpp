// Copyright 2026 The distmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include "distmerge/distill.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

#include "distmerge/adam.hpp"
#include "distmerge/ops.hpp"

namespace distmerge {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string cls_prefix(const std::string& task) { return "cls_heads." + task + "."; }

TensorMap collect_grads(const std::map<std::string, Var>& vars) {
  TensorMap grads;
  for (const auto& [name, v] : vars) grads.emplace(name, v.grad());
  return grads;
}

std::size_t tensor_bytes(const TensorMap& m) {
  std::size_t n = 0;
  for (const auto& [_, t] : m) n += t.size() * sizeof(float);
  return n;
}

std::string fmt(double v, int precision = 6) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

// Argmax accuracy of logits = features W + b against labels.
double accuracy(const Tensor& features, const Tensor& w, const Tensor& b, const std::vector<std::size_t>& labels) {
  const std::size_t n = features.dim(0), d = features.dim(1), c = w.dim(1);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    double best_v = -1e300;
    for (std::size_t k = 0; k < c; ++k) {
      double v = b[k];
      for (std::size_t j = 0; j < d; ++j) v += static_cast<double>(features[i * d + j]) * w[j * c + k];
      if (v > best_v) {
        best_v = v;
        best = k;
      }
    }
    correct += best == labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace

double teacher_lr_factor(const TeacherBudget& b, std::size_t step) {
  const double warm =
      std::min(1.0, static_cast<double>(step + 1) / static_cast<double>(std::max<std::size_t>(1, b.warmup_steps)));
  if (!b.cosine_decay || step < b.warmup_steps || b.max_steps <= b.warmup_steps) return warm;
  const double progress =
      static_cast<double>(step - b.warmup_steps) / static_cast<double>(b.max_steps - b.warmup_steps);
  return 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

TeacherResult train_teacher(const ModelConfig& cfg, Domain domain, const TeacherBudget& budget, std::uint64_t seed) {
  const auto tasks = domain_tasks(domain);
  if (tasks.empty()) {
    throw std::invalid_argument(std::string("train_teacher: domain ") + domain_name(domain) + " has no labeled tasks");
  }
  const auto start = Clock::now();
  ParameterSet model = build_model(cfg, Role::kTeacher, seed);
  {
    std::mt19937_64 rng(seed ^ 0xC1A55EEDULL);
    const float bound = 1.0f / std::sqrt(static_cast<float>(cfg.d_model));
    std::uniform_real_distribution<float> dist(-bound, bound);
    for (const auto& task : tasks) {
      Tensor w({cfg.d_model, task_info(task).classes});
      for (float& v : w.data()) v = dist(rng);
      model.entries[cls_prefix(task) + "weight"] = std::move(w);
      model.entries[cls_prefix(task) + "bias"] = Tensor::zeros({task_info(task).classes});
    }
  }
  const std::size_t layers = layer_count(model);
  const auto dev = generate(domain, Split::kDev, budget.dev_examples, seed);
  const Tensor dev_signals = stack_signals(dev);

  auto evaluate = [&]() {
    const Tensor feats = pooled_last_layer(model, cfg, dev_signals);
    std::map<std::string, double> acc;
    for (const auto& task : tasks) {
      std::vector<std::size_t> labels;
      for (const auto& ex : dev) labels.push_back(ex.labels.at(task));
      acc[task] = accuracy(feats, model.entries.at(cls_prefix(task) + "weight"),
                           model.entries.at(cls_prefix(task) + "bias"), labels);
    }
    return acc;
  };

  AdamState adam;
  TeacherResult result;
  bool reached = false;
  std::size_t step = 0;
  while (step < budget.max_steps) {
    std::vector<Example> batch;
    batch.reserve(budget.batch);
    for (std::size_t i = 0; i < budget.batch; ++i) batch.push_back(make_example(domain, Split::kTrain, step * budget.batch + i, seed));
    const Tensor signals = stack_signals(batch);

    auto vars = as_vars(model, true);
    auto states = forward_graph(vars, cfg, signals, layers);
    Var pooled = mean_axis(states.back(), 1);
    Var loss;
    for (const auto& task : tasks) {
      std::vector<std::size_t> labels;
      for (const auto& ex : batch) labels.push_back(ex.labels.at(task));
      Var logits = add(matmul(pooled, vars.at(cls_prefix(task) + "weight")), vars.at(cls_prefix(task) + "bias"));
      Var l = cross_entropy(logits, labels);
      loss = loss ? add(loss, l) : l;
    }
    if (!std::isfinite(loss.value().item())) {
      throw TrainingError("train_teacher: non-finite loss at step " + std::to_string(step));
    }
    backward(loss);
    TensorMap grads = collect_grads(vars);
    clip_grad_norm(grads, budget.clip_norm);
    AdamConfig opt;
    opt.lr = budget.lr * static_cast<float>(teacher_lr_factor(budget, step));
    adam_step(model.entries, grads, adam, opt);
    ++step;

    if (step % budget.eval_every == 0 || step == budget.max_steps) {
      if (step < budget.min_steps && step != budget.max_steps) continue;
      result.dev_accuracy = evaluate();
      if (budget.on_eval) budget.on_eval(step, result.dev_accuracy);
      reached = std::all_of(result.dev_accuracy.begin(), result.dev_accuracy.end(),
                            [&](const auto& kv) { return kv.second >= budget.floor; });
      if (reached && step >= budget.min_steps) break;
    }
  }
  if (!reached) {
    std::ostringstream os;
    os << "train_teacher: domain " << domain_name(domain) << " teacher missed the " << budget.floor
       << " dev-accuracy floor after " << step << " steps (";
    for (const auto& [task, acc] : result.dev_accuracy) os << task << '=' << acc << ' ';
    os << ")";
    throw TrainingError(os.str());
  }

  for (auto it = model.entries.begin(); it != model.entries.end();) {
    it = it->first.rfind("cls_heads.", 0) == 0 ? model.entries.erase(it) : std::next(it);
  }
  model.meta.kind = ParamKind::kTeacher;
  model.meta.steps = static_cast<std::int64_t>(step);
  model.meta.extra["domain"] = domain_name(domain);
  model.meta.extra["seed"] = std::to_string(seed);
  for (const auto& [task, acc] : result.dev_accuracy) model.meta.extra["dev_accuracy." + task] = fmt(acc);
  result.teacher = std::move(model);
  result.steps = step;
  result.seconds = seconds_since(start);
  return result;
}

Var distill_loss(const std::vector<Var>& head_outputs, const std::vector<Tensor>& teacher_states,
                 const std::vector<std::size_t>& head_targets, float loss_lambda) {
  if (head_outputs.size() != head_targets.size()) {
    throw ShapeError("distill_loss: " + std::to_string(head_outputs.size()) + " head outputs for " +
                     std::to_string(head_targets.size()) + " targets");
  }
  Var total;
  for (std::size_t i = 0; i < head_outputs.size(); ++i) {
    if (head_targets[i] >= teacher_states.size()) {
      throw ShapeError("distill_loss: head target layer " + std::to_string(head_targets[i]) + " but teacher has " +
                       std::to_string(teacher_states.size()) + " states");
    }
    const Tensor& target = teacher_states[head_targets[i]];
    if (head_outputs[i].shape() != target.shape()) {
      throw ShapeError("distill_loss: head " + std::to_string(i) + " output " + shape_str(head_outputs[i].shape()) +
                       " vs teacher state " + shape_str(target.shape()));
    }
    Var t = constant(target);
    Var l1 = l1_mean(head_outputs[i], t);
    Var cos_term = mean_all(log_sigmoid(cosine_similarity_last(head_outputs[i], t)));
    Var head_loss = sub(l1, scale(cos_term, loss_lambda));
    total = total ? add(total, head_loss) : head_loss;
  }
  return total;
}

ParameterSet distill_init(const DistillRecipe& recipe) {
  if (recipe.teachers.empty() || recipe.teachers.size() > 2) {
    throw std::invalid_argument("distill: need one or two teachers, got " + std::to_string(recipe.teachers.size()));
  }
  const ParameterSet& source = recipe.init_from ? *recipe.init_from : recipe.teachers.front().params;
  return init_student_from_teacher(source, recipe.student_cfg, recipe.seed, recipe.teachers.size());
}

DistillRunRecord distill(const DistillRecipe& recipe) {
  const ModelConfig& cfg = recipe.student_cfg;
  cfg.validate();
  if (recipe.steps == 0 || recipe.batch == 0) throw std::invalid_argument("distill: steps and batch must be positive");
  const std::string arch = cfg.arch_id();
  for (const auto& t : recipe.teachers) {
    if (t.params.meta.arch_id != arch) {
      throw TrainingError("distill: teacher '" + t.label + "' arch " + t.params.meta.arch_id +
                          " does not match student arch " + arch);
    }
    if (layer_count(t.params) < cfg.head_targets.back()) {
      throw TrainingError("distill: teacher '" + t.label + "' has " + std::to_string(layer_count(t.params)) +
                          " layers, head targets reach " + std::to_string(cfg.head_targets.back()));
    }
  }

  const auto start = Clock::now();
  DistillRunRecord rec;
  rec.init = distill_init(recipe);
  rec.teacher_count = recipe.teachers.size();
  rec.method = recipe.teachers.size() == 1 ? "distil-" + recipe.teachers.front().label : "ensemble";
  ParameterSet student = rec.init;
  const std::size_t layers = cfg.student_layers;
  const std::size_t per_teacher = cfg.head_targets.size();
  const auto schedule = mixture_schedule(recipe.data, recipe.steps * recipe.batch);
  std::map<Domain, std::uint64_t> cursor;

  AdamState adam;
  AdamConfig opt;
  opt.lr = recipe.lr;
  std::size_t graph_peak = 0;
  std::size_t teacher_bytes = 0;
  double window_sum = 0.0;
  std::size_t window_n = 0;

  for (std::size_t step = 0; step < recipe.steps; ++step) {
    std::vector<Example> batch;
    batch.reserve(recipe.batch);
    for (std::size_t i = 0; i < recipe.batch; ++i) {
      const Domain d = schedule[step * recipe.batch + i];
      batch.push_back(make_example(d, Split::kTrain, cursor[d]++, recipe.seed));
    }
    const Tensor signals = stack_signals(batch);

    std::vector<std::vector<Tensor>> targets;
    for (const auto& t : recipe.teachers) targets.push_back(forward_batch(t.params, cfg, signals));
    if (step == 0) {
      for (const auto& states : targets)
        for (const auto& s : states) teacher_bytes += s.size() * sizeof(float);
    }

    auto vars = as_vars(student, true);
    auto states = forward_graph(vars, cfg, signals, layers);
    const Var& last = states.back();
    Var loss;
    for (std::size_t t = 0; t < recipe.teachers.size(); ++t) {
      std::vector<Var> outs;
      for (std::size_t j = 0; j < per_teacher; ++j) {
        const std::string p = head_prefix(t * per_teacher + j);
        outs.push_back(add(matmul(last, vars.at(p + "weight")), vars.at(p + "bias")));
      }
      Var l = distill_loss(outs, targets[t], cfg.head_targets, recipe.loss_lambda);
      loss = loss ? add(loss, l) : l;
    }
    const float value = loss.value().item();
    if (!std::isfinite(value)) {
      throw TrainingError("distill: non-finite loss " + fmt(value) + " at step " + std::to_string(step) + " (" +
                          rec.method + ", lr " + fmt(recipe.lr) + ")");
    }
    const auto stats = backward(loss);
    graph_peak = std::max(graph_peak, stats.value_bytes);
    TensorMap grads = collect_grads(vars);
    clip_grad_norm(grads, recipe.clip_norm);
    adam_step(student.entries, grads, adam, opt);

    window_sum += value;
    if (++window_n == recipe.log_every) {
      rec.loss_curve.push_back(window_sum / static_cast<double>(window_n));
      window_sum = 0.0;
      window_n = 0;
    }
  }

  if (window_n > 0) rec.loss_curve.push_back(window_sum / static_cast<double>(window_n));

  rec.seconds = seconds_since(start);
  rec.steps = recipe.steps;
  rec.seconds_per_step = rec.seconds / static_cast<double>(recipe.steps);
  rec.param_count = student.parameter_count();
  rec.peak_bytes = 4 * tensor_bytes(student.entries) + graph_peak + teacher_bytes;

  student.meta.kind = ParamKind::kStudent;
  student.meta.steps = static_cast<std::int64_t>(recipe.steps);
  student.meta.init_digest = init_digest(rec.init);
  auto& extra = student.meta.extra;
  std::string labels;
  for (std::size_t i = 0; i < recipe.teachers.size(); ++i) labels += (i ? "," : "") + recipe.teachers[i].label;
  extra["teachers"] = labels;
  extra["method"] = rec.method;
  extra["data"] = mixture_str(recipe.data);
  extra["batch"] = std::to_string(recipe.batch);
  extra["lr"] = fmt(recipe.lr);
  extra["loss_lambda"] = fmt(recipe.loss_lambda);
  extra["seed"] = std::to_string(recipe.seed);
  extra["adam"] = "beta1=" + fmt(opt.beta1) + ",beta2=" + fmt(opt.beta2) + ",eps=" + fmt(opt.eps);
  rec.student = std::move(student);
  return rec;
}

ResourceReport resource_report(const std::vector<DistillRunRecord>& records) {
  if (records.empty()) throw std::invalid_argument("resource_report: need at least one record");
  ResourceReport report;
  ResourceRow case1{"task_arithmetic_case1", 0.0, 0.0, 0, std::nullopt};
  std::size_t singles = 0;
  for (const auto& r : records) {
    report.rows.push_back({r.method, r.seconds, r.seconds_per_step, r.peak_bytes, r.param_count});
    if (r.teacher_count == 1) {
      ++singles;
      case1.seconds += r.seconds;
      case1.seconds_per_step += r.seconds_per_step;
      case1.peak_bytes = std::max(case1.peak_bytes, r.peak_bytes);
      if (!case1.params) case1.params = r.param_count;
    }
  }
  if (singles >= 2) report.rows.push_back(case1);
  report.rows.push_back({"task_arithmetic_case2", 0.0, 0.0, 0, std::nullopt});
  std::stable_sort(report.rows.begin(), report.rows.end(),
                   [](const ResourceRow& a, const ResourceRow& b) { return a.method < b.method; });
  return report;
}

std::string ResourceReport::to_csv() const {
  std::ostringstream os;
  os << "method,seconds,seconds_per_step,peak_bytes,params\n";
  for (const auto& r : rows) {
    os << r.method << ',' << fmt(r.seconds) << ',' << fmt(r.seconds_per_step) << ',' << r.peak_bytes << ','
       << (r.params ? std::to_string(*r.params) : "-") << '\n';
  }
  return os.str();
}

std::string ResourceReport::to_text() const {
  std::ostringstream os;
  os << std::left << std::setw(26) << "method" << std::right << std::setw(12) << "time (s)" << std::setw(14)
     << "s / step" << std::setw(14) << "peak MiB" << std::setw(12) << "params" << '\n';
  for (const auto& r : rows) {
    os << std::left << std::setw(26) << r.method << std::right << std::fixed << std::setprecision(2) << std::setw(12)
       << r.seconds << std::setprecision(4) << std::setw(14) << r.seconds_per_step << std::setprecision(2)
       << std::setw(14) << static_cast<double>(r.peak_bytes) / (1024.0 * 1024.0) << std::setw(12)
       << (r.params ? std::to_string(*r.params) : "-") << '\n';
    os.unsetf(std::ios::fixed);
  }
  return os.str();
}

}  // namespace distmerge
