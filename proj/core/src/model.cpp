// Copyright 2026 The distmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include "distmerge/model.hpp"

#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include "distmerge/ops.hpp"

namespace distmerge {

namespace {

std::vector<std::size_t> parse_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoul(item));
  }
  return out;
}

Tensor uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  const float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
  std::uniform_real_distribution<float> dist(-bound, bound);
  for (float& v : t.data()) v = dist(rng);
  return t;
}

const Var& need(const std::map<std::string, Var>& params, const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw std::invalid_argument("forward: missing parameter '" + name + "'");
  return it->second;
}

}  // namespace

void ModelConfig::validate() const {
  auto bad = [](const std::string& msg) { throw std::invalid_argument("ModelConfig: " + msg); };
  if (d_model == 0 || n_heads == 0 || ffn_mult == 0) bad("d_model, n_heads and ffn_mult must be positive");
  if (d_model % n_heads != 0) bad("d_model must be divisible by n_heads");
  if (conv0_kernel == 0 || conv1_kernel == 0 || conv0_stride == 0 || conv1_stride == 0)
    bad("conv kernels and strides must be positive");
  if (student_layers == 0 || student_layers >= teacher_layers) bad("need 0 < student_layers < teacher_layers");
  if (head_targets.empty()) bad("head_targets must not be empty");
  for (std::size_t i = 0; i < head_targets.size(); ++i) {
    if (head_targets[i] < 1 || head_targets[i] > teacher_layers) bad("head_targets must lie in [1, teacher_layers]");
    if (i > 0 && head_targets[i] <= head_targets[i - 1]) bad("head_targets must be strictly increasing");
  }
  if (max_positions == 0) bad("max_positions must be positive");
}

std::size_t ModelConfig::frames_for(std::size_t samples) const {
  if (samples < conv0_kernel) return 0;
  const std::size_t l0 = (samples - conv0_kernel) / conv0_stride + 1;
  if (l0 < conv1_kernel) return 0;
  return (l0 - conv1_kernel) / conv1_stride + 1;
}

std::size_t ModelConfig::receptive_field() const { return conv0_kernel + (conv1_kernel - 1) * conv0_stride; }

std::string ModelConfig::arch_id() const {
  std::ostringstream os;
  os << "d_model=" << d_model << ";n_heads=" << n_heads << ";ffn_mult=" << ffn_mult << ";conv0=" << conv0_kernel
     << '/' << conv0_stride << ";conv1=" << conv1_kernel << '/' << conv1_stride << ";max_positions=" << max_positions;
  const std::string s = os.str();
  return sha256_hex(s.data(), s.size()).substr(0, 16);
}

std::map<std::string, std::string> ModelConfig::to_kv() const {
  std::string targets;
  for (std::size_t i = 0; i < head_targets.size(); ++i) targets += (i ? "," : "") + std::to_string(head_targets[i]);
  return {
      {"d_model", std::to_string(d_model)},
      {"n_heads", std::to_string(n_heads)},
      {"ffn_mult", std::to_string(ffn_mult)},
      {"teacher_layers", std::to_string(teacher_layers)},
      {"student_layers", std::to_string(student_layers)},
      {"conv0_kernel", std::to_string(conv0_kernel)},
      {"conv0_stride", std::to_string(conv0_stride)},
      {"conv1_kernel", std::to_string(conv1_kernel)},
      {"conv1_stride", std::to_string(conv1_stride)},
      {"max_positions", std::to_string(max_positions)},
      {"head_targets", targets},
  };
}

ModelConfig ModelConfig::from_kv(const std::map<std::string, std::string>& kv) {
  ModelConfig cfg;
  auto num = [&](const char* key, std::size_t& field) {
    if (auto it = kv.find(key); it != kv.end()) field = std::stoul(it->second);
  };
  num("d_model", cfg.d_model);
  num("n_heads", cfg.n_heads);
  num("ffn_mult", cfg.ffn_mult);
  num("teacher_layers", cfg.teacher_layers);
  num("student_layers", cfg.student_layers);
  num("conv0_kernel", cfg.conv0_kernel);
  num("conv0_stride", cfg.conv0_stride);
  num("conv1_kernel", cfg.conv1_kernel);
  num("conv1_stride", cfg.conv1_stride);
  num("max_positions", cfg.max_positions);
  if (auto it = kv.find("head_targets"); it != kv.end()) cfg.head_targets = parse_list(it->second);
  cfg.validate();
  return cfg;
}

std::string layer_prefix(std::size_t index) { return "encoder.layer." + std::to_string(index) + "."; }
std::string head_prefix(std::size_t index) { return "heads." + std::to_string(index) + "."; }
bool is_head_name(const std::string& name) { return name.rfind("heads.", 0) == 0; }

std::size_t frontend_param_count(const ModelConfig& cfg) {
  const std::size_t d = cfg.d_model;
  return (cfg.conv0_kernel * d + d) + (cfg.conv1_kernel * d * d + d) + cfg.max_positions * d;
}

std::size_t layer_param_count(const ModelConfig& cfg) {
  const std::size_t d = cfg.d_model;
  const std::size_t f = cfg.ffn_mult * d;
  return 2 * d + 4 * (d * d + d) + 2 * d + (d * f + f) + (f * d + d);
}

std::size_t head_param_count(const ModelConfig& cfg) { return cfg.d_model * cfg.d_model + cfg.d_model; }

std::size_t trunk_param_count(const ModelConfig& cfg, std::size_t layers) {
  return frontend_param_count(cfg) + layers * layer_param_count(cfg);
}

ParameterSet build_model(const ModelConfig& cfg, Role role, std::uint64_t seed) {
  cfg.validate();
  const std::size_t d = cfg.d_model;
  const std::size_t f = cfg.ffn_mult * d;
  std::mt19937_64 rng(seed);
  ParameterSet ps;
  auto& e = ps.entries;
  e["frontend.conv0.weight"] = uniform({cfg.conv0_kernel, 1, d}, cfg.conv0_kernel, rng);
  e["frontend.conv0.bias"] = Tensor::zeros({d});
  e["frontend.conv1.weight"] = uniform({cfg.conv1_kernel, d, d}, cfg.conv1_kernel * d, rng);
  e["frontend.conv1.bias"] = Tensor::zeros({d});
  {
    Tensor pos({cfg.max_positions, d});
    std::normal_distribution<float> dist(0.0f, 0.02f);
    for (float& v : pos.data()) v = dist(rng);
    e["pos_embed.weight"] = std::move(pos);
  }
  const std::size_t layers = role == Role::kTeacher ? cfg.teacher_layers : cfg.student_layers;
  for (std::size_t i = 0; i < layers; ++i) {
    const std::string p = layer_prefix(i);
    e[p + "ln1.weight"] = Tensor::full({d}, 1.0f);
    e[p + "ln1.bias"] = Tensor::zeros({d});
    for (const char* w : {"q", "k", "v", "o"}) {
      e[p + "attn." + w + ".weight"] = uniform({d, d}, d, rng);
      e[p + "attn." + w + ".bias"] = Tensor::zeros({d});
    }
    e[p + "ln2.weight"] = Tensor::full({d}, 1.0f);
    e[p + "ln2.bias"] = Tensor::zeros({d});
    e[p + "ffn.fc1.weight"] = uniform({d, f}, d, rng);
    e[p + "ffn.fc1.bias"] = Tensor::zeros({f});
    e[p + "ffn.fc2.weight"] = uniform({f, d}, f, rng);
    e[p + "ffn.fc2.bias"] = Tensor::zeros({d});
  }
  ps.meta.arch_id = cfg.arch_id();
  ps.meta.kind = role == Role::kTeacher ? ParamKind::kTeacher : ParamKind::kStudent;
  if (role == Role::kStudent) {
    add_prediction_heads(ps, cfg, 0, cfg.head_targets.size(), rng());
    ps.meta.init_digest = init_digest(ps);
  }
  return ps;
}

void add_prediction_heads(ParameterSet& ps, const ModelConfig& cfg, std::size_t first, std::size_t count,
                          std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t d = cfg.d_model;
  for (std::size_t j = first; j < first + count; ++j) {
    ps.entries[head_prefix(j) + "weight"] = uniform({d, d}, d, rng);
    ps.entries[head_prefix(j) + "bias"] = Tensor::zeros({d});
  }
}

std::size_t layer_count(const ParameterSet& ps) {
  std::size_t n = 0;
  while (ps.entries.count(layer_prefix(n) + "ln1.weight")) ++n;
  return n;
}

std::size_t head_count(const ParameterSet& ps) {
  std::size_t n = 0;
  while (ps.entries.count(head_prefix(n) + "weight")) ++n;
  return n;
}

std::vector<Var> forward_graph(const std::map<std::string, Var>& params, const ModelConfig& cfg,
                               const Tensor& signals, std::size_t layers) {
  if (signals.rank() != 2) throw ShapeError("forward: signals must be [B, samples], got " + shape_str(signals.shape()));
  const std::size_t batch = signals.dim(0);
  const std::size_t samples = signals.dim(1);
  if (samples < cfg.receptive_field()) {
    throw std::invalid_argument("forward: signal of " + std::to_string(samples) +
                                " samples is shorter than the receptive field (" +
                                std::to_string(cfg.receptive_field()) + ")");
  }
  const std::size_t frames = cfg.frames_for(samples);
  if (frames > cfg.max_positions) {
    throw std::invalid_argument("forward: " + std::to_string(frames) + " frames exceed max_positions " +
                                std::to_string(cfg.max_positions));
  }
  const std::size_t heads = cfg.n_heads;
  const float attn_scale = 1.0f / std::sqrt(static_cast<float>(cfg.d_model / heads));
  auto P = [&](const std::string& name) -> const Var& { return need(params, name); };

  std::vector<Var> states;
  Var h = constant(signals.reshaped({batch, samples, 1}));
  h = gelu(add(conv1d(h, P("frontend.conv0.weight"), cfg.conv0_stride), P("frontend.conv0.bias")));
  h = gelu(add(conv1d(h, P("frontend.conv1.weight"), cfg.conv1_stride), P("frontend.conv1.bias")));
  std::vector<std::size_t> positions(frames);
  for (std::size_t t = 0; t < frames; ++t) positions[t] = t;
  h = add(h, embedding(P("pos_embed.weight"), positions));
  states.push_back(h);

  for (std::size_t i = 0; i < layers; ++i) {
    const std::string p = layer_prefix(i);
    auto linear = [&](const Var& x, const std::string& name) {
      return add(matmul(x, P(p + name + ".weight")), P(p + name + ".bias"));
    };
    Var x = layer_norm_last(h, P(p + "ln1.weight"), P(p + "ln1.bias"));
    Var q = split_heads(linear(x, "attn.q"), heads);
    Var k = split_heads(linear(x, "attn.k"), heads);
    Var v = split_heads(linear(x, "attn.v"), heads);
    Var attn = softmax_last(scale(matmul(q, transpose_last2(k)), attn_scale));
    Var ctx = merge_heads(matmul(attn, v));
    h = add(h, linear(ctx, "attn.o"));
    Var x2 = layer_norm_last(h, P(p + "ln2.weight"), P(p + "ln2.bias"));
    h = add(h, linear(gelu(linear(x2, "ffn.fc1")), "ffn.fc2"));
    states.push_back(h);
  }
  return states;
}

std::map<std::string, Var> as_vars(const ParameterSet& ps, bool trainable) {
  std::map<std::string, Var> vars;
  for (const auto& [name, t] : ps.entries) vars.emplace(name, trainable ? parameter(t) : constant(t));
  return vars;
}

std::vector<Tensor> forward_batch(const ParameterSet& ps, const ModelConfig& cfg, const Tensor& signals) {
  NoGradGuard guard;
  const auto vars = as_vars(ps, false);
  auto states = forward_graph(vars, cfg, signals, layer_count(ps));
  std::vector<Tensor> out;
  out.reserve(states.size());
  for (auto& s : states) out.push_back(s.value());
  return out;
}

Tensor pooled_last_layer(const ParameterSet& ps, const ModelConfig& cfg, const Tensor& signals, std::size_t chunk) {
  if (signals.rank() != 2) throw ShapeError("pooled_last_layer: signals must be [n, samples]");
  const std::size_t n = signals.dim(0);
  const std::size_t samples = signals.dim(1);
  const std::size_t d = cfg.d_model;
  Tensor out({n, d});
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t m = std::min(chunk, n - start);
    Tensor part({m, samples}, std::vector<float>(signals.ptr() + start * samples, signals.ptr() + (start + m) * samples));
    NoGradGuard guard;
    const auto vars = as_vars(ps, false);
    auto states = forward_graph(vars, cfg, part, layer_count(ps));
    Var pooled = mean_axis(states.back(), 1);
    std::copy_n(pooled.value().ptr(), m * d, out.ptr() + start * d);
  }
  return out;
}

HiddenStates forward(const ParameterSet& ps, const ModelConfig& cfg, const Tensor& signal) {
  if (signal.rank() != 1) throw ShapeError("forward: signal must be rank 1, got " + shape_str(signal.shape()));
  auto batch = forward_batch(ps, cfg, signal.reshaped({1, signal.size()}));
  HiddenStates out;
  for (auto& s : batch) out.push_back(s.reshaped({s.dim(1), s.dim(2)}));
  return out;
}

ParameterSet init_student_from_teacher(const ParameterSet& teacher, const ModelConfig& cfg, std::uint64_t head_seed,
                                       std::size_t n_head_sets) {
  cfg.validate();
  const std::size_t have = layer_count(teacher);
  if (have < cfg.student_layers) {
    throw std::invalid_argument("init_student_from_teacher: teacher has " + std::to_string(have) +
                                " layers, student needs " + std::to_string(cfg.student_layers));
  }
  // Expected shapes come from a reference student of the same config.
  const ParameterSet ref = build_model(cfg, Role::kStudent, 0);
  ParameterSet student;
  for (const auto& [name, t] : ref.entries) {
    if (is_head_name(name)) continue;
    auto it = teacher.entries.find(name);
    if (it == teacher.entries.end()) {
      throw std::invalid_argument("init_student_from_teacher: teacher lacks '" + name + "'");
    }
    if (it->second.shape() != t.shape()) {
      throw ShapeError("init_student_from_teacher: shape incompatibility for '" + name + "': teacher " +
                       shape_str(it->second.shape()) + " vs student " + shape_str(t.shape()));
    }
    student.entries[name] = it->second;
  }
  add_prediction_heads(student, cfg, 0, n_head_sets * cfg.head_targets.size(), head_seed);
  student.meta.arch_id = cfg.arch_id();
  student.meta.kind = ParamKind::kStudent;
  student.meta.steps = 0;
  student.meta.extra["init_teacher_digest"] = init_digest(teacher);
  student.meta.init_digest = init_digest(student);
  return student;
}

}  // namespace distmerge
