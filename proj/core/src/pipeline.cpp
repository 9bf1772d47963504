// Copyright 2026 The distmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include "distmerge/pipeline.hpp"

#include <charconv>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace distmerge {

namespace {

std::string num(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string seeds_str(const std::vector<std::uint64_t>& seeds) {
  std::string s;
  for (std::size_t i = 0; i < seeds.size(); ++i) s += (i ? "," : "") + std::to_string(seeds[i]);
  return s;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoull(item));
  if (out.empty()) throw std::invalid_argument("empty seed list");
  return out;
}

std::pair<double, double> parse_pair(const std::string& s) {
  const auto g = parse_grid(s);
  if (g.size() != 1) throw std::invalid_argument("expected one 'a:b' pair, got '" + s + "'");
  return g.front();
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw std::invalid_argument("expected a boolean, got '" + s + "'");
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

const char* const kTeacherSpeech = "teacher_speech";
const char* const kTeacherMusic = "teacher_music";

}  // namespace

std::map<std::string, std::string> PipelineConfig::to_kv() const {
  std::map<std::string, std::string> kv;
  for (const auto& [k, v] : model.to_kv()) kv["model." + k] = v;
  kv["teacher.max_steps"] = std::to_string(teacher.max_steps);
  kv["teacher.min_steps"] = std::to_string(teacher.min_steps);
  kv["teacher.batch"] = std::to_string(teacher.batch);
  kv["teacher.lr"] = num(teacher.lr);
  kv["teacher.warmup_steps"] = std::to_string(teacher.warmup_steps);
  kv["teacher.clip_norm"] = num(teacher.clip_norm);
  kv["teacher.eval_every"] = std::to_string(teacher.eval_every);
  kv["teacher.dev_examples"] = std::to_string(teacher.dev_examples);
  kv["teacher.floor"] = num(teacher.floor);
  kv["teacher.seed"] = std::to_string(teacher_seed);
  kv["distill.steps"] = std::to_string(distill_steps);
  kv["distill.batch"] = std::to_string(distill_batch);
  kv["distill.lr"] = num(distill_lr);
  kv["distill.loss_lambda"] = num(loss_lambda);
  kv["distill.seed"] = std::to_string(distill_seed);
  kv["distill.data"] = mixture_str(data);
  kv["probe.lr"] = num(probe.lr);
  kv["probe.batch"] = std::to_string(probe.batch);
  kv["probe.epochs"] = std::to_string(probe.epochs);
  kv["probe.n_train"] = std::to_string(probe.n_train);
  kv["probe.n_test"] = std::to_string(probe.n_test);
  kv["probe.data_seed"] = std::to_string(probe.data_seed);
  kv["probe.standardize"] = probe.standardize ? "true" : "false";
  kv["probe.seeds"] = seeds_str(probe_seeds);
  kv["merge.lambda"] = grid_str({lambda});
  kv["sweep.grid"] = grid_str(grid);
  kv["ensemble"] = ensemble ? "true" : "false";
  kv["sweep"] = sweep ? "true" : "false";
  return kv;
}

PipelineConfig PipelineConfig::from_kv(const std::map<std::string, std::string>& kv) {
  PipelineConfig pc;
  std::map<std::string, std::string> model_kv;
  for (const auto& [k, v] : kv) {
    try {
      if (k.rfind("model.", 0) == 0) {
        model_kv[k.substr(6)] = v;
      } else if (k == "teacher.max_steps") {
        pc.teacher.max_steps = std::stoul(v);
      } else if (k == "teacher.min_steps") {
        pc.teacher.min_steps = std::stoul(v);
      } else if (k == "teacher.batch") {
        pc.teacher.batch = std::stoul(v);
      } else if (k == "teacher.lr") {
        pc.teacher.lr = std::stof(v);
      } else if (k == "teacher.warmup_steps") {
        pc.teacher.warmup_steps = std::stoul(v);
      } else if (k == "teacher.clip_norm") {
        pc.teacher.clip_norm = std::stod(v);
      } else if (k == "teacher.eval_every") {
        pc.teacher.eval_every = std::stoul(v);
      } else if (k == "teacher.dev_examples") {
        pc.teacher.dev_examples = std::stoul(v);
      } else if (k == "teacher.floor") {
        pc.teacher.floor = std::stod(v);
      } else if (k == "teacher.seed") {
        pc.teacher_seed = std::stoull(v);
      } else if (k == "distill.steps") {
        pc.distill_steps = std::stoul(v);
      } else if (k == "distill.batch") {
        pc.distill_batch = std::stoul(v);
      } else if (k == "distill.lr") {
        pc.distill_lr = std::stof(v);
      } else if (k == "distill.loss_lambda") {
        pc.loss_lambda = std::stof(v);
      } else if (k == "distill.seed") {
        pc.distill_seed = std::stoull(v);
      } else if (k == "distill.data") {
        pc.data = parse_mixture(v);
      } else if (k == "probe.lr") {
        pc.probe.lr = std::stof(v);
      } else if (k == "probe.batch") {
        pc.probe.batch = std::stoul(v);
      } else if (k == "probe.epochs") {
        pc.probe.epochs = std::stoul(v);
      } else if (k == "probe.n_train") {
        pc.probe.n_train = std::stoul(v);
      } else if (k == "probe.n_test") {
        pc.probe.n_test = std::stoul(v);
      } else if (k == "probe.data_seed") {
        pc.probe.data_seed = std::stoull(v);
      } else if (k == "probe.standardize") {
        pc.probe.standardize = parse_bool(v);
      } else if (k == "probe.seeds") {
        pc.probe_seeds = parse_seeds(v);
      } else if (k == "merge.lambda") {
        pc.lambda = parse_pair(v);
      } else if (k == "sweep.grid") {
        pc.grid = parse_grid(v);
      } else if (k == "ensemble") {
        pc.ensemble = parse_bool(v);
      } else if (k == "sweep") {
        pc.sweep = parse_bool(v);
      } else {
        throw std::invalid_argument("unknown key");
      }
    } catch (const std::exception& e) {
      throw std::invalid_argument("pipeline config: key '" + k + "' = '" + v + "': " + e.what());
    }
  }
  pc.model = ModelConfig::from_kv(model_kv);
  pc.model.validate();
  return pc;
}

double PipelineResult::mean_accuracy(const std::string& model, const std::string& task) const {
  const auto& v = accuracy.at(model).at(task);
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

ScoreTable PipelineResult::score_table() const {
  ScoreTable t;
  for (const auto& [model, tasks] : accuracy)
    for (const auto& [task, _] : tasks) t.set(model, task, 100.0 * mean_accuracy(model, task), Direction::kHigher);
  return t;
}

TeacherPair train_teachers(const PipelineConfig& pc, const PipelineLog& log) {
  auto train = [&](Domain d, std::uint64_t seed) {
    TeacherBudget b = pc.teacher;
    if (log) {
      b.on_eval = [&](std::size_t step, const std::map<std::string, double>& acc) {
        std::string line = std::string("teacher ") + domain_name(d) + " step " + std::to_string(step);
        for (const auto& [t, a] : acc) line += " " + t + "=" + num(a);
        log(line);
      };
    }
    return train_teacher(pc.model, d, b, seed);
  };
  TeacherPair tp;
  tp.speech = train(Domain::kSpeech, pc.teacher_seed);
  tp.music = train(Domain::kMusic, pc.teacher_seed + 1);
  return tp;
}

std::vector<std::string> pipeline_models(const PipelineConfig& pc) {
  std::vector<std::string> m = {kTeacherSpeech, kTeacherMusic, "teacher_average", "distil-speech", "distil-music"};
  if (pc.ensemble) m.push_back("ensemble");
  m.push_back("task_arithmetic");
  return m;
}

std::vector<std::string> pipeline_artifacts(const PipelineConfig& pc) {
  std::vector<std::string> files;
  for (const auto& m : pipeline_models(pc)) files.push_back(m + ".safetensors");
  files.insert(files.end(), {"theta0.safetensors", "tv_speech.safetensors", "tv_music.safetensors", "probes.csv",
                             "scores.csv", "loss_curves.csv", "resources.csv", "compat.txt"});
  if (pc.sweep) files.insert(files.end(), {"sweep.csv", "sweep_endpoints.csv"});
  return files;
}

PipelineResult run_pipeline(const PipelineConfig& pc, const TeacherPair& teachers, const std::filesystem::path& out,
                            const PipelineLog& log) {
  auto note = [&](const std::string& s) {
    if (log) log(s);
  };
  pc.model.validate();
  if (pc.probe_seeds.empty()) throw std::invalid_argument("pipeline: need at least one probe seed");
  PipelineResult r;
  r.teachers = teachers;
  const ParameterSet& ts = teachers.speech.teacher;
  const ParameterSet& tm = teachers.music.teacher;

  auto recipe = [&](std::vector<TeacherRef> refs) {
    DistillRecipe rc;
    rc.teachers = std::move(refs);
    rc.student_cfg = pc.model;
    rc.data = pc.data;
    rc.steps = pc.distill_steps;
    rc.batch = pc.distill_batch;
    rc.lr = pc.distill_lr;
    rc.loss_lambda = pc.loss_lambda;
    rc.seed = pc.distill_seed;
    rc.init_from = ts;  // both single-teacher students share the speech trunk
    rc.log_every = std::max<std::size_t>(1, std::min<std::size_t>(100, pc.distill_steps / 10));
    return rc;
  };
  auto run = [&](std::vector<TeacherRef> refs) {
    DistillRunRecord rec = distill(recipe(std::move(refs)));
    note("distilled " + rec.method + " in " + num(rec.seconds) + " s");
    r.records.push_back(std::move(rec));
  };
  run({{ts, "speech"}});
  run({{tm, "music"}});
  if (pc.ensemble) run({{ts, "speech"}, {tm, "music"}});
  const DistillRunRecord& ds = r.records[0];
  const DistillRunRecord& dm = r.records[1];
  if (ds.student.meta.init_digest != dm.student.meta.init_digest) {
    throw TrainingError("pipeline: single-teacher students do not share an initialization");
  }
  r.theta0 = ds.init;

  r.tv_speech = task_vector(ds.student, r.theta0, "speech");
  r.tv_music = task_vector(dm.student, r.theta0, "music");
  {
    MergeSpec spec;
    spec.base = r.theta0;
    spec.terms = {{r.tv_speech, pc.lambda.first}, {r.tv_music, pc.lambda.second}};
    r.task_arithmetic = merge_linear(spec);
  }
  r.teacher_average = merge_average({ts, tm}, /*allow_digest_mismatch=*/true);
  r.students_compat = compat_check(ds.student, dm.student);
  r.teachers_compat = compat_check(ts, tm);
  r.resources = resource_report(r.records);

  std::vector<std::string> tasks;
  for (const auto& t : all_tasks()) tasks.push_back(t.name);
  ProbeSuite suite(pc.probe);
  std::map<std::string, const ParameterSet*> models = {
      {kTeacherSpeech, &ts},
      {kTeacherMusic, &tm},
      {"teacher_average", &r.teacher_average},
      {"task_arithmetic", &r.task_arithmetic},
  };
  for (const auto& rec : r.records) models[rec.method] = &rec.student;
  for (const auto& name : pipeline_models(pc)) {
    r.accuracy[name] = suite.evaluate(*models.at(name), pc.model, tasks, pc.probe_seeds);
    std::string line = "probed " + name;
    for (const auto& t : tasks) line += " " + t + "=" + num(r.mean_accuracy(name, t));
    note(line);
  }
  if (pc.sweep) {
    r.sweep = sweep(r.theta0, r.tv_speech, r.tv_music, pc.model, pc.grid, tasks, pc.probe_seeds, suite);
    r.endpoints = sweep(r.theta0, r.tv_speech, r.tv_music, pc.model, {{1.0, 0.0}, {0.0, 1.0}}, tasks, pc.probe_seeds,
                      suite);
    note("swept " + std::to_string(pc.grid.size()) + " interpolation weights");
  }

  if (out.empty()) return r;
  std::filesystem::create_directories(out);
  write_checkpoint(ts, out / (std::string(kTeacherSpeech) + ".safetensors"));
  write_checkpoint(tm, out / (std::string(kTeacherMusic) + ".safetensors"));
  write_checkpoint(r.teacher_average, out / "teacher_average.safetensors");
  for (const auto& rec : r.records) write_checkpoint(rec.student, out / (rec.method + ".safetensors"));
  write_checkpoint(r.task_arithmetic, out / "task_arithmetic.safetensors");
  write_checkpoint(r.theta0, out / "theta0.safetensors");
  write_task_vector(r.tv_speech, out / "tv_speech.safetensors");
  write_task_vector(r.tv_music, out / "tv_music.safetensors");

  std::ostringstream probes;
  probes << "model,task,seed,accuracy\n";
  for (const auto& name : pipeline_models(pc))
    for (const auto& t : tasks)
      for (std::size_t i = 0; i < pc.probe_seeds.size(); ++i)
        probes << name << ',' << t << ',' << pc.probe_seeds[i] << ',' << num(r.accuracy.at(name).at(t)[i]) << '\n';
  write_text(out / "probes.csv", probes.str());
  write_text(out / "scores.csv", r.score_table().to_csv());

  std::ostringstream curves;
  curves << "method,window,loss\n";
  for (const auto& rec : r.records)
    for (std::size_t i = 0; i < rec.loss_curve.size(); ++i) curves << rec.method << ',' << i << ',' << num(rec.loss_curve[i]) << '\n';
  write_text(out / "loss_curves.csv", curves.str());
  write_text(out / "resources.csv", r.resources.to_csv());
  write_text(out / "compat.txt", "students (distil-speech vs distil-music)\n" + r.students_compat.to_text() +
                                     "\nteachers (speech vs music)\n" + r.teachers_compat.to_text());
  if (pc.sweep) {
    write_text(out / "sweep.csv", sweep_csv(r.sweep, tasks));
    write_text(out / "sweep_endpoints.csv", sweep_csv(r.endpoints, tasks));
  }
  return r;
}

}  // namespace distmerge
