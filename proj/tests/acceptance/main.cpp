// Copyright 2026 The distmerge Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance checks C1-C9. Prints one PASS/FAIL line per criterion and exits
// non-zero when any selected criterion fails.
//
//   distmerge_acceptance core          C1-C4
//   distmerge_acceptance pipeline      C5-C8 (teachers, 2- and 3-layer pipelines)
//   distmerge_acceptance determinism   C9
//
// --data <dir> locates table1.csv; --work <dir> keeps pipeline outputs.

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "corpus.hpp"
#include "distmerge/checkpoint.hpp"
#include "distmerge/merge.hpp"
#include "distmerge/model.hpp"
#include "distmerge/pipeline.hpp"
#include "distmerge/scoring.hpp"
#include "gradcheck.hpp"

namespace fs = std::filesystem;
using namespace distmerge;

namespace {

// Pinned tolerances and limits.
constexpr double kGradTol = 1e-3;
constexpr std::size_t kGradSeeds = 10;
constexpr float kReconstructTol = 1e-6f;
constexpr double kRankTol = 0.01;
constexpr double kSuperbTol = 1e-9;
constexpr double kMergedFraction = 0.8;
constexpr double kSpearmanMin = 0.8;
constexpr double kEndpointTol = 0.02;
constexpr double kC1Seconds = 10, kC2Seconds = 60, kC3Seconds = 10, kC4Seconds = 1;
constexpr double kC5Seconds = 30 * 60, kC8Seconds = 45 * 60;

using Clock = std::chrono::steady_clock;
double since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fixed(double v, int p = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(p) << v;
  return os.str();
}

struct Outcome {
  bool pass = true;
  std::string detail;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
  void note(const std::string& what) { detail += (detail.empty() ? "" : "; ") + what; }
};

int failures = 0;

void report(const std::string& id, const std::string& title, Outcome o, double seconds, double limit) {
  if (limit > 0) o.require(seconds < limit, "runtime " + fixed(seconds, 1) + " s over " + fixed(limit, 0) + " s");
  if (!o.pass) ++failures;
  std::cout << id << ' ' << (o.pass ? "PASS" : "FAIL") << "  " << title << "  (" << fixed(seconds, 2) << " s)";
  if (!o.detail.empty()) std::cout << "  " << o.detail;
  std::cout << std::endl;
}

void run(const std::string& id, const std::string& title, double limit, const std::function<Outcome()>& body) {
  const auto t = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o.require(false, std::string("exception: ") + e.what());
  }
  report(id, title, o, since(t), limit);
}

fs::path scratch_dir(const std::string& leaf) {
  const fs::path p = fs::temp_directory_path() / ("distmerge_acceptance_" + std::to_string(::getpid()) + "_" + leaf);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Outcome c1_format() {
  Outcome o;
  const fs::path dir = scratch_dir("c1");
  std::size_t roundtrips = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const ParameterSet ps = testing::random_parameter_set(seed);
    const fs::path p = dir / ("set" + std::to_string(seed) + ".safetensors");
    write_checkpoint(ps, p);
    if (read_checkpoint(p).bit_equal(ps)) ++roundtrips;
  }
  o.require(roundtrips == 100, std::to_string(100 - roundtrips) + " roundtrips differ");
  std::size_t rejected = 0, cases = 0;
  for (const auto& c : testing::malformed_corpus()) {
    ++cases;
    const fs::path p = dir / "malformed.safetensors";
    std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(c.bytes.data()),
                                             static_cast<std::streamsize>(c.bytes.size()));
    try {
      read_checkpoint(p);
      o.require(false, "accepted '" + c.name + "'");
    } catch (const CheckpointError& e) {
      if (e.kind() == c.expected)
        ++rejected;
      else
        o.require(false, "'" + c.name + "' raised the wrong error class");
    }
  }
  fs::remove_all(dir);
  o.note("100 roundtrips, " + std::to_string(rejected) + "/" + std::to_string(cases) + " malformed files rejected");
  return o;
}

Outcome c2_autodiff() {
  Outcome o;
  std::set<OpKind> covered;
  double worst = 0.0;
  for (const auto& c : testing::grad_cases()) {
    covered.insert(c.op);
    for (std::uint64_t seed = 0; seed < kGradSeeds; ++seed) {
      const double err = testing::grad_check(c, seed);
      worst = std::max(worst, err);
      if (!(err < kGradTol)) o.require(false, c.name + " seed " + std::to_string(seed) + " rel err " + fixed(err, 6));
    }
  }
  const std::size_t ops = static_cast<std::size_t>(OpKind::kCrossEntropy);  // every kind but kLeaf
  o.require(covered.size() == ops, "only " + std::to_string(covered.size()) + " of " + std::to_string(ops) + " ops");
  o.note(std::to_string(covered.size()) + " ops x " + std::to_string(kGradSeeds) + " seeds, worst rel err " +
         fixed(worst, 6));
  return o;
}

Outcome c3_merge() {
  Outcome o;
  const ModelConfig cfg;
  const ParameterSet theta0 = init_student_from_teacher(build_model(cfg, Role::kTeacher, 1), cfg, 2);
  ParameterSet ft = init_student_from_teacher(build_model(cfg, Role::kTeacher, 3), cfg, 4);
  ft.meta.init_digest = init_digest(theta0);
  ParameterSet ft2 = init_student_from_teacher(build_model(cfg, Role::kTeacher, 5), cfg, 6);
  ft2.meta.init_digest = init_digest(theta0);
  const TaskVector tv = task_vector(ft, theta0, "a"), tv2 = task_vector(ft2, theta0, "b");

  MergeSpec spec;
  spec.base = theta0;
  spec.terms = {{tv, 1.0}};
  float err = 0.0f;
  for (const auto& [name, t] : merge_linear(spec).entries)
    for (std::size_t i = 0; i < t.size(); ++i) err = std::max(err, std::fabs(t[i] - ft.entries.at(name)[i]));
  o.require(err <= kReconstructTol, "reconstruction error " + std::to_string(err));

  spec.terms = {{tv, 0.0}, {tv2, 0.0}};
  bool identical = true;
  for (const auto& [name, t] : merge_linear(spec).entries) identical = identical && t.bit_equal(theta0.entries.at(name));
  o.require(identical, "zero-lambda merge differs from theta0");

  TaskVector foreign = tv;
  foreign.params.meta.init_digest = init_digest(ft2);
  spec.terms = {{tv, 0.5}, {foreign, 0.5}};
  bool rejected = false;
  try {
    merge(spec);
  } catch (const MergeError& e) {
    rejected = e.kind() == MergeError::Kind::kDivergentInit;
  }
  o.require(rejected, "digest mismatch not rejected");

  {
    ParameterSet base;
    base.entries["w"] = Tensor({3});
    base.meta.kind = ParamKind::kStudent;
    auto vec = [&](std::vector<float> v, const char* src) {
      TaskVector t;
      t.source = src;
      t.params.entries["w"] = Tensor({3}, std::move(v));
      t.params.meta.kind = ParamKind::kTaskVector;
      t.params.meta.init_digest = init_digest(base);
      return t;
    };
    MergeSpec ties;
    ties.base = base;
    ties.mode = MergeMode::kTies;
    ties.ties_density = 2.0 / 3.0;
    ties.terms = {{vec({1.0f, -2.0f, 0.1f}, "a"), 1.0}, {vec({-1.5f, 1.0f, 0.2f}, "b"), 1.0}};
    const Tensor w = merge(ties).entries.at("w");
    o.require(w[0] == -1.5f && w[1] == -2.0f && w[2] == 0.0f,
              "TIES gave [" + fixed(w[0]) + "," + fixed(w[1]) + "," + fixed(w[2]) + "]");
  }

  spec.terms = {{tv, 0.7}};
  const ParameterSet lin = merge_linear(spec);
  spec.mode = MergeMode::kTies;
  spec.ties_density = 1.0;
  const ParameterSet ties1 = merge_ties(spec);
  bool same = lin.entries.size() == ties1.entries.size();
  for (const auto& [name, t] : lin.entries) same = same && t.bit_equal(ties1.entries.at(name));
  o.require(same, "density-1 TIES differs from the linear merge");
  o.note("reconstruction max err " + std::to_string(err));
  return o;
}

Outcome c4_table(const fs::path& data) {
  Outcome o;
  const ScoreTable t = ScoreTable::read_csv(data / "table1.csv");
  const std::vector<std::string> tasks = {"ASR", "KS", "IC", "ER", "SID", "SingerID", "PitchID"};
  const std::vector<std::pair<std::string, double>> published = {{"HuBERT", 1.86},   {"distil-HuBERT", 3.29},
                                                                 {"MERT", 4.43},     {"distil-MERT", 4.71},
                                                                 {"Ensemble", 3.71}, {"Task Arithmetic", 3.00}};
  std::vector<std::string> models;
  for (const auto& [m, _] : published) models.push_back(m);
  const auto ranks = rank_average(t, models, tasks);
  std::string got;
  for (const auto& [m, want] : published) {
    got += (got.empty() ? "" : " ") + fixed(ranks.at(m), 2);
    o.require(std::fabs(ranks.at(m) - want) <= kRankTol, m + " rank " + fixed(ranks.at(m)) + " vs " + fixed(want, 2));
  }
  // Constructed inputs: a model equal to the reference scores 1000, one at the
  // baseline 0, one halfway 500. One lower-better task, one higher-better.
  ScoreTable c;
  c.set("ref", "err", 20.0, Direction::kLower);
  c.set("ref", "acc", 90.0, Direction::kHigher);
  c.set("base", "err", 60.0, Direction::kLower);
  c.set("base", "acc", 30.0, Direction::kHigher);
  c.set("half", "err", 40.0, Direction::kLower);
  c.set("half", "acc", 60.0, Direction::kHigher);
  const std::vector<std::string> ct = {"err", "acc"};
  const auto best = best_reference(c, {"ref"}, ct);
  const std::map<std::string, double> baselines = {{"err", 40.0}, {"acc", 30.0}};
  const double s1 = superb_score(c, "ref", ct, best, baselines);
  const double s0 = superb_score(c, "base", ct, best, baselines);
  const double s5 = superb_score(c, "half", ct, best, baselines);
  o.require(std::fabs(s1 - 1000.0) <= kSuperbTol && std::fabs(s0) <= kSuperbTol && std::fabs(s5 - 500.0) <= kSuperbTol,
            "SUPERB constructed cases gave " + fixed(s1) + "/" + fixed(s0) + "/" + fixed(s5));
  o.note("ranks " + got + ", SUPERB " + fixed(s1, 1) + "/" + fixed(s0, 1) + "/" + fixed(s5, 1));
  return o;
}

// Library defaults: 2000 distillation steps on domain S, 3 probe seeds.
PipelineConfig experiment_config() { return PipelineConfig{}; }

const SweepPoint& point(const std::vector<SweepPoint>& pts, double l1, double l2) {
  for (const auto& p : pts)
    if (std::fabs(p.lambda1 - l1) < 1e-12 && std::fabs(p.lambda2 - l2) < 1e-12) return p;
  throw std::runtime_error("sweep lacks point " + fixed(l1, 1) + ":" + fixed(l2, 1));
}

Outcome c5_collapse(const PipelineResult& r) {
  Outcome o;
  // Each teacher is compared with the average on its own home-domain content task.
  const double avg_seq = r.mean_accuracy("teacher_average", "seq_class");
  const double avg_pitch = r.mean_accuracy("teacher_average", "pitch_class");
  const double ts_seq = r.mean_accuracy("teacher_speech", "seq_class");
  const double tm_pitch = r.mean_accuracy("teacher_music", "pitch_class");
  o.require(avg_seq < ts_seq, "average seq_class " + fixed(avg_seq) + " not below speech teacher " + fixed(ts_seq));
  o.require(avg_pitch < tm_pitch,
            "average pitch_class " + fixed(avg_pitch) + " not below music teacher " + fixed(tm_pitch));
  const double ta_seq = point(r.sweep, 0.9, 0.1).accuracy.at("seq_class");
  const double ta_pitch = point(r.sweep, 0.1, 0.9).accuracy.at("pitch_class");
  const double ds_seq = r.mean_accuracy("distil-speech", "seq_class");
  const double dm_pitch = r.mean_accuracy("distil-music", "pitch_class");
  o.require(ta_seq >= kMergedFraction * ds_seq, "merged seq_class " + fixed(ta_seq) + " < 0.8 x " + fixed(ds_seq));
  o.require(ta_pitch >= kMergedFraction * dm_pitch,
            "merged pitch_class " + fixed(ta_pitch) + " < 0.8 x " + fixed(dm_pitch));
  o.note("average seq/pitch " + fixed(avg_seq, 3) + "/" + fixed(avg_pitch, 3) + "; home teachers " +
         fixed(ts_seq, 3) + "/" + fixed(tm_pitch, 3) + "; cross-domain teachers " +
         fixed(r.mean_accuracy("teacher_music", "seq_class"), 3) + "/" +
         fixed(r.mean_accuracy("teacher_speech", "pitch_class"), 3) + "; merged " + fixed(ta_seq, 3) + "/" +
         fixed(ta_pitch, 3) + " vs students " + fixed(ds_seq, 3) + "/" + fixed(dm_pitch, 3));
  return o;
}

Outcome c6_sweep(const PipelineResult& r) {
  Outcome o;
  std::vector<double> l1, l2, seq, pitch;
  for (const auto& p : r.sweep) {
    l1.push_back(p.lambda1);
    l2.push_back(p.lambda2);
    seq.push_back(p.accuracy.at("seq_class"));
    pitch.push_back(p.accuracy.at("pitch_class"));
  }
  const double rho_s = spearman(l1, seq), rho_m = spearman(l2, pitch);
  o.require(r.sweep.size() == 5, "grid has " + std::to_string(r.sweep.size()) + " points");
  o.require(rho_s >= kSpearmanMin, "spearman(lambda1, seq_class) " + fixed(rho_s));
  o.require(rho_m >= kSpearmanMin, "spearman(lambda2, pitch_class) " + fixed(rho_m));
  double worst = 0.0;
  const std::vector<std::pair<const SweepPoint*, std::string>> ends = {{&point(r.endpoints, 1.0, 0.0), "distil-speech"},
                                                                       {&point(r.endpoints, 0.0, 1.0), "distil-music"}};
  for (const auto& [p, student] : ends) {
    for (const auto& [task, acc] : p->accuracy) {
      const double d = std::fabs(acc - r.mean_accuracy(student, task));
      worst = std::max(worst, d);
      o.require(d <= kEndpointTol, student + " endpoint " + task + " off by " + fixed(d));
    }
  }
  std::string s = "seq_class";
  for (double v : seq) s += " " + fixed(v, 3);
  s += ", pitch_class";
  for (double v : pitch) s += " " + fixed(v, 3);
  o.note("rho " + fixed(rho_s, 3) + "/" + fixed(rho_m, 3) + ", " + s + ", endpoint max diff " + fixed(worst));
  return o;
}

Outcome c7_accounting(const PipelineResult& r, const ModelConfig& cfg) {
  Outcome o;
  const DistillRunRecord *single_s = nullptr, *single_m = nullptr, *ens = nullptr;
  for (const auto& rec : r.records) {
    if (rec.method == "distil-speech") single_s = &rec;
    if (rec.method == "distil-music") single_m = &rec;
    if (rec.method == "ensemble") ens = &rec;
  }
  if (!single_s || !single_m || !ens) {
    o.require(false, "missing distillation records");
    return o;
  }
  const std::size_t d = cfg.d_model;
  const std::size_t want = 3 * (d * d + d);
  o.require(ens->param_count - single_s->param_count == want,
            "parameter gap " + std::to_string(ens->param_count - single_s->param_count) + " != " + std::to_string(want));
  o.require(ens->seconds_per_step > single_s->seconds_per_step && ens->seconds_per_step > single_m->seconds_per_step,
            "ensemble step not slower");
  bool case2 = false;
  for (const auto& row : r.resources.rows)
    if (row.method == "task_arithmetic_case2") case2 = row.seconds == 0.0 && row.seconds_per_step == 0.0;
  o.require(case2, "case 2 row missing or non-zero");
  o.note("params " + std::to_string(single_s->param_count) + " vs " + std::to_string(ens->param_count) +
         ", s/step " + fixed(single_s->seconds_per_step) + "/" + fixed(single_m->seconds_per_step) + " vs " +
         fixed(ens->seconds_per_step));
  return o;
}

Outcome c8_depth(const PipelineResult& two, const PipelineResult& three, std::size_t seeds) {
  Outcome o;
  std::size_t wins = 0;
  std::string detail;
  for (std::size_t i = 0; i < seeds; ++i) {
    double m2 = 0.0, m3 = 0.0;
    for (const auto& [task, acc] : two.accuracy.at("task_arithmetic")) {
      m2 += acc[i];
      m3 += three.accuracy.at("task_arithmetic").at(task)[i];
    }
    m2 /= 4.0;
    m3 /= 4.0;
    if (m3 >= m2) ++wins;
    detail += (detail.empty() ? "" : " ") + fixed(m2, 3) + "->" + fixed(m3, 3);
  }
  o.require(2 * wins > seeds, "3-layer mean at least 2-layer mean in " + std::to_string(wins) + " of " +
                                  std::to_string(seeds) + " seeds");
  o.note("per-seed mean accuracy 2->3 layers " + detail);
  return o;
}

void pipeline_criteria(const fs::path& work) {
  const PipelineConfig pc = experiment_config();
  const auto log = [](const std::string& s) { std::cerr << "  " << s << std::endl; };
  const auto t0 = Clock::now();
  TeacherPair teachers;
  PipelineResult two;
  std::string setup_error;
  try {
    teachers = train_teachers(pc, log);
    two = run_pipeline(pc, teachers, work / "layers2", log);
  } catch (const std::exception& e) {
    setup_error = e.what();
  }
  const double t_two = since(t0);
  auto guarded = [&](const std::string& id, const std::string& title, double secs, double limit,
                     const std::function<Outcome()>& body) {
    Outcome o;
    if (!setup_error.empty()) {
      o.require(false, "pipeline failed: " + setup_error);
    } else {
      try {
        o = body();
      } catch (const std::exception& e) {
        o.require(false, std::string("exception: ") + e.what());
      }
    }
    report(id, title, o, secs, limit);
  };
  guarded("C5", "teacher average collapses, task arithmetic does not", t_two, kC5Seconds, [&] { return c5_collapse(two); });
  guarded("C6", "interpolation sweep is monotone in lambda", t_two, 0, [&] { return c6_sweep(two); });
  guarded("C7", "training-cost accounting", t_two, 0, [&] { return c7_accounting(two, pc.model); });

  PipelineConfig deep = pc;
  deep.model.student_layers = 3;
  deep.ensemble = false;
  deep.sweep = false;
  PipelineResult three;
  if (setup_error.empty()) {
    try {
      three = run_pipeline(deep, teachers, work / "layers3", log);
    } catch (const std::exception& e) {
      setup_error = e.what();
    }
  }
  guarded("C8", "3-layer students at least match 2-layer students", since(t0), kC8Seconds,
          [&] { return c8_depth(two, three, pc.probe_seeds.size()); });
}

// Reduced budgets; the teacher floor is disabled so the run never aborts.
PipelineConfig smoke_config() {
  PipelineConfig pc;
  pc.teacher.max_steps = 20;
  pc.teacher.eval_every = 10;
  pc.teacher.dev_examples = 40;
  pc.teacher.warmup_steps = 5;
  pc.teacher.floor = 0.0;
  pc.distill_steps = 20;
  pc.distill_batch = 4;
  pc.probe.n_train = 120;
  pc.probe.n_test = 60;
  pc.probe.epochs = 3;
  pc.probe_seeds = {0, 1};
  pc.grid = {{0.3, 0.7}, {0.7, 0.3}};
  return pc;
}

std::vector<std::string> differing_files(const fs::path& a, const fs::path& b, const std::vector<std::string>& files) {
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  std::vector<std::string> diff;
  for (const auto& f : files)
    if (!fs::exists(a / f) || slurp(a / f) != slurp(b / f)) diff.push_back(f);
  return diff;
}

Outcome c9_determinism(const fs::path& work) {
  Outcome o;
  const PipelineConfig pc = smoke_config();
  for (const char* run : {"run_a", "run_b"}) run_pipeline(pc, train_teachers(pc), work / run);
  std::vector<std::string> compared;
  for (const auto& f : pipeline_artifacts(pc))
    if (f != "resources.csv") compared.push_back(f);  // wall-clock timings
  const auto diff = differing_files(work / "run_a", work / "run_b", compared);
  for (const auto& f : diff) o.require(false, f + " differs");
  o.note(std::to_string(compared.size() - diff.size()) + "/" + std::to_string(compared.size()) +
         " artifacts identical");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> groups;
  fs::path data = DISTMERGE_TEST_DATA;
  fs::path work;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if ((a == "--data" || a == "--work") && i + 1 < argc) {
      (a == "--data" ? data : work) = argv[++i];
    } else if (a == "core" || a == "pipeline" || a == "determinism") {
      groups.push_back(a);
    } else {
      std::cerr << "usage: distmerge_acceptance [core] [pipeline] [determinism] [--data DIR] [--work DIR]\n";
      return 2;
    }
  }
  if (groups.empty()) groups = {"core", "pipeline", "determinism"};
  const bool keep = !work.empty();
  if (!keep) work = scratch_dir("work");

  for (const auto& g : groups) {
    if (g == "core") {
      run("C1", "checkpoint format roundtrip and rejection", kC1Seconds, c1_format);
      run("C2", "finite-difference gradient checks", kC2Seconds, c2_autodiff);
      run("C3", "merge algebra", kC3Seconds, c3_merge);
      run("C4", "published table ranks and score formula", kC4Seconds, [&] { return c4_table(data); });
    } else if (g == "pipeline") {
      pipeline_criteria(work);
    } else {
      run("C9", "pipeline determinism", 0, [&] { return c9_determinism(work / "determinism"); });
    }
  }
  if (!keep) fs::remove_all(work);
  return failures == 0 ? 0 : 1;
}
