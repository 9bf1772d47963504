// Copyright 2026 The distmerge Authors
// SPDX-License-Identifier: Apache-2.0

// distmerge: distill, extract task vectors, merge, probe, score.
//
// Exit codes: 0 ok, 1 internal, 2 usage, 3 i/o, 4 file format, 5 precondition.

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <numeric>
#include <optional>
#include <sstream>

#include "distmerge/checkpoint.hpp"
#include "distmerge/distill.hpp"
#include "distmerge/merge.hpp"
#include "distmerge/pipeline.hpp"
#include "distmerge/probe.hpp"
#include "distmerge/scoring.hpp"
#include "distmerge/synth.hpp"
#include "manifest.hpp"

namespace fs = std::filesystem;
using namespace distmerge;
using distmerge::cli::ManifestEntry;

namespace {

enum Exit { kOk = 0, kInternal = 1, kUsage = 2, kIo = 3, kFormat = 4, kPrecondition = 5 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct PreconditionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string num(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) throw IoError("cannot write " + p.string());
}

fs::path out_dir(const fs::path& file) {
  fs::path dir = file.parent_path();
  if (dir.empty()) dir = ".";
  fs::create_directories(dir);
  return dir;
}

/// key = value lines; '#' starts a comment.
std::map<std::string, std::string> read_kv(const fs::path& p) {
  std::map<std::string, std::string> kv;
  std::stringstream ss(read_text(p));
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  };
  while (std::getline(ss, line)) {
    ++lineno;
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError(p.string() + ":" + std::to_string(lineno) + ": expected key = value");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

struct Common {
  std::string config;
  std::vector<std::string> set;  // key=value overrides

  PipelineConfig load() const {
    std::map<std::string, std::string> kv;
    if (!config.empty()) kv = read_kv(config);
    for (const auto& s : set) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
      kv[s.substr(0, eq)] = s.substr(eq + 1);
    }
    return PipelineConfig::from_kv(kv);
  }
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "key = value config file");
  sub->add_option("--set", c.set, "override one config key (key=value)");
}

ParameterSet load_model(const fs::path& p, const ModelConfig& cfg) {
  ParameterSet ps = read_checkpoint(p);
  if (!ps.meta.arch_id.empty() && ps.meta.arch_id != cfg.arch_id()) {
    throw PreconditionError(p.string() + ": arch " + ps.meta.arch_id + " does not match configured arch " +
                            cfg.arch_id());
  }
  return ps;
}

std::string teacher_label(const ParameterSet& t, const fs::path& p) {
  auto it = t.meta.extra.find("domain");
  if (it != t.meta.extra.end()) {
    if (it->second == "S") return "speech";
    if (it->second == "M") return "music";
  }
  return p.stem().string();
}

ManifestEntry entry(const std::string& cmdline, const PipelineConfig* pc, Clock::time_point start) {
  ManifestEntry e;
  e.command_line = cmdline;
  if (pc) e.config = pc->to_kv();
  e.wall_clock_seconds = since(start);
  return e;
}

void add_input(ManifestEntry& e, const fs::path& p) { e.inputs[p.string()] = sha256_file(p); }

std::string record_json(const DistillRunRecord& r) {
  nlohmann::ordered_json j;
  j["method"] = r.method;
  j["teachers"] = r.teacher_count;
  j["steps"] = r.steps;
  j["seconds"] = r.seconds;
  j["seconds_per_step"] = r.seconds_per_step;
  j["peak_bytes"] = r.peak_bytes;
  j["params"] = r.param_count;
  j["init_digest"] = r.student.meta.init_digest;
  j["loss_curve"] = r.loss_curve;
  return j.dump(2) + "\n";
}

DistillRunRecord record_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  DistillRunRecord r;
  r.method = j.at("method").get<std::string>();
  r.teacher_count = j.at("teachers").get<std::size_t>();
  r.steps = j.at("steps").get<std::size_t>();
  r.seconds = j.at("seconds").get<double>();
  r.seconds_per_step = j.at("seconds_per_step").get<double>();
  r.peak_bytes = j.at("peak_bytes").get<std::size_t>();
  r.param_count = j.at("params").get<std::size_t>();
  r.loss_curve = j.at("loss_curve").get<std::vector<double>>();
  return r;
}

std::map<std::string, double> read_baselines(const fs::path& p) {
  std::map<std::string, double> b;
  std::stringstream ss(read_text(p));
  std::string line;
  bool header = false;
  while (std::getline(ss, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto f = split(line, ',');
    if (!header) {
      if (f != std::vector<std::string>{"task", "value"}) throw UsageError("baselines csv: expected header task,value");
      header = true;
      continue;
    }
    if (f.size() != 2) throw UsageError("baselines csv: expected 2 fields in '" + line + "'");
    b[f[0]] = std::stod(f[1]);
  }
  return b;
}

struct ScoreOptions {
  std::string tasks, models, exclude, references, baselines;
};

std::vector<std::string> pick(const std::string& list, const std::vector<std::string>& all) {
  return list.empty() ? all : split(list, ',');
}

/// Text report: one row per model with both aggregates.
std::string score_report(const ScoreTable& table, const ScoreOptions& o, std::string* csv) {
  const auto tasks = pick(o.tasks, table.tasks());
  auto models = pick(o.models, table.models());
  const auto excl = split(o.exclude, ',');
  std::erase_if(models, [&](const std::string& m) { return std::find(excl.begin(), excl.end(), m) != excl.end(); });
  const auto refs = pick(o.references, models);
  std::map<std::string, double> baselines;
  if (!o.baselines.empty()) baselines = read_baselines(o.baselines);
  const auto best = best_reference(table, refs, tasks);
  const auto ranks = rank_average(table, models, tasks);
  std::ostringstream os, cs;
  std::size_t w = 5;
  for (const auto& m : models) w = std::max(w, m.size());
  os << std::left << std::setw(static_cast<int>(w) + 2) << "model" << std::right << std::setw(12) << "superb"
     << std::setw(14) << "rank_avg" << '\n';
  cs << "model,superb,rank_average\n";
  for (const auto& m : models) {
    const double s = superb_score(table, m, tasks, best, baselines);
    os << std::left << std::setw(static_cast<int>(w) + 2) << m << std::right << std::setw(12) << fixed(s, 2)
       << std::setw(14) << fixed(ranks.at(m), 2) << '\n';
    cs << m << ',' << num(s) << ',' << num(ranks.at(m)) << '\n';
  }
  os << "tasks: ";
  for (std::size_t i = 0; i < tasks.size(); ++i) os << (i ? "," : "") << tasks[i];
  os << "\nreferences: ";
  for (std::size_t i = 0; i < refs.size(); ++i) os << (i ? "," : "") << refs[i];
  os << '\n';
  if (csv) *csv = cs.str();
  return os.str();
}

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
  std::vector<std::uint64_t> out;
  for (const auto& x : split(s, ',')) out.push_back(std::stoull(x));
  if (out.empty()) throw UsageError("empty seed list");
  return out;
}

std::vector<std::string> all_task_names() {
  std::vector<std::string> t;
  for (const auto& i : all_tasks()) t.push_back(i.name);
  return t;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distillation, task vectors and model merging on synthetic audio-like signals"};
  app.set_version_flag("--version", cli::tool_version());
  app.require_subcommand(1);
  std::string cmdline;
  for (int i = 0; i < argc; ++i) cmdline += (i ? " " : "") + std::string(argv[i]);
  const auto start = Clock::now();
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "suppress progress lines on stderr");
  auto progress = [&](const std::string& s) {
    if (!quiet) std::cerr << s << std::endl;
  };

  // gen-data
  std::string gd_domain = "S", gd_split = "train", gd_out;
  std::size_t gd_n = 100;
  std::uint64_t gd_seed = 0;
  auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset container");
  gen->add_option("--domain", gd_domain, "S, M or A")->required();
  gen->add_option("--split", gd_split, "train, dev or test");
  gen->add_option("--n", gd_n, "number of examples");
  gen->add_option("--seed", gd_seed);
  gen->add_option("--out", gd_out)->required();

  // train-teacher
  Common tt_common;
  std::string tt_domain, tt_out;
  std::uint64_t tt_seed = 1;
  auto* tt = app.add_subcommand("train-teacher", "supervised teacher on one domain");
  add_common(tt, tt_common);
  tt->add_option("--domain", tt_domain, "S or M")->required();
  tt->add_option("--seed", tt_seed);
  tt->add_option("--out", tt_out)->required();

  // distill
  Common ds_common;
  std::vector<std::string> ds_teachers;
  std::string ds_init, ds_data, ds_out;
  std::optional<std::size_t> ds_steps;
  std::optional<std::uint64_t> ds_seed;
  auto* ds = app.add_subcommand("distill", "distill one teacher (or two: ensemble) into a student");
  add_common(ds, ds_common);
  ds->add_option("--teacher", ds_teachers, "teacher checkpoint; repeat for ensemble")->required();
  ds->add_option("--init-from", ds_init, "checkpoint whose trunk seeds the student");
  ds->add_option("--data", ds_data, "mixture, e.g. S or S:0.5,M:0.5");
  ds->add_option("--steps", ds_steps);
  ds->add_option("--seed", ds_seed);
  ds->add_option("--out", ds_out)->required();

  // task-vector
  std::string tv_ft, tv_base, tv_out, tv_source;
  bool tv_heads = false;
  auto* tv = app.add_subcommand("task-vector", "theta_ft - theta_0");
  tv->add_option("--ft", tv_ft)->required();
  tv->add_option("--base", tv_base)->required();
  tv->add_option("--source", tv_source, "label, defaults to the student's teacher");
  tv->add_flag("--include-heads", tv_heads);
  tv->add_option("--out", tv_out)->required();

  // merge
  std::string mg_base, mg_out, mg_mode = "linear", mg_trim = "global";
  std::vector<std::string> mg_tvs;
  double mg_density = 0.2;
  bool mg_heads = false;
  auto* mg = app.add_subcommand("merge", "theta_0 plus weighted task vectors");
  mg->add_option("--base", mg_base)->required();
  mg->add_option("--tv", mg_tvs, "task vector file:lambda; repeatable")->required();
  mg->add_option("--mode", mg_mode, "linear or ties");
  mg->add_option("--density", mg_density, "ties trim density in (0, 1]");
  mg->add_option("--trim", mg_trim, "global or per-tensor");
  mg->add_flag("--include-heads", mg_heads);
  mg->add_option("--out", mg_out)->required();

  // avg-merge
  std::vector<std::string> av_models;
  std::string av_out;
  bool av_unsafe = false;
  auto* av = app.add_subcommand("avg-merge", "element-wise mean of checkpoints");
  av->add_option("--model", av_models)->required();
  av->add_flag("--unsafe-allow-digest-mismatch", av_unsafe, "average models without a shared initialization");
  av->add_option("--out", av_out)->required();

  // probe
  Common pr_common;
  std::string pr_model, pr_task, pr_out;
  std::uint64_t pr_seed = 0;
  auto* pr = app.add_subcommand("probe", "linear probe on frozen mean-pooled features");
  add_common(pr, pr_common);
  pr->add_option("--model", pr_model)->required();
  pr->add_option("--task", pr_task)->required();
  pr->add_option("--seed", pr_seed);
  pr->add_option("--out", pr_out, "json record");

  // score
  std::string sc_table, sc_out;
  ScoreOptions sc;
  auto* scs = app.add_subcommand("score", "SUPERB-style score and rank average of a score table");
  scs->add_option("--table", sc_table, "csv with header model,task,value,direction")->required();
  scs->add_option("--tasks", sc.tasks, "comma-separated; default all");
  scs->add_option("--models", sc.models, "comma-separated; default all");
  scs->add_option("--exclude", sc.exclude, "comma-separated models to drop");
  scs->add_option("--references", sc.references, "models defining the per-task best; default the ranked models");
  scs->add_option("--baselines", sc.baselines, "csv with header task,value");
  scs->add_option("--out", sc_out, "csv output");

  // sweep
  Common sw_common;
  std::string sw_base, sw_s, sw_m, sw_grid, sw_tasks, sw_seeds = "0", sw_out;
  auto* sw = app.add_subcommand("sweep", "probe linear merges over an interpolation grid");
  add_common(sw, sw_common);
  sw->add_option("--base", sw_base)->required();
  sw->add_option("--tv-s", sw_s)->required();
  sw->add_option("--tv-m", sw_m)->required();
  sw->add_option("--grid", sw_grid, "l1:l2,...");
  sw->add_option("--tasks", sw_tasks);
  sw->add_option("--seeds", sw_seeds, "probe seeds, comma-separated");
  sw->add_option("--out", sw_out)->required();

  // compat
  std::string cp_a, cp_b;
  auto* cp = app.add_subcommand("compat", "key, shape and digest comparison of two checkpoints");
  cp->add_option("a", cp_a)->required();
  cp->add_option("b", cp_b)->required();

  // report
  std::string rp_dir, rp_refs = "teacher_speech,teacher_music", rp_exclude = "teacher_average";
  auto* rp = app.add_subcommand("report", "consolidated tables from a pipeline directory");
  rp->add_option("--dir", rp_dir)->required();
  rp->add_option("--references", rp_refs);
  rp->add_option("--exclude", rp_exclude, "models left out of the rank average");

  // pipeline
  Common pl_common;
  std::string pl_out;
  auto* pl = app.add_subcommand("pipeline", "teachers, distillations, merges and probes in one process");
  add_common(pl, pl_common);
  pl->add_option("--out", pl_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (gen->parsed()) {
      const Domain d = parse_domain(gd_domain);
      const Split s = parse_split(gd_split);
      const auto ex = generate(d, s, gd_n, gd_seed);
      const fs::path out(gd_out);
      const auto dir = out_dir(out);
      write_container(dataset_container(ex, {{"domain", gd_domain}, {"split", gd_split}, {"seed", std::to_string(gd_seed)}}), out);
      auto e = entry(cmdline, nullptr, start);
      e.config = {{"domain", gd_domain}, {"split", gd_split}, {"n", std::to_string(gd_n)}};
      e.seeds = {{"data", std::to_string(gd_seed)}};
      cli::record_artifact(dir, out.filename().string(), e, {out});
      std::cout << "wrote " << gd_n << " examples to " << out.string() << '\n';
    } else if (tt->parsed()) {
      const PipelineConfig pc = tt_common.load();
      TeacherBudget b = pc.teacher;
      b.on_eval = [&](std::size_t step, const std::map<std::string, double>& acc) {
        std::string line = "step " + std::to_string(step);
        for (const auto& [t, a] : acc) line += " " + t + "=" + fixed(a, 4);
        progress(line);
      };
      const Domain d = parse_domain(tt_domain);
      TeacherResult r;
      try {
        r = train_teacher(pc.model, d, b, tt_seed);
      } catch (const TrainingError& e) {
        throw PreconditionError(e.what());
      }
      const fs::path out(tt_out);
      const auto dir = out_dir(out);
      write_checkpoint(r.teacher, out);
      auto e = entry(cmdline, &pc, start);
      e.seeds = {{"teacher", std::to_string(tt_seed)}};
      cli::record_artifact(dir, out.filename().string(), e, {out});
      std::cout << "teacher " << tt_domain << ": " << r.steps << " steps, " << fixed(r.seconds, 1) << " s";
      for (const auto& [t, a] : r.dev_accuracy) std::cout << ", " << t << " " << fixed(a, 4);
      std::cout << '\n';
    } else if (ds->parsed()) {
      PipelineConfig pc = ds_common.load();
      if (ds_teachers.size() > 2) throw UsageError("distill: at most two --teacher flags");
      if (ds_steps) pc.distill_steps = *ds_steps;
      if (ds_seed) pc.distill_seed = *ds_seed;
      if (!ds_data.empty()) pc.data = parse_mixture(ds_data);
      DistillRecipe rc;
      for (const auto& t : ds_teachers) {
        ParameterSet p = load_model(t, pc.model);
        const std::string label = teacher_label(p, t);
        rc.teachers.push_back({std::move(p), label});
      }
      if (!ds_init.empty()) rc.init_from = load_model(ds_init, pc.model);
      rc.student_cfg = pc.model;
      rc.data = pc.data;
      rc.steps = pc.distill_steps;
      rc.batch = pc.distill_batch;
      rc.lr = pc.distill_lr;
      rc.loss_lambda = pc.loss_lambda;
      rc.seed = pc.distill_seed;
      DistillRunRecord r;
      try {
        r = distill(rc);
      } catch (const TrainingError& e) {
        throw PreconditionError(e.what());
      }
      const fs::path out(ds_out);
      const auto dir = out_dir(out);
      const fs::path init = dir / (out.stem().string() + ".init.safetensors");
      const fs::path record = dir / (out.stem().string() + ".record.json");
      write_checkpoint(r.student, out);
      write_checkpoint(r.init, init);
      write_text(record, record_json(r));
      auto e = entry(cmdline, &pc, start);
      e.seeds = {{"distill", std::to_string(pc.distill_seed)}};
      for (const auto& t : ds_teachers) add_input(e, t);
      if (!ds_init.empty()) add_input(e, ds_init);
      cli::record_artifact(dir, out.filename().string(), e, {out, init, record});
      std::cout << r.method << ": " << r.steps << " steps, " << fixed(r.seconds, 1) << " s ("
                << fixed(r.seconds_per_step * 1000.0, 2) << " ms/step), " << r.param_count << " params, final loss "
                << (r.loss_curve.empty() ? std::string("-") : fixed(r.loss_curve.back(), 4)) << '\n';
    } else if (tv->parsed()) {
      const ParameterSet ft = read_checkpoint(tv_ft);
      const ParameterSet base = read_checkpoint(tv_base);
      std::string source = tv_source;
      if (source.empty()) {
        auto it = ft.meta.extra.find("teachers");
        source = it != ft.meta.extra.end() ? it->second : fs::path(tv_ft).stem().string();
      }
      const TaskVector v = task_vector(ft, base, source, tv_heads);
      const fs::path out(tv_out);
      const auto dir = out_dir(out);
      write_task_vector(v, out);
      auto e = entry(cmdline, nullptr, start);
      add_input(e, tv_ft);
      add_input(e, tv_base);
      cli::record_artifact(dir, out.filename().string(), e, {out});
      std::cout << "task vector '" << source << "': " << v.params.parameter_count() << " params\n";
    } else if (mg->parsed()) {
      MergeSpec spec;
      spec.base = read_checkpoint(mg_base);
      spec.mode = parse_mode(mg_mode);
      spec.ties_density = mg_density;
      if (mg_trim == "global") {
        spec.trim = TrimScope::kGlobal;
      } else if (mg_trim == "per-tensor") {
        spec.trim = TrimScope::kPerTensor;
      } else {
        throw UsageError("--trim expects global or per-tensor");
      }
      spec.include_heads = mg_heads;
      auto e = entry(cmdline, nullptr, start);
      add_input(e, mg_base);
      for (const auto& arg : mg_tvs) {
        const auto colon = arg.rfind(':');
        if (colon == std::string::npos) throw UsageError("--tv expects file:lambda, got '" + arg + "'");
        const std::string file = arg.substr(0, colon);
        double lambda = 0.0;
        try {
          std::size_t used = 0;
          lambda = std::stod(arg.substr(colon + 1), &used);
          if (used != arg.size() - colon - 1) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
          throw UsageError("--tv: bad lambda in '" + arg + "'");
        }
        spec.terms.push_back({read_task_vector(file), lambda});
        add_input(e, file);
      }
      for (const auto& w : validate_spec(spec)) std::cerr << "warning: " << w << '\n';
      const ParameterSet merged = merge(spec);
      const fs::path out(mg_out);
      const auto dir = out_dir(out);
      write_checkpoint(merged, out);
      e.config = {{"mode", mg_mode}, {"density", num(mg_density)}, {"trim", mg_trim}};
      cli::record_artifact(dir, out.filename().string(), e, {out});
      std::cout << "merged " << spec.terms.size() << " task vectors (" << mg_mode << ") into " << out.string() << '\n';
    } else if (av->parsed()) {
      std::vector<ParameterSet> models;
      auto e = entry(cmdline, nullptr, start);
      for (const auto& m : av_models) {
        models.push_back(read_checkpoint(m));
        add_input(e, m);
      }
      const ParameterSet avg = merge_average(models, av_unsafe);
      const fs::path out(av_out);
      const auto dir = out_dir(out);
      write_checkpoint(avg, out);
      e.config = {{"unsafe_allow_digest_mismatch", av_unsafe ? "true" : "false"}};
      cli::record_artifact(dir, out.filename().string(), e, {out});
      std::cout << "averaged " << models.size() << " models into " << out.string() << '\n';
    } else if (pr->parsed()) {
      const PipelineConfig pc = pr_common.load();
      const ParameterSet model = load_model(pr_model, pc.model);
      ProbeSuite suite(pc.probe);
      const ProbeResult r = suite.probe(model, pc.model, pr_task, pr_seed);
      std::cout << pr_task << " " << fixed(r.accuracy, 4) << '\n';
      if (!pr_out.empty()) {
        const fs::path out(pr_out);
        const auto dir = out_dir(out);
        nlohmann::ordered_json j;
        j["model"] = pr_model;
        j["task"] = pr_task;
        j["seed"] = pr_seed;
        j["accuracy"] = r.accuracy;
        write_text(out, j.dump(2) + "\n");
        auto e = entry(cmdline, &pc, start);
        e.seeds = {{"probe", std::to_string(pr_seed)}};
        add_input(e, pr_model);
        cli::record_artifact(dir, out.filename().string(), e, {out});
      }
    } else if (scs->parsed()) {
      ScoreTable table;
      try {
        table = ScoreTable::parse_csv(read_text(sc_table));
      } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFormat;
      }
      std::string csv;
      std::cout << score_report(table, sc, &csv);
      if (!sc_out.empty()) {
        const fs::path out(sc_out);
        const auto dir = out_dir(out);
        write_text(out, csv);
        auto e = entry(cmdline, nullptr, start);
        add_input(e, sc_table);
        e.config = {{"tasks", sc.tasks}, {"models", sc.models}, {"exclude", sc.exclude}, {"references", sc.references}};
        cli::record_artifact(dir, out.filename().string(), e, {out});
      }
    } else if (sw->parsed()) {
      const PipelineConfig pc = sw_common.load();
      const ParameterSet base = load_model(sw_base, pc.model);
      const TaskVector s = read_task_vector(sw_s), m = read_task_vector(sw_m);
      const auto grid = sw_grid.empty() ? pc.grid : parse_grid(sw_grid);
      const auto tasks = sw_tasks.empty() ? all_task_names() : split(sw_tasks, ',');
      ProbeSuite suite(pc.probe);
      const auto points = sweep(base, s, m, pc.model, grid, tasks, parse_seed_list(sw_seeds), suite);
      const fs::path out(sw_out);
      const auto dir = out_dir(out);
      const std::string csv = sweep_csv(points, tasks);
      write_text(out, csv);
      auto e = entry(cmdline, &pc, start);
      e.seeds = {{"probe", sw_seeds}};
      add_input(e, sw_base);
      add_input(e, sw_s);
      add_input(e, sw_m);
      cli::record_artifact(dir, out.filename().string(), e, {out});
      std::cout << csv;
    } else if (cp->parsed()) {
      std::cout << compat_check(read_checkpoint(cp_a), read_checkpoint(cp_b)).to_text();
    } else if (rp->parsed()) {
      const fs::path dir(rp_dir);
      if (!fs::is_directory(dir)) throw IoError("report: no directory " + dir.string());
      std::ostringstream text;
      std::vector<fs::path> outputs;
      if (fs::exists(dir / "scores.csv")) {
        const ScoreTable table = ScoreTable::read_csv(dir / "scores.csv");
        ScoreOptions o;
        o.exclude = rp_exclude;
        o.references = rp_refs;
        std::ostringstream t1;
        t1 << "model";
        for (const auto& t : table.tasks()) t1 << ',' << t;
        t1 << '\n';
        text << "Probe accuracy (%)\n";
        std::size_t w = 5;
        for (const auto& m : table.models()) w = std::max(w, m.size());
        text << std::left << std::setw(static_cast<int>(w) + 2) << "model" << std::right;
        for (const auto& t : table.tasks()) text << std::setw(13) << t;
        text << '\n';
        for (const auto& m : table.models()) {
          t1 << m;
          text << std::left << std::setw(static_cast<int>(w) + 2) << m << std::right;
          for (const auto& t : table.tasks()) {
            t1 << ',' << num(table.value(m, t));
            text << std::setw(13) << fixed(table.value(m, t), 2);
          }
          t1 << '\n';
          text << '\n';
        }
        std::string agg;
        text << "\nAggregates\n" << score_report(table, o, &agg);
        write_text(dir / "table1.csv", t1.str());
        write_text(dir / "aggregates.csv", agg);
        outputs.push_back(dir / "table1.csv");
        outputs.push_back(dir / "aggregates.csv");
      }
      std::vector<DistillRunRecord> records;
      std::vector<fs::path> record_files;
      for (const auto& f : fs::directory_iterator(dir)) {
        const std::string n = f.path().filename().string();
        if (n.size() > 12 && n.ends_with(".record.json")) record_files.push_back(f.path());
      }
      std::sort(record_files.begin(), record_files.end());
      for (const auto& f : record_files) records.push_back(record_from_json(read_text(f)));
      std::string resources_csv;
      if (!records.empty()) {
        const auto rep = resource_report(records);
        text << "\nTraining cost\n" << rep.to_text();
        resources_csv = rep.to_csv();
      } else if (fs::exists(dir / "resources.csv")) {
        resources_csv = read_text(dir / "resources.csv");
        text << "\nTraining cost\n" << resources_csv;
      }
      if (!resources_csv.empty()) {
        write_text(dir / "table2.csv", resources_csv);
        outputs.push_back(dir / "table2.csv");
      }
      if (fs::exists(dir / "sweep.csv")) text << "\nInterpolation sweep\n" << read_text(dir / "sweep.csv");
      if (outputs.empty()) throw PreconditionError("report: " + dir.string() + " holds no scores.csv or run records");
      write_text(dir / "report.txt", text.str());
      outputs.push_back(dir / "report.txt");
      cli::record_artifact(dir, "report.txt", entry(cmdline, nullptr, start), outputs);
      std::cout << text.str();
    } else if (pl->parsed()) {
      const PipelineConfig pc = pl_common.load();
      TeacherPair teachers;
      try {
        teachers = train_teachers(pc, progress);
        const fs::path out(pl_out);
        const PipelineResult r = run_pipeline(pc, teachers, out, progress);
        std::vector<fs::path> outputs;
        for (const auto& f : pipeline_artifacts(pc)) outputs.push_back(out / f);
        auto e = entry(cmdline, &pc, start);
        e.seeds = {{"teacher", std::to_string(pc.teacher_seed)}, {"distill", std::to_string(pc.distill_seed)}};
        cli::record_artifact(out, "pipeline", e, outputs);
        std::cout << r.score_table().to_csv();
      } catch (const TrainingError& e) {
        throw PreconditionError(e.what());
      }
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const CheckpointError& e) {
    std::cerr << (e.kind() == CheckpointError::Kind::kIo ? "i/o error: " : "format error: ") << e.what() << '\n';
    return e.kind() == CheckpointError::Kind::kIo ? kIo : kFormat;
  } catch (const PreconditionError& e) {
    std::cerr << "precondition failed: " << e.what() << '\n';
    return kPrecondition;
  } catch (const MergeError& e) {
    std::cerr << "precondition failed: " << e.what() << '\n';
    return kPrecondition;
  } catch (const ShapeError& e) {
    std::cerr << "precondition failed: " << e.what() << '\n';
    return kPrecondition;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kInternal;
  }
  return kOk;
}
