// Copyright 2026 The distmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include <random>

#include "distmerge/distill.hpp"
#include "distmerge/merge.hpp"
#include "distmerge/model.hpp"
#include "distmerge/ops.hpp"

namespace {

using namespace distmerge;

Tensor uniform(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  Tensor t(std::move(shape));
  for (float& v : t.data()) v = u(rng);
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Var a = constant(uniform({16, 98, n}, 1)), b = constant(uniform({n, n}, 2));
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b).value().ptr());
  state.SetItemsProcessed(state.iterations() * 16 * 98 * static_cast<std::int64_t>(n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256);

void BM_TeacherForward(benchmark::State& state) {
  const ModelConfig cfg;
  const ParameterSet teacher = build_model(cfg, Role::kTeacher, 1);
  const Tensor signals = uniform({16, 2000}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(forward_batch(teacher, cfg, signals).back().ptr());
}
BENCHMARK(BM_TeacherForward)->Unit(benchmark::kMillisecond);

void BM_DistillStep(benchmark::State& state) {
  const ModelConfig cfg;
  DistillRecipe r;
  r.teachers.push_back({build_model(cfg, Role::kTeacher, 1), "speech"});
  if (state.range(0) == 2) r.teachers.push_back({build_model(cfg, Role::kTeacher, 2), "music"});
  r.student_cfg = cfg;
  r.steps = 1;
  for (auto _ : state) benchmark::DoNotOptimize(distill(r).param_count);
}
BENCHMARK(BM_DistillStep)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);

void BM_Merge(benchmark::State& state) {
  const ModelConfig cfg;
  const ParameterSet teacher = build_model(cfg, Role::kTeacher, 1);
  MergeSpec spec;
  spec.base = init_student_from_teacher(teacher, cfg, 1);
  for (std::uint64_t s : {2, 3}) {
    ParameterSet ft = init_student_from_teacher(build_model(cfg, Role::kTeacher, s), cfg, s);
    ft.meta.init_digest = init_digest(spec.base);
    spec.terms.push_back({task_vector(ft, spec.base, std::to_string(s)), 0.5});
  }
  spec.mode = state.range(0) == 0 ? MergeMode::kLinear : MergeMode::kTies;
  for (auto _ : state) benchmark::DoNotOptimize(merge(spec).entries.size());
}
BENCHMARK(BM_Merge)->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);

void BM_CheckpointRoundtrip(benchmark::State& state) {
  const ParameterSet teacher = build_model(ModelConfig{}, Role::kTeacher, 1);
  for (auto _ : state) {
    const auto bytes = encode_container(to_container(teacher));
    benchmark::DoNotOptimize(from_container(decode_container(bytes)).entries.size());
    state.SetBytesProcessed(state.bytes_processed() + static_cast<std::int64_t>(bytes.size()));
  }
}
BENCHMARK(BM_CheckpointRoundtrip)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
