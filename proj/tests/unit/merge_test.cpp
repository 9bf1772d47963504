// Copyright 2026 The distmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <random>

#include "distmerge/merge.hpp"
#include "distmerge/model.hpp"

using namespace distmerge;

namespace {

ParameterSet vec(std::vector<float> w, ParamKind kind = ParamKind::kStudent) {
  ParameterSet ps;
  const std::size_t n = w.size();
  ps.entries["w"] = Tensor({n}, std::move(w));
  ps.meta.kind = kind;
  return ps;
}

// A base and a fine-tuned set that records the base as its initialization.
ParameterSet finetuned_from(const ParameterSet& base, std::vector<float> w) {
  ParameterSet ft = vec(std::move(w));
  ft.meta.init_digest = init_digest(base);
  return ft;
}

TaskVector tv_of(const ParameterSet& base, std::vector<float> delta, const std::string& source) {
  TaskVector tv;
  tv.source = source;
  const std::size_t n = delta.size();
  tv.params.entries["w"] = Tensor({n}, std::move(delta));
  tv.params.meta.kind = ParamKind::kTaskVector;
  tv.params.meta.init_digest = init_digest(base);
  return tv;
}

ParameterSet random_model(std::uint64_t seed, std::size_t n = 257) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d(0.0f, 1.0f);
  ParameterSet ps;
  for (const char* name : {"a.weight", "b.weight", "heads.0.weight"}) {
    Tensor t({n});
    for (float& v : t.data()) v = d(rng);
    ps.entries[name] = std::move(t);
  }
  ps.meta.kind = ParamKind::kStudent;
  return ps;
}

}  // namespace

TEST_CASE("task vector is the elementwise difference") {
  const ParameterSet base = vec({0.5f, 1.0f});
  const TaskVector tv = task_vector(finetuned_from(base, {1.0f, 2.0f}), base, "speech");
  CHECK(tv.params.entries.at("w")[0] == 0.5f);
  CHECK(tv.params.entries.at("w")[1] == 1.0f);
  CHECK(tv.params.meta.kind == ParamKind::kTaskVector);
  CHECK(tv.source == "speech");
  const TaskVector zero = task_vector(finetuned_from(base, {0.5f, 1.0f}), base, "x");
  CHECK(zero.params.entries.at("w")[0] == 0.0f);
  CHECK(zero.params.entries.at("w")[1] == 0.0f);
}

TEST_CASE("task vector from a different initialization is rejected") {
  const ParameterSet base = vec({0.5f, 1.0f});
  const ParameterSet other = vec({0.25f, 1.0f});
  try {
    task_vector(finetuned_from(other, {1.0f, 2.0f}), base, "s");
    FAIL("expected divergent initialization");
  } catch (const MergeError& e) {
    CHECK(e.kind() == MergeError::Kind::kDivergentInit);
    CHECK(std::string(e.what()).find("divergent initialization") != std::string::npos);
  }
}

TEST_CASE("key and shape mismatches list the offending keys") {
  const ParameterSet base = vec({0.5f, 1.0f});
  ParameterSet ft = finetuned_from(base, {1.0f, 2.0f});
  ft.entries["extra"] = Tensor({1});
  try {
    task_vector(ft, base, "s");
    FAIL("expected key mismatch");
  } catch (const MergeError& e) {
    CHECK(e.kind() == MergeError::Kind::kKeyMismatch);
    CHECK(std::string(e.what()).find("extra") != std::string::npos);
  }
  ParameterSet wide = finetuned_from(base, {1.0f, 2.0f, 3.0f});
  CHECK_THROWS_AS(task_vector(wide, base, "s"), MergeError);
}

TEST_CASE("linear merge of orthogonal task vectors") {
  const ParameterSet base = vec({0.0f, 0.0f});
  MergeSpec spec;
  spec.base = base;
  spec.terms = {{tv_of(base, {1, 0}, "speech"), 0.9}, {tv_of(base, {0, 1}, "music"), 0.1}};
  const ParameterSet m = merge_linear(spec);
  CHECK(m.entries.at("w")[0] == 0.9f);
  CHECK(m.entries.at("w")[1] == 0.1f);
  CHECK(m.meta.kind == ParamKind::kMerged);
  CHECK(m.meta.init_digest == init_digest(base));
  CHECK(m.meta.extra.at("lambdas") == "0.9,0.1");
  CHECK(m.meta.extra.at("terms") == "speech,music");
  CHECK(validate_spec(spec).empty());
  spec.terms[1].lambda = 0.5;
  CHECK(validate_spec(spec).size() == 1);
}

TEST_CASE("reconstruction, zero-lambda identity and term-order invariance") {
  const ParameterSet base = random_model(1);
  ParameterSet ft = random_model(2);
  ft.meta.init_digest = init_digest(base);
  ParameterSet ft2 = random_model(3);
  ft2.meta.init_digest = init_digest(base);
  const TaskVector a = task_vector(ft, base, "a"), b = task_vector(ft2, base, "b");

  MergeSpec spec;
  spec.base = base;
  spec.terms = {{a, 1.0}};
  const ParameterSet rec = merge_linear(spec);
  CHECK_FALSE(rec.entries.count("heads.0.weight"));
  for (const auto& [name, t] : rec.entries)
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(std::abs(t[i] - ft.entries.at(name)[i]) <= 1e-6f);

  spec.terms = {{a, 0.0}, {b, 0.0}};
  const ParameterSet zero = merge_linear(spec);
  for (const auto& [name, t] : zero.entries) CHECK(t.bit_equal(base.entries.at(name)));

  spec.terms = {{a, 0.3}, {b, 0.7}};
  const ParameterSet ab = merge_linear(spec);
  spec.terms = {{b, 0.7}, {a, 0.3}};
  const ParameterSet ba = merge_linear(spec);
  for (const auto& [name, t] : ab.entries)
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(std::abs(t[i] - ba.entries.at(name)[i]) <= 1e-6f);
}

TEST_CASE("ties hand-traced case") {
  const ParameterSet base = vec({0, 0, 0});
  MergeSpec spec;
  spec.base = base;
  spec.mode = MergeMode::kTies;
  spec.ties_density = 2.0 / 3.0;
  spec.terms = {{tv_of(base, {1.0f, -2.0f, 0.1f}, "a"), 1.0}, {tv_of(base, {-1.5f, 1.0f, 0.2f}, "b"), 1.0}};
  const ParameterSet m = merge(spec);
  CHECK(m.entries.at("w")[0] == -1.5f);
  CHECK(m.entries.at("w")[1] == -2.0f);
  CHECK(m.entries.at("w")[2] == 0.0f);
  CHECK(m.meta.extra.at("merge_mode") == "ties");
}

TEST_CASE("ties with one term at density 1 equals the linear merge") {
  const ParameterSet base = random_model(4);
  ParameterSet ft = random_model(5);
  ft.meta.init_digest = init_digest(base);
  MergeSpec spec;
  spec.base = base;
  spec.terms = {{task_vector(ft, base, "a"), 1.0}};
  const ParameterSet lin = merge_linear(spec);
  spec.mode = MergeMode::kTies;
  spec.ties_density = 1.0;
  const ParameterSet ties = merge_ties(spec);
  for (const auto& [name, t] : lin.entries) CHECK(t.bit_equal(ties.entries.at(name)));
}

TEST_CASE("ties on zero task vectors leaves the base") {
  const ParameterSet base = vec({1, 2, 3});
  MergeSpec spec;
  spec.base = base;
  spec.mode = MergeMode::kTies;
  spec.terms = {{tv_of(base, {0, 0, 0}, "a"), 1.0}, {tv_of(base, {0, 0, 0}, "b"), 1.0}};
  CHECK(merge(spec).entries.at("w").bit_equal(base.entries.at("w")));
  spec.ties_density = 0.0;
  CHECK_THROWS_AS(merge(spec), MergeError);
}

TEST_CASE("ties trims by global magnitude with ties broken by position") {
  const ParameterSet base = vec({0, 0, 0, 0});
  MergeSpec spec;
  spec.base = base;
  spec.mode = MergeMode::kTies;
  spec.ties_density = 0.5;
  spec.terms = {{tv_of(base, {1.0f, -1.0f, 1.0f, 0.5f}, "a"), 1.0}};
  const Tensor w = merge(spec).entries.at("w");
  CHECK(w[0] == 1.0f);
  CHECK(w[1] == -1.0f);
  CHECK(w[2] == 0.0f);
  CHECK(w[3] == 0.0f);
}

TEST_CASE("merge refuses task vectors from another initialization") {
  const ParameterSet base = vec({0, 0});
  MergeSpec spec;
  spec.base = base;
  spec.terms = {{tv_of(vec({1, 1}), {1, 0}, "a"), 1.0}};
  try {
    merge(spec);
    FAIL("expected divergent initialization");
  } catch (const MergeError& e) {
    CHECK(e.kind() == MergeError::Kind::kDivergentInit);
  }
}

TEST_CASE("average merge") {
  ParameterSet a = vec({2.0f}), b = vec({4.0f});
  CHECK_THROWS_AS(merge_average({a, b}), MergeError);
  CHECK(merge_average({a, b}, true).entries.at("w")[0] == 3.0f);
  a.meta.init_digest = b.meta.init_digest = "shared";
  CHECK(merge_average({a, b}).entries.at("w")[0] == 3.0f);
  const ParameterSet r = random_model(6);
  const ParameterSet self = merge_average({r, r}, true);
  for (const auto& [name, t] : self.entries) CHECK(t.bit_equal(r.entries.at(name)));
  const ParameterSet s = random_model(7);
  const ParameterSet rs = merge_average({r, s}, true), sr = merge_average({s, r}, true);
  for (const auto& [name, t] : rs.entries) CHECK(t.bit_equal(sr.entries.at(name)));
  CHECK_THROWS_AS(merge_average({r}, true), MergeError);
}

TEST_CASE("compat report") {
  const ParameterSet a = random_model(8);
  const CompatReport same = compat_check(a, a);
  CHECK(same.compatible());
  CHECK(same.trunk_cosine == doctest::Approx(1.0));
  CHECK(same.digest_relation == "identical");
  ParameterSet b;
  b.entries["z.weight"] = Tensor({3});
  const CompatReport disjoint = compat_check(a, b);
  CHECK(disjoint.missing_in_b.size() == 3);
  CHECK(disjoint.missing_in_a == std::vector<std::string>{"z.weight"});
  CHECK_FALSE(disjoint.compatible());
}
