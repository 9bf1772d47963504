// Copyright 2026 The distmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include "distmerge/merge.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>

#include "distmerge/model.hpp"

namespace distmerge {

namespace {

std::string num(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string join(const std::vector<std::string>& items, std::size_t limit = 8) {
  std::string out;
  for (std::size_t i = 0; i < items.size() && i < limit; ++i) out += (i ? ", " : "") + items[i];
  if (items.size() > limit) out += ", ... (" + std::to_string(items.size()) + " total)";
  return out;
}

bool keep(const std::string& name, bool include_heads) { return include_heads || !is_head_name(name); }

// Keys and shapes of `other` must equal those of `ref` (after head filtering).
void require_same_layout(const ParameterSet& ref, const ParameterSet& other, bool include_heads,
                         const std::string& what) {
  std::vector<std::string> missing, extra, shapes;
  for (const auto& [name, t] : ref.entries) {
    if (!keep(name, include_heads)) continue;
    auto it = other.entries.find(name);
    if (it == other.entries.end()) {
      missing.push_back(name);
    } else if (it->second.shape() != t.shape()) {
      shapes.push_back(name + " " + shape_str(t.shape()) + " vs " + shape_str(it->second.shape()));
    }
  }
  for (const auto& [name, _] : other.entries) {
    if (keep(name, include_heads) && !ref.entries.count(name)) extra.push_back(name);
  }
  if (!missing.empty() || !extra.empty()) {
    std::string msg = what + ": key mismatch;";
    if (!missing.empty()) msg += " missing [" + join(missing) + "]";
    if (!extra.empty()) msg += " unexpected [" + join(extra) + "]";
    throw MergeError(MergeError::Kind::kKeyMismatch, msg);
  }
  if (!shapes.empty()) throw MergeError(MergeError::Kind::kShapeMismatch, what + ": shape mismatch " + join(shapes));
}

ParameterSet merged_skeleton(const MergeSpec& spec, const std::string& base_digest) {
  ParameterSet out;
  out.meta.arch_id = spec.base.meta.arch_id;
  out.meta.init_digest = base_digest;
  out.meta.kind = ParamKind::kMerged;
  std::string lambdas, labels, digests;
  for (std::size_t i = 0; i < spec.terms.size(); ++i) {
    const auto& t = spec.terms[i];
    lambdas += (i ? "," : "") + num(t.lambda);
    labels += (i ? "," : "") + t.tv.source;
    digests += (i ? "," : "") + init_digest(t.tv.params);
  }
  auto& x = out.meta.extra;
  x["merge_mode"] = mode_name(spec.mode);
  x["lambdas"] = lambdas;
  x["terms"] = labels;
  x["term_digests"] = digests;
  x["include_heads"] = spec.include_heads ? "true" : "false";
  if (spec.mode == MergeMode::kTies) {
    x["ties_density"] = num(spec.ties_density);
    x["ties_trim"] = spec.trim == TrimScope::kGlobal ? "global" : "per-tensor";
  }
  return out;
}

// out = float(base + sum_j coeff[j] * delta[j]) with double accumulation in
// j order; shared by linear and TIES so their degenerate cases coincide.
void accumulate_into(Tensor& out, const Tensor& base, const std::vector<const float*>& deltas,
                     const std::vector<double>& coeffs) {
  const std::size_t n = base.size();
  for (std::size_t i = 0; i < n; ++i) {
    double acc = base[i];
    for (std::size_t j = 0; j < deltas.size(); ++j) acc += coeffs[j] * static_cast<double>(deltas[j][i]);
    out[i] = static_cast<float>(acc);
  }
}

// Keep mask for the top-k magnitudes of `values` (ties -> lower index first).
std::vector<char> top_k_mask(const std::vector<float>& values, double density) {
  const std::size_t n = values.size();
  const auto k = static_cast<std::size_t>(std::llround(density * static_cast<double>(n)));
  std::vector<char> mask(n, 0);
  if (k >= n) {
    std::fill(mask.begin(), mask.end(), 1);
    return mask;
  }
  if (k == 0) return mask;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto before = [&](std::size_t a, std::size_t b) {
    const float ma = std::fabs(values[a]), mb = std::fabs(values[b]);
    return ma != mb ? ma > mb : a < b;
  };
  std::nth_element(idx.begin(), idx.begin() + static_cast<long>(k), idx.end(), before);
  for (std::size_t i = 0; i < k; ++i) mask[idx[i]] = 1;
  return mask;
}

// Trimmed copy of one task vector, flattened over `keys` in order.
std::vector<float> trimmed(const ParameterSet& tv, const std::vector<std::string>& keys, double density,
                           TrimScope scope) {
  std::vector<float> flat;
  for (const auto& k : keys) {
    auto d = tv.entries.at(k).data();
    flat.insert(flat.end(), d.begin(), d.end());
  }
  if (scope == TrimScope::kGlobal) {
    const auto mask = top_k_mask(flat, density);
    for (std::size_t i = 0; i < flat.size(); ++i)
      if (!mask[i]) flat[i] = 0.0f;
    return flat;
  }
  std::size_t off = 0;
  for (const auto& k : keys) {
    const std::size_t n = tv.entries.at(k).size();
    std::vector<float> part(flat.begin() + static_cast<long>(off), flat.begin() + static_cast<long>(off + n));
    const auto mask = top_k_mask(part, density);
    for (std::size_t i = 0; i < n; ++i)
      if (!mask[i]) flat[off + i] = 0.0f;
    off += n;
  }
  return flat;
}

}  // namespace

const char* mode_name(MergeMode m) { return m == MergeMode::kLinear ? "linear" : "ties"; }

MergeMode parse_mode(const std::string& s) {
  if (s == "linear") return MergeMode::kLinear;
  if (s == "ties") return MergeMode::kTies;
  throw MergeError(MergeError::Kind::kInvalidSpec, "unknown merge mode '" + s + "' (expected linear or ties)");
}

TaskVector task_vector(const ParameterSet& theta_ft, const ParameterSet& theta_0, const std::string& source,
                       bool include_heads) {
  require_same_layout(theta_0, theta_ft, true, "task_vector");
  const std::string base_digest = init_digest(theta_0);
  if (theta_ft.meta.init_digest != base_digest) {
    throw MergeError(MergeError::Kind::kDivergentInit,
                     "task_vector: divergent initialization: fine-tuned model records init digest '" +
                         theta_ft.meta.init_digest + "' but the base digests to '" + base_digest + "'");
  }
  TaskVector tv;
  tv.source = source;
  tv.params.meta.arch_id = theta_0.meta.arch_id;
  tv.params.meta.init_digest = base_digest;
  tv.params.meta.kind = ParamKind::kTaskVector;
  tv.params.meta.steps = theta_ft.meta.steps;
  tv.params.meta.extra["include_heads"] = include_heads ? "true" : "false";
  for (const auto& [name, base] : theta_0.entries) {
    if (!keep(name, include_heads)) continue;
    const Tensor& ft = theta_ft.entries.at(name);
    Tensor d(base.shape());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = ft[i] - base[i];
    tv.params.entries.emplace(name, std::move(d));
  }
  return tv;
}

std::vector<std::string> validate_spec(const MergeSpec& spec) {
  if (spec.terms.empty()) throw MergeError(MergeError::Kind::kInvalidSpec, "merge: no task-vector terms");
  if (spec.mode == MergeMode::kTies && !(spec.ties_density > 0.0 && spec.ties_density <= 1.0)) {
    throw MergeError(MergeError::Kind::kInvalidSpec,
                     "merge: ties density " + num(spec.ties_density) + " outside (0, 1]");
  }
  const std::string base_digest = init_digest(spec.base);
  double sum = 0.0;
  for (std::size_t i = 0; i < spec.terms.size(); ++i) {
    const auto& t = spec.terms[i];
    if (!std::isfinite(t.lambda)) {
      throw MergeError(MergeError::Kind::kInvalidSpec, "merge: non-finite lambda for term " + std::to_string(i));
    }
    if (t.tv.params.meta.init_digest != base_digest) {
      throw MergeError(MergeError::Kind::kDivergentInit,
                       "merge: divergent initialization: task vector '" + t.tv.source + "' was derived from '" +
                           t.tv.params.meta.init_digest + "', base digests to '" + base_digest + "'");
    }
    require_same_layout(spec.base, t.tv.params, spec.include_heads, "merge term '" + t.tv.source + "'");
    sum += t.lambda;
  }
  std::vector<std::string> warnings;
  if (std::fabs(sum - 1.0) > 1e-9) warnings.push_back("lambdas sum to " + num(sum) + ", not 1");
  return warnings;
}

ParameterSet merge_linear(const MergeSpec& spec) {
  validate_spec(spec);
  ParameterSet out = merged_skeleton(spec, init_digest(spec.base));
  for (const auto& [name, base] : spec.base.entries) {
    if (!keep(name, spec.include_heads)) continue;
    std::vector<const float*> deltas;
    std::vector<double> coeffs;
    for (const auto& t : spec.terms) {
      if (t.lambda == 0.0) continue;
      deltas.push_back(t.tv.params.entries.at(name).ptr());
      coeffs.push_back(t.lambda);
    }
    Tensor merged(base.shape());
    accumulate_into(merged, base, deltas, coeffs);
    out.entries.emplace(name, std::move(merged));
  }
  return out;
}

ParameterSet merge_ties(const MergeSpec& spec) {
  validate_spec(spec);
  ParameterSet out = merged_skeleton(spec, init_digest(spec.base));
  std::vector<std::string> keys;
  for (const auto& [name, _] : spec.base.entries)
    if (keep(name, spec.include_heads)) keys.push_back(name);

  std::vector<std::vector<float>> trims;
  for (const auto& t : spec.terms) trims.push_back(trimmed(t.tv.params, keys, spec.ties_density, spec.trim));
  const std::size_t total = trims.empty() ? 0 : trims.front().size();

  std::vector<float> merged(total, 0.0f);
  for (std::size_t i = 0; i < total; ++i) {
    double mass = 0.0;
    for (const auto& tr : trims) mass += tr[i];
    if (mass == 0.0) continue;
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& tr : trims) {
      if (tr[i] != 0.0f && (tr[i] > 0.0f) == (mass > 0.0)) {
        sum += tr[i];
        ++count;
      }
    }
    merged[i] = static_cast<float>(sum / static_cast<double>(count));
  }

  double lambda = 0.0;
  for (const auto& t : spec.terms) lambda += t.lambda;
  lambda /= static_cast<double>(spec.terms.size());
  out.meta.extra["ties_lambda"] = num(lambda);

  std::size_t off = 0;
  for (const auto& name : keys) {
    const Tensor& base = spec.base.entries.at(name);
    Tensor t(base.shape());
    accumulate_into(t, base, {merged.data() + off}, {lambda});
    off += base.size();
    out.entries.emplace(name, std::move(t));
  }
  return out;
}

ParameterSet merge(const MergeSpec& spec) {
  return spec.mode == MergeMode::kLinear ? merge_linear(spec) : merge_ties(spec);
}

ParameterSet merge_average(const std::vector<ParameterSet>& models, bool allow_digest_mismatch) {
  if (models.size() < 2) {
    throw MergeError(MergeError::Kind::kInvalidSpec,
                     "avg-merge: need at least two models, got " + std::to_string(models.size()));
  }
  const ParameterSet& first = models.front();
  for (std::size_t m = 1; m < models.size(); ++m) {
    require_same_layout(first, models[m], true, "avg-merge model " + std::to_string(m));
  }
  if (!allow_digest_mismatch) {
    for (const auto& m : models) {
      if (m.meta.init_digest.empty() || m.meta.init_digest != first.meta.init_digest) {
        throw MergeError(MergeError::Kind::kDivergentInit,
                         "avg-merge: models do not share a recorded initialization; averaging them requires "
                         "allow_digest_mismatch");
      }
    }
  }
  ParameterSet out;
  out.meta.arch_id = first.meta.arch_id;
  out.meta.kind = ParamKind::kMerged;
  out.meta.extra["merge_mode"] = "average";
  out.meta.extra["models"] = std::to_string(models.size());
  std::string digests;
  for (std::size_t m = 0; m < models.size(); ++m) digests += (m ? "," : "") + init_digest(models[m]);
  out.meta.extra["source_digests"] = digests;
  const double inv = static_cast<double>(models.size());
  for (const auto& [name, t0] : first.entries) {
    Tensor avg(t0.shape());
    for (std::size_t i = 0; i < avg.size(); ++i) {
      double acc = 0.0;
      for (const auto& m : models) acc += m.entries.at(name)[i];
      avg[i] = static_cast<float>(acc / inv);
    }
    out.entries.emplace(name, std::move(avg));
  }
  out.meta.init_digest = init_digest(out);
  return out;
}

CompatReport compat_check(const ParameterSet& a, const ParameterSet& b) {
  CompatReport r;
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (const auto& [name, ta] : a.entries) {
    auto it = b.entries.find(name);
    if (it == b.entries.end()) {
      r.missing_in_b.push_back(name);
      continue;
    }
    const Tensor& tb = it->second;
    if (ta.shape() != tb.shape()) {
      r.shape_conflicts.push_back(name + " " + shape_str(ta.shape()) + " vs " + shape_str(tb.shape()));
      continue;
    }
    if (is_head_name(name)) continue;
    for (std::size_t i = 0; i < ta.size(); ++i) {
      dot += static_cast<double>(ta[i]) * tb[i];
      na += static_cast<double>(ta[i]) * ta[i];
      nb += static_cast<double>(tb[i]) * tb[i];
      r.max_abs_diff = std::max(r.max_abs_diff, std::abs(static_cast<double>(ta[i]) - tb[i]));
    }
    r.compared_params += ta.size();
  }
  for (const auto& [name, _] : b.entries)
    if (!a.entries.count(name)) r.missing_in_a.push_back(name);
  r.trunk_cosine = (na > 0.0 && nb > 0.0) ? dot / (std::sqrt(na) * std::sqrt(nb)) : 0.0;

  if (init_digest(a) == init_digest(b)) {
    r.digest_relation = "identical";
  } else if (a.meta.init_digest.empty() || b.meta.init_digest.empty()) {
    r.digest_relation = "unknown-init";
  } else {
    r.digest_relation = a.meta.init_digest == b.meta.init_digest ? "shared-init" : "different-init";
  }
  return r;
}

std::string CompatReport::to_text() const {
  std::ostringstream os;
  os << "compatible: " << (compatible() ? "yes" : "no") << '\n'
     << "init: " << digest_relation << '\n'
     << "trunk cosine: " << num(trunk_cosine) << " over " << compared_params << " parameters\n"
     << "max abs diff: " << num(max_abs_diff) << '\n';
  auto list = [&](const char* title, const std::vector<std::string>& v) {
    os << title << ": " << v.size() << '\n';
    for (const auto& s : v) os << "  " << s << '\n';
  };
  list("missing in a", missing_in_a);
  list("missing in b", missing_in_b);
  list("shape conflicts", shape_conflicts);
  return os.str();
}

}  // namespace distmerge
