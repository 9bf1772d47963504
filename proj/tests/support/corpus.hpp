// Copyright 2026 The distmerge Authors
// SPDX-License-Identifier: Apache-2.0

// Hand-assembled container files, each violating one layout rule.

#pragma once

#include <cstdint>
#include <cmath>
#include <cstring>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "distmerge/checkpoint.hpp"

namespace distmerge::testing {

inline std::vector<std::uint8_t> raw_file(std::string header, const std::vector<float>& payload) {
  while (header.size() % 8) header.push_back(' ');
  std::vector<std::uint8_t> out(8);
  const std::uint64_t n = header.size();
  for (int i = 0; i < 8; ++i) out[i] = static_cast<std::uint8_t>(n >> (8 * i));
  out.insert(out.end(), header.begin(), header.end());
  for (float f : payload) {
    std::uint8_t b[4];
    std::memcpy(b, &f, 4);
    out.insert(out.end(), b, b + 4);
  }
  return out;
}

struct MalformedCase {
  std::string name;
  std::vector<std::uint8_t> bytes;
  CheckpointError::Kind expected;
};

inline std::vector<MalformedCase> malformed_corpus() {
  using K = CheckpointError::Kind;
  std::vector<MalformedCase> c;
  c.push_back({"empty file", {}, K::kTruncatedHeader});
  c.push_back({"short length prefix", {4, 0, 0}, K::kTruncatedHeader});
  {
    auto b = raw_file(R"({"w":{"dtype":"F32","shape":[2],"data_offsets":[0,8]}})", {1.0f, 2.0f});
    b.resize(20);
    c.push_back({"header cut mid-json", b, K::kTruncatedHeader});
  }
  {
    auto b = raw_file("{}", {});
    b[0] = 0xff;
    b[1] = 0xff;
    c.push_back({"length prefix past end", b, K::kTruncatedHeader});
  }
  c.push_back({"header not json", raw_file("{\"w\":", {}), K::kMalformedHeader});
  c.push_back({"header is an array", raw_file("[1,2]", {}), K::kMalformedHeader});
  c.push_back({"overlapping offsets",
               raw_file(R"({"a":{"dtype":"F32","shape":[2],"data_offsets":[0,8]},)"
                        R"("b":{"dtype":"F32","shape":[2],"data_offsets":[4,12]}})",
                        {1, 2, 3}),
               K::kOffsetOverlap});
  c.push_back({"bad dtype F16", raw_file(R"({"w":{"dtype":"F16","shape":[2],"data_offsets":[0,4]}})", {1.0f}),
               K::kUnsupportedDtype});
  c.push_back({"bad dtype I64", raw_file(R"({"w":{"dtype":"I64","shape":[1],"data_offsets":[0,8]}})", {1, 2}),
               K::kUnsupportedDtype});
  c.push_back({"offsets past payload", raw_file(R"({"w":{"dtype":"F32","shape":[4],"data_offsets":[0,16]}})", {1, 2}),
               K::kOffsetOutOfBounds});
  c.push_back({"trailing payload bytes", raw_file(R"({"w":{"dtype":"F32","shape":[1],"data_offsets":[0,4]}})", {1, 2}),
               K::kPayloadSizeMismatch});
  c.push_back({"offsets disagree with shape",
               raw_file(R"({"w":{"dtype":"F32","shape":[3],"data_offsets":[0,8]}})", {1, 2}), K::kMalformedHeader});
  c.push_back({"nan payload",
               raw_file(R"({"w":{"dtype":"F32","shape":[1],"data_offsets":[0,4]}})", {std::nanf("")}),
               K::kNonFinite});
  c.push_back({"invalid name", raw_file(R"({"bad name":{"dtype":"F32","shape":[1],"data_offsets":[0,4]}})", {1}),
               K::kInvalidName});
  c.push_back({"metadata value not a string", raw_file(R"({"__metadata__":{"steps":3}})", {}),
               K::kMalformedHeader});
  return c;
}

/// ParameterSet with random names, shapes (rank 0 to 3, zero-sized dims
/// included) and values, including signed zeros and subnormals.
inline ParameterSet random_parameter_set(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> count(0, 6), rank(0, 3), dim(0, 5), pick(0, 9);
  std::normal_distribution<float> val(0.0f, 3.0f);
  ParameterSet ps;
  const int n = count(rng);
  for (int i = 0; i < n; ++i) {
    Shape s(static_cast<std::size_t>(rank(rng)));
    for (auto& d : s) d = static_cast<std::size_t>(dim(rng));
    Tensor t(s);
    for (float& v : t.data()) {
      switch (pick(rng)) {
        case 0: v = -0.0f; break;
        case 1: v = 1e-40f; break;
        case 2: v = std::numeric_limits<float>::max(); break;
        default: v = val(rng);
      }
    }
    ps.entries["layer." + std::to_string(i) + ".w" + std::to_string(rng() % 100)] = std::move(t);
  }
  ps.meta.arch_id = std::to_string(rng());
  ps.meta.init_digest = std::string(64, 'a');
  ps.meta.steps = static_cast<std::int64_t>(rng() % 100000);
  ps.meta.kind = static_cast<ParamKind>(rng() % 4);
  ps.meta.extra["note"] = "seed " + std::to_string(seed);
  return ps;
}

}  // namespace distmerge::testing
