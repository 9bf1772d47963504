// Copyright 2026 The distmerge Authors
// SPDX-License-Identifier: Apache-2.0

// safetensors-compatible container for ParameterSets and task vectors.
//
// Layout:
//   u64 little-endian header length N
//   N bytes of JSON: {"__metadata__": {str: str}, "<name>": {"dtype": "F32",
//                     "shape": [...], "data_offsets": [begin, end]}, ...}
//                    padded with spaces to a multiple of 8
//   payload: little-endian f32 tensors, contiguous, in lexicographic name order
//
// Only F32 is accepted. Offsets must tile the payload exactly.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "distmerge/adam.hpp"
#include "distmerge/tensor.hpp"

namespace distmerge {

enum class ParamKind { kTeacher, kStudent, kTaskVector, kMerged };

const char* kind_name(ParamKind kind);
ParamKind parse_kind(const std::string& s);

struct ParamMeta {
  std::string arch_id;
  std::string init_digest;  // required for student, task_vector, merged
  std::int64_t steps = 0;
  ParamKind kind = ParamKind::kTeacher;
  std::map<std::string, std::string> extra;  // provenance: source labels, lambdas, ...

  bool operator==(const ParamMeta&) const = default;
};

/// Ordered name -> tensor map; names are ASCII dot-separated paths.
struct ParameterSet {
  TensorMap entries;
  ParamMeta meta;

  std::size_t parameter_count() const;
  bool bit_equal(const ParameterSet& other) const;
};

/// A ParameterSet of theta_ft - theta_0 deltas (meta.kind == kTaskVector).
struct TaskVector {
  ParameterSet params;
  std::string source;  // e.g. "speech", "music"
};

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind {
    kIo,
    kTruncatedHeader,
    kMalformedHeader,
    kUnsupportedDtype,
    kOffsetOverlap,
    kOffsetOutOfBounds,
    kPayloadSizeMismatch,
    kNonFinite,
    kInvalidName,
  };
  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Raw container contents: tensors plus a flat string metadata map.
struct Container {
  TensorMap tensors;
  std::map<std::string, std::string> metadata;
};

std::vector<std::uint8_t> encode_container(const Container& c);
Container decode_container(const std::vector<std::uint8_t>& bytes);
void write_container(const Container& c, const std::filesystem::path& path);
Container read_container(const std::filesystem::path& path);

Container to_container(const ParameterSet& ps);
ParameterSet from_container(Container c);

void write_checkpoint(const ParameterSet& ps, const std::filesystem::path& path);
ParameterSet read_checkpoint(const std::filesystem::path& path);

void write_task_vector(const TaskVector& tv, const std::filesystem::path& path);
TaskVector read_task_vector(const std::filesystem::path& path);

/// Bytes the digest is computed over: the container encoding with no metadata.
std::vector<std::uint8_t> canonical_bytes(const ParameterSet& ps);
/// Lowercase hex SHA-256 of canonical_bytes(ps).
std::string init_digest(const ParameterSet& ps);

std::string sha256_hex(const void* data, std::size_t size);
std::string sha256_file(const std::filesystem::path& path);

bool valid_param_name(const std::string& name);

}  // namespace distmerge
