// Copyright 2026 The distmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include "distmerge/checkpoint.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <sstream>

namespace distmerge {

namespace {

using json = nlohmann::json;
constexpr const char* kMetaKey = "__metadata__";

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

void put_f32(std::uint8_t* dst, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) dst[i] = static_cast<std::uint8_t>(bits >> (8 * i));
}

float get_f32(const std::uint8_t* p) {
  std::uint32_t bits = 0;
  for (int i = 3; i >= 0; --i) bits = (bits << 8) | p[i];
  return std::bit_cast<float>(bits);
}

[[noreturn]] void fail(CheckpointError::Kind kind, const std::string& msg) {
  throw CheckpointError(kind, "checkpoint: " + msg);
}

}  // namespace

const char* kind_name(ParamKind kind) {
  switch (kind) {
    case ParamKind::kTeacher: return "teacher";
    case ParamKind::kStudent: return "student";
    case ParamKind::kTaskVector: return "task_vector";
    case ParamKind::kMerged: return "merged";
  }
  return "?";
}

ParamKind parse_kind(const std::string& s) {
  if (s == "teacher") return ParamKind::kTeacher;
  if (s == "student") return ParamKind::kStudent;
  if (s == "task_vector") return ParamKind::kTaskVector;
  if (s == "merged") return ParamKind::kMerged;
  fail(CheckpointError::Kind::kMalformedHeader, "unknown kind '" + s + "'");
}

std::size_t ParameterSet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries) n += t.size();
  return n;
}

bool ParameterSet::bit_equal(const ParameterSet& other) const {
  if (entries.size() != other.entries.size() || !(meta == other.meta)) return false;
  for (auto a = entries.begin(), b = other.entries.begin(); a != entries.end(); ++a, ++b) {
    if (a->first != b->first || !a->second.bit_equal(b->second)) return false;
  }
  return true;
}

bool valid_param_name(const std::string& name) {
  if (name.empty() || name == kMetaKey) return false;
  bool segment_start = true;
  for (char c : name) {
    if (c == '.') {
      if (segment_start) return false;
      segment_start = true;
      continue;
    }
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
    if (!ok) return false;
    segment_start = false;
  }
  return !segment_start;
}

std::vector<std::uint8_t> encode_container(const Container& c) {
  json header = json::object();
  if (!c.metadata.empty()) {
    json meta = json::object();
    for (const auto& [k, v] : c.metadata) meta[k] = v;
    header[kMetaKey] = std::move(meta);
  }
  std::uint64_t offset = 0;
  for (const auto& [name, t] : c.tensors) {
    if (!valid_param_name(name)) fail(CheckpointError::Kind::kInvalidName, "invalid tensor name '" + name + "'");
    if (!t.all_finite()) fail(CheckpointError::Kind::kNonFinite, "tensor '" + name + "' has non-finite values");
    const std::uint64_t bytes = static_cast<std::uint64_t>(t.size()) * 4;
    header[name] = {{"dtype", "F32"}, {"shape", t.shape()}, {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  std::string text = header.dump();
  while (text.size() % 8 != 0) text.push_back(' ');

  std::vector<std::uint8_t> out;
  out.reserve(8 + text.size() + offset);
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  const std::size_t payload_start = out.size();
  out.resize(payload_start + offset);
  std::uint8_t* dst = out.data() + payload_start;
  for (const auto& [_, t] : c.tensors) {
    for (float f : t.data()) {
      put_f32(dst, f);
      dst += 4;
    }
  }
  return out;
}

Container decode_container(const std::vector<std::uint8_t>& bytes) {
  using K = CheckpointError::Kind;
  if (bytes.size() < 8) fail(K::kTruncatedHeader, "file shorter than the 8-byte length prefix");
  const std::uint64_t n = get_u64(bytes.data());
  if (n > bytes.size() - 8) {
    fail(K::kTruncatedHeader, "truncated header: declared " + std::to_string(n) + " bytes, file has " +
                                  std::to_string(bytes.size() - 8));
  }
  const std::string text(reinterpret_cast<const char*>(bytes.data() + 8), n);
  json header = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (header.is_discarded() || !header.is_object()) fail(K::kMalformedHeader, "header is not a JSON object");

  Container c;
  struct Span {
    std::uint64_t begin, end;
    std::string name;
    Shape shape;
  };
  std::vector<Span> spans;
  for (auto it = header.begin(); it != header.end(); ++it) {
    const std::string& key = it.key();
    const json& v = it.value();
    if (key == kMetaKey) {
      if (!v.is_object()) fail(K::kMalformedHeader, "__metadata__ must be an object");
      for (auto m = v.begin(); m != v.end(); ++m) {
        if (!m.value().is_string()) fail(K::kMalformedHeader, "metadata value for '" + m.key() + "' is not a string");
        c.metadata[m.key()] = m.value().get<std::string>();
      }
      continue;
    }
    if (!valid_param_name(key)) fail(K::kInvalidName, "invalid tensor name '" + key + "'");
    if (!v.is_object() || !v.contains("dtype") || !v.contains("shape") || !v.contains("data_offsets")) {
      fail(K::kMalformedHeader, "entry '" + key + "' lacks dtype/shape/data_offsets");
    }
    if (!v["dtype"].is_string()) fail(K::kMalformedHeader, "entry '" + key + "' dtype is not a string");
    const auto dtype = v["dtype"].get<std::string>();
    if (dtype != "F32") fail(K::kUnsupportedDtype, "unsupported dtype '" + dtype + "' for '" + key + "'");
    const json& shape = v["shape"];
    const json& offs = v["data_offsets"];
    if (!shape.is_array() || !offs.is_array() || offs.size() != 2 || !offs[0].is_number_unsigned() ||
        !offs[1].is_number_unsigned()) {
      fail(K::kMalformedHeader, "entry '" + key + "' has malformed shape or offsets");
    }
    Span s{offs[0].get<std::uint64_t>(), offs[1].get<std::uint64_t>(), key, {}};
    for (const auto& d : shape) {
      if (!d.is_number_unsigned()) fail(K::kMalformedHeader, "entry '" + key + "' has a non-integer dimension");
      s.shape.push_back(d.get<std::size_t>());
    }
    if (s.end < s.begin || s.end - s.begin != static_cast<std::uint64_t>(numel(s.shape)) * 4) {
      fail(K::kMalformedHeader, "entry '" + key + "' offsets disagree with shape " + shape_str(s.shape));
    }
    spans.push_back(std::move(s));
  }

  const std::uint64_t payload = bytes.size() - 8 - n;
  std::sort(spans.begin(), spans.end(), [](const Span& a, const Span& b) {
    return a.begin != b.begin ? a.begin < b.begin : a.end < b.end;
  });
  std::uint64_t cursor = 0;
  for (const auto& s : spans) {
    if (s.begin < cursor) fail(K::kOffsetOverlap, "tensor '" + s.name + "' overlaps the previous tensor");
    if (s.begin > cursor) fail(K::kMalformedHeader, "gap in payload before tensor '" + s.name + "'");
    if (s.end > payload) fail(K::kOffsetOutOfBounds, "tensor '" + s.name + "' extends past end of file");
    cursor = s.end;
  }
  if (cursor != payload) {
    fail(K::kPayloadSizeMismatch, "declared payload " + std::to_string(cursor) + " bytes, file carries " +
                                      std::to_string(payload));
  }

  const std::uint8_t* base = bytes.data() + 8 + n;
  for (auto& s : spans) {
    Tensor t(s.shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = get_f32(base + s.begin + 4 * i);
    if (!t.all_finite()) fail(K::kNonFinite, "tensor '" + s.name + "' has non-finite values");
    c.tensors.emplace(std::move(s.name), std::move(t));
  }
  return c;
}

void write_container(const Container& c, const std::filesystem::path& path) {
  const auto bytes = encode_container(c);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(CheckpointError::Kind::kIo, "cannot open '" + path.string() + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) fail(CheckpointError::Kind::kIo, "write failed for '" + path.string() + "'");
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(CheckpointError::Kind::kIo, "cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_container(bytes);
}

Container to_container(const ParameterSet& ps) {
  Container c;
  c.tensors = ps.entries;
  c.metadata = ps.meta.extra;
  c.metadata["arch_id"] = ps.meta.arch_id;
  c.metadata["kind"] = kind_name(ps.meta.kind);
  c.metadata["steps"] = std::to_string(ps.meta.steps);
  if (!ps.meta.init_digest.empty()) c.metadata["init_digest"] = ps.meta.init_digest;
  return c;
}

ParameterSet from_container(Container c) {
  ParameterSet ps;
  ps.entries = std::move(c.tensors);
  auto take = [&](const char* key) -> std::optional<std::string> {
    auto it = c.metadata.find(key);
    if (it == c.metadata.end()) return std::nullopt;
    std::string v = it->second;
    c.metadata.erase(it);
    return v;
  };
  const auto kind = take("kind");
  if (!kind) fail(CheckpointError::Kind::kMalformedHeader, "metadata lacks 'kind'");
  ps.meta.kind = parse_kind(*kind);
  ps.meta.arch_id = take("arch_id").value_or("");
  ps.meta.init_digest = take("init_digest").value_or("");
  const auto steps = take("steps").value_or("0");
  try {
    ps.meta.steps = std::stoll(steps);
  } catch (const std::exception&) {
    fail(CheckpointError::Kind::kMalformedHeader, "metadata 'steps' is not an integer: " + steps);
  }
  if (ps.meta.steps < 0) fail(CheckpointError::Kind::kMalformedHeader, "metadata 'steps' is negative");
  if (ps.meta.kind != ParamKind::kTeacher && ps.meta.init_digest.empty()) {
    fail(CheckpointError::Kind::kMalformedHeader, std::string("metadata lacks init_digest for kind ") + *kind);
  }
  ps.meta.extra = std::move(c.metadata);
  return ps;
}

void write_checkpoint(const ParameterSet& ps, const std::filesystem::path& path) {
  if (ps.meta.kind != ParamKind::kTeacher && ps.meta.init_digest.empty()) {
    fail(CheckpointError::Kind::kMalformedHeader,
         std::string("init_digest is required for kind ") + kind_name(ps.meta.kind));
  }
  write_container(to_container(ps), path);
}

ParameterSet read_checkpoint(const std::filesystem::path& path) {
  return from_container(read_container(path));
}

void write_task_vector(const TaskVector& tv, const std::filesystem::path& path) {
  ParameterSet ps = tv.params;
  ps.meta.kind = ParamKind::kTaskVector;
  ps.meta.extra["source_teacher"] = tv.source;
  write_checkpoint(ps, path);
}

TaskVector read_task_vector(const std::filesystem::path& path) {
  TaskVector tv;
  tv.params = read_checkpoint(path);
  if (tv.params.meta.kind != ParamKind::kTaskVector) {
    fail(CheckpointError::Kind::kMalformedHeader,
         "'" + path.string() + "' is a " + kind_name(tv.params.meta.kind) + ", not a task_vector");
  }
  auto it = tv.params.meta.extra.find("source_teacher");
  if (it != tv.params.meta.extra.end()) tv.source = it->second;
  return tv;
}

std::vector<std::uint8_t> canonical_bytes(const ParameterSet& ps) {
  Container c;
  c.tensors = ps.entries;
  return encode_container(c);
}

std::string sha256_hex(const void* data, std::size_t size) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data, size, md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256: digest failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

std::string init_digest(const ParameterSet& ps) {
  const auto bytes = canonical_bytes(ps);
  return sha256_hex(bytes.data(), bytes.size());
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(CheckpointError::Kind::kIo, "cannot open '" + path.string() + "'");
  std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return sha256_hex(bytes.data(), bytes.size());
}

}  // namespace distmerge
