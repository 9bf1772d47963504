// Copyright 2026 The distmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>

#include "corpus.hpp"
#include "distmerge/checkpoint.hpp"

using namespace distmerge;

TEST_CASE("payload is little-endian f32 after the padded header") {
  Container c;
  c.tensors["w"] = Tensor({2}, {1.0f, 2.0f});
  const auto bytes = encode_container(c);
  const std::vector<std::uint8_t> tail(bytes.end() - 8, bytes.end());
  CHECK(tail == std::vector<std::uint8_t>{0x00, 0x00, 0x80, 0x3F, 0x00, 0x00, 0x00, 0x40});
  const std::uint64_t n = bytes[0] | (std::uint64_t{bytes[1]} << 8);
  CHECK(n % 8 == 0);
  CHECK(bytes.size() == 8 + n + 8);
}

TEST_CASE("digests match sha256 of the canonical bytes") {
  // hashlib.sha256(struct.pack('<Q', 8) + b'{}      ').hexdigest()
  CHECK(init_digest(ParameterSet{}) == "9bbcbf73561f6bc5d0a17ea6a2081feed2d1304e87602d8c502d9a5c4bd85576");
  // Same with header {"w":{"data_offsets":[0,8],"dtype":"F32","shape":[2]}} and payload [1, 2].
  ParameterSet p;
  p.entries["w"] = Tensor({2}, {1.0f, 2.0f});
  p.meta.extra["ignored"] = "metadata does not enter the digest";
  CHECK(init_digest(p) == "e4fe8418fa4ddcde46d121fbfca2bc84f3a55d73dd2bd77878cdb4ef5176f52f");
  CHECK(sha256_hex("abc", 3) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("random parameter sets roundtrip bit-exactly") {
  const auto dir = std::filesystem::temp_directory_path() / "distmerge_ckpt_test";
  std::filesystem::create_directories(dir);
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    const ParameterSet ps = testing::random_parameter_set(seed);
    const auto path = dir / ("p" + std::to_string(seed) + ".safetensors");
    write_checkpoint(ps, path);
    const ParameterSet back = read_checkpoint(path);
    CAPTURE(seed);
    CHECK(back.bit_equal(ps));
    CHECK(back.meta == ps.meta);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("malformed files are rejected with their error class") {
  for (const auto& m : testing::malformed_corpus()) {
    CAPTURE(m.name);
    bool thrown = false;
    try {
      decode_container(m.bytes);
    } catch (const CheckpointError& e) {
      thrown = true;
      CHECK(e.kind() == m.expected);
    }
    CHECK(thrown);
  }
}

TEST_CASE("writer refuses non-finite values and bad names") {
  Container c;
  c.tensors["w"] = Tensor({1}, {std::numeric_limits<float>::infinity()});
  CHECK_THROWS_AS(encode_container(c), CheckpointError);
  Container d;
  d.tensors["a..b"] = Tensor({1});
  CHECK_THROWS_AS(encode_container(d), CheckpointError);
}

TEST_CASE("non-teacher checkpoints must carry an init digest") {
  ParameterSet ps;
  ps.entries["w"] = Tensor({1});
  ps.meta.kind = ParamKind::kStudent;
  CHECK_THROWS_AS(from_container(to_container(ps)), CheckpointError);
}

TEST_CASE("missing files are i/o errors") {
  try {
    read_checkpoint("/nonexistent/x.safetensors");
    FAIL("expected an error");
  } catch (const CheckpointError& e) {
    CHECK(e.kind() == CheckpointError::Kind::kIo);
  }
}
