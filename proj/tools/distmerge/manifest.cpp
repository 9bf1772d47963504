// Copyright 2026 The distmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include "manifest.hpp"

#include <fstream>

#include "json.hpp"

#include "distmerge/checkpoint.hpp"

namespace distmerge::cli {

std::string tool_version() { return DISTMERGE_VERSION; }

void record_artifact(const std::filesystem::path& dir, const std::string& artifact, ManifestEntry entry,
                     const std::vector<std::filesystem::path>& outputs) {
  const auto path = dir / "manifest.json";
  nlohmann::ordered_json doc;
  if (std::filesystem::exists(path)) {
    std::ifstream in(path);
    doc = nlohmann::ordered_json::parse(in, nullptr, /*allow_exceptions=*/false);
    if (doc.is_discarded() || !doc.is_object()) doc = nlohmann::ordered_json::object();
  }
  doc["tool"] = "distmerge";
  doc["version"] = tool_version();
  for (const auto& p : outputs) entry.outputs[p.filename().string()] = sha256_file(p);
  nlohmann::ordered_json e;
  e["command_line"] = entry.command_line;
  e["config"] = entry.config;
  e["seeds"] = entry.seeds;
  e["inputs"] = entry.inputs;
  e["outputs"] = entry.outputs;
  e["wall_clock_seconds"] = entry.wall_clock_seconds;
  doc["artifacts"][artifact] = std::move(e);
  const auto tmp = dir / "manifest.json.tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    out << doc.dump(2) << '\n';
    if (!out) throw std::filesystem::filesystem_error("cannot write manifest", tmp, std::make_error_code(std::errc::io_error));
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace distmerge::cli
