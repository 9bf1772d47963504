// Copyright 2026 The distmerge Authors
// SPDX-License-Identifier: Apache-2.0

// One manifest.json per output directory, one entry per artifact written there.

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace distmerge::cli {

struct ManifestEntry {
  std::string command_line;
  std::map<std::string, std::string> config;
  std::map<std::string, std::string> seeds;
  std::map<std::string, std::string> inputs;   // path -> sha256
  std::map<std::string, std::string> outputs;  // file name -> sha256
  double wall_clock_seconds = 0.0;
};

/// Merges `entry` into <dir>/manifest.json under `artifact`, replacing any
/// earlier entry of that name. Output digests are computed here.
void record_artifact(const std::filesystem::path& dir, const std::string& artifact, ManifestEntry entry,
                     const std::vector<std::filesystem::path>& outputs);

std::string tool_version();

}  // namespace distmerge::cli
