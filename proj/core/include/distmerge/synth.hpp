// Copyright 2026 The distmerge Authors
// SPDX-License-Identifier: Apache-2.0

// Deterministic synthetic signal domains.
//
//   S ("speech-like"): four 500-sample constant-frequency segments. The four
//     frequencies are distinct symbols from a 10-entry codebook; which symbols
//     appear is random, their rank order across segments is the seq_class
//     label (10 order patterns). A slow amplitude envelope picked from 20
//     profiles is the speaker_id label.
//   M ("music-like"): three harmonics of a fundamental from a 12-tone octave
//     (pitch_class), with harmonic amplitude ratios from 20 profiles
//     (timbre_id).
//   A: unlabeled white-noise bursts.
//
// Every example is a pure function of (domain, split, index, seed).

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "distmerge/checkpoint.hpp"
#include "distmerge/tensor.hpp"

namespace distmerge {

enum class Domain { kSpeech, kMusic, kNoise };
enum class Split { kTrain, kDev, kTest };

inline constexpr std::size_t kSignalLength = 2000;
inline constexpr std::size_t kSegments = 4;
inline constexpr float kNoiseSigma = 0.05f;

const char* domain_name(Domain d);  // "S", "M", "A"
Domain parse_domain(const std::string& s);
const char* split_name(Split s);
Split parse_split(const std::string& s);

struct TaskInfo {
  std::string name;
  Domain domain;
  std::size_t classes;
  bool content;  // content task (vs identity task)
};

const std::vector<TaskInfo>& all_tasks();
const TaskInfo& task_info(const std::string& name);
std::vector<std::string> domain_tasks(Domain d);

struct Example {
  Tensor signal;  // [kSignalLength], values in [-1, 1]
  Domain domain = Domain::kSpeech;
  std::map<std::string, std::size_t> labels;
};

/// Codebook frequencies for S, cycles per sample, ascending.
const std::array<double, 10>& speech_codebook();
/// Rank pattern of seq_class c: segment j holds the pattern[j]-th lowest chosen symbol.
const std::array<std::size_t, kSegments>& seq_pattern(std::size_t c);
/// Fundamental of pitch class k, cycles per sample.
double music_fundamental(std::size_t pitch_class);
/// Relative amplitudes of harmonics 1..3 for timbre profile p (sum to 1).
std::array<double, 3> timbre_profile(std::size_t p);

Example make_example(Domain domain, Split split, std::uint64_t index, std::uint64_t seed);
std::vector<Example> generate(Domain domain, Split split, std::size_t n, std::uint64_t seed);

struct MixtureComponent {
  Domain domain;
  double weight;
};

/// Parses "S:0.5,M:0.5" (a bare "S" means weight 1).
std::vector<MixtureComponent> parse_mixture(const std::string& s);
std::string mixture_str(const std::vector<MixtureComponent>& specs);

/// Domain of each of the first n draws: smooth weighted round-robin, so every
/// prefix holds each domain within one of weight * length.
std::vector<Domain> mixture_schedule(const std::vector<MixtureComponent>& specs, std::size_t n);

/// The k-th draw of domain d is make_example(d, split, k, seed).
std::vector<Example> mixture(const std::vector<MixtureComponent>& specs, Split split, std::size_t n,
                             std::uint64_t seed);

/// [n, kSignalLength] batch of signals.
Tensor stack_signals(std::span<const Example> examples);

Container dataset_container(std::span<const Example> examples, const std::map<std::string, std::string>& meta);
std::vector<Example> examples_from_container(const Container& c);

}  // namespace distmerge
