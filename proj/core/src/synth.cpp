// Copyright 2026 The distmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include "distmerge/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace distmerge {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t example_seed(Domain d, Split s, std::uint64_t index, std::uint64_t seed) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ (static_cast<std::uint64_t>(d) + 1) * 0x100000001B3ULL);
  h = splitmix64(h ^ (static_cast<std::uint64_t>(s) + 1) * 0xC2B2AE3D27D4EB4FULL);
  return splitmix64(h ^ index);
}

// Joint label assignment for two tasks with c1 and c2 classes. Within each
// block of c1*c2 indices every (l1, l2) pair occurs once, and every prefix is
// balanced to within one per class for both tasks.
std::pair<std::size_t, std::size_t> balanced_labels(std::uint64_t index, std::size_t c1, std::size_t c2) {
  const std::size_t g = std::gcd(c1, c2);
  const std::size_t l = c1 / g * c2;
  const std::size_t j = index % (c1 * c2);
  const std::size_t a = j / l;
  const std::size_t b = j % l;
  return {b % c1, (b + a) % c2};
}

float clip_unit(double x) { return static_cast<float>(std::clamp(x, -1.0, 1.0)); }

}  // namespace

const char* domain_name(Domain d) {
  switch (d) {
    case Domain::kSpeech: return "S";
    case Domain::kMusic: return "M";
    case Domain::kNoise: return "A";
  }
  return "?";
}

Domain parse_domain(const std::string& s) {
  if (s == "S") return Domain::kSpeech;
  if (s == "M") return Domain::kMusic;
  if (s == "A") return Domain::kNoise;
  throw std::invalid_argument("unknown domain '" + s + "' (expected S, M or A)");
}

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kDev: return "dev";
    case Split::kTest: return "test";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "dev") return Split::kDev;
  if (s == "test") return Split::kTest;
  throw std::invalid_argument("unknown split '" + s + "' (expected train, dev or test)");
}

const std::vector<TaskInfo>& all_tasks() {
  static const std::vector<TaskInfo> tasks = {
      {"seq_class", Domain::kSpeech, 10, true},
      {"speaker_id", Domain::kSpeech, 20, false},
      {"pitch_class", Domain::kMusic, 12, true},
      {"timbre_id", Domain::kMusic, 20, false},
  };
  return tasks;
}

const TaskInfo& task_info(const std::string& name) {
  for (const auto& t : all_tasks()) {
    if (t.name == name) return t;
  }
  throw std::invalid_argument("unknown task '" + name + "'");
}

std::vector<std::string> domain_tasks(Domain d) {
  std::vector<std::string> out;
  for (const auto& t : all_tasks()) {
    if (t.domain == d) out.push_back(t.name);
  }
  return out;
}

const std::array<double, 10>& speech_codebook() {
  static const std::array<double, 10> book = [] {
    std::array<double, 10> b{};
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = 0.04 * std::pow(9.0, static_cast<double>(i) / 9.0);
    return b;
  }();
  return book;
}

const std::array<std::size_t, kSegments>& seq_pattern(std::size_t c) {
  static const std::array<std::array<std::size_t, kSegments>, 10> patterns = {{
      {0, 1, 2, 3}, {3, 2, 1, 0}, {1, 0, 3, 2}, {2, 3, 0, 1}, {0, 2, 1, 3},
      {3, 1, 2, 0}, {1, 3, 0, 2}, {2, 0, 3, 1}, {0, 3, 1, 2}, {3, 0, 2, 1},
  }};
  return patterns.at(c);
}

double music_fundamental(std::size_t pitch_class) {
  return 0.07 * std::pow(2.0, static_cast<double>(pitch_class) / 12.0);
}

std::array<double, 3> timbre_profile(std::size_t p) {
  // Ratios to the fundamental, log-spaced so neighbouring profiles stay apart under gain jitter.
  static constexpr std::array<double, 5> r2 = {0.15, 0.3, 0.6, 1.2, 2.4};
  static constexpr std::array<double, 4> r3 = {0.15, 0.4, 1.05, 2.8};
  const double a2 = r2[p % 5];
  const double a3 = r3[(p / 5) % 4];
  const double sum = 1.0 + a2 + a3;
  return {1.0 / sum, a2 / sum, a3 / sum};
}

Example make_example(Domain domain, Split split, std::uint64_t index, std::uint64_t seed) {
  std::mt19937_64 rng(example_seed(domain, split, index, seed));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, kNoiseSigma);
  Example ex;
  ex.domain = domain;
  std::vector<double> x(kSignalLength, 0.0);

  switch (domain) {
    case Domain::kSpeech: {
      const auto [seq, speaker] = balanced_labels(index, 10, 20);
      ex.labels = {{"seq_class", seq}, {"speaker_id", speaker}};
      // Four distinct codebook symbols, sorted by frequency, placed by rank pattern.
      std::array<std::size_t, 10> symbols{};
      std::iota(symbols.begin(), symbols.end(), 0);
      for (std::size_t i = 0; i < kSegments; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(unit(rng) * static_cast<double>(10 - i));
        std::swap(symbols[i], symbols[std::min<std::size_t>(j, 9)]);
      }
      std::sort(symbols.begin(), symbols.begin() + kSegments);
      const auto& pattern = seq_pattern(seq);
      const double gain = 0.7 + 0.3 * unit(rng);
      const double rate = 1.0 + static_cast<double>(speaker % 5);
      const double env_phase = static_cast<double>(speaker / 5) * std::numbers::pi / 2.0;
      const std::size_t seg_len = kSignalLength / kSegments;
      for (std::size_t s = 0; s < kSegments; ++s) {
        const double f = speech_codebook()[symbols[pattern[s]]];
        const double phase = kTwoPi * unit(rng);
        for (std::size_t t = s * seg_len; t < (s + 1) * seg_len; ++t) {
          const double env =
              0.6 + 0.35 * std::sin(kTwoPi * rate * static_cast<double>(t) / kSignalLength + env_phase);
          x[t] = gain * env * std::sin(kTwoPi * f * static_cast<double>(t) + phase);
        }
      }
      break;
    }
    case Domain::kMusic: {
      const auto [pitch, timbre] = balanced_labels(index, 12, 20);
      ex.labels = {{"pitch_class", pitch}, {"timbre_id", timbre}};
      const double f0 = music_fundamental(pitch);
      const auto amps = timbre_profile(timbre);
      const double gain = 0.7 + 0.3 * unit(rng);
      for (std::size_t h = 0; h < 3; ++h) {
        const double phase = kTwoPi * unit(rng);
        const double f = f0 * static_cast<double>(h + 1);
        for (std::size_t t = 0; t < kSignalLength; ++t) {
          x[t] += gain * amps[h] * std::sin(kTwoPi * f * static_cast<double>(t) + phase);
        }
      }
      break;
    }
    case Domain::kNoise: {
      std::normal_distribution<double> white(0.0, 1.0);
      const int bursts = 1 + static_cast<int>(unit(rng) * 4.0);
      for (int b = 0; b < bursts; ++b) {
        const auto len = static_cast<std::size_t>(100 + unit(rng) * 300);
        const auto start = static_cast<std::size_t>(unit(rng) * static_cast<double>(kSignalLength - len));
        const double amp = 0.2 + 0.4 * unit(rng);
        for (std::size_t t = start; t < start + len; ++t) x[t] += amp * white(rng);
      }
      break;
    }
  }

  Tensor signal({kSignalLength});
  for (std::size_t t = 0; t < kSignalLength; ++t) signal[t] = clip_unit(x[t] + noise(rng));
  ex.signal = std::move(signal);
  return ex;
}

std::vector<Example> generate(Domain domain, Split split, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("generate: n must be positive");
  std::vector<Example> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(make_example(domain, split, i, seed));
  return out;
}

std::vector<MixtureComponent> parse_mixture(const std::string& s) {
  std::vector<MixtureComponent> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto colon = item.find(':');
    MixtureComponent c{parse_domain(item.substr(0, colon)), 1.0};
    if (colon != std::string::npos) c.weight = std::stod(item.substr(colon + 1));
    if (!(c.weight > 0.0)) throw std::invalid_argument("mixture: weight for '" + item + "' must be positive");
    out.push_back(c);
  }
  if (out.empty()) throw std::invalid_argument("mixture: empty spec '" + s + "'");
  return out;
}

std::string mixture_str(const std::vector<MixtureComponent>& specs) {
  std::ostringstream os;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    os << (i ? "," : "") << domain_name(specs[i].domain) << ':' << specs[i].weight;
  }
  return os.str();
}

std::vector<Domain> mixture_schedule(const std::vector<MixtureComponent>& specs, std::size_t n) {
  if (specs.empty()) throw std::invalid_argument("mixture: empty specs");
  double total = 0.0;
  for (const auto& c : specs) {
    if (!(c.weight > 0.0)) throw std::invalid_argument("mixture: weights must be positive");
    total += c.weight;
  }
  if (std::fabs(total - 1.0) > 1e-6) throw std::invalid_argument("mixture: weights must sum to 1");
  std::vector<double> counts(specs.size(), 0.0);
  std::vector<Domain> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    double best_deficit = -1e300;
    for (std::size_t k = 0; k < specs.size(); ++k) {
      const double deficit = specs[k].weight * static_cast<double>(i + 1) - counts[k];
      if (deficit > best_deficit + 1e-12) {
        best_deficit = deficit;
        best = k;
      }
    }
    counts[best] += 1.0;
    out.push_back(specs[best].domain);
  }
  return out;
}

std::vector<Example> mixture(const std::vector<MixtureComponent>& specs, Split split, std::size_t n,
                             std::uint64_t seed) {
  const auto schedule = mixture_schedule(specs, n);
  std::map<Domain, std::uint64_t> next;
  std::vector<Example> out;
  out.reserve(n);
  for (Domain d : schedule) out.push_back(make_example(d, split, next[d]++, seed));
  return out;
}

Tensor stack_signals(std::span<const Example> examples) {
  Tensor out({examples.size(), kSignalLength});
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (examples[i].signal.size() != kSignalLength) {
      throw ShapeError("stack_signals: example " + std::to_string(i) + " has shape " +
                       shape_str(examples[i].signal.shape()));
    }
    std::copy_n(examples[i].signal.ptr(), kSignalLength, out.ptr() + i * kSignalLength);
  }
  return out;
}

Container dataset_container(std::span<const Example> examples, const std::map<std::string, std::string>& meta) {
  Container c;
  c.metadata = meta;
  c.metadata["content"] = "dataset";
  c.metadata["count"] = std::to_string(examples.size());
  c.tensors["signals"] = stack_signals(examples);
  Tensor domains({examples.size()});
  for (std::size_t i = 0; i < examples.size(); ++i) domains[i] = static_cast<float>(examples[i].domain);
  c.tensors["domains"] = std::move(domains);
  for (const auto& task : all_tasks()) {
    bool any = false;
    Tensor labels = Tensor::full({examples.size()}, -1.0f);
    for (std::size_t i = 0; i < examples.size(); ++i) {
      if (auto it = examples[i].labels.find(task.name); it != examples[i].labels.end()) {
        labels[i] = static_cast<float>(it->second);
        any = true;
      }
    }
    if (any) c.tensors["labels." + task.name] = std::move(labels);
  }
  return c;
}

std::vector<Example> examples_from_container(const Container& c) {
  auto sig = c.tensors.find("signals");
  auto dom = c.tensors.find("domains");
  if (sig == c.tensors.end() || dom == c.tensors.end() || sig->second.rank() != 2 ||
      sig->second.dim(1) != kSignalLength || dom->second.size() != sig->second.dim(0)) {
    throw std::invalid_argument("dataset: container lacks a valid signals/domains pair");
  }
  const std::size_t n = sig->second.dim(0);
  std::vector<Example> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].signal = Tensor({kSignalLength});
    std::copy_n(sig->second.ptr() + i * kSignalLength, kSignalLength, out[i].signal.ptr());
    out[i].domain = static_cast<Domain>(static_cast<int>(dom->second[i]));
  }
  for (const auto& task : all_tasks()) {
    auto it = c.tensors.find("labels." + task.name);
    if (it == c.tensors.end()) continue;
    for (std::size_t i = 0; i < n; ++i) {
      if (it->second[i] >= 0.0f) out[i].labels[task.name] = static_cast<std::size_t>(it->second[i]);
    }
  }
  return out;
}

}  // namespace distmerge
