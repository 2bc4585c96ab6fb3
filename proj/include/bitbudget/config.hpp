// Copyright 2026 The bitbudget Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Experiment configuration: a flat `key = value` text file.
//
//   dataset            directory holding {train,t10k}-{images-idx3,labels-idx1}-ubyte
//   arm                manual | learned
//   allocation         manual arm only: "22222" or "10,2,2" (comma form for >9 bits)
//   budget             total bits; required for learned, must match for manual
//   epochs             training epochs (default 6)
//   batch_size         minibatch size (default 64)
//   seed               root seed (default 1)
//   learning_rate      Adam step size (default 0.001)
//   tau0, tau_min      temperature start and floor (defaults 50, 0.01)
//   decay_rate         per-epoch decay; omit to derive it from crossing_fraction
//   crossing_fraction  fraction of training at which tau reaches hard_threshold (0.4)
//   hard_threshold     temperature below which bits are frozen (3.0)
//   hard_trials        Monte Carlo trials for the frozen allocation (10000)
//   train_limit        use only the first N training images (0 = all)
//   val_limit          use only the first N evaluation images (0 = all)
//   output_dir         where metrics.csv and summary.csv are written
//
// Lines starting with '#' are comments. Unknown keys are rejected.

#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <istream>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "bitbudget/allocator.hpp"
#include "bitbudget/errors.hpp"

namespace bitbudget {

inline constexpr std::size_t kMnistQuantizedLayers = 5;

enum class AllocationArm { manual, learned };

// "22222" -> {2,2,2,2,2}; "10,2,2" -> {10,2,2}. Every layer needs >= 1 bit.
inline std::vector<int> parse_allocation(std::string_view text) {
  if (text.empty()) throw ValidationError("empty allocation string");
  std::vector<int> bits;
  if (text.find(',') != std::string_view::npos) {
    std::size_t start = 0;
    while (start <= text.size()) {
      const std::size_t end = std::min(text.find(',', start), text.size());
      const std::string_view field = text.substr(start, end - start);
      int v = 0;
      auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
      if (field.empty() || ec != std::errc() || ptr != field.data() + field.size()) {
        throw ValidationError("allocation field '" + std::string(field) + "' is not an integer");
      }
      if (v <= 0) throw ValidationError("0-bit layer in allocation '" + std::string(text) + "'");
      bits.push_back(v);
      start = end + 1;
    }
  } else {
    for (char c : text) {
      if (!std::isdigit(static_cast<unsigned char>(c))) {
        throw ValidationError("allocation '" + std::string(text) + "' has non-digit '" + c + "'");
      }
      if (c == '0') throw ValidationError("0-bit layer in allocation '" + std::string(text) + "'");
      bits.push_back(c - '0');
    }
  }
  return bits;
}

struct ExperimentConfig {
  std::string dataset = "data/mnist-subset";
  AllocationArm arm = AllocationArm::manual;
  std::vector<int> manual_bits;
  int budget = 0;
  int epochs = 6;
  std::size_t batch_size = 64;
  std::uint64_t seed = 1;
  double learning_rate = 1e-3;
  double tau0 = 50.0;
  double tau_min = 0.01;
  double decay_rate = 0.0;  // 0 => derived from crossing_fraction
  double crossing_fraction = 0.4;
  double hard_threshold = 3.0;
  int hard_trials = 10000;
  std::size_t train_limit = 0;
  std::size_t val_limit = 0;
  std::string output_dir = "runs/default";

  // Experiment label in the "budget=10_22222" / "budget=10_learn" style.
  std::string name() const {
    std::string label = "budget=" + std::to_string(budget) + "_";
    if (arm == AllocationArm::learned) return label + "learn";
    bool single_digits = std::all_of(manual_bits.begin(), manual_bits.end(), [](int b) { return b < 10; });
    for (std::size_t i = 0; i < manual_bits.size(); ++i) {
      if (!single_digits && i) label += ',';
      label += std::to_string(manual_bits[i]);
    }
    return label;
  }

  TemperatureSchedule schedule() const {
    if (decay_rate > 0.0) return TemperatureSchedule{tau0, tau_min, decay_rate, hard_threshold};
    return TemperatureSchedule::crossing_at(epochs, crossing_fraction, tau0, tau_min, hard_threshold);
  }

  void validate() const {
    if (epochs < 1) throw ValidationError("epochs must be >= 1");
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
    if (!(tau0 > 0.0) || !(tau_min > 0.0) || !(hard_threshold > 0.0)) {
      throw ValidationError("temperatures must be positive");
    }
    if (decay_rate < 0.0) throw ValidationError("decay_rate must be non-negative");
    if (!(crossing_fraction > 0.0)) throw ValidationError("crossing_fraction must be positive");
    if (hard_trials < 1) throw ValidationError("hard_trials must be >= 1");
    if (arm == AllocationArm::manual) {
      if (manual_bits.size() != kMnistQuantizedLayers) {
        throw ValidationError("manual allocation must name " + std::to_string(kMnistQuantizedLayers) +
                              " layers, got " + std::to_string(manual_bits.size()));
      }
      const int total = std::accumulate(manual_bits.begin(), manual_bits.end(), 0);
      if (budget != total) {
        throw ValidationError("budget " + std::to_string(budget) + " does not match allocation sum " +
                              std::to_string(total));
      }
    } else if (budget < static_cast<int>(kMnistQuantizedLayers)) {
      throw ValidationError("learned budget must be >= " + std::to_string(kMnistQuantizedLayers) +
                            " so every layer keeps at least one bit");
    }
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <class N>
N parse_number(const std::string& key, const std::string& value) {
  N out{};
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ValidationError("config key '" + key + "': cannot parse '" + value + "'");
  }
  return out;
}

}  // namespace detail

inline ExperimentConfig parse_config(std::istream& in) {
  ExperimentConfig cfg;
  bool budget_given = false;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = detail::trim(std::string_view(t).substr(0, eq));
    const std::string value = detail::trim(std::string_view(t).substr(eq + 1));
    if (key == "dataset") cfg.dataset = value;
    else if (key == "arm") {
      if (value == "manual") cfg.arm = AllocationArm::manual;
      else if (value == "learned") cfg.arm = AllocationArm::learned;
      else throw ValidationError("arm must be 'manual' or 'learned', got '" + value + "'");
    }
    else if (key == "allocation") cfg.manual_bits = parse_allocation(value);
    else if (key == "budget") { cfg.budget = detail::parse_number<int>(key, value); budget_given = true; }
    else if (key == "epochs") cfg.epochs = detail::parse_number<int>(key, value);
    else if (key == "batch_size") cfg.batch_size = detail::parse_number<std::size_t>(key, value);
    else if (key == "seed") cfg.seed = detail::parse_number<std::uint64_t>(key, value);
    else if (key == "learning_rate") cfg.learning_rate = detail::parse_number<double>(key, value);
    else if (key == "tau0") cfg.tau0 = detail::parse_number<double>(key, value);
    else if (key == "tau_min") cfg.tau_min = detail::parse_number<double>(key, value);
    else if (key == "decay_rate") cfg.decay_rate = detail::parse_number<double>(key, value);
    else if (key == "crossing_fraction") cfg.crossing_fraction = detail::parse_number<double>(key, value);
    else if (key == "hard_threshold") cfg.hard_threshold = detail::parse_number<double>(key, value);
    else if (key == "hard_trials") cfg.hard_trials = detail::parse_number<int>(key, value);
    else if (key == "train_limit") cfg.train_limit = detail::parse_number<std::size_t>(key, value);
    else if (key == "val_limit") cfg.val_limit = detail::parse_number<std::size_t>(key, value);
    else if (key == "output_dir") cfg.output_dir = value;
    else throw ValidationError("unknown config key '" + key + "' on line " + std::to_string(lineno));
  }
  if (cfg.arm == AllocationArm::manual && !budget_given) {
    cfg.budget = std::accumulate(cfg.manual_bits.begin(), cfg.manual_bits.end(), 0);
  }
  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
  return parse_config(in);
}

}  // namespace bitbudget
