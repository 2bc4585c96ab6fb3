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

// Result artifacts: the per-epoch metrics CSV, the one-line run summary
// (network, budget, val error, final allocation) and the across-seed
// summary table.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "bitbudget/config.hpp"
#include "bitbudget/errors.hpp"
#include "bitbudget/mnist.hpp"
#include "bitbudget/training.hpp"

namespace bitbudget {

namespace detail {
inline std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}
}  // namespace detail

inline void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows, std::size_t layers) {
  os << "epoch,split,error,loss,tau";
  for (std::size_t i = 0; i < layers; ++i) os << ",bits_" << i;
  for (std::size_t i = 0; i < layers; ++i) os << ",logit_" << i;
  os << '\n';
  for (const auto& r : rows) {
    os << r.epoch << ',' << r.split << ',' << detail::fixed(r.error) << ',' << detail::fixed(r.loss) << ','
       << detail::fixed(r.tau);
    for (std::size_t i = 0; i < layers; ++i) os << ',' << (i < r.bits.size() ? detail::fixed(r.bits[i]) : "");
    for (std::size_t i = 0; i < layers; ++i) os << ',' << (i < r.logits.size() ? detail::fixed(r.logits[i]) : "");
    os << '\n';
  }
}

struct RunSummary {
  std::string network;  // e.g. budget=10_learn
  int budget = 0;
  double val_error = 0.0;
  std::vector<int> allocation;
};

inline std::string allocation_string(const std::vector<int>& bits) {
  std::string s;
  for (std::size_t i = 0; i < bits.size(); ++i) s += (i ? " " : "") + std::to_string(bits[i]);
  return s;
}

inline void write_run_summary(std::ostream& os, const RunSummary& s) {
  os << "network,budget,val_error,allocation\n"
     << s.network << ',' << s.budget << ',' << detail::fixed(s.val_error) << ',' << allocation_string(s.allocation)
     << '\n';
}

inline RunSummary read_run_summary(std::istream& in, const std::string& origin = "summary") {
  std::string header, line;
  if (!std::getline(in, header) || header != "network,budget,val_error,allocation" || !std::getline(in, line)) {
    throw FormatError(origin + ": not a run summary");
  }
  std::vector<std::string> f;
  std::stringstream ss(line);
  for (std::string part; std::getline(ss, part, ',');) f.push_back(part);
  if (f.size() != 4) throw FormatError(origin + ": expected 4 fields, got " + std::to_string(f.size()));
  RunSummary s;
  s.network = f[0];
  try {
    s.budget = std::stoi(f[1]);
    s.val_error = std::stod(f[2]);
  } catch (const std::exception&) {
    throw FormatError(origin + ": malformed numbers in '" + line + "'");
  }
  std::stringstream bits(f[3]);
  for (int b; bits >> b;) s.allocation.push_back(b);
  return s;
}

struct ArmSummary {
  std::string network;
  int budget = 0;
  std::size_t runs = 0;
  double mean_error = 0.0;
  double std_error = 0.0;  // sample standard deviation; 0 for a single run
  std::vector<int> allocation;  // most frequent final allocation
};

// Groups runs by network label, in order of first appearance.
inline std::vector<ArmSummary> summarize(const std::vector<RunSummary>& runs) {
  std::vector<ArmSummary> arms;
  std::vector<std::vector<const RunSummary*>> members;
  for (const auto& r : runs) {
    auto it = std::find_if(arms.begin(), arms.end(), [&](const ArmSummary& a) { return a.network == r.network; });
    if (it == arms.end()) {
      arms.push_back({r.network, r.budget, 0, 0.0, 0.0, {}});
      members.emplace_back();
      it = arms.end() - 1;
    }
    auto& group = members[static_cast<std::size_t>(it - arms.begin())];
    if (r.budget != it->budget || (!group.empty() && group.front()->allocation.size() != r.allocation.size())) {
      throw ValidationError("runs labelled '" + r.network + "' disagree on budget or layer count");
    }
    group.push_back(&r);
  }
  for (std::size_t a = 0; a < arms.size(); ++a) {
    const auto& group = members[a];
    const double n = static_cast<double>(group.size());
    // Deviations from the first run keep identical runs at exactly 0 spread.
    const double shift = group.front()->val_error;
    double sum = 0.0, sum_sq = 0.0;
    for (const auto* r : group) {
      const double d = r->val_error - shift;
      sum += d;
      sum_sq += d * d;
    }
    const double var = std::max(0.0, sum_sq - sum * sum / n);
    arms[a].runs = group.size();
    arms[a].mean_error = shift + sum / n;
    arms[a].std_error = group.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
    std::map<std::vector<int>, std::size_t> counts;
    for (const auto* r : group) ++counts[r->allocation];
    std::size_t best = 0;
    for (const auto* r : group) {  // first-seen wins ties
      if (counts[r->allocation] > best) {
        best = counts[r->allocation];
        arms[a].allocation = r->allocation;
      }
    }
  }
  return arms;
}

// network, budget, error (percent, mean +- std), final allocation.
inline void write_summary_table(std::ostream& os, const std::vector<ArmSummary>& arms) {
  os << "network,budget,val_error_mean_pct,val_error_std_pct,runs,allocation\n";
  for (const auto& a : arms) {
    os << a.network << ',' << a.budget << ',' << detail::fixed(100.0 * a.mean_error, 3) << ','
       << detail::fixed(100.0 * a.std_error, 3) << ',' << a.runs << ',' << allocation_string(a.allocation) << '\n';
  }
}

inline RunSummary summarize_run(const ExperimentConfig& config, const TrainResult& result) {
  RunSummary s{config.name(), config.budget, result.final_val_error, {}};
  for (double b : result.final_bits.bits) s.allocation.push_back(static_cast<int>(std::lround(b)));
  return s;
}

// Loads the dataset named by `config`, trains, and writes metrics.csv and
// summary.csv into config.output_dir.
inline RunSummary run_experiment(const ExperimentConfig& config, std::ostream* progress = nullptr) {
  const std::filesystem::path dir(config.dataset);
  const MnistSet train_set = take_first(load_mnist_split(dir, "train"), config.train_limit);
  const MnistSet val_set = take_first(load_mnist_split(dir, "t10k"), config.val_limit);
  TrainHooks hooks;
  if (progress) {
    hooks.on_epoch = [&](const MetricsRow& tr, const MetricsRow& va) {
      *progress << config.name() << " seed " << config.seed << " epoch " << tr.epoch << ": train loss "
                << detail::fixed(tr.loss, 4) << ", val error " << detail::fixed(100.0 * va.error, 2) << "%, tau "
                << detail::fixed(tr.tau, 3) << '\n';
    };
  }
  const TrainResult result = train(config, train_set, val_set, hooks);
  const RunSummary summary = summarize_run(config, result);
  std::filesystem::create_directories(config.output_dir);
  std::ofstream metrics(std::filesystem::path(config.output_dir) / "metrics.csv");
  write_metrics_csv(metrics, result.history, result.model.layers.size());
  std::ofstream sum(std::filesystem::path(config.output_dir) / "summary.csv");
  write_run_summary(sum, summary);
  return summary;
}

}  // namespace bitbudget
