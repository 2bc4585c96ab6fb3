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

// Command-line front end shared by the `bitbudget` tool and the tests.
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#pragma once

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "bitbudget/allocator.hpp"
#include "bitbudget/bitgemm.hpp"
#include "bitbudget/config.hpp"
#include "bitbudget/experiment.hpp"
#include "bitbudget/mnist.hpp"
#include "bitbudget/quantization.hpp"

namespace bitbudget {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

namespace detail {

inline std::string short_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

template <class Seq, class F>
std::string join(const Seq& values, const std::string& sep, F&& fmt) {
  std::string out;
  bool first = true;
  for (const auto& v : values) {
    if (!first) out += sep;
    out += fmt(v);
    first = false;
  }
  return out;
}

inline std::pair<int, int> parse_bit_pair(const std::string& s) {
  const auto x = s.find_first_of("xX");
  if (x == std::string::npos) throw ValidationError("bit pair '" + s + "' must look like MxK");
  try {
    return {std::stoi(s.substr(0, x)), std::stoi(s.substr(x + 1))};
  } catch (const std::exception&) {
    throw ValidationError("bit pair '" + s + "' must look like MxK");
  }
}

}  // namespace detail

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"bitbudget: learned per-layer precision under a fixed bit budget"};
  app.name("bitbudget");
  app.require_subcommand(1);

  std::string config_path, output_dir;
  std::optional<std::uint64_t> seed_override;
  auto* train_cmd = app.add_subcommand("train", "train a quantized MNIST network from a config file");
  train_cmd->add_option("--config", config_path, "experiment config (key = value)")->required();
  train_cmd->add_option("--seed", seed_override, "override the config's root seed");
  train_cmd->add_option("--output-dir", output_dir, "override the config's output_dir");

  std::vector<std::size_t> sizes{1024};
  std::vector<std::string> bit_pairs{"1x1", "2x2", "4x4", "8x8"};
  int repeats = 3;
  std::string bench_out;
  auto* bench_cmd = app.add_subcommand("bench-gemm", "time bit-plane GEMM against a blocked fp32 GEMM");
  bench_cmd->add_option("--sizes", sizes, "square matrix sizes, comma separated (>= 64)")->delimiter(',');
  bench_cmd->add_option("--bits", bit_pairs, "operand widths MxK, comma separated")->delimiter(',');
  bench_cmd->add_option("--repeats", repeats, "timed repetitions per kernel (median, >= 3)");
  bench_cmd->add_option("--out", bench_out, "CSV path (stdout when omitted)");

  double demo_k = 2.0;
  auto* demo_cmd = app.add_subcommand("quantize-demo", "print the quantizer output levels for k bits");
  demo_cmd->add_option("--k", demo_k, "bit width, may be fractional")->required();

  std::vector<double> sim_logits;
  double sim_tau = 1.0;
  int sim_budget = 0, sim_trials = 10000;
  std::uint64_t sim_seed = 1;
  auto* sim_cmd = app.add_subcommand("allocate-sim", "sample fractional and hard allocations");
  sim_cmd->add_option("--logits", sim_logits, "per-layer logits, comma separated")->delimiter(',')->required();
  sim_cmd->add_option("--tau", sim_tau, "temperature")->required();
  sim_cmd->add_option("--budget", sim_budget, "total bits")->required();
  sim_cmd->add_option("--trials", sim_trials, "Monte Carlo trials for the hard assignment");
  sim_cmd->add_option("--seed", sim_seed, "noise seed");

  std::string mnist_dir;
  auto* check_cmd = app.add_subcommand("mnist-check", "validate MNIST IDX files in a directory");
  check_cmd->add_option("--dir", mnist_dir, "directory with {train,t10k}-*-ubyte files")->required();

  std::vector<std::string> summary_paths;
  auto* sum_cmd = app.add_subcommand("summarize", "aggregate run summaries across seeds");
  sum_cmd->add_option("runs", summary_paths, "summary.csv files or run directories")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const CLI::App* failed = &app;
    for (const auto* sub : app.get_subcommands()) failed = sub;
    err << failed->help();
    return kExitUsage;
  }

  try {
    if (train_cmd->parsed()) {
      ExperimentConfig cfg = load_config(config_path);
      if (seed_override) cfg.seed = *seed_override;
      if (!output_dir.empty()) cfg.output_dir = output_dir;
      const RunSummary s = run_experiment(cfg, &err);
      write_run_summary(out, s);
    } else if (bench_cmd->parsed()) {
      std::vector<std::pair<int, int>> pairs;
      for (const auto& p : bit_pairs) pairs.push_back(detail::parse_bit_pair(p));
      const auto rows = bench_gemm(sizes, pairs, repeats);
      if (bench_out.empty()) {
        write_bench_csv(out, rows);
      } else {
        std::ofstream f(bench_out);
        if (!f) throw std::runtime_error("cannot write '" + bench_out + "'");
        write_bench_csv(f, rows);
      }
    } else if (demo_cmd->parsed()) {
      const auto lv = levels(BitWidth(demo_k));
      out << detail::join(lv, ", ", detail::short_number) << '\n';
    } else if (sim_cmd->parsed()) {
      GumbelAllocator alloc(sim_logits.size(), sim_budget, sim_seed, sim_tau);
      alloc.set_logits(sim_logits);
      const auto sample = alloc.sample_allocation();
      out << "sample: " << detail::join(sample.precision.bits, ",", detail::short_number) << '\n';
      const auto hard = alloc.hard_assign(sim_trials);
      out << "hard: " << detail::join(hard.bits, ",", [](double b) { return std::to_string(std::lround(b)); })
          << '\n';
    } else if (check_cmd->parsed()) {
      bool any = false;
      for (const char* split : {"train", "t10k"}) {
        const auto dir = std::filesystem::path(mnist_dir);
        if (!std::filesystem::exists(dir / (std::string(split) + "-images-idx3-ubyte"))) continue;
        const MnistSet set = load_mnist_split(dir, split);
        out << split << ": " << set.size() << " images " << shape_string(set.images.shape()) << " ok\n";
        any = true;
      }
      if (!any) throw std::runtime_error("no train-* or t10k-* IDX files in '" + mnist_dir + "'");
    } else if (sum_cmd->parsed()) {
      std::vector<RunSummary> runs;
      for (const auto& p : summary_paths) {
        std::filesystem::path path(p);
        if (std::filesystem::is_directory(path)) path /= "summary.csv";
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
        runs.push_back(read_run_summary(in, path.string()));
      }
      write_summary_table(out, summarize(runs));
    }
  } catch (const std::exception& e) {
    err << "bitbudget: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace bitbudget
