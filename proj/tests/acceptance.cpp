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

// Acceptance runner. Prints one PASS/FAIL line per criterion; `--only N`
// runs a single criterion (each is registered separately with ctest).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "bitbudget.hpp"
#include "bitbudget/runtime.hpp"
#include "gradient_suites.hpp"

namespace bb = bitbudget;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// 1. Level sets against a two-decimal reference table, +-0.005 per entry.
Outcome level_sets() {
  const std::map<double, std::vector<double>> table{
      {1.0, {0.00, 1.00}},
      {1.5, {0.00, 0.55, 1.00}},
      {2.0, {0.00, 0.33, 0.66, 1.00}},
      {2.25, {0.00, 0.26, 0.53, 0.80, 1.00}},
      {2.5, {0.00, 0.21, 0.42, 0.64, 0.85, 1.00}},
      {2.75, {0.00, 0.17, 0.34, 0.52, 0.69, 0.87, 1.00}},
      {3.0, {0.00, 0.14, 0.28, 0.42, 0.57, 0.71, 0.85, 1.00}},
  };
  bool pass = true;
  double worst = 0.0;
  int outside = 0, entries = 0;
  std::string misses;
  for (const auto& [k, want] : table) {
    const auto got = bb::levels(bb::BitWidth(k));
    if (got.size() != want.size()) {
      pass = false;
      misses += " k=" + fmt("%g", k) + " has " + std::to_string(got.size()) + " levels;";
      continue;
    }
    for (std::size_t i = 0; i < want.size(); ++i) {
      ++entries;
      const double d = std::abs(got[i] - want[i]);
      worst = std::max(worst, d);
      if (d > 0.005) {
        pass = false;
        ++outside;
        if (outside <= 6) misses += " k=" + fmt("%g", k) + ":" + fmt("%.4f", got[i]) + " vs " + fmt("%.2f", want[i]);
      }
    }
  }
  std::string detail = std::to_string(entries) + " entries, worst |diff| " + fmt("%.4f", worst) + ", " +
                       std::to_string(outside) + " outside 0.005";
  if (!misses.empty()) detail += ";" + misses + (outside > 6 ? " ..." : "");
  return {pass, detail};
}

// 2. Bit-GEMM against a 64-bit integer GEMM, zero tolerance.
Outcome gemm_exactness() {
  std::mt19937_64 rng(20180417);
  std::uniform_int_distribution<std::size_t> dim(1, 64);
  int mismatched = 0;
  for (int t = 0; t < 1000; ++t) {
    const int m = 1 + t % 8, k = 1 + (t / 8) % 8;
    const std::size_t rows = dim(rng), inner = dim(rng), cols = dim(rng);
    std::uniform_int_distribution<int> da(0, (1 << m) - 1), db(0, (1 << k) - 1);
    std::vector<int> a(rows * inner), b(inner * cols);
    for (auto& v : a) v = da(rng);
    for (auto& v : b) v = db(rng);
    const auto c = bb::bit_gemm(bb::BitMatrix::pack(a, rows, inner, m), bb::BitMatrix::pack_columns(b, inner, cols, k));
    bool ok = c.rows == rows && c.cols == cols;
    for (std::size_t i = 0; ok && i < rows; ++i)
      for (std::size_t j = 0; ok && j < cols; ++j) {
        std::int64_t want = 0;
        for (std::size_t p = 0; p < inner; ++p) want += std::int64_t{a[i * inner + p]} * b[p * cols + j];
        ok = c.at(i, j) == want;
      }
    mismatched += !ok;
  }
  return {mismatched == 0, "1000 instances, all (M,K) in 1..8 x 1..8, " + std::to_string(mismatched) + " mismatched"};
}

// 3. Rank correlation of M*K with bit-GEMM time at each benchmark size.
Outcome runtime_trend() {
  const std::vector<std::size_t> sizes{1024, 2048};
  std::vector<std::pair<int, int>> pairs;
  for (int m : {1, 2, 4, 8})
    for (int k : {1, 2, 4, 8}) pairs.emplace_back(m, k);
  const auto rows = bb::bench_gemm(sizes, pairs, 3);
  bb::write_bench_csv(std::cout, rows);
  bool pass = true;
  std::string detail;
  for (std::size_t size : sizes) {
    std::vector<double> bits, times;
    double s11 = 0, s88 = 0;
    for (const auto& r : rows) {
      if (r.size != size) continue;
      bits.push_back(r.total_bits);
      times.push_back(r.median_ns);
      if (r.m_bits == 1 && r.k_bits == 1) s11 = r.speedup;
      if (r.m_bits == 8 && r.k_bits == 8) s88 = r.speedup;
    }
    const double rho = bb::spearman(bits, times);
    pass = pass && rho >= 0.8;
    detail += "size " + std::to_string(size) + ": spearman " + fmt("%.3f", rho) + ", speedup 1x1 " +
              fmt("%.2f", s11) + " 8x8 " + fmt("%.3f", s88) + "; ";
  }
  return {pass, detail + "threshold 0.8 per size"};
}

// 4. Budget conservation for exploring draws and hard assignments.
Outcome budget_conservation() {
  double worst = 0.0;
  for (double tau : {50.0, 10.0, 1.0, 0.1}) {
    bb::GumbelAllocator alloc(5, 10, 11, tau);
    alloc.set_logits(std::vector<double>{0.7, -1.2, 0.0, 2.1, -0.3});
    for (int i = 0; i < 10000; ++i) worst = std::max(worst, std::abs(alloc.sample_allocation().precision.total() - 10.0));
  }
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> logit(-3.0, 3.0), tau(0.05, 2.99);
  std::uniform_int_distribution<int> layers(1, 8), extra(0, 40);
  int bad_hard = 0, hard_runs = 0;
  for (int t = 0; t < 200; ++t) {
    const int l = layers(rng), budget = l + extra(rng);
    bb::GumbelAllocator alloc(static_cast<std::size_t>(l), budget, 100 + t, tau(rng));
    std::vector<double> pi(static_cast<std::size_t>(l));
    for (auto& v : pi) v = logit(rng);
    alloc.set_logits(pi);
    const auto hard = alloc.hard_assign(t < 10 ? 10000 : 1000);
    long total = 0;
    bool ok = true;
    for (double b : hard.bits) {
      ok = ok && b == std::round(b) && b >= 1.0;
      total += std::lround(b);
    }
    ok = ok && total == budget;
    bad_hard += !ok;
    ++hard_runs;
  }
  return {worst < 1e-6 && bad_hard == 0,
          "40000 exploring draws, worst |sum - B| " + fmt("%.2e", worst) + "; " + std::to_string(hard_runs) +
              " hard assignments, " + std::to_string(bad_hard) + " violating sum == B or min 1 bit"};
}

// 5. High- and low-temperature limits for logits (1, 2, -0.5).
Outcome gumbel_limits() {
  const std::vector<double> pi{1.0, 2.0, -0.5};
  bb::Rng rng(2018);
  std::vector<double> noise(3), mean(3, 0.0);
  for (int i = 0; i < 10000; ++i) {
    for (auto& g : noise) g = bb::sample_gumbel(rng);
    const auto y = bb::gumbel_softmax_sample(pi, 100.0, noise);
    for (int c = 0; c < 3; ++c) mean[c] += y[c] / 10000.0;
  }
  double mean_dev = 0.0;
  for (double m : mean) mean_dev = std::max(mean_dev, std::abs(m - 1.0 / 3.0));
  int sharp = 0, class2 = 0;
  for (int i = 0; i < 10000; ++i) {
    for (auto& g : noise) g = bb::sample_gumbel(rng);
    const auto y = bb::gumbel_softmax_sample(pi, 0.1, noise);
    const auto top = std::max_element(y.begin(), y.end());
    sharp += *top > 0.95;
    class2 += top - y.begin() == 1;
  }
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(-0.5);
  const double p2 = std::exp(2.0) / z;
  const double f2 = class2 / 10000.0;
  const bool pass = mean_dev <= 0.02 && sharp >= 9500 && std::abs(f2 - p2) <= 0.02;
  return {pass, "tau=100 max |mean - 1/3| " + fmt("%.4f", mean_dev) + "; tau=0.1 sharp draws " +
                    fmt("%.2f%%", sharp / 100.0) + ", class-2 frequency " + fmt("%.4f", f2) + " vs softmax " +
                    fmt("%.4f", p2)};
}

// 6. Finite-difference gradient checks.
Outcome gradient_integrity() {
  double worst_op = 0.0;
  std::string worst_name;
  for (const auto& c : bb::testing::tensor_op_cases()) {
    const double e = bb::testing::worst_op_error(c);
    if (e > worst_op) {
      worst_op = e;
      worst_name = c.name;
    }
  }
  double worst_toy = 0.0;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    bb::testing::ToyLogitCheck check(seed);
    worst_toy = std::max(worst_toy, check.relative_error_of_logit_gradient());
  }
  return {worst_op < 1e-4 && worst_toy < 1e-3,
          "tensor ops worst rel err " + fmt("%.2e", worst_op) + " (" + worst_name + ", limit 1e-4); toy logit " +
              "gradient worst rel err " + fmt("%.2e", worst_toy) + " over 50 seeds (limit 1e-3)"};
}

// 7. Scaled MNIST comparison of uniform and learned allocations.
Outcome mnist_experiment() {
  constexpr int kEpochs = 10;
  const auto train = bb::load_mnist_split(BITBUDGET_DATA_DIR, "train");
  const auto val = bb::load_mnist_split(BITBUDGET_DATA_DIR, "t10k");
  struct Arm {
    bb::AllocationArm arm;
    int budget;
    std::vector<int> bits;
    std::vector<double> errors;
  };
  std::vector<Arm> arms{{bb::AllocationArm::manual, 10, {2, 2, 2, 2, 2}, {}},
                        {bb::AllocationArm::learned, 10, {}, {}},
                        {bb::AllocationArm::manual, 40, {8, 8, 8, 8, 8}, {}},
                        {bb::AllocationArm::learned, 40, {}, {}}};
  std::vector<bb::RunSummary> runs;
  const auto t0 = std::chrono::steady_clock::now();
  for (auto& a : arms)
    for (std::uint64_t seed : {1, 2, 3}) {
      bb::ExperimentConfig cfg;
      cfg.arm = a.arm;
      cfg.budget = a.budget;
      cfg.manual_bits = a.bits;
      cfg.epochs = kEpochs;
      cfg.seed = seed;
      const auto result = bb::train(cfg, train, val);
      runs.push_back(bb::summarize_run(cfg, result));
      a.errors.push_back(result.final_val_error);
      std::cout << "  " << runs.back().network << " seed " << seed << ": val error "
                << fmt("%.2f%%", 100 * result.final_val_error) << ", bits "
                << bb::allocation_string(runs.back().allocation) << std::endl;
    }
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
  bb::write_summary_table(std::cout, bb::summarize(runs));
  auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
  const double u10 = mean(arms[0].errors), l10 = mean(arms[1].errors);
  const double u40 = mean(arms[2].errors), l40 = mean(arms[3].errors);
  const bool a_ok = std::all_of(arms[0].errors.begin(), arms[0].errors.end(),
                                [](double e) { return e >= 0.02 && e <= 0.08; });
  const bool b_ok = l10 <= u10;
  const bool c_ok = u40 <= 0.03 && l40 <= 0.03 && std::abs(u40 - l40) < 0.01;
  return {a_ok && b_ok && c_ok,
          std::string("(a) ") + (a_ok ? "ok" : "FAIL") + " 22222 mean " + fmt("%.2f%%", 100 * u10) +
              " in [2%, 8%] every seed; (b) " + (b_ok ? "ok" : "FAIL") + " learn-10 mean " +
              fmt("%.2f%%", 100 * l10) + " <= uniform; (c) " + (c_ok ? "ok" : "FAIL") + " budget-40 means " +
              fmt("%.2f%%", 100 * u40) + " / " + fmt("%.2f%%", 100 * l40) + " <= 3%, gap < 1%; " +
              std::to_string(kEpochs) + " epochs x 3 seeds, " + fmt("%.1f", minutes) + " min"};
}

// 8. Equal logits give uniform hard allocations.
Outcome hard_symmetry() {
  bool pass = true;
  std::string detail;
  for (int budget : {10, 20, 40}) {
    bb::GumbelAllocator alloc(5, budget, 7, 2.9);
    const auto hard = alloc.hard_assign();
    std::vector<int> bits;
    for (double b : hard.bits) bits.push_back(static_cast<int>(std::lround(b)));
    pass = pass && bits == std::vector<int>(5, budget / 5);
    detail += "B=" + std::to_string(budget) + " -> (" + bb::allocation_string(bits) + ") ";
  }
  return {pass, detail};
}

}  // namespace

int main(int argc, char** argv) {
  bb::tune_allocator();
  int only = 0;
  for (int i = 1; i + 1 < argc; ++i)
    if (std::strcmp(argv[i], "--only") == 0) only = std::atoi(argv[i + 1]);
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"quantize level sets match the reference table within 0.005", level_sets},
      {"bit-GEMM equals integer GEMM exactly", gemm_exactness},
      {"bits-vs-runtime Spearman correlation >= 0.8", runtime_trend},
      {"budget conservation for exploring and hard allocations", budget_conservation},
      {"Gumbel-Softmax temperature limits", gumbel_limits},
      {"finite-difference gradient integrity", gradient_integrity},
      {"MNIST desk-scale uniform vs learned allocation", mnist_experiment},
      {"hard-assignment symmetry for equal logits", hard_symmetry},
  };
  if (only < 0 || only > static_cast<int>(criteria.size())) {
    std::cerr << "usage: acceptance [--only N], N in 1.." << criteria.size() << '\n';
    return 2;
  }
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (only && static_cast<int>(i) + 1 != only) continue;
    Outcome o{false, ""};
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << "criterion " << i + 1 << ": " << (o.pass ? "PASS" : "FAIL") << " - " << criteria[i].first << " ["
              << o.detail << "]" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
