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

// The precision allocation layer. A Gumbel-Softmax (Concrete) distribution
// over L layers is sampled `budget` times per step and the draws are summed,
// so the per-layer bit widths always add up to the budget. The temperature
// is annealed; once it falls below a threshold the expected allocation is
// estimated by Monte Carlo, rounded to integers and frozen.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "bitbudget/errors.hpp"
#include "bitbudget/tensor.hpp"

namespace bitbudget {

using Rng = std::mt19937_64;

// splitmix64 finalizer over (root, stream); gives independent seeds for the
// data order, weight init and Gumbel noise of one run.
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
  std::uint64_t z = root + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Standard Gumbel variate -ln(-ln(u)), u ~ U(0, 1).
inline double sample_gumbel(Rng& rng) {
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  double u = 0.0;
  while (u <= 0.0) u = uniform(rng);
  return -std::log(-std::log(u));
}

inline std::vector<double> gumbel_softmax_sample(std::span<const double> logits, double tau,
                                                 std::span<const double> noise) {
  if (!(tau > 0.0)) throw ContractError("temperature must be positive, got " + std::to_string(tau));
  if (logits.size() != noise.size() || logits.empty()) {
    throw DimensionError("gumbel_softmax_sample: " + std::to_string(logits.size()) +
                         " logits vs " + std::to_string(noise.size()) + " noise values");
  }
  std::vector<double> y(logits.size());
  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = (logits[i] + noise[i]) / tau;
    peak = std::max(peak, y[i]);
  }
  double z = 0.0;
  for (auto& v : y) z += (v = std::exp(v - peak));
  for (auto& v : y) v /= z;
  return y;
}

// Vector-Jacobian product of one softmax draw: dy_i/dpi_j = y_i (delta_ij - y_j) / tau.
inline void softmax_draw_vjp(std::span<const double> y, double tau, std::span<const double> upstream,
                             std::span<double> grad_logits) {
  double dot = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) dot += upstream[i] * y[i];
  for (std::size_t j = 0; j < y.size(); ++j) grad_logits[j] += y[j] * (upstream[j] - dot) / tau;
}

// Sum of the per-draw VJPs for `draws` laid out as [draw][layer].
inline std::vector<double> allocation_vjp(std::span<const double> draws, std::size_t layers,
                                          double tau, std::span<const double> upstream) {
  if (upstream.size() != layers) {
    throw DimensionError("allocation gradient needs " + std::to_string(layers) +
                         " values, got " + std::to_string(upstream.size()));
  }
  std::vector<double> grad(layers, 0.0);
  for (std::size_t off = 0; off + layers <= draws.size(); off += layers)
    softmax_draw_vjp(draws.subspan(off, layers), tau, upstream, grad);
  return grad;
}

// tau(t) = max(floor, initial * exp(-decay_rate * t)), t in (fractional) epochs.
struct TemperatureSchedule {
  double initial = 50.0;
  double floor = 0.01;
  double decay_rate = 0.0;
  double hard_threshold = 3.0;

  double at(double epoch) const {
    if (!(epoch >= 0.0)) throw ContractError("epoch must be non-negative");
    return std::max(floor, initial * std::exp(-decay_rate * epoch));
  }

  // Epoch at which the unfloored curve reaches hard_threshold.
  double crossing_epoch() const { return std::log(initial / hard_threshold) / decay_rate; }

  // Schedule whose threshold crossing happens after `fraction` of `total_epochs`.
  static TemperatureSchedule crossing_at(double total_epochs, double fraction = 0.4,
                                         double initial = 50.0, double floor = 0.01,
                                         double hard_threshold = 3.0) {
    if (!(total_epochs > 0.0) || !(fraction > 0.0)) {
      throw ContractError("crossing_at: epochs and fraction must be positive");
    }
    TemperatureSchedule s{initial, floor, 0.0, hard_threshold};
    s.decay_rate = std::log(initial / hard_threshold) / (fraction * total_epochs);
    return s;
  }
};

inline double advance_temperature(const TemperatureSchedule& schedule, double epoch) {
  return schedule.at(epoch);
}

enum class AllocationMode { exploring, hard };

struct LayerPrecision {
  std::vector<double> bits;
  AllocationMode mode = AllocationMode::exploring;

  double total() const { return std::accumulate(bits.begin(), bits.end(), 0.0); }
  std::size_t size() const { return bits.size(); }
};

// Moves one bit at a time from the widest layer (lowest index on ties) into
// any layer holding zero. Requires sum(bits) >= bits.size().
inline void enforce_minimum_bits(std::vector<int>& bits) {
  for (std::size_t i = 0; i < bits.size(); ++i) {
    while (bits[i] < 1) {
      auto widest = std::max_element(bits.begin(), bits.end());
      if (*widest <= 1) throw ContractError("budget too small to give every layer one bit");
      --*widest;
      ++bits[i];
    }
  }
}

// Largest-remainder rounding of a fractional allocation that sums to
// `budget`; remainders tie-break toward the lower layer index. Layers that
// round to zero are then topped up to one bit.
inline std::vector<int> largest_remainder_round(std::span<const double> expectation, int budget) {
  const std::size_t n = expectation.size();
  std::vector<int> out(n);
  std::vector<double> remainder(n);
  long assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double f = std::floor(std::max(0.0, expectation[i]));
    out[i] = static_cast<int>(f);
    remainder[i] = expectation[i] - f;
    assigned += out[i];
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  long missing = budget - assigned;
  for (std::size_t r = 0; missing > 0; r = (r + 1) % n, --missing) ++out[order[r]];
  for (long extra = -missing; extra > 0; --extra) {
    // Only reachable if the expectation overshoots the budget; trim the widest.
    --*std::max_element(out.begin(), out.end());
  }
  enforce_minimum_bits(out);
  return out;
}

template <class T>
class BasicGumbelAllocator {
 public:
  struct Draw {
    LayerPrecision precision;
    BasicTensor<T> bits;  // shape [L]; differentiable w.r.t. logits while exploring
  };

  BasicGumbelAllocator(std::size_t layers, int budget, std::uint64_t seed, double temperature = 50.0)
      : logits_(Shape{checked_layers(layers)}, T{0}, true),
        budget_(budget),
        rng_(seed) {
    if (budget < 1) throw ContractError("budget must be a positive number of bits");
    set_temperature(temperature);
  }

  std::size_t layers() const { return logits_.numel(); }
  int budget() const { return budget_; }
  double temperature() const { return tau_; }
  void set_temperature(double tau) {
    if (!(tau > 0.0)) throw ContractError("temperature must be positive, got " + std::to_string(tau));
    tau_ = tau;
  }

  BasicTensor<T>& logits() { return logits_; }
  const BasicTensor<T>& logits() const { return logits_; }
  std::vector<double> logit_values() const {
    return {logits_.data().begin(), logits_.data().end()};
  }
  void set_logits(std::span<const double> values) {
    if (values.size() != layers()) throw DimensionError("set_logits: wrong length");
    for (std::size_t i = 0; i < values.size(); ++i) logits_.data()[i] = static_cast<T>(values[i]);
  }

  bool frozen() const { return hard_.has_value(); }
  const LayerPrecision& hard_allocation() const {
    if (!hard_) throw ContractError("no hard assignment has been made");
    return *hard_;
  }

  // budget x layers standard Gumbel noise, row per draw.
  std::vector<double> draw_noise() {
    std::vector<double> noise(static_cast<std::size_t>(budget_) * layers());
    for (auto& g : noise) g = sample_gumbel(rng_);
    return noise;
  }

  Draw sample_allocation() {
    if (frozen()) return frozen_draw();
    return sample_allocation(draw_noise());
  }

  // Same as sample_allocation() but with caller-supplied noise (budget x layers).
  Draw sample_allocation(std::span<const double> noise) {
    if (frozen()) return frozen_draw();
    const std::size_t n = layers();
    if (noise.size() != static_cast<std::size_t>(budget_) * n) {
      throw DimensionError("sample_allocation: expected " +
                           std::to_string(static_cast<std::size_t>(budget_) * n) +
                           " noise values, got " + std::to_string(noise.size()));
    }
    const std::vector<double> pi = logit_values();
    std::vector<double> draws;
    draws.reserve(noise.size());
    std::vector<double> bits(n, 0.0);
    for (int b = 0; b < budget_; ++b) {
      auto y = gumbel_softmax_sample(pi, tau_, noise.subspan(static_cast<std::size_t>(b) * n, n));
      for (std::size_t i = 0; i < n; ++i) bits[i] += y[i];
      draws.insert(draws.end(), y.begin(), y.end());
    }
    last_draws_ = draws;
    std::vector<T> bits_t(bits.begin(), bits.end());
    auto li = logits_.impl();
    BasicTensor<T> t = detail::make_result<T>(
        {n}, std::move(bits_t), {&logits_}, "gumbel_allocation",
        [li, n, tau = tau_, draws = std::move(draws)](const detail::TensorImpl<T>& o) {
          std::vector<double> up(o.grad.begin(), o.grad.end());
          auto g = allocation_vjp(draws, n, tau, up);
          li->ensure_grad();
          for (std::size_t j = 0; j < n; ++j) li->grad[j] += static_cast<T>(g[j]);
        });
    return {LayerPrecision{std::move(bits), AllocationMode::exploring}, std::move(t)};
  }

  // Logit gradient for the most recent exploring draw, given d(loss)/d(bits).
  std::vector<double> allocator_backward(std::span<const double> upstream) const {
    if (frozen()) throw ContractError("allocator is frozen after hard assignment; no logit gradient");
    if (last_draws_.empty()) throw ContractError("allocator_backward before any sample");
    return allocation_vjp(last_draws_, layers(), tau_, upstream);
  }

  // Mean of `num_trials` allocations at the current temperature.
  std::vector<double> estimate_expectation(int num_trials) {
    if (num_trials < 1) throw ContractError("num_trials must be at least 1");
    const std::size_t n = layers();
    const std::vector<double> pi = logit_values();
    std::vector<double> mean(n, 0.0);
    std::vector<double> noise(n);
    for (int t = 0; t < num_trials; ++t)
      for (int b = 0; b < budget_; ++b) {
        for (auto& g : noise) g = sample_gumbel(rng_);
        auto y = gumbel_softmax_sample(pi, tau_, noise);
        for (std::size_t i = 0; i < n; ++i) mean[i] += y[i];
      }
    for (auto& v : mean) v /= num_trials;
    return mean;
  }

  // Estimates the expected allocation, rounds it to integers that sum to the
  // budget with every layer >= 1, and freezes the allocator.
  LayerPrecision hard_assign(int num_trials = 10000) {
    if (num_trials < 1) throw ContractError("num_trials must be at least 1");
    if (static_cast<std::size_t>(budget_) < layers()) {
      throw ContractError("budget " + std::to_string(budget_) + " cannot give each of " +
                          std::to_string(layers()) + " layers a bit");
    }
    const auto expectation = estimate_expectation(num_trials);
    const auto rounded = largest_remainder_round(expectation, budget_);
    hard_ = LayerPrecision{std::vector<double>(rounded.begin(), rounded.end()), AllocationMode::hard};
    last_draws_.clear();
    return *hard_;
  }

  // budget * softmax(logits): the tau -> 0 mean allocation.
  std::vector<double> softmax_allocation() const {
    const std::vector<double> zeros(layers(), 0.0);
    auto p = gumbel_softmax_sample(logit_values(), 1.0, zeros);
    for (auto& v : p) v *= budget_;
    return p;
  }

 private:
  static std::size_t checked_layers(std::size_t layers) {
    if (layers == 0) throw ContractError("allocator needs at least one layer");
    return layers;
  }

  Draw frozen_draw() const {
    std::vector<T> bits(hard_->bits.begin(), hard_->bits.end());
    return {*hard_, BasicTensor<T>::from_data({layers()}, std::move(bits))};
  }

  BasicTensor<T> logits_;
  int budget_;
  double tau_ = 50.0;
  Rng rng_;
  std::vector<double> last_draws_;
  std::optional<LayerPrecision> hard_;
};

using GumbelAllocator = BasicGumbelAllocator<float>;

}  // namespace bitbudget
