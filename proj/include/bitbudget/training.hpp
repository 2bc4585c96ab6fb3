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

// Training loop: per-minibatch allocation sampling while exploring, a single
// hard assignment at the first step whose temperature drops below the
// threshold, and Adam on both weights and allocation logits.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "bitbudget/allocator.hpp"
#include "bitbudget/config.hpp"
#include "bitbudget/mnist.hpp"
#include "bitbudget/network.hpp"
#include "bitbudget/optim.hpp"

namespace bitbudget {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MetricsRow {
  int epoch = 0;
  std::string split;  // "train" or "val"
  double error = 0.0;
  double loss = 0.0;
  double tau = 0.0;
  std::vector<double> bits;
  std::vector<double> logits;
};

struct TrainResult {
  Model model;
  std::vector<MetricsRow> history;
  LayerPrecision final_bits;
  double final_val_error = 0.0;
  std::optional<std::size_t> hard_assignment_step;
  // One entry per optimizer step: the bit vector used for that minibatch.
  std::vector<std::vector<double>> step_bits;
};

struct TrainHooks {
  // Called once per epoch after the metrics rows are appended.
  std::function<void(const MetricsRow& train, const MetricsRow& val)> on_epoch;
};

inline TrainResult train(const ExperimentConfig& config, const MnistSet& train_set, const MnistSet& val_set,
                         const TrainHooks& hooks = {}) {
  config.validate();
  if (train_set.size() == 0 || val_set.size() == 0) throw ContractError("train: empty dataset");
  TrainResult result{build_mnist_model(config), {}, {}, 0.0, std::nullopt, {}};
  Model& model = result.model;
  const AdamOptions opts{config.learning_rate};
  Adam<float> weight_opt(model.weight_parameters(), opts);
  std::optional<Adam<float>> logit_opt;
  if (model.allocator) logit_opt.emplace(std::vector<Tensor>{model.allocator->logits()}, opts);

  Rng data_rng(derive_seed(config.seed, 0));
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batches = (train_set.size() + config.batch_size - 1) / config.batch_size;
  std::size_t step = 0;

  auto current_bits = [&]() -> LayerPrecision {
    if (!model.allocator) return {model.fixed_bits, AllocationMode::hard};
    if (model.allocator->frozen()) return model.allocator->hard_allocation();
    return {model.allocator->softmax_allocation(), AllocationMode::exploring};
  };

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), data_rng);
    double loss_sum = 0.0;
    std::size_t wrong = 0;
    std::vector<double> bits_sum(model.layers.size(), 0.0);
    double tau = model.allocator ? model.allocator->temperature() : 0.0;

    for (std::size_t b = 0; b < batches; ++b, ++step) {
      const std::size_t start = b * config.batch_size;
      const std::size_t end = std::min(train_set.size(), start + config.batch_size);
      auto [images, labels] = gather_batch(train_set, std::span(order).subspan(start, end - start));

      Tensor bits;
      if (model.allocator) {
        auto& alloc = *model.allocator;
        tau = model.schedule.at(epoch + static_cast<double>(b) / static_cast<double>(batches));
        if (!alloc.frozen()) {
          alloc.set_temperature(tau);
          if (tau < model.schedule.hard_threshold) {
            alloc.hard_assign(config.hard_trials);
            result.hard_assignment_step = step;
          }
        }
        auto draw = alloc.sample_allocation();
        bits = draw.bits;
      } else {
        std::vector<float> fixed(model.fixed_bits.begin(), model.fixed_bits.end());
        bits = Tensor::from_data(Shape{model.layers.size()}, std::move(fixed));
      }
      result.step_bits.emplace_back(bits.data().begin(), bits.data().end());
      for (std::size_t i = 0; i < bits_sum.size(); ++i) bits_sum[i] += bits.data()[i];

      const Tensor logits = forward_quantized(model, images, bits);
      const Tensor loss = softmax_cross_entropy(logits, labels);
      const double lv = loss.item();
      if (!std::isfinite(lv)) {
        throw TrainingError("non-finite loss " + std::to_string(lv) + " at epoch " + std::to_string(epoch) +
                            ", batch " + std::to_string(b) + ", tau " + std::to_string(tau));
      }
      loss_sum += lv * static_cast<double>(labels.size());
      wrong += static_cast<std::size_t>(std::lround(top1_error(logits, labels) * static_cast<double>(labels.size())));

      weight_opt.zero_grad();
      if (logit_opt) logit_opt->zero_grad();
      backward(loss);
      weight_opt.step();
      if (logit_opt && !model.allocator->frozen()) logit_opt->step();
    }

    MetricsRow train_row;
    train_row.epoch = epoch;
    train_row.split = "train";
    train_row.error = static_cast<double>(wrong) / static_cast<double>(train_set.size());
    train_row.loss = loss_sum / static_cast<double>(train_set.size());
    train_row.tau = tau;
    for (auto& v : bits_sum) v /= static_cast<double>(batches);
    train_row.bits = bits_sum;
    if (model.allocator) train_row.logits = model.allocator->logit_values();

    const LayerPrecision eval_bits = current_bits();
    const Evaluation ev = evaluate(model, val_set, eval_bits);
    MetricsRow val_row = train_row;
    val_row.split = "val";
    val_row.error = ev.error;
    val_row.loss = ev.loss;
    val_row.bits = eval_bits.bits;

    result.history.push_back(train_row);
    result.history.push_back(val_row);
    if (hooks.on_epoch) hooks.on_epoch(train_row, val_row);
    result.final_val_error = ev.error;
    result.final_bits = eval_bits;
  }
  return result;
}

}  // namespace bitbudget
