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

// The quantized LeNet-style MNIST network and its forward pass under a
// per-layer bit allocation.
//
//   conv 16@5x5 -> pool -> conv 32@5x5 -> pool -> conv 32@3x3 (pad 1)
//   -> conv 64@3x3 (pad 1) -> dense 10
//
// Layer i quantizes both its weights and its input activations with
// bits[i]. Hidden layers end in the clip(0, 1) nonlinearity, so the next
// layer's activation quantizer sees values on [0, 1]. A width of 32 bits or
// more skips both quantizers and leaves the plain real layer.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "bitbudget/allocator.hpp"
#include "bitbudget/config.hpp"
#include "bitbudget/errors.hpp"
#include "bitbudget/mnist.hpp"
#include "bitbudget/quantization.hpp"
#include "bitbudget/tensor.hpp"

namespace bitbudget {

inline constexpr double kFullPrecisionBits = 32.0;
inline constexpr float kQuantizedGain = 2.0f;

enum class LayerKind { conv, dense };

struct QuantLayer {
  LayerKind kind = LayerKind::conv;
  Tensor weights;  // conv: F x C x kh x kw, dense: in x out
  Tensor bias;
  std::size_t bit_index = 0;
  bool quantize_weights = true;
  bool quantize_activations = true;
  std::size_t padding = 0;
  bool pool_after = false;
  // Quantized weights live on [-1, 1] whatever the scale of `weights`; their
  // product is multiplied by this (gain / sqrt(fan_in)).
  float quantized_scale = 1.0f;

  std::size_t fan_in() const {
    return kind == LayerKind::conv ? weights.dim(1) * weights.dim(2) * weights.dim(3) : weights.dim(0);
  }
};

struct Model {
  std::vector<QuantLayer> layers;
  AllocationArm mode = AllocationArm::manual;
  std::vector<double> fixed_bits;             // manual arm
  std::optional<GumbelAllocator> allocator;  // learned arm
  TemperatureSchedule schedule;

  std::size_t quantized_layers() const { return layers.size(); }

  std::vector<Tensor> weight_parameters() {
    std::vector<Tensor> out;
    for (auto& l : layers) {
      out.push_back(l.weights);
      out.push_back(l.bias);
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weights.numel() + l.bias.numel();
    return n;
  }
};

namespace detail {

inline QuantLayer make_layer(LayerKind kind, Shape weight_shape, std::size_t bias_len, std::size_t index,
                             std::size_t padding, bool pool_after, Rng& rng) {
  QuantLayer layer;
  layer.kind = kind;
  layer.bit_index = index;
  layer.padding = padding;
  layer.pool_after = pool_after;
  const std::size_t fan_in = kind == LayerKind::conv
                                 ? weight_shape[1] * weight_shape[2] * weight_shape[3]
                                 : weight_shape[0];
  const float limit = std::sqrt(3.0f / static_cast<float>(fan_in));
  std::uniform_real_distribution<float> uni(-limit, limit);
  std::vector<float> w(shape_numel(weight_shape));
  for (auto& v : w) v = uni(rng);
  layer.weights = Tensor::from_data(std::move(weight_shape), std::move(w), true);
  layer.bias = Tensor(Shape{bias_len}, 0.0f, true);
  layer.quantized_scale = kQuantizedGain / std::sqrt(static_cast<float>(fan_in));
  return layer;
}

}  // namespace detail

// Builds the five-layer network for `config`. Weights draw from the seed's
// init stream; the allocator (learned arm) from its noise stream.
inline Model build_mnist_model(const ExperimentConfig& config) {
  config.validate();
  Rng init(derive_seed(config.seed, 1));
  Model model;
  model.layers.push_back(detail::make_layer(LayerKind::conv, {16, 1, 5, 5}, 16, 0, 0, true, init));
  model.layers.push_back(detail::make_layer(LayerKind::conv, {32, 16, 5, 5}, 32, 1, 0, true, init));
  model.layers.push_back(detail::make_layer(LayerKind::conv, {32, 32, 3, 3}, 32, 2, 1, false, init));
  model.layers.push_back(detail::make_layer(LayerKind::conv, {64, 32, 3, 3}, 64, 3, 1, false, init));
  model.layers.push_back(detail::make_layer(LayerKind::dense, {64 * 4 * 4, 10}, 10, 4, 0, false, init));
  model.mode = config.arm;
  model.schedule = config.schedule();
  if (config.arm == AllocationArm::manual) {
    model.fixed_bits.assign(config.manual_bits.begin(), config.manual_bits.end());
  } else {
    model.allocator.emplace(model.layers.size(), config.budget, derive_seed(config.seed, 2),
                            model.schedule.initial);
  }
  return model;
}

// Logits [N x 10] for `batch` under per-layer widths `bits` (shape [L]).
// `bits` may be a graph node, in which case the loss gradient reaches it.
inline Tensor forward_quantized(const Model& model, const Tensor& batch, const Tensor& bits) {
  if (bits.numel() != model.layers.size()) {
    throw DimensionError("forward_quantized: " + std::to_string(bits.numel()) + " bit widths for " +
                         std::to_string(model.layers.size()) + " layers");
  }
  for (std::size_t i = 0; i < bits.numel(); ++i) {
    if (!(bits.data()[i] > 0.0f)) {
      throw ContractError("layer " + std::to_string(i) + " has non-positive bit width " +
                          std::to_string(bits.data()[i]));
    }
  }
  Tensor x = batch;
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    const QuantLayer& layer = model.layers[li];
    const bool full = bits.data()[layer.bit_index] >= kFullPrecisionBits;
    Tensor w = layer.weights;
    if (!full) {
      Tensor k = select(bits, layer.bit_index);
      if (layer.quantize_activations) x = quantize_activations(x, k);
      if (layer.quantize_weights) w = quantize_weights(w, k);
    }
    if (layer.kind == LayerKind::conv) {
      x = conv2d(x, w, 1, layer.padding);
    } else {
      x = reshape(x, {x.dim(0), x.numel() / x.dim(0)});
      x = matmul(x, w);
    }
    if (!full && layer.quantize_weights) x = scale(x, layer.quantized_scale);
    x = add_bias(x, layer.bias);
    if (li + 1 < model.layers.size()) {
      x = clip(x, 0.0f, 1.0f);
      if (layer.pool_after) x = maxpool2(x);
    }
  }
  return x;
}

inline Tensor forward_quantized(const Model& model, const Tensor& batch, const LayerPrecision& bits) {
  std::vector<float> b(bits.bits.begin(), bits.bits.end());
  const std::size_t n = b.size();
  return forward_quantized(model, batch, Tensor::from_data({n}, std::move(b)));
}

// Fraction of rows whose argmax differs from the label.
inline double top1_error(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("top1_error: logits " + shape_string(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = logits.data().data() + i * c;
    const auto best = static_cast<int>(std::max_element(row, row + c) - row);
    if (best != labels[i]) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(n);
}

struct Evaluation {
  double error = 0.0;
  double loss = 0.0;
};

// Runs `predict(images)` over the whole set in chunks and scores top-1 error
// and mean cross-entropy.
inline Evaluation evaluate_with(const std::function<Tensor(const Tensor&)>& predict, const MnistSet& data,
                                std::size_t chunk = 500) {
  if (data.size() == 0) throw ContractError("evaluate: empty dataset");
  NoGradGuard no_grad;
  std::size_t wrong = 0;
  double loss = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    const std::size_t end = std::min(data.size(), start + chunk);
    idx.resize(end - start);
    for (std::size_t i = start; i < end; ++i) idx[i - start] = i;
    auto [images, labels] = gather_batch(data, idx);
    const Tensor logits = predict(images);
    wrong += static_cast<std::size_t>(std::lround(top1_error(logits, labels) * static_cast<double>(labels.size())));
    loss += static_cast<double>(softmax_cross_entropy(logits, labels).item()) * static_cast<double>(labels.size());
  }
  return {static_cast<double>(wrong) / static_cast<double>(data.size()), loss / static_cast<double>(data.size())};
}

inline Evaluation evaluate(const Model& model, const MnistSet& data, const LayerPrecision& bits) {
  return evaluate_with([&](const Tensor& images) { return forward_quantized(model, images, bits); }, data);
}

}  // namespace bitbudget
