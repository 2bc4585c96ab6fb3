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

#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "bitbudget/errors.hpp"
#include "bitbudget/tensor.hpp"

namespace bitbudget {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias correction. Moment buffers live as long as the optimizer.
template <class T>
class Adam {
 public:
  explicit Adam(std::vector<BasicTensor<T>> params, AdamOptions options = {})
      : params_(std::move(params)), options_(options) {
    for (const auto& p : params_) {
      first_.emplace_back(p.numel(), 0.0);
      second_.emplace_back(p.numel(), 0.0);
    }
  }

  void step() {
    ++steps_;
    const double b1 = options_.beta1, b2 = options_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
    for (std::size_t t = 0; t < params_.size(); ++t) {
      auto& p = params_[t];
      if (!p.has_grad()) {
        throw ContractError("adam: parameter " + std::to_string(t) + " " +
                            shape_string(p.shape()) + " has no gradient buffer");
      }
      auto data = p.data();
      auto grad = p.grad();
      auto& m = first_[t];
      auto& v = second_[t];
      for (std::size_t i = 0; i < data.size(); ++i) {
        const double g = grad[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        data[i] -= static_cast<T>(options_.learning_rate * mhat / (std::sqrt(vhat) + options_.epsilon));
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  std::size_t steps() const { return steps_; }
  const std::vector<BasicTensor<T>>& params() const { return params_; }

 private:
  std::vector<BasicTensor<T>> params_;
  AdamOptions options_;
  std::vector<std::vector<double>> first_, second_;
  std::size_t steps_ = 0;
};

}  // namespace bitbudget
