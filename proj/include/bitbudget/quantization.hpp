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

// Fractional-bit uniform quantizer on [0, 1] and its straight-through
// gradients, plus the DoReFa-style weight and activation wrappers.
//
// With s = 2^k - 1, the forward map is q(r) = min(1, round(s * r) / s).
// For non-integer k the top code overshoots 1 and is clipped there; clipped
// outputs receive no gradient. The gradient with respect to the input is the
// identity (straight-through). The gradient with respect to k treats only the
// round() as identity, which gives
//
//   dq/dk = ln(2) * 2^k * (u - round(u)) / s^2,   u = s * r.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "bitbudget/errors.hpp"
#include "bitbudget/tensor.hpp"

namespace bitbudget {

// Positive, possibly fractional, number of bits.
class BitWidth {
 public:
  explicit BitWidth(double bits) : bits_(bits) {
    if (!(bits > 0.0) || !std::isfinite(bits)) {
      throw ContractError("bit width must be positive and finite, got " + std::to_string(bits));
    }
  }
  double bits() const { return bits_; }
  // 2^k - 1: the largest code, and the divisor that maps codes onto [0, 1].
  double max_code() const { return std::exp2(bits_) - 1.0; }

 private:
  double bits_;
};

namespace detail {
inline void require_unit_interval(double r) {
  if (!(r >= 0.0 && r <= 1.0)) {
    throw ContractError("quantize input must lie in [0, 1], got " + std::to_string(r));
  }
}
}  // namespace detail

// std::round rounds halves away from zero.
inline double quantize_forward(double r, BitWidth k) {
  detail::require_unit_interval(r);
  const double s = k.max_code();
  return std::min(1.0, std::round(s * r) / s);
}

// True when the rounded code lands above 1 and the output is clipped.
inline bool quantize_clipped(double r, BitWidth k) {
  const double s = k.max_code();
  return std::round(s * r) / s > 1.0;
}

inline double quantize_backward_input(double upstream, double r, BitWidth k) {
  return quantize_clipped(r, k) ? 0.0 : upstream;
}

inline double quantize_k_sensitivity(double r, BitWidth k) {
  if (quantize_clipped(r, k)) return 0.0;
  const double s = k.max_code();
  const double u = s * r;
  return std::numbers::ln2 * std::exp2(k.bits()) * (u - std::round(u)) / (s * s);
}

inline double quantize_backward_k(double upstream, double r, BitWidth k) {
  return upstream * quantize_k_sensitivity(r, k);
}

// Every value quantize_forward can emit for this k, ascending. The top code
// is round(s), so 1.0 appears only when round(s) >= s.
inline std::vector<double> levels(BitWidth k) {
  const double s = k.max_code();
  const auto top = static_cast<long>(std::round(s));
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(top) + 1);
  for (long i = 0; i <= top; ++i) out.push_back(std::min(1.0, static_cast<double>(i) / s));
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

namespace detail {

template <class T>
BitWidth bit_width_of(const BasicTensor<T>& k) {
  if (k.numel() != 1) {
    throw DimensionError("bit width tensor must be a scalar, got " + shape_string(k.shape()));
  }
  return BitWidth(static_cast<double>(k.item()));
}

}  // namespace detail

// quantize(clip(a, 0, 1), k). The input gradient is zero outside [0, 1] and
// where the quantizer clipped; `k` may carry gradient.
template <class T>
BasicTensor<T> quantize_activations(const BasicTensor<T>& a, const BasicTensor<T>& k) {
  const BitWidth bits = detail::bit_width_of(k);
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double c = std::clamp(static_cast<double>(a.data()[i]), 0.0, 1.0);
    out[i] = static_cast<T>(quantize_forward(c, bits));
  }
  auto ai = a.impl(), ki = k.impl();
  return detail::make_result<T>(
      a.shape(), std::move(out), {&a, &k}, "quantize_activations",
      [ai, ki, bits](const detail::TensorImpl<T>& o) {
        double dk = 0.0;
        if (ai->requires_grad) ai->ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
          const double x = static_cast<double>(ai->data[i]);
          const double c = std::clamp(x, 0.0, 1.0);
          const double g = static_cast<double>(o.grad[i]);
          if (ai->requires_grad && x >= 0.0 && x <= 1.0) {
            ai->grad[i] += static_cast<T>(quantize_backward_input(g, c, bits));
          }
          dk += quantize_backward_k(g, c, bits);
        }
        if (ki->requires_grad) {
          ki->ensure_grad();
          ki->grad[0] += static_cast<T>(dk);
        }
      });
}

template <class T>
BasicTensor<T> quantize_activations(const BasicTensor<T>& a, BitWidth k) {
  return quantize_activations(a, BasicTensor<T>::scalar(static_cast<T>(k.bits())));
}

// Below this, max|tanh(w)| is treated as zero and the output is all zeros.
inline constexpr double kWeightMaxGuard = 1e-12;

// DoReFa weight quantizer: x = tanh(w) / (2 max|tanh(w)|) + 1/2, output
// 2 * quantize(x, k) - 1 in [-1, 1]. The max runs over the whole tensor and
// is differentiated through its argmax.
template <class T>
BasicTensor<T> quantize_weights(const BasicTensor<T>& w, const BasicTensor<T>& k) {
  const BitWidth bits = detail::bit_width_of(k);
  const std::size_t n = w.numel();
  std::vector<double> t(n);
  double peak = 0.0;
  std::size_t argpeak = 0;
  for (std::size_t i = 0; i < n; ++i) {
    t[i] = std::tanh(static_cast<double>(w.data()[i]));
    if (std::abs(t[i]) > peak) {
      peak = std::abs(t[i]);
      argpeak = i;
    }
  }
  const bool degenerate = peak < kWeightMaxGuard;
  const double m = std::max(peak, kWeightMaxGuard);
  std::vector<double> x(n);
  std::vector<T> out(n, T{0});
  if (!degenerate) {
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = std::clamp(t[i] / (2.0 * m) + 0.5, 0.0, 1.0);
      out[i] = static_cast<T>(2.0 * quantize_forward(x[i], bits) - 1.0);
    }
  }
  auto wi = w.impl(), ki = k.impl();
  return detail::make_result<T>(
      w.shape(), std::move(out), {&w, &k}, "quantize_weights",
      [wi, ki, bits, degenerate, m, argpeak, t = std::move(t),
       x = std::move(x)](const detail::TensorImpl<T>& o) {
        const std::size_t n = t.size();
        if (degenerate) {
          if (wi->requires_grad) {
            wi->ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
              wi->grad[i] += static_cast<T>(static_cast<double>(o.grad[i]) * (1.0 - t[i] * t[i]));
          }
          return;
        }
        double dk = 0.0;
        std::vector<double> dt(n, 0.0);
        double dm = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double g = 2.0 * static_cast<double>(o.grad[i]);
          dk += quantize_backward_k(g, x[i], bits);
          const double gx = quantize_backward_input(g, x[i], bits);
          dt[i] = gx / (2.0 * m);
          dm -= gx * t[i] / (2.0 * m * m);
        }
        dt[argpeak] += dm * (t[argpeak] >= 0.0 ? 1.0 : -1.0);
        if (wi->requires_grad) {
          wi->ensure_grad();
          for (std::size_t i = 0; i < n; ++i)
            wi->grad[i] += static_cast<T>(dt[i] * (1.0 - t[i] * t[i]));
        }
        if (ki->requires_grad) {
          ki->ensure_grad();
          ki->grad[0] += static_cast<T>(dk);
        }
      });
}

template <class T>
BasicTensor<T> quantize_weights(const BasicTensor<T>& w, BitWidth k) {
  return quantize_weights(w, BasicTensor<T>::scalar(static_cast<T>(k.bits())));
}

}  // namespace bitbudget
