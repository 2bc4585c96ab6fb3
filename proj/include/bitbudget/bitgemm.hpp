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

// Bit-plane matrices and the AND + popcount GEMM.
//
// An M-bit unsigned fixed-point matrix is stored as M binary planes; plane m
// holds bit m of every element, each row padded to whole 64-bit words. The
// dot product of an M-bit row with a K-bit row is
//
//   x . y = sum_{m<M} sum_{k<K} 2^(m+k) popcount(plane_m(x) & plane_k(y)),
//
// so the cost grows with M * K word operations per output.

#pragma once

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bitbudget/errors.hpp"

namespace bitbudget {

inline constexpr std::size_t kWordBits = 64;
inline constexpr int kMaxOperandBits = 8;

struct IntMatrix {
  std::size_t rows = 0, cols = 0;
  std::vector<std::int64_t> values;  // row-major
  std::int64_t at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

class BitMatrix {
 public:
  // Row-major `values[rows x cols]`, every entry in [0, 2^bits).
  static BitMatrix pack(std::span<const int> values, std::size_t rows, std::size_t cols, int bits) {
    check_shape(values.size(), rows, cols, bits);
    BitMatrix out(rows, cols, bits);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) out.set(r, c, checked(values[r * cols + c], bits, r, c));
    return out;
  }

  // Packs the transpose of row-major `values[rows x cols]`: row j of the
  // result is column j of the input. Right-hand GEMM operands use this form.
  static BitMatrix pack_columns(std::span<const int> values, std::size_t rows, std::size_t cols,
                                int bits) {
    check_shape(values.size(), rows, cols, bits);
    BitMatrix out(cols, rows, bits);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) out.set(c, r, checked(values[r * cols + c], bits, r, c));
    return out;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  int bits() const { return bits_; }
  std::size_t words_per_row() const { return words_; }

  std::span<const std::uint64_t> row_plane(int plane, std::size_t row) const {
    return {planes_.data() + offset(plane, row), words_};
  }

  int value(std::size_t r, std::size_t c) const {
    int v = 0;
    for (int m = 0; m < bits_; ++m) {
      const std::uint64_t word = planes_[offset(m, r) + c / kWordBits];
      v |= static_cast<int>((word >> (c % kWordBits)) & 1u) << m;
    }
    return v;
  }

  std::vector<int> unpack() const {
    std::vector<int> out(rows_ * cols_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c) out[r * cols_ + c] = value(r, c);
    return out;
  }

  // True when every bit beyond `cols` in each padded row is zero.
  bool padding_is_zero() const {
    const std::size_t tail = cols_ % kWordBits;
    if (tail == 0) return true;
    const std::uint64_t mask = ~((std::uint64_t{1} << tail) - 1);
    for (int m = 0; m < bits_; ++m)
      for (std::size_t r = 0; r < rows_; ++r)
        if (planes_[offset(m, r) + words_ - 1] & mask) return false;
    return true;
  }

 private:
  BitMatrix(std::size_t rows, std::size_t cols, int bits)
      : rows_(rows), cols_(cols), bits_(bits), words_((cols + kWordBits - 1) / kWordBits),
        planes_(static_cast<std::size_t>(bits) * rows * words_, 0) {}

  static void check_shape(std::size_t n, std::size_t rows, std::size_t cols, int bits) {
    if (bits < 1 || bits > kMaxOperandBits) {
      throw ContractError("bit planes must number 1.." + std::to_string(kMaxOperandBits) +
                          ", got " + std::to_string(bits));
    }
    if (rows == 0 || cols == 0 || n != rows * cols) {
      throw DimensionError("pack: " + std::to_string(n) + " values for a " +
                           std::to_string(rows) + "x" + std::to_string(cols) + " matrix");
    }
  }

  static int checked(int v, int bits, std::size_t r, std::size_t c) {
    if (v < 0 || v >= (1 << bits)) {
      throw RangeError("value " + std::to_string(v) + " at (" + std::to_string(r) + ", " +
                       std::to_string(c) + ") does not fit in " + std::to_string(bits) + " bits");
    }
    return v;
  }

  std::size_t offset(int plane, std::size_t row) const {
    return (static_cast<std::size_t>(plane) * rows_ + row) * words_;
  }

  void set(std::size_t r, std::size_t c, int v) {
    for (int m = 0; m < bits_; ++m)
      if ((v >> m) & 1) planes_[offset(m, r) + c / kWordBits] |= std::uint64_t{1} << (c % kWordBits);
  }

  std::size_t rows_, cols_;
  int bits_;
  std::size_t words_;
  std::vector<std::uint64_t> planes_;
};

namespace detail {

inline std::int64_t plane_dot(const BitMatrix& x, std::size_t xr, const BitMatrix& y,
                              std::size_t yr) {
  const std::size_t words = x.words_per_row();
  std::int64_t acc = 0;
  for (int m = 0; m < x.bits(); ++m) {
    const std::uint64_t* a = x.row_plane(m, xr).data();
    for (int k = 0; k < y.bits(); ++k) {
      const std::uint64_t* b = y.row_plane(k, yr).data();
      std::int64_t count = 0;
      for (std::size_t w = 0; w < words; ++w) count += std::popcount(a[w] & b[w]);
      acc += count << (m + k);
    }
  }
  return acc;
}

inline constexpr std::size_t kRowBlock = 32;
inline constexpr std::size_t kColBlock = 64;

}  // namespace detail

// Integer dot product of row `xr` of x with row `yr` of y.
inline std::int64_t bit_dot(const BitMatrix& x, std::size_t xr, const BitMatrix& y, std::size_t yr) {
  if (x.cols() != y.cols()) {
    throw DimensionError("bit_dot: lengths " + std::to_string(x.cols()) + " and " +
                         std::to_string(y.cols()) + " differ");
  }
  if (xr >= x.rows() || yr >= y.rows()) throw DimensionError("bit_dot: row index out of range");
  return detail::plane_dot(x, xr, y, yr);
}

// C = A * B where `b_columns` holds B column-wise (see BitMatrix::pack_columns).
inline IntMatrix bit_gemm(const BitMatrix& a, const BitMatrix& b_columns) {
  if (a.cols() != b_columns.cols()) {
    throw DimensionError("bit_gemm: inner dimensions " + std::to_string(a.cols()) + " and " +
                         std::to_string(b_columns.cols()) + " differ");
  }
  IntMatrix c{a.rows(), b_columns.rows(), std::vector<std::int64_t>(a.rows() * b_columns.rows())};
  for (std::size_t i0 = 0; i0 < c.rows; i0 += detail::kRowBlock)
    for (std::size_t j0 = 0; j0 < c.cols; j0 += detail::kColBlock) {
      const std::size_t i1 = std::min(c.rows, i0 + detail::kRowBlock);
      const std::size_t j1 = std::min(c.cols, j0 + detail::kColBlock);
      for (std::size_t i = i0; i < i1; ++i)
        for (std::size_t j = j0; j < j1; ++j) c.values[i * c.cols + j] = detail::plane_dot(a, i, b_columns, j);
    }
  return c;
}

// Maps integer products of codes back to products of levels i/(2^M-1) * j/(2^K-1).
inline std::vector<double> dequantize_product(const IntMatrix& c, int m_bits, int k_bits) {
  const double denom = static_cast<double>((1 << m_bits) - 1) * static_cast<double>((1 << k_bits) - 1);
  std::vector<double> out(c.values.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(c.values[i]) / denom;
  return out;
}

// Real GEMM of signed weights w = 2q - 1 (q = code / (2^M-1)) against
// activations a = code / (2^K-1), both from bit planes. Returns rows x cols
// of (weights.rows() x activation_columns.rows()).
inline std::vector<double> signed_weight_gemm(const BitMatrix& weights,
                                              const BitMatrix& activation_columns) {
  const IntMatrix c = bit_gemm(weights, activation_columns);
  std::vector<double> out = dequantize_product(c, weights.bits(), activation_columns.bits());
  const double a_scale = static_cast<double>((1 << activation_columns.bits()) - 1);
  std::vector<double> column_sum(c.cols, 0.0);
  for (std::size_t j = 0; j < c.cols; ++j) {
    std::int64_t s = 0;
    for (std::size_t p = 0; p < activation_columns.cols(); ++p) s += activation_columns.value(j, p);
    column_sum[j] = static_cast<double>(s) / a_scale;
  }
  for (std::size_t i = 0; i < c.rows; ++i)
    for (std::size_t j = 0; j < c.cols; ++j) out[i * c.cols + j] = 2.0 * out[i * c.cols + j] - column_sum[j];
  return out;
}

// Float GEMM with the same blocking and operand layout as bit_gemm:
// C[m x n] = A[m x p] * B where `b_columns` is B^T stored row-major [n x p].
inline std::vector<float> blocked_fp32_gemm(std::span<const float> a, std::span<const float> b_columns,
                                            std::size_t m, std::size_t p, std::size_t n) {
  if (a.size() != m * p || b_columns.size() != n * p) throw DimensionError("blocked_fp32_gemm: operand sizes");
  std::vector<float> c(m * n);
  for (std::size_t i0 = 0; i0 < m; i0 += detail::kRowBlock)
    for (std::size_t j0 = 0; j0 < n; j0 += detail::kColBlock) {
      const std::size_t i1 = std::min(m, i0 + detail::kRowBlock);
      const std::size_t j1 = std::min(n, j0 + detail::kColBlock);
      for (std::size_t i = i0; i < i1; ++i)
        for (std::size_t j = j0; j < j1; ++j) {
          const float* x = a.data() + i * p;
          const float* y = b_columns.data() + j * p;
          float s0 = 0, s1 = 0, s2 = 0, s3 = 0;
          std::size_t k = 0;
          for (; k + 4 <= p; k += 4) {
            s0 += x[k] * y[k];
            s1 += x[k + 1] * y[k + 1];
            s2 += x[k + 2] * y[k + 2];
            s3 += x[k + 3] * y[k + 3];
          }
          for (; k < p; ++k) s0 += x[k] * y[k];
          c[i * n + j] = (s0 + s1) + (s2 + s3);
        }
    }
  return c;
}

struct BenchRow {
  std::size_t size = 0;
  int m_bits = 0, k_bits = 0;
  int total_bits = 0;  // m_bits * k_bits
  double median_ns = 0.0, fp32_ns = 0.0, speedup = 0.0;
};

namespace detail {

template <class F>
double median_ns(int repeats, F&& run) {
  std::vector<double> times;
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    run();
    const auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double, std::nano>(t1 - t0).count());
  }
  std::sort(times.begin(), times.end());
  return times[times.size() / 2];
}

inline std::vector<int> random_codes(std::size_t n, int bits, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> dist(0, (1 << bits) - 1);
  std::vector<int> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

}  // namespace detail

// Times square size x size x size products for every (size, M, K): bit_gemm
// against blocked_fp32_gemm, median over `repeats`. Kernels run on the
// calling thread only.
inline std::vector<BenchRow> bench_gemm(std::span<const std::size_t> sizes,
                                        std::span<const std::pair<int, int>> bit_pairs,
                                        int repeats, std::uint64_t seed = 7) {
  if (repeats < 3) throw ContractError("bench_gemm: repeats must be at least 3");
  for (std::size_t s : sizes)
    if (s < 64) throw ContractError("bench_gemm: sizes must be at least 64");
  std::mt19937_64 rng(seed);
  std::vector<BenchRow> rows;
  volatile std::int64_t sink = 0;
  for (std::size_t size : sizes) {
    std::uniform_real_distribution<float> uni(-1.0f, 1.0f);
    std::vector<float> fa(size * size), fb(size * size);
    for (auto& x : fa) x = uni(rng);
    for (auto& x : fb) x = uni(rng);
    const double fp32 = detail::median_ns(repeats, [&] {
      auto c = blocked_fp32_gemm(fa, fb, size, size, size);
      sink = sink + static_cast<std::int64_t>(c[0]);
    });
    for (const auto& [m_bits, k_bits] : bit_pairs) {
      const auto a = BitMatrix::pack(detail::random_codes(size * size, m_bits, rng), size, size, m_bits);
      const auto b = BitMatrix::pack_columns(detail::random_codes(size * size, k_bits, rng), size, size, k_bits);
      const double t = detail::median_ns(repeats, [&] {
        auto c = bit_gemm(a, b);
        sink = sink + c.values[0];
      });
      rows.push_back({size, m_bits, k_bits, m_bits * k_bits, t, fp32, fp32 / t});
    }
  }
  return rows;
}

inline void write_bench_csv(std::ostream& os, std::span<const BenchRow> rows) {
  os << "size,m_bits,k_bits,total_bits,median_ns,fp32_ns,speedup\n";
  for (const auto& r : rows) {
    os << r.size << ',' << r.m_bits << ',' << r.k_bits << ',' << r.total_bits << ','
       << static_cast<std::int64_t>(r.median_ns) << ',' << static_cast<std::int64_t>(r.fp32_ns) << ','
       << r.speedup << '\n';
  }
}

// Spearman rank correlation with average ranks for ties.
inline double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw DimensionError("spearman: need two equal-length samples");
  auto ranks = [](std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace bitbudget
