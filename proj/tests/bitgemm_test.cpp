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

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include "bitbudget/bitgemm.hpp"

namespace bitbudget {
namespace {

std::vector<int> random_codes(std::size_t n, int bits, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(0, (1 << bits) - 1);
  std::vector<int> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

// Plain 64-bit integer GEMM, B row-major [p x n].
std::vector<std::int64_t> int_gemm(const std::vector<int>& a, const std::vector<int>& b, std::size_t m,
                                   std::size_t p, std::size_t n) {
  std::vector<std::int64_t> c(m * n, 0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < p; ++k)
      for (std::size_t j = 0; j < n; ++j) c[i * n + j] += std::int64_t{a[i * p + k]} * b[k * n + j];
  return c;
}

TEST(Pack, ThreeInTwoPlanes) {
  const std::vector<int> v{3};
  const auto m = BitMatrix::pack(v, 1, 1, 2);
  EXPECT_EQ(m.row_plane(0, 0)[0], 1u);
  EXPECT_EQ(m.row_plane(1, 0)[0], 1u);
}

TEST(Pack, ZeroMatrixHasEmptyPlanes) {
  const std::vector<int> v(12, 0);
  const auto m = BitMatrix::pack(v, 3, 4, 1);
  for (std::size_t r = 0; r < 3; ++r)
    for (auto w : m.row_plane(0, r)) EXPECT_EQ(w, 0u);
}

TEST(Pack, RoundTripAndPaddingForManyShapes) {
  std::mt19937_64 rng(1);
  for (auto [rows, cols] : {std::pair<std::size_t, std::size_t>{7, 5}, {3, 64}, {2, 65}, {4, 130}, {1, 200}}) {
    for (int bits = 1; bits <= 8; ++bits) {
      const auto v = random_codes(rows * cols, bits, rng);
      const auto m = BitMatrix::pack(v, rows, cols, bits);
      EXPECT_EQ(m.unpack(), v);
      EXPECT_TRUE(m.padding_is_zero());
      EXPECT_EQ(m.words_per_row(), (cols + 63) / 64);
    }
  }
}

TEST(Pack, ColumnPackingStoresTheTranspose) {
  std::mt19937_64 rng(2);
  const auto v = random_codes(6 * 9, 3, rng);
  const auto t = BitMatrix::pack_columns(v, 6, 9, 3);
  ASSERT_EQ(t.rows(), 9u);
  ASSERT_EQ(t.cols(), 6u);
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 9; ++c) EXPECT_EQ(t.value(c, r), v[r * 9 + c]);
}

TEST(Pack, OutOfRangeEntryNamesItsIndex) {
  const std::vector<int> v{0, 1, 4, 2};
  try {
    BitMatrix::pack(v, 2, 2, 2);
    FAIL() << "expected RangeError";
  } catch (const RangeError& e) {
    EXPECT_NE(std::string(e.what()).find("(1, 0)"), std::string::npos) << e.what();
  }
  const std::vector<int> neg{-1};
  EXPECT_THROW(BitMatrix::pack(neg, 1, 1, 4), RangeError);
  EXPECT_THROW(BitMatrix::pack(v, 2, 2, 0), ContractError);
  EXPECT_THROW(BitMatrix::pack(v, 2, 2, 9), ContractError);
  EXPECT_THROW(BitMatrix::pack(v, 3, 2, 4), DimensionError);
}

TEST(BitDot, SmallExamples) {
  const std::vector<int> x{3}, y{2};
  EXPECT_EQ(bit_dot(BitMatrix::pack(x, 1, 1, 2), 0, BitMatrix::pack(y, 1, 1, 2), 0), 6);
  const std::vector<int> a{1, 2, 3}, b{3, 2, 1}, z{0, 0, 0};
  const auto pa = BitMatrix::pack(a, 1, 3, 2);
  EXPECT_EQ(bit_dot(pa, 0, BitMatrix::pack(b, 1, 3, 2), 0), 10);
  EXPECT_EQ(bit_dot(pa, 0, BitMatrix::pack(z, 1, 3, 2), 0), 0);
}

TEST(BitDot, LengthMismatchIsDimensionError) {
  const std::vector<int> a{1, 2, 3}, b{1, 2};
  EXPECT_THROW(bit_dot(BitMatrix::pack(a, 1, 3, 2), 0, BitMatrix::pack(b, 1, 2, 2), 0), DimensionError);
}

TEST(BitGemm, IdentityReproducesOperand) {
  std::mt19937_64 rng(3);
  const std::size_t n = 6;
  std::vector<int> eye(n * n, 0);
  for (std::size_t i = 0; i < n; ++i) eye[i * n + i] = 1;
  const auto b = random_codes(n * 4, 5, rng);
  const auto c = bit_gemm(BitMatrix::pack(eye, n, n, 1), BitMatrix::pack_columns(b, n, 4, 5));
  for (std::size_t i = 0; i < b.size(); ++i) EXPECT_EQ(c.values[i], b[i]);
}

TEST(BitGemm, HandComputedProduct) {
  const std::vector<int> a{1, 2, 3, 0, 1, 1}, b{1, 1, 2, 0};
  const auto c = bit_gemm(BitMatrix::pack(a, 3, 2, 2), BitMatrix::pack_columns(b, 2, 2, 2));
  EXPECT_EQ(c.values, (std::vector<std::int64_t>{5, 1, 3, 3, 3, 1}));
}

TEST(BitGemm, ExhaustiveSmallWidthsMatchIntegerGemm) {
  std::mt19937_64 rng(4);
  for (int m = 1; m <= 4; ++m)
    for (int k = 1; k <= 4; ++k) {
      const auto a = random_codes(64, m, rng), b = random_codes(64, k, rng);
      const auto c = bit_gemm(BitMatrix::pack(a, 8, 8, m), BitMatrix::pack_columns(b, 8, 8, k));
      EXPECT_EQ(c.values, int_gemm(a, b, 8, 8, 8)) << "M=" << m << " K=" << k;
    }
}

TEST(BitGemm, RandomShapesAndAllWidthsMatchIntegerGemm) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::size_t> dim(1, 64);
  for (int t = 0; t < 200; ++t) {
    const int m = 1 + t % 8, k = 1 + (t / 8) % 8;
    const std::size_t rows = dim(rng), inner = dim(rng), cols = dim(rng);
    const auto a = random_codes(rows * inner, m, rng), b = random_codes(inner * cols, k, rng);
    const auto c = bit_gemm(BitMatrix::pack(a, rows, inner, m), BitMatrix::pack_columns(b, inner, cols, k));
    ASSERT_EQ(c.values, int_gemm(a, b, rows, inner, cols));
  }
}

TEST(BitGemm, PaddingDoesNotChangeResults) {
  // Same data once with 64 columns and once zero-extended to 100.
  std::mt19937_64 rng(6);
  const auto a = random_codes(3 * 64, 3, rng), b = random_codes(64 * 2, 2, rng);
  std::vector<int> a_wide(3 * 100, 0), b_wide(100 * 2, 0);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 64; ++c) a_wide[r * 100 + c] = a[r * 64 + c];
  for (std::size_t r = 0; r < 64; ++r)
    for (std::size_t c = 0; c < 2; ++c) b_wide[r * 2 + c] = b[r * 2 + c];
  const auto narrow = bit_gemm(BitMatrix::pack(a, 3, 64, 3), BitMatrix::pack_columns(b, 64, 2, 2));
  const auto wide = bit_gemm(BitMatrix::pack(a_wide, 3, 100, 3), BitMatrix::pack_columns(b_wide, 100, 2, 2));
  EXPECT_EQ(narrow.values, wide.values);
}

TEST(BitGemm, InnerDimensionMismatch) {
  const std::vector<int> a(6, 1), b(8, 1);
  EXPECT_THROW(bit_gemm(BitMatrix::pack(a, 2, 3, 1), BitMatrix::pack_columns(b, 4, 2, 1)), DimensionError);
}

TEST(Dequantize, Examples) {
  IntMatrix ones{1, 1, {5}};
  EXPECT_EQ(dequantize_product(ones, 1, 1)[0], 5.0);
  IntMatrix six{1, 1, {6}};
  EXPECT_NEAR(dequantize_product(six, 2, 2)[0], 1.0 * (2.0 / 3.0), 1e-15);
  IntMatrix twelve{1, 1, {12}};
  EXPECT_EQ(dequantize_product(twelve, 3, 2)[0], 2.0 * dequantize_product(six, 3, 2)[0]);
}

TEST(Dequantize, EqualsRealProductOfLevels) {
  std::mt19937_64 rng(7);
  for (int m = 1; m <= 8; ++m) {
    const int k = 9 - m;
    const auto a = random_codes(4 * 10, m, rng), b = random_codes(10 * 3, k, rng);
    const auto got = dequantize_product(
        bit_gemm(BitMatrix::pack(a, 4, 10, m), BitMatrix::pack_columns(b, 10, 3, k)), m, k);
    const double sa = (1 << m) - 1, sb = (1 << k) - 1;
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        double want = 0.0;
        for (std::size_t p = 0; p < 10; ++p) want += (a[i * 10 + p] / sa) * (b[p * 3 + j] / sb);
        EXPECT_NEAR(got[i * 3 + j], want, 1e-12);
      }
  }
}

TEST(SignedWeightGemm, MatchesRealGemmOfSignedWeights) {
  std::mt19937_64 rng(8);
  for (auto [m, k] : {std::pair{1, 1}, {2, 3}, {4, 4}, {8, 1}}) {
    const std::size_t rows = 5, inner = 70, cols = 4;
    const auto q = random_codes(rows * inner, m, rng), a = random_codes(inner * cols, k, rng);
    const auto got = signed_weight_gemm(BitMatrix::pack(q, rows, inner, m), BitMatrix::pack_columns(a, inner, cols, k));
    const double sq = (1 << m) - 1, sa = (1 << k) - 1;
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) {
        double want = 0.0;
        for (std::size_t p = 0; p < inner; ++p) want += (2.0 * q[i * inner + p] / sq - 1.0) * (a[p * cols + j] / sa);
        EXPECT_NEAR(got[i * cols + j], want, 1e-9);
      }
  }
}

TEST(SignedWeightGemm, SingleElementAndBinaryCase) {
  const std::vector<int> one{1};
  EXPECT_EQ(signed_weight_gemm(BitMatrix::pack(one, 1, 1, 1), BitMatrix::pack_columns(one, 1, 1, 1))[0], 1.0);
  std::mt19937_64 rng(9);
  const auto q = random_codes(3 * 40, 1, rng), a = random_codes(40 * 2, 1, rng);
  const auto got = signed_weight_gemm(BitMatrix::pack(q, 3, 40, 1), BitMatrix::pack_columns(a, 40, 2, 1));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      int want = 0;
      for (std::size_t p = 0; p < 40; ++p) want += (2 * q[i * 40 + p] - 1) * a[p * 2 + j];
      EXPECT_EQ(got[i * 2 + j], want);
    }
}

TEST(BlockedFp32Gemm, MatchesNaiveProduct) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<float> u(-1, 1);
  const std::size_t m = 37, p = 70, n = 65;
  std::vector<float> a(m * p), bt(n * p);
  for (auto& x : a) x = u(rng);
  for (auto& x : bt) x = u(rng);
  const auto c = blocked_fp32_gemm(a, bt, m, p, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double want = 0.0;
      for (std::size_t k = 0; k < p; ++k) want += double{a[i * p + k]} * bt[j * p + k];
      EXPECT_NEAR(c[i * n + j], want, 1e-4);
    }
}

TEST(Bench, RowCountAndCsvLayout) {
  const std::vector<std::size_t> sizes{64, 128};
  const std::vector<std::pair<int, int>> pairs{{1, 1}, {2, 2}, {8, 8}};
  const auto rows = bench_gemm(sizes, pairs, 3);
  ASSERT_EQ(rows.size(), sizes.size() * pairs.size());
  for (const auto& r : rows) {
    EXPECT_EQ(r.total_bits, r.m_bits * r.k_bits);
    EXPECT_GT(r.median_ns, 0.0);
    EXPECT_NEAR(r.speedup, r.fp32_ns / r.median_ns, 1e-12);
  }
  std::ostringstream os;
  write_bench_csv(os, rows);
  std::istringstream is(os.str());
  std::string header;
  std::getline(is, header);
  EXPECT_EQ(header, "size,m_bits,k_bits,total_bits,median_ns,fp32_ns,speedup");
  int lines = 0;
  for (std::string line; std::getline(is, line);) ++lines;
  EXPECT_EQ(lines, 6);
}

TEST(Bench, ArgumentContracts) {
  const std::vector<std::size_t> small{32}, ok{64};
  const std::vector<std::pair<int, int>> pairs{{1, 1}};
  EXPECT_THROW(bench_gemm(ok, pairs, 2), ContractError);
  EXPECT_THROW(bench_gemm(small, pairs, 3), ContractError);
}

TEST(Spearman, KnownValues) {
  const std::vector<double> x{1, 2, 3, 4, 5};
  const std::vector<double> up{2, 4, 6, 8, 10}, down{5, 4, 3, 2, 1};
  EXPECT_NEAR(spearman(x, up), 1.0, 1e-15);
  EXPECT_NEAR(spearman(x, down), -1.0, 1e-15);
  // Ties get average ranks: y ranks (1.5, 1.5, 3, 4, 5).
  const std::vector<double> tied{1, 1, 2, 3, 4};
  EXPECT_NEAR(spearman(x, tied), 0.9746794344808963, 1e-12);
}

}  // namespace
}  // namespace bitbudget
