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

// MNIST ingestion from IDX files (big-endian headers, raw unsigned bytes).

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <span>
#include <utility>
#include <vector>

#include "bitbudget/errors.hpp"
#include "bitbudget/tensor.hpp"

namespace bitbudget {

inline constexpr std::uint32_t kIdxImageMagic = 2051;
inline constexpr std::uint32_t kIdxLabelMagic = 2049;
inline constexpr std::size_t kMnistSide = 28;

class TruncatedFileError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ConsistencyError : public FormatError {
 public:
  using FormatError::FormatError;
};

struct MnistSet {
  Tensor images;            // n x 1 x 28 x 28, byte / 255
  std::vector<int> labels;  // n values in [0, 10)
  std::size_t size() const { return labels.size(); }
};

namespace detail {

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset,
                               const std::string& path) {
  if (bytes.size() < offset + 4) {
    throw TruncatedFileError("'" + path + "' ends inside its IDX header (" +
                             std::to_string(bytes.size()) + " bytes)");
  }
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

inline void write_be32(std::ofstream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                     static_cast<char>(v)};
  out.write(b, 4);
}

inline void expect_magic(std::uint32_t found, std::uint32_t expected, const std::string& path) {
  if (found != expected) {
    char hex[16];
    std::snprintf(hex, sizeof hex, "0x%08X", found);
    throw FormatError("'" + path + "': bad IDX magic " + hex + " (" + std::to_string(found) +
                      "), expected " + std::to_string(expected));
  }
}

}  // namespace detail

inline MnistSet load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto img = detail::read_file(images_path);
  const auto lab = detail::read_file(labels_path);
  detail::expect_magic(detail::read_be32(img, 0, images_path), kIdxImageMagic, images_path);
  detail::expect_magic(detail::read_be32(lab, 0, labels_path), kIdxLabelMagic, labels_path);
  const std::size_t n = detail::read_be32(img, 4, images_path);
  const std::size_t rows = detail::read_be32(img, 8, images_path);
  const std::size_t cols = detail::read_be32(img, 12, images_path);
  const std::size_t nl = detail::read_be32(lab, 4, labels_path);
  if (rows != kMnistSide || cols != kMnistSide) {
    throw FormatError("'" + images_path + "': images are " + std::to_string(rows) + "x" +
                      std::to_string(cols) + ", expected 28x28");
  }
  if (n != nl) {
    throw ConsistencyError("image count " + std::to_string(n) + " in '" + images_path +
                           "' differs from label count " + std::to_string(nl) + " in '" + labels_path + "'");
  }
  const std::size_t pixels = n * rows * cols;
  if (img.size() < 16 + pixels) {
    throw TruncatedFileError("'" + images_path + "' holds " + std::to_string(img.size() - 16) +
                             " pixel bytes, header promises " + std::to_string(pixels));
  }
  if (lab.size() < 8 + n) {
    throw TruncatedFileError("'" + labels_path + "' holds " + std::to_string(lab.size() - 8) +
                             " labels, header promises " + std::to_string(n));
  }
  if (n == 0) throw FormatError("'" + images_path + "' contains no images");
  MnistSet set;
  std::vector<float> data(pixels);
  for (std::size_t i = 0; i < pixels; ++i) data[i] = static_cast<float>(img[16 + i]) / 255.0f;
  set.images = Tensor::from_data({n, 1, rows, cols}, std::move(data));
  set.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    set.labels[i] = lab[8 + i];
    if (set.labels[i] > 9) {
      throw FormatError("'" + labels_path + "': label " + std::to_string(set.labels[i]) + " at index " +
                        std::to_string(i) + " is not a digit");
    }
  }
  return set;
}

inline void write_idx(const MnistSet& set, const std::string& images_path, const std::string& labels_path) {
  std::ofstream img(images_path, std::ios::binary), lab(labels_path, std::ios::binary);
  if (!img || !lab) throw std::runtime_error("cannot write IDX files");
  detail::write_be32(img, kIdxImageMagic);
  detail::write_be32(img, static_cast<std::uint32_t>(set.size()));
  detail::write_be32(img, kMnistSide);
  detail::write_be32(img, kMnistSide);
  for (float v : set.images.data()) {
    const long b = std::lround(static_cast<double>(v) * 255.0);
    img.put(static_cast<char>(std::clamp(b, 0L, 255L)));
  }
  detail::write_be32(lab, kIdxLabelMagic);
  detail::write_be32(lab, static_cast<std::uint32_t>(set.size()));
  for (int l : set.labels) lab.put(static_cast<char>(l));
}

// Loads `<dir>/<split>-images-idx3-ubyte` and `<dir>/<split>-labels-idx1-ubyte`.
inline MnistSet load_mnist_split(const std::filesystem::path& dir, const std::string& split) {
  return load_idx((dir / (split + "-images-idx3-ubyte")).string(),
                  (dir / (split + "-labels-idx1-ubyte")).string());
}

// First `limit` examples (all when limit is 0 or too large).
inline MnistSet take_first(const MnistSet& set, std::size_t limit) {
  if (limit == 0 || limit >= set.size()) return set;
  const std::size_t stride = set.images.numel() / set.size();
  MnistSet out;
  out.images = Tensor::from_data({limit, 1, kMnistSide, kMnistSide},
                                 std::vector<float>(set.images.data().begin(),
                                                    set.images.data().begin() + static_cast<std::ptrdiff_t>(limit * stride)));
  out.labels.assign(set.labels.begin(), set.labels.begin() + static_cast<std::ptrdiff_t>(limit));
  return out;
}

// Gathers the examples at `indices` into a batch tensor + label vector.
inline std::pair<Tensor, std::vector<int>> gather_batch(const MnistSet& set, std::span<const std::size_t> indices) {
  const std::size_t stride = set.images.numel() / set.size();
  std::vector<float> data(indices.size() * stride);
  std::vector<int> labels(indices.size());
  for (std::size_t b = 0; b < indices.size(); ++b) {
    std::copy_n(set.images.data().begin() + static_cast<std::ptrdiff_t>(indices[b] * stride), stride,
                data.begin() + static_cast<std::ptrdiff_t>(b * stride));
    labels[b] = set.labels[indices[b]];
  }
  Shape shape = set.images.shape();
  shape[0] = indices.size();
  return {Tensor::from_data(std::move(shape), std::move(data)), std::move(labels)};
}

}  // namespace bitbudget
