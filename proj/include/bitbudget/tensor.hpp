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

// Dense tensors with tape-ordered reverse-mode autodiff.
//
// Every op that touches a tensor requiring gradients records a Node stamped
// with a monotonically increasing sequence number. backward() collects the
// nodes reachable from the loss and replays them in descending sequence
// order, i.e. the exact reverse of forward execution.

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "bitbudget/errors.hpp"

namespace bitbudget {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <class T>
class BasicTensor;

namespace detail {

template <class T>
struct TensorImpl;

template <class T>
struct Node {
  std::uint64_t seq = 0;
  const char* name = "";
  std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
  std::function<void(const TensorImpl<T>& out)> backward;
};

template <class T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  std::shared_ptr<Node<T>> node;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T{0});
  }
};

inline std::uint64_t next_sequence() {
  static std::atomic<std::uint64_t> counter{0};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

inline bool& grad_mode_disabled() {
  thread_local bool disabled = false;
  return disabled;
}

}  // namespace detail

// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_disabled()) {
    detail::grad_mode_disabled() = true;
  }
  ~NoGradGuard() { detail::grad_mode_disabled() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <class T>
class BasicTensor {
 public:
  using value_type = T;
  using Impl = detail::TensorImpl<T>;

  BasicTensor() : impl_(std::make_shared<Impl>()) {}

  explicit BasicTensor(Shape shape, T fill = T{0}, bool requires_grad = false)
      : impl_(std::make_shared<Impl>()) {
    for (std::size_t d : shape) {
      if (d == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
    }
    impl_->data.assign(shape_numel(shape), fill);
    impl_->shape = std::move(shape);
    set_requires_grad(requires_grad);
  }

  static BasicTensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
    if (shape_numel(shape) != data.size()) {
      throw DimensionError("shape " + shape_string(shape) + " needs " +
                           std::to_string(shape_numel(shape)) + " values, got " +
                           std::to_string(data.size()));
    }
    BasicTensor t(std::move(shape));
    t.impl_->data = std::move(data);
    t.set_requires_grad(requires_grad);
    return t;
  }

  static BasicTensor scalar(T value, bool requires_grad = false) {
    return from_data({1}, {value}, requires_grad);
  }

  const Shape& shape() const { return impl_->shape; }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  std::span<T> grad() { return impl_->grad; }
  std::span<const T> grad() const { return impl_->grad; }
  bool has_grad() const { return !impl_->grad.empty(); }

  T item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  bool is_leaf() const { return impl_->node == nullptr; }

  void set_requires_grad(bool on) {
    impl_->requires_grad = on;
    if (on) impl_->ensure_grad();
  }

  void zero_grad() { std::fill(impl_->grad.begin(), impl_->grad.end(), T{0}); }

  // Same values, no history, no gradient.
  BasicTensor detach() const { return from_data(shape(), impl_->data); }

  const std::shared_ptr<Impl>& impl() const { return impl_; }

 private:
  std::shared_ptr<Impl> impl_;
};

using Tensor = BasicTensor<float>;

namespace detail {

// Wraps freshly computed output values in a tensor and, when any input needs
// gradients, attaches a node whose closure scatters the output gradient back.
template <class T, class Backward>
BasicTensor<T> make_result(Shape shape, std::vector<T> data,
                           std::initializer_list<const BasicTensor<T>*> inputs,
                           const char* name, Backward&& backward) {
  BasicTensor<T> out = BasicTensor<T>::from_data(std::move(shape), std::move(data));
  if (grad_mode_disabled()) return out;
  bool any = false;
  for (const auto* in : inputs) any = any || in->requires_grad();
  if (!any) return out;
  auto node = std::make_shared<Node<T>>();
  node->seq = next_sequence();
  node->name = name;
  for (const auto* in : inputs) node->inputs.push_back(in->impl());
  node->backward = std::forward<Backward>(backward);
  out.impl()->requires_grad = true;
  out.impl()->node = std::move(node);
  return out;
}

// C[m x n] (+)= A[m x k] * B[k x n]
template <class T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    if (!accumulate) std::fill(crow, crow + n, T{0});
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T{0}) continue;
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x n] (+)= A[k x m]^T * B[k x n]
template <class T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T{0});
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = a + p * m;
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = arow[i];
      if (av == T{0}) continue;
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x n] (+)= A[m x k] * B[n x k]^T, as row-by-row dot products.
template <class T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc{0};
#pragma omp simd reduction(+ : acc)
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] = accumulate ? c[i * n + j] + acc : acc;
    }
  }
}

template <class T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

}  // namespace detail

// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate across
// calls; intermediate gradients are reset at the start of every sweep.
template <class T>
void backward(const BasicTensor<T>& loss) {
  using Impl = detail::TensorImpl<T>;
  if (loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward() on a loss with no recorded graph");
  }

  std::vector<Impl*> order;
  std::unordered_set<const Impl*> seen;
  std::vector<Impl*> stack{loss.impl().get()};
  seen.insert(stack.back());
  while (!stack.empty()) {
    Impl* cur = stack.back();
    stack.pop_back();
    if (!cur->node) continue;
    order.push_back(cur);
    for (const auto& in : cur->node->inputs) {
      if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in.get());
    }
  }
  std::sort(order.begin(), order.end(),
            [](const Impl* a, const Impl* b) { return a->node->seq > b->node->seq; });

  for (Impl* impl : order) impl->grad.assign(impl->data.size(), T{0});
  Impl* root = loss.impl().get();
  root->ensure_grad();
  root->grad[0] += T{1};

  for (Impl* impl : order) impl->node->backward(*impl);
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  auto ai = a.impl(), bi = b.impl();
  return detail::make_result<T>(a.shape(), std::move(out), {&a, &b}, "add",
                                [ai, bi](const detail::TensorImpl<T>& o) {
                                  for (auto* in : {ai.get(), bi.get()}) {
                                    if (!in->requires_grad) continue;
                                    in->ensure_grad();
                                    for (std::size_t i = 0; i < o.grad.size(); ++i)
                                      in->grad[i] += o.grad[i];
                                  }
                                });
}

template <class T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  auto ai = a.impl(), bi = b.impl();
  return detail::make_result<T>(a.shape(), std::move(out), {&a, &b}, "sub",
                                [ai, bi](const detail::TensorImpl<T>& o) {
                                  if (ai->requires_grad) {
                                    ai->ensure_grad();
                                    for (std::size_t i = 0; i < o.grad.size(); ++i)
                                      ai->grad[i] += o.grad[i];
                                  }
                                  if (bi->requires_grad) {
                                    bi->ensure_grad();
                                    for (std::size_t i = 0; i < o.grad.size(); ++i)
                                      bi->grad[i] -= o.grad[i];
                                  }
                                });
}

template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto ai = a.impl(), bi = b.impl();
  return detail::make_result<T>(a.shape(), std::move(out), {&a, &b}, "mul",
                                [ai, bi](const detail::TensorImpl<T>& o) {
                                  if (ai->requires_grad) {
                                    ai->ensure_grad();
                                    for (std::size_t i = 0; i < o.grad.size(); ++i)
                                      ai->grad[i] += o.grad[i] * bi->data[i];
                                  }
                                  if (bi->requires_grad) {
                                    bi->ensure_grad();
                                    for (std::size_t i = 0; i < o.grad.size(); ++i)
                                      bi->grad[i] += o.grad[i] * ai->data[i];
                                  }
                                });
}

template <class T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
  auto ai = a.impl();
  return detail::make_result<T>(a.shape(), std::move(out), {&a}, "scale",
                                [ai, factor](const detail::TensorImpl<T>& o) {
                                  ai->ensure_grad();
                                  for (std::size_t i = 0; i < o.grad.size(); ++i)
                                    ai->grad[i] += o.grad[i] * factor;
                                });
}

template <class T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
  T total = std::accumulate(a.data().begin(), a.data().end(), T{0});
  auto ai = a.impl();
  return detail::make_result<T>({1}, {total}, {&a}, "sum",
                                [ai](const detail::TensorImpl<T>& o) {
                                  ai->ensure_grad();
                                  for (auto& g : ai->grad) g += o.grad[0];
                                });
}

template <class T>
BasicTensor<T> mean(const BasicTensor<T>& a) {
  return scale(sum(a), T{1} / static_cast<T>(a.numel()));
}

// Scalar view of element `index`.
template <class T>
BasicTensor<T> select(const BasicTensor<T>& a, std::size_t index) {
  if (index >= a.numel()) {
    throw DimensionError("select: index " + std::to_string(index) + " out of " +
                         shape_string(a.shape()));
  }
  auto ai = a.impl();
  return detail::make_result<T>({1}, {a.data()[index]}, {&a}, "select",
                                [ai, index](const detail::TensorImpl<T>& o) {
                                  ai->ensure_grad();
                                  ai->grad[index] += o.grad[0];
                                });
}

template <class T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_string(a.shape()) + " as " +
                         shape_string(shape));
  }
  auto ai = a.impl();
  return detail::make_result<T>(std::move(shape),
                                std::vector<T>(a.data().begin(), a.data().end()), {&a},
                                "reshape", [ai](const detail::TensorImpl<T>& o) {
                                  ai->ensure_grad();
                                  for (std::size_t i = 0; i < o.grad.size(); ++i)
                                    ai->grad[i] += o.grad[i];
                                });
}

// ---------------------------------------------------------------------------
// Nonlinearities

template <class T>
BasicTensor<T> relu(const BasicTensor<T>& a) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(a.data()[i], T{0});
  auto ai = a.impl();
  return detail::make_result<T>(a.shape(), std::move(out), {&a}, "relu",
                                [ai](const detail::TensorImpl<T>& o) {
                                  ai->ensure_grad();
                                  for (std::size_t i = 0; i < o.grad.size(); ++i)
                                    if (ai->data[i] > T{0}) ai->grad[i] += o.grad[i];
                                });
}

// Gradient passes where lo <= x <= hi.
template <class T>
BasicTensor<T> clip(const BasicTensor<T>& a, T lo, T hi) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(a.data()[i], lo, hi);
  auto ai = a.impl();
  return detail::make_result<T>(a.shape(), std::move(out), {&a}, "clip",
                                [ai, lo, hi](const detail::TensorImpl<T>& o) {
                                  ai->ensure_grad();
                                  for (std::size_t i = 0; i < o.grad.size(); ++i) {
                                    const T x = ai->data[i];
                                    if (x >= lo && x <= hi) ai->grad[i] += o.grad[i];
                                  }
                                });
}

template <class T>
BasicTensor<T> tanh(const BasicTensor<T>& a) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.data()[i]);
  auto ai = a.impl();
  std::vector<T> saved = out;
  return detail::make_result<T>(a.shape(), std::move(out), {&a}, "tanh",
                                [ai, saved = std::move(saved)](const detail::TensorImpl<T>& o) {
                                  ai->ensure_grad();
                                  for (std::size_t i = 0; i < o.grad.size(); ++i)
                                    ai->grad[i] += o.grad[i] * (T{1} - saved[i] * saved[i]);
                                });
}

// ---------------------------------------------------------------------------
// Linear algebra

template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_string(a.shape()) + " by " +
                         shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n);
  detail::gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n, false);
  auto ai = a.impl(), bi = b.impl();
  return detail::make_result<T>({m, n}, std::move(out), {&a, &b}, "matmul",
                                [ai, bi, m, k, n](const detail::TensorImpl<T>& o) {
                                  if (ai->requires_grad) {
                                    ai->ensure_grad();
                                    detail::gemm_nt(o.grad.data(), bi->data.data(),
                                                    ai->grad.data(), m, n, k, true);
                                  }
                                  if (bi->requires_grad) {
                                    bi->ensure_grad();
                                    detail::gemm_tn(ai->data.data(), o.grad.data(),
                                                    bi->grad.data(), k, m, n, true);
                                  }
                                });
}

// Adds b[F] to every row of x[N x F], or b[C] to every channel of x[N x C x H x W].
template <class T>
BasicTensor<T> add_bias(const BasicTensor<T>& x, const BasicTensor<T>& b) {
  if ((x.rank() != 2 && x.rank() != 4) || b.rank() != 1 || b.dim(0) != x.dim(1)) {
    throw DimensionError("add_bias: bias " + shape_string(b.shape()) + " does not match " +
                         shape_string(x.shape()));
  }
  const std::size_t n = x.dim(0), c = x.dim(1);
  const std::size_t inner = x.numel() / (n * c);
  std::vector<T> out(x.data().begin(), x.data().end());
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch) {
      T* p = out.data() + (s * c + ch) * inner;
      for (std::size_t i = 0; i < inner; ++i) p[i] += b.data()[ch];
    }
  auto xi = x.impl(), bi = b.impl();
  return detail::make_result<T>(x.shape(), std::move(out), {&x, &b}, "add_bias",
                                [xi, bi, n, c, inner](const detail::TensorImpl<T>& o) {
                                  if (xi->requires_grad) {
                                    xi->ensure_grad();
                                    for (std::size_t i = 0; i < o.grad.size(); ++i)
                                      xi->grad[i] += o.grad[i];
                                  }
                                  if (bi->requires_grad) {
                                    bi->ensure_grad();
                                    for (std::size_t s = 0; s < n; ++s)
                                      for (std::size_t ch = 0; ch < c; ++ch) {
                                        const T* g = o.grad.data() + (s * c + ch) * inner;
                                        T acc{0};
                                        for (std::size_t i = 0; i < inner; ++i) acc += g[i];
                                        bi->grad[ch] += acc;
                                      }
                                  }
                                });
}

namespace detail {

struct ConvGeometry {
  std::size_t channels, height, width, kh, kw, stride, pad, out_h, out_w;
  std::size_t patch() const { return channels * kh * kw; }
  std::size_t positions() const { return out_h * out_w; }
};

// Writes the patches of one image into columns [col0, col0 + positions) of
// a cols matrix with `stride_cols` columns per row.
template <class T>
void im2col(const T* image, const ConvGeometry& g, T* cols, std::size_t stride_cols) {
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        T* row = cols + ((c * g.kh + ky) * g.kw + kx) * stride_cols;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 &&
                                iy < static_cast<std::ptrdiff_t>(g.height) &&
                                ix < static_cast<std::ptrdiff_t>(g.width);
            row[oy * g.out_w + ox] =
                inside ? image[(c * g.height + static_cast<std::size_t>(iy)) * g.width +
                               static_cast<std::size_t>(ix)]
                       : T{0};
          }
        }
      }
}

template <class T>
void col2im_add(const T* cols, const ConvGeometry& g, T* image, std::size_t stride_cols) {
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const T* row = cols + ((c * g.kh + ky) * g.kw + kx) * stride_cols;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
            image[(c * g.height + static_cast<std::size_t>(iy)) * g.width +
                  static_cast<std::size_t>(ix)] += row[oy * g.out_w + ox];
          }
        }
      }
}

}  // namespace detail

// Cross-correlation of x[N x C x H x W] with w[F x C x kh x kw], zero padded.
// The whole batch is lowered to one cols matrix [C*kh*kw x N*positions]
// and a single GEMM.
template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, std::size_t stride = 1,
                      std::size_t padding = 0) {
  if (x.rank() != 4 || w.rank() != 4 || x.dim(1) != w.dim(1)) {
    throw DimensionError("conv2d: input " + shape_string(x.shape()) +
                         " incompatible with kernel " + shape_string(w.shape()));
  }
  if (stride == 0) throw ContractError("conv2d: stride must be positive");
  const std::size_t n = x.dim(0), filters = w.dim(0);
  detail::ConvGeometry g{x.dim(1), x.dim(2), x.dim(3), w.dim(2), w.dim(3), stride, padding, 0, 0};
  if (g.kh > g.height + 2 * padding || g.kw > g.width + 2 * padding) {
    throw DimensionError("conv2d: kernel " + shape_string(w.shape()) +
                         " larger than padded input " + shape_string(x.shape()));
  }
  g.out_h = (g.height + 2 * padding - g.kh) / stride + 1;
  g.out_w = (g.width + 2 * padding - g.kw) / stride + 1;

  const std::size_t patch = g.patch(), pos = g.positions(), wide = n * pos;
  const std::size_t image_size = g.channels * g.height * g.width;
  std::vector<T> cols(patch * wide);
  for (std::size_t s = 0; s < n; ++s)
    detail::im2col(x.data().data() + s * image_size, g, cols.data() + s * pos, wide);
  std::vector<T> wide_out(filters * wide);
  detail::gemm_nn(w.data().data(), cols.data(), wide_out.data(), filters, patch, wide, false);
  std::vector<T> out(n * filters * pos);
  for (std::size_t f = 0; f < filters; ++f)
    for (std::size_t s = 0; s < n; ++s)
      std::copy_n(wide_out.data() + f * wide + s * pos, pos, out.data() + (s * filters + f) * pos);

  auto xi = x.impl(), wi = w.impl();
  return detail::make_result<T>(
      {n, filters, g.out_h, g.out_w}, std::move(out), {&x, &w}, "conv2d",
      [xi, wi, g, n, filters, image_size, cols = std::move(cols)](const detail::TensorImpl<T>& o) {
        const std::size_t patch = g.patch(), pos = g.positions(), wide = n * pos;
        std::vector<T> gwide(filters * wide);
        for (std::size_t s = 0; s < n; ++s)
          for (std::size_t f = 0; f < filters; ++f)
            std::copy_n(o.grad.data() + (s * filters + f) * pos, pos, gwide.data() + f * wide + s * pos);
        if (wi->requires_grad) {
          wi->ensure_grad();
          detail::gemm_nt(gwide.data(), cols.data(), wi->grad.data(), filters, wide, patch, true);
        }
        if (xi->requires_grad) {
          xi->ensure_grad();
          std::vector<T> dcols(patch * wide);
          detail::gemm_tn(wi->data.data(), gwide.data(), dcols.data(), patch, filters, wide, false);
          for (std::size_t s = 0; s < n; ++s)
            detail::col2im_add(dcols.data() + s * pos, g, xi->grad.data() + s * image_size, wide);
        }
      });
}

// 2x2 max pooling with stride 2; spatial extents must be even.
template <class T>
BasicTensor<T> maxpool2(const BasicTensor<T>& x) {
  if (x.rank() != 4 || x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0) {
    throw DimensionError("maxpool2: needs N x C x H x W with even H, W; got " +
                         shape_string(x.shape()));
  }
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h / 2, ow = w / 2;
  std::vector<T> out(planes * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  const T* in = x.data().data();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        std::size_t best = (p * h + 2 * y) * w + 2 * xx;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (p * h + 2 * y + dy) * w + 2 * xx + dx;
            if (in[idx] > in[best]) best = idx;
          }
        const std::size_t o = (p * oh + y) * ow + xx;
        out[o] = in[best];
        argmax[o] = best;
      }
  auto xi = x.impl();
  return detail::make_result<T>({x.dim(0), x.dim(1), oh, ow}, std::move(out), {&x}, "maxpool2",
                                [xi, argmax = std::move(argmax)](const detail::TensorImpl<T>& o) {
                                  xi->ensure_grad();
                                  for (std::size_t i = 0; i < o.grad.size(); ++i)
                                    xi->grad[argmax[i]] += o.grad[i];
                                });
}

// Mean cross-entropy of softmax(logits[N x C]) against integer labels.
template <class T>
BasicTensor<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("softmax_cross_entropy: logits " + shape_string(logits.shape()) +
                         " vs " + std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw ValidationError("label " + std::to_string(labels[i]) + " at index " +
                            std::to_string(i) + " outside [0, " + std::to_string(c) + ")");
    }
  }
  std::vector<T> probs(n * c);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = logits.data().data() + i * c;
    const T peak = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(static_cast<double>(row[j] - peak));
    for (std::size_t j = 0; j < c; ++j)
      probs[i * c + j] = static_cast<T>(std::exp(static_cast<double>(row[j] - peak)) / z);
    loss += std::log(z) - static_cast<double>(row[labels[i]] - peak);
  }
  loss /= static_cast<double>(n);
  std::vector<int> saved_labels(labels.begin(), labels.end());
  auto li = logits.impl();
  return detail::make_result<T>(
      {1}, {static_cast<T>(loss)}, {&logits}, "softmax_cross_entropy",
      [li, n, c, probs = std::move(probs),
       saved_labels = std::move(saved_labels)](const detail::TensorImpl<T>& o) {
        li->ensure_grad();
        const T g = o.grad[0] / static_cast<T>(n);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < c; ++j) {
            const T target = static_cast<int>(j) == saved_labels[i] ? T{1} : T{0};
            li->grad[i * c + j] += g * (probs[i * c + j] - target);
          }
      });
}

}  // namespace bitbudget
