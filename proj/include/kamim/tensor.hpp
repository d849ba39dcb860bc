#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation.
//
// Every op records a backward closure on its output node when grad mode is
// enabled and at least one input requires gradients. backward() orders the
// reachable graph topologically and visits each node once. Storage is T
// (float in training, double for finite-difference shadows); reductions and
// matmul inner products accumulate in double.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <type_traits>
#include <vector>

#include "kamim/error.hpp"
#include "kamim/parallel.hpp"

namespace kamim {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace detail {

inline thread_local bool grad_mode = true;

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  bool leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void()> backward;

  T* grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad.data();
  }
};

}  // namespace detail

/// Disables graph recording for its lifetime (inference, evaluation).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode) { detail::grad_mode = false; }
  ~NoGradGuard() { detail::grad_mode = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode; }

template <typename T>
class BasicTensor {
 public:
  using value_type = T;
  using Node = detail::Node<T>;

  BasicTensor() = default;
  explicit BasicTensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static BasicTensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
    for (auto d : shape) {
      if (d < 0) throw ShapeError("tensor: negative extent in " + shape_str(shape));
    }
    if (static_cast<std::int64_t>(data.size()) != shape_numel(shape)) {
      throw ShapeError("tensor: " + std::to_string(data.size()) + " values for shape " +
                       shape_str(shape));
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    if (requires_grad) node->grad_buffer();
    return BasicTensor(std::move(node));
  }

  static BasicTensor full(Shape shape, T value, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return from_data(std::move(shape), std::vector<T>(static_cast<std::size_t>(n), value),
                     requires_grad);
  }

  static BasicTensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(0), requires_grad);
  }

  static BasicTensor ones(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(1), requires_grad);
  }

  static BasicTensor scalar(T value, bool requires_grad = false) {
    return from_data({}, {value}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->data.size()); }

  std::int64_t dim(int axis) const {
    const int a = axis < 0 ? axis + rank() : axis;
    if (a < 0 || a >= rank()) throw ShapeError("tensor: axis out of range");
    return node_->shape[static_cast<std::size_t>(a)];
  }

  std::span<const T> data() const { return node_->data; }
  /// Direct write access; only meaningful on leaves outside a live graph.
  std::span<T> mutable_data() { return node_->data; }
  const std::vector<T>& values() const { return node_->data; }

  T item() const {
    if (numel() != 1) throw ShapeError("item: tensor has " + std::to_string(numel()) + " elements");
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) {
    node_->requires_grad = on;
    if (on) node_->grad_buffer();
  }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return {node_->grad_buffer(), node_->data.size()}; }

  /// Gradient, or zeros when none has been accumulated.
  std::vector<T> grad_or_zeros() const {
    if (has_grad()) return node_->grad;
    return std::vector<T>(node_->data.size(), T(0));
  }

  void zero_grad() {
    if (has_grad()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  /// Same values, detached from any graph.
  BasicTensor detach() const { return from_data(shape(), node_->data, false); }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }
  const char* op_name() const { return node_->op; }

  /// Accumulates d(this)/d(leaf) into every reachable leaf that requires
  /// gradients. Interior gradients are transient.
  void backward() const {
    if (numel() != 1) {
      throw ShapeError("backward: loss must be scalar, got " + shape_str(shape()));
    }
    if (!node_->requires_grad) return;

    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->inputs.size()) {
        Node* child = n->inputs[next++].get();
        if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }

    for (Node* n : order) {
      if (!n->leaf) n->grad.assign(n->data.size(), T(0));
    }
    node_->grad_buffer()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if ((*it)->backward) (*it)->backward();
    }
    for (Node* n : order) {
      if (!n->leaf) std::vector<T>().swap(n->grad);
    }
  }

 private:
  std::shared_ptr<Node> node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

/// Copies values into a tensor of another scalar type (no graph).
template <typename U, typename T>
BasicTensor<U> tensor_cast(const BasicTensor<T>& t, bool requires_grad = false) {
  std::vector<U> values(t.data().begin(), t.data().end());
  return BasicTensor<U>::from_data(t.shape(), std::move(values), requires_grad);
}

namespace detail {

template <typename T>
BasicTensor<T> make_result(Shape shape, std::vector<T> data, const char* op,
                           std::initializer_list<const BasicTensor<T>*> inputs) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  if (grad_mode) {
    for (const auto* in : inputs) {
      if (in->requires_grad()) node->requires_grad = true;
    }
  }
  if (node->requires_grad) {
    node->leaf = false;
    for (const auto* in : inputs) node->inputs.push_back(in->node_ptr());
  }
  return BasicTensor<T>(std::move(node));
}

template <typename T>
BasicTensor<T> make_result(Shape shape, std::vector<T> data, const char* op,
                           const std::vector<BasicTensor<T>>& inputs) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  if (grad_mode) {
    for (const auto& in : inputs) {
      if (in.requires_grad()) node->requires_grad = true;
    }
  }
  if (node->requires_grad) {
    node->leaf = false;
    for (const auto& in : inputs) node->inputs.push_back(in.node_ptr());
  }
  return BasicTensor<T>(std::move(node));
}

inline int normalize_axis(int axis, int rank, const char* op) {
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) throw ShapeError(std::string(op) + ": axis out of range");
  return a;
}

inline Shape strides_of(const Shape& shape) {
  Shape s(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) s[i] = s[i + 1] * shape[i + 1];
  return s;
}

// Broadcast over leading axes: the smaller operand's shape must be a suffix
// of the larger one's.
inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return a;
  if (is_suffix(b, a)) return a;
  if (is_suffix(a, b)) return b;
  throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                   shape_str(b));
}

// Adds the gradient of a broadcast operand: g_small[j] += sum over repeats.
template <typename T, typename Term>
void reduce_broadcast_grad(std::int64_t n_out, T* g_small, std::int64_t n_small, Term&& term) {
  if (n_small == n_out) {
    parallel_for(0, n_out, [&](std::int64_t i) { g_small[i] += static_cast<T>(term(i, i)); }, 4096);
    return;
  }
  std::vector<double> acc(static_cast<std::size_t>(n_small), 0.0);
  const std::int64_t reps = n_small == 0 ? 0 : n_out / n_small;
  for (std::int64_t r = 0; r < reps; ++r) {
    for (std::int64_t j = 0; j < n_small; ++j) acc[j] += term(r * n_small + j, j);
  }
  for (std::int64_t j = 0; j < n_small; ++j) g_small[j] += static_cast<T>(acc[j]);
}

inline constexpr std::int64_t kTileRows = 8;
inline constexpr std::int64_t kTileCols = 8;

using Lane8d = double __attribute__((vector_size(64)));

// Packed micro-kernel: a is [K][kTileRows], b is [K][kTileCols], both double.
// Continues the sums already in acc.
[[gnu::noinline]] inline void gemm_tile(std::int64_t K, const double* __restrict a,
                                        const double* __restrict b, double* __restrict acc_io) {
  Lane8d acc[kTileRows];
  std::memcpy(acc, acc_io, sizeof acc);
  for (std::int64_t k = 0; k < K; ++k) {
    Lane8d bk;
    std::memcpy(&bk, b + k * kTileCols, sizeof bk);
    const double* ak = a + k * kTileRows;
    for (std::int64_t r = 0; r < kTileRows; ++r) acc[r] += ak[r] * bk;
  }
  std::memcpy(acc_io, acc, sizeof acc);
}

// Strided matrix view: element (r, c) is ptr[r * rs + c * cs].
template <typename T>
struct MatView {
  const T* ptr;
  std::int64_t rs;
  std::int64_t cs;
  T operator()(std::int64_t r, std::int64_t c) const { return ptr[r * rs + c * cs]; }
};

inline constexpr std::int64_t kDepthBlock = 256;

// For each s < batch: C_s[M,N] (+)= A_s[M,K] * B_s[K,N], where A_s, B_s are
// views offset by s * a_step / s * b_step and C_s is dense at C + s * M * N.
// Every output element is summed over k in order with double accumulation,
// so results do not depend on tiling or worker count.
template <typename T>
void gemm(std::int64_t batch, std::int64_t M, std::int64_t K, std::int64_t N, MatView<T> A,
          std::int64_t a_step, MatView<T> B, std::int64_t b_step, T* C, bool accumulate) {
  if (batch == 0 || M == 0 || N == 0) return;
  const std::int64_t panels = (N + kTileCols - 1) / kTileCols;
  const std::int64_t panel_size = K * kTileCols;
  std::vector<double> bp(static_cast<std::size_t>(batch * panels * panel_size), 0.0);
  parallel_for(0, batch * panels, [&](std::int64_t sp) {
    const std::int64_t s = sp / panels;
    const std::int64_t j0 = (sp % panels) * kTileCols;
    const std::int64_t cols = std::min(kTileCols, N - j0);
    const MatView<T> b{B.ptr + s * b_step, B.rs, B.cs};
    double* dst = bp.data() + sp * panel_size;
    for (std::int64_t k = 0; k < K; ++k)
      for (std::int64_t c = 0; c < cols; ++c) dst[k * kTileCols + c] = b(k, j0 + c);
  }, 2);
  const std::int64_t row_blocks = (M + kTileRows - 1) / kTileRows;
  parallel_for(0, batch * row_blocks, [&](std::int64_t sb) {
    const std::int64_t s = sb / row_blocks;
    const std::int64_t i0 = (sb % row_blocks) * kTileRows;
    const std::int64_t rows = std::min(kTileRows, M - i0);
    const MatView<T> a{A.ptr + s * a_step, A.rs, A.cs};
    const double* bs = bp.data() + s * panels * panel_size;
    std::vector<double> acc(static_cast<std::size_t>(panels * kTileRows * kTileCols), 0.0);
    std::vector<double> ap(static_cast<std::size_t>(std::min(K, kDepthBlock) * kTileRows), 0.0);
    for (std::int64_t k0 = 0; k0 < K; k0 += kDepthBlock) {
      const std::int64_t kc = std::min(kDepthBlock, K - k0);
      for (std::int64_t k = 0; k < kc; ++k)
        for (std::int64_t r = 0; r < rows; ++r) ap[k * kTileRows + r] = a(i0 + r, k0 + k);
      for (std::int64_t p = 0; p < panels; ++p) {
        gemm_tile(kc, ap.data(), bs + p * panel_size + k0 * kTileCols,
                  acc.data() + p * kTileRows * kTileCols);
      }
    }
    T* cs = C + s * M * N;
    for (std::int64_t p = 0; p < panels; ++p) {
      const std::int64_t j0 = p * kTileCols;
      const std::int64_t cols = std::min(kTileCols, N - j0);
      const double* tile = acc.data() + p * kTileRows * kTileCols;
      for (std::int64_t r = 0; r < rows; ++r) {
        T* crow = cs + (i0 + r) * N + j0;
        for (std::int64_t c = 0; c < cols; ++c) {
          crow[c] = accumulate ? static_cast<T>(crow[c] + tile[r * kTileCols + c])
                               : static_cast<T>(tile[r * kTileCols + c]);
        }
      }
    }
  }, 1);
}

// C[M,N] (+)= A[M,K] * B[K,N], all dense row-major.
template <typename T>
void gemm_nn(std::int64_t M, std::int64_t K, std::int64_t N, const T* A, const T* B, T* C,
             bool accumulate) {
  gemm<T>(1, M, K, N, {A, K, 1}, 0, {B, N, 1}, 0, C, accumulate);
}

template <typename T, typename Fwd, typename Bwd>
BasicTensor<T> unary_op(const BasicTensor<T>& x, const char* name, Fwd fwd, Bwd dfdx) {
  const std::int64_t n = x.numel();
  std::vector<T> out(static_cast<std::size_t>(n));
  const T* xd = x.data().data();
  parallel_for(0, n, [&](std::int64_t i) { out[i] = static_cast<T>(fwd(static_cast<double>(xd[i]))); }, 4096);
  auto result = make_result<T>(x.shape(), std::move(out), name, {&x});
  if (result.requires_grad()) {
    auto* o = result.node();
    auto* in = x.node();
    o->backward = [o, in, dfdx]() {
      if (!in->requires_grad) return;
      T* g = in->grad_buffer();
      const std::int64_t count = static_cast<std::int64_t>(in->data.size());
      parallel_for(0, count, [&](std::int64_t i) {
        g[i] += static_cast<T>(static_cast<double>(o->grad[i]) *
                               dfdx(static_cast<double>(in->data[i]), static_cast<double>(o->data[i])));
      }, 4096);
    };
  }
  return result;
}

enum class BinaryKind { add, sub, mul, div };

template <typename F>
decltype(auto) dispatch_kind(BinaryKind kind, F&& f) {
  switch (kind) {
    case BinaryKind::add: return f(std::integral_constant<BinaryKind, BinaryKind::add>{});
    case BinaryKind::sub: return f(std::integral_constant<BinaryKind, BinaryKind::sub>{});
    case BinaryKind::mul: return f(std::integral_constant<BinaryKind, BinaryKind::mul>{});
    default: return f(std::integral_constant<BinaryKind, BinaryKind::div>{});
  }
}

// Runs body(i, j) over all n output elements in blocks of `period`, where j
// is the index into the operand repeated with that period.
template <typename F>
void for_each_block(std::int64_t n, std::int64_t period, F&& body) {
  if (n == 0) return;
  if (period == n) {
    parallel_for(0, (n + 1023) / 1024, [&](std::int64_t c) {
      const std::int64_t end = std::min(n, (c + 1) * 1024);
      for (std::int64_t i = c * 1024; i < end; ++i) body(i, i);
    }, 4);
    return;
  }
  parallel_for(0, n / period, [&](std::int64_t r) {
    const std::int64_t base = r * period;
    for (std::int64_t j = 0; j < period; ++j) body(base + j, j);
  }, period >= 1024 ? 4 : 4096 / period + 1);
}

template <typename T>
BasicTensor<T> binary_op(const BasicTensor<T>& a, const BasicTensor<T>& b, BinaryKind kind,
                         const char* name) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape(), name);
  const std::int64_t n = shape_numel(out_shape);
  const std::int64_t na = a.numel();
  const std::int64_t nb = b.numel();
  const bool a_full = na == n;
  const std::int64_t period = a_full ? nb : na;
  const T* ad = a.data().data();
  const T* bd = b.data().data();
  if (kind == BinaryKind::div) {
    for (std::int64_t j = 0; j < nb; ++j) {
      if (bd[j] == T(0)) throw InvalidArgument("div: division by zero");
    }
  }
  std::vector<T> out(static_cast<std::size_t>(n));
  T* od = out.data();
  dispatch_kind(kind, [&](auto k) {
    constexpr BinaryKind K = decltype(k)::value;
    auto apply = [](T x, T y) {
      if constexpr (K == BinaryKind::add) return x + y;
      else if constexpr (K == BinaryKind::sub) return x - y;
      else if constexpr (K == BinaryKind::mul) return x * y;
      else return x / y;
    };
    if (a_full) {
      for_each_block(n, period, [&](std::int64_t i, std::int64_t j) { od[i] = apply(ad[i], bd[j]); });
    } else {
      for_each_block(n, period, [&](std::int64_t i, std::int64_t j) { od[i] = apply(ad[j], bd[i]); });
    }
  });
  auto result = make_result<T>(out_shape, std::move(out), name, {&a, &b});
  if (result.requires_grad()) {
    auto* o = result.node();
    auto* pa = a.node();
    auto* pb = b.node();
    o->backward = [o, pa, pb, kind, n, a_full, period]() {
      const T* g = o->grad.data();
      const T* av = pa->data.data();
      const T* bv = pb->data.data();
      // x = a value, y = b value at the same output position.
      dispatch_kind(kind, [&](auto k) {
        constexpr BinaryKind K = decltype(k)::value;
        auto da = [](double gi, double, double y) {
          if constexpr (K == BinaryKind::mul) return gi * y;
          else if constexpr (K == BinaryKind::div) return gi / y;
          else return gi;
        };
        auto db = [](double gi, double x, double y) {
          if constexpr (K == BinaryKind::add) return gi;
          else if constexpr (K == BinaryKind::sub) return -gi;
          else if constexpr (K == BinaryKind::mul) return gi * x;
          else return -gi * x / (y * y);
        };
        if (a_full) {
          if (pa->requires_grad) {
            T* ga = pa->grad_buffer();
            for_each_block(n, period, [&](std::int64_t i, std::int64_t j) {
              ga[i] += static_cast<T>(da(g[i], av[i], bv[j]));
            });
          }
          if (pb->requires_grad) {
            reduce_broadcast_grad<T>(n, pb->grad_buffer(), period, [&](std::int64_t i, std::int64_t j) {
              return db(g[i], av[i], bv[j]);
            });
          }
        } else {
          if (pb->requires_grad) {
            T* gb = pb->grad_buffer();
            for_each_block(n, period, [&](std::int64_t i, std::int64_t j) {
              gb[i] += static_cast<T>(db(g[i], av[j], bv[i]));
            });
          }
          if (pa->requires_grad) {
            reduce_broadcast_grad<T>(n, pa->grad_buffer(), period, [&](std::int64_t i, std::int64_t j) {
              return da(g[i], av[j], bv[i]);
            });
          }
        }
      });
    };
  }
  return result;
}

// Visits every element of `shape`, calling f(linear_index, mapped_offset)
// where mapped_offset = sum(index[d] * mapped_strides[d]).
template <typename F>
void for_each_mapped(const Shape& shape, const Shape& mapped_strides, F&& f) {
  const std::size_t rank = shape.size();
  const std::int64_t n = shape_numel(shape);
  if (n == 0) return;
  std::vector<std::int64_t> idx(rank, 0);
  std::int64_t offset = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    f(i, offset);
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      offset += mapped_strides[d];
      if (idx[d] < shape[d]) break;
      offset -= mapped_strides[d] * shape[d];
      idx[d] = 0;
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return detail::binary_op(a, b, detail::BinaryKind::add, "add");
}
template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return detail::binary_op(a, b, detail::BinaryKind::sub, "sub");
}
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return detail::binary_op(a, b, detail::BinaryKind::mul, "mul");
}
template <typename T>
BasicTensor<T> div(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return detail::binary_op(a, b, detail::BinaryKind::div, "div");
}

template <typename T>
BasicTensor<T> operator+(const BasicTensor<T>& a, const BasicTensor<T>& b) { return add(a, b); }
template <typename T>
BasicTensor<T> operator-(const BasicTensor<T>& a, const BasicTensor<T>& b) { return sub(a, b); }
template <typename T>
BasicTensor<T> operator*(const BasicTensor<T>& a, const BasicTensor<T>& b) { return mul(a, b); }
template <typename T>
BasicTensor<T> operator/(const BasicTensor<T>& a, const BasicTensor<T>& b) { return div(a, b); }

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, double s) {
  return detail::unary_op(x, "scale", [s](double v) { return v * s; },
                          [s](double, double) { return s; });
}

template <typename T>
BasicTensor<T> add_scalar(const BasicTensor<T>& x, double s) {
  return detail::unary_op(x, "add_scalar", [s](double v) { return v + s; },
                          [](double, double) { return 1.0; });
}

template <typename T>
BasicTensor<T> neg(const BasicTensor<T>& x) { return scale(x, -1.0); }

template <typename T>
BasicTensor<T> exp(const BasicTensor<T>& x) {
  return detail::unary_op(x, "exp", [](double v) { return std::exp(v); },
                          [](double, double y) { return y; });
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  return detail::unary_op(x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
                          [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

/// |x|; the subgradient at exactly 0 is 0.
template <typename T>
BasicTensor<T> abs(const BasicTensor<T>& x) {
  return detail::unary_op(x, "abs", [](double v) { return std::abs(v); },
                          [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

/// GELU, tanh approximation, with its exact derivative.
template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double c = 0.044715;
  const std::int64_t n = x.numel();
  std::vector<T> out(static_cast<std::size_t>(n));
  auto tanh_cache = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n));
  const T* xd = x.data().data();
  parallel_for(0, n, [&](std::int64_t i) {
    const T v = xd[i];
    const T u = static_cast<T>(k) * (v + static_cast<T>(c) * v * v * v);
    T t;
    if constexpr (std::is_same_v<T, float>) {
      t = 1.0f - 2.0f / (1.0f + std::exp(2.0f * u));
    } else {
      t = std::tanh(u);
    }
    (*tanh_cache)[i] = t;
    out[i] = static_cast<T>(0.5) * v * (1 + t);
  }, 4096);
  auto result = detail::make_result<T>(x.shape(), std::move(out), "gelu", {&x});
  if (result.requires_grad()) {
    auto* o = result.node();
    auto* in = x.node();
    o->backward = [o, in, tanh_cache]() {
      if (!in->requires_grad) return;
      T* g = in->grad_buffer();
      const std::int64_t count = static_cast<std::int64_t>(in->data.size());
      parallel_for(0, count, [&](std::int64_t i) {
        const double v = in->data[i];
        const double t = (*tanh_cache)[i];
        const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * k * (1.0 + 3.0 * c * v * v);
        g[i] += static_cast<T>(static_cast<double>(o->grad[i]) * d);
      }, 4096);
    };
  }
  return result;
}

// ---------------------------------------------------------------------------
// Matrix products

/// a[..., M, K] x b[K, N] -> [..., M, N], or batched a[B..., M, K] x
/// b[B..., K, N] with identical leading extents.
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2) throw ShapeError("matmul: operands must have rank >= 2");
  const std::int64_t M = a.dim(-2);
  const std::int64_t K = a.dim(-1);
  if (b.dim(-2) != K) {
    throw ShapeError("matmul: inner extents differ " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const std::int64_t N = b.dim(-1);
  std::int64_t batch = 1;
  bool shared_b = b.rank() == 2;
  Shape out_shape = a.shape();
  out_shape.back() = N;
  if (shared_b) {
    batch = a.numel() / std::max<std::int64_t>(M * K, 1);
    if (M * K == 0) batch = shape_numel(Shape(a.shape().begin(), a.shape().end() - 2));
  } else {
    if (a.rank() != b.rank() ||
        !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) {
      throw ShapeError("matmul: batch extents differ " + shape_str(a.shape()) + " x " +
                       shape_str(b.shape()));
    }
    batch = shape_numel(Shape(a.shape().begin(), a.shape().end() - 2));
  }
  std::vector<T> out(static_cast<std::size_t>(batch * M * N));
  const T* ad = a.data().data();
  const T* bd = b.data().data();
  if (shared_b) {
    detail::gemm_nn(batch * M, K, N, ad, bd, out.data(), false);
  } else {
    detail::gemm<T>(batch, M, K, N, {ad, K, 1}, M * K, {bd, N, 1}, K * N, out.data(), false);
  }
  auto result = detail::make_result<T>(out_shape, std::move(out), "matmul", {&a, &b});
  if (result.requires_grad()) {
    auto* o = result.node();
    auto* pa = a.node();
    auto* pb = b.node();
    o->backward = [o, pa, pb, batch, M, K, N, shared_b]() {
      const T* g = o->grad.data();
      const T* av = pa->data.data();
      const T* bv = pb->data.data();
      // dA = G * B^T, dB = A^T * G
      if (shared_b) {
        if (pa->requires_grad) {
          detail::gemm<T>(1, batch * M, N, K, {g, N, 1}, 0, {bv, 1, N}, 0, pa->grad_buffer(), true);
        }
        if (pb->requires_grad) {
          detail::gemm<T>(1, K, batch * M, N, {av, 1, K}, 0, {g, N, 1}, 0, pb->grad_buffer(), true);
        }
        return;
      }
      if (pa->requires_grad) {
        detail::gemm<T>(batch, M, N, K, {g, N, 1}, M * N, {bv, 1, N}, K * N, pa->grad_buffer(), true);
      }
      if (pb->requires_grad) {
        detail::gemm<T>(batch, K, M, N, {av, 1, K}, M * K, {g, N, 1}, M * N, pb->grad_buffer(), true);
      }
    };
  }
  return result;
}

// ---------------------------------------------------------------------------
// Normalizations

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x, int axis = -1) {
  const int ax = detail::normalize_axis(axis, x.rank(), "softmax");
  const std::int64_t len = x.shape()[ax];
  if (len == 0) throw ShapeError("softmax: empty axis");
  std::int64_t outer = 1;
  std::int64_t inner = 1;
  for (int d = 0; d < ax; ++d) outer *= x.shape()[d];
  for (int d = ax + 1; d < x.rank(); ++d) inner *= x.shape()[d];
  std::vector<T> out(static_cast<std::size_t>(x.numel()));
  const T* xd = x.data().data();
  parallel_for(0, outer * inner, [&](std::int64_t r) {
    const std::int64_t base = (r / inner) * len * inner + (r % inner);
    double mx = -INFINITY;
    for (std::int64_t k = 0; k < len; ++k) mx = std::max(mx, static_cast<double>(xd[base + k * inner]));
    double sum = 0.0;
    for (std::int64_t k = 0; k < len; ++k) {
      const T e = std::exp(static_cast<T>(xd[base + k * inner] - mx));
      out[base + k * inner] = e;
      sum += e;
    }
    const T inv = static_cast<T>(1.0 / sum);
    for (std::int64_t k = 0; k < len; ++k) out[base + k * inner] *= inv;
  }, 64);
  auto result = detail::make_result<T>(x.shape(), std::move(out), "softmax", {&x});
  if (result.requires_grad()) {
    auto* o = result.node();
    auto* in = x.node();
    o->backward = [o, in, outer, inner, len]() {
      if (!in->requires_grad) return;
      T* gx = in->grad_buffer();
      const T* y = o->data.data();
      const T* gy = o->grad.data();
      parallel_for(0, outer * inner, [&](std::int64_t r) {
        const std::int64_t base = (r / inner) * len * inner + (r % inner);
        double dot = 0.0;
        for (std::int64_t k = 0; k < len; ++k) {
          dot += static_cast<double>(gy[base + k * inner]) * y[base + k * inner];
        }
        for (std::int64_t k = 0; k < len; ++k) {
          const std::int64_t i = base + k * inner;
          gx[i] += static_cast<T>(static_cast<double>(y[i]) * (gy[i] - dot));
        }
      }, 64);
    };
  }
  return result;
}

/// Normalizes over the last axis; gain and bias ([D]) are optional.
template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain,
                          const BasicTensor<T>& bias, double eps = 1e-5) {
  if (x.rank() < 1) throw ShapeError("layer_norm: rank must be >= 1");
  const std::int64_t D = x.dim(-1);
  if (D == 0) throw ShapeError("layer_norm: empty feature axis");
  if (gain.defined() && gain.shape() != Shape{D}) throw ShapeError("layer_norm: gain shape");
  if (bias.defined() && bias.shape() != Shape{D}) throw ShapeError("layer_norm: bias shape");
  const std::int64_t rows = x.numel() / D;
  std::vector<T> out(static_cast<std::size_t>(x.numel()));
  auto xhat = std::make_shared<std::vector<double>>(static_cast<std::size_t>(x.numel()));
  auto rstd = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
  const T* xd = x.data().data();
  const T* gd = gain.defined() ? gain.data().data() : nullptr;
  const T* bd = bias.defined() ? bias.data().data() : nullptr;
  parallel_for(0, rows, [&](std::int64_t r) {
    const T* row = xd + r * D;
    double mean = 0.0;
    for (std::int64_t j = 0; j < D; ++j) mean += row[j];
    mean /= static_cast<double>(D);
    double var = 0.0;
    for (std::int64_t j = 0; j < D; ++j) {
      const double d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(D);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::int64_t j = 0; j < D; ++j) {
      const double h = (row[j] - mean) * rs;
      (*xhat)[r * D + j] = h;
      double y = h;
      if (gd) y *= gd[j];
      if (bd) y += bd[j];
      out[r * D + j] = static_cast<T>(y);
    }
  }, 64);
  std::vector<BasicTensor<T>> inputs{x};
  if (gain.defined()) inputs.push_back(gain);
  if (bias.defined()) inputs.push_back(bias);
  auto result = detail::make_result<T>(x.shape(), std::move(out), "layer_norm", inputs);
  if (result.requires_grad()) {
    auto* o = result.node();
    auto* px = x.node();
    auto* pg = gain.defined() ? gain.node() : nullptr;
    auto* pb = bias.defined() ? bias.node() : nullptr;
    o->backward = [o, px, pg, pb, xhat, rstd, rows, D]() {
      const T* gy = o->grad.data();
      if (px->requires_grad) {
        T* gx = px->grad_buffer();
        const T* gv = pg ? pg->data.data() : nullptr;
        parallel_for(0, rows, [&](std::int64_t r) {
          double mean_d = 0.0;
          double mean_dh = 0.0;
          for (std::int64_t j = 0; j < D; ++j) {
            const double d = static_cast<double>(gy[r * D + j]) * (gv ? gv[j] : 1.0);
            mean_d += d;
            mean_dh += d * (*xhat)[r * D + j];
          }
          mean_d /= static_cast<double>(D);
          mean_dh /= static_cast<double>(D);
          for (std::int64_t j = 0; j < D; ++j) {
            const double d = static_cast<double>(gy[r * D + j]) * (gv ? gv[j] : 1.0);
            gx[r * D + j] += static_cast<T>((*rstd)[r] * (d - mean_d - (*xhat)[r * D + j] * mean_dh));
          }
        }, 64);
      }
      if ((pg && pg->requires_grad) || (pb && pb->requires_grad)) {
        std::vector<double> dg(static_cast<std::size_t>(D), 0.0);
        std::vector<double> db(static_cast<std::size_t>(D), 0.0);
        for (std::int64_t r = 0; r < rows; ++r) {
          for (std::int64_t j = 0; j < D; ++j) {
            const double g = gy[r * D + j];
            dg[j] += g * (*xhat)[r * D + j];
            db[j] += g;
          }
        }
        if (pg && pg->requires_grad) {
          T* g = pg->grad_buffer();
          for (std::int64_t j = 0; j < D; ++j) g[j] += static_cast<T>(dg[j]);
        }
        if (pb && pb->requires_grad) {
          T* g = pb->grad_buffer();
          for (std::int64_t j = 0; j < D; ++j) g[j] += static_cast<T>(db[j]);
        }
      }
    };
  }
  return result;
}

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, double eps = 1e-5) {
  return layer_norm(x, BasicTensor<T>(), BasicTensor<T>(), eps);
}

// ---------------------------------------------------------------------------
// Reductions

namespace detail {

template <typename T>
BasicTensor<T> reduce(const BasicTensor<T>& x, std::vector<int> axes, bool average,
                      const char* name) {
  const int rank = x.rank();
  std::vector<bool> reduced(static_cast<std::size_t>(rank), false);
  if (axes.empty()) {
    std::fill(reduced.begin(), reduced.end(), true);
  } else {
    for (int a : axes) {
      const int ax = normalize_axis(a, rank, name);
      if (reduced[ax]) throw ShapeError(std::string(name) + ": repeated axis");
      reduced[ax] = true;
    }
  }
  Shape out_shape;
  std::int64_t count = 1;
  for (int d = 0; d < rank; ++d) {
    if (reduced[d]) {
      count *= x.shape()[d];
    } else {
      out_shape.push_back(x.shape()[d]);
    }
  }
  // Output stride for each input axis (0 on reduced axes).
  Shape mapped(static_cast<std::size_t>(rank), 0);
  {
    const Shape out_strides = strides_of(out_shape);
    std::size_t k = 0;
    for (int d = 0; d < rank; ++d) {
      if (!reduced[d]) mapped[d] = out_strides[k++];
    }
  }
  const double factor = average ? (count > 0 ? 1.0 / static_cast<double>(count) : NAN) : 1.0;
  // Contiguous reduced axes collapse to [outer, count, inner].
  int lo = rank;
  int hi = -1;
  for (int d = 0; d < rank; ++d) {
    if (reduced[d]) {
      lo = std::min(lo, d);
      hi = d;
    }
  }
  bool contiguous = true;
  for (int d = lo; d <= hi; ++d) contiguous = contiguous && reduced[d];
  std::int64_t outer = 1;
  std::int64_t inner = 1;
  if (contiguous) {
    for (int d = 0; d < lo && d < rank; ++d) outer *= x.shape()[d];
    for (int d = hi + 1; d < rank; ++d) inner *= x.shape()[d];
  }
  std::vector<double> acc(static_cast<std::size_t>(shape_numel(out_shape)), 0.0);
  const T* xd = x.data().data();
  if (contiguous) {
    for (std::int64_t o = 0; o < outer; ++o) {
      double* arow = acc.data() + o * inner;
      for (std::int64_t r = 0; r < count; ++r) {
        const T* xrow = xd + (o * count + r) * inner;
        for (std::int64_t k = 0; k < inner; ++k) arow[k] += xrow[k];
      }
    }
  } else {
    for_each_mapped(x.shape(), mapped, [&](std::int64_t i, std::int64_t off) { acc[off] += xd[i]; });
  }
  std::vector<T> out(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<T>(acc[i] * factor);
  auto result = make_result<T>(out_shape, std::move(out), name, {&x});
  if (result.requires_grad()) {
    auto* o = result.node();
    auto* in = x.node();
    o->backward = [o, in, mapped, factor, contiguous, outer, count, inner]() {
      if (!in->requires_grad) return;
      T* gx = in->grad_buffer();
      const T* gy = o->grad.data();
      if (contiguous) {
        for (std::int64_t b = 0; b < outer; ++b) {
          const T* grow = gy + b * inner;
          for (std::int64_t r = 0; r < count; ++r) {
            T* xrow = gx + (b * count + r) * inner;
            for (std::int64_t k = 0; k < inner; ++k) {
              xrow[k] += static_cast<T>(static_cast<double>(grow[k]) * factor);
            }
          }
        }
        return;
      }
      for_each_mapped(in->shape, mapped, [&](std::int64_t i, std::int64_t off) {
        gx[i] += static_cast<T>(static_cast<double>(gy[off]) * factor);
      });
    };
  }
  return result;
}

}  // namespace detail

/// Sum over the given axes (all axes when empty).
template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x, std::vector<int> axes = {}) {
  return detail::reduce(x, std::move(axes), false, "sum");
}

/// Mean over the given axes (all axes when empty).
template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x, std::vector<int> axes = {}) {
  return detail::reduce(x, std::move(axes), true, "mean");
}

// ---------------------------------------------------------------------------
// Shape manipulation

/// One extent may be -1 and is inferred.
template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  std::int64_t known = 1;
  int infer = -1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw ShapeError("reshape: more than one -1");
      infer = static_cast<int>(i);
    } else if (shape[i] < 0) {
      throw ShapeError("reshape: negative extent");
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0) {
    if (known == 0 || x.numel() % known != 0) throw ShapeError("reshape: cannot infer extent");
    shape[infer] = x.numel() / known;
  }
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  auto result = detail::make_result<T>(std::move(shape), std::move(out), "reshape", {&x});
  if (result.requires_grad()) {
    auto* o = result.node();
    auto* in = x.node();
    o->backward = [o, in]() {
      if (!in->requires_grad) return;
      T* gx = in->grad_buffer();
      for (std::size_t i = 0; i < o->grad.size(); ++i) gx[i] += o->grad[i];
    };
  }
  return result;
}

/// Output axis i is input axis perm[i].
template <typename T>
BasicTensor<T> permute(const BasicTensor<T>& x, const std::vector<int>& perm) {
  const int rank = x.rank();
  if (static_cast<int>(perm.size()) != rank) throw ShapeError("permute: wrong number of axes");
  std::vector<bool> seen(static_cast<std::size_t>(rank), false);
  for (int p : perm) {
    if (p < 0 || p >= rank || seen[p]) throw ShapeError("permute: invalid permutation");
    seen[p] = true;
  }
  const Shape in_strides = detail::strides_of(x.shape());
  Shape out_shape(static_cast<std::size_t>(rank));
  Shape mapped(static_cast<std::size_t>(rank));
  for (int i = 0; i < rank; ++i) {
    out_shape[i] = x.shape()[perm[i]];
    mapped[i] = in_strides[perm[i]];
  }
  std::vector<T> out(static_cast<std::size_t>(x.numel()));
  const T* xd = x.data().data();
  detail::for_each_mapped(out_shape, mapped, [&](std::int64_t i, std::int64_t off) { out[i] = xd[off]; });
  auto result = detail::make_result<T>(out_shape, std::move(out), "permute", {&x});
  if (result.requires_grad()) {
    auto* o = result.node();
    auto* in = x.node();
    o->backward = [o, in, mapped]() {
      if (!in->requires_grad) return;
      T* gx = in->grad_buffer();
      const T* gy = o->grad.data();
      detail::for_each_mapped(o->shape, mapped, [&](std::int64_t i, std::int64_t off) { gx[off] += gy[i]; });
    };
  }
  return result;
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& x, int axis0 = -2, int axis1 = -1) {
  const int a = detail::normalize_axis(axis0, x.rank(), "transpose");
  const int b = detail::normalize_axis(axis1, x.rank(), "transpose");
  std::vector<int> perm(static_cast<std::size_t>(x.rank()));
  std::iota(perm.begin(), perm.end(), 0);
  std::swap(perm[a], perm[b]);
  return permute(x, perm);
}

/// Elements [start, end) along axis.
template <typename T>
BasicTensor<T> slice(const BasicTensor<T>& x, int axis, std::int64_t start, std::int64_t end) {
  const int ax = detail::normalize_axis(axis, x.rank(), "slice");
  const std::int64_t len = x.shape()[ax];
  if (start < 0 || end > len || start > end) throw ShapeError("slice: range out of bounds");
  std::int64_t outer = 1;
  std::int64_t inner = 1;
  for (int d = 0; d < ax; ++d) outer *= x.shape()[d];
  for (int d = ax + 1; d < x.rank(); ++d) inner *= x.shape()[d];
  const std::int64_t take = end - start;
  Shape out_shape = x.shape();
  out_shape[ax] = take;
  std::vector<T> out(static_cast<std::size_t>(outer * take * inner));
  const T* xd = x.data().data();
  for (std::int64_t o = 0; o < outer; ++o) {
    std::copy_n(xd + (o * len + start) * inner, take * inner, out.data() + o * take * inner);
  }
  auto result = detail::make_result<T>(out_shape, std::move(out), "slice", {&x});
  if (result.requires_grad()) {
    auto* r = result.node();
    auto* in = x.node();
    r->backward = [r, in, outer, inner, len, start, take]() {
      if (!in->requires_grad) return;
      T* gx = in->grad_buffer();
      for (std::int64_t o = 0; o < outer; ++o) {
        const T* src = r->grad.data() + o * take * inner;
        T* dst = gx + (o * len + start) * inner;
        for (std::int64_t i = 0; i < take * inner; ++i) dst[i] += src[i];
      }
    };
  }
  return result;
}

template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const int ax = detail::normalize_axis(axis, parts[0].rank(), "concat");
  Shape out_shape = parts[0].shape();
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    if (p.rank() != parts[0].rank()) throw ShapeError("concat: rank mismatch");
    for (int d = 0; d < p.rank(); ++d) {
      if (d != ax && p.shape()[d] != parts[0].shape()[d]) throw ShapeError("concat: extent mismatch");
    }
    out_shape[ax] += p.shape()[ax];
  }
  std::int64_t outer = 1;
  std::int64_t inner = 1;
  for (int d = 0; d < ax; ++d) outer *= out_shape[d];
  for (int d = ax + 1; d < static_cast<int>(out_shape.size()); ++d) inner *= out_shape[d];
  const std::int64_t total = out_shape[ax];
  std::vector<T> out(static_cast<std::size_t>(shape_numel(out_shape)));
  std::vector<std::int64_t> offsets;
  std::int64_t at = 0;
  for (const auto& p : parts) {
    offsets.push_back(at);
    const std::int64_t len = p.shape()[ax];
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy_n(p.data().data() + o * len * inner, len * inner, out.data() + (o * total + at) * inner);
    }
    at += len;
  }
  auto result = detail::make_result<T>(out_shape, std::move(out), "concat", parts);
  if (result.requires_grad()) {
    auto* r = result.node();
    std::vector<detail::Node<T>*> ins;
    for (const auto& p : parts) ins.push_back(p.node());
    r->backward = [r, ins, offsets, outer, inner, total, ax]() {
      for (std::size_t k = 0; k < ins.size(); ++k) {
        if (!ins[k]->requires_grad) continue;
        const std::int64_t len = ins[k]->shape[ax];
        T* gx = ins[k]->grad_buffer();
        for (std::int64_t o = 0; o < outer; ++o) {
          const T* src = r->grad.data() + (o * total + offsets[k]) * inner;
          for (std::int64_t i = 0; i < len * inner; ++i) gx[o * len * inner + i] += src[i];
        }
      }
    };
  }
  return result;
}

/// Gathers rows of table[V, D] -> [indices.size(), D].
template <typename T>
BasicTensor<T> embedding_select(const BasicTensor<T>& table, const std::vector<std::int64_t>& indices) {
  if (table.rank() != 2) throw ShapeError("embedding_select: table must be [V, D]");
  const std::int64_t V = table.dim(0);
  const std::int64_t D = table.dim(1);
  std::vector<T> out(indices.size() * static_cast<std::size_t>(D));
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= V) throw ShapeError("embedding_select: index out of range");
    std::copy_n(table.data().data() + indices[i] * D, D, out.data() + i * D);
  }
  auto result = detail::make_result<T>({static_cast<std::int64_t>(indices.size()), D}, std::move(out),
                                       "embedding_select", {&table});
  if (result.requires_grad()) {
    auto* r = result.node();
    auto* in = table.node();
    r->backward = [r, in, indices, D]() {
      if (!in->requires_grad) return;
      T* g = in->grad_buffer();
      for (std::size_t i = 0; i < indices.size(); ++i)
        for (std::int64_t j = 0; j < D; ++j) g[indices[i] * D + j] += r->grad[i * D + j];
    };
  }
  return result;
}

/// Rows of x[..., D] flagged in row_mask become `token` ([D]); the rest pass
/// through. Gradients flow to both x (unflagged rows) and token.
template <typename T>
BasicTensor<T> replace_rows(const BasicTensor<T>& x, const std::vector<std::uint8_t>& row_mask,
                            const BasicTensor<T>& token) {
  if (x.rank() < 1) throw ShapeError("replace_rows: rank must be >= 1");
  const std::int64_t D = x.dim(-1);
  const std::int64_t rows = D == 0 ? 0 : x.numel() / D;
  if (static_cast<std::int64_t>(row_mask.size()) != rows) {
    throw ShapeError("replace_rows: mask has " + std::to_string(row_mask.size()) + " entries for " +
                     std::to_string(rows) + " rows");
  }
  if (token.shape() != Shape{D}) throw ShapeError("replace_rows: token must be [D]");
  std::vector<T> out(x.data().begin(), x.data().end());
  for (std::int64_t r = 0; r < rows; ++r) {
    if (row_mask[r]) std::copy_n(token.data().data(), D, out.data() + r * D);
  }
  auto result = detail::make_result<T>(x.shape(), std::move(out), "replace_rows", {&x, &token});
  if (result.requires_grad()) {
    auto* o = result.node();
    auto* px = x.node();
    auto* pt = token.node();
    o->backward = [o, px, pt, row_mask, rows, D]() {
      const T* gy = o->grad.data();
      if (px->requires_grad) {
        T* gx = px->grad_buffer();
        for (std::int64_t r = 0; r < rows; ++r) {
          if (row_mask[r]) continue;
          for (std::int64_t j = 0; j < D; ++j) gx[r * D + j] += gy[r * D + j];
        }
      }
      if (pt->requires_grad) {
        std::vector<double> acc(static_cast<std::size_t>(D), 0.0);
        for (std::int64_t r = 0; r < rows; ++r) {
          if (!row_mask[r]) continue;
          for (std::int64_t j = 0; j < D; ++j) acc[j] += gy[r * D + j];
        }
        T* gt = pt->grad_buffer();
        for (std::int64_t j = 0; j < D; ++j) gt[j] += static_cast<T>(acc[j]);
      }
    };
  }
  return result;
}

/// Mean softmax cross-entropy of logits[B, C] against integer labels.
template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, const std::vector<std::int64_t>& labels) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be [B, C]");
  const std::int64_t B = logits.dim(0);
  const std::int64_t C = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != B) throw ShapeError("cross_entropy: label count");
  if (B == 0 || C == 0) throw ShapeError("cross_entropy: empty batch or class axis");
  auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(B * C));
  double total = 0.0;
  const T* z = logits.data().data();
  for (std::int64_t b = 0; b < B; ++b) {
    if (labels[b] < 0 || labels[b] >= C) throw ShapeError("cross_entropy: label out of range");
    double mx = -INFINITY;
    for (std::int64_t c = 0; c < C; ++c) mx = std::max(mx, static_cast<double>(z[b * C + c]));
    double s = 0.0;
    for (std::int64_t c = 0; c < C; ++c) s += std::exp(z[b * C + c] - mx);
    for (std::int64_t c = 0; c < C; ++c) (*probs)[b * C + c] = std::exp(z[b * C + c] - mx) / s;
    total += -(z[b * C + labels[b]] - mx - std::log(s));
  }
  auto result = detail::make_result<T>({}, {static_cast<T>(total / static_cast<double>(B))},
                                       "cross_entropy", {&logits});
  if (result.requires_grad()) {
    auto* o = result.node();
    auto* in = logits.node();
    o->backward = [o, in, probs, labels, B, C]() {
      if (!in->requires_grad) return;
      T* g = in->grad_buffer();
      const double gy = o->grad[0] / static_cast<double>(B);
      for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t c = 0; c < C; ++c) {
          const double onehot = c == labels[b] ? 1.0 : 0.0;
          g[b * C + c] += static_cast<T>(gy * ((*probs)[b * C + c] - onehot));
        }
      }
    };
  }
  return result;
}

}  // namespace kamim
