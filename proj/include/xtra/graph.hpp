#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "xtra/error.hpp"
#include "xtra/masking.hpp"
#include "xtra/tensor.hpp"

namespace xtra {

namespace detail {

// C[m x n] += A[m x k] * B[k x n], row-major.
template <typename T>
void gemm_acc(const T* __restrict__ a, const T* __restrict__ b, T* __restrict__ c,
              std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* __restrict__ arow = a + i * k;
    T* __restrict__ crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* __restrict__ brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[k x n] += A^T * G where A is [m x k], G is [m x n], all row-major.
template <typename T>
void gemm_at_acc(const T* __restrict__ a, const T* __restrict__ g,
                 T* __restrict__ c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* __restrict__ arow = a + i * k;
    const T* __restrict__ grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      T* __restrict__ crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

template <typename T>
struct GeluCoeff {
  static constexpr T kSqrt2OverPi = T(0.7978845608028654);
  static constexpr T kCubic = T(0.044715);
};

// Double precision keeps libm tanh (the gradient checker runs in f64); the
// float path uses a clamped 7/6 Pade that the compiler can vectorize.
inline double tanh_impl(double x) { return std::tanh(x); }
inline float tanh_impl(float x) {
  if (x >= 4.97f) return 1.0f;
  if (x <= -4.97f) return -1.0f;
  const float x2 = x * x;
  const float p = x * (135135.0f + x2 * (17325.0f + x2 * (378.0f + x2)));
  const float q = 135135.0f + x2 * (62370.0f + x2 * (3150.0f + x2 * 28.0f));
  return p / q;
}

template <typename T>
T gelu_scalar(T x) {
  const T u = GeluCoeff<T>::kSqrt2OverPi * (x + GeluCoeff<T>::kCubic * x * x * x);
  return T(0.5) * x * (T(1) + tanh_impl(u));
}

template <typename T>
T gelu_grad_scalar(T x) {
  const T u = GeluCoeff<T>::kSqrt2OverPi * (x + GeluCoeff<T>::kCubic * x * x * x);
  const T t = tanh_impl(u);
  const T du = GeluCoeff<T>::kSqrt2OverPi * (T(1) + T(3) * GeluCoeff<T>::kCubic * x * x);
  return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
}

}  // namespace detail

// Elementwise GELU (tanh approximation) on a plain tensor.
template <typename T>
TensorT<T> gelu(const TensorT<T>& x) {
  TensorT<T> out = TensorT<T>::zeros(x.shape);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    out.data[i] = detail::gelu_scalar(x.data[i]);
  }
  return out;
}

// Plain 2-d matrix product; the graph op generalizes this to batched inputs.
template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.shape[1] != b.shape[0]) {
    throw ShapeError("matmul: incompatible shapes " + a.shape_string() + " and " +
                     b.shape_string());
  }
  TensorT<T> out = TensorT<T>::zeros({a.shape[0], b.shape[1]});
  detail::gemm_acc(a.data.data(), b.data.data(), out.data.data(), a.shape[0],
                   a.shape[1], b.shape[1]);
  return out;
}

// Softmax over the last dim with hard masking: masked entries are excluded
// from the max and the sum and come out exactly zero. The mask covers the
// last two dims; leading dims broadcast.
template <typename T>
TensorT<T> masked_softmax(const TensorT<T>& logits, const AttentionMask& mask) {
  if (logits.ndim() < 2 || logits.shape[logits.ndim() - 2] != mask.rows ||
      logits.shape[logits.ndim() - 1] != mask.cols) {
    throw ShapeError("masked_softmax: logits " + logits.shape_string() +
                     " do not end in mask dims [" + std::to_string(mask.rows) +
                     "x" + std::to_string(mask.cols) + "]");
  }
  for (std::size_t q = 0; q < mask.rows; ++q) {
    bool any = false;
    for (std::size_t k = 0; k < mask.cols; ++k) any = any || mask.at(q, k);
    if (!any) {
      throw MaskError("masked_softmax: query row " + std::to_string(q) +
                      " permits no keys");
    }
  }
  const std::size_t rows = mask.rows, cols = mask.cols;
  const std::size_t lead = logits.numel() / (rows * cols);
  TensorT<T> out = TensorT<T>::zeros(logits.shape);
  for (std::size_t l = 0; l < lead; ++l) {
    for (std::size_t q = 0; q < rows; ++q) {
      const T* in = logits.data.data() + (l * rows + q) * cols;
      T* o = out.data.data() + (l * rows + q) * cols;
      const std::uint8_t* row = mask.allow.data() + q * cols;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 0; k < cols; ++k) {
        if (row[k] && in[k] > mx) mx = in[k];
      }
      T sum = 0;
      for (std::size_t k = 0; k < cols; ++k) {
        if (row[k]) {
          o[k] = std::exp(in[k] - mx);
          sum += o[k];
        }
      }
      const T inv = T(1) / sum;
      for (std::size_t k = 0; k < cols; ++k) {
        if (row[k]) o[k] *= inv;
      }
    }
  }
  return out;
}

// Per-row standardization over the last dim followed by gamma * x + beta.
template <typename T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gamma,
                      const TensorT<T>& beta, T eps = T(1e-6)) {
  if (x.ndim() < 1) throw ShapeError("layer_norm: rank-0 input");
  const std::size_t d = x.shape.back();
  if (d < 2) throw ShapeError("layer_norm: last dim must be >= 2");
  if (gamma.shape != Shape{d} || beta.shape != Shape{d}) {
    throw ShapeError("layer_norm: gamma/beta must be [" + std::to_string(d) + "]");
  }
  if (eps <= T(0)) throw ContractError("layer_norm: eps must be positive");
  TensorT<T> out = TensorT<T>::zeros(x.shape);
  const std::size_t rows = x.numel() / d;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.data.data() + r * d;
    T* o = out.data.data() + r * d;
    T mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += in[j];
    mean /= T(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) {
      const T c = in[j] - mean;
      var += c * c;
    }
    var /= T(d);
    const T inv = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      o[j] = gamma.data[j] * ((in[j] - mean) * inv) + beta.data[j];
    }
  }
  return out;
}

// Reverse-mode tape. Nodes are appended in evaluation order, so node ids form
// a topological order by construction; backward walks the list once in
// reverse. Leaf values may be perturbed in place and the whole tape replayed
// with refresh(), which is what the finite-difference checker relies on.
template <typename T>
class GraphT {
 public:
  using Id = std::uint32_t;

  enum class Op : std::uint8_t {
    kParam,
    kInput,
    kReshape,
    kTransposeLast2,
    kSwapAxes12,
    kMatMul,
    kLinear,
    kAdd,
    kAddBroadcast,
    kMul,
    kScale,
    kRowScale,
    kAbs,
    kGelu,
    kLayerNorm,
    kMaskedSoftmax,
    kSumAll,
    kGather1,
    kTileBatch,
    kCrossEntropy,
  };

  Id param(std::string name, TensorT<T> value) {
    Node n;
    n.op = Op::kParam;
    n.out = std::move(value);
    n.needs_grad = true;
    n.name = std::move(name);
    leaves_.push_back(static_cast<Id>(nodes_.size()));
    nodes_.push_back(std::move(n));
    return leaves_.back();
  }

  Id input(TensorT<T> value) {
    Node n;
    n.op = Op::kInput;
    n.out = std::move(value);
    n.needs_grad = false;
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
  }

  Id reshape(Id a, Shape shape) {
    if (shape_numel(shape) != node(a).out.numel()) {
      throw ShapeError("reshape: " + node(a).out.shape_string() + " to " +
                       shape_str(shape) + " changes element count");
    }
    TensorT<T> out = node(a).out;
    out.shape = shape;
    Payload p;
    p.dims = std::move(shape);
    return push(Op::kReshape, {a}, std::move(out), std::move(p));
  }

  Id transpose_last2(Id a) {
    if (node(a).out.ndim() < 2) throw ShapeError("transpose_last2: need rank >= 2");
    return push(Op::kTransposeLast2, {a}, eval_transpose_last2(node(a).out), {});
  }

  Id swap_axes12(Id a) {
    if (node(a).out.ndim() < 3) throw ShapeError("swap_axes12: need rank >= 3");
    return push(Op::kSwapAxes12, {a}, eval_swap_axes12(node(a).out), {});
  }

  // a: [..., m, k]; b: [k, n] shared across leading dims, or [..., k, n] with
  // identical leading dims.
  Id matmul(Id a, Id b) {
    check_matmul(node(a).out, node(b).out);
    return push(Op::kMatMul, {a, b}, eval_matmul(node(a).out, node(b).out), {});
  }

  // x [..., m, k] @ w [k, n] + bias [n]; the workhorse of every projection.
  Id linear(Id x, Id w, Id b) {
    check_matmul(node(x).out, node(w).out);
    if (node(w).out.ndim() != 2 ||
        node(b).out.shape != Shape{node(w).out.shape[1]}) {
      throw ShapeError("linear: need w [k x n] and bias [n], got " +
                       node(w).out.shape_string() + " and " +
                       node(b).out.shape_string());
    }
    return push(Op::kLinear, {x, w, b},
                eval_linear(node(x).out, node(w).out, node(b).out), {});
  }

  Id add(Id a, Id b) {
    if (!node(a).out.same_shape(node(b).out)) {
      throw ShapeError("add: shape mismatch " + node(a).out.shape_string() +
                       " vs " + node(b).out.shape_string());
    }
    return push(Op::kAdd, {a, b}, eval_add(node(a).out, node(b).out), {});
  }

  // b's shape must be a suffix of a's shape; b is tiled over the leading dims.
  Id add_broadcast(Id a, Id b) {
    check_suffix(node(a).out, node(b).out, "add_broadcast");
    return push(Op::kAddBroadcast, {a, b},
                eval_add_broadcast(node(a).out, node(b).out), {});
  }

  Id mul(Id a, Id b) {
    if (!node(a).out.same_shape(node(b).out)) {
      throw ShapeError("mul: shape mismatch " + node(a).out.shape_string() +
                       " vs " + node(b).out.shape_string());
    }
    return push(Op::kMul, {a, b}, eval_mul(node(a).out, node(b).out), {});
  }

  Id scale(Id a, T c) {
    Payload p;
    p.scalar = c;
    return push(Op::kScale, {a}, eval_scale(node(a).out, c), std::move(p));
  }

  // m's shape must be a prefix of a's shape; each trailing slice of a is
  // multiplied by the matching entry of m.
  Id row_scale(Id a, Id m) {
    check_prefix(node(a).out, node(m).out, "row_scale");
    return push(Op::kRowScale, {a, m}, eval_row_scale(node(a).out, node(m).out), {});
  }

  Id abs(Id a) { return push(Op::kAbs, {a}, eval_abs(node(a).out), {}); }

  Id gelu_op(Id a) { return push(Op::kGelu, {a}, xtra::gelu(node(a).out), {}); }

  Id layer_norm_op(Id x, Id gamma, Id beta, T eps = T(1e-6)) {
    Payload p;
    p.scalar = eps;
    return push(Op::kLayerNorm, {x, gamma, beta},
                xtra::layer_norm(node(x).out, node(gamma).out, node(beta).out, eps),
                std::move(p));
  }

  Id masked_softmax_op(Id logits, std::shared_ptr<const AttentionMask> mask) {
    Payload p;
    p.mask = std::move(mask);
    TensorT<T> out = xtra::masked_softmax(node(logits).out, *p.mask);
    return push(Op::kMaskedSoftmax, {logits}, std::move(out), std::move(p));
  }

  Id sum_all(Id a) { return push(Op::kSumAll, {a}, eval_sum_all(node(a).out), {}); }

  // out[:, i, ...] = a[:, index[i], ...]
  Id gather_axis1(Id a, std::vector<std::size_t> index) {
    const TensorT<T>& t = node(a).out;
    if (t.ndim() < 2) throw ShapeError("gather_axis1: need rank >= 2");
    for (std::size_t i : index) {
      if (i >= t.shape[1]) throw ShapeError("gather_axis1: index out of range");
    }
    Payload p;
    p.dims = index;
    return push(Op::kGather1, {a}, eval_gather1(t, index), std::move(p));
  }

  // Repeats a along a new leading dim of size batch.
  Id tile_batch(Id a, std::size_t batch) {
    Payload p;
    p.dims = {batch};
    return push(Op::kTileBatch, {a}, eval_tile_batch(node(a).out, batch),
                std::move(p));
  }

  // Mean over the batch of -log softmax(logits)[label].
  Id cross_entropy(Id logits, std::vector<int> labels) {
    const TensorT<T>& t = node(logits).out;
    if (t.ndim() != 2) throw ShapeError("cross_entropy: logits must be [B x C]");
    if (labels.size() != t.shape[0]) {
      throw ShapeError("cross_entropy: label count mismatch");
    }
    for (int l : labels) {
      if (l < 0 || static_cast<std::size_t>(l) >= t.shape[1]) {
        throw ContractError("cross_entropy: label out of range");
      }
    }
    Payload p;
    p.labels = std::move(labels);
    TensorT<T> out = eval_cross_entropy(t, p.labels);
    return push(Op::kCrossEntropy, {logits}, std::move(out), std::move(p));
  }

  const TensorT<T>& value(Id id) const { return node(id).out; }
  TensorT<T>& leaf_value(Id id) {
    Node& n = nodes_.at(id);
    if (n.op != Op::kParam && n.op != Op::kInput) {
      throw ContractError("leaf_value: node is not a leaf");
    }
    return n.out;
  }

  std::size_t size() const { return nodes_.size(); }
  const std::vector<Id>& leaves() const { return leaves_; }
  const std::string& leaf_name(Id id) const { return node(id).name; }

  // Recomputes every non-leaf node, in order, from current leaf values.
  void refresh() {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      Node& n = nodes_[i];
      if (n.op == Op::kParam || n.op == Op::kInput) continue;
      n.out = eval_node(n);
    }
  }

  // Gradient of a scalar loss with respect to every named parameter leaf.
  // Leaves the loss does not depend on get zero gradients.
  std::map<std::string, TensorT<T>> backward(Id loss) const {
    if (node(loss).out.numel() != 1) {
      throw ContractError("backward: loss must be scalar, got " +
                          node(loss).out.shape_string());
    }
    std::vector<TensorT<T>> grads(nodes_.size());
    grads[loss] = TensorT<T>::full(node(loss).out.shape, T(1));
    for (std::size_t i = loss + 1; i-- > 0;) {
      const Node& n = nodes_[i];
      if (!n.needs_grad || grads[i].data.empty()) continue;
      if (n.op == Op::kParam || n.op == Op::kInput) continue;
      backprop_node(n, grads[i], grads);
      grads[i] = TensorT<T>();  // consumed; free early
    }
    std::map<std::string, TensorT<T>> out;
    for (Id leaf : leaves_) {
      const Node& n = nodes_[leaf];
      if (grads[leaf].data.empty()) {
        out[n.name] = TensorT<T>::zeros(n.out.shape);
      } else {
        out[n.name] = std::move(grads[leaf]);
      }
    }
    return out;
  }

 private:
  struct Payload {
    T scalar{};
    std::vector<std::size_t> dims;
    std::shared_ptr<const AttentionMask> mask;
    std::vector<int> labels;
  };

  struct Node {
    Op op{};
    std::vector<Id> in;
    TensorT<T> out;
    bool needs_grad = false;
    std::string name;
    Payload payload;
  };

  const Node& node(Id id) const { return nodes_.at(id); }

  Id push(Op op, std::vector<Id> in, TensorT<T> out, Payload payload) {
    Node n;
    n.op = op;
    n.in = std::move(in);
    n.out = std::move(out);
    n.payload = std::move(payload);
    for (Id i : n.in) n.needs_grad = n.needs_grad || nodes_.at(i).needs_grad;
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
  }

  static void check_matmul(const TensorT<T>& a, const TensorT<T>& b) {
    const bool shared_b = b.ndim() == 2;
    if (a.ndim() < 2 || b.ndim() < 2) {
      throw ShapeError("matmul: need rank >= 2, got " + a.shape_string() +
                       " and " + b.shape_string());
    }
    if (!shared_b) {
      if (a.ndim() != b.ndim() ||
          !std::equal(a.shape.begin(), a.shape.end() - 2, b.shape.begin())) {
        throw ShapeError("matmul: leading dims differ, " + a.shape_string() +
                         " vs " + b.shape_string());
      }
    }
    if (a.shape.back() != b.shape[b.ndim() - 2]) {
      throw ShapeError("matmul: inner dims differ, " + a.shape_string() +
                       " vs " + b.shape_string());
    }
  }

  static void check_suffix(const TensorT<T>& a, const TensorT<T>& b,
                           const char* opname) {
    if (b.ndim() > a.ndim() ||
        !std::equal(b.shape.rbegin(), b.shape.rend(), a.shape.rbegin())) {
      throw ShapeError(std::string(opname) + ": " + b.shape_string() +
                       " is not a suffix of " + a.shape_string());
    }
  }

  static void check_prefix(const TensorT<T>& a, const TensorT<T>& b,
                           const char* opname) {
    if (b.ndim() >= a.ndim() ||
        !std::equal(b.shape.begin(), b.shape.end(), a.shape.begin())) {
      throw ShapeError(std::string(opname) + ": " + b.shape_string() +
                       " is not a proper prefix of " + a.shape_string());
    }
  }

  // ---- forward kernels ----

  static TensorT<T> eval_transpose_last2(const TensorT<T>& a) {
    Shape s = a.shape;
    std::swap(s[s.size() - 1], s[s.size() - 2]);
    TensorT<T> out = TensorT<T>::zeros(s);
    const std::size_t r = a.shape[a.ndim() - 2], c = a.shape[a.ndim() - 1];
    const std::size_t lead = a.numel() / (r * c);
    for (std::size_t l = 0; l < lead; ++l) {
      const T* in = a.data.data() + l * r * c;
      T* o = out.data.data() + l * r * c;
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) o[j * r + i] = in[i * c + j];
      }
    }
    return out;
  }

  static TensorT<T> eval_swap_axes12(const TensorT<T>& a) {
    Shape s = a.shape;
    std::swap(s[1], s[2]);
    TensorT<T> out = TensorT<T>::zeros(s);
    const std::size_t d0 = a.shape[0], d1 = a.shape[1], d2 = a.shape[2];
    std::size_t rest = 1;
    for (std::size_t i = 3; i < a.ndim(); ++i) rest *= a.shape[i];
    for (std::size_t i0 = 0; i0 < d0; ++i0) {
      for (std::size_t i1 = 0; i1 < d1; ++i1) {
        for (std::size_t i2 = 0; i2 < d2; ++i2) {
          const T* in = a.data.data() + ((i0 * d1 + i1) * d2 + i2) * rest;
          T* o = out.data.data() + ((i0 * d2 + i2) * d1 + i1) * rest;
          std::copy(in, in + rest, o);
        }
      }
    }
    return out;
  }

  static TensorT<T> eval_matmul(const TensorT<T>& a, const TensorT<T>& b) {
    const std::size_t m = a.shape[a.ndim() - 2], k = a.shape.back();
    const std::size_t n = b.shape.back();
    const std::size_t lead = a.numel() / (m * k);
    Shape s(a.shape.begin(), a.shape.end() - 1);
    s.push_back(n);
    TensorT<T> out = TensorT<T>::zeros(s);
    const bool shared_b = b.ndim() == 2;
    for (std::size_t l = 0; l < lead; ++l) {
      const T* bp = shared_b ? b.data.data() : b.data.data() + l * k * n;
      detail::gemm_acc(a.data.data() + l * m * k, bp, out.data.data() + l * m * n,
                       m, k, n);
    }
    return out;
  }

  static TensorT<T> eval_linear(const TensorT<T>& x, const TensorT<T>& w,
                                const TensorT<T>& b) {
    const std::size_t m = x.shape[x.ndim() - 2], k = x.shape.back();
    const std::size_t n = w.shape[1];
    const std::size_t lead = x.numel() / (m * k);
    Shape s(x.shape.begin(), x.shape.end() - 1);
    s.push_back(n);
    TensorT<T> out = TensorT<T>::zeros(s);
    const std::size_t rows = lead * m;
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(b.data.begin(), b.data.end(), out.data.begin() + r * n);
    }
    for (std::size_t l = 0; l < lead; ++l) {
      detail::gemm_acc(x.data.data() + l * m * k, w.data.data(),
                       out.data.data() + l * m * n, m, k, n);
    }
    return out;
  }

  static TensorT<T> eval_add(const TensorT<T>& a, const TensorT<T>& b) {
    TensorT<T> out = a;
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += b.data[i];
    return out;
  }

  static TensorT<T> eval_add_broadcast(const TensorT<T>& a, const TensorT<T>& b) {
    TensorT<T> out = a;
    const std::size_t bn = b.numel();
    const std::size_t reps = a.numel() / bn;
    for (std::size_t r = 0; r < reps; ++r) {
      T* o = out.data.data() + r * bn;
      for (std::size_t i = 0; i < bn; ++i) o[i] += b.data[i];
    }
    return out;
  }

  static TensorT<T> eval_mul(const TensorT<T>& a, const TensorT<T>& b) {
    TensorT<T> out = a;
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] *= b.data[i];
    return out;
  }

  static TensorT<T> eval_scale(const TensorT<T>& a, T c) {
    TensorT<T> out = a;
    for (auto& v : out.data) v *= c;
    return out;
  }

  static TensorT<T> eval_row_scale(const TensorT<T>& a, const TensorT<T>& m) {
    TensorT<T> out = a;
    const std::size_t rows = m.numel();
    const std::size_t stride = a.numel() / rows;
    for (std::size_t r = 0; r < rows; ++r) {
      T* o = out.data.data() + r * stride;
      const T f = m.data[r];
      for (std::size_t i = 0; i < stride; ++i) o[i] *= f;
    }
    return out;
  }

  static TensorT<T> eval_abs(const TensorT<T>& a) {
    TensorT<T> out = a;
    for (auto& v : out.data) v = std::abs(v);
    return out;
  }

  static TensorT<T> eval_sum_all(const TensorT<T>& a) {
    T acc = 0;
    for (T v : a.data) acc += v;
    return TensorT<T>::scalar(acc);
  }

  static TensorT<T> eval_gather1(const TensorT<T>& a,
                                 const std::vector<std::size_t>& index) {
    const std::size_t d0 = a.shape[0], d1 = a.shape[1];
    const std::size_t rest = a.numel() / (d0 * d1);
    Shape s = a.shape;
    s[1] = index.size();
    TensorT<T> out = TensorT<T>::zeros(s);
    for (std::size_t i0 = 0; i0 < d0; ++i0) {
      for (std::size_t i = 0; i < index.size(); ++i) {
        const T* in = a.data.data() + (i0 * d1 + index[i]) * rest;
        T* o = out.data.data() + (i0 * index.size() + i) * rest;
        std::copy(in, in + rest, o);
      }
    }
    return out;
  }

  static TensorT<T> eval_tile_batch(const TensorT<T>& a, std::size_t batch) {
    Shape s;
    s.push_back(batch);
    s.insert(s.end(), a.shape.begin(), a.shape.end());
    TensorT<T> out = TensorT<T>::zeros(s);
    for (std::size_t b = 0; b < batch; ++b) {
      std::copy(a.data.begin(), a.data.end(), out.data.begin() + b * a.numel());
    }
    return out;
  }

  static TensorT<T> eval_cross_entropy(const TensorT<T>& logits,
                                       const std::vector<int>& labels) {
    const std::size_t B = logits.shape[0], C = logits.shape[1];
    T loss = 0;
    for (std::size_t b = 0; b < B; ++b) {
      const T* row = logits.data.data() + b * C;
      T mx = row[0];
      for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
      T sum = 0;
      for (std::size_t c = 0; c < C; ++c) sum += std::exp(row[c] - mx);
      loss += (mx + std::log(sum)) - row[static_cast<std::size_t>(labels[b])];
    }
    return TensorT<T>::scalar(loss / T(B));
  }

  TensorT<T> eval_node(const Node& n) const {
    switch (n.op) {
      case Op::kReshape: {
        TensorT<T> out = node(n.in[0]).out;
        out.shape = n.payload.dims;
        return out;
      }
      case Op::kTransposeLast2:
        return eval_transpose_last2(node(n.in[0]).out);
      case Op::kSwapAxes12:
        return eval_swap_axes12(node(n.in[0]).out);
      case Op::kMatMul:
        return eval_matmul(node(n.in[0]).out, node(n.in[1]).out);
      case Op::kLinear:
        return eval_linear(node(n.in[0]).out, node(n.in[1]).out, node(n.in[2]).out);
      case Op::kAdd:
        return eval_add(node(n.in[0]).out, node(n.in[1]).out);
      case Op::kAddBroadcast:
        return eval_add_broadcast(node(n.in[0]).out, node(n.in[1]).out);
      case Op::kMul:
        return eval_mul(node(n.in[0]).out, node(n.in[1]).out);
      case Op::kScale:
        return eval_scale(node(n.in[0]).out, n.payload.scalar);
      case Op::kRowScale:
        return eval_row_scale(node(n.in[0]).out, node(n.in[1]).out);
      case Op::kAbs:
        return eval_abs(node(n.in[0]).out);
      case Op::kGelu:
        return xtra::gelu(node(n.in[0]).out);
      case Op::kLayerNorm:
        return xtra::layer_norm(node(n.in[0]).out, node(n.in[1]).out,
                                node(n.in[2]).out, n.payload.scalar);
      case Op::kMaskedSoftmax:
        return xtra::masked_softmax(node(n.in[0]).out, *n.payload.mask);
      case Op::kSumAll:
        return eval_sum_all(node(n.in[0]).out);
      case Op::kGather1:
        return eval_gather1(node(n.in[0]).out, n.payload.dims);
      case Op::kTileBatch:
        return eval_tile_batch(node(n.in[0]).out, n.payload.dims[0]);
      case Op::kCrossEntropy:
        return eval_cross_entropy(node(n.in[0]).out, n.payload.labels);
      case Op::kParam:
      case Op::kInput:
        break;
    }
    throw ContractError("eval_node: leaf has no forward rule");
  }

  // ---- backward kernels ----

  void accumulate(std::vector<TensorT<T>>& grads, Id id, TensorT<T> g) const {
    if (!node(id).needs_grad) return;
    if (grads[id].data.empty()) {
      grads[id] = std::move(g);
    } else {
      for (std::size_t i = 0; i < g.numel(); ++i) grads[id].data[i] += g.data[i];
    }
  }

  // g is the consumed gradient buffer; pass-through ops may steal it.
  void backprop_node(const Node& n, TensorT<T>& g,
                     std::vector<TensorT<T>>& grads) const {
    switch (n.op) {
      case Op::kParam:
      case Op::kInput:
        return;
      case Op::kReshape: {
        TensorT<T> gx = std::move(g);
        gx.shape = node(n.in[0]).out.shape;
        accumulate(grads, n.in[0], std::move(gx));
        return;
      }
      case Op::kTransposeLast2:
        accumulate(grads, n.in[0], eval_transpose_last2(g));
        return;
      case Op::kSwapAxes12:
        accumulate(grads, n.in[0], eval_swap_axes12(g));
        return;
      case Op::kMatMul: {
        const TensorT<T>& a = node(n.in[0]).out;
        const TensorT<T>& b = node(n.in[1]).out;
        const std::size_t m = a.shape[a.ndim() - 2], k = a.shape.back();
        const std::size_t nn = b.shape.back();
        const std::size_t lead = a.numel() / (m * k);
        const bool shared_b = b.ndim() == 2;
        if (node(n.in[0]).needs_grad) {
          // ga = g @ b^T via a materialized transpose; keeps the inner loop
          // contiguous instead of a scalar dot-product reduction
          const TensorT<T> bt = eval_transpose_last2(b);
          TensorT<T> ga = TensorT<T>::zeros(a.shape);
          for (std::size_t l = 0; l < lead; ++l) {
            const T* bp = shared_b ? bt.data.data() : bt.data.data() + l * k * nn;
            detail::gemm_acc(g.data.data() + l * m * nn, bp,
                             ga.data.data() + l * m * k, m, nn, k);
          }
          accumulate(grads, n.in[0], std::move(ga));
        }
        if (node(n.in[1]).needs_grad) {
          TensorT<T> gb = TensorT<T>::zeros(b.shape);
          for (std::size_t l = 0; l < lead; ++l) {
            T* gp = shared_b ? gb.data.data() : gb.data.data() + l * k * nn;
            detail::gemm_at_acc(a.data.data() + l * m * k,
                                g.data.data() + l * m * nn, gp, m, k, nn);
          }
          accumulate(grads, n.in[1], std::move(gb));
        }
        return;
      }
      case Op::kLinear: {
        const TensorT<T>& x = node(n.in[0]).out;
        const TensorT<T>& w = node(n.in[1]).out;
        const std::size_t m = x.shape[x.ndim() - 2], k = x.shape.back();
        const std::size_t nn = w.shape[1];
        const std::size_t lead = x.numel() / (m * k);
        if (node(n.in[0]).needs_grad) {
          const TensorT<T> wt = eval_transpose_last2(w);
          TensorT<T> gx = TensorT<T>::zeros(x.shape);
          for (std::size_t l = 0; l < lead; ++l) {
            detail::gemm_acc(g.data.data() + l * m * nn, wt.data.data(),
                             gx.data.data() + l * m * k, m, nn, k);
          }
          accumulate(grads, n.in[0], std::move(gx));
        }
        if (node(n.in[1]).needs_grad) {
          TensorT<T> gw = TensorT<T>::zeros(w.shape);
          for (std::size_t l = 0; l < lead; ++l) {
            detail::gemm_at_acc(x.data.data() + l * m * k,
                                g.data.data() + l * m * nn, gw.data.data(), m, k,
                                nn);
          }
          accumulate(grads, n.in[1], std::move(gw));
        }
        if (node(n.in[2]).needs_grad) {
          TensorT<T> gb = TensorT<T>::zeros({nn});
          const std::size_t rows = lead * m;
          for (std::size_t r = 0; r < rows; ++r) {
            const T* gp = g.data.data() + r * nn;
            for (std::size_t j = 0; j < nn; ++j) gb.data[j] += gp[j];
          }
          accumulate(grads, n.in[2], std::move(gb));
        }
        return;
      }
      case Op::kAdd:
        accumulate(grads, n.in[0], g);
        accumulate(grads, n.in[1], std::move(g));
        return;
      case Op::kAddBroadcast: {
        if (node(n.in[1]).needs_grad) {
          const TensorT<T>& b = node(n.in[1]).out;
          TensorT<T> gb = TensorT<T>::zeros(b.shape);
          const std::size_t bn = b.numel();
          const std::size_t reps = g.numel() / bn;
          for (std::size_t r = 0; r < reps; ++r) {
            const T* gp = g.data.data() + r * bn;
            for (std::size_t i = 0; i < bn; ++i) gb.data[i] += gp[i];
          }
          accumulate(grads, n.in[1], std::move(gb));
        }
        accumulate(grads, n.in[0], std::move(g));
        return;
      }
      case Op::kMul: {
        const TensorT<T>& a = node(n.in[0]).out;
        const TensorT<T>& b = node(n.in[1]).out;
        if (node(n.in[0]).needs_grad) {
          TensorT<T> ga = g;
          for (std::size_t i = 0; i < ga.numel(); ++i) ga.data[i] *= b.data[i];
          accumulate(grads, n.in[0], std::move(ga));
        }
        if (node(n.in[1]).needs_grad) {
          for (std::size_t i = 0; i < g.numel(); ++i) g.data[i] *= a.data[i];
          accumulate(grads, n.in[1], std::move(g));
        }
        return;
      }
      case Op::kScale: {
        for (auto& v : g.data) v *= n.payload.scalar;
        accumulate(grads, n.in[0], std::move(g));
        return;
      }
      case Op::kRowScale: {
        const TensorT<T>& a = node(n.in[0]).out;
        const TensorT<T>& m = node(n.in[1]).out;
        const std::size_t rows = m.numel();
        const std::size_t stride = a.numel() / rows;
        if (node(n.in[1]).needs_grad) {
          TensorT<T> gm = TensorT<T>::zeros(m.shape);
          for (std::size_t r = 0; r < rows; ++r) {
            const T* gp = g.data.data() + r * stride;
            const T* ap = a.data.data() + r * stride;
            T acc = 0;
            for (std::size_t i = 0; i < stride; ++i) acc += gp[i] * ap[i];
            gm.data[r] = acc;
          }
          accumulate(grads, n.in[1], std::move(gm));
        }
        if (node(n.in[0]).needs_grad) {
          for (std::size_t r = 0; r < rows; ++r) {
            T* gp = g.data.data() + r * stride;
            for (std::size_t i = 0; i < stride; ++i) gp[i] *= m.data[r];
          }
          accumulate(grads, n.in[0], std::move(g));
        }
        return;
      }
      case Op::kAbs: {
        const TensorT<T>& a = node(n.in[0]).out;
        for (std::size_t i = 0; i < g.numel(); ++i) {
          g.data[i] *= a.data[i] > T(0) ? T(1) : (a.data[i] < T(0) ? T(-1) : T(0));
        }
        accumulate(grads, n.in[0], std::move(g));
        return;
      }
      case Op::kGelu: {
        const TensorT<T>& a = node(n.in[0]).out;
        for (std::size_t i = 0; i < g.numel(); ++i) {
          g.data[i] *= detail::gelu_grad_scalar(a.data[i]);
        }
        accumulate(grads, n.in[0], std::move(g));
        return;
      }
      case Op::kLayerNorm: {
        backprop_layer_norm(n, g, grads);
        return;
      }
      case Op::kMaskedSoftmax: {
        const TensorT<T>& y = n.out;
        const AttentionMask& mask = *n.payload.mask;
        TensorT<T> gx = TensorT<T>::zeros(y.shape);
        const std::size_t rows = mask.rows, cols = mask.cols;
        const std::size_t lead = y.numel() / (rows * cols);
        for (std::size_t l = 0; l < lead; ++l) {
          for (std::size_t q = 0; q < rows; ++q) {
            const std::size_t base = (l * rows + q) * cols;
            const std::uint8_t* row = mask.allow.data() + q * cols;
            T dot = 0;
            for (std::size_t k = 0; k < cols; ++k) {
              if (row[k]) dot += g.data[base + k] * y.data[base + k];
            }
            for (std::size_t k = 0; k < cols; ++k) {
              if (row[k]) {
                gx.data[base + k] = y.data[base + k] * (g.data[base + k] - dot);
              }
            }
          }
        }
        accumulate(grads, n.in[0], std::move(gx));
        return;
      }
      case Op::kSumAll: {
        const TensorT<T>& a = node(n.in[0]).out;
        accumulate(grads, n.in[0], TensorT<T>::full(a.shape, g.data[0]));
        return;
      }
      case Op::kGather1: {
        const TensorT<T>& a = node(n.in[0]).out;
        const auto& index = n.payload.dims;
        TensorT<T> ga = TensorT<T>::zeros(a.shape);
        const std::size_t d0 = a.shape[0], d1 = a.shape[1];
        const std::size_t rest = a.numel() / (d0 * d1);
        for (std::size_t i0 = 0; i0 < d0; ++i0) {
          for (std::size_t i = 0; i < index.size(); ++i) {
            const T* gp = g.data.data() + (i0 * index.size() + i) * rest;
            T* o = ga.data.data() + (i0 * d1 + index[i]) * rest;
            for (std::size_t r = 0; r < rest; ++r) o[r] += gp[r];
          }
        }
        accumulate(grads, n.in[0], std::move(ga));
        return;
      }
      case Op::kTileBatch: {
        const TensorT<T>& a = node(n.in[0]).out;
        TensorT<T> ga = TensorT<T>::zeros(a.shape);
        const std::size_t batch = n.payload.dims[0];
        for (std::size_t b = 0; b < batch; ++b) {
          const T* gp = g.data.data() + b * a.numel();
          for (std::size_t i = 0; i < a.numel(); ++i) ga.data[i] += gp[i];
        }
        accumulate(grads, n.in[0], std::move(ga));
        return;
      }
      case Op::kCrossEntropy: {
        const TensorT<T>& logits = node(n.in[0]).out;
        const std::size_t B = logits.shape[0], C = logits.shape[1];
        TensorT<T> gx = TensorT<T>::zeros(logits.shape);
        const T gscale = g.data[0] / T(B);
        for (std::size_t b = 0; b < B; ++b) {
          const T* row = logits.data.data() + b * C;
          T* o = gx.data.data() + b * C;
          T mx = row[0];
          for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
          T sum = 0;
          for (std::size_t c = 0; c < C; ++c) sum += std::exp(row[c] - mx);
          const T inv = T(1) / sum;
          for (std::size_t c = 0; c < C; ++c) {
            o[c] = std::exp(row[c] - mx) * inv * gscale;
          }
          o[static_cast<std::size_t>(n.payload.labels[b])] -= gscale;
        }
        accumulate(grads, n.in[0], std::move(gx));
        return;
      }
    }
  }

  void backprop_layer_norm(const Node& n, const TensorT<T>& g,
                           std::vector<TensorT<T>>& grads) const {
    const TensorT<T>& x = node(n.in[0]).out;
    const TensorT<T>& gamma = node(n.in[1]).out;
    const T eps = n.payload.scalar;
    const std::size_t d = x.shape.back();
    const std::size_t rows = x.numel() / d;
    const bool want_x = node(n.in[0]).needs_grad;
    const bool want_gamma = node(n.in[1]).needs_grad;
    const bool want_beta = node(n.in[2]).needs_grad;
    TensorT<T> gx = want_x ? TensorT<T>::zeros(x.shape) : TensorT<T>();
    TensorT<T> ggamma = want_gamma ? TensorT<T>::zeros(gamma.shape) : TensorT<T>();
    TensorT<T> gbeta = want_beta ? TensorT<T>::zeros(gamma.shape) : TensorT<T>();
    std::vector<T> xhat(d);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* in = x.data.data() + r * d;
      const T* gp = g.data.data() + r * d;
      T mean = 0;
      for (std::size_t j = 0; j < d; ++j) mean += in[j];
      mean /= T(d);
      T var = 0;
      for (std::size_t j = 0; j < d; ++j) {
        const T c = in[j] - mean;
        var += c * c;
      }
      var /= T(d);
      const T inv = T(1) / std::sqrt(var + eps);
      for (std::size_t j = 0; j < d; ++j) xhat[j] = (in[j] - mean) * inv;
      if (want_gamma) {
        for (std::size_t j = 0; j < d; ++j) ggamma.data[j] += gp[j] * xhat[j];
      }
      if (want_beta) {
        for (std::size_t j = 0; j < d; ++j) gbeta.data[j] += gp[j];
      }
      if (want_x) {
        T mean_dxhat = 0, mean_dxhat_xhat = 0;
        for (std::size_t j = 0; j < d; ++j) {
          const T dxh = gp[j] * gamma.data[j];
          mean_dxhat += dxh;
          mean_dxhat_xhat += dxh * xhat[j];
        }
        mean_dxhat /= T(d);
        mean_dxhat_xhat /= T(d);
        T* o = gx.data.data() + r * d;
        for (std::size_t j = 0; j < d; ++j) {
          const T dxh = gp[j] * gamma.data[j];
          o[j] = inv * (dxh - mean_dxhat - xhat[j] * mean_dxhat_xhat);
        }
      }
    }
    if (want_x) accumulate(grads, n.in[0], std::move(gx));
    if (want_gamma) accumulate(grads, n.in[1], std::move(ggamma));
    if (want_beta) accumulate(grads, n.in[2], std::move(gbeta));
  }

  std::vector<Node> nodes_;
  std::vector<Id> leaves_;
};

using Graph = GraphT<float>;
using GraphD = GraphT<double>;

}  // namespace xtra
