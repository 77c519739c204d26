// Dense fp64 tensors with reverse-mode differentiation on an explicit tape.
//
// Storage is contiguous row-major; reshape copies. Gradients accumulate
// additively across fan-out. A Tape activates itself for the current thread
// on construction and records one node per differentiable operation, in
// execution order; Tape::backward walks the nodes in reverse, which is a
// valid reverse-topological order. Ops executed with no active tape compute
// values only (evaluation mode).
//
// Debug builds assert that every op output is finite. Masked attention
// scores use kMaskScore (a large negative finite number) rather than -inf;
// after max subtraction it underflows to an exact 0 weight, so masking is
// bit-exact while tensors stay finite.
#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "adavae/common.hpp"

namespace adavae {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Effectively -inf for attention masking; exp(kMaskScore - max) == 0 exactly.
inline constexpr double kMaskScore = -1e30;

namespace detail {

inline std::uint64_t next_tensor_id() {
  static std::uint64_t counter = 0;
  return ++counter;
}

// C = A[m×k] · B[k×n], C preallocated and zeroed.
inline void mm(const double* a, const double* b, double* c, int m, int k,
               int n) {
  for (int i = 0; i < m; ++i) {
    double* crow = c + static_cast<std::size_t>(i) * n;
    const double* arow = a + static_cast<std::size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// dA[m×k] += G[m×n] · Bᵀ  (B is [k×n])
inline void mm_gbt(const double* g, const double* b, double* da, int m, int k,
                   int n) {
  for (int i = 0; i < m; ++i) {
    const double* grow = g + static_cast<std::size_t>(i) * n;
    double* darow = da + static_cast<std::size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double* brow = b + static_cast<std::size_t>(p) * n;
      double acc = 0.0;
      for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
      darow[p] += acc;
    }
  }
}

// dB[k×n] += Aᵀ · G[m×n]  (A is [m×k])
inline void mm_atg(const double* a, const double* g, double* db, int m, int k,
                   int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    const double* grow = g + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      double* dbrow = db + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) dbrow[j] += av * grow[j];
    }
  }
}

}  // namespace detail

struct TensorImpl {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  std::uint64_t id = detail::next_tensor_id();

  double* grad_buf() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad.data();
  }
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto impl = std::make_shared<TensorImpl>();
    impl->value.assign(shape_numel(shape), 0.0);
    impl->shape = std::move(shape);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
  }

  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.data().begin(), t.data().end(), v);
    return t;
  }

  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false) {
    if (shape_numel(shape) != values.size())
      throw DimensionError("tensor: shape " + shape_str(shape) +
                           " does not hold " + std::to_string(values.size()) +
                           " values");
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->value = std::move(values);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int dim(int i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
  int ndim() const { return static_cast<int>(impl_->shape.size()); }
  std::size_t numel() const { return impl_->value.size(); }

  std::vector<double>& data() { return impl_->value; }
  const std::vector<double>& data() const { return impl_->value; }
  double at(std::size_t i) const { return impl_->value[i]; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool rg) { impl_->requires_grad = rg; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::vector<double>& grad() { return impl_->grad; }
  const std::vector<double>& grad() const { return impl_->grad; }
  void zero_grad() { impl_->grad.clear(); }

  double item() const {
    if (numel() != 1)
      throw ContractError("item: tensor has shape " + shape_str(shape()));
    return impl_->value[0];
  }

  std::uint64_t id() const { return impl_->id; }
  TensorImpl* impl() const { return impl_.get(); }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
};

class Tape {
 public:
  struct Node {
    std::vector<std::uint64_t> inputs;
    std::uint64_t output = 0;
    std::function<void()> back;
  };

  Tape() : prev_(current_ref()) { current_ref() = this; }
  ~Tape() { current_ref() = prev_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current() { return current_ref(); }

  void record(std::vector<std::uint64_t> inputs, std::uint64_t output,
              std::function<void()> back) {
    outputs_.insert(output);
    nodes_.push_back(Node{std::move(inputs), output, std::move(back)});
  }

  bool on_tape(std::uint64_t id) const { return outputs_.count(id) > 0; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and visits every node exactly once in reverse
  // recording order, accumulating into input gradients.
  void backward(const Tensor& loss) {
    if (loss.numel() != 1)
      throw ContractError("backward: loss must be scalar, got " +
                          shape_str(loss.shape()));
    if (!on_tape(loss.id()))
      throw ContractError("backward: loss tensor is not on this tape");
    loss.impl()->grad.assign(1, 1.0);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->back();
  }

 private:
  static Tape*& current_ref() {
    thread_local Tape* cur = nullptr;
    return cur;
  }
  Tape* prev_ = nullptr;
  std::vector<Node> nodes_;
  std::unordered_set<std::uint64_t> outputs_;
};

namespace detail {

inline void check_finite(const Tensor& t, const char* op) {
#ifndef NDEBUG
  for (double v : t.data())
    assert(std::isfinite(v) && "non-finite op output");
  (void)op;
#else
  (void)t;
  (void)op;
#endif
}

// Shared epilogue: builds the output tensor, decides whether it joins the
// graph, and records its backward closure. `make_back(out)` must return a
// void() closure reading out.grad() and accumulating into input grads.
template <class BackFactory>
Tensor make_result(Shape shape, std::vector<double> value,
                   std::initializer_list<const Tensor*> inputs, const char* op,
                   BackFactory&& make_back) {
  Tensor out = Tensor::from(std::move(shape), std::move(value));
  check_finite(out, op);
  Tape* tape = Tape::current();
  bool needs = false;
  if (tape)
    for (const Tensor* in : inputs)
      if (in->requires_grad()) needs = true;
  if (needs) {
    out.set_requires_grad(true);
    std::vector<std::uint64_t> ids;
    ids.reserve(inputs.size());
    for (const Tensor* in : inputs) ids.push_back(in->id());
    tape->record(std::move(ids), out.id(), make_back(out));
  }
  return out;
}

inline void require_same_shape(const Tensor& a, const Tensor& b,
                               const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.at(i) + b.at(i);
  return detail::make_result(
      a.shape(), std::move(v), {&a, &b}, "add", [&](const Tensor& out) {
        return [a, b, out]() {
          if (!out.has_grad()) return;
          const auto& g = out.grad();
          if (a.requires_grad()) {
            double* da = a.impl()->grad_buf();
            for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
          }
          if (b.requires_grad()) {
            double* db = b.impl()->grad_buf();
            for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i];
          }
        };
      });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.at(i) - b.at(i);
  return detail::make_result(
      a.shape(), std::move(v), {&a, &b}, "sub", [&](const Tensor& out) {
        return [a, b, out]() {
          if (!out.has_grad()) return;
          const auto& g = out.grad();
          if (a.requires_grad()) {
            double* da = a.impl()->grad_buf();
            for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
          }
          if (b.requires_grad()) {
            double* db = b.impl()->grad_buf();
            for (std::size_t i = 0; i < g.size(); ++i) db[i] -= g[i];
          }
        };
      });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.at(i) * b.at(i);
  return detail::make_result(
      a.shape(), std::move(v), {&a, &b}, "mul", [&](const Tensor& out) {
        return [a, b, out]() {
          if (!out.has_grad()) return;
          const auto& g = out.grad();
          if (a.requires_grad()) {
            double* da = a.impl()->grad_buf();
            for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * b.at(i);
          }
          if (b.requires_grad()) {
            double* db = b.impl()->grad_buf();
            for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * a.at(i);
          }
        };
      });
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.at(i) * c;
  return detail::make_result(
      a.shape(), std::move(v), {&a}, "scale", [&](const Tensor& out) {
        return [a, c, out]() {
          if (!out.has_grad() || !a.requires_grad()) return;
          const auto& g = out.grad();
          double* da = a.impl()->grad_buf();
          for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * c;
        };
      });
}

inline Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.at(i) + c;
  return detail::make_result(
      a.shape(), std::move(v), {&a}, "add_scalar", [&](const Tensor& out) {
        return [a, out]() {
          if (!out.has_grad() || !a.requires_grad()) return;
          const auto& g = out.grad();
          double* da = a.impl()->grad_buf();
          for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
        };
      });
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

inline Tensor square(const Tensor& a) { return mul(a, a); }

inline Tensor exp(const Tensor& a) {
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::exp(a.at(i));
  return detail::make_result(
      a.shape(), std::move(v), {&a}, "exp", [&](const Tensor& out) {
        return [a, out]() {
          if (!out.has_grad() || !a.requires_grad()) return;
          const auto& g = out.grad();
          double* da = a.impl()->grad_buf();
          for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * out.at(i);
        };
      });
}

// x · Φ(x), GPT-2's tanh approximation; the exact form implemented is
//   0.5·x·(1 + tanh(sqrt(2/π)·(x + 0.044715·x³)))
inline Tensor gelu(const Tensor& a) {
  constexpr double kC = 0.7978845608028653558798921198687;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double x = a.at(i);
    v[i] = 0.5 * x * (1.0 + std::tanh(kC * (x + kA * x * x * x)));
  }
  return detail::make_result(
      a.shape(), std::move(v), {&a}, "gelu", [&](const Tensor& out) {
        return [a, out]() {
          if (!out.has_grad() || !a.requires_grad()) return;
          const auto& g = out.grad();
          double* da = a.impl()->grad_buf();
          for (std::size_t i = 0; i < g.size(); ++i) {
            const double x = a.at(i);
            const double u = kC * (x + kA * x * x * x);
            const double t = std::tanh(u);
            const double dudx = kC * (1.0 + 3.0 * kA * x * x);
            da[i] += g[i] * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dudx);
          }
        };
      });
}

// Elementwise clamp; subgradient passes through strictly inside [lo, hi].
inline Tensor clamp(const Tensor& a, double lo, double hi) {
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = std::min(hi, std::max(lo, a.at(i)));
  return detail::make_result(
      a.shape(), std::move(v), {&a}, "clamp", [&](const Tensor& out) {
        return [a, lo, hi, out]() {
          if (!out.has_grad() || !a.requires_grad()) return;
          const auto& g = out.grad();
          double* da = a.impl()->grad_buf();
          for (std::size_t i = 0; i < g.size(); ++i)
            if (a.at(i) > lo && a.at(i) < hi) da[i] += g[i];
        };
      });
}

// ---------------------------------------------------------------------------
// reductions

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a.at(i);
  return detail::make_result(
      Shape{1}, std::vector<double>{s}, {&a}, "sum", [&](const Tensor& out) {
        return [a, out]() {
          if (!out.has_grad() || !a.requires_grad()) return;
          const double g = out.grad()[0];
          double* da = a.impl()->grad_buf();
          for (std::size_t i = 0; i < a.numel(); ++i) da[i] += g;
        };
      });
}

// Column sums of a 2-D tensor: [L×d] -> [d].
inline Tensor sum_rows(const Tensor& a) {
  if (a.ndim() != 2)
    throw DimensionError("sum_rows: want 2-D, got " + shape_str(a.shape()));
  const int rows = a.dim(0), cols = a.dim(1);
  std::vector<double> v(static_cast<std::size_t>(cols), 0.0);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      v[static_cast<std::size_t>(j)] +=
          a.at(static_cast<std::size_t>(i) * cols + j);
  return detail::make_result(
      Shape{cols}, std::move(v), {&a}, "sum_rows", [&](const Tensor& out) {
        return [a, rows, cols, out]() {
          if (!out.has_grad() || !a.requires_grad()) return;
          const auto& g = out.grad();
          double* da = a.impl()->grad_buf();
          for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j)
              da[static_cast<std::size_t>(i) * cols + j] +=
                  g[static_cast<std::size_t>(j)];
        };
      });
}

// ---------------------------------------------------------------------------
// shape ops

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw DimensionError("reshape: " + shape_str(a.shape()) + " -> " +
                         shape_str(shape) + " changes element count");
  std::vector<double> v = a.data();
  return detail::make_result(
      std::move(shape), std::move(v), {&a}, "reshape",
      [&](const Tensor& out) {
        return [a, out]() {
          if (!out.has_grad() || !a.requires_grad()) return;
          const auto& g = out.grad();
          double* da = a.impl()->grad_buf();
          for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
        };
      });
}

inline Tensor transpose(const Tensor& a) {
  if (a.ndim() != 2)
    throw DimensionError("transpose: want 2-D, got " + shape_str(a.shape()));
  const int m = a.dim(0), n = a.dim(1);
  std::vector<double> v(a.numel());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      v[static_cast<std::size_t>(j) * m + i] =
          a.at(static_cast<std::size_t>(i) * n + j);
  return detail::make_result(
      Shape{n, m}, std::move(v), {&a}, "transpose", [&](const Tensor& out) {
        return [a, m, n, out]() {
          if (!out.has_grad() || !a.requires_grad()) return;
          const auto& g = out.grad();
          double* da = a.impl()->grad_buf();
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
              da[static_cast<std::size_t>(i) * n + j] +=
                  g[static_cast<std::size_t>(j) * m + i];
        };
      });
}

// Rows [r0, r1) of a 2-D tensor.
inline Tensor slice_rows(const Tensor& a, int r0, int r1) {
  if (a.ndim() != 2)
    throw DimensionError("slice_rows: want 2-D, got " + shape_str(a.shape()));
  if (r0 < 0 || r1 > a.dim(0) || r0 >= r1)
    throw DimensionError("slice_rows: bad range [" + std::to_string(r0) +
                         ", " + std::to_string(r1) + ") for " +
                         shape_str(a.shape()));
  const int cols = a.dim(1);
  std::vector<double> v(static_cast<std::size_t>(r1 - r0) * cols);
  std::copy_n(a.data().begin() + static_cast<std::size_t>(r0) * cols, v.size(),
              v.begin());
  return detail::make_result(
      Shape{r1 - r0, cols}, std::move(v), {&a}, "slice_rows",
      [&](const Tensor& out) {
        return [a, r0, cols, out]() {
          if (!out.has_grad() || !a.requires_grad()) return;
          const auto& g = out.grad();
          double* da = a.impl()->grad_buf();
          for (std::size_t i = 0; i < g.size(); ++i)
            da[static_cast<std::size_t>(r0) * cols + i] += g[i];
        };
      });
}

// Columns [c0, c1) of a 2-D tensor.
inline Tensor slice_cols(const Tensor& a, int c0, int c1) {
  if (a.ndim() != 2)
    throw DimensionError("slice_cols: want 2-D, got " + shape_str(a.shape()));
  if (c0 < 0 || c1 > a.dim(1) || c0 >= c1)
    throw DimensionError("slice_cols: bad range [" + std::to_string(c0) +
                         ", " + std::to_string(c1) + ") for " +
                         shape_str(a.shape()));
  const int rows = a.dim(0), cols = a.dim(1), w = c1 - c0;
  std::vector<double> v(static_cast<std::size_t>(rows) * w);
  for (int i = 0; i < rows; ++i)
    std::copy_n(a.data().begin() + static_cast<std::size_t>(i) * cols + c0, w,
                v.begin() + static_cast<std::size_t>(i) * w);
  return detail::make_result(
      Shape{rows, w}, std::move(v), {&a}, "slice_cols",
      [&](const Tensor& out) {
        return [a, rows, cols, c0, w, out]() {
          if (!out.has_grad() || !a.requires_grad()) return;
          const auto& g = out.grad();
          double* da = a.impl()->grad_buf();
          for (int i = 0; i < rows; ++i)
            for (int j = 0; j < w; ++j)
              da[static_cast<std::size_t>(i) * cols + c0 + j] +=
                  g[static_cast<std::size_t>(i) * w + j];
        };
      });
}

// Stacks two 2-D tensors with equal column counts, a on top of b.
inline Tensor concat_rows(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1))
    throw DimensionError("concat_rows: shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<double> v;
  v.reserve(a.numel() + b.numel());
  v.insert(v.end(), a.data().begin(), a.data().end());
  v.insert(v.end(), b.data().begin(), b.data().end());
  return detail::make_result(
      Shape{a.dim(0) + b.dim(0), a.dim(1)}, std::move(v), {&a, &b},
      "concat_rows", [&](const Tensor& out) {
        return [a, b, out]() {
          if (!out.has_grad()) return;
          const auto& g = out.grad();
          if (a.requires_grad()) {
            double* da = a.impl()->grad_buf();
            for (std::size_t i = 0; i < a.numel(); ++i) da[i] += g[i];
          }
          if (b.requires_grad()) {
            double* db = b.impl()->grad_buf();
            for (std::size_t i = 0; i < b.numel(); ++i)
              db[i] += g[a.numel() + i];
          }
        };
      });
}

// Joins 2-D tensors with equal row counts side by side.
inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no parts");
  const int rows = parts[0].dim(0);
  int cols = 0;
  for (const Tensor& p : parts) {
    if (p.ndim() != 2 || p.dim(0) != rows)
      throw DimensionError("concat_cols: shape mismatch at " +
                           shape_str(p.shape()));
    cols += p.dim(1);
  }
  std::vector<double> v(static_cast<std::size_t>(rows) * cols);
  int off = 0;
  for (const Tensor& p : parts) {
    const int w = p.dim(1);
    for (int i = 0; i < rows; ++i)
      std::copy_n(p.data().begin() + static_cast<std::size_t>(i) * w, w,
                  v.begin() + static_cast<std::size_t>(i) * cols + off);
    off += w;
  }
  Tensor out = Tensor::from(Shape{rows, cols}, std::move(v));
  detail::check_finite(out, "concat_cols");
  Tape* tape = Tape::current();
  bool needs = false;
  if (tape)
    for (const Tensor& p : parts)
      if (p.requires_grad()) needs = true;
  if (needs) {
    out.set_requires_grad(true);
    std::vector<std::uint64_t> ids;
    for (const Tensor& p : parts) ids.push_back(p.id());
    tape->record(std::move(ids), out.id(), [parts, rows, cols, out]() {
      if (!out.has_grad()) return;
      const auto& g = out.grad();
      int off = 0;
      for (const Tensor& p : parts) {
        const int w = p.dim(1);
        if (p.requires_grad()) {
          double* dp = p.impl()->grad_buf();
          for (int i = 0; i < rows; ++i)
            for (int j = 0; j < w; ++j)
              dp[static_cast<std::size_t>(i) * w + j] +=
                  g[static_cast<std::size_t>(i) * cols + off + j];
        }
        off += w;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: incompatible shapes " +
                         shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> v(static_cast<std::size_t>(m) * n, 0.0);
  detail::mm(a.data().data(), b.data().data(), v.data(), m, k, n);
  return detail::make_result(
      Shape{m, n}, std::move(v), {&a, &b}, "matmul", [&](const Tensor& out) {
        return [a, b, m, k, n, out]() {
          if (!out.has_grad()) return;
          const double* g = out.grad().data();
          if (a.requires_grad())
            detail::mm_gbt(g, b.data().data(), a.impl()->grad_buf(), m, k, n);
          if (b.requires_grad())
            detail::mm_atg(a.data().data(), g, b.impl()->grad_buf(), m, k, n);
        };
      });
}

// x[L×d] + row[d], broadcast over rows. Also accepts x[d] + row[d].
inline Tensor add_rowvec(const Tensor& x, const Tensor& row) {
  if (row.ndim() != 1)
    throw DimensionError("add_rowvec: bias must be 1-D, got " +
                         shape_str(row.shape()));
  if (x.ndim() == 1) {
    detail::require_same_shape(x, row, "add_rowvec");
    return add(x, row);
  }
  if (x.ndim() != 2 || x.dim(1) != row.dim(0))
    throw DimensionError("add_rowvec: shape mismatch " + shape_str(x.shape()) +
                         " vs " + shape_str(row.shape()));
  const int rows = x.dim(0), cols = x.dim(1);
  std::vector<double> v(x.numel());
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      v[static_cast<std::size_t>(i) * cols + j] =
          x.at(static_cast<std::size_t>(i) * cols + j) +
          row.at(static_cast<std::size_t>(j));
  return detail::make_result(
      x.shape(), std::move(v), {&x, &row}, "add_rowvec",
      [&](const Tensor& out) {
        return [x, row, rows, cols, out]() {
          if (!out.has_grad()) return;
          const auto& g = out.grad();
          if (x.requires_grad()) {
            double* dx = x.impl()->grad_buf();
            for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
          }
          if (row.requires_grad()) {
            double* dr = row.impl()->grad_buf();
            for (int i = 0; i < rows; ++i)
              for (int j = 0; j < cols; ++j)
                dr[j] += g[static_cast<std::size_t>(i) * cols + j];
          }
        };
      });
}

// ---------------------------------------------------------------------------
// softmax / layer norm / losses

// Softmax along `axis` of a 1-D or 2-D tensor, with max subtraction.
// Entries at kMaskScore come out exactly 0.
inline Tensor softmax(const Tensor& x, int axis) {
  if (x.ndim() == 1) {
    if (axis != 0)
      throw DimensionError("softmax: axis " + std::to_string(axis) +
                           " invalid for " + shape_str(x.shape()));
    Tensor x2 = reshape(x, {1, x.dim(0)});
    Tensor y2 = softmax(x2, 1);
    return reshape(y2, x.shape());
  }
  if (x.ndim() != 2 || (axis != 0 && axis != 1))
    throw DimensionError("softmax: axis " + std::to_string(axis) +
                         " invalid for " + shape_str(x.shape()));
  if (axis == 0) return transpose(softmax(transpose(x), 1));

  const int rows = x.dim(0), cols = x.dim(1);
  std::vector<double> v(x.numel());
  for (int i = 0; i < rows; ++i) {
    const double* xi = x.data().data() + static_cast<std::size_t>(i) * cols;
    double* vi = v.data() + static_cast<std::size_t>(i) * cols;
    double mx = xi[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, xi[j]);
    double z = 0.0;
    for (int j = 0; j < cols; ++j) {
      vi[j] = std::exp(xi[j] - mx);
      z += vi[j];
    }
    for (int j = 0; j < cols; ++j) vi[j] /= z;
  }
  return detail::make_result(
      x.shape(), std::move(v), {&x}, "softmax", [&](const Tensor& out) {
        return [x, rows, cols, out]() {
          if (!out.has_grad() || !x.requires_grad()) return;
          const auto& g = out.grad();
          double* dx = x.impl()->grad_buf();
          for (int i = 0; i < rows; ++i) {
            const double* yi =
                out.data().data() + static_cast<std::size_t>(i) * cols;
            const double* gi = g.data() + static_cast<std::size_t>(i) * cols;
            double dot = 0.0;
            for (int j = 0; j < cols; ++j) dot += gi[j] * yi[j];
            double* di = dx + static_cast<std::size_t>(i) * cols;
            for (int j = 0; j < cols; ++j) di[j] += (gi[j] - dot) * yi[j];
          }
        };
      });
}

// Normalizes the last dimension to mean 0 / variance 1 (population variance,
// stabilized by eps), then applies gain and bias. Accepts [L×d] or [d].
inline Tensor layer_norm(const Tensor& x, const Tensor& gain,
                         const Tensor& bias, double eps = 1e-5) {
  const bool vec = x.ndim() == 1;
  const int rows = vec ? 1 : x.dim(0);
  const int cols = vec ? x.dim(0) : x.dim(1);
  if (gain.ndim() != 1 || gain.dim(0) != cols || bias.ndim() != 1 ||
      bias.dim(0) != cols)
    throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) +
                         "/" + shape_str(bias.shape()) +
                         " do not match last dim of " + shape_str(x.shape()));
  std::vector<double> v(x.numel());
  std::vector<double> inv_sd(static_cast<std::size_t>(rows));
  std::vector<double> means(static_cast<std::size_t>(rows));
  for (int i = 0; i < rows; ++i) {
    const double* xi = x.data().data() + static_cast<std::size_t>(i) * cols;
    double m = 0.0;
    for (int j = 0; j < cols; ++j) m += xi[j];
    m /= cols;
    double var = 0.0;
    for (int j = 0; j < cols; ++j) var += (xi[j] - m) * (xi[j] - m);
    var /= cols;
    const double is = 1.0 / std::sqrt(var + eps);
    means[static_cast<std::size_t>(i)] = m;
    inv_sd[static_cast<std::size_t>(i)] = is;
    double* vi = v.data() + static_cast<std::size_t>(i) * cols;
    for (int j = 0; j < cols; ++j)
      vi[j] = (xi[j] - m) * is * gain.at(static_cast<std::size_t>(j)) +
              bias.at(static_cast<std::size_t>(j));
  }
  return detail::make_result(
      x.shape(), std::move(v), {&x, &gain, &bias}, "layer_norm",
      [&](const Tensor& out) {
        return [x, gain, bias, rows, cols, means = std::move(means),
                inv_sd = std::move(inv_sd), out]() {
          if (!out.has_grad()) return;
          const auto& g = out.grad();
          for (int i = 0; i < rows; ++i) {
            const double* xi =
                x.data().data() + static_cast<std::size_t>(i) * cols;
            const double* gi = g.data() + static_cast<std::size_t>(i) * cols;
            const double m = means[static_cast<std::size_t>(i)];
            const double is = inv_sd[static_cast<std::size_t>(i)];
            if (gain.requires_grad()) {
              double* dg = gain.impl()->grad_buf();
              for (int j = 0; j < cols; ++j) dg[j] += gi[j] * (xi[j] - m) * is;
            }
            if (bias.requires_grad()) {
              double* db = bias.impl()->grad_buf();
              for (int j = 0; j < cols; ++j) db[j] += gi[j];
            }
            if (x.requires_grad()) {
              // dL/dx = is/N · (N·h − Σh − y·Σ(h·y)), h = g⊙gain, y = (x−m)·is
              double sum_h = 0.0, sum_hy = 0.0;
              for (int j = 0; j < cols; ++j) {
                const double h = gi[j] * gain.at(static_cast<std::size_t>(j));
                const double y = (xi[j] - m) * is;
                sum_h += h;
                sum_hy += h * y;
              }
              double* dx = x.impl()->grad_buf() +
                           static_cast<std::size_t>(i) * cols;
              for (int j = 0; j < cols; ++j) {
                const double h = gi[j] * gain.at(static_cast<std::size_t>(j));
                const double y = (xi[j] - m) * is;
                dx[j] += is * (h - sum_h / cols - y * sum_hy / cols);
              }
            }
          }
        };
      });
}

// Gathers rows of `table` [V×d] by token id -> [L×d]; backward scatter-adds.
inline Tensor embedding_lookup(const Tensor& table,
                               const std::vector<int>& ids) {
  if (table.ndim() != 2)
    throw DimensionError("embedding_lookup: table must be 2-D, got " +
                         shape_str(table.shape()));
  const int v_size = table.dim(0), d = table.dim(1);
  for (int id : ids)
    if (id < 0 || id >= v_size)
      throw IndexError("embedding_lookup: id " + std::to_string(id) +
                       " outside vocab of size " + std::to_string(v_size));
  std::vector<double> v(ids.size() * static_cast<std::size_t>(d));
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(table.data().begin() +
                    static_cast<std::size_t>(ids[i]) * d,
                d, v.begin() + i * static_cast<std::size_t>(d));
  return detail::make_result(
      Shape{static_cast<int>(ids.size()), d}, std::move(v), {&table},
      "embedding_lookup", [&](const Tensor& out) {
        return [table, ids, d, out]() {
          if (!out.has_grad() || !table.requires_grad()) return;
          const auto& g = out.grad();
          double* dt = table.impl()->grad_buf();
          for (std::size_t i = 0; i < ids.size(); ++i)
            for (int j = 0; j < d; ++j)
              dt[static_cast<std::size_t>(ids[i]) * d + j] +=
                  g[i * static_cast<std::size_t>(d) + j];
        };
      });
}

struct CrossEntropyResult {
  Tensor nll;       // scalar: total negative log-likelihood in nats
  long token_count; // non-ignored positions
};

// Total NLL of `targets` under row-wise log-softmax of `logits` [L×V];
// positions whose target equals ignore_index contribute nothing.
inline CrossEntropyResult cross_entropy(const Tensor& logits,
                                        const std::vector<int>& targets,
                                        int ignore_index) {
  if (logits.ndim() != 2)
    throw DimensionError("cross_entropy: logits must be 2-D, got " +
                         shape_str(logits.shape()));
  const int rows = logits.dim(0), v_size = logits.dim(1);
  if (static_cast<int>(targets.size()) != rows)
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets vs logits " + shape_str(logits.shape()));
  double total = 0.0;
  long count = 0;
  for (int i = 0; i < rows; ++i) {
    const int t = targets[static_cast<std::size_t>(i)];
    if (t == ignore_index) continue;
    if (t < 0 || t >= v_size)
      throw IndexError("cross_entropy: target " + std::to_string(t) +
                       " outside [0, " + std::to_string(v_size) + ")");
    const double* li =
        logits.data().data() + static_cast<std::size_t>(i) * v_size;
    double mx = li[0];
    for (int j = 1; j < v_size; ++j) mx = std::max(mx, li[j]);
    double z = 0.0;
    for (int j = 0; j < v_size; ++j) z += std::exp(li[j] - mx);
    total += mx + std::log(z) - li[t];
    ++count;
  }
  Tensor nll = detail::make_result(
      Shape{1}, std::vector<double>{total}, {&logits}, "cross_entropy",
      [&](const Tensor& out) {
        return [logits, targets, ignore_index, rows, v_size, out]() {
          if (!out.has_grad() || !logits.requires_grad()) return;
          const double g = out.grad()[0];
          double* dl = logits.impl()->grad_buf();
          for (int i = 0; i < rows; ++i) {
            const int t = targets[static_cast<std::size_t>(i)];
            if (t == ignore_index) continue;
            const double* li =
                logits.data().data() + static_cast<std::size_t>(i) * v_size;
            double mx = li[0];
            for (int j = 1; j < v_size; ++j) mx = std::max(mx, li[j]);
            double z = 0.0;
            for (int j = 0; j < v_size; ++j) z += std::exp(li[j] - mx);
            double* di = dl + static_cast<std::size_t>(i) * v_size;
            for (int j = 0; j < v_size; ++j) {
              const double p = std::exp(li[j] - mx) / z;
              di[j] += g * (p - (j == t ? 1.0 : 0.0));
            }
          }
        };
      });
  return {nll, count};
}

// max(floor, s) for scalar s; ties pass the gradient through (subgradient
// from the s branch), so the hinge only blocks gradients strictly below.
inline Tensor hinge_at_least(const Tensor& s, double floor_value) {
  if (s.numel() != 1)
    throw ContractError("hinge_at_least: want scalar, got " +
                        shape_str(s.shape()));
  const double v = std::max(floor_value, s.at(0));
  return detail::make_result(
      Shape{1}, std::vector<double>{v}, {&s}, "hinge_at_least",
      [&](const Tensor& out) {
        return [s, floor_value, out]() {
          if (!out.has_grad() || !s.requires_grad()) return;
          if (s.at(0) >= floor_value) s.impl()->grad_buf()[0] += out.grad()[0];
        };
      });
}

// ---------------------------------------------------------------------------
// convenience

// x·W + b for x either [L×in] or [in]; W is [in×out], b is [out].
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.ndim() == 1) {
    Tensor y = matmul(reshape(x, {1, x.dim(0)}), w);
    y = add_rowvec(y, b);
    return reshape(y, {w.dim(1)});
  }
  return add_rowvec(matmul(x, w), b);
}

}  // namespace adavae
