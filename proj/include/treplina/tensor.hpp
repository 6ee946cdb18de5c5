#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "treplina/common.hpp"
#include "treplina/rng.hpp"

namespace treplina {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until backward (or accumulation) touches it
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void()> backward_fn;

  int64_t numel() const { return static_cast<int64_t>(value.size()); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};

/// Autograd on/off switch; forwards run without graph recording when disabled.
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
inline bool grad_enabled() { return grad_mode_flag(); }

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode_flag()) { grad_mode_flag() = false; }
  ~NoGradGuard() { grad_mode_flag() = prev; }
};

/// Value-semantics handle to a node in a define-by-run graph. The held value
/// is treated as immutable once built; grad accumulates across backward calls
/// until zero_grad. Optimizers mutate leaf values between graph builds.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}

  static Tensor from(Shape shape, std::vector<double> data) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
      throw ShapeError("tensor: shape " + shape_str(shape) + " does not match data length " +
                       std::to_string(data.size()));
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    return Tensor(n);
  }
  static Tensor zeros(Shape shape) {
    const int64_t n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, 0.0));
  }
  static Tensor full(Shape shape, double v) {
    const int64_t n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, v));
  }
  static Tensor scalar(double v) { return from({}, {v}); }
  static Tensor randn(Shape shape, Rng& rng, double stddev) {
    std::vector<double> d(shape_numel(shape));
    for (double& x : d) x = rng.normal(0.0, stddev);
    return from(std::move(shape), std::move(d));
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t dim(int64_t i) const { return node_->shape[i]; }
  int64_t ndim() const { return static_cast<int64_t>(node_->shape.size()); }
  int64_t numel() const { return node_->numel(); }

  const std::vector<double>& value() const { return node_->value; }
  std::vector<double>& mutable_value() { return node_->value; }
  double item() const {
    if (numel() != 1) throw ShapeError("item: tensor " + shape_str(shape()) + " is not a scalar");
    return node_->value[0];
  }
  double at(int64_t i) const { return node_->value[i]; }
  double at(int64_t r, int64_t c) const { return node_->value[r * node_->shape[1] + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    node_->requires_grad = b;
    return *this;
  }
  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<double>& grad() const { return node_->grad; }
  std::vector<double>& mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  /// New leaf sharing no graph history; never receives gradient.
  Tensor detach() const {
    auto n = std::make_shared<TensorNode>();
    n->shape = node_->shape;
    n->value = node_->value;
    return Tensor(n);
  }

  std::shared_ptr<TensorNode> node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

namespace detail {

inline Tensor make_result(Shape shape, std::vector<double> value,
                          std::vector<Tensor> inputs,
                          const std::function<std::function<void()>(TensorNode*)>& bind_backward) {
  Tensor out = Tensor::from(std::move(shape), std::move(value));
  if (!grad_enabled()) return out;
  bool needs = false;
  for (const Tensor& t : inputs) needs = needs || t.requires_grad();
  if (!needs) return out;
  auto node = out.node();
  node->requires_grad = true;
  node->parents.reserve(inputs.size());
  for (const Tensor& t : inputs) node->parents.push_back(t.node());
  node->backward_fn = bind_backward(node.get());
  return out;
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

inline void check_2d(const Tensor& a, const char* op) {
  if (a.ndim() != 2) throw ShapeError(std::string(op) + ": expected 2-d tensor, got " + shape_str(a.shape()));
}

}  // namespace detail

// ---- elementwise ----

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<double> v(a.numel());
  for (int64_t i = 0; i < a.numel(); ++i) v[i] = a.at(i) + b.at(i);
  auto an = a.node(), bn = b.node();
  return detail::make_result(a.shape(), std::move(v), {a, b}, [an, bn](TensorNode* out) {
    return [an, bn, out]() {
      if (an->requires_grad) {
        an->ensure_grad();
        for (size_t i = 0; i < out->grad.size(); ++i) an->grad[i] += out->grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (size_t i = 0; i < out->grad.size(); ++i) bn->grad[i] += out->grad[i];
      }
    };
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<double> v(a.numel());
  for (int64_t i = 0; i < a.numel(); ++i) v[i] = a.at(i) - b.at(i);
  auto an = a.node(), bn = b.node();
  return detail::make_result(a.shape(), std::move(v), {a, b}, [an, bn](TensorNode* out) {
    return [an, bn, out]() {
      if (an->requires_grad) {
        an->ensure_grad();
        for (size_t i = 0; i < out->grad.size(); ++i) an->grad[i] += out->grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (size_t i = 0; i < out->grad.size(); ++i) bn->grad[i] -= out->grad[i];
      }
    };
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<double> v(a.numel());
  for (int64_t i = 0; i < a.numel(); ++i) v[i] = a.at(i) * b.at(i);
  auto an = a.node(), bn = b.node();
  return detail::make_result(a.shape(), std::move(v), {a, b}, [an, bn](TensorNode* out) {
    return [an, bn, out]() {
      if (an->requires_grad) {
        an->ensure_grad();
        for (size_t i = 0; i < out->grad.size(); ++i) an->grad[i] += out->grad[i] * bn->value[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (size_t i = 0; i < out->grad.size(); ++i) bn->grad[i] += out->grad[i] * an->value[i];
      }
    };
  });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "div");
  std::vector<double> v(a.numel());
  for (int64_t i = 0; i < a.numel(); ++i) v[i] = a.at(i) / b.at(i);
  auto an = a.node(), bn = b.node();
  return detail::make_result(a.shape(), std::move(v), {a, b}, [an, bn](TensorNode* out) {
    return [an, bn, out]() {
      if (an->requires_grad) {
        an->ensure_grad();
        for (size_t i = 0; i < out->grad.size(); ++i) an->grad[i] += out->grad[i] / bn->value[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (size_t i = 0; i < out->grad.size(); ++i)
          bn->grad[i] -= out->grad[i] * an->value[i] / (bn->value[i] * bn->value[i]);
      }
    };
  });
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> v(a.numel());
  for (int64_t i = 0; i < a.numel(); ++i) v[i] = a.at(i) * c;
  auto an = a.node();
  return detail::make_result(a.shape(), std::move(v), {a}, [an, c](TensorNode* out) {
    return [an, c, out]() {
      an->ensure_grad();
      for (size_t i = 0; i < out->grad.size(); ++i) an->grad[i] += out->grad[i] * c;
    };
  });
}

inline Tensor sqrt(const Tensor& a) {
  std::vector<double> v(a.numel());
  for (int64_t i = 0; i < a.numel(); ++i) v[i] = std::sqrt(a.at(i));
  auto an = a.node();
  return detail::make_result(a.shape(), std::move(v), {a}, [an](TensorNode* out) {
    return [an, out]() {
      an->ensure_grad();
      for (size_t i = 0; i < out->grad.size(); ++i)
        an->grad[i] += out->grad[i] * 0.5 / out->value[i];
    };
  });
}

inline Tensor silu(const Tensor& a) {
  std::vector<double> v(a.numel());
  for (int64_t i = 0; i < a.numel(); ++i) {
    double x = a.at(i);
    v[i] = x / (1.0 + std::exp(-x));
  }
  auto an = a.node();
  return detail::make_result(a.shape(), std::move(v), {a}, [an](TensorNode* out) {
    return [an, out]() {
      an->ensure_grad();
      for (size_t i = 0; i < out->grad.size(); ++i) {
        double x = an->value[i];
        double s = 1.0 / (1.0 + std::exp(-x));
        an->grad[i] += out->grad[i] * s * (1.0 + x * (1.0 - s));
      }
    };
  });
}

// ---- reductions ----

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) s += a.at(i);
  auto an = a.node();
  return detail::make_result({}, {s}, {a}, [an](TensorNode* out) {
    return [an, out]() {
      an->ensure_grad();
      for (double& g : an->grad) g += out->grad[0];
    };
  });
}

inline Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("mean: empty tensor");
  double s = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) s += a.at(i);
  double inv = 1.0 / static_cast<double>(a.numel());
  auto an = a.node();
  return detail::make_result({}, {s * inv}, {a}, [an, inv](TensorNode* out) {
    return [an, inv, out]() {
      an->ensure_grad();
      for (double& g : an->grad) g += out->grad[0] * inv;
    };
  });
}

// ---- linear algebra ----

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::check_2d(a, "matmul");
  detail::check_2d(b, "matmul");
  const int64_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  std::vector<double> v(m * n, 0.0);
  const double* ap = a.value().data();
  const double* bp = b.value().data();
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t t = 0; t < k; ++t) {
      const double av = ap[i * k + t];
      if (av == 0.0) continue;
      const double* brow = bp + t * n;
      double* vrow = v.data() + i * n;
      for (int64_t j = 0; j < n; ++j) vrow[j] += av * brow[j];
    }
  }
  auto an = a.node(), bn = b.node();
  return detail::make_result({m, n}, std::move(v), {a, b}, [an, bn, m, k, n](TensorNode* out) {
    return [an, bn, m, k, n, out]() {
      const double* gp = out->grad.data();
      if (an->requires_grad) {
        an->ensure_grad();
        // dA += dC * B^T
        const double* bp = bn->value.data();
        for (int64_t i = 0; i < m; ++i)
          for (int64_t t = 0; t < k; ++t) {
            double s = 0.0;
            const double* grow = gp + i * n;
            const double* brow = bp + t * n;
            for (int64_t j = 0; j < n; ++j) s += grow[j] * brow[j];
            an->grad[i * k + t] += s;
          }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        // dB += A^T * dC
        const double* ap = an->value.data();
        for (int64_t i = 0; i < m; ++i) {
          const double* grow = gp + i * n;
          for (int64_t t = 0; t < k; ++t) {
            const double av = ap[i * k + t];
            if (av == 0.0) continue;
            double* brow = bn->grad.data() + t * n;
            for (int64_t j = 0; j < n; ++j) brow[j] += av * grow[j];
          }
        }
      }
    };
  });
}

inline Tensor transpose(const Tensor& a) {
  detail::check_2d(a, "transpose");
  const int64_t r = a.dim(0), c = a.dim(1);
  std::vector<double> v(r * c);
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) v[j * r + i] = a.at(i, j);
  auto an = a.node();
  return detail::make_result({c, r}, std::move(v), {a}, [an, r, c](TensorNode* out) {
    return [an, r, c, out]() {
      an->ensure_grad();
      for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) an->grad[i * c + j] += out->grad[j * r + i];
    };
  });
}

// ---- shape ops ----

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  auto an = a.node();
  return detail::make_result(std::move(shape), a.value(), {a}, [an](TensorNode* out) {
    return [an, out]() {
      an->ensure_grad();
      for (size_t i = 0; i < out->grad.size(); ++i) an->grad[i] += out->grad[i];
    };
  });
}

/// Gathers rows of a 2-d tensor; also serves as embedding lookup.
inline Tensor take_rows(const Tensor& a, const std::vector<int64_t>& rows) {
  detail::check_2d(a, "take_rows");
  const int64_t r = a.dim(0), c = a.dim(1);
  for (int64_t idx : rows)
    if (idx < 0 || idx >= r)
      throw ValueError("take_rows: index " + std::to_string(idx) + " out of range [0, " +
                       std::to_string(r) + ")");
  std::vector<double> v(rows.size() * c);
  for (size_t i = 0; i < rows.size(); ++i)
    std::copy_n(a.value().data() + rows[i] * c, c, v.data() + i * c);
  auto an = a.node();
  return detail::make_result({static_cast<int64_t>(rows.size()), c}, std::move(v), {a},
                             [an, rows, c](TensorNode* out) {
                               return [an, rows, c, out]() {
                                 an->ensure_grad();
                                 for (size_t i = 0; i < rows.size(); ++i) {
                                   double* dst = an->grad.data() + rows[i] * c;
                                   const double* src = out->grad.data() + i * c;
                                   for (int64_t j = 0; j < c; ++j) dst[j] += src[j];
                                 }
                               };
                             });
}

inline Tensor slice_rows(const Tensor& a, int64_t r0, int64_t r1) {
  detail::check_2d(a, "slice_rows");
  const int64_t r = a.dim(0), c = a.dim(1);
  if (r0 < 0 || r1 > r || r0 > r1) throw ShapeError("slice_rows: bad range on " + shape_str(a.shape()));
  std::vector<double> v(a.value().begin() + r0 * c, a.value().begin() + r1 * c);
  auto an = a.node();
  return detail::make_result({r1 - r0, c}, std::move(v), {a}, [an, r0, c](TensorNode* out) {
    return [an, r0, c, out]() {
      an->ensure_grad();
      for (size_t i = 0; i < out->grad.size(); ++i) an->grad[r0 * c + i] += out->grad[i];
    };
  });
}

inline Tensor slice_cols(const Tensor& a, int64_t c0, int64_t c1) {
  detail::check_2d(a, "slice_cols");
  const int64_t r = a.dim(0), c = a.dim(1);
  if (c0 < 0 || c1 > c || c0 > c1) throw ShapeError("slice_cols: bad range on " + shape_str(a.shape()));
  const int64_t w = c1 - c0;
  std::vector<double> v(r * w);
  for (int64_t i = 0; i < r; ++i)
    std::copy_n(a.value().data() + i * c + c0, w, v.data() + i * w);
  auto an = a.node();
  return detail::make_result({r, w}, std::move(v), {a}, [an, r, c, c0, w](TensorNode* out) {
    return [an, r, c, c0, w, out]() {
      an->ensure_grad();
      for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < w; ++j) an->grad[i * c + c0 + j] += out->grad[i * w + j];
    };
  });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const int64_t r = parts[0].dim(0);
  int64_t total = 0;
  for (const Tensor& p : parts) {
    detail::check_2d(p, "concat_cols");
    if (p.dim(0) != r) throw ShapeError("concat_cols: row counts differ");
    total += p.dim(1);
  }
  std::vector<double> v(r * total);
  int64_t off = 0;
  for (const Tensor& p : parts) {
    const int64_t w = p.dim(1);
    for (int64_t i = 0; i < r; ++i)
      std::copy_n(p.value().data() + i * w, w, v.data() + i * total + off);
    off += w;
  }
  std::vector<int64_t> widths;
  for (const Tensor& p : parts) widths.push_back(p.dim(1));
  std::vector<std::shared_ptr<TensorNode>> nodes;
  for (const Tensor& p : parts) nodes.push_back(p.node());
  return detail::make_result({r, total}, std::move(v), parts, [nodes, widths, r, total](TensorNode* out) {
    return [nodes, widths, r, total, out]() {
      int64_t off = 0;
      for (size_t pi = 0; pi < nodes.size(); ++pi) {
        const int64_t w = widths[pi];
        if (nodes[pi]->requires_grad) {
          nodes[pi]->ensure_grad();
          for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < w; ++j)
              nodes[pi]->grad[i * w + j] += out->grad[i * total + off + j];
        }
        off += w;
      }
    };
  });
}

/// Stacks equally-shaped tensors along a new leading axis.
inline Tensor stack0(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("stack0: no inputs");
  const Shape inner = parts[0].shape();
  const int64_t step = parts[0].numel();
  std::vector<double> v;
  v.reserve(step * parts.size());
  for (const Tensor& p : parts) {
    if (p.shape() != inner) throw ShapeError("stack0: shapes differ");
    v.insert(v.end(), p.value().begin(), p.value().end());
  }
  Shape out_shape;
  out_shape.push_back(static_cast<int64_t>(parts.size()));
  out_shape.insert(out_shape.end(), inner.begin(), inner.end());
  std::vector<std::shared_ptr<TensorNode>> nodes;
  for (const Tensor& p : parts) nodes.push_back(p.node());
  return detail::make_result(std::move(out_shape), std::move(v), parts, [nodes, step](TensorNode* out) {
    return [nodes, step, out]() {
      for (size_t pi = 0; pi < nodes.size(); ++pi) {
        if (!nodes[pi]->requires_grad) continue;
        nodes[pi]->ensure_grad();
        const double* src = out->grad.data() + pi * step;
        for (int64_t j = 0; j < step; ++j) nodes[pi]->grad[j] += src[j];
      }
    };
  });
}

// ---- fused neural ops ----

/// Row-wise softmax with max-shift; rejects non-finite input.
inline Tensor softmax_rows(const Tensor& a) {
  detail::check_2d(a, "softmax_rows");
  const int64_t r = a.dim(0), c = a.dim(1);
  if (c == 0) throw ShapeError("softmax_rows: zero-width rows");
  std::vector<double> v(r * c);
  for (int64_t i = 0; i < r; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t j = 0; j < c; ++j) {
      double x = a.at(i, j);
      if (std::isnan(x) || x == std::numeric_limits<double>::infinity())
        throw ValueError("softmax_rows: non-finite input at row " + std::to_string(i));
      mx = std::max(mx, x);
    }
    double z = 0.0;
    for (int64_t j = 0; j < c; ++j) {
      double e = std::exp(a.at(i, j) - mx);
      v[i * c + j] = e;
      z += e;
    }
    for (int64_t j = 0; j < c; ++j) v[i * c + j] /= z;
  }
  auto an = a.node();
  return detail::make_result({r, c}, std::move(v), {a}, [an, r, c](TensorNode* out) {
    return [an, r, c, out]() {
      an->ensure_grad();
      for (int64_t i = 0; i < r; ++i) {
        const double* y = out->value.data() + i * c;
        const double* dy = out->grad.data() + i * c;
        double dot = 0.0;
        for (int64_t j = 0; j < c; ++j) dot += dy[j] * y[j];
        double* dx = an->grad.data() + i * c;
        for (int64_t j = 0; j < c; ++j) dx[j] += y[j] * (dy[j] - dot);
      }
    };
  });
}

/// Root-mean-square row normalization with learned per-column gain.
inline Tensor rms_norm(const Tensor& x, const Tensor& gamma) {
  detail::check_2d(x, "rms_norm");
  const int64_t r = x.dim(0), c = x.dim(1);
  if (c < 1) throw ShapeError("rms_norm: zero-length rows");
  if (gamma.ndim() != 1 || gamma.dim(0) != c)
    throw ShapeError("rms_norm: gamma " + shape_str(gamma.shape()) + " does not match width " +
                     std::to_string(c));
  constexpr double kEps = 1e-6;
  std::vector<double> v(r * c);
  std::vector<double> inv_rms(r);
  for (int64_t i = 0; i < r; ++i) {
    double ss = 0.0;
    for (int64_t j = 0; j < c; ++j) ss += x.at(i, j) * x.at(i, j);
    double inv = 1.0 / std::sqrt(ss / static_cast<double>(c) + kEps);
    inv_rms[i] = inv;
    for (int64_t j = 0; j < c; ++j) v[i * c + j] = x.at(i, j) * inv * gamma.at(j);
  }
  auto xn = x.node(), gn = gamma.node();
  return detail::make_result({r, c}, std::move(v), {x, gamma},
                             [xn, gn, r, c, inv_rms](TensorNode* out) {
                               return [xn, gn, r, c, inv_rms, out]() {
                                 for (int64_t i = 0; i < r; ++i) {
                                   const double* xv = xn->value.data() + i * c;
                                   const double* dy = out->grad.data() + i * c;
                                   const double inv = inv_rms[i];
                                   if (xn->requires_grad) {
                                     xn->ensure_grad();
                                     double dot = 0.0;  // sum_j dy_j * g_j * x_j
                                     for (int64_t j = 0; j < c; ++j) dot += dy[j] * gn->value[j] * xv[j];
                                     const double inv3_c = inv * inv * inv / static_cast<double>(c);
                                     double* dx = xn->grad.data() + i * c;
                                     for (int64_t j = 0; j < c; ++j)
                                       dx[j] += dy[j] * gn->value[j] * inv - xv[j] * inv3_c * dot;
                                   }
                                   if (gn->requires_grad) {
                                     gn->ensure_grad();
                                     for (int64_t j = 0; j < c; ++j) gn->grad[j] += dy[j] * xv[j] * inv;
                                   }
                                 }
                               };
                             });
}

// ---- backward ----

/// Reverse-mode sweep from a scalar loss; gradients accumulate additively
/// into every reachable requires_grad tensor until explicitly zeroed.
inline void backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;  // nothing reachable

  // Iterative postorder DFS over the recorded graph.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  std::vector<std::pair<TensorNode*, size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode* p = node->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad();
  loss.node()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward_fn) (*it)->backward_fn();
}

}  // namespace treplina
