#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "crossview/core/tensor.hpp"

namespace crossview {

struct Node;
using Var = std::shared_ptr<Node>;

/// One value in the computation tape. Backward functions read this node's
/// grad and accumulate into the parents' grads.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& ensure_grad() {
    if (grad.empty()) grad = Tensor::zeros(value.shape());
    return grad;
  }
};

class GradMode {
 public:
  static bool& enabled() {
    thread_local bool on = true;
    return on;
  }
};

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(GradMode::enabled()) { GradMode::enabled() = false; }
  ~NoGradGuard() { GradMode::enabled() = prev; }
};

inline Var make_leaf(Tensor v, bool requires_grad = false) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->requires_grad = requires_grad;
  return n;
}

inline Var constant(Tensor v) { return make_leaf(std::move(v), false); }

inline Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> bwd) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (GradMode::enabled()) {
    bool any = false;
    for (const auto& p : parents) any = any || p->requires_grad;
    if (any) {
      n->requires_grad = true;
      n->parents = std::move(parents);
      n->backward_fn = std::move(bwd);
    }
  }
  return n;
}

/// Reverse-mode sweep from a scalar root. Grads accumulate (callers zero
/// parameter grads between optimizer steps).
inline void backward(const Var& root) {
  require(root->value.size() == 1, "backward: root must be scalar");
  if (!root->requires_grad) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn) {
      n->ensure_grad();
      n->backward_fn(*n);
    }
  }
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

inline Var add(const Var& a, const Var& b) {
  require(a->value.same_shape(b->value), "add: shape mismatch");
  Tensor out = a->value.clone();
  for (int64_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
  return make_op(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) {
      Tensor& ga = a->ensure_grad();
      for (int64_t i = 0; i < ga.size(); ++i) ga[i] += n.grad[i];
    }
    if (b->requires_grad) {
      Tensor& gb = b->ensure_grad();
      for (int64_t i = 0; i < gb.size(); ++i) gb[i] += n.grad[i];
    }
  });
}

inline Var sub(const Var& a, const Var& b) {
  require(a->value.same_shape(b->value), "sub: shape mismatch");
  Tensor out = a->value.clone();
  for (int64_t i = 0; i < out.size(); ++i) out[i] -= b->value[i];
  return make_op(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) {
      Tensor& ga = a->ensure_grad();
      for (int64_t i = 0; i < ga.size(); ++i) ga[i] += n.grad[i];
    }
    if (b->requires_grad) {
      Tensor& gb = b->ensure_grad();
      for (int64_t i = 0; i < gb.size(); ++i) gb[i] -= n.grad[i];
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  require(a->value.same_shape(b->value), "mul: shape mismatch");
  Tensor out = a->value.clone();
  for (int64_t i = 0; i < out.size(); ++i) out[i] *= b->value[i];
  return make_op(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) {
      Tensor& ga = a->ensure_grad();
      for (int64_t i = 0; i < ga.size(); ++i) ga[i] += n.grad[i] * b->value[i];
    }
    if (b->requires_grad) {
      Tensor& gb = b->ensure_grad();
      for (int64_t i = 0; i < gb.size(); ++i) gb[i] += n.grad[i] * a->value[i];
    }
  });
}

inline Var div(const Var& a, const Var& b) {
  require(a->value.same_shape(b->value), "div: shape mismatch");
  Tensor out = a->value.clone();
  for (int64_t i = 0; i < out.size(); ++i) out[i] /= b->value[i];
  return make_op(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) {
      Tensor& ga = a->ensure_grad();
      for (int64_t i = 0; i < ga.size(); ++i) ga[i] += n.grad[i] / b->value[i];
    }
    if (b->requires_grad) {
      Tensor& gb = b->ensure_grad();
      for (int64_t i = 0; i < gb.size(); ++i) {
        double bv = b->value[i];
        gb[i] -= n.grad[i] * a->value[i] / (bv * bv);
      }
    }
  });
}

inline Var scale(const Var& a, double s) {
  Tensor out = a->value.clone();
  for (int64_t i = 0; i < out.size(); ++i) out[i] *= s;
  return make_op(std::move(out), {a}, [a, s](Node& n) {
    Tensor& ga = a->ensure_grad();
    for (int64_t i = 0; i < ga.size(); ++i) ga[i] += s * n.grad[i];
  });
}

inline Var add_scalar(const Var& a, double c) {
  Tensor out = a->value.clone();
  for (int64_t i = 0; i < out.size(); ++i) out[i] += c;
  return make_op(std::move(out), {a}, [a](Node& n) {
    Tensor& ga = a->ensure_grad();
    for (int64_t i = 0; i < ga.size(); ++i) ga[i] += n.grad[i];
  });
}

inline Var neg(const Var& a) { return scale(a, -1.0); }

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

inline Var tanh_(const Var& a) {
  Tensor out = a->value.clone();
  for (int64_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
  return make_op(std::move(out), {a}, [a](Node& n) {
    Tensor& ga = a->ensure_grad();
    for (int64_t i = 0; i < ga.size(); ++i) {
      double y = n.value[i];
      ga[i] += n.grad[i] * (1.0 - y * y);
    }
  });
}

inline Var relu(const Var& a) {
  Tensor out = a->value.clone();
  for (int64_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
  return make_op(std::move(out), {a}, [a](Node& n) {
    Tensor& ga = a->ensure_grad();
    for (int64_t i = 0; i < ga.size(); ++i)
      if (a->value[i] > 0.0) ga[i] += n.grad[i];
  });
}

inline Var gelu(const Var& a) {
  static const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  static const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * M_PI);
  Tensor out = a->value.clone();
  for (int64_t i = 0; i < out.size(); ++i) {
    double x = out[i];
    out[i] = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
  }
  return make_op(std::move(out), {a}, [a](Node& n) {
    Tensor& ga = a->ensure_grad();
    for (int64_t i = 0; i < ga.size(); ++i) {
      double x = a->value[i];
      double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
      double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
      ga[i] += n.grad[i] * (cdf + x * pdf);
    }
  });
}

inline Var log_(const Var& a) {
  Tensor out = a->value.clone();
  for (int64_t i = 0; i < out.size(); ++i) out[i] = std::log(out[i]);
  return make_op(std::move(out), {a}, [a](Node& n) {
    Tensor& ga = a->ensure_grad();
    for (int64_t i = 0; i < ga.size(); ++i) ga[i] += n.grad[i] / a->value[i];
  });
}

inline Var clamp(const Var& a, double lo, double hi) {
  Tensor out = a->value.clone();
  for (int64_t i = 0; i < out.size(); ++i) out[i] = std::min(hi, std::max(lo, out[i]));
  return make_op(std::move(out), {a, }, [a, lo, hi](Node& n) {
    Tensor& ga = a->ensure_grad();
    for (int64_t i = 0; i < ga.size(); ++i) {
      double x = a->value[i];
      if (x > lo && x < hi) ga[i] += n.grad[i];
    }
  });
}

// ---------------------------------------------------------------------------
// matmul / batched matmul
// ---------------------------------------------------------------------------

namespace detail {

// C[m,n] += A[m,k] @ B[k,n]
inline void mm_acc(const double* A, const double* B, double* C, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = A + static_cast<int64_t>(i) * k;
    double* crow = C + static_cast<int64_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = B + static_cast<int64_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] += A[m,k] @ B[n,k]^T
inline void mm_bt_acc(const double* A, const double* B, double* C, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = A + static_cast<int64_t>(i) * k;
    double* crow = C + static_cast<int64_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* brow = B + static_cast<int64_t>(j) * k;
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// C[k,n] += A[m,k]^T @ B[m,n]
inline void mm_at_acc(const double* A, const double* B, double* C, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = A + static_cast<int64_t>(i) * k;
    const double* brow = B + static_cast<int64_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      double av = arow[p];
      if (av == 0.0) continue;
      double* crow = C + static_cast<int64_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

inline Var matmul(const Var& a, const Var& b) {
  require(a->value.rank() == 2 && b->value.rank() == 2, "matmul: rank-2 operands required");
  int m = a->value.dim(0), k = a->value.dim(1), k2 = b->value.dim(0), n = b->value.dim(1);
  if (k != k2)
    fail("matmul: inner dims differ ", a->value.shape_str(), " @ ", b->value.shape_str());
  Tensor out({m, n});
  detail::mm_acc(a->value.data(), b->value.data(), out.data(), m, k, n);
  return make_op(std::move(out), {a, b}, [a, b, m, k, n](Node& nd) {
    if (a->requires_grad)
      detail::mm_bt_acc(nd.grad.data(), b->value.data(), a->ensure_grad().data(), m, n, k);
    if (b->requires_grad)
      detail::mm_at_acc(a->value.data(), nd.grad.data(), b->ensure_grad().data(), m, k, n);
  });
}

inline Var bmm(const Var& a, const Var& b) {
  require(a->value.rank() == 3 && b->value.rank() == 3, "bmm: rank-3 operands required");
  int B = a->value.dim(0), m = a->value.dim(1), k = a->value.dim(2), n = b->value.dim(2);
  require(b->value.dim(0) == B && b->value.dim(1) == k, "bmm: shape mismatch");
  Tensor out({B, m, n});
  for (int i = 0; i < B; ++i)
    detail::mm_acc(a->value.data() + static_cast<int64_t>(i) * m * k,
                   b->value.data() + static_cast<int64_t>(i) * k * n,
                   out.data() + static_cast<int64_t>(i) * m * n, m, k, n);
  return make_op(std::move(out), {a, b}, [a, b, B, m, k, n](Node& nd) {
    for (int i = 0; i < B; ++i) {
      const double* g = nd.grad.data() + static_cast<int64_t>(i) * m * n;
      if (a->requires_grad)
        detail::mm_bt_acc(g, b->value.data() + static_cast<int64_t>(i) * k * n,
                          a->ensure_grad().data() + static_cast<int64_t>(i) * m * k, m, n, k);
      if (b->requires_grad)
        detail::mm_at_acc(a->value.data() + static_cast<int64_t>(i) * m * k, g,
                          b->ensure_grad().data() + static_cast<int64_t>(i) * k * n, m, k, n);
    }
  });
}

inline Var transpose_last2(const Var& a) {
  require(a->value.rank() >= 2, "transpose_last2: rank >= 2 required");
  std::vector<int> shp = a->value.shape();
  int r = a->value.rank();
  int m = shp[r - 2], n = shp[r - 1];
  std::swap(shp[r - 2], shp[r - 1]);
  int64_t batch = a->value.size() / (static_cast<int64_t>(m) * n);
  Tensor out(shp);
  for (int64_t bidx = 0; bidx < batch; ++bidx) {
    const double* src = a->value.data() + bidx * m * n;
    double* dst = out.data() + bidx * m * n;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) dst[static_cast<int64_t>(j) * m + i] = src[static_cast<int64_t>(i) * n + j];
  }
  return make_op(std::move(out), {a}, [a, batch, m, n](Node& nd) {
    Tensor& ga = a->ensure_grad();
    for (int64_t bidx = 0; bidx < batch; ++bidx) {
      const double* g = nd.grad.data() + bidx * m * n;
      double* dst = ga.data() + bidx * m * n;
      for (int j = 0; j < n; ++j)
        for (int i = 0; i < m; ++i) dst[static_cast<int64_t>(i) * n + j] += g[static_cast<int64_t>(j) * m + i];
    }
  });
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

/// Softmax over the last dimension. With a mask (size = last dim), masked
/// positions get probability exactly zero and take no part in normalization.
inline Var softmax_lastdim(const Var& a, const std::vector<uint8_t>* mask = nullptr) {
  int r = a->value.rank();
  require(r >= 1, "softmax: rank >= 1 required");
  int n = a->value.dim(r - 1);
  int64_t rows = a->value.size() / n;
  if (mask) require(static_cast<int>(mask->size()) == n, "softmax: mask length mismatch");
  if (mask) {
    bool any = false;
    for (uint8_t m : *mask) any = any || m;
    require(any, "softmax: all positions masked");
  }
  Tensor out(a->value.shape());
  for (int64_t row = 0; row < rows; ++row) {
    const double* x = a->value.data() + row * n;
    double* y = out.data() + row * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j)
      if (!mask || (*mask)[j]) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (int j = 0; j < n; ++j) {
      if (!mask || (*mask)[j]) {
        y[j] = std::exp(x[j] - mx);
        z += y[j];
      } else {
        y[j] = 0.0;
      }
    }
    for (int j = 0; j < n; ++j) y[j] /= z;
  }
  return make_op(std::move(out), {a}, [a, rows, n](Node& nd) {
    Tensor& ga = a->ensure_grad();
    for (int64_t row = 0; row < rows; ++row) {
      const double* y = nd.value.data() + row * n;
      const double* g = nd.grad.data() + row * n;
      double* dst = ga.data() + row * n;
      double dot = 0.0;
      for (int j = 0; j < n; ++j) dot += y[j] * g[j];
      for (int j = 0; j < n; ++j) dst[j] += y[j] * (g[j] - dot);
    }
  });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

inline Var sum_all(const Var& a) {
  double s = 0.0;
  for (int64_t i = 0; i < a->value.size(); ++i) s += a->value[i];
  return make_op(Tensor::scalar(s), {a}, [a](Node& nd) {
    Tensor& ga = a->ensure_grad();
    double g = nd.grad[0];
    for (int64_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

inline Var mean_all(const Var& a) {
  int64_t cnt = a->value.size();
  double s = 0.0;
  for (int64_t i = 0; i < cnt; ++i) s += a->value[i];
  return make_op(Tensor::scalar(s / cnt), {a}, [a, cnt](Node& nd) {
    Tensor& ga = a->ensure_grad();
    double g = nd.grad[0] / cnt;
    for (int64_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

/// Scalar projection sum(a * w) with constant weights; used by gradient checks.
inline Var dot_const(const Var& a, const Tensor& w) {
  require(a->value.size() == w.size(), "dot_const: size mismatch");
  double s = 0.0;
  for (int64_t i = 0; i < w.size(); ++i) s += a->value[i] * w[i];
  return make_op(Tensor::scalar(s), {a}, [a, w](Node& nd) {
    Tensor& ga = a->ensure_grad();
    double g = nd.grad[0];
    for (int64_t i = 0; i < ga.size(); ++i) ga[i] += g * w[i];
  });
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

inline Var reshape(const Var& a, std::vector<int> shape) {
  Tensor out = a->value.reshaped(std::move(shape));
  return make_op(std::move(out), {a}, [a](Node& nd) {
    Tensor& ga = a->ensure_grad();
    for (int64_t i = 0; i < ga.size(); ++i) ga[i] += nd.grad[i];
  });
}

/// x[.., C], bias[C] broadcast over leading dims.
inline Var add_bias(const Var& x, const Var& b) {
  int c = b->value.dim(0);
  require(b->value.rank() == 1, "add_bias: bias must be rank 1");
  require(x->value.dim(x->value.rank() - 1) == c, "add_bias: channel mismatch");
  int64_t rows = x->value.size() / c;
  Tensor out = x->value.clone();
  for (int64_t r = 0; r < rows; ++r) {
    double* row = out.data() + r * c;
    for (int j = 0; j < c; ++j) row[j] += b->value[j];
  }
  return make_op(std::move(out), {x, b}, [x, b, rows, c](Node& nd) {
    if (x->requires_grad) {
      Tensor& gx = x->ensure_grad();
      for (int64_t i = 0; i < gx.size(); ++i) gx[i] += nd.grad[i];
    }
    if (b->requires_grad) {
      Tensor& gb = b->ensure_grad();
      for (int64_t r = 0; r < rows; ++r) {
        const double* g = nd.grad.data() + r * c;
        for (int j = 0; j < c; ++j) gb[j] += g[j];
      }
    }
  });
}

/// Multiplies each leading row of x[R, C] by a constant factor.
inline Var row_scale(const Var& x, const std::vector<double>& factors) {
  require(x->value.rank() == 2, "row_scale: rank-2 input required");
  int rows = x->value.dim(0), c = x->value.dim(1);
  require(static_cast<int>(factors.size()) == rows, "row_scale: factor count mismatch");
  Tensor out = x->value.clone();
  for (int r = 0; r < rows; ++r) {
    double* row = out.data() + static_cast<int64_t>(r) * c;
    for (int j = 0; j < c; ++j) row[j] *= factors[r];
  }
  return make_op(std::move(out), {x}, [x, factors, rows, c](Node& nd) {
    Tensor& gx = x->ensure_grad();
    for (int r = 0; r < rows; ++r) {
      const double* g = nd.grad.data() + static_cast<int64_t>(r) * c;
      double* dst = gx.data() + static_cast<int64_t>(r) * c;
      for (int j = 0; j < c; ++j) dst[j] += g[j] * factors[r];
    }
  });
}

inline Var concat_lastdim(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat: empty input");
  int r = parts[0]->value.rank();
  std::vector<int> shp = parts[0]->value.shape();
  int total_c = 0;
  std::vector<int> widths;
  for (const auto& p : parts) {
    require(p->value.rank() == r, "concat: rank mismatch");
    for (int i = 0; i + 1 < r; ++i) require(p->value.dim(i) == shp[i], "concat: leading dims differ");
    widths.push_back(p->value.dim(r - 1));
    total_c += widths.back();
  }
  shp[r - 1] = total_c;
  int64_t rows = Tensor::count(shp) / total_c;
  Tensor out(shp);
  for (int64_t row = 0; row < rows; ++row) {
    double* dst = out.data() + row * total_c;
    for (size_t pi = 0; pi < parts.size(); ++pi) {
      const double* src = parts[pi]->value.data() + row * widths[pi];
      std::copy(src, src + widths[pi], dst);
      dst += widths[pi];
    }
  }
  return make_op(std::move(out), parts, [parts, widths, rows, total_c](Node& nd) {
    for (int64_t row = 0; row < rows; ++row) {
      const double* g = nd.grad.data() + row * total_c;
      for (size_t pi = 0; pi < parts.size(); ++pi) {
        if (parts[pi]->requires_grad) {
          double* dst = parts[pi]->ensure_grad().data() + row * widths[pi];
          for (int j = 0; j < widths[pi]; ++j) dst[j] += g[j];
        }
        g += widths[pi];
      }
    }
  });
}

inline Var concat_lastdim(const Var& a, const Var& b) { return concat_lastdim(std::vector<Var>{a, b}); }

inline Var slice_lastdim(const Var& x, int from, int to) {
  int r = x->value.rank();
  int c = x->value.dim(r - 1);
  require(0 <= from && from < to && to <= c, "slice_lastdim: bad range");
  std::vector<int> shp = x->value.shape();
  shp[r - 1] = to - from;
  int64_t rows = x->value.size() / c;
  int w = to - from;
  Tensor out(shp);
  for (int64_t row = 0; row < rows; ++row)
    std::copy(x->value.data() + row * c + from, x->value.data() + row * c + to, out.data() + row * w);
  return make_op(std::move(out), {x}, [x, rows, c, from, w](Node& nd) {
    Tensor& gx = x->ensure_grad();
    for (int64_t row = 0; row < rows; ++row) {
      const double* g = nd.grad.data() + row * w;
      double* dst = gx.data() + row * c + from;
      for (int j = 0; j < w; ++j) dst[j] += g[j];
    }
  });
}

/// Stacks equally-shaped tensors along a new leading axis.
inline Var stack0(const std::vector<Var>& parts) {
  require(!parts.empty(), "stack0: empty input");
  for (const auto& p : parts)
    require(p->value.same_shape(parts[0]->value), "stack0: shape mismatch");
  std::vector<int> shp = parts[0]->value.shape();
  int64_t per = parts[0]->value.size();
  shp.insert(shp.begin(), static_cast<int>(parts.size()));
  Tensor out(shp);
  for (size_t i = 0; i < parts.size(); ++i)
    std::copy(parts[i]->value.data(), parts[i]->value.data() + per, out.data() + per * i);
  return make_op(std::move(out), parts, [parts, per](Node& nd) {
    for (size_t i = 0; i < parts.size(); ++i) {
      if (!parts[i]->requires_grad) continue;
      Tensor& gp = parts[i]->ensure_grad();
      const double* g = nd.grad.data() + per * i;
      for (int64_t j = 0; j < per; ++j) gp[j] += g[j];
    }
  });
}

inline Var slice0(const Var& x, int index) {
  require(x->value.rank() >= 2, "slice0: rank >= 2 required");
  int b = x->value.dim(0);
  require(0 <= index && index < b, "slice0: index out of range");
  std::vector<int> shp(x->value.shape().begin() + 1, x->value.shape().end());
  int64_t per = x->value.size() / b;
  Tensor out(shp);
  std::copy(x->value.data() + per * index, x->value.data() + per * (index + 1), out.data());
  return make_op(std::move(out), {x}, [x, per, index](Node& nd) {
    Tensor& gx = x->ensure_grad();
    double* dst = gx.data() + per * index;
    for (int64_t j = 0; j < per; ++j) dst[j] += nd.grad[j];
  });
}

// ---------------------------------------------------------------------------
// gathers
// ---------------------------------------------------------------------------

/// out[i] = x.flat[map[i]], with map[i] == -1 producing zero. The workhorse
/// behind window partition/merge, grid split/assemble, patchify, padding,
/// im2col and spatial transposes; backward is scatter-add along the map.
inline Var element_gather(const Var& x, const std::shared_ptr<std::vector<int32_t>>& map,
                          std::vector<int> out_shape) {
  require(Tensor::count(out_shape) == static_cast<int64_t>(map->size()),
          "element_gather: map size does not match output shape");
  Tensor out(std::move(out_shape));
  const double* src = x->value.data();
  const int32_t* m = map->data();
  for (int64_t i = 0; i < out.size(); ++i) out[i] = m[i] >= 0 ? src[m[i]] : 0.0;
  return make_op(std::move(out), {x}, [x, map](Node& nd) {
    Tensor& gx = x->ensure_grad();
    const int32_t* m = map->data();
    for (int64_t i = 0; i < nd.grad.size(); ++i)
      if (m[i] >= 0) gx[m[i]] += nd.grad[i];
  });
}

/// Sparse weighted spatial map: out pixel o = sum_k w_k * in[src_k], channels
/// broadcast. Built once per geometry (bilinear resize and friends).
struct PixelMap {
  int in_pixels = 0;
  int out_pixels = 0;
  std::vector<int32_t> offsets;  // out_pixels + 1
  std::vector<int32_t> src;
  std::vector<double> w;
};

/// x viewed as [P_in, C] (optionally with leading batch dims folded by the
/// caller); returns [P_out, C].
inline Var pixel_map_apply(const Var& x, const std::shared_ptr<PixelMap>& pm) {
  require(x->value.rank() == 2, "pixel_map_apply: expected [P,C] input");
  require(x->value.dim(0) == pm->in_pixels, "pixel_map_apply: pixel count mismatch");
  int c = x->value.dim(1);
  Tensor out({pm->out_pixels, c});
  const double* src = x->value.data();
  for (int o = 0; o < pm->out_pixels; ++o) {
    double* dst = out.data() + static_cast<int64_t>(o) * c;
    for (int32_t k = pm->offsets[o]; k < pm->offsets[o + 1]; ++k) {
      const double* row = src + static_cast<int64_t>(pm->src[k]) * c;
      double wk = pm->w[k];
      for (int j = 0; j < c; ++j) dst[j] += wk * row[j];
    }
  }
  return make_op(std::move(out), {x}, [x, pm, c](Node& nd) {
    Tensor& gx = x->ensure_grad();
    for (int o = 0; o < pm->out_pixels; ++o) {
      const double* g = nd.grad.data() + static_cast<int64_t>(o) * c;
      for (int32_t k = pm->offsets[o]; k < pm->offsets[o + 1]; ++k) {
        double* dst = gx.data() + static_cast<int64_t>(pm->src[k]) * c;
        double wk = pm->w[k];
        for (int j = 0; j < c; ++j) dst[j] += wk * g[j];
      }
    }
  });
}

/// Per-image gather applied across a leading batch axis: x is [B, ...] with
/// `in_per` elements per image, the map addresses one image, and the output
/// is [B, out_tail...].
inline Var element_gather_batched(const Var& x, const std::shared_ptr<std::vector<int32_t>>& map,
                                  int64_t in_per, std::vector<int> out_tail) {
  int b = x->value.dim(0);
  require(x->value.size() == in_per * b, "element_gather_batched: per-image size mismatch");
  int64_t out_per = static_cast<int64_t>(map->size());
  require(Tensor::count(out_tail) == out_per, "element_gather_batched: map size mismatch");
  std::vector<int> shp = {b};
  shp.insert(shp.end(), out_tail.begin(), out_tail.end());
  Tensor out(shp);
  const int32_t* m = map->data();
  for (int bi = 0; bi < b; ++bi) {
    const double* src = x->value.data() + in_per * bi;
    double* dst = out.data() + out_per * bi;
    for (int64_t i = 0; i < out_per; ++i) dst[i] = m[i] >= 0 ? src[m[i]] : 0.0;
  }
  return make_op(std::move(out), {x}, [x, map, in_per, out_per, b](Node& nd) {
    Tensor& gx = x->ensure_grad();
    const int32_t* m = map->data();
    for (int bi = 0; bi < b; ++bi) {
      const double* g = nd.grad.data() + out_per * bi;
      double* dst = gx.data() + in_per * bi;
      for (int64_t i = 0; i < out_per; ++i)
        if (m[i] >= 0) dst[m[i]] += g[i];
    }
  });
}

/// Batched pixel map: x is [B, P_in, C], returns [B, P_out, C].
inline Var pixel_map_apply_batched(const Var& x, const std::shared_ptr<PixelMap>& pm) {
  require(x->value.rank() == 3, "pixel_map_apply_batched: expected [B,P,C]");
  int b = x->value.dim(0), c = x->value.dim(2);
  require(x->value.dim(1) == pm->in_pixels, "pixel_map_apply_batched: pixel count mismatch");
  Tensor out({b, pm->out_pixels, c});
  int64_t in_per = static_cast<int64_t>(pm->in_pixels) * c;
  int64_t out_per = static_cast<int64_t>(pm->out_pixels) * c;
  for (int bi = 0; bi < b; ++bi) {
    const double* src = x->value.data() + in_per * bi;
    double* dstb = out.data() + out_per * bi;
    for (int o = 0; o < pm->out_pixels; ++o) {
      double* dst = dstb + static_cast<int64_t>(o) * c;
      for (int32_t k = pm->offsets[o]; k < pm->offsets[o + 1]; ++k) {
        const double* row = src + static_cast<int64_t>(pm->src[k]) * c;
        double wk = pm->w[k];
        for (int j = 0; j < c; ++j) dst[j] += wk * row[j];
      }
    }
  }
  return make_op(std::move(out), {x}, [x, pm, b, c, in_per, out_per](Node& nd) {
    Tensor& gx = x->ensure_grad();
    for (int bi = 0; bi < b; ++bi) {
      const double* gb = nd.grad.data() + out_per * bi;
      double* dstb = gx.data() + in_per * bi;
      for (int o = 0; o < pm->out_pixels; ++o) {
        const double* g = gb + static_cast<int64_t>(o) * c;
        for (int32_t k = pm->offsets[o]; k < pm->offsets[o + 1]; ++k) {
          double* dst = dstb + static_cast<int64_t>(pm->src[k]) * c;
          double wk = pm->w[k];
          for (int j = 0; j < c; ++j) dst[j] += wk * g[j];
        }
      }
    }
  });
}

/// Embedding lookup: rows of table[V,C] selected by ids.
inline Var gather_rows(const Var& table, const std::vector<int>& ids) {
  require(table->value.rank() == 2, "gather_rows: table must be rank 2");
  int v = table->value.dim(0), c = table->value.dim(1);
  Tensor out({static_cast<int>(ids.size()), c});
  for (size_t i = 0; i < ids.size(); ++i) {
    require(0 <= ids[i] && ids[i] < v, "gather_rows: id out of vocabulary range");
    std::copy(table->value.data() + static_cast<int64_t>(ids[i]) * c,
              table->value.data() + static_cast<int64_t>(ids[i] + 1) * c,
              out.data() + static_cast<int64_t>(i) * c);
  }
  return make_op(std::move(out), {table}, [table, ids, c](Node& nd) {
    Tensor& gt = table->ensure_grad();
    for (size_t i = 0; i < ids.size(); ++i) {
      const double* g = nd.grad.data() + static_cast<int64_t>(i) * c;
      double* dst = gt.data() + static_cast<int64_t>(ids[i]) * c;
      for (int j = 0; j < c; ++j) dst[j] += g[j];
    }
  });
}

// ---------------------------------------------------------------------------
// normalization
// ---------------------------------------------------------------------------

/// LayerNorm over the last dimension with learned gain/bias.
inline Var layer_norm_lastdim(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5) {
  int r = x->value.rank();
  int c = x->value.dim(r - 1);
  require(gain->value.size() == c && bias->value.size() == c, "layer_norm: param size mismatch");
  int64_t rows = x->value.size() / c;
  Tensor out(x->value.shape());
  Tensor xhat({static_cast<int>(rows), c});
  Tensor inv_std({static_cast<int>(rows)});
  for (int64_t row = 0; row < rows; ++row) {
    const double* xr = x->value.data() + row * c;
    double mean = 0.0;
    for (int j = 0; j < c; ++j) mean += xr[j];
    mean /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= c;
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[row] = is;
    double* xh = xhat.data() + row * c;
    double* y = out.data() + row * c;
    for (int j = 0; j < c; ++j) {
      xh[j] = (xr[j] - mean) * is;
      y[j] = xh[j] * gain->value[j] + bias->value[j];
    }
  }
  return make_op(std::move(out), {x, gain, bias},
                 [x, gain, bias, xhat, inv_std, rows, c](Node& nd) {
    for (int64_t row = 0; row < rows; ++row) {
      const double* g = nd.grad.data() + row * c;
      const double* xh = xhat.data() + row * c;
      if (gain->requires_grad) {
        Tensor& gg = gain->ensure_grad();
        for (int j = 0; j < c; ++j) gg[j] += g[j] * xh[j];
      }
      if (bias->requires_grad) {
        Tensor& gb = bias->ensure_grad();
        for (int j = 0; j < c; ++j) gb[j] += g[j];
      }
      if (x->requires_grad) {
        Tensor& gx = x->ensure_grad();
        double* dst = gx.data() + row * c;
        double sum_gy = 0.0, sum_gy_xh = 0.0;
        for (int j = 0; j < c; ++j) {
          double gy = g[j] * gain->value[j];
          sum_gy += gy;
          sum_gy_xh += gy * xh[j];
        }
        double is = inv_std[row];
        for (int j = 0; j < c; ++j) {
          double gy = g[j] * gain->value[j];
          dst[j] += is * (gy - sum_gy / c - xh[j] * sum_gy_xh / c);
        }
      }
    }
  });
}

/// BatchNorm over all leading dims per channel (last dim). In training mode
/// batch statistics are used and running buffers updated in place; in eval
/// mode the running buffers normalize.
inline Var batch_norm_channels(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean,
                               Tensor& running_var, bool training, bool update_stats,
                               double momentum = 0.1, double eps = 1e-5) {
  int r = x->value.rank();
  int c = x->value.dim(r - 1);
  require(gamma->value.size() == c && beta->value.size() == c, "batch_norm: param size mismatch");
  int64_t rows = x->value.size() / c;
  Tensor mean({c}), var({c});
  if (training) {
    for (int64_t row = 0; row < rows; ++row) {
      const double* xr = x->value.data() + row * c;
      for (int j = 0; j < c; ++j) mean[j] += xr[j];
    }
    for (int j = 0; j < c; ++j) mean[j] /= rows;
    for (int64_t row = 0; row < rows; ++row) {
      const double* xr = x->value.data() + row * c;
      for (int j = 0; j < c; ++j) var[j] += (xr[j] - mean[j]) * (xr[j] - mean[j]);
    }
    for (int j = 0; j < c; ++j) var[j] /= rows;
    if (update_stats) {
      for (int j = 0; j < c; ++j) {
        running_mean[j] = (1.0 - momentum) * running_mean[j] + momentum * mean[j];
        running_var[j] = (1.0 - momentum) * running_var[j] + momentum * var[j];
      }
    }
  } else {
    mean = running_mean.clone();
    var = running_var.clone();
  }
  Tensor inv_std({c});
  for (int j = 0; j < c; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + eps);
  Tensor out(x->value.shape());
  Tensor xhat({static_cast<int>(rows), c});
  for (int64_t row = 0; row < rows; ++row) {
    const double* xr = x->value.data() + row * c;
    double* xh = xhat.data() + row * c;
    double* y = out.data() + row * c;
    for (int j = 0; j < c; ++j) {
      xh[j] = (xr[j] - mean[j]) * inv_std[j];
      y[j] = xh[j] * gamma->value[j] + beta->value[j];
    }
  }
  return make_op(std::move(out), {x, gamma, beta},
                 [x, gamma, beta, xhat, inv_std, rows, c, training](Node& nd) {
    Tensor sum_g({c}), sum_g_xh({c});
    for (int64_t row = 0; row < rows; ++row) {
      const double* g = nd.grad.data() + row * c;
      const double* xh = xhat.data() + row * c;
      for (int j = 0; j < c; ++j) {
        sum_g[j] += g[j];
        sum_g_xh[j] += g[j] * xh[j];
      }
    }
    if (gamma->requires_grad) {
      Tensor& gg = gamma->ensure_grad();
      for (int j = 0; j < c; ++j) gg[j] += sum_g_xh[j];
    }
    if (beta->requires_grad) {
      Tensor& gb = beta->ensure_grad();
      for (int j = 0; j < c; ++j) gb[j] += sum_g[j];
    }
    if (x->requires_grad) {
      Tensor& gx = x->ensure_grad();
      for (int64_t row = 0; row < rows; ++row) {
        const double* g = nd.grad.data() + row * c;
        const double* xh = xhat.data() + row * c;
        double* dst = gx.data() + row * c;
        for (int j = 0; j < c; ++j) {
          double gy = g[j] * gamma->value[j];
          if (training) {
            dst[j] += inv_std[j] * (gy - gamma->value[j] * sum_g[j] / rows -
                                    gamma->value[j] * xh[j] * sum_g_xh[j] / rows);
          } else {
            dst[j] += inv_std[j] * gy;
          }
        }
      }
    }
  });
}

}  // namespace crossview
