#pragma once

// Reverse-mode autodiff over row-major matrices, templated on the scalar
// type. Training runs in float through the dispatched kernels; gradient
// verification instantiates the same graph code in double, where central
// finite differences are meaningful.
//
// Graphs are built define-by-run on a Tape; creation order is a valid
// topological order, so backward() walks the node list in reverse. Non-param
// node buffers and op closures are released as soon as their backward has
// run, which keeps peak memory near the largest attention map.

#include <cassert>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "vast/error.hpp"
#include "vast/kernels.hpp"
#include "vast/rng.hpp"

namespace vast::nn {

template <class T>
struct Mat {
  int rows = 0, cols = 0;
  std::vector<T> v;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c) {}

  T* data() { return v.data(); }
  const T* data() const { return v.data(); }
  T* row(int i) { return v.data() + static_cast<size_t>(i) * cols; }
  const T* row(int i) const { return v.data() + static_cast<size_t>(i) * cols; }
  T& at(int i, int j) { return v[static_cast<size_t>(i) * cols + j]; }
  const T& at(int i, int j) const { return v[static_cast<size_t>(i) * cols + j]; }
  size_t size() const { return v.size(); }
  bool empty() const { return v.empty(); }
  void release() {
    std::vector<T>().swap(v);
    rows = cols = 0;
  }
  void fill(T x) { std::fill(v.begin(), v.end(), x); }
};

template <class T>
struct Node;
template <class T>
using Ref = std::shared_ptr<Node<T>>;

template <class T>
struct Node {
  Mat<T> val;
  Mat<T> grad;  // allocated lazily on first gradient write
  bool requires_grad = false;
  bool is_param = false;
  bool keep = false;  // exempt from post-backward buffer release
  std::string name;
  std::function<void(Node<T>&)> backward;
  std::vector<Ref<T>> parents;

  void ensure_grad() {
    if (grad.rows != val.rows || grad.cols != val.cols) grad = Mat<T>(val.rows, val.cols);
  }
  T scalar() const { return val.v[0]; }
};

template <class T>
class Tape {
 public:
  bool grad_enabled = true;

  Ref<T> make(int rows, int cols, bool requires_grad) {
    auto n = std::make_shared<Node<T>>();
    n->val = Mat<T>(rows, cols);
    n->requires_grad = requires_grad && grad_enabled;
    nodes_.push_back(n);
    return n;
  }

  Ref<T> constant(Mat<T> m) {
    auto n = std::make_shared<Node<T>>();
    n->val = std::move(m);
    n->requires_grad = false;
    nodes_.push_back(n);
    return n;
  }

  // Seeds d(loss)/d(loss)=1 and runs all op backwards in reverse creation
  // order. Single use per graph: buffers of interior nodes are released as
  // they retire.
  void backward(const Ref<T>& loss) {
    assert(!ran_backward_);
    ran_backward_ = true;
    assert(loss->val.rows == 1 && loss->val.cols == 1);
    loss->ensure_grad();
    loss->grad.fill(T(0));
    loss->grad.v[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node<T>& n = **it;
      if (n.requires_grad && n.backward && !n.grad.empty()) n.backward(n);
      if (!n.is_param && !n.keep) {
        n.val.release();
        n.grad.release();
        n.backward = nullptr;
      }
    }
  }

  void clear() {
    nodes_.clear();
    ran_backward_ = false;
  }

  size_t node_count() const { return nodes_.size(); }

 private:
  std::vector<Ref<T>> nodes_;
  bool ran_backward_ = false;
};

// ---------------------------------------------------------------------------
// parameters

template <class T>
struct ParamStore {
  std::vector<Ref<T>> params;

  Ref<T> add(const std::string& name, int rows, int cols) {
    auto n = std::make_shared<Node<T>>();
    n->val = Mat<T>(rows, cols);
    n->requires_grad = true;
    n->is_param = true;
    n->name = name;
    params.push_back(n);
    return n;
  }

  Ref<T> gaussian(const std::string& name, int rows, int cols, Rng& rng, T stddev) {
    auto p = add(name, rows, cols);
    for (auto& x : p->val.v) x = static_cast<T>(rng.normal()) * stddev;
    return p;
  }

  Ref<T> zeros(const std::string& name, int rows, int cols) { return add(name, rows, cols); }

  Ref<T> constant(const std::string& name, int rows, int cols, T value) {
    auto p = add(name, rows, cols);
    p->val.fill(value);
    return p;
  }

  Ref<T> find(const std::string& name) const {
    for (const auto& p : params)
      if (p->name == name) return p;
    return nullptr;
  }

  size_t scalar_count() const {
    size_t n = 0;
    for (const auto& p : params) n += p->val.size();
    return n;
  }

  void zero_grads() {
    for (auto& p : params) {
      p->ensure_grad();
      p->grad.fill(T(0));
    }
  }
};

// ---------------------------------------------------------------------------
// ops

namespace detail {
template <class T>
inline bool rg(const Ref<T>& a) {
  return a->requires_grad;
}
template <class T>
inline bool rg(const Ref<T>& a, const Ref<T>& b) {
  return a->requires_grad || b->requires_grad;
}
template <class T>
inline void accum(Mat<T>& dst_grad, const Mat<T>& g) {
  kernels::vadd(static_cast<int>(g.size()), dst_grad.data(), g.data(), dst_grad.data());
}
}  // namespace detail

// out[m,n] = a[m,k] * b[k,n]
template <class T>
Ref<T> matmul(Tape<T>& tape, const Ref<T>& a, const Ref<T>& b) {
  assert(a->val.cols == b->val.rows);
  const int m = a->val.rows, k = a->val.cols, n = b->val.cols;
  auto out = tape.make(m, n, detail::rg(a, b));
  kernels::gemm_nn(m, n, k, a->val.data(), k, b->val.data(), n, out->val.data(), n);
  if (out->requires_grad) {
    out->parents = {a, b};
    out->backward = [a, b, m, k, n](Node<T>& o) {
      if (a->requires_grad) {
        a->ensure_grad();
        kernels::gemm_nt(m, k, n, o.grad.data(), n, b->val.data(), n, a->grad.data(), k, true);
      }
      if (b->requires_grad) {
        b->ensure_grad();
        kernels::gemm_tn(k, n, m, a->val.data(), k, o.grad.data(), n, b->grad.data(), n, true);
      }
    };
  }
  return out;
}

template <class T>
Ref<T> add(Tape<T>& tape, const Ref<T>& a, const Ref<T>& b) {
  assert(a->val.rows == b->val.rows && a->val.cols == b->val.cols);
  auto out = tape.make(a->val.rows, a->val.cols, detail::rg(a, b));
  kernels::vadd(static_cast<int>(a->val.size()), a->val.data(), b->val.data(), out->val.data());
  if (out->requires_grad) {
    out->parents = {a, b};
    out->backward = [a, b](Node<T>& o) {
      if (a->requires_grad) {
        a->ensure_grad();
        detail::accum(a->grad, o.grad);
      }
      if (b->requires_grad) {
        b->ensure_grad();
        detail::accum(b->grad, o.grad);
      }
    };
  }
  return out;
}

template <class T>
Ref<T> mul(Tape<T>& tape, const Ref<T>& a, const Ref<T>& b) {
  assert(a->val.rows == b->val.rows && a->val.cols == b->val.cols);
  auto out = tape.make(a->val.rows, a->val.cols, detail::rg(a, b));
  kernels::vmul(static_cast<int>(a->val.size()), a->val.data(), b->val.data(), out->val.data());
  if (out->requires_grad) {
    out->parents = {a, b};
    Mat<T> av, bv;
    if (a->requires_grad) bv = b->val;  // copies survive buffer release
    if (b->requires_grad) av = a->val;
    out->backward = [a, b, av = std::move(av), bv = std::move(bv)](Node<T>& o) {
      const int n = static_cast<int>(o.grad.size());
      if (a->requires_grad) {
        a->ensure_grad();
        std::vector<T> tmp(n);
        kernels::vmul(n, o.grad.data(), bv.data(), tmp.data());
        kernels::vadd(n, a->grad.data(), tmp.data(), a->grad.data());
      }
      if (b->requires_grad) {
        b->ensure_grad();
        std::vector<T> tmp(n);
        kernels::vmul(n, o.grad.data(), av.data(), tmp.data());
        kernels::vadd(n, b->grad.data(), tmp.data(), b->grad.data());
      }
    };
  }
  return out;
}

template <class T>
Ref<T> scale(Tape<T>& tape, const Ref<T>& a, T c) {
  auto out = tape.make(a->val.rows, a->val.cols, detail::rg(a));
  out->val = a->val;
  kernels::scale(static_cast<int>(out->val.size()), c, out->val.data());
  if (out->requires_grad) {
    out->parents = {a};
    out->backward = [a, c](Node<T>& o) {
      a->ensure_grad();
      kernels::axpy(static_cast<int>(o.grad.size()), c, o.grad.data(), a->grad.data());
    };
  }
  return out;
}

template <class T>
Ref<T> add_scalar(Tape<T>& tape, const Ref<T>& a, T c) {
  auto out = tape.make(a->val.rows, a->val.cols, detail::rg(a));
  for (size_t i = 0; i < a->val.size(); ++i) out->val.v[i] = a->val.v[i] + c;
  if (out->requires_grad) {
    out->parents = {a};
    out->backward = [a](Node<T>& o) {
      a->ensure_grad();
      detail::accum(a->grad, o.grad);
    };
  }
  return out;
}

// x[m,n] + broadcast b[1,n]
template <class T>
Ref<T> add_rowvec(Tape<T>& tape, const Ref<T>& x, const Ref<T>& b) {
  assert(b->val.rows == 1 && b->val.cols == x->val.cols);
  const int m = x->val.rows, n = x->val.cols;
  auto out = tape.make(m, n, detail::rg(x, b));
  for (int i = 0; i < m; ++i)
    kernels::vadd(n, x->val.row(i), b->val.data(), out->val.row(i));
  if (out->requires_grad) {
    out->parents = {x, b};
    out->backward = [x, b, m, n](Node<T>& o) {
      if (x->requires_grad) {
        x->ensure_grad();
        detail::accum(x->grad, o.grad);
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (int i = 0; i < m; ++i)
          kernels::vadd(n, b->grad.data(), o.grad.row(i), b->grad.data());
      }
    };
  }
  return out;
}

// x[m,n] * broadcast s[1,n]
template <class T>
Ref<T> mul_rowvec(Tape<T>& tape, const Ref<T>& x, const Ref<T>& s) {
  assert(s->val.rows == 1 && s->val.cols == x->val.cols);
  const int m = x->val.rows, n = x->val.cols;
  auto out = tape.make(m, n, detail::rg(x, s));
  for (int i = 0; i < m; ++i)
    kernels::vmul(n, x->val.row(i), s->val.data(), out->val.row(i));
  if (out->requires_grad) {
    out->parents = {x, s};
    Mat<T> xv, sv;
    if (s->requires_grad) xv = x->val;
    if (x->requires_grad) sv = s->val;
    out->backward = [x, s, m, n, xv = std::move(xv), sv = std::move(sv)](Node<T>& o) {
      if (x->requires_grad) {
        x->ensure_grad();
        std::vector<T> tmp(n);
        for (int i = 0; i < m; ++i) {
          kernels::vmul(n, o.grad.row(i), sv.data(), tmp.data());
          kernels::vadd(n, x->grad.row(i), tmp.data(), x->grad.row(i));
        }
      }
      if (s->requires_grad) {
        s->ensure_grad();
        std::vector<T> tmp(n);
        for (int i = 0; i < m; ++i) {
          kernels::vmul(n, o.grad.row(i), xv.row(i), tmp.data());
          kernels::vadd(n, s->grad.data(), tmp.data(), s->grad.data());
        }
      }
    };
  }
  return out;
}

template <class T>
Ref<T> gelu(Tape<T>& tape, const Ref<T>& x) {
  const int n = static_cast<int>(x->val.size());
  auto out = tape.make(x->val.rows, x->val.cols, detail::rg(x));
  Mat<T> th(x->val.rows, x->val.cols);
  constexpr T kC = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T kA = T(0.044715);
  {
    std::vector<T> u(n);
    const T* xv = x->val.data();
    for (int i = 0; i < n; ++i) u[i] = kC * (xv[i] + kA * xv[i] * xv[i] * xv[i]);
    kernels::vtanh(n, u.data(), th.data());
    for (int i = 0; i < n; ++i) out->val.v[i] = T(0.5) * xv[i] * (T(1) + th.v[i]);
  }
  if (out->requires_grad) {
    out->parents = {x};
    Mat<T> xv = x->val;
    out->backward = [x, n, xv = std::move(xv), th = std::move(th)](Node<T>& o) {
      x->ensure_grad();
      for (int i = 0; i < n; ++i) {
        const T t = th.v[i];
        const T xi = xv.v[i];
        const T du = kC * (T(1) + T(3) * kA * xi * xi);
        const T d = T(0.5) * (T(1) + t) + T(0.5) * xi * (T(1) - t * t) * du;
        x->grad.v[i] += o.grad.v[i] * d;
      }
    };
  }
  return out;
}

// Row-wise layer norm. gamma/beta may be null for the non-affine form.
template <class T>
Ref<T> layer_norm(Tape<T>& tape, const Ref<T>& x, const Ref<T>& gamma,
                  const Ref<T>& beta, T eps = T(1e-5)) {
  const int m = x->val.rows, n = x->val.cols;
  const bool affine = gamma != nullptr;
  bool needs = detail::rg(x) || (affine && detail::rg(gamma, beta));
  auto out = tape.make(m, n, needs);
  Mat<T> xhat(m, n);
  std::vector<T> inv_std(m);
  for (int i = 0; i < m; ++i) {
    const T* xr = x->val.row(i);
    T mean = kernels::reduce_sum(xr, n) / T(n);
    T var = 0;
    for (int j = 0; j < n; ++j) {
      const T d = xr[j] - mean;
      var += d * d;
    }
    var /= T(n);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[i] = is;
    T* xh = xhat.row(i);
    T* orow = out->val.row(i);
    for (int j = 0; j < n; ++j) xh[j] = (xr[j] - mean) * is;
    if (affine) {
      const T* g = gamma->val.data();
      const T* b = beta->val.data();
      for (int j = 0; j < n; ++j) orow[j] = xh[j] * g[j] + b[j];
    } else {
      std::memcpy(orow, xh, sizeof(T) * n);
    }
  }
  if (out->requires_grad) {
    out->parents = affine ? std::vector<Ref<T>>{x, gamma, beta} : std::vector<Ref<T>>{x};
    Mat<T> gval;
    if (affine) gval = gamma->val;
    out->backward = [x, gamma, beta, m, n, affine, gval = std::move(gval),
                     xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& o) {
      if (affine && gamma->requires_grad) {
        gamma->ensure_grad();
        beta->ensure_grad();
        for (int i = 0; i < m; ++i) {
          const T* g = o.grad.row(i);
          const T* xh = xhat.row(i);
          T* dg = gamma->grad.data();
          T* db = beta->grad.data();
          for (int j = 0; j < n; ++j) {
            dg[j] += g[j] * xh[j];
            db[j] += g[j];
          }
        }
      }
      if (x->requires_grad) {
        x->ensure_grad();
        std::vector<T> gh(n);
        for (int i = 0; i < m; ++i) {
          const T* g = o.grad.row(i);
          const T* xh = xhat.row(i);
          if (affine)
            kernels::vmul(n, g, gval.data(), gh.data());
          else
            std::memcpy(gh.data(), g, sizeof(T) * n);
          const T mean_gh = kernels::reduce_sum(gh.data(), n) / T(n);
          const T mean_ghx = kernels::dot(gh.data(), xh, n) / T(n);
          T* dx = x->grad.row(i);
          const T is = inv_std[i];
          for (int j = 0; j < n; ++j)
            dx[j] += is * (gh[j] - mean_gh - xh[j] * mean_ghx);
        }
      }
    };
  }
  return out;
}

// Multi-head scaled dot product attention over pre-projected q/k/v.
// q:[nq,d], k,v:[nk,d]; d divisible by n_heads. causal masks j>i (valid when
// nq==nk). Softmax maps are cached for backward and released with the graph.
template <class T>
Ref<T> attention(Tape<T>& tape, const Ref<T>& q, const Ref<T>& k, const Ref<T>& v,
                 int n_heads, bool causal) {
  const int nq = q->val.rows, nk = k->val.rows, d = q->val.cols;
  assert(k->val.cols == d && v->val.cols == d && d % n_heads == 0);
  assert(!causal || nq == nk);
  const int dh = d / n_heads;
  const T alpha = T(1) / std::sqrt(T(dh));
  auto out = tape.make(nq, d, detail::rg(q, k) || detail::rg(v));

  auto probs = std::make_shared<std::vector<Mat<T>>>();
  probs->reserve(n_heads);
  for (int h = 0; h < n_heads; ++h) {
    Mat<T> s(nq, nk);
    kernels::gemm_nt(nq, nk, dh, q->val.data() + h * dh, d, k->val.data() + h * dh, d,
                     s.data(), nk);
    kernels::scale(static_cast<int>(s.size()), alpha, s.data());
    if (causal)
      for (int i = 0; i < nq; ++i) {
        T* row = s.row(i);
        for (int j = i + 1; j < nk; ++j) row[j] = T(-1e30);
      }
    for (int i = 0; i < nq; ++i) kernels::softmax_row(s.row(i), nk);
    kernels::gemm_nn(nq, dh, nk, s.data(), nk, v->val.data() + h * dh, d,
                     out->val.data() + h * dh, d);
    if (out->requires_grad) probs->push_back(std::move(s));
  }

  if (out->requires_grad) {
    out->parents = {q, k, v};
    Mat<T> qv = q->val, kv = k->val, vv = v->val;
    out->backward = [q, k, v, probs, n_heads, dh, d, nq, nk, alpha,
                     qv = std::move(qv), kv = std::move(kv), vv = std::move(vv)](Node<T>& o) {
      if (q->requires_grad) q->ensure_grad();
      if (k->requires_grad) k->ensure_grad();
      if (v->requires_grad) v->ensure_grad();
      Mat<T> dp(nq, nk);
      for (int h = 0; h < n_heads; ++h) {
        const Mat<T>& p = (*probs)[h];
        // dP = dO_h * V_h^T
        kernels::gemm_nt(nq, nk, dh, o.grad.data() + h * dh, d, vv.data() + h * dh, d,
                         dp.data(), nk);
        if (v->requires_grad)
          kernels::gemm_tn(nk, dh, nq, p.data(), nk, o.grad.data() + h * dh, d,
                           v->grad.data() + h * dh, d, true);
        // dA = alpha * P .* (dP - rowdot(dP, P))
        for (int i = 0; i < nq; ++i) {
          T* dpr = dp.row(i);
          const T* pr = p.row(i);
          const T rd = kernels::dot(dpr, pr, nk);
          for (int j = 0; j < nk; ++j) dpr[j] = alpha * pr[j] * (dpr[j] - rd);
        }
        if (q->requires_grad)
          kernels::gemm_nn(nq, dh, nk, dp.data(), nk, kv.data() + h * dh, d,
                           q->grad.data() + h * dh, d, true);
        if (k->requires_grad)
          kernels::gemm_tn(nk, dh, nq, dp.data(), nk, qv.data() + h * dh, d,
                           k->grad.data() + h * dh, d, true);
      }
    };
  }
  return out;
}

// Row gather from an embedding table; backward scatter-adds.
template <class T>
Ref<T> embedding(Tape<T>& tape, const Ref<T>& table, const std::vector<int>& ids) {
  const int n = static_cast<int>(ids.size()), d = table->val.cols;
  auto out = tape.make(n, d, detail::rg(table));
  for (int i = 0; i < n; ++i) {
    assert(ids[i] >= 0 && ids[i] < table->val.rows);
    std::memcpy(out->val.row(i), table->val.row(ids[i]), sizeof(T) * d);
  }
  if (out->requires_grad) {
    out->parents = {table};
    out->backward = [table, ids, d](Node<T>& o) {
      table->ensure_grad();
      for (size_t i = 0; i < ids.size(); ++i)
        kernels::vadd(d, table->grad.row(ids[i]), o.grad.row(static_cast<int>(i)),
                      table->grad.row(ids[i]));
    };
  }
  return out;
}

// Row gather from a computed node (e.g. selecting prediction positions).
template <class T>
Ref<T> row_select(Tape<T>& tape, const Ref<T>& x, const std::vector<int>& rows) {
  const int n = static_cast<int>(rows.size()), d = x->val.cols;
  auto out = tape.make(n, d, detail::rg(x));
  for (int i = 0; i < n; ++i) std::memcpy(out->val.row(i), x->val.row(rows[i]), sizeof(T) * d);
  if (out->requires_grad) {
    out->parents = {x};
    out->backward = [x, rows, d](Node<T>& o) {
      x->ensure_grad();
      for (size_t i = 0; i < rows.size(); ++i)
        kernels::vadd(d, x->grad.row(rows[i]), o.grad.row(static_cast<int>(i)),
                      x->grad.row(rows[i]));
    };
  }
  return out;
}

template <class T>
Ref<T> concat_rows(Tape<T>& tape, const std::vector<Ref<T>>& parts) {
  assert(!parts.empty());
  const int d = parts[0]->val.cols;
  int total = 0;
  bool needs = false;
  for (const auto& p : parts) {
    assert(p->val.cols == d);
    total += p->val.rows;
    needs = needs || p->requires_grad;
  }
  auto out = tape.make(total, d, needs);
  int r = 0;
  for (const auto& p : parts) {
    std::memcpy(out->val.row(r), p->val.data(), sizeof(T) * p->val.size());
    r += p->val.rows;
  }
  if (out->requires_grad) {
    out->parents = parts;
    // row counts must survive buffer release; capture them explicitly
    std::vector<int> row_counts;
    row_counts.reserve(parts.size());
    for (const auto& p : parts) row_counts.push_back(p->val.rows);
    out->backward = [parts, row_counts](Node<T>& o) {
      int r0 = 0;
      for (size_t idx = 0; idx < parts.size(); ++idx) {
        const auto& p = parts[idx];
        const int pr = row_counts[idx];
        if (p->requires_grad) {
          p->ensure_grad();
          kernels::vadd(pr * o.grad.cols, p->grad.data(), o.grad.row(r0), p->grad.data());
        }
        r0 += pr;
      }
    };
  }
  return out;
}

template <class T>
Ref<T> concat_cols(Tape<T>& tape, const std::vector<Ref<T>>& parts) {
  assert(!parts.empty());
  const int m = parts[0]->val.rows;
  int total = 0;
  bool needs = false;
  for (const auto& p : parts) {
    assert(p->val.rows == m);
    total += p->val.cols;
    needs = needs || p->requires_grad;
  }
  auto out = tape.make(m, total, needs);
  int c = 0;
  for (const auto& p : parts) {
    for (int i = 0; i < m; ++i)
      std::memcpy(out->val.row(i) + c, p->val.row(i), sizeof(T) * p->val.cols);
    c += p->val.cols;
  }
  if (out->requires_grad) {
    out->parents = parts;
    std::vector<int> col_counts;
    for (const auto& p : parts) col_counts.push_back(p->val.cols);
    out->backward = [parts, col_counts, m](Node<T>& o) {
      int c0 = 0;
      for (size_t idx = 0; idx < parts.size(); ++idx) {
        const auto& p = parts[idx];
        const int pc = col_counts[idx];
        if (p->requires_grad) {
          p->ensure_grad();
          for (int i = 0; i < m; ++i)
            kernels::vadd(pc, p->grad.row(i), o.grad.row(i) + c0, p->grad.row(i));
        }
        c0 += pc;
      }
    };
  }
  return out;
}

template <class T>
Ref<T> slice_cols(Tape<T>& tape, const Ref<T>& x, int c0, int len) {
  assert(c0 >= 0 && c0 + len <= x->val.cols);
  const int m = x->val.rows;
  auto out = tape.make(m, len, detail::rg(x));
  for (int i = 0; i < m; ++i)
    std::memcpy(out->val.row(i), x->val.row(i) + c0, sizeof(T) * len);
  if (out->requires_grad) {
    out->parents = {x};
    out->backward = [x, c0, len, m](Node<T>& o) {
      x->ensure_grad();
      for (int i = 0; i < m; ++i)
        kernels::vadd(len, x->grad.row(i) + c0, o.grad.row(i), x->grad.row(i) + c0);
    };
  }
  return out;
}

template <class T>
Ref<T> slice_rows(Tape<T>& tape, const Ref<T>& x, int r0, int len) {
  assert(r0 >= 0 && r0 + len <= x->val.rows);
  const int d = x->val.cols;
  auto out = tape.make(len, d, detail::rg(x));
  std::memcpy(out->val.data(), x->val.row(r0), sizeof(T) * out->val.size());
  if (out->requires_grad) {
    out->parents = {x};
    out->backward = [x, r0, len, d](Node<T>& o) {
      x->ensure_grad();
      kernels::vadd(len * d, x->grad.row(r0), o.grad.data(), x->grad.row(r0));
    };
  }
  return out;
}

// Masked sum of squared error: sum(mask .* (pred - target)^2) / norm.
template <class T>
Ref<T> mse_masked(Tape<T>& tape, const Ref<T>& pred, const Mat<T>& target,
                  const Mat<T>& mask, T norm) {
  assert(pred->val.rows == target.rows && pred->val.cols == target.cols);
  assert(mask.rows == target.rows && mask.cols == target.cols);
  assert(norm > 0);
  const int n = static_cast<int>(pred->val.size());
  auto out = tape.make(1, 1, detail::rg(pred));
  T acc = 0;
  for (int i = 0; i < n; ++i) {
    const T d = pred->val.v[i] - target.v[i];
    acc += mask.v[i] * d * d;
  }
  out->val.v[0] = acc / norm;
  if (out->requires_grad) {
    out->parents = {pred};
    Mat<T> pv = pred->val;
    out->backward = [pred, target, mask, norm, n, pv = std::move(pv)](Node<T>& o) {
      pred->ensure_grad();
      const T g = o.grad.v[0];
      for (int i = 0; i < n; ++i)
        pred->grad.v[i] += g * T(2) * mask.v[i] * (pv.v[i] - target.v[i]) / norm;
    };
  }
  return out;
}

// Masked binary cross-entropy with logits:
// sum(mask .* (max(z,0) - z*y + log1p(exp(-|z|)))) / norm.
template <class T>
Ref<T> bce_logits_masked(Tape<T>& tape, const Ref<T>& z, const Mat<T>& y,
                         const Mat<T>& mask, T norm) {
  assert(z->val.rows == y.rows && z->val.cols == y.cols);
  assert(norm > 0);
  const int n = static_cast<int>(z->val.size());
  auto out = tape.make(1, 1, detail::rg(z));
  T acc = 0;
  for (int i = 0; i < n; ++i) {
    const T zi = z->val.v[i];
    const T pos = zi > 0 ? zi : T(0);
    acc += mask.v[i] * (pos - zi * y.v[i] + std::log1p(std::exp(-std::abs(zi))));
  }
  out->val.v[0] = acc / norm;
  if (out->requires_grad) {
    out->parents = {z};
    Mat<T> zv = z->val;
    out->backward = [z, y, mask, norm, n, zv = std::move(zv)](Node<T>& o) {
      z->ensure_grad();
      const T g = o.grad.v[0];
      for (int i = 0; i < n; ++i) {
        const T sig = T(1) / (T(1) + std::exp(-zv.v[i]));
        z->grad.v[i] += g * mask.v[i] * (sig - y.v[i]) / norm;
      }
    };
  }
  return out;
}

// Per-row softmax cross-entropy against integer labels, with a 0/1 row mask.
template <class T>
Ref<T> softmax_ce_rows(Tape<T>& tape, const Ref<T>& logits, const std::vector<int>& labels,
                       const std::vector<T>& row_mask, T norm) {
  const int m = logits->val.rows, c = logits->val.cols;
  assert(static_cast<int>(labels.size()) == m && static_cast<int>(row_mask.size()) == m);
  assert(norm > 0);
  auto out = tape.make(1, 1, detail::rg(logits));
  Mat<T> probs(m, c);
  T acc = 0;
  for (int i = 0; i < m; ++i) {
    std::memcpy(probs.row(i), logits->val.row(i), sizeof(T) * c);
    kernels::softmax_row(probs.row(i), c);
    if (row_mask[i] != T(0)) {
      const T p = probs.at(i, labels[i]);
      acc -= row_mask[i] * std::log(p > T(1e-30) ? p : T(1e-30));
    }
  }
  out->val.v[0] = acc / norm;
  if (out->requires_grad) {
    out->parents = {logits};
    out->backward = [logits, labels, row_mask, norm, m, c, probs = std::move(probs)](Node<T>& o) {
      logits->ensure_grad();
      const T g = o.grad.v[0];
      for (int i = 0; i < m; ++i) {
        if (row_mask[i] == T(0)) continue;
        const T w = g * row_mask[i] / norm;
        T* dl = logits->grad.row(i);
        const T* p = probs.row(i);
        for (int j = 0; j < c; ++j) dl[j] += w * p[j];
        dl[labels[i]] -= w;
      }
    };
  }
  return out;
}

// Weighted sum of 1x1 loss nodes.
template <class T>
Ref<T> add_weighted(Tape<T>& tape, const std::vector<std::pair<Ref<T>, T>>& terms) {
  assert(!terms.empty());
  bool needs = false;
  for (const auto& [r, w] : terms) needs = needs || r->requires_grad;
  auto out = tape.make(1, 1, needs);
  T acc = 0;
  for (const auto& [r, w] : terms) acc += w * r->val.v[0];
  out->val.v[0] = acc;
  if (out->requires_grad) {
    for (const auto& [r, w] : terms) out->parents.push_back(r);
    out->backward = [terms](Node<T>& o) {
      for (const auto& [r, w] : terms) {
        if (!r->requires_grad) continue;
        r->ensure_grad();
        r->grad.v[0] += w * o.grad.v[0];
      }
    };
  }
  return out;
}

template <class T>
Ref<T> sum_all(Tape<T>& tape, const Ref<T>& x) {
  auto out = tape.make(1, 1, detail::rg(x));
  out->val.v[0] = kernels::reduce_sum(x->val.data(), static_cast<int>(x->val.size()));
  if (out->requires_grad) {
    out->parents = {x};
    out->backward = [x](Node<T>& o) {
      x->ensure_grad();
      const T g = o.grad.v[0];
      for (auto& v : x->grad.v) v += g;
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// layers

template <class T>
struct Linear {
  Ref<T> w, b;

  Linear() = default;
  Linear(ParamStore<T>& ps, const std::string& name, int in, int out, Rng& rng,
         T w_std = T(0.02)) {
    w = ps.gaussian(name + ".w", in, out, rng, w_std);
    b = ps.zeros(name + ".b", 1, out);
  }

  Ref<T> operator()(Tape<T>& tape, const Ref<T>& x) const {
    return add_rowvec(tape, matmul(tape, x, w), b);
  }
};

template <class T>
struct LayerNormLayer {
  Ref<T> gamma, beta;

  LayerNormLayer() = default;
  LayerNormLayer(ParamStore<T>& ps, const std::string& name, int dim) {
    gamma = ps.constant(name + ".g", 1, dim, T(1));
    beta = ps.zeros(name + ".b", 1, dim);
  }

  Ref<T> operator()(Tape<T>& tape, const Ref<T>& x) const {
    return layer_norm(tape, x, gamma, beta);
  }
};

// Pre-norm transformer block: x += attn(ln1 x); x += mlp(ln2 x).
template <class T>
struct TransformerBlock {
  int dim = 0, heads = 0;
  bool causal = false;
  LayerNormLayer<T> ln1, ln2;
  Linear<T> qkv, proj, fc1, fc2;

  TransformerBlock() = default;
  TransformerBlock(ParamStore<T>& ps, const std::string& name, int dim_, int heads_,
                   int mlp_hidden, bool causal_, Rng& rng)
      : dim(dim_), heads(heads_), causal(causal_) {
    ln1 = LayerNormLayer<T>(ps, name + ".ln1", dim);
    ln2 = LayerNormLayer<T>(ps, name + ".ln2", dim);
    qkv = Linear<T>(ps, name + ".qkv", dim, 3 * dim, rng);
    proj = Linear<T>(ps, name + ".proj", dim, dim, rng);
    fc1 = Linear<T>(ps, name + ".fc1", dim, mlp_hidden, rng);
    fc2 = Linear<T>(ps, name + ".fc2", mlp_hidden, dim, rng);
  }

  Ref<T> operator()(Tape<T>& tape, Ref<T> x) const {
    auto h = ln1(tape, x);
    auto qkv_out = qkv(tape, h);
    auto q = slice_cols(tape, qkv_out, 0, dim);
    auto k = slice_cols(tape, qkv_out, dim, dim);
    auto v = slice_cols(tape, qkv_out, 2 * dim, dim);
    auto a = attention(tape, q, k, v, heads, causal);
    x = add(tape, x, proj(tape, a));
    auto h2 = ln2(tape, x);
    x = add(tape, x, fc2(tape, gelu(tape, fc1(tape, h2))));
    return x;
  }
};

// ---------------------------------------------------------------------------
// optimizer

template <class T>
struct Adam {
  T lr = T(1e-3);
  T beta1 = T(0.9), beta2 = T(0.999), eps = T(1e-8);
  T clip = T(1.0);  // global gradient norm ceiling; <=0 disables
  int t = 0;
  std::vector<std::vector<T>> m, v;  // parallel to store.params

  void init(const ParamStore<T>& ps) {
    m.assign(ps.params.size(), {});
    v.assign(ps.params.size(), {});
    for (size_t i = 0; i < ps.params.size(); ++i) {
      m[i].assign(ps.params[i]->val.size(), T(0));
      v[i].assign(ps.params[i]->val.size(), T(0));
    }
    t = 0;
  }

  // Applies one update from gradients scaled by grad_scale (e.g. 1/batch).
  // Returns the pre-clip global gradient norm. Grads are zeroed afterwards.
  T step(ParamStore<T>& ps, T grad_scale) {
    assert(m.size() == ps.params.size());
    double norm_sq = 0;
    for (auto& p : ps.params) {
      p->ensure_grad();
      const T* g = p->grad.data();
      for (size_t i = 0; i < p->grad.size(); ++i) {
        const double gs = static_cast<double>(g[i]) * grad_scale;
        norm_sq += gs * gs;
      }
    }
    const T norm = static_cast<T>(std::sqrt(norm_sq));
    T coef = grad_scale;
    if (clip > 0 && norm > clip) coef *= clip / norm;
    ++t;
    const T bc1 = T(1) - std::pow(beta1, T(t));
    const T bc2 = T(1) - std::pow(beta2, T(t));
    for (size_t pi = 0; pi < ps.params.size(); ++pi) {
      auto& p = *ps.params[pi];
      T* w = p.val.data();
      T* g = p.grad.data();
      T* mi = m[pi].data();
      T* vi = v[pi].data();
      for (size_t i = 0; i < p.val.size(); ++i) {
        const T gi = g[i] * coef;
        mi[i] = beta1 * mi[i] + (T(1) - beta1) * gi;
        vi[i] = beta2 * vi[i] + (T(1) - beta2) * gi * gi;
        const T mhat = mi[i] / bc1;
        const T vhat = vi[i] / bc2;
        w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        g[i] = T(0);
      }
    }
    return norm;
  }
};

// Sinusoidal position/timestep features as a 1 x dim row.
template <class T>
Mat<T> sinusoidal_embedding(int t, int dim) {
  Mat<T> e(1, dim);
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    e.v[i] = static_cast<T>(std::sin(t * freq));
    e.v[half + i] = static_cast<T>(std::cos(t * freq));
  }
  return e;
}

}  // namespace vast::nn
