#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "otter/error.hpp"
#include "otter/numerics/tensor.hpp"

namespace otter::num {

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  inline const Tensor& value() const;

 private:
  friend class Tape;
  Var(Tape* t, std::size_t id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records primitive ops in creation order; backward() walks them in reverse,
/// which is a reverse topological order because parents always precede
/// children.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& out_grad)>;

  Var constant(Tensor v) { return push(std::move(v), false, {}); }
  Var param(Tensor v) { return push(std::move(v), true, {}); }

  const Tensor& value(Var v) const { return nodes_[v.id()].value; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }

  /// Gradient of the last backward() target with respect to v. Zero-filled
  /// when v did not influence the target.
  const Tensor& grad(Var v) {
    Node& n = nodes_[v.id()];
    if (n.grad.empty() && !n.value.empty()) n.grad = Tensor::zeros_like(n.value);
    return n.grad;
  }

  Tensor& grad_mut(Var v) {
    Node& n = nodes_[v.id()];
    if (n.grad.empty()) n.grad = Tensor::zeros_like(n.value);
    return n.grad;
  }

  Var record(Tensor value, std::initializer_list<Var> parents, Backward fn) {
    return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
                  std::move(fn));
  }

  Var record(Tensor value, std::span<const Var> parents, Backward fn) {
    bool rg = false;
    for (Var p : parents) {
      if (p.tape() != this) throw Error(Errc::ShapeMismatch, "operands recorded on different tapes");
      rg = rg || requires_grad(p);
    }
    return push(std::move(value), rg, rg ? std::move(fn) : Backward{});
  }

  void backward(Var loss) {
    if (value(loss).size() != 1) {
      throw Error(Errc::ShapeMismatch, "backward target must be a scalar, got " +
                                           shape_str(value(loss).shape()));
    }
    for (Node& n : nodes_) n.grad = Tensor();
    grad_mut(loss)[0] = 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      n.backward(*this, n.grad);
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Backward backward;
  };

  Var push(Tensor v, bool rg, Backward fn) {
    nodes_.push_back(Node{std::move(v), Tensor(), rg, std::move(fn)});
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(*this); }

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw Error(Errc::ShapeMismatch, what);
}

inline void require_matrix(const Tensor& t, const char* op) {
  require(t.rank() == 2, std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

inline void check_finite_scalar(double v, const char* what) {
  if (!std::isfinite(v)) throw Error(Errc::NonFinite, std::string(what) + " is not finite");
}

template <typename F>
Var unary(Var a, F&& f, std::function<double(double x, double y)> dfdx) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return a.tape()->record(std::move(out), {a}, [a, dfdx](Tape& t, const Tensor& g) {
    const Tensor& x = t.value(a);
    Tensor& ga = t.grad_mut(a);
    // The output value is not stored separately; recompute it from x.
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g[i] * dfdx(x[i], 0.0);
  });
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require_matrix(av, "matmul");
  detail::require_matrix(bv, "matmul");
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  detail::require(bv.rows() == k, "matmul: " + shape_str(av.shape()) + " * " + shape_str(bv.shape()));
  Tensor out({m, n});
  gemm_nn(av.data(), bv.data(), out.data(), m, k, n);
  return a.tape()->record(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) gemm_nt(g.data(), t.value(b).data(), t.grad_mut(a).data(), m, n, k);
    if (t.requires_grad(b)) gemm_tn(t.value(a).data(), g.data(), t.grad_mut(b).data(), m, k, n);
  });
}

inline Var add(Var a, Var b) {
  detail::require(a.value().shape() == b.value().shape(),
                  "add: " + shape_str(a.value().shape()) + " vs " + shape_str(b.value().shape()));
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    for (Var p : {a, b}) {
      if (!t.requires_grad(p)) continue;
      Tensor& gp = t.grad_mut(p);
      for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
    }
  });
}

inline Var sub(Var a, Var b) {
  detail::require(a.value().shape() == b.value().shape(),
                  "sub: " + shape_str(a.value().shape()) + " vs " + shape_str(b.value().shape()));
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad_mut(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad_mut(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

/// Elementwise product.
inline Var mul(Var a, Var b) {
  detail::require(a.value().shape() == b.value().shape(),
                  "mul: " + shape_str(a.value().shape()) + " vs " + shape_str(b.value().shape()));
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad_mut(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad_mut(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

/// y = scale * x + shift, elementwise.
inline Var affine(Var a, double scale, double shift) {
  Tensor out = a.value();
  for (double& x : out.values()) x = scale * x + shift;
  return a.tape()->record(std::move(out), {a}, [a, scale](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_mut(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += scale * g[i];
  });
}

inline Var scale(Var a, double c) { return affine(a, c, 0.0); }

/// Adds a length-n bias to every row of an m x n matrix.
inline Var add_bias(Var a, Var bias) {
  const Tensor& av = a.value();
  const Tensor& bv = bias.value();
  detail::require_matrix(av, "add_bias");
  detail::require(bv.size() == av.cols(),
                  "add_bias: bias " + shape_str(bv.shape()) + " for " + shape_str(av.shape()));
  Tensor out = av;
  const std::size_t m = av.rows(), n = av.cols();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) += bv[j];
  return a.tape()->record(std::move(out), {a, bias}, [a, bias, m, n](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad_mut(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(bias)) {
      Tensor& gb = t.grad_mut(bias);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
    }
  });
}

/// relu with subgradient 0 at 0.
inline Var relu(Var a) {
  return detail::unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Var sigmoid(Var a) {
  return detail::unary(
      a, [](double x) { return sigmoid(x); },
      [](double x, double) {
        const double s = sigmoid(x);
        return s * (1.0 - s);
      });
}

/// Sum over columns: [m x n] -> [m].
inline Var row_sum(Var a) {
  const Tensor& av = a.value();
  detail::require_matrix(av, "row_sum");
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out({m});
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += av(i, j);
    out[i] = s;
  }
  return a.tape()->record(std::move(out), {a}, [a, m, n](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_mut(a);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[i];
  });
}

/// Euclidean norm of each row: [m x n] -> [m]. The gradient at a zero row is
/// taken to be zero.
inline Var row_l2norm(Var a) {
  const Tensor& av = a.value();
  detail::require_matrix(av, "row_l2norm");
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out({m});
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += av(i, j) * av(i, j);
    out[i] = std::sqrt(s);
  }
  return a.tape()->record(std::move(out), {a}, [a, m, n](Tape& t, const Tensor& g) {
    const Tensor& x = t.value(a);
    Tensor& ga = t.grad_mut(a);
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += x(i, j) * x(i, j);
      const double norm = std::sqrt(s);
      if (norm == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[i] * x(i, j) / norm;
    }
  });
}

inline Var reshape(Var a, Shape shape) {
  Tensor out(std::move(shape), a.value().vec());
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_mut(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

/// Horizontal concatenation of matrices with equal row counts.
inline Var concat_cols(std::span<const Var> parts) {
  detail::require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t m = parts[0].value().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (Var p : parts) {
    detail::require_matrix(p.value(), "concat_cols");
    detail::require(p.value().rows() == m, "concat_cols: row count mismatch");
    widths.push_back(p.value().cols());
    total += widths.back();
  }
  Tensor out({m, total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(pv.data() + i * widths[k], widths[k], out.data() + i * total + off);
    off += widths[k];
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return parts[0].tape()->record(
      std::move(out), ps, [ps, widths, m, total](Tape& t, const Tensor& g) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < ps.size(); ++k) {
          if (t.requires_grad(ps[k])) {
            Tensor& gp = t.grad_mut(ps[k]);
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t j = 0; j < widths[k]; ++j)
                gp[i * widths[k] + j] += g[i * total + off + j];
          }
          off += widths[k];
        }
      });
}

inline Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

/// Vertical concatenation of matrices with equal column counts.
inline Var concat_rows(std::span<const Var> parts) {
  detail::require(!parts.empty(), "concat_rows: no inputs");
  const std::size_t n = parts[0].value().cols();
  std::size_t total = 0;
  for (Var p : parts) {
    detail::require_matrix(p.value(), "concat_rows");
    detail::require(p.value().cols() == n, "concat_rows: column count mismatch");
    total += p.value().rows();
  }
  Tensor out({total, n});
  std::size_t off = 0;
  for (Var p : parts) {
    std::copy(p.value().values().begin(), p.value().values().end(), out.data() + off);
    off += p.value().size();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return parts[0].tape()->record(std::move(out), ps, [ps](Tape& t, const Tensor& g) {
    std::size_t off = 0;
    for (Var p : ps) {
      const std::size_t sz = t.value(p).size();
      if (t.requires_grad(p)) {
        Tensor& gp = t.grad_mut(p);
        for (std::size_t i = 0; i < sz; ++i) gp[i] += g[off + i];
      }
      off += sz;
    }
  });
}

/// out[i] = a[idx[i]].
inline Var gather_rows(Var a, std::vector<std::size_t> idx) {
  const Tensor& av = a.value();
  detail::require_matrix(av, "gather_rows");
  const std::size_t n = av.cols();
  Tensor out({idx.size(), n});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    detail::require(idx[i] < av.rows(), "gather_rows: index out of range");
    std::copy_n(av.data() + idx[i] * n, n, out.data() + i * n);
  }
  return a.tape()->record(std::move(out), {a}, [a, idx = std::move(idx), n](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_mut(a);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < n; ++j) ga[idx[i] * n + j] += g[i * n + j];
  });
}

/// out has `total_rows` rows; row idx[i] receives the sum of a[i] over all i
/// mapping to it. Rows nobody maps to are zero.
inline Var scatter_rows(Var a, std::vector<std::size_t> idx, std::size_t total_rows) {
  const Tensor& av = a.value();
  detail::require_matrix(av, "scatter_rows");
  detail::require(idx.size() == av.rows(), "scatter_rows: index count mismatch");
  const std::size_t n = av.cols();
  Tensor out({total_rows, n});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    detail::require(idx[i] < total_rows, "scatter_rows: index out of range");
    for (std::size_t j = 0; j < n; ++j) out(idx[i], j) += av(i, j);
  }
  return a.tape()->record(std::move(out), {a}, [a, idx = std::move(idx), n](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_mut(a);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[idx[i] * n + j];
  });
}

/// Compressed row lists: segment s covers indices[offsets[s] .. offsets[s+1]).
struct Segments {
  std::vector<std::size_t> offsets{0};
  std::vector<std::size_t> indices;

  std::size_t count() const noexcept { return offsets.size() - 1; }
  void add(std::span<const std::size_t> rows) {
    indices.insert(indices.end(), rows.begin(), rows.end());
    offsets.push_back(indices.size());
  }
};

/// out[s] = mean of a[indices in segment s]; empty segments give zero rows.
inline Var segment_mean(Var a, std::shared_ptr<const Segments> seg) {
  const Tensor& av = a.value();
  detail::require_matrix(av, "segment_mean");
  const std::size_t n = av.cols();
  const std::size_t s_count = seg->count();
  Tensor out({s_count, n});
  for (std::size_t s = 0; s < s_count; ++s) {
    const std::size_t lo = seg->offsets[s], hi = seg->offsets[s + 1];
    if (lo == hi) continue;
    double* o = out.data() + s * n;
    for (std::size_t p = lo; p < hi; ++p) {
      detail::require(seg->indices[p] < av.rows(), "segment_mean: index out of range");
      const double* r = av.data() + seg->indices[p] * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += r[j];
    }
    const double inv = 1.0 / static_cast<double>(hi - lo);
    for (std::size_t j = 0; j < n; ++j) o[j] *= inv;
  }
  return a.tape()->record(std::move(out), {a}, [a, seg, n](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_mut(a);
    for (std::size_t s = 0; s < seg->count(); ++s) {
      const std::size_t lo = seg->offsets[s], hi = seg->offsets[s + 1];
      if (lo == hi) continue;
      const double inv = 1.0 / static_cast<double>(hi - lo);
      for (std::size_t p = lo; p < hi; ++p)
        for (std::size_t j = 0; j < n; ++j) ga[seg->indices[p] * n + j] += g[s * n + j] * inv;
    }
  });
}

inline Var sum(Var a) {
  double s = 0.0;
  for (double x : a.value().values()) s += x;
  return a.tape()->record(Tensor::scalar(s), {a}, [a](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_mut(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
  });
}

inline Var mean(Var a) {
  const std::size_t n = a.value().size();
  detail::require(n > 0, "mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

/// Mean squared error; target may be a constant or a tracked value.
inline Var mse(Var pred, Var target) {
  const Tensor& p = pred.value();
  const Tensor& y = target.value();
  detail::require(p.size() == y.size() && p.size() > 0,
                  "mse: " + shape_str(p.shape()) + " vs " + shape_str(y.shape()));
  const double n = static_cast<double>(p.size());
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - y[i]) * (p[i] - y[i]);
  detail::check_finite_scalar(s, "mse");
  return pred.tape()->record(Tensor::scalar(s / n), {pred, target}, [pred, target, n](Tape& t, const Tensor& g) {
    const Tensor& p = t.value(pred);
    const Tensor& y = t.value(target);
    if (t.requires_grad(pred)) {
      Tensor& gp = t.grad_mut(pred);
      for (std::size_t i = 0; i < p.size(); ++i) gp[i] += g[0] * 2.0 * (p[i] - y[i]) / n;
    }
    if (t.requires_grad(target)) {
      Tensor& gy = t.grad_mut(target);
      for (std::size_t i = 0; i < p.size(); ++i) gy[i] -= g[0] * 2.0 * (p[i] - y[i]) / n;
    }
  });
}

/// Mean binary cross-entropy of probabilities against 0/1 labels.
inline Var bce(Var prob, const Tensor& labels) {
  const Tensor& p = prob.value();
  detail::require(p.size() == labels.size() && p.size() > 0, "bce: size mismatch");
  const double n = static_cast<double>(p.size());
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    s -= labels[i] * std::log(p[i]) + (1.0 - labels[i]) * std::log1p(-p[i]);
  detail::check_finite_scalar(s, "bce");
  return prob.tape()->record(Tensor::scalar(s / n), {prob}, [prob, labels, n](Tape& t, const Tensor& g) {
    const Tensor& p = t.value(prob);
    Tensor& gp = t.grad_mut(prob);
    for (std::size_t i = 0; i < p.size(); ++i)
      gp[i] += g[0] * (-labels[i] / p[i] + (1.0 - labels[i]) / (1.0 - p[i])) / n;
  });
}

/// bce(sigmoid(logits), labels) evaluated without forming the probabilities.
inline Var bce_with_logits(Var logits, const Tensor& labels) {
  const Tensor& x = logits.value();
  detail::require(x.size() == labels.size() && x.size() > 0, "bce_with_logits: size mismatch");
  const double n = static_cast<double>(x.size());
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    s += std::max(x[i], 0.0) - x[i] * labels[i] + std::log1p(std::exp(-std::abs(x[i])));
  detail::check_finite_scalar(s, "bce_with_logits");
  return logits.tape()->record(Tensor::scalar(s / n), {logits}, [logits, labels, n](Tape& t, const Tensor& g) {
    const Tensor& x = t.value(logits);
    Tensor& gx = t.grad_mut(logits);
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g[0] * (sigmoid(x[i]) - labels[i]) / n;
  });
}

}  // namespace otter::num
