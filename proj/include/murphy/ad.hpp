// Reverse-mode differentiation over dense Eigen matrices.
//
// A Tape records every operation of one forward pass. Each node keeps its
// value and, after Tape::backward, the gradient of a 1x1 loss with respect
// to that value. Parameters are bound through Tape::parameter, which routes
// the node gradient into Parameter::grad once backward finishes.
#ifndef MURPHY_AD_HPP
#define MURPHY_AD_HPP

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace murphy {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

/// A trainable tensor and its accumulated gradient.
template <typename Scalar>
struct Parameter {
  Mat<Scalar> value;
  Mat<Scalar> grad;

  Parameter() = default;
  explicit Parameter(Mat<Scalar> v) : value(std::move(v)), grad(Mat<Scalar>::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

namespace ad {

template <typename Scalar>
class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Mat<Scalar>& value() const { return tape_->value(id_); }
  const Mat<Scalar>& grad() const { return tape_->grad(id_); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Tape<Scalar>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<Scalar>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename Scalar>
class Tape {
 public:
  using Matrix = Mat<Scalar>;
  using Backward = std::function<void(Tape&, const Matrix&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> constant(Matrix v) { return push_leaf(std::move(v), false, nullptr); }

  /// Leaf whose gradient is retained on the tape (read back with Var::grad).
  Var<Scalar> variable(Matrix v) { return push_leaf(std::move(v), true, nullptr); }

  Var<Scalar> parameter(Parameter<Scalar>& p) {
    if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) p.zero_grad();
    return push_leaf(p.value, true, &p.grad);
  }

  Var<Scalar> push(Matrix v, std::initializer_list<std::size_t> inputs, Backward fn) {
    return push(std::move(v), std::vector<std::size_t>(inputs), std::move(fn));
  }

  Var<Scalar> push(Matrix v, const std::vector<std::size_t>& inputs, Backward fn) {
    bool rg = false;
    for (auto i : inputs) rg = rg || nodes_[i].requires_grad;
    Node n;
    n.value = std::move(v);
    n.requires_grad = rg;
    if (rg) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var<Scalar>(this, nodes_.size() - 1);
  }

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  const Matrix& grad(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  template <typename Derived>
  void accumulate(std::size_t id, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

  /// Back-propagates from a 1x1 node. Parameter gradients are added to
  /// Parameter::grad (not overwritten), so callers zero them between steps.
  void backward(const Var<Scalar>& loss) {
    Node& root = nodes_.at(loss.id());
    if (root.value.rows() != 1 || root.value.cols() != 1)
      throw std::invalid_argument("backward: loss must be 1x1");
    if (!root.requires_grad) return;
    root.grad = Matrix::Ones(1, 1);
    for (std::size_t k = loss.id() + 1; k-- > 0;) {
      Node& n = nodes_[k];
      if (!n.requires_grad || n.grad.size() == 0 || !n.backward) continue;
      n.backward(*this, n.grad);
    }
    for (auto& n : nodes_)
      if (n.sink != nullptr && n.grad.size() != 0) *n.sink += n.grad;
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
    Matrix* sink = nullptr;
  };

  Var<Scalar> push_leaf(Matrix v, bool rg, Matrix* sink) {
    Node n;
    n.value = std::move(v);
    n.requires_grad = rg;
    n.sink = sink;
    nodes_.push_back(std::move(n));
    return Var<Scalar>(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

namespace detail {
inline void require(bool ok, const char* op, const std::string& what) {
  if (!ok) throw std::invalid_argument(std::string(op) + ": " + what);
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and linear algebra

template <typename S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
  detail::require(a.cols() == b.rows(), "matmul", "inner dimensions differ");
  const auto ia = a.id(), ib = b.id();
  return a.tape().push(a.value() * b.value(), {ia, ib}, [ia, ib](Tape<S>& t, const Mat<S>& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

template <typename S>
Var<S> transpose(const Var<S>& a) {
  const auto ia = a.id();
  return a.tape().push(a.value().transpose(), {ia},
                       [ia](Tape<S>& t, const Mat<S>& g) { t.accumulate(ia, g.transpose()); });
}

template <typename S>
Var<S> operator+(const Var<S>& a, const Var<S>& b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "add", "shape mismatch");
  const auto ia = a.id(), ib = b.id();
  return a.tape().push(a.value() + b.value(), {ia, ib}, [ia, ib](Tape<S>& t, const Mat<S>& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

template <typename S>
Var<S> operator-(const Var<S>& a, const Var<S>& b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "sub", "shape mismatch");
  const auto ia = a.id(), ib = b.id();
  return a.tape().push(a.value() - b.value(), {ia, ib}, [ia, ib](Tape<S>& t, const Mat<S>& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, -g);
  });
}

template <typename S>
Var<S> scale(const Var<S>& a, S s) {
  const auto ia = a.id();
  return a.tape().push(a.value() * s, {ia}, [ia, s](Tape<S>& t, const Mat<S>& g) { t.accumulate(ia, g * s); });
}

/// Adds a 1 x n row to every row of a.
template <typename S>
Var<S> add_row(const Var<S>& a, const Var<S>& row) {
  detail::require(row.rows() == 1 && row.cols() == a.cols(), "add_row", "bias must be 1 x cols");
  const auto ia = a.id(), ir = row.id();
  Mat<S> v = a.value().rowwise() + row.value().row(0);
  return a.tape().push(std::move(v), {ia, ir}, [ia, ir](Tape<S>& t, const Mat<S>& g) {
    t.accumulate(ia, g);
    if (t.requires_grad(ir)) t.accumulate(ir, g.colwise().sum());
  });
}

template <typename S>
Var<S> hadamard(const Var<S>& a, const Var<S>& b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "hadamard", "shape mismatch");
  const auto ia = a.id(), ib = b.id();
  return a.tape().push(a.value().cwiseProduct(b.value()), {ia, ib}, [ia, ib](Tape<S>& t, const Mat<S>& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
    if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
  });
}

template <typename S>
Var<S> relu(const Var<S>& a) {
  const auto ia = a.id();
  Mat<S> v = a.value().cwiseMax(S(0));
  return a.tape().push(std::move(v), {ia}, [ia](Tape<S>& t, const Mat<S>& g) {
    t.accumulate(ia, ((t.value(ia).array() > S(0)).template cast<S>() * g.array()).matrix());
  });
}

template <typename S>
Var<S> sigmoid(const Var<S>& a) {
  const auto ia = a.id();
  Mat<S> v = (S(1) + (-a.value().array()).exp()).inverse().matrix();
  const std::size_t self = a.tape().size();
  return a.tape().push(std::move(v), {ia}, [ia, self](Tape<S>& t, const Mat<S>& g) {
    const auto& y = t.value(self).array();
    t.accumulate(ia, (g.array() * y * (S(1) - y)).matrix());
  });
}

template <typename S>
Var<S> tanh(const Var<S>& a) {
  const auto ia = a.id();
  Mat<S> v = a.value().array().tanh().matrix();
  const std::size_t self = a.tape().size();
  return a.tape().push(std::move(v), {ia}, [ia, self](Tape<S>& t, const Mat<S>& g) {
    const auto& y = t.value(self).array();
    t.accumulate(ia, (g.array() * (S(1) - y.square())).matrix());
  });
}

// ---------------------------------------------------------------------------
// Shape

template <typename S>
Var<S> concat_cols(const std::vector<Var<S>>& parts) {
  detail::require(!parts.empty(), "concat_cols", "no inputs");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    detail::require(p.rows() == rows, "concat_cols", "row counts differ");
    cols += p.cols();
  }
  Mat<S> v(rows, cols);
  std::vector<std::size_t> ids;
  std::vector<Eigen::Index> widths;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    v.middleCols(at, p.cols()) = p.value();
    ids.push_back(p.id());
    widths.push_back(p.cols());
    at += p.cols();
  }
  return parts.front().tape().push(std::move(v), ids, [ids, widths](Tape<S>& t, const Mat<S>& g) {
    Eigen::Index off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (t.requires_grad(ids[k])) t.accumulate(ids[k], g.middleCols(off, widths[k]));
      off += widths[k];
    }
  });
}

template <typename S>
Var<S> concat_rows(const std::vector<Var<S>>& parts) {
  detail::require(!parts.empty(), "concat_rows", "no inputs");
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    detail::require(p.cols() == cols, "concat_rows", "column counts differ");
    rows += p.rows();
  }
  Mat<S> v(rows, cols);
  std::vector<std::size_t> ids;
  std::vector<Eigen::Index> heights;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    v.middleRows(at, p.rows()) = p.value();
    ids.push_back(p.id());
    heights.push_back(p.rows());
    at += p.rows();
  }
  return parts.front().tape().push(std::move(v), ids, [ids, heights](Tape<S>& t, const Mat<S>& g) {
    Eigen::Index off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (t.requires_grad(ids[k])) t.accumulate(ids[k], g.middleRows(off, heights[k]));
      off += heights[k];
    }
  });
}

template <typename S>
Var<S> slice_cols(const Var<S>& a, Eigen::Index start, Eigen::Index n) {
  detail::require(start >= 0 && n >= 0 && start + n <= a.cols(), "slice_cols", "range out of bounds");
  const auto ia = a.id();
  const Eigen::Index rows = a.rows(), cols = a.cols();
  return a.tape().push(a.value().middleCols(start, n), {ia}, [=](Tape<S>& t, const Mat<S>& g) {
    Mat<S> full = Mat<S>::Zero(rows, cols);
    full.middleCols(start, n) = g;
    t.accumulate(ia, full);
  });
}

template <typename S>
Var<S> slice_rows(const Var<S>& a, Eigen::Index start, Eigen::Index n) {
  detail::require(start >= 0 && n >= 0 && start + n <= a.rows(), "slice_rows", "range out of bounds");
  const auto ia = a.id();
  const Eigen::Index rows = a.rows(), cols = a.cols();
  return a.tape().push(a.value().middleRows(start, n), {ia}, [=](Tape<S>& t, const Mat<S>& g) {
    Mat<S> full = Mat<S>::Zero(rows, cols);
    full.middleRows(start, n) = g;
    t.accumulate(ia, full);
  });
}

// ---------------------------------------------------------------------------
// Reductions and normalizations

template <typename S>
Var<S> sum(const Var<S>& a) {
  const auto ia = a.id();
  const Eigen::Index rows = a.rows(), cols = a.cols();
  Mat<S> v(1, 1);
  v(0, 0) = a.value().sum();
  return a.tape().push(std::move(v), {ia}, [=](Tape<S>& t, const Mat<S>& g) {
    t.accumulate(ia, Mat<S>::Constant(rows, cols, g(0, 0)));
  });
}

/// <a, w> for a constant weight matrix w; the usual random-projection loss.
template <typename S>
Var<S> inner(const Var<S>& a, const Mat<S>& w) {
  detail::require(a.rows() == w.rows() && a.cols() == w.cols(), "inner", "shape mismatch");
  const auto ia = a.id();
  Mat<S> v(1, 1);
  v(0, 0) = a.value().cwiseProduct(w).sum();
  return a.tape().push(std::move(v), {ia}, [ia, w](Tape<S>& t, const Mat<S>& g) { t.accumulate(ia, w * g(0, 0)); });
}

/// Softmax along each row.
template <typename S>
Mat<S> softmax_rows_value(const Mat<S>& x) {
  Mat<S> y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const S m = x.row(i).maxCoeff();
    y.row(i) = (x.row(i).array() - m).exp().matrix();
    y.row(i) /= y.row(i).sum();
  }
  return y;
}

template <typename S>
Var<S> softmax_rows(const Var<S>& a) {
  const auto ia = a.id();
  const std::size_t self = a.tape().size();
  return a.tape().push(softmax_rows_value<S>(a.value()), {ia}, [ia, self](Tape<S>& t, const Mat<S>& g) {
    const Mat<S>& y = t.value(self);
    Mat<S> dots = g.cwiseProduct(y).rowwise().sum();
    Mat<S> dx = y.cwiseProduct(g - dots.replicate(1, g.cols()));
    t.accumulate(ia, dx);
  });
}

/// Per-row layer normalization: (x - mean) / sqrt(var + eps) * gamma + beta,
/// with gamma and beta 1 x n.
template <typename S>
Var<S> layer_norm_rows(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta, S eps) {
  const Eigen::Index n = x.cols();
  detail::require(gamma.rows() == 1 && gamma.cols() == n && beta.rows() == 1 && beta.cols() == n, "layer_norm_rows",
                  "gamma/beta must be 1 x cols");
  const Mat<S>& xv = x.value();
  Mat<S> xhat(xv.rows(), n);
  Eigen::Matrix<S, Eigen::Dynamic, 1> inv_std(xv.rows());
  for (Eigen::Index i = 0; i < xv.rows(); ++i) {
    const S mean = xv.row(i).mean();
    const S var = (xv.row(i).array() - mean).square().mean();
    inv_std(i) = S(1) / std::sqrt(var + eps);
    xhat.row(i) = (xv.row(i).array() - mean) * inv_std(i);
  }
  Mat<S> y = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() + beta.value().row(0).array();
  const auto ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.tape().push(std::move(y), {ix, ig, ib}, [=](Tape<S>& t, const Mat<S>& g) {
    if (t.requires_grad(ig)) t.accumulate(ig, g.cwiseProduct(xhat).colwise().sum());
    if (t.requires_grad(ib)) t.accumulate(ib, g.colwise().sum());
    if (!t.requires_grad(ix)) return;
    const auto& gam = t.value(ig);
    Mat<S> dxhat = g.array().rowwise() * gam.row(0).array();
    Mat<S> dx(g.rows(), n);
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      const S m1 = dxhat.row(i).mean();
      const S m2 = dxhat.row(i).cwiseProduct(xhat.row(i)).mean();
      dx.row(i) = inv_std(i) * (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2);
    }
    t.accumulate(ix, dx);
  });
}

/// Pairwise cosine similarity of the rows of f. The diagonal is exactly 1;
/// a zero-norm row has similarity 0 with every other row.
template <typename S>
Var<S> cosine_similarity(const Var<S>& f) {
  const Mat<S>& fv = f.value();
  const Eigen::Index b = fv.rows();
  Eigen::Matrix<S, Eigen::Dynamic, 1> norms = fv.rowwise().norm();
  Mat<S> unit = Mat<S>::Zero(b, fv.cols());
  for (Eigen::Index i = 0; i < b; ++i)
    if (norms(i) > S(0)) unit.row(i) = fv.row(i) / norms(i);
  Mat<S> s = unit * unit.transpose();
  s.diagonal().setOnes();
  const auto iff = f.id();
  return f.tape().push(std::move(s), {iff}, [=](Tape<S>& t, const Mat<S>& g) {
    Mat<S> sym = g + g.transpose();
    sym.diagonal().setZero();
    Mat<S> dunit = sym * unit;
    Mat<S> df = Mat<S>::Zero(b, unit.cols());
    for (Eigen::Index i = 0; i < b; ++i) {
      if (norms(i) <= S(0)) continue;
      const S proj = unit.row(i).dot(dunit.row(i));
      df.row(i) = (dunit.row(i) - proj * unit.row(i)) / norms(i);
    }
    t.accumulate(iff, df);
  });
}

/// Mean softmax cross-entropy of row logits against integer targets.
template <typename S>
Var<S> cross_entropy(const Var<S>& logits, const std::vector<int>& targets) {
  const Mat<S>& z = logits.value();
  detail::require(static_cast<Eigen::Index>(targets.size()) == z.rows(), "cross_entropy", "one target per row");
  for (int y : targets)
    if (y < 0 || y >= z.cols()) throw std::out_of_range("cross_entropy: target out of range");
  Mat<S> p = softmax_rows_value<S>(z);
  S loss = 0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const S m = z.row(i).maxCoeff();
    const S lse = m + std::log((z.row(i).array() - m).exp().sum());
    loss += lse - z(i, targets[i]);
  }
  const S n = static_cast<S>(z.rows());
  Mat<S> v(1, 1);
  v(0, 0) = loss / n;
  const auto iz = logits.id();
  return logits.tape().push(std::move(v), {iz}, [=](Tape<S>& t, const Mat<S>& g) {
    Mat<S> d = p;
    for (Eigen::Index i = 0; i < d.rows(); ++i) d(i, targets[i]) -= S(1);
    t.accumulate(iz, d * (g(0, 0) / n));
  });
}

}  // namespace ad
}  // namespace murphy

#endif  // MURPHY_AD_HPP
