// Dense tensors with a reverse-mode gradient tape.
//
// Everything in the model is a matrix: token streams are [tokens x width],
// scalars are [1 x 1]. Storage is row-major Eigen; there are no views, every
// op produces a fresh value on the tape.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mosaic {

using Index = Eigen::Index;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Matrix = MatrixX<double>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::string shape_string(Index rows, Index cols) {
  return "[" + std::to_string(rows) + ", " + std::to_string(cols) + "]";
}

template <typename Derived>
std::string shape_string(const Eigen::MatrixBase<Derived>& m) {
  return shape_string(m.rows(), m.cols());
}

/// A named trainable tensor. `grad` always has the shape of `value`.
template <typename Scalar>
struct BasicParameter {
  std::string name;
  MatrixX<Scalar> value;
  MatrixX<Scalar> grad;
  bool requires_grad = true;

  BasicParameter() = default;
  BasicParameter(std::string n, MatrixX<Scalar> v)
      : name(std::move(n)), value(std::move(v)), grad(MatrixX<Scalar>::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

using Parameter = BasicParameter<double>;

template <typename Scalar>
class BasicTape;

/// Handle to a value recorded on a tape. Cheap to copy; valid while the tape lives.
template <typename Scalar>
class BasicVar {
 public:
  BasicVar() = default;
  BasicVar(BasicTape<Scalar>* tape, std::size_t index) : tape_(tape), index_(index) {}

  const MatrixX<Scalar>& value() const { return tape_->value(index_); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Scalar item() const {
    if (rows() != 1 || cols() != 1) {
      throw ShapeError("item: expected scalar, got " + shape_string(rows(), cols()));
    }
    return value()(0, 0);
  }
  bool requires_grad() const { return tape_->needs_grad(index_); }

  BasicTape<Scalar>& tape() const { return *tape_; }
  std::size_t index() const { return index_; }

 private:
  BasicTape<Scalar>* tape_ = nullptr;
  std::size_t index_ = 0;
};

template <typename Scalar>
class BasicTape {
 public:
  using Mat = MatrixX<Scalar>;
  using Var = BasicVar<Scalar>;
  /// Reads the output gradient of node `self` and accumulates into its parents.
  using Backward = std::function<void(BasicTape&, std::size_t self)>;

  BasicTape() = default;
  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;

  Var constant(Mat value) {
    nodes_.push_back(Node{std::move(value), Mat(), false, nullptr, nullptr});
    return Var(this, nodes_.size() - 1);
  }

  /// Leaf bound to a parameter; backward() accumulates into `p.grad`.
  Var parameter(BasicParameter<Scalar>& p) {
    nodes_.push_back(Node{p.value, Mat(), p.requires_grad, nullptr, &p});
    return Var(this, nodes_.size() - 1);
  }

  Var record(Mat value, std::initializer_list<Var> parents, Backward backward) {
    bool needs = false;
    for (const Var& p : parents) {
      check_owned(p);
      needs = needs || nodes_[p.index()].needs_grad;
    }
    nodes_.push_back(Node{std::move(value), Mat(), needs, needs ? std::move(backward) : nullptr, nullptr});
    return Var(this, nodes_.size() - 1);
  }

  Var record(Mat value, std::span<const Var> parents, Backward backward) {
    bool needs = false;
    for (const Var& p : parents) {
      check_owned(p);
      needs = needs || nodes_[p.index()].needs_grad;
    }
    nodes_.push_back(Node{std::move(value), Mat(), needs, needs ? std::move(backward) : nullptr, nullptr});
    return Var(this, nodes_.size() - 1);
  }

  const Mat& value(std::size_t i) const { return nodes_[i].value; }
  bool needs_grad(std::size_t i) const { return nodes_[i].needs_grad; }

  /// Output gradient of node `i`; zero-sized when nothing flowed into it.
  const Mat& grad(std::size_t i) const { return nodes_[i].grad; }
  const Mat& grad(const Var& v) const { return grad(v.index()); }

  template <typename Derived>
  void accumulate(std::size_t i, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[i];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  /// Reverse sweep from a scalar loss. Each node is visited once; the tape
  /// is spent afterwards.
  void backward(const Var& loss) {
    check_owned(loss);
    const Mat& lv = nodes_[loss.index()].value;
    if (lv.rows() != 1 || lv.cols() != 1) {
      throw ContractError("backward: loss must be scalar, got shape " + shape_string(lv.rows(), lv.cols()));
    }
    if (spent_) throw ContractError("backward: tape already consumed");
    spent_ = true;
    if (!nodes_[loss.index()].needs_grad) return;
    nodes_[loss.index()].grad = Mat::Ones(1, 1);
    for (std::size_t i = loss.index() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.size() == 0) continue;
      if (n.parameter != nullptr) {
        n.parameter->grad += n.grad;
      } else if (n.backward) {
        n.backward(*this, i);
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad;
    Backward backward;
    BasicParameter<Scalar>* parameter;
  };

  void check_owned(const Var& v) const {
    if (&v.tape() != this || v.index() >= nodes_.size()) {
      throw ContractError("tape: variable does not belong to this tape");
    }
  }

  std::vector<Node> nodes_;
  bool spent_ = false;
};

using Tape = BasicTape<double>;
using Var = BasicVar<double>;

// ---------------------------------------------------------------------------
// Stateless kernels shared by the tape ops and by plain-value code paths.

/// Row-wise softmax with max subtraction.
template <typename Derived>
MatrixX<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& x) {
  using S = typename Derived::Scalar;
  MatrixX<S> out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const S m = x.row(r).maxCoeff();
    out.row(r) = (x.row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

/// Row-wise x / sqrt(mean(x^2) + eps).
template <typename Derived>
MatrixX<typename Derived::Scalar> rms_normalize_rows(const Eigen::MatrixBase<Derived>& x,
                                                     typename Derived::Scalar eps) {
  using S = typename Derived::Scalar;
  MatrixX<S> out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const S rms = std::sqrt(x.row(r).squaredNorm() / static_cast<S>(x.cols()) + eps);
    out.row(r) = x.row(r) / rms;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Differentiable ops.

namespace detail {
template <typename S>
void require_same_shape(const char* op, const BasicVar<S>& a, const BasicVar<S>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.rows(), a.cols()) + " vs " +
                     shape_string(b.rows(), b.cols()));
  }
}
}  // namespace detail

template <typename S>
BasicVar<S> detach(const BasicVar<S>& a) {
  return a.tape().constant(a.value());
}

template <typename S>
BasicVar<S> matmul(const BasicVar<S>& a, const BasicVar<S>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions disagree " + shape_string(a.rows(), a.cols()) + " x " +
                     shape_string(b.rows(), b.cols()));
  }
  const std::size_t ia = a.index(), ib = b.index();
  MatrixX<S> out = a.value() * b.value();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](BasicTape<S>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.needs_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.needs_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

template <typename S>
BasicVar<S> transpose(const BasicVar<S>& a) {
  const std::size_t ia = a.index();
  MatrixX<S> out = a.value().transpose();
  return a.tape().record(std::move(out), {a}, [ia](BasicTape<S>& t, std::size_t self) {
    t.accumulate(ia, t.grad(self).transpose());
  });
}

template <typename S>
BasicVar<S> add(const BasicVar<S>& a, const BasicVar<S>& b) {
  detail::require_same_shape("add", a, b);
  const std::size_t ia = a.index(), ib = b.index();
  MatrixX<S> out = a.value() + b.value();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](BasicTape<S>& t, std::size_t self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, t.grad(self));
  });
}

template <typename S>
BasicVar<S> sub(const BasicVar<S>& a, const BasicVar<S>& b) {
  detail::require_same_shape("sub", a, b);
  const std::size_t ia = a.index(), ib = b.index();
  MatrixX<S> out = a.value() - b.value();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](BasicTape<S>& t, std::size_t self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, -t.grad(self));
  });
}

/// Elementwise product.
template <typename S>
BasicVar<S> hadamard(const BasicVar<S>& a, const BasicVar<S>& b) {
  detail::require_same_shape("hadamard", a, b);
  const std::size_t ia = a.index(), ib = b.index();
  MatrixX<S> out = a.value().cwiseProduct(b.value());
  return a.tape().record(std::move(out), {a, b}, [ia, ib](BasicTape<S>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.needs_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
    if (t.needs_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
  });
}

template <typename S>
BasicVar<S> scale(const BasicVar<S>& a, S factor) {
  const std::size_t ia = a.index();
  MatrixX<S> out = a.value() * factor;
  return a.tape().record(std::move(out), {a}, [ia, factor](BasicTape<S>& t, std::size_t self) {
    t.accumulate(ia, t.grad(self) * factor);
  });
}

/// Adds a [1 x n] row to every row of `a`.
template <typename S>
BasicVar<S> add_row(const BasicVar<S>& a, const BasicVar<S>& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ShapeError("add_row: cannot broadcast " + shape_string(row.rows(), row.cols()) + " onto " +
                     shape_string(a.rows(), a.cols()));
  }
  const std::size_t ia = a.index(), ir = row.index();
  MatrixX<S> out = a.value().rowwise() + row.value().row(0);
  return a.tape().record(std::move(out), {a, row}, [ia, ir](BasicTape<S>& t, std::size_t self) {
    t.accumulate(ia, t.grad(self));
    if (t.needs_grad(ir)) t.accumulate(ir, t.grad(self).colwise().sum());
  });
}

template <typename S>
BasicVar<S> sum(const BasicVar<S>& a) {
  const std::size_t ia = a.index();
  const Index r = a.rows(), c = a.cols();
  MatrixX<S> out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape().record(std::move(out), {a}, [ia, r, c](BasicTape<S>& t, std::size_t self) {
    t.accumulate(ia, MatrixX<S>::Constant(r, c, t.grad(self)(0, 0)));
  });
}

template <typename S>
BasicVar<S> mean(const BasicVar<S>& a) {
  return scale(sum(a), S(1) / static_cast<S>(a.value().size()));
}

/// Column means: [m x n] -> [1 x n].
template <typename S>
BasicVar<S> mean_rows(const BasicVar<S>& a) {
  if (a.rows() == 0) throw ShapeError("mean_rows: no rows");
  const std::size_t ia = a.index();
  const Index r = a.rows();
  MatrixX<S> out = a.value().colwise().mean();
  return a.tape().record(std::move(out), {a}, [ia, r](BasicTape<S>& t, std::size_t self) {
    MatrixX<S> g = t.grad(self).replicate(r, 1) / static_cast<S>(r);
    t.accumulate(ia, g);
  });
}

template <typename S>
BasicVar<S> softmax_rows(const BasicVar<S>& a) {
  const std::size_t ia = a.index();
  MatrixX<S> out = softmax_rows(a.value());
  return a.tape().record(std::move(out), {a}, [ia](BasicTape<S>& t, std::size_t self) {
    const auto& y = t.value(self);
    const auto& g = t.grad(self);
    Eigen::Matrix<S, Eigen::Dynamic, 1> dot = g.cwiseProduct(y).rowwise().sum();
    MatrixX<S> gx = y.cwiseProduct(g - dot.replicate(1, g.cols()));
    t.accumulate(ia, gx);
  });
}

/// Divides each row by its sum. Rows must have nonzero sums.
template <typename S>
BasicVar<S> normalize_l1_rows(const BasicVar<S>& a) {
  const std::size_t ia = a.index();
  Eigen::Matrix<S, Eigen::Dynamic, 1> sums = a.value().rowwise().sum();
  for (Index r = 0; r < sums.size(); ++r) {
    if (sums(r) == S(0)) throw ContractError("normalize_l1_rows: row " + std::to_string(r) + " sums to zero");
  }
  MatrixX<S> out = a.value().array().colwise() / sums.array();
  return a.tape().record(std::move(out), {a}, [ia, sums](BasicTape<S>& t, std::size_t self) {
    const auto& y = t.value(self);
    const auto& g = t.grad(self);
    Eigen::Matrix<S, Eigen::Dynamic, 1> dot = g.cwiseProduct(y).rowwise().sum();
    MatrixX<S> gx = (g - dot.replicate(1, g.cols())).array().colwise() / sums.array();
    t.accumulate(ia, gx);
  });
}

/// log(max(x, floor)); the gradient is zero where the floor is active.
template <typename S>
BasicVar<S> log_floor(const BasicVar<S>& a, S floor) {
  const std::size_t ia = a.index();
  MatrixX<S> out = a.value().cwiseMax(floor).array().log().matrix();
  return a.tape().record(std::move(out), {a}, [ia, floor](BasicTape<S>& t, std::size_t self) {
    const auto& x = t.value(ia);
    MatrixX<S> gx = (x.array() > floor).select(t.grad(self).array() / x.array(), S(0)).matrix();
    t.accumulate(ia, gx);
  });
}

/// Tanh-approximated GELU.
template <typename S>
BasicVar<S> gelu(const BasicVar<S>& a) {
  const std::size_t ia = a.index();
  const S c = std::sqrt(S(2) / std::numbers::pi_v<S>);
  MatrixX<S> out = a.value().unaryExpr([c](S x) { return S(0.5) * x * (S(1) + std::tanh(c * (x + S(0.044715) * x * x * x))); });
  return a.tape().record(std::move(out), {a}, [ia, c](BasicTape<S>& t, std::size_t self) {
    MatrixX<S> d = t.value(ia).unaryExpr([c](S x) {
      const S th = std::tanh(c * (x + S(0.044715) * x * x * x));
      return S(0.5) * (S(1) + th) + S(0.5) * x * (S(1) - th * th) * c * (S(1) + S(3) * S(0.044715) * x * x);
    });
    t.accumulate(ia, t.grad(self).cwiseProduct(d));
  });
}

/// Parameter-free RMS normalization of each row.
template <typename S>
BasicVar<S> rms_norm_rows(const BasicVar<S>& a, S eps = S(1e-6)) {
  const std::size_t ia = a.index();
  const Index n = a.cols();
  Eigen::Matrix<S, Eigen::Dynamic, 1> rms(a.rows());
  for (Index r = 0; r < a.rows(); ++r) rms(r) = std::sqrt(a.value().row(r).squaredNorm() / static_cast<S>(n) + eps);
  MatrixX<S> out = a.value().array().colwise() / rms.array();
  return a.tape().record(std::move(out), {a}, [ia, rms, n](BasicTape<S>& t, std::size_t self) {
    const auto& y = t.value(self);
    const auto& g = t.grad(self);
    Eigen::Matrix<S, Eigen::Dynamic, 1> dot = g.cwiseProduct(y).rowwise().sum() / static_cast<S>(n);
    MatrixX<S> gx = (g - y.cwiseProduct(dot.replicate(1, n))).array().colwise() / rms.array();
    t.accumulate(ia, gx);
  });
}

template <typename S>
BasicVar<S> slice_rows(const BasicVar<S>& a, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > a.rows()) {
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of bounds for " + shape_string(a.rows(), a.cols()));
  }
  const std::size_t ia = a.index();
  const Index r = a.rows(), c = a.cols();
  MatrixX<S> out = a.value().middleRows(begin, count);
  return a.tape().record(std::move(out), {a}, [ia, begin, count, r, c](BasicTape<S>& t, std::size_t self) {
    MatrixX<S> g = MatrixX<S>::Zero(r, c);
    g.middleRows(begin, count) = t.grad(self);
    t.accumulate(ia, g);
  });
}

template <typename S>
BasicVar<S> slice_cols(const BasicVar<S>& a, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > a.cols()) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of bounds for " + shape_string(a.rows(), a.cols()));
  }
  const std::size_t ia = a.index();
  const Index r = a.rows(), c = a.cols();
  MatrixX<S> out = a.value().middleCols(begin, count);
  return a.tape().record(std::move(out), {a}, [ia, begin, count, r, c](BasicTape<S>& t, std::size_t self) {
    MatrixX<S> g = MatrixX<S>::Zero(r, c);
    g.middleCols(begin, count) = t.grad(self);
    t.accumulate(ia, g);
  });
}

template <typename S>
BasicVar<S> concat_rows(std::span<const BasicVar<S>> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const Index c = parts.front().cols();
  Index total = 0;
  for (const auto& p : parts) {
    if (p.cols() != c) {
      throw ShapeError("concat_rows: width mismatch " + shape_string(parts.front().rows(), c) + " vs " +
                       shape_string(p.rows(), p.cols()));
    }
    total += p.rows();
  }
  MatrixX<S> out(total, c);
  std::vector<std::pair<std::size_t, Index>> spans;
  Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    spans.emplace_back(p.index(), p.rows());
    at += p.rows();
  }
  return parts.front().tape().record(std::move(out), parts, [spans](BasicTape<S>& t, std::size_t self) {
    const auto& g = t.grad(self);
    Index off = 0;
    for (const auto& [idx, n] : spans) {
      if (t.needs_grad(idx)) t.accumulate(idx, g.middleRows(off, n));
      off += n;
    }
  });
}

template <typename S>
BasicVar<S> concat_cols(std::span<const BasicVar<S>> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const Index r = parts.front().rows();
  Index total = 0;
  for (const auto& p : parts) {
    if (p.rows() != r) {
      throw ShapeError("concat_cols: height mismatch " + shape_string(r, parts.front().cols()) + " vs " +
                       shape_string(p.rows(), p.cols()));
    }
    total += p.cols();
  }
  MatrixX<S> out(r, total);
  std::vector<std::pair<std::size_t, Index>> spans;
  Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    spans.emplace_back(p.index(), p.cols());
    at += p.cols();
  }
  return parts.front().tape().record(std::move(out), parts, [spans](BasicTape<S>& t, std::size_t self) {
    const auto& g = t.grad(self);
    Index off = 0;
    for (const auto& [idx, n] : spans) {
      if (t.needs_grad(idx)) t.accumulate(idx, g.middleCols(off, n));
      off += n;
    }
  });
}

template <typename S>
BasicVar<S> concat_rows(std::initializer_list<BasicVar<S>> parts) {
  return concat_rows(std::span<const BasicVar<S>>(parts.begin(), parts.size()));
}

template <typename S>
BasicVar<S> concat_cols(std::initializer_list<BasicVar<S>> parts) {
  return concat_cols(std::span<const BasicVar<S>>(parts.begin(), parts.size()));
}

/// Picks rows by index (repeats allowed): result row i is a.row(rows[i]).
template <typename S>
BasicVar<S> gather_rows(const BasicVar<S>& a, std::vector<Index> rows) {
  MatrixX<S> out(static_cast<Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= a.rows()) {
      throw ShapeError("gather_rows: row " + std::to_string(rows[i]) + " out of range for " +
                       shape_string(a.rows(), a.cols()));
    }
    out.row(static_cast<Index>(i)) = a.value().row(rows[i]);
  }
  const std::size_t ia = a.index();
  const Index r = a.rows(), c = a.cols();
  return a.tape().record(std::move(out), {a}, [ia, r, c, rows = std::move(rows)](BasicTape<S>& t, std::size_t self) {
    const auto& g = t.grad(self);
    MatrixX<S> gx = MatrixX<S>::Zero(r, c);
    for (std::size_t i = 0; i < rows.size(); ++i) gx.row(rows[i]) += g.row(static_cast<Index>(i));
    t.accumulate(ia, gx);
  });
}

/// Picks individual cells: result is [n x 1] with entry i = a(cells[i]).
template <typename S>
BasicVar<S> gather_cells(const BasicVar<S>& a, std::vector<std::pair<Index, Index>> cells) {
  MatrixX<S> out(static_cast<Index>(cells.size()), 1);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto [r, c] = cells[i];
    if (r < 0 || r >= a.rows() || c < 0 || c >= a.cols()) {
      throw ShapeError("gather_cells: cell (" + std::to_string(r) + ", " + std::to_string(c) + ") out of range for " +
                       shape_string(a.rows(), a.cols()));
    }
    out(static_cast<Index>(i), 0) = a.value()(r, c);
  }
  const std::size_t ia = a.index();
  const Index rr = a.rows(), cc = a.cols();
  return a.tape().record(std::move(out), {a},
                         [ia, rr, cc, cells = std::move(cells)](BasicTape<S>& t, std::size_t self) {
                           const auto& g = t.grad(self);
                           MatrixX<S> gx = MatrixX<S>::Zero(rr, cc);
                           for (std::size_t i = 0; i < cells.size(); ++i) {
                             gx(cells[i].first, cells[i].second) += g(static_cast<Index>(i), 0);
                           }
                           t.accumulate(ia, gx);
                         });
}

/// Rotates consecutive pairs (2i, 2i+1) of every row by a fixed angle:
/// y0 = x0 cos - x1 sin, y1 = x0 sin + x1 cos. `cos`/`sin` are [rows x cols/2].
template <typename S>
BasicVar<S> rotate_pairs(const BasicVar<S>& a, MatrixX<S> cos, MatrixX<S> sin) {
  if (a.cols() % 2 != 0 || cos.rows() != a.rows() || cos.cols() != a.cols() / 2 || sin.rows() != cos.rows() ||
      sin.cols() != cos.cols()) {
    throw ShapeError("rotate_pairs: angle tables " + shape_string(cos.rows(), cos.cols()) + " do not fit " +
                     shape_string(a.rows(), a.cols()));
  }
  const auto& x = a.value();
  MatrixX<S> out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    for (Index p = 0; p < cos.cols(); ++p) {
      const S x0 = x(r, 2 * p), x1 = x(r, 2 * p + 1);
      out(r, 2 * p) = x0 * cos(r, p) - x1 * sin(r, p);
      out(r, 2 * p + 1) = x0 * sin(r, p) + x1 * cos(r, p);
    }
  }
  const std::size_t ia = a.index();
  return a.tape().record(std::move(out), {a},
                         [ia, cos = std::move(cos), sin = std::move(sin)](BasicTape<S>& t, std::size_t self) {
                           const auto& g = t.grad(self);
                           MatrixX<S> gx(g.rows(), g.cols());
                           for (Index r = 0; r < g.rows(); ++r) {
                             for (Index p = 0; p < cos.cols(); ++p) {
                               const S g0 = g(r, 2 * p), g1 = g(r, 2 * p + 1);
                               gx(r, 2 * p) = g0 * cos(r, p) + g1 * sin(r, p);
                               gx(r, 2 * p + 1) = -g0 * sin(r, p) + g1 * cos(r, p);
                             }
                           }
                           t.accumulate(ia, gx);
                         });
}

/// Gradient of -log softmax(logits)[target] with respect to the logits, in
/// closed form: softmax(logits) - onehot(target). Cross-checks the tape.
template <typename Derived>
MatrixX<typename Derived::Scalar> softmax_cross_entropy_grad(const Eigen::MatrixBase<Derived>& logits_row,
                                                             Index target) {
  if (logits_row.rows() != 1 || target < 0 || target >= logits_row.cols()) {
    throw ShapeError("softmax_cross_entropy_grad: bad row " + shape_string(logits_row) + " or target " +
                     std::to_string(target));
  }
  MatrixX<typename Derived::Scalar> g = softmax_rows(logits_row);
  g(0, target) -= 1;
  return g;
}

}  // namespace mosaic
