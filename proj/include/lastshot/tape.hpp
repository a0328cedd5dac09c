#pragma once

#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include <Eigen/Cholesky>

#include "lastshot/matrix.hpp"

namespace lastshot {

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid as long as the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t idx = 0;
  bool valid() const { return tape != nullptr; }
};

namespace tapeops {
enum class Op : std::uint8_t {
  Leaf,
  MatMul,
  Add,
  Sub,
  Mul,
  Scale,
  AddScalar,
  Relu,
  Tanh,
  Square,
  SoftmaxRows,
  RowSum,
  ColSum,
  SumAll,
  AddRowVec,
  AddColVec,
  RepeatRows,
  RepeatCols,
  Transpose,
  CeRows,
  KlVsConstRows,
  AppendOnesCol,
  DropLastCol,
  PadZeroColRight,
  RidgeSolve,
  SpdSolveFromPhi,
};
}  // namespace tapeops

/// Reverse-mode tape over a fixed primitive set. Evaluation is eager: every
/// operation computes its value when recorded. The backward pass emits new
/// tape nodes, so gradients are themselves differentiable (needed for exact
/// one-step meta-gradients).
class Tape {
 public:
  static constexpr std::uint32_t kNone =
      std::numeric_limits<std::uint32_t>::max();

  struct Node {
    tapeops::Op op;
    std::uint32_t a = kNone;
    std::uint32_t b = kNone;
    bool ta = false, tb = false;
    bool requires_grad = false;
    double scalar0 = 0.0;
    Matrix value;
    std::vector<int> labels;            // CeRows targets
    std::shared_ptr<const Matrix> aux;  // KL target probs, ReLU masks, ...
  };

  Tape() { nodes_.reserve(256); }

  std::size_t size() const { return nodes_.size(); }
  const Node& node(Var v) const { return nodes_[v.idx]; }
  const Matrix& value(Var v) const { return nodes_[v.idx].value; }

  /// Value of a 1x1 node; throws NumericError if non-finite.
  double scalar(Var v) const {
    const Matrix& m = value(v);
    if (m.rows != 1 || m.cols != 1)
      throw ShapeError("scalar: node is " + m.shape_str());
    double s = m.data[0];
    if (!std::isfinite(s))
      throw NumericError("non-finite scalar value: " + std::to_string(s));
    return s;
  }

  Var leaf(Matrix v, bool requires_grad = true) {
    Node n;
    n.op = tapeops::Op::Leaf;
    n.requires_grad = requires_grad;
    n.value = std::move(v);
    return push(std::move(n));
  }
  Var constant(Matrix v) { return leaf(std::move(v), false); }
  Var constant_scalar(double s) { return constant(Matrix::full(1, 1, s)); }

  Var matmul(Var a, Var b, bool ta = false, bool tb = false) {
    Node n;
    n.op = tapeops::Op::MatMul;
    n.a = a.idx;
    n.b = b.idx;
    n.ta = ta;
    n.tb = tb;
    n.value = lastshot::matmul(value(a), value(b), ta, tb);
    return push_binary(std::move(n), a, b);
  }

  Var add(Var a, Var b) {
    Node n;
    n.op = tapeops::Op::Add;
    n.value = lastshot::add(value(a), value(b));
    return push_binary(std::move(n), a, b);
  }

  Var sub(Var a, Var b) {
    Node n;
    n.op = tapeops::Op::Sub;
    n.value = lastshot::sub(value(a), value(b));
    return push_binary(std::move(n), a, b);
  }

  Var mul(Var a, Var b) {
    Node n;
    n.op = tapeops::Op::Mul;
    n.value = lastshot::hadamard(value(a), value(b));
    return push_binary(std::move(n), a, b);
  }

  Var scale(Var a, double s) {
    Node n;
    n.op = tapeops::Op::Scale;
    n.scalar0 = s;
    n.value = lastshot::scale(value(a), s);
    return push_unary(std::move(n), a);
  }

  Var add_scalar(Var a, double s) {
    Node n;
    n.op = tapeops::Op::AddScalar;
    n.scalar0 = s;
    n.value = value(a);
    for (double& x : n.value.data) x += s;
    return push_unary(std::move(n), a);
  }

  Var relu(Var a) {
    Node n;
    n.op = tapeops::Op::Relu;
    n.value = value(a);
    for (double& x : n.value.data) x = x > 0.0 ? x : 0.0;
    return push_unary(std::move(n), a);
  }

  Var tanh(Var a) {
    Node n;
    n.op = tapeops::Op::Tanh;
    n.value = value(a);
    for (double& x : n.value.data) x = std::tanh(x);
    return push_unary(std::move(n), a);
  }

  Var square(Var a) {
    Node n;
    n.op = tapeops::Op::Square;
    n.value = value(a);
    for (double& x : n.value.data) x *= x;
    return push_unary(std::move(n), a);
  }

  /// Row-wise softmax with max subtraction.
  Var softmax_rows(Var a) {
    Node n;
    n.op = tapeops::Op::SoftmaxRows;
    n.value = softmax_rows_value(value(a));
    return push_unary(std::move(n), a);
  }

  Var row_sum(Var a) {
    const Matrix& x = value(a);
    Node n;
    n.op = tapeops::Op::RowSum;
    n.value = Matrix(x.rows, 1);
    for (std::size_t i = 0; i < x.rows; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < x.cols; ++j) s += x.at(i, j);
      n.value.at(i, 0) = s;
    }
    return push_unary(std::move(n), a);
  }

  Var col_sum(Var a) {
    const Matrix& x = value(a);
    Node n;
    n.op = tapeops::Op::ColSum;
    n.value = Matrix(1, x.cols);
    for (std::size_t i = 0; i < x.rows; ++i)
      for (std::size_t j = 0; j < x.cols; ++j) n.value.at(0, j) += x.at(i, j);
    return push_unary(std::move(n), a);
  }

  Var sum_all(Var a) {
    const Matrix& x = value(a);
    double s = 0.0;
    for (double v : x.data) s += v;
    Node n;
    n.op = tapeops::Op::SumAll;
    n.value = Matrix::full(1, 1, s);
    return push_unary(std::move(n), a);
  }

  Var mean_all(Var a) {
    const Matrix& x = value(a);
    return scale(sum_all(a), 1.0 / static_cast<double>(x.size()));
  }

  /// a (NxC) + row vector r (1xC), broadcast over rows.
  Var add_rowvec(Var a, Var r) {
    const Matrix& x = value(a);
    const Matrix& rv = value(r);
    if (rv.rows != 1 || rv.cols != x.cols)
      throw ShapeError("add_rowvec: " + x.shape_str() + " + " + rv.shape_str());
    Node n;
    n.op = tapeops::Op::AddRowVec;
    n.value = x;
    for (std::size_t i = 0; i < x.rows; ++i)
      for (std::size_t j = 0; j < x.cols; ++j) n.value.at(i, j) += rv.at(0, j);
    return push_binary(std::move(n), a, r);
  }

  /// a (NxC) + column vector v (Nx1), broadcast over columns.
  Var add_colvec(Var a, Var v) {
    const Matrix& x = value(a);
    const Matrix& cv = value(v);
    if (cv.cols != 1 || cv.rows != x.rows)
      throw ShapeError("add_colvec: " + x.shape_str() + " + " + cv.shape_str());
    Node n;
    n.op = tapeops::Op::AddColVec;
    n.value = x;
    for (std::size_t i = 0; i < x.rows; ++i)
      for (std::size_t j = 0; j < x.cols; ++j) n.value.at(i, j) += cv.at(i, 0);
    return push_binary(std::move(n), a, v);
  }

  Var repeat_rows(Var a, std::size_t n_rows) {
    const Matrix& x = value(a);
    if (x.rows != 1) throw ShapeError("repeat_rows: input is " + x.shape_str());
    Node n;
    n.op = tapeops::Op::RepeatRows;
    n.value = Matrix(n_rows, x.cols);
    for (std::size_t i = 0; i < n_rows; ++i)
      for (std::size_t j = 0; j < x.cols; ++j) n.value.at(i, j) = x.at(0, j);
    return push_unary(std::move(n), a);
  }

  Var repeat_cols(Var a, std::size_t n_cols) {
    const Matrix& x = value(a);
    if (x.cols != 1) throw ShapeError("repeat_cols: input is " + x.shape_str());
    Node n;
    n.op = tapeops::Op::RepeatCols;
    n.value = Matrix(x.rows, n_cols);
    for (std::size_t i = 0; i < x.rows; ++i)
      for (std::size_t j = 0; j < n_cols; ++j) n.value.at(i, j) = x.at(i, 0);
    return push_unary(std::move(n), a);
  }

  Var transpose(Var a) {
    Node n;
    n.op = tapeops::Op::Transpose;
    n.value = lastshot::transpose(value(a));
    return push_unary(std::move(n), a);
  }

  /// Per-row cross entropy: out[i] = logsumexp(logits[i]) - logits[i][label].
  Var ce_rows(Var logits, std::vector<int> labels) {
    const Matrix& L = value(logits);
    if (labels.size() != L.rows)
      throw ShapeError("ce_rows: " + std::to_string(labels.size()) +
                       " labels for " + L.shape_str());
    Node n;
    n.op = tapeops::Op::CeRows;
    n.value = Matrix(L.rows, 1);
    for (std::size_t i = 0; i < L.rows; ++i) {
      int y = labels[i];
      if (y < 0 || static_cast<std::size_t>(y) >= L.cols)
        throw ShapeError("ce_rows: label " + std::to_string(y) +
                         " out of range for " + std::to_string(L.cols) +
                         " classes");
      n.value.at(i, 0) = row_logsumexp(L, i) - L.at(i, static_cast<std::size_t>(y));
    }
    n.labels = std::move(labels);
    return push_unary(std::move(n), logits);
  }

  /// Per-row KL(p || softmax(logits)) against a constant distribution p.
  Var kl_vs_const_rows(Var logits, std::shared_ptr<const Matrix> p) {
    const Matrix& L = value(logits);
    if (!p || p->rows != L.rows || p->cols != L.cols)
      throw ShapeError("kl_vs_const_rows: target shape mismatch");
    Node n;
    n.op = tapeops::Op::KlVsConstRows;
    n.value = Matrix(L.rows, 1);
    for (std::size_t i = 0; i < L.rows; ++i) {
      double lse = row_logsumexp(L, i);
      double kl = 0.0;
      for (std::size_t j = 0; j < L.cols; ++j) {
        double pj = p->at(i, j);
        if (pj > 0.0) kl += pj * (std::log(pj) - (L.at(i, j) - lse));
      }
      n.value.at(i, 0) = kl;
    }
    n.aux = std::move(p);
    return push_unary(std::move(n), logits);
  }

  Var append_ones_col(Var a) {
    const Matrix& x = value(a);
    Node n;
    n.op = tapeops::Op::AppendOnesCol;
    n.value = Matrix(x.rows, x.cols + 1);
    for (std::size_t i = 0; i < x.rows; ++i) {
      for (std::size_t j = 0; j < x.cols; ++j) n.value.at(i, j) = x.at(i, j);
      n.value.at(i, x.cols) = 1.0;
    }
    return push_unary(std::move(n), a);
  }

  Var drop_last_col(Var a) {
    const Matrix& x = value(a);
    if (x.cols < 1) throw ShapeError("drop_last_col: empty");
    Node n;
    n.op = tapeops::Op::DropLastCol;
    n.value = Matrix(x.rows, x.cols - 1);
    for (std::size_t i = 0; i < x.rows; ++i)
      for (std::size_t j = 0; j + 1 < x.cols; ++j) n.value.at(i, j) = x.at(i, j);
    return push_unary(std::move(n), a);
  }

  Var pad_zero_col_right(Var a) {
    const Matrix& x = value(a);
    Node n;
    n.op = tapeops::Op::PadZeroColRight;
    n.value = Matrix(x.rows, x.cols + 1);
    for (std::size_t i = 0; i < x.rows; ++i)
      for (std::size_t j = 0; j < x.cols; ++j) n.value.at(i, j) = x.at(i, j);
    return push_unary(std::move(n), a);
  }

  /// W = (Phi^T Phi + rho I)^-1 Phi^T Y, via Cholesky. Differentiable in Phi
  /// and Y through the adjoint rule.
  Var ridge_solve(Var phi, Var y, double rho) {
    if (rho <= 0.0) throw NumericError("ridge_solve: rho must be > 0");
    Node n;
    n.op = tapeops::Op::RidgeSolve;
    n.scalar0 = rho;
    n.value = ridge_solve_value(value(phi), value(y), rho);
    return push_binary(std::move(n), phi, y);
  }

  /// Gradient of `loss` (1x1) with respect to `wrt`. Nodes listed in `stop`
  /// receive their accumulated gradient but do not propagate further (used
  /// for partial derivatives w.r.t. derived parameters). The backward pass
  /// emits nodes, so the returned gradients can be differentiated again.
  std::vector<Var> grad(Var loss, const std::vector<Var>& wrt,
                        const std::vector<Var>& stop = {}) {
    const Matrix& lv = value(loss);
    if (lv.rows != 1 || lv.cols != 1)
      throw ShapeError("grad: loss must be 1x1, got " + lv.shape_str());
    std::unordered_set<std::uint32_t> stop_set;
    for (Var s : stop) stop_set.insert(s.idx);

    const std::uint32_t n0 = loss.idx + 1;
    std::vector<std::uint32_t> grad_of(n0, kNone);
    grad_of[loss.idx] = constant(Matrix::full(1, 1, 1.0)).idx;

    for (std::uint32_t i = loss.idx + 1; i-- > 0;) {
      if (grad_of[i] == kNone) continue;
      const Node& nd = nodes_[i];
      if (!nd.requires_grad) continue;
      if (nd.op == tapeops::Op::Leaf) continue;
      if (stop_set.count(i)) continue;
      Var g{this, grad_of[i]};
      Var self{this, i};
      emit_vjp(nd, self, g, grad_of);
    }

    std::vector<Var> out;
    out.reserve(wrt.size());
    for (Var w : wrt) {
      if (w.idx < n0 && grad_of[w.idx] != kNone) {
        out.push_back(Var{this, grad_of[w.idx]});
      } else {
        const Matrix& v = value(w);
        out.push_back(constant(Matrix::zeros(v.rows, v.cols)));
      }
    }
    return out;
  }

  /// Detached copy: same value, no gradient path.
  Var detach(Var a) { return constant(value(a)); }

  static Matrix softmax_rows_value(const Matrix& x) {
    Matrix s(x.rows, x.cols);
    for (std::size_t i = 0; i < x.rows; ++i) {
      double m = x.at(i, 0);
      for (std::size_t j = 1; j < x.cols; ++j) m = std::max(m, x.at(i, j));
      double z = 0.0;
      for (std::size_t j = 0; j < x.cols; ++j) {
        double e = std::exp(x.at(i, j) - m);
        s.at(i, j) = e;
        z += e;
      }
      for (std::size_t j = 0; j < x.cols; ++j) s.at(i, j) /= z;
    }
    return s;
  }

 private:
  std::vector<Node> nodes_;

  Var push(Node&& n) {
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
  }
  Var push_unary(Node&& n, Var a) {
    n.a = a.idx;
    n.requires_grad = nodes_[a.idx].requires_grad;
    return push(std::move(n));
  }
  Var push_binary(Node&& n, Var a, Var b) {
    n.a = a.idx;
    n.b = b.idx;
    n.requires_grad =
        nodes_[a.idx].requires_grad || nodes_[b.idx].requires_grad;
    return push(std::move(n));
  }

  static double row_logsumexp(const Matrix& L, std::size_t i) {
    double m = L.at(i, 0);
    for (std::size_t j = 1; j < L.cols; ++j) m = std::max(m, L.at(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < L.cols; ++j) z += std::exp(L.at(i, j) - m);
    return m + std::log(z);
  }

  static Matrix ridge_solve_value(const Matrix& phi, const Matrix& y,
                                  double rho) {
    if (phi.rows != y.rows)
      throw ShapeError("ridge_solve: Phi " + phi.shape_str() + " vs Y " +
                       y.shape_str());
    auto ephi = detail::as_eigen(phi);
    auto ey = detail::as_eigen(y);
    Eigen::MatrixXd m = ephi.transpose() * ephi;
    m.diagonal().array() += rho;
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() != Eigen::Success)
      throw NumericError("ridge_solve: Cholesky factorization failed");
    Eigen::MatrixXd w = llt.solve(ephi.transpose() * ey);
    Matrix out(phi.cols, y.cols);
    detail::as_eigen(out) = w;
    return out;
  }

  Matrix spd_solve_value(const Matrix& phi, const Matrix& rhs, double rho) {
    auto ephi = detail::as_eigen(phi);
    auto erhs = detail::as_eigen(rhs);
    Eigen::MatrixXd m = ephi.transpose() * ephi;
    m.diagonal().array() += rho;
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() != Eigen::Success)
      throw NumericError("spd_solve: Cholesky factorization failed");
    Eigen::MatrixXd s = llt.solve(erhs);
    Matrix out(rhs.rows, rhs.cols);
    detail::as_eigen(out) = s;
    return out;
  }

  Var spd_solve_from_phi(Var phi, Var rhs, double rho) {
    Node n;
    n.op = tapeops::Op::SpdSolveFromPhi;
    n.scalar0 = rho;
    n.value = spd_solve_value(value(phi), value(rhs), rho);
    return push_binary(std::move(n), phi, rhs);
  }

  bool wants_grad(std::uint32_t idx) const {
    return idx != kNone && nodes_[idx].requires_grad;
  }

  void accumulate(std::vector<std::uint32_t>& grad_of, std::uint32_t target,
                  Var contribution) {
    if (target >= grad_of.size()) return;  // node created during backward
    if (!nodes_[target].requires_grad) return;
    if (grad_of[target] == kNone) {
      grad_of[target] = contribution.idx;
    } else {
      grad_of[target] = add(Var{this, grad_of[target]}, contribution).idx;
    }
  }

  void emit_vjp(const Node& nd, Var self, Var g,
                std::vector<std::uint32_t>& grad_of) {
    using tapeops::Op;
    Var a{this, nd.a};
    Var b{this, nd.b};
    switch (nd.op) {
      case Op::Leaf:
        break;
      case Op::MatMul: {
        if (wants_grad(nd.a)) {
          Var ga;
          if (!nd.ta && !nd.tb)
            ga = matmul(g, b, false, true);
          else if (nd.ta && !nd.tb)
            ga = matmul(b, g, false, true);
          else if (!nd.ta && nd.tb)
            ga = matmul(g, b, false, false);
          else
            ga = matmul(b, g, true, true);
          accumulate(grad_of, nd.a, ga);
        }
        if (wants_grad(nd.b)) {
          Var gb;
          if (!nd.ta && !nd.tb)
            gb = matmul(a, g, true, false);
          else if (nd.ta && !nd.tb)
            gb = matmul(a, g, false, false);
          else if (!nd.ta && nd.tb)
            gb = matmul(g, a, true, false);
          else
            gb = matmul(g, a, true, true);
          accumulate(grad_of, nd.b, gb);
        }
        break;
      }
      case Op::Add:
        accumulate(grad_of, nd.a, g);
        accumulate(grad_of, nd.b, g);
        break;
      case Op::Sub:
        accumulate(grad_of, nd.a, g);
        if (wants_grad(nd.b)) accumulate(grad_of, nd.b, scale(g, -1.0));
        break;
      case Op::Mul:
        if (wants_grad(nd.a)) accumulate(grad_of, nd.a, mul(g, b));
        if (wants_grad(nd.b)) accumulate(grad_of, nd.b, mul(g, a));
        break;
      case Op::Scale:
        accumulate(grad_of, nd.a, scale(g, nd.scalar0));
        break;
      case Op::AddScalar:
        accumulate(grad_of, nd.a, g);
        break;
      case Op::Relu: {
        // Mask is locally constant (subgradient 0 at the kink).
        const Matrix& x = nodes_[nd.a].value;
        Matrix mask(x.rows, x.cols);
        for (std::size_t i = 0; i < x.size(); ++i)
          mask.data[i] = x.data[i] > 0.0 ? 1.0 : 0.0;
        accumulate(grad_of, nd.a, mul(g, constant(std::move(mask))));
        break;
      }
      case Op::Tanh: {
        Var one_minus_sq = add_scalar(scale(square(self), -1.0), 1.0);
        accumulate(grad_of, nd.a, mul(g, one_minus_sq));
        break;
      }
      case Op::Square:
        accumulate(grad_of, nd.a, scale(mul(g, a), 2.0));
        break;
      case Op::SoftmaxRows: {
        Var t = mul(g, self);
        Var per_row = row_sum(t);
        Var grad_in =
            mul(self, sub(g, repeat_cols(per_row, nd.value.cols)));
        accumulate(grad_of, nd.a, grad_in);
        break;
      }
      case Op::RowSum:
        accumulate(grad_of, nd.a, repeat_cols(g, nodes_[nd.a].value.cols));
        break;
      case Op::ColSum:
        accumulate(grad_of, nd.a, repeat_rows(g, nodes_[nd.a].value.rows));
        break;
      case Op::SumAll: {
        const Matrix& x = nodes_[nd.a].value;
        accumulate(grad_of, nd.a, repeat_rows(repeat_cols(g, x.cols), x.rows));
        break;
      }
      case Op::AddRowVec:
        accumulate(grad_of, nd.a, g);
        if (wants_grad(nd.b)) accumulate(grad_of, nd.b, col_sum(g));
        break;
      case Op::AddColVec:
        accumulate(grad_of, nd.a, g);
        if (wants_grad(nd.b)) accumulate(grad_of, nd.b, row_sum(g));
        break;
      case Op::RepeatRows:
        accumulate(grad_of, nd.a, col_sum(g));
        break;
      case Op::RepeatCols:
        accumulate(grad_of, nd.a, row_sum(g));
        break;
      case Op::Transpose:
        accumulate(grad_of, nd.a, transpose(g));
        break;
      case Op::CeRows: {
        const Matrix& L = nodes_[nd.a].value;
        Var sm = softmax_rows(a);
        Matrix onehot(L.rows, L.cols);
        for (std::size_t i = 0; i < L.rows; ++i)
          onehot.at(i, static_cast<std::size_t>(nd.labels[i])) = 1.0;
        Var diff = sub(sm, constant(std::move(onehot)));
        accumulate(grad_of, nd.a, mul(diff, repeat_cols(g, L.cols)));
        break;
      }
      case Op::KlVsConstRows: {
        const Matrix& L = nodes_[nd.a].value;
        Var sm = softmax_rows(a);
        Var diff = sub(sm, constant(*nd.aux));
        accumulate(grad_of, nd.a, mul(diff, repeat_cols(g, L.cols)));
        break;
      }
      case Op::AppendOnesCol:
        accumulate(grad_of, nd.a, drop_last_col(g));
        break;
      case Op::DropLastCol:
        accumulate(grad_of, nd.a, pad_zero_col_right(g));
        break;
      case Op::PadZeroColRight:
        accumulate(grad_of, nd.a, drop_last_col(g));
        break;
      case Op::RidgeSolve: {
        // W = M^-1 Phi^T Y with M = Phi^T Phi + rho I.
        // grad_Y = Phi S, grad_Phi = Y S^T - Phi (W S^T + S W^T), S = M^-1 g.
        Var s = spd_solve_from_phi(a, g, nd.scalar0);
        if (wants_grad(nd.b)) accumulate(grad_of, nd.b, matmul(a, s));
        if (wants_grad(nd.a)) {
          Var term1 = matmul(b, s, false, true);
          Var inner = add(matmul(self, s, false, true),
                          matmul(s, self, false, true));
          accumulate(grad_of, nd.a, sub(term1, matmul(a, inner)));
        }
        break;
      }
      case Op::SpdSolveFromPhi:
        throw NumericError(
            "spd_solve_from_phi: gradient not implemented (third-order "
            "differentiation is unsupported)");
    }
  }
};

}  // namespace lastshot
