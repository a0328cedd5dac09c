#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace lastshot {

class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

class EpisodeError : public std::runtime_error {
 public:
  explicit EpisodeError(const std::string& what) : std::runtime_error(what) {}
};

class ProtocolError : public std::runtime_error {
 public:
  explicit ProtocolError(const std::string& what) : std::runtime_error(what) {}
};

class TrainingError : public std::runtime_error {
 public:
  explicit TrainingError(const std::string& what) : std::runtime_error(what) {}
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

/// Dense row-major matrix of doubles. Row/column vectors are 1xN / Nx1.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  // row-major, rows*cols entries

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> d)
      : rows(r), cols(c), data(std::move(d)) {
    if (data.size() != rows * cols)
      throw ShapeError("Matrix: data size " + std::to_string(data.size()) +
                       " != " + std::to_string(rows) + "x" +
                       std::to_string(cols));
  }

  static Matrix zeros(std::size_t r, std::size_t c) { return Matrix(r, c); }
  static Matrix full(std::size_t r, std::size_t c, double v) {
    Matrix m(r, c);
    for (double& x : m.data) x = v;
    return m;
  }
  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
  }
  static Matrix row_vector(std::initializer_list<double> v) {
    return Matrix(1, v.size(), std::vector<double>(v));
  }
  static Matrix col_vector(std::initializer_list<double> v) {
    return Matrix(v.size(), 1, std::vector<double>(v));
  }

  double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  std::size_t size() const { return data.size(); }
  bool same_shape(const Matrix& o) const {
    return rows == o.rows && cols == o.cols;
  }
  std::string shape_str() const {
    return std::to_string(rows) + "x" + std::to_string(cols);
  }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  double* row_ptr(std::size_t i) { return data.data() + i * cols; }
  const double* row_ptr(std::size_t i) const { return data.data() + i * cols; }
};

namespace detail {
using EigenMap =
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                             Eigen::RowMajor>>;
using ConstEigenMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                   Eigen::RowMajor>>;

inline ConstEigenMap as_eigen(const Matrix& m) {
  return ConstEigenMap(m.data.data(), static_cast<Eigen::Index>(m.rows),
                       static_cast<Eigen::Index>(m.cols));
}
inline EigenMap as_eigen(Matrix& m) {
  return EigenMap(m.data.data(), static_cast<Eigen::Index>(m.rows),
                  static_cast<Eigen::Index>(m.cols));
}
}  // namespace detail

/// C = op(A) * op(B) where op is optional transposition.
inline Matrix matmul(const Matrix& a, const Matrix& b, bool ta = false,
                     bool tb = false) {
  const std::size_t ar = ta ? a.cols : a.rows;
  const std::size_t ac = ta ? a.rows : a.cols;
  const std::size_t br = tb ? b.cols : b.rows;
  const std::size_t bc = tb ? b.rows : b.cols;
  if (ac != br)
    throw ShapeError("matmul: inner dims " + std::to_string(ac) + " vs " +
                     std::to_string(br) + " (A " + a.shape_str() + (ta ? "^T" : "") +
                     ", B " + b.shape_str() + (tb ? "^T" : "") + ")");
  Matrix c(ar, bc);
  auto ea = detail::as_eigen(a);
  auto eb = detail::as_eigen(b);
  auto ec = detail::as_eigen(c);
  if (!ta && !tb)
    ec.noalias() = ea * eb;
  else if (ta && !tb)
    ec.noalias() = ea.transpose() * eb;
  else if (!ta && tb)
    ec.noalias() = ea * eb.transpose();
  else
    ec.noalias() = ea.transpose() * eb.transpose();
  return c;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) t.at(j, i) = a.at(i, j);
  return t;
}

inline void check_same_shape(const Matrix& a, const Matrix& b,
                             const char* who) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(who) + ": shape " + a.shape_str() + " vs " +
                     b.shape_str());
}

inline Matrix add(const Matrix& a, const Matrix& b) {
  check_same_shape(a, b, "add");
  Matrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data[i] += b.data[i];
  return c;
}

inline Matrix sub(const Matrix& a, const Matrix& b) {
  check_same_shape(a, b, "sub");
  Matrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data[i] -= b.data[i];
  return c;
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
  check_same_shape(a, b, "hadamard");
  Matrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data[i] *= b.data[i];
  return c;
}

inline Matrix scale(const Matrix& a, double s) {
  Matrix c = a;
  for (double& v : c.data) v *= s;
  return c;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double squared_norm(const std::vector<double>& a) { return dot(a, a); }

}  // namespace lastshot
