#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "oca/errors.hpp"

namespace oca {

/// Dense row-major matrix of doubles. Everything in this library runs in
/// 64-bit: the orthogonality tolerances used downstream (1e-8 and tighter)
/// are out of reach in single precision.
class Matrix {
 public:
  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

  Matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values)
      : rows_(rows), cols_(cols), data_(values) {
    if (data_.size() != rows * cols) {
      throw StructuralError("Matrix literal has " + std::to_string(data_.size()) +
                            " values, expected " + std::to_string(rows * cols));
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool square() const { return rows_ == cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  std::span<double> flat() { return {data_.data(), data_.size()}; }
  std::span<const double> flat() const { return {data_.data(), data_.size()}; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

inline bool all_finite(const Matrix& m) { return all_finite(m.flat()); }

inline double max_abs(const Matrix& m) {
  double r = 0.0;
  for (double x : m.flat()) r = std::max(r, std::abs(x));
  return r;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw StructuralError("max_abs_diff: shape mismatch");
  }
  double r = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    r = std::max(r, std::abs(a.flat()[i] - b.flat()[i]));
  }
  return r;
}

/// Maximum absolute row sum.
inline double inf_norm(const Matrix& m) {
  double r = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double s = 0.0;
    for (double x : m.row(i)) s += std::abs(x);
    r = std::max(r, s);
  }
  return r;
}

inline void scale_inplace(Matrix& m, double alpha) {
  for (double& x : m.flat()) x *= alpha;
}

/// a += alpha * b
inline void add_inplace(Matrix& a, const Matrix& b, double alpha = 1.0) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw StructuralError("add_inplace: shape mismatch");
  }
  double* pa = a.data();
  const double* pb = b.data();
  for (std::size_t i = 0; i < a.size(); ++i) pa[i] += alpha * pb[i];
}

inline Matrix transpose(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
  }
  return t;
}

/// C = A * B
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw StructuralError("matmul: inner dimension mismatch");
  Matrix c(a.rows(), b.cols());
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double* ci = c.data() + i * m;
    const double* ai = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      const double* bp = b.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += aip * bp[j];
    }
  }
  return c;
}

/// C = A * B^T
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw StructuralError("matmul_nt: inner dimension mismatch");
  Matrix c(a.rows(), b.rows());
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = a.data() + i * k;
    double* ci = c.data() + i * m;
    for (std::size_t j = 0; j < m; ++j) {
      const double* bj = b.data() + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      ci[j] = s;
    }
  }
  return c;
}

/// C = A^T * B
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw StructuralError("matmul_tn: inner dimension mismatch");
  Matrix c(a.cols(), b.cols());
  const std::size_t n = a.cols(), k = a.rows(), m = b.cols();
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a.data() + p * n;
    const double* bp = b.data() + p * m;
    for (std::size_t i = 0; i < n; ++i) {
      double* ci = c.data() + i * m;
      const double api = ap[i];
      for (std::size_t j = 0; j < m; ++j) ci[j] += api * bp[j];
    }
  }
  return c;
}

/// Columns [c0, c1) as a new matrix.
inline Matrix slice_cols(const Matrix& m, std::size_t c0, std::size_t c1) {
  if (c0 > c1 || c1 > m.cols()) throw StructuralError("slice_cols: bad column range");
  Matrix s(m.rows(), c1 - c0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = c0; j < c1; ++j) s(i, j - c0) = m(i, j);
  }
  return s;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// Packed parameters of a skew-symmetric matrix: the strictly lower
/// triangle in row-major order, (1,0), (2,0), (2,1), (3,0), ...
struct SkewParams {
  std::size_t dim = 0;
  std::vector<double> values;

  static std::size_t packed_size(std::size_t dim) { return dim * (dim - 1) / 2; }

  void validate() const {
    if (dim == 0) throw StructuralError("SkewParams: dim must be positive");
    if (values.size() != packed_size(dim)) {
      throw StructuralError("SkewParams: expected " + std::to_string(packed_size(dim)) +
                            " values for dim " + std::to_string(dim) + ", got " +
                            std::to_string(values.size()));
    }
    if (!all_finite(values)) throw NumericError("SkewParams: non-finite value");
  }
};

/// Expand packed parameters into the full skew-symmetric matrix A, A^T = -A.
inline Matrix skew_from_params(const SkewParams& p) {
  p.validate();
  Matrix a(p.dim, p.dim);
  std::size_t k = 0;
  for (std::size_t i = 1; i < p.dim; ++i) {
    for (std::size_t j = 0; j < i; ++j, ++k) {
      a(i, j) = p.values[k];
      a(j, i) = -p.values[k];
    }
  }
  return a;
}

/// Matrix exponential by scaling-and-squaring: halve until the inf-norm is
/// at most 0.5, run the Taylor series to machine precision, square back up.
inline Matrix mat_exp(const Matrix& a) {
  if (!a.square()) throw StructuralError("mat_exp: matrix must be square");
  if (!all_finite(a)) throw NumericError("mat_exp: non-finite entries");
  const std::size_t d = a.rows();
  if (d == 0) return Matrix();

  const double norm = inf_norm(a);
  int squarings = 0;
  if (norm > 0.5) squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));

  Matrix x = a;
  scale_inplace(x, std::ldexp(1.0, -squarings));

  Matrix result = Matrix::identity(d);
  Matrix term = Matrix::identity(d);
  constexpr int kMaxTerms = 64;
  bool converged = false;
  for (int k = 1; k <= kMaxTerms; ++k) {
    term = matmul(term, x);
    scale_inplace(term, 1.0 / k);
    add_inplace(result, term);
    if (max_abs(term) <= 1e-18 * (1.0 + max_abs(result))) {
      converged = true;
      break;
    }
  }
  if (!converged) throw NumericError("mat_exp: series did not converge");

  for (int s = 0; s < squarings; ++s) result = matmul(result, result);
  return result;
}

/// Frechet derivative of the exponential map: L(A, E) = d/dt exp(A + tE) at
/// t = 0, read off as the top-right block of exp([[A, E], [0, A]]).
inline Matrix frechet_exp(const Matrix& a, const Matrix& e) {
  if (!a.square() || !e.square()) throw StructuralError("frechet_exp: matrices must be square");
  if (a.rows() != e.rows()) throw StructuralError("frechet_exp: dimension mismatch");
  const std::size_t d = a.rows();
  Matrix block(2 * d, 2 * d);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      block(i, j) = a(i, j);
      block(i, d + j) = e(i, j);
      block(d + i, d + j) = a(i, j);
    }
  }
  Matrix big = mat_exp(block);
  Matrix out(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) out(i, j) = big(i, d + j);
  }
  return out;
}

/// max |Q^T Q - I|; zero for an exactly orthogonal Q.
inline double orthogonality_defect(const Matrix& q) {
  if (!q.square()) throw StructuralError("orthogonality_defect: matrix must be square");
  const std::size_t d = q.rows();
  double defect = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += q(k, i) * q(k, j);
      if (i == j) s -= 1.0;
      defect = std::max(defect, std::abs(s));
    }
  }
  return defect;
}

/// Chain rule through Q = exp(A(p)): given dL/dQ, the adjoint of the Frechet
/// derivative gives dL/dA = L(A^T, dL/dQ), and the skew packing contributes
/// dL/dp_ij = (dL/dA)_ij - (dL/dA)_ji.
inline std::vector<double> skew_param_gradient(const Matrix& skew, const Matrix& q_grad) {
  if (!skew.square() || skew.rows() != q_grad.rows() || skew.cols() != q_grad.cols()) {
    throw StructuralError("skew_param_gradient: shape mismatch");
  }
  const Matrix g = frechet_exp(transpose(skew), q_grad);
  const std::size_t d = skew.rows();
  std::vector<double> pg(SkewParams::packed_size(d));
  std::size_t k = 0;
  for (std::size_t i = 1; i < d; ++i) {
    for (std::size_t j = 0; j < i; ++j, ++k) pg[k] = g(i, j) - g(j, i);
  }
  return pg;
}

}  // namespace oca
