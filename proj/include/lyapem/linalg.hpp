#pragma once

// Small dense linear algebra for per-component covariance blocks.
// Dimensions here are single digits; everything is plain row-major storage
// with unblocked algorithms.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "lyapem/errors.hpp"

namespace lyapem {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix diag(std::span<const double> entries) {
    Matrix m(entries.size(), entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) m(i, i) = entries[i];
    return m;
  }

  static Matrix scaled_identity(std::size_t n, double s) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = s;
    return m;
  }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool square() const { return rows_ == cols_; }

  std::span<const double> data() const { return data_; }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](double v) { return std::isfinite(v); });
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline Matrix operator+(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) = a(i, j) + b(i, j);
  return out;
}

inline Matrix operator*(double s, const Matrix& a) {
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) = s * a(i, j);
  return out;
}

inline std::vector<double> operator*(const Matrix& a, std::span<const double> x) {
  std::vector<double> out(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) acc += a(i, j) * x[j];
    out[i] = acc;
  }
  return out;
}

inline Matrix operator*(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  return out;
}

inline bool approx_symmetric(const Matrix& a, double tol) {
  if (!a.square()) return false;
  double scale = 0.0;
  for (double v : a.data()) scale = std::max(scale, std::abs(v));
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.cols(); ++j)
      if (std::abs(a(i, j) - a(j, i)) > tol * (1.0 + scale)) return false;
  return true;
}

// Cholesky factorization A = L Lᵀ of a symmetric positive definite matrix.
// Factored once per covariance at construction time and reused for density
// evaluation, Mahalanobis distances, solves, and sampling.
class Cholesky {
 public:
  // Returns nullopt when the matrix is not symmetric or not positive definite.
  static std::optional<Cholesky> factor(const Matrix& a, double sym_tol = 1e-9) {
    if (!a.square() || !a.all_finite() || !approx_symmetric(a, sym_tol)) return std::nullopt;
    const std::size_t n = a.rows();
    Matrix l(n, n);
    for (std::size_t j = 0; j < n; ++j) {
      double diag = a(j, j);
      for (std::size_t k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
      if (!(diag > 0.0) || !std::isfinite(diag)) return std::nullopt;
      const double ljj = std::sqrt(diag);
      l(j, j) = ljj;
      for (std::size_t i = j + 1; i < n; ++i) {
        double acc = a(i, j);
        for (std::size_t k = 0; k < j; ++k) acc -= l(i, k) * l(j, k);
        l(i, j) = acc / ljj;
      }
    }
    Cholesky out;
    out.l_ = std::move(l);
    return out;
  }

  std::size_t dim() const { return l_.rows(); }
  const Matrix& lower() const { return l_; }

  double log_det() const {
    double acc = 0.0;
    for (std::size_t i = 0; i < dim(); ++i) acc += std::log(l_(i, i));
    return 2.0 * acc;
  }

  // Solves L w = b in place of a copy.
  std::vector<double> forward_solve(std::span<const double> b) const {
    const std::size_t n = dim();
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) {
      double acc = b[i];
      for (std::size_t k = 0; k < i; ++k) acc -= l_(i, k) * w[k];
      w[i] = acc / l_(i, i);
    }
    return w;
  }

  // Solves A x = b via the two triangular passes.
  std::vector<double> solve(std::span<const double> b) const {
    const std::size_t n = dim();
    std::vector<double> x = forward_solve(b);
    for (std::size_t ii = n; ii-- > 0;) {
      double acc = x[ii];
      for (std::size_t k = ii + 1; k < n; ++k) acc -= l_(k, ii) * x[k];
      x[ii] = acc / l_(ii, ii);
    }
    return x;
  }

  // vᵀ A⁻¹ v = ‖L⁻¹ v‖².
  double quad_form_inv(std::span<const double> v) const {
    const std::vector<double> w = forward_solve(v);
    double acc = 0.0;
    for (double wi : w) acc += wi * wi;
    return acc;
  }

  Matrix inverse() const {
    const std::size_t n = dim();
    Matrix inv(n, n);
    std::vector<double> e(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      e[j] = 1.0;
      const std::vector<double> col = solve(e);
      for (std::size_t i = 0; i < n; ++i) inv(i, j) = col[i];
      e[j] = 0.0;
    }
    return inv;
  }

  // L z, used to map standard normals onto N(0, A) draws.
  std::vector<double> mul_lower(std::span<const double> z) const {
    const std::size_t n = dim();
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t k = 0; k <= i; ++k) acc += l_(i, k) * z[k];
      out[i] = acc;
    }
    return out;
  }

 private:
  Matrix l_;
};

}  // namespace lyapem
