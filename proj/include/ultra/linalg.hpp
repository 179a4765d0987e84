#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "ultra/common.hpp"

namespace ultra {

using RatVector = std::vector<Rat>;

// Dense matrix of exact rationals; row-major.
struct RatMatrix {
  size_t rows = 0;
  size_t cols = 0;
  std::vector<Rat> a;

  RatMatrix() = default;
  RatMatrix(size_t r, size_t c) : rows(r), cols(c), a(r * c, Rat(0)) {}

  Rat& at(size_t i, size_t j) { return a[i * cols + j]; }
  const Rat& at(size_t i, size_t j) const { return a[i * cols + j]; }

  static RatMatrix identity(size_t n) {
    RatMatrix m(n, n);
    for (size_t i = 0; i < n; ++i) m.at(i, i) = 1;
    return m;
  }

  friend bool operator==(const RatMatrix& x, const RatMatrix& y) {
    return x.rows == y.rows && x.cols == y.cols && x.a == y.a;
  }
};

inline RatMatrix rat_multiply(const RatMatrix& x, const RatMatrix& y) {
  require(x.cols == y.rows, "matrix product shape mismatch");
  RatMatrix out(x.rows, y.cols);
  for (size_t i = 0; i < x.rows; ++i)
    for (size_t k = 0; k < x.cols; ++k) {
      const Rat& xv = x.at(i, k);
      if (xv == 0) continue;
      for (size_t j = 0; j < y.cols; ++j) out.at(i, j) += xv * y.at(k, j);
    }
  return out;
}

// Solves A X = B exactly by Gaussian elimination with nonzero pivoting.
inline RatMatrix rat_solve(RatMatrix A, RatMatrix B) {
  require(A.rows == A.cols, "linear solve needs a square matrix");
  require(A.rows == B.rows, "right-hand side row mismatch");
  const size_t n = A.rows;
  for (size_t c = 0; c < n; ++c) {
    size_t p = c;
    while (p < n && A.at(p, c) == 0) ++p;
    if (p == n) fail_assert("singular matrix in exact solve");
    if (p != c) {
      for (size_t j = 0; j < n; ++j) std::swap(A.at(p, j), A.at(c, j));
      for (size_t j = 0; j < B.cols; ++j) std::swap(B.at(p, j), B.at(c, j));
    }
    Rat inv = Rat(1) / A.at(c, c);
    for (size_t j = c; j < n; ++j) A.at(c, j) *= inv;
    for (size_t j = 0; j < B.cols; ++j) B.at(c, j) *= inv;
    for (size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      Rat f = A.at(r, c);
      if (f == 0) continue;
      for (size_t j = c; j < n; ++j) A.at(r, j) -= f * A.at(c, j);
      for (size_t j = 0; j < B.cols; ++j) B.at(r, j) -= f * B.at(c, j);
    }
  }
  return B;
}

inline RatVector rat_solve(const RatMatrix& A, const RatVector& b) {
  RatMatrix B(b.size(), 1);
  for (size_t i = 0; i < b.size(); ++i) B.at(i, 0) = b[i];
  RatMatrix X = rat_solve(A, B);
  RatVector x(b.size());
  for (size_t i = 0; i < b.size(); ++i) x[i] = X.at(i, 0);
  return x;
}

inline RatMatrix rat_inverse(const RatMatrix& A) {
  return rat_solve(A, RatMatrix::identity(A.rows));
}

inline Eigen::MatrixXd to_eigen(const RatMatrix& m) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(m.rows), static_cast<Eigen::Index>(m.cols));
  for (size_t i = 0; i < m.rows; ++i)
    for (size_t j = 0; j < m.cols; ++j)
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = to_double(m.at(i, j));
  return out;
}

// Eigenvalues of a symmetric matrix, ascending.
inline std::vector<double> symmetric_eigenvalues(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m);
  require(solver.info() == Eigen::Success, "symmetric eigensolver failed");
  std::vector<double> out(static_cast<size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) out[static_cast<size_t>(i)] = solver.eigenvalues()(i);
  return out;
}

}  // namespace ultra
