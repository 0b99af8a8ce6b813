// Shared fixtures and independent oracles for the test suite.
//
// The oracles here deliberately avoid the library's own code paths: spectral
// norms come from Eigen's SVD, graph projections from a dense KKT solve, and
// reference randomness from std::mt19937_64 where independence matters.

#pragma once

#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include <anchorkit/types.hpp>

namespace testsupport {

using anchorkit::Index;
using anchorkit::Matrix;
using anchorkit::Vector;

inline Matrix random_matrix(Index rows, Index cols, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix A(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) A(i, j) = g(gen);
  return A;
}

inline Vector random_vector(Index n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Vector v(n);
  for (Index i = 0; i < n; ++i) v(i) = g(gen);
  return v;
}

inline Matrix random_orthogonal(Index n, std::uint64_t seed) {
  const Matrix A = random_matrix(n, n, seed);
  Eigen::HouseholderQR<Matrix> qr(A);
  Matrix Q = qr.householderQ();
  const Vector diag = qr.matrixQR().diagonal();
  for (Index j = 0; j < n; ++j)
    if (diag(j) < 0.0) Q.col(j) *= -1.0;
  return Q;
}

// Symmetric matrix with prescribed spectral norm (largest |eigenvalue| = s).
inline Matrix symmetric_with_norm(Index n, double s, std::uint64_t seed) {
  const Matrix Q = random_orthogonal(n, seed);
  Vector evals = random_vector(n, seed ^ 0x517cc1b727220a95ULL);
  double emax = 0.0;
  for (Index i = 0; i < n; ++i) emax = std::max(emax, std::abs(evals(i)));
  evals *= s / emax;
  return Q * evals.asDiagonal() * Q.transpose();
}

inline double svd_norm(const Matrix& A) {
  return Eigen::JacobiSVD<Matrix>(A).singularValues()(0);
}

// Euclidean projection of q onto the affine set {x : A x = b} via the KKT
// system: minimizer is q - A^T y with (A A^T) y = A q - b. Uses a pseudo
// inverse so rank-deficient A is handled the same way as a COD-based solve.
inline Vector kkt_affine_projection(const Matrix& A, const Vector& b,
                                    const Vector& q) {
  const Matrix G = A * A.transpose();
  const Vector y = G.completeOrthogonalDecomposition().solve(A * q - b);
  return q - A.transpose() * y;
}

// Projection of (x, y) onto Graph(F) for the affine map F(x) = M x + c,
// as the KKT projection onto {(x, y) : -M x + y = c}.
inline Vector graph_projection(const Matrix& M, const Vector& c,
                               const Vector& x, const Vector& y) {
  const Index d = M.cols();
  Matrix A(M.rows(), d + M.rows());
  A << -M, Matrix::Identity(M.rows(), M.rows());
  Vector q(d + M.rows());
  q << x, y;
  return kkt_affine_projection(A, c, q);
}

// Central-difference Jacobian for black-box maps.
template <typename F>
Matrix fd_jacobian(F&& f, const Vector& x, double h = 1e-6) {
  const Vector fx = f(x);
  Matrix J(fx.size(), x.size());
  for (Index j = 0; j < x.size(); ++j) {
    Vector xp = x, xm = x;
    xp(j) += h;
    xm(j) -= h;
    J.col(j) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return J;
}

// Row-selection projector: k rows of the n-dimensional identity.
inline Matrix slice_projector(Index n, Index start, Index k) {
  Matrix P = Matrix::Zero(k, n);
  for (Index i = 0; i < k; ++i) P(i, start + i) = 1.0;
  return P;
}

}  // namespace testsupport
