#pragma once

#include <Eigen/Dense>
#include <Eigen/QR>
#include <cstdint>
#include <random>

namespace srr {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Rng = std::mt19937_64;

// All generators fill in row-major order so that a (rows, cols, seed) triple
// always maps to the same matrix regardless of storage order.

template <typename Scalar = double>
MatrixX<Scalar> gaussian_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<Scalar> dist(Scalar(0), Scalar(1));
  MatrixX<Scalar> out(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) out(i, j) = dist(rng);
  return out;
}

template <typename Scalar = double>
MatrixX<Scalar> gaussian_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  Rng rng(seed);
  return gaussian_matrix<Scalar>(rows, cols, rng);
}

/// I.i.d. entries drawn from U[-1, 1].
template <typename Scalar = double>
MatrixX<Scalar> uniform_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<Scalar> dist(Scalar(-1), Scalar(1));
  MatrixX<Scalar> out(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) out(i, j) = dist(rng);
  return out;
}

/// Thin orthonormal basis of the column space of `a` (Householder QR).
template <typename Derived>
MatrixX<typename Derived::Scalar> orthonormalize(const Eigen::MatrixBase<Derived>& a) {
  using Scalar = typename Derived::Scalar;
  Eigen::HouseholderQR<MatrixX<Scalar>> qr(a);
  return qr.householderQ() * MatrixX<Scalar>::Identity(a.rows(), a.cols());
}

/// Haar-distributed `rows x cols` matrix with orthonormal columns (rows >= cols).
template <typename Scalar = double>
MatrixX<Scalar> random_orthonormal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  MatrixX<Scalar> g = gaussian_matrix<Scalar>(rows, cols, rng);
  Eigen::HouseholderQR<MatrixX<Scalar>> qr(g);
  MatrixX<Scalar> q = qr.householderQ() * MatrixX<Scalar>::Identity(rows, cols);
  // Fix column signs against diag(R) so the distribution is uniform.
  const MatrixX<Scalar> r = qr.matrixQR().topRows(cols).template triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < cols; ++j)
    if (r(j, j) < Scalar(0)) q.col(j) = -q.col(j);
  return q;
}

}  // namespace srr
