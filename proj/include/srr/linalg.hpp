#pragma once

// Dense truncated SVD (exact and randomized) and spectral-energy helpers.
//
// Matrices are plain Eigen dense types templated on the scalar; every public
// entry point rejects non-finite input and shapes beyond kMaxDim.

#include <srr/errors.hpp>
#include <srr/random.hpp>

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace srr {

inline constexpr Eigen::Index kMaxDim = 8192;

/// Default number of power iterations for the randomized range finder.
inline constexpr int kDefaultPowerIters = 4;

template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& a, const char* what = "matrix") {
  if (!a.allFinite()) throw InputError(std::string(what) + " contains non-finite entries");
}

template <typename Derived>
void require_shape(const Eigen::MatrixBase<Derived>& a, const char* what = "matrix") {
  if (a.rows() < 1 || a.cols() < 1)
    throw InputError(std::string(what) + " must have positive dimensions");
  if (a.rows() > kMaxDim || a.cols() > kMaxDim)
    throw DomainError(std::string(what) + " exceeds the " + std::to_string(kMaxDim) +
                      "x" + std::to_string(kMaxDim) + " size cap");
}

template <typename Derived>
void require_valid(const Eigen::MatrixBase<Derived>& a, const char* what = "matrix") {
  require_shape(a, what);
  require_finite(a, what);
}

/// Rank-p singular triplets: A ~= U diag(S) V^T.
template <typename Scalar>
struct SvdFactors {
  MatrixX<Scalar> U;  // m x p, orthonormal columns
  VectorX<Scalar> S;  // p, non-increasing
  MatrixX<Scalar> V;  // n x p, orthonormal columns

  Eigen::Index rank() const { return S.size(); }

  MatrixX<Scalar> reconstruct() const { return U * S.asDiagonal() * V.transpose(); }
};

/// Descending singular values plus the total squared energy of the source.
///
/// A complete profile carries all min(rows, cols) values. A partial profile
/// (from a randomized sketch) carries only the leading values; its total
/// energy still comes from the exact Frobenius norm so that rho() stays exact
/// for every rank it covers.
template <typename Scalar>
struct SpectralProfile {
  std::vector<Scalar> singular_values;
  Scalar total_energy = Scalar(0);
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;

  bool complete() const {
    return static_cast<Eigen::Index>(singular_values.size()) == std::min(rows, cols);
  }
  Eigen::Index size() const { return static_cast<Eigen::Index>(singular_values.size()); }
};

template <typename Derived>
typename Derived::Scalar frobenius_sq(const Eigen::MatrixBase<Derived>& a) {
  return a.squaredNorm();
}

/// Top-p triplets of the exact SVD. p = 0 yields empty factors (zero product).
template <typename Derived>
SvdFactors<typename Derived::Scalar> svd_truncated(const Eigen::MatrixBase<Derived>& a,
                                                  Eigen::Index p) {
  using Scalar = typename Derived::Scalar;
  require_valid(a, "svd input");
  const Eigen::Index kmax = std::min(a.rows(), a.cols());
  if (p < 0 || p > kmax)
    throw DomainError("svd rank " + std::to_string(p) + " outside [0, " +
                      std::to_string(kmax) + "]");
  SvdFactors<Scalar> out;
  if (p == 0) {
    out.U.resize(a.rows(), 0);
    out.S.resize(0);
    out.V.resize(a.cols(), 0);
    return out;
  }
  Eigen::BDCSVD<MatrixX<Scalar>> svd(a.eval(), Eigen::ComputeThinU | Eigen::ComputeThinV);
  out.U = svd.matrixU().leftCols(p);
  out.S = svd.singularValues().head(p);
  out.V = svd.matrixV().leftCols(p);
  return out;
}

/// Randomized truncated SVD: Gaussian sketch of width p + oversample, n_iter
/// power iterations re-orthonormalized by QR at every half step, then an
/// exact SVD of the projected matrix.
template <typename Derived>
SvdFactors<typename Derived::Scalar> svd_randomized(const Eigen::MatrixBase<Derived>& a,
                                                   Eigen::Index p, Eigen::Index oversample,
                                                   int n_iter, std::uint64_t seed) {
  using Scalar = typename Derived::Scalar;
  require_valid(a, "svd input");
  if (p < 1) throw DomainError("randomized svd needs rank >= 1");
  if (oversample < 0 || n_iter < 0) throw DomainError("oversample and n_iter must be >= 0");
  const Eigen::Index width = p + oversample;
  if (width > std::min(a.rows(), a.cols()))
    throw DomainError("sketch width " + std::to_string(width) + " exceeds min dimension " +
                      std::to_string(std::min(a.rows(), a.cols())));

  const MatrixX<Scalar> omega = gaussian_matrix<Scalar>(a.cols(), width, seed);
  MatrixX<Scalar> q = orthonormalize(a * omega);
  for (int it = 0; it < n_iter; ++it) {
    const MatrixX<Scalar> z = orthonormalize(a.transpose() * q);
    q = orthonormalize(a * z);
  }
  const MatrixX<Scalar> b = q.transpose() * a;
  Eigen::BDCSVD<MatrixX<Scalar>> svd(b, Eigen::ComputeThinU | Eigen::ComputeThinV);

  SvdFactors<Scalar> out;
  out.U = q * svd.matrixU().leftCols(p);
  out.S = svd.singularValues().head(p);
  out.V = svd.matrixV().leftCols(p);
  return out;
}

/// Default randomized SVD: 4 power iterations, oversampling 2p.
template <typename Derived>
SvdFactors<typename Derived::Scalar> svd_randomized(const Eigen::MatrixBase<Derived>& a,
                                                   Eigen::Index p, std::uint64_t seed) {
  return svd_randomized(a, p, 2 * p, kDefaultPowerIters, seed);
}

template <typename Derived>
SpectralProfile<typename Derived::Scalar> spectral_profile(const Eigen::MatrixBase<Derived>& a) {
  using Scalar = typename Derived::Scalar;
  require_valid(a, "profile input");
  Eigen::BDCSVD<MatrixX<Scalar>> svd(a.eval());
  const VectorX<Scalar>& s = svd.singularValues();
  SpectralProfile<Scalar> out;
  out.rows = a.rows();
  out.cols = a.cols();
  out.singular_values.assign(s.data(), s.data() + s.size());
  // Summed smallest first so the tail sums in rho() see the same rounding.
  Scalar total(0);
  for (auto it = out.singular_values.rbegin(); it != out.singular_values.rend(); ++it)
    total += (*it) * (*it);
  out.total_energy = total;
  return out;
}

/// Leading `count` singular values from a randomized sketch; total energy is
/// the exact squared Frobenius norm.
template <typename Derived>
SpectralProfile<typename Derived::Scalar> partial_profile(const Eigen::MatrixBase<Derived>& a,
                                                          Eigen::Index count,
                                                          std::uint64_t seed) {
  using Scalar = typename Derived::Scalar;
  require_valid(a, "profile input");
  const Eigen::Index kmax = std::min(a.rows(), a.cols());
  count = std::min(count, kmax);
  const Eigen::Index oversample = std::min<Eigen::Index>(2 * count, kmax - count);
  const auto f = svd_randomized(a, count, oversample, kDefaultPowerIters, seed);
  SpectralProfile<Scalar> out;
  out.rows = a.rows();
  out.cols = a.cols();
  out.singular_values.assign(f.S.data(), f.S.data() + f.S.size());
  out.total_energy = a.squaredNorm();
  return out;
}

/// Unrecoverable energy ratio: fraction of squared energy outside the best
/// rank-p approximation. Zero-energy profiles return 0 for every p.
template <typename Scalar>
Scalar rho(const SpectralProfile<Scalar>& profile, Eigen::Index p) {
  if (p < 0 || p > profile.size())
    throw DomainError("rho rank " + std::to_string(p) + " outside [0, " +
                      std::to_string(profile.size()) + "]");
  if (profile.total_energy <= Scalar(0)) return Scalar(0);
  const auto& s = profile.singular_values;
  Scalar value;
  if (profile.complete()) {
    Scalar tail(0);
    for (Eigen::Index j = profile.size() - 1; j >= p; --j) tail += s[j] * s[j];
    value = tail / profile.total_energy;
  } else {
    Scalar head(0);
    for (Eigen::Index j = 0; j < p; ++j) head += s[j] * s[j];
    value = Scalar(1) - head / profile.total_energy;
  }
  return std::clamp(value, Scalar(0), Scalar(1));
}

}  // namespace srr
