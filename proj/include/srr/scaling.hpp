#pragma once

// Activation-derived scaling operators S (m x m, invertible) applied from the
// left to m x n weight-shaped matrices.

#include <srr/errors.hpp>
#include <srr/linalg.hpp>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>

namespace srr {

template <typename Scalar>
struct CalibrationStats {
  Eigen::Index dim = 0;
  std::uint64_t sample_count = 0;
  MatrixX<Scalar> second_moment;  // sum over samples of x x^T (not normalized)
  VectorX<Scalar> diag_rms;       // sqrt(second_moment_ii / sample_count)

  /// E[x x^T]
  MatrixX<Scalar> covariance() const {
    return second_moment / static_cast<Scalar>(sample_count);
  }
};

/// Single-pass accumulator. Rows are summed in the order given, so two runs
/// over the same stream agree bit for bit.
template <typename Scalar = double>
class CalibrationAccumulator {
 public:
  explicit CalibrationAccumulator(Eigen::Index dim) : dim_(dim) {
    if (dim < 1 || dim > kMaxDim) throw DomainError("calibration dim out of range");
    moment_ = MatrixX<Scalar>::Zero(dim, dim);
  }

  void add(std::span<const Scalar> x) {
    if (static_cast<Eigen::Index>(x.size()) != dim_)
      throw InputError("activation length " + std::to_string(x.size()) + " != " +
                       std::to_string(dim_));
    const Eigen::Map<const VectorX<Scalar>> v(x.data(), dim_);
    require_finite(v, "activation");
    moment_.noalias() += v * v.transpose();
    ++count_;
  }

  /// Adds each row of `x` (samples x dim) in order.
  template <typename Derived>
  void add_rows(const Eigen::MatrixBase<Derived>& x) {
    if (x.cols() != dim_) throw InputError("activation matrix has wrong column count");
    require_finite(x, "activations");
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const VectorX<Scalar> v = x.row(i).transpose();
      moment_.noalias() += v * v.transpose();
      ++count_;
    }
  }

  std::uint64_t count() const { return count_; }

  CalibrationStats<Scalar> finalize() const {
    if (count_ == 0) throw DomainError("calibration needs at least one sample");
    return make_stats(moment_, count_);
  }

  static CalibrationStats<Scalar> make_stats(const MatrixX<Scalar>& second_moment,
                                             std::uint64_t count) {
    if (count == 0) throw DomainError("calibration needs at least one sample");
    if (second_moment.rows() != second_moment.cols())
      throw InputError("second moment must be square");
    require_valid(second_moment, "second moment");
    CalibrationStats<Scalar> s;
    s.dim = second_moment.rows();
    s.sample_count = count;
    s.second_moment = second_moment;
    s.diag_rms = (second_moment.diagonal() / static_cast<Scalar>(count)).cwiseSqrt();
    return s;
  }

 private:
  Eigen::Index dim_;
  std::uint64_t count_ = 0;
  MatrixX<Scalar> moment_;
};

enum class ScalingKind { identity, diagonal, dense };

inline std::string_view to_string(ScalingKind k) {
  switch (k) {
    case ScalingKind::identity: return "identity";
    case ScalingKind::diagonal: return "diagonal";
    case ScalingKind::dense: return "dense";
  }
  return "?";
}

inline ScalingKind parse_scaling_kind(std::string_view s) {
  if (s == "identity") return ScalingKind::identity;
  if (s == "diagonal") return ScalingKind::diagonal;
  if (s == "dense") return ScalingKind::dense;
  throw InputError("unknown scaling kind '" + std::string(s) + "'");
}

enum class Direction { forward, inverse };

template <typename Scalar = double>
class ScalingOperator {
 public:
  static ScalingOperator identity(Eigen::Index dim) {
    if (dim < 1) throw DomainError("scaling dim must be positive");
    ScalingOperator s;
    s.kind_ = ScalingKind::identity;
    s.dim_ = dim;
    s.fingerprint_ = s.compute_fingerprint();
    return s;
  }

  static ScalingOperator diagonal(VectorX<Scalar> diag) {
    if (diag.size() < 1) throw DomainError("scaling dim must be positive");
    require_finite(diag, "scaling diagonal");
    if ((diag.array() <= Scalar(0)).any())
      throw DomainError("diagonal scaling has non-positive entries (not invertible)");
    ScalingOperator s;
    s.kind_ = ScalingKind::diagonal;
    s.dim_ = diag.size();
    s.diag_ = std::move(diag);
    s.fingerprint_ = s.compute_fingerprint();
    return s;
  }

  /// Dense symmetric positive-definite S; the inverse is formed once from the
  /// symmetric eigendecomposition.
  static ScalingOperator dense(const MatrixX<Scalar>& s_matrix) {
    if (s_matrix.rows() != s_matrix.cols()) throw DomainError("dense scaling must be square");
    require_valid(s_matrix, "scaling matrix");
    Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> eig(s_matrix);
    if (eig.info() != Eigen::Success) throw DomainError("eigendecomposition failed");
    if (eig.eigenvalues().minCoeff() <= Scalar(0))
      throw DomainError("dense scaling is not positive definite");
    const MatrixX<Scalar>& v = eig.eigenvectors();
    MatrixX<Scalar> inv = v * eig.eigenvalues().cwiseInverse().asDiagonal() * v.transpose();
    return from_parts(s_matrix, inv);
  }

  ScalingKind kind() const { return kind_; }
  Eigen::Index dim() const { return dim_; }
  const VectorX<Scalar>& diag() const { return diag_; }

  /// Dense m x m representation of S.
  MatrixX<Scalar> matrix() const {
    switch (kind_) {
      case ScalingKind::identity: return MatrixX<Scalar>::Identity(dim_, dim_);
      case ScalingKind::diagonal: return diag_.asDiagonal();
      case ScalingKind::dense: return dense_;
    }
    return {};
  }

  MatrixX<Scalar> inverse_matrix() const {
    switch (kind_) {
      case ScalingKind::identity: return MatrixX<Scalar>::Identity(dim_, dim_);
      case ScalingKind::diagonal: return diag_.cwiseInverse().asDiagonal();
      case ScalingKind::dense: return dense_inverse_;
    }
    return {};
  }

  template <typename Derived>
  MatrixX<Scalar> apply(const Eigen::MatrixBase<Derived>& a, Direction dir) const {
    if (a.rows() != dim_)
      throw DomainError("scaling dim " + std::to_string(dim_) + " != matrix rows " +
                        std::to_string(a.rows()));
    switch (kind_) {
      case ScalingKind::identity: return a;
      case ScalingKind::diagonal:
        if (dir == Direction::forward) return diag_.asDiagonal() * a;
        return (a.array().colwise() / diag_.array()).matrix();
      case ScalingKind::dense:
        return dir == Direction::forward ? MatrixX<Scalar>(dense_ * a)
                                         : MatrixX<Scalar>(dense_inverse_ * a);
    }
    return {};
  }

  /// Content hash (kind, dim, coefficients); used to key probe caches.
  std::uint64_t fingerprint() const { return fingerprint_; }

  static ScalingOperator from_parts(MatrixX<Scalar> s_matrix, MatrixX<Scalar> inverse) {
    ScalingOperator s;
    s.kind_ = ScalingKind::dense;
    s.dim_ = s_matrix.rows();
    s.dense_ = std::move(s_matrix);
    s.dense_inverse_ = std::move(inverse);
    s.fingerprint_ = s.compute_fingerprint();
    return s;
  }

 private:
  ScalingOperator() = default;

  std::uint64_t compute_fingerprint() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* p, std::size_t n) {
      const auto* b = static_cast<const unsigned char*>(p);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 1099511628211ULL;
      }
    };
    const int k = static_cast<int>(kind_);
    mix(&k, sizeof k);
    mix(&dim_, sizeof dim_);
    if (kind_ == ScalingKind::diagonal) mix(diag_.data(), sizeof(Scalar) * diag_.size());
    if (kind_ == ScalingKind::dense) mix(dense_.data(), sizeof(Scalar) * dense_.size());
    return h;
  }

  ScalingKind kind_ = ScalingKind::identity;
  Eigen::Index dim_ = 0;
  VectorX<Scalar> diag_;
  MatrixX<Scalar> dense_;
  MatrixX<Scalar> dense_inverse_;
  std::uint64_t fingerprint_ = 0;
};

/// 1e-6 * trace(E[x x^T]) / m.
template <typename Scalar>
Scalar default_ridge(const CalibrationStats<Scalar>& stats) {
  return Scalar(1e-6) * stats.covariance().trace() / static_cast<Scalar>(stats.dim);
}

/// identity -> I; diagonal -> diag(max(rms_i, eps)); dense -> (E[x x^T] + eps I)^{1/2}.
/// eps = 0 is accepted as long as the result is still invertible.
template <typename Scalar>
ScalingOperator<Scalar> build_scaling(const CalibrationStats<Scalar>& stats, ScalingKind kind,
                                      Scalar eps) {
  if (!(eps >= Scalar(0)) || !std::isfinite(eps))
    throw DomainError("scaling eps must be a finite non-negative number");
  if (stats.sample_count == 0) throw DomainError("calibration stats are not finalized");
  switch (kind) {
    case ScalingKind::identity:
      return ScalingOperator<Scalar>::identity(stats.dim);
    case ScalingKind::diagonal:
      return ScalingOperator<Scalar>::diagonal(stats.diag_rms.cwiseMax(eps));
    case ScalingKind::dense: {
      MatrixX<Scalar> c = stats.covariance();
      c = (c + c.transpose()) / Scalar(2);
      Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> eig(c);
      if (eig.info() != Eigen::Success) throw DomainError("covariance eigendecomposition failed");
      const VectorX<Scalar> root =
          (eig.eigenvalues().cwiseMax(Scalar(0)).array() + eps).sqrt().matrix();
      if (root.minCoeff() <= Scalar(0))
        throw DomainError("covariance is singular; use a positive eps");
      const MatrixX<Scalar>& v = eig.eigenvectors();
      MatrixX<Scalar> s = v * root.asDiagonal() * v.transpose();
      MatrixX<Scalar> inv = v * root.cwiseInverse().asDiagonal() * v.transpose();
      s = (s + s.transpose()) / Scalar(2);
      inv = (inv + inv.transpose()) / Scalar(2);
      return ScalingOperator<Scalar>::from_parts(std::move(s), std::move(inv));
    }
  }
  throw DomainError("unknown scaling kind");
}

template <typename Scalar>
ScalingOperator<Scalar> build_scaling(const CalibrationStats<Scalar>& stats, ScalingKind kind) {
  return build_scaling(stats, kind, default_ridge(stats));
}

template <typename Scalar, typename Derived>
MatrixX<Scalar> apply_scaling(const ScalingOperator<Scalar>& s,
                              const Eigen::MatrixBase<Derived>& a, Direction dir) {
  return s.apply(a, dir);
}

}  // namespace srr
