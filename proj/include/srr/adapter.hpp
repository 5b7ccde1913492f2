#pragma once

// Two-component low-rank adapter on top of a frozen quantized weight:
//   y = x (Q + L1 R1 + L2 R2)
// with gradient attenuation on the preserved pair (L1, R1).

#include <srr/errors.hpp>
#include <srr/linalg.hpp>
#include <srr/quant.hpp>
#include <srr/reconstruct.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace srr {

inline constexpr double kDefaultGamma = 0.1;
inline constexpr double kDefaultSgpAlpha = 5.0;

struct NoScaling {};

/// Multiply preserved-factor gradients by gamma in [0, 1].
struct FixedScaling {
  double gamma = kDefaultGamma;
};

/// Rank-wise attenuation along the left singular vectors of L1 R1,
/// lambda_i = (alpha + 1) s_i / (alpha s_i + s_1).
struct SgpScaling {
  double alpha = kDefaultSgpAlpha;
  int refresh_every = 1;  // steps between recomputing the SVD of L1 R1
};

using ScalingRule = std::variant<NoScaling, FixedScaling, SgpScaling>;

inline void validate_rule(const ScalingRule& rule) {
  if (const auto* f = std::get_if<FixedScaling>(&rule)) {
    if (!(f->gamma >= 0.0 && f->gamma <= 1.0)) throw DomainError("gamma must lie in [0, 1]");
  } else if (const auto* g = std::get_if<SgpScaling>(&rule)) {
    if (!(g->alpha >= 0.0) || !std::isfinite(g->alpha)) throw DomainError("alpha must be >= 0");
    if (g->refresh_every < 1) throw DomainError("SGP refresh interval must be >= 1");
  }
}

template <typename Scalar>
struct GradientBundle {
  MatrixX<Scalar> gL1, gR1, gL2, gR2;

  GradientBundle& operator+=(const GradientBundle& o) {
    gL1 += o.gL1;
    gR1 += o.gR1;
    gL2 += o.gL2;
    gR2 += o.gR2;
    return *this;
  }
  friend GradientBundle operator+(GradientBundle a, const GradientBundle& b) { return a += b; }
};

template <typename Scalar>
struct SplitAdapter {
  MatrixX<Scalar> L1, R1;  // m x k, k x n
  MatrixX<Scalar> L2, R2;  // m x (r-k), (r-k) x n
  Eigen::Index k = 0;
  ScalingRule rule;

  Eigen::Index rank() const { return L1.cols() + L2.cols(); }

  MatrixX<Scalar> L() const {
    MatrixX<Scalar> out(L1.rows(), rank());
    out << L1, L2;
    return out;
  }
  MatrixX<Scalar> R() const {
    MatrixX<Scalar> out(rank(), R1.cols() > 0 ? R1.cols() : R2.cols());
    out << R1, R2;
    return out;
  }
  /// L R evaluated on the concatenated factors, matching the decomposition.
  MatrixX<Scalar> delta() const { return L() * R(); }

  /// x (Q + L R) for a batch of row inputs x (s x m).
  MatrixX<Scalar> forward(const MatrixX<Scalar>& x, const QuantizedMatrix<Scalar>& q) const {
    return x * (q.values + delta());
  }
};

template <typename Scalar>
SplitAdapter<Scalar> adapter_init(const SrrDecomposition<Scalar>& dec, ScalingRule rule) {
  validate_rule(rule);
  SplitAdapter<Scalar> a;
  a.k = dec.k;
  a.L1 = dec.L1();
  a.R1 = dec.R1();
  a.L2 = dec.L2();
  a.R2 = dec.R2();
  a.rule = rule;
  return a;
}

/// SGP factors; lambda_1 = 1 and alpha = 0 gives s_i / s_1 exactly.
template <typename Scalar>
std::vector<Scalar> sgp_lambdas(const VectorX<Scalar>& sigma, double alpha) {
  std::vector<Scalar> out(static_cast<std::size_t>(sigma.size()), Scalar(0));
  if (sigma.size() == 0 || sigma(0) <= Scalar(0)) return out;
  const Scalar a(alpha);
  for (Eigen::Index i = 0; i < sigma.size(); ++i) {
    const Scalar ratio = sigma(i) / sigma(0);
    out[static_cast<std::size_t>(i)] = (a + Scalar(1)) * ratio / (a * ratio + Scalar(1));
  }
  return out;
}

/// Left singular basis of L1 R1 with its SGP factors.
template <typename Scalar>
struct SgpProjector {
  MatrixX<Scalar> U;
  std::vector<Scalar> lambda;

  static SgpProjector compute(const SplitAdapter<Scalar>& a, double alpha) {
    SgpProjector p;
    if (a.k == 0) {
      p.U.resize(a.L1.rows(), 0);
      return p;
    }
    const auto f = svd_truncated(MatrixX<Scalar>(a.L1 * a.R1), a.k);
    p.U = f.U;
    p.lambda = sgp_lambdas<Scalar>(f.S, alpha);
    return p;
  }

  /// g - sum_i lambda_i u_i u_i^T g
  MatrixX<Scalar> apply(const MatrixX<Scalar>& g) const {
    if (U.cols() == 0) return g;
    const Eigen::Map<const VectorX<Scalar>> lam(lambda.data(), static_cast<Eigen::Index>(lambda.size()));
    return g - U * (lam.asDiagonal() * (U.transpose() * g));
  }
};

template <typename Scalar>
GradientBundle<Scalar> scale_gradients(const SplitAdapter<Scalar>& a, GradientBundle<Scalar> g,
                                       const SgpProjector<Scalar>* projector = nullptr) {
  if (g.gL1.rows() != a.L1.rows() || g.gL1.cols() != a.L1.cols() ||
      g.gR1.rows() != a.R1.rows() || g.gR1.cols() != a.R1.cols() ||
      g.gL2.rows() != a.L2.rows() || g.gL2.cols() != a.L2.cols() ||
      g.gR2.rows() != a.R2.rows() || g.gR2.cols() != a.R2.cols())
    throw DomainError("gradient bundle does not match adapter shapes");
  if (const auto* f = std::get_if<FixedScaling>(&a.rule)) {
    g.gL1 *= Scalar(f->gamma);
    g.gR1 *= Scalar(f->gamma);
  } else if (const auto* s = std::get_if<SgpScaling>(&a.rule)) {
    if (projector) {
      g.gL1 = projector->apply(g.gL1);
    } else {
      g.gL1 = SgpProjector<Scalar>::compute(a, s->alpha).apply(g.gL1);
    }
  }
  return g;
}

template <typename Scalar>
struct LossAndGradients {
  Scalar loss = Scalar(0);
  GradientBundle<Scalar> grads;
};

template <typename Scalar>
void check_dataset(const SplitAdapter<Scalar>& a, const QuantizedMatrix<Scalar>& q,
                   const MatrixX<Scalar>& x, const MatrixX<Scalar>& y) {
  if (x.rows() < 1 || x.rows() != y.rows() || x.cols() != q.values.rows() ||
      y.cols() != q.values.cols() || a.L1.rows() != q.values.rows())
    throw DomainError("dataset shapes do not match the adapter");
}

/// Mean squared error ||X (Q + L R) - Y||_F^2 / s and its factor gradients.
template <typename Scalar>
LossAndGradients<Scalar> loss_and_gradients(const SplitAdapter<Scalar>& a,
                                            const QuantizedMatrix<Scalar>& q,
                                            const MatrixX<Scalar>& x, const MatrixX<Scalar>& y) {
  check_dataset(a, q, x, y);
  const Scalar s = static_cast<Scalar>(x.rows());
  const MatrixX<Scalar> diff = a.forward(x, q) - y;
  LossAndGradients<Scalar> out;
  out.loss = diff.squaredNorm() / s;
  const MatrixX<Scalar> g = (Scalar(2) / s) * (x.transpose() * diff);  // d loss / d(L R)
  out.grads.gL1 = g * a.R1.transpose();
  out.grads.gR1 = a.L1.transpose() * g;
  out.grads.gL2 = g * a.R2.transpose();
  out.grads.gR2 = a.L2.transpose() * g;
  return out;
}

template <typename Scalar>
Scalar adapter_loss(const SplitAdapter<Scalar>& a, const QuantizedMatrix<Scalar>& q,
                    const MatrixX<Scalar>& x, const MatrixX<Scalar>& y) {
  check_dataset(a, q, x, y);
  return (a.forward(x, q) - y).squaredNorm() / static_cast<Scalar>(x.rows());
}

template <typename Scalar>
void apply_step(SplitAdapter<Scalar>& a, const GradientBundle<Scalar>& g, Scalar lr) {
  a.L1 -= lr * g.gL1;
  a.R1 -= lr * g.gR1;
  a.L2 -= lr * g.gL2;
  a.R2 -= lr * g.gR2;
}

/// Full-batch gradient descent with the adapter's scaling rule applied every
/// step. Returns steps + 1 losses: the initial loss, then the loss after each
/// update.
template <typename Scalar>
std::vector<Scalar> toy_finetune(SplitAdapter<Scalar>& a, const QuantizedMatrix<Scalar>& q,
                                 const MatrixX<Scalar>& x, const MatrixX<Scalar>& y, int steps,
                                 Scalar lr) {
  if (!(lr > Scalar(0))) throw DomainError("learning rate must be positive");
  if (steps < 1) throw DomainError("steps must be >= 1");
  validate_rule(a.rule);
  require_finite(x, "inputs");
  require_finite(y, "targets");

  std::vector<Scalar> losses;
  losses.reserve(static_cast<std::size_t>(steps) + 1);
  std::optional<SgpProjector<Scalar>> projector;
  const auto* sgp = std::get_if<SgpScaling>(&a.rule);
  for (int step = 0; step < steps; ++step) {
    auto lg = loss_and_gradients(a, q, x, y);
    if (step == 0) losses.push_back(lg.loss);
    if (sgp && step % sgp->refresh_every == 0)
      projector = SgpProjector<Scalar>::compute(a, sgp->alpha);
    const auto scaled = scale_gradients(a, std::move(lg.grads), projector ? &*projector : nullptr);
    apply_step(a, scaled, lr);
    losses.push_back(adapter_loss(a, q, x, y));
  }
  return losses;
}

}  // namespace srr
