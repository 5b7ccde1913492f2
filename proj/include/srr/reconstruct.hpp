#pragma once

// Quantization-error reconstruction in a scaled space, and the
// preserve-then-quantize split W ~= L1 R1 + Q + L2 R2 under a total rank
// budget r = k + (r - k).
//
// Every low-rank term is produced as S^-1 SVD_p(S X) with the factor
// convention L = S^-1 U_p, R = diag(sigma_p) V_p^T.

#include <srr/errors.hpp>
#include <srr/linalg.hpp>
#include <srr/quant.hpp>
#include <srr/scaling.hpp>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <tuple>
#include <variant>
#include <vector>

namespace srr {

/// Above this size, selection profiles come from a randomized sketch of the
/// leading values instead of a full SVD.
inline constexpr Eigen::Index kExactProfileLimit = 2048;

template <typename Scalar>
struct LowRank {
  MatrixX<Scalar> L;  // m x p
  MatrixX<Scalar> R;  // p x n

  MatrixX<Scalar> product() const { return L * R; }
};

template <typename Scalar>
struct SplitSelection {
  Eigen::Index k_star = 0;
  std::vector<Scalar> objective_curve;  // rho_k(SW) * rho_{r-k}(SE), k = 0..r
  std::uint64_t probe_seed = 0;
  Eigen::Index rank_budget = 0;
};

enum class ReconMode { split, global };

inline std::string_view to_string(ReconMode m) {
  return m == ReconMode::split ? "split" : "global";
}

template <typename Scalar>
struct SrrDecomposition {
  QuantizedMatrix<Scalar> Q;
  MatrixX<Scalar> L;  // m x r, first k columns preserve, rest reconstruct
  MatrixX<Scalar> R;  // r x n
  Eigen::Index k = 0;
  Eigen::Index rank = 0;
  std::optional<SplitSelection<Scalar>> selection;  // empty when k was given
  Scalar scaled_error = Scalar(0);
  ReconMode mode = ReconMode::split;
  ScalingKind scaling = ScalingKind::identity;

  auto L1() const { return L.leftCols(k); }
  auto R1() const { return R.topRows(k); }
  auto L2() const { return L.rightCols(rank - k); }
  auto R2() const { return R.bottomRows(rank - k); }

  MatrixX<Scalar> low_rank() const { return L * R; }
  MatrixX<Scalar> approximation() const { return Q.values + L * R; }
};

template <typename Scalar>
struct EtaEstimate {
  Scalar eta_hat = Scalar(0);
  Scalar coefficient_of_variation = Scalar(0);
  Eigen::Index samples = 0;
  std::vector<Scalar> ratios;
};

/// Split rank chosen by the probe-based selector.
struct AutoSplit {
  std::uint64_t seed = 0;
};

/// Either an explicit preserved rank k or AutoSplit.
using SplitRank = std::variant<Eigen::Index, AutoSplit>;

namespace detail {

template <typename Scalar>
void check_weight_scaling(const MatrixX<Scalar>& w, const ScalingOperator<Scalar>& s) {
  require_valid(w, "weight");
  if (s.dim() != w.rows())
    throw DomainError("scaling dim " + std::to_string(s.dim()) + " != weight rows " +
                      std::to_string(w.rows()));
}

inline void check_rank(Eigen::Index r, Eigen::Index m, Eigen::Index n) {
  if (r < 0 || r > std::min(m, n))
    throw DomainError("rank budget " + std::to_string(r) + " outside [0, " +
                      std::to_string(std::min(m, n)) + "]");
}

/// S^-1 U diag(s) V^T packaged as (S^-1 U, diag(s) V^T), restricted to the
/// first p triplets.
template <typename Scalar>
LowRank<Scalar> pull_back(const ScalingOperator<Scalar>& s, const SvdFactors<Scalar>& f,
                          Eigen::Index p) {
  LowRank<Scalar> out;
  out.L = s.apply(f.U.leftCols(p), Direction::inverse);
  out.R = f.S.head(p).asDiagonal() * f.V.leftCols(p).transpose();
  return out;
}

}  // namespace detail

/// Activation-aware QER: L R = S^-1 SVD_r(S (W - Q)).
template <typename Scalar>
LowRank<Scalar> qer_reconstruct(const MatrixX<Scalar>& w, const QuantizedMatrix<Scalar>& q,
                                const ScalingOperator<Scalar>& s, Eigen::Index r) {
  detail::check_weight_scaling(w, s);
  if (q.values.rows() != w.rows() || q.values.cols() != w.cols())
    throw DomainError("quantized matrix shape does not match weight");
  detail::check_rank(r, w.rows(), w.cols());
  const MatrixX<Scalar> scaled = s.apply(w - q.values, Direction::forward);
  return detail::pull_back(s, svd_truncated(scaled, r), r);
}

/// ||S (W - Q - L R)||_F
template <typename Scalar>
Scalar scaled_recon_error(const MatrixX<Scalar>& w, const QuantizedMatrix<Scalar>& q,
                          const MatrixX<Scalar>& l, const MatrixX<Scalar>& r,
                          const ScalingOperator<Scalar>& s) {
  if (q.values.rows() != w.rows() || q.values.cols() != w.cols() || l.rows() != w.rows() ||
      r.cols() != w.cols() || l.cols() != r.rows())
    throw DomainError("scaled_recon_error: shape mismatch");
  const MatrixX<Scalar> residual = w - q.values - l * r;
  return s.apply(residual, Direction::forward).norm();
}

template <typename Scalar>
Scalar scaled_recon_error(const MatrixX<Scalar>& w, const SrrDecomposition<Scalar>& dec,
                          const ScalingOperator<Scalar>& s) {
  return scaled_recon_error(w, dec.Q, dec.L, dec.R, s);
}

/// Profile used by the selector: exact below kExactProfileLimit, otherwise the
/// leading `max_rank` values from a randomized sketch.
template <typename Scalar>
SpectralProfile<Scalar> selection_profile(const MatrixX<Scalar>& a, Eigen::Index max_rank,
                                          std::uint64_t sketch_seed) {
  if (std::max(a.rows(), a.cols()) <= kExactProfileLimit) return spectral_profile(a);
  return partial_profile(a, std::max<Eigen::Index>(max_rank, 1), sketch_seed);
}

/// Spectral profile of S E for one draw of E with i.i.d. U[-1, 1] entries.
template <typename Scalar>
SpectralProfile<Scalar> probe_profile(const ScalingOperator<Scalar>& s, Eigen::Index m,
                                      Eigen::Index n, std::uint64_t seed,
                                      Eigen::Index max_rank = 0) {
  if (m < 1 || n < 1 || m > kMaxDim || n > kMaxDim) throw DomainError("probe dims out of range");
  if (s.dim() != m) throw DomainError("probe rows must match scaling dim");
  const MatrixX<Scalar> e = uniform_matrix<Scalar>(m, n, seed);
  return selection_profile<Scalar>(s.apply(e, Direction::forward),
                                   max_rank > 0 ? max_rank : std::min(m, n), seed + 1);
}

/// One probe profile per (scaling, shape, seed), shared by every matrix and
/// every k that needs it. Insert-if-absent under a writer lock; lookups take a
/// reader lock.
template <typename Scalar = double>
class ProbeCache {
 public:
  using Profile = SpectralProfile<Scalar>;

  std::shared_ptr<const Profile> get(const ScalingOperator<Scalar>& s, Eigen::Index m,
                                     Eigen::Index n, std::uint64_t seed,
                                     Eigen::Index max_rank = 0) {
    const Key key{s.fingerprint(), m, n, seed,
                  std::max(m, n) <= kExactProfileLimit ? Eigen::Index(0) : max_rank};
    {
      std::shared_lock lock(mutex_);
      if (auto it = map_.find(key); it != map_.end()) return it->second;
    }
    auto fresh = std::make_shared<const Profile>(probe_profile(s, m, n, seed, max_rank));
    std::unique_lock lock(mutex_);
    auto [it, inserted] = map_.try_emplace(key, std::move(fresh));
    if (inserted) ++misses_;
    return it->second;
  }

  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return map_.size();
  }
  std::size_t misses() const {
    std::shared_lock lock(mutex_);
    return misses_;
  }

 private:
  using Key = std::tuple<std::uint64_t, Eigen::Index, Eigen::Index, std::uint64_t, Eigen::Index>;
  mutable std::shared_mutex mutex_;
  std::map<Key, std::shared_ptr<const Profile>> map_;
  std::size_t misses_ = 0;
};

/// k* = argmin_{0<=k<=r} rho_k(SW) rho_{r-k}(SE). Minimized in log space
/// (zeros compare as -inf); ties go to the smallest k.
template <typename Scalar>
SplitSelection<Scalar> select_k(const SpectralProfile<Scalar>& weight,
                                const SpectralProfile<Scalar>& probe, Eigen::Index r,
                                std::uint64_t probe_seed = 0) {
  if (weight.rows != probe.rows || weight.cols != probe.cols)
    throw DomainError("select_k: weight and probe profiles come from different shapes");
  if (r < 0 || r > std::min(weight.rows, weight.cols) || r > weight.size() || r > probe.size())
    throw DomainError("select_k: rank budget " + std::to_string(r) + " out of range");

  SplitSelection<Scalar> sel;
  sel.rank_budget = r;
  sel.probe_seed = probe_seed;
  sel.objective_curve.resize(static_cast<std::size_t>(r + 1));
  constexpr Scalar neg_inf = -std::numeric_limits<Scalar>::infinity();
  Scalar best = std::numeric_limits<Scalar>::infinity();
  for (Eigen::Index k = 0; k <= r; ++k) {
    const Scalar a = rho(weight, k);
    const Scalar b = rho(probe, r - k);
    sel.objective_curve[static_cast<std::size_t>(k)] = a * b;
    const Scalar score = (a == Scalar(0) || b == Scalar(0)) ? neg_inf : std::log(a) + std::log(b);
    if (score < best) {
      best = score;
      sel.k_star = k;
    }
  }
  return sel;
}

namespace detail {

/// Algorithm body for an explicit k. `weight_svd` holds at least k leading
/// triplets of S W.
template <typename Scalar, typename Quantizer>
SrrDecomposition<Scalar> srr_from_svd(const MatrixX<Scalar>& w, const ScalingOperator<Scalar>& s,
                                      const Quantizer& quantizer, Eigen::Index r, Eigen::Index k,
                                      const SvdFactors<Scalar>& weight_svd, ReconMode mode) {
  SrrDecomposition<Scalar> dec;
  dec.k = k;
  dec.rank = r;
  dec.mode = mode;
  dec.scaling = s.kind();

  // preserve
  const LowRank<Scalar> kept = pull_back(s, weight_svd, k);
  // quantize; with k = 0 this is exactly Q(W)
  const MatrixX<Scalar> base = k == 0 ? w : MatrixX<Scalar>(w - kept.product());
  dec.Q = quantizer(base);

  LowRank<Scalar> fix;
  if (mode == ReconMode::split) {
    // reconstruct the error of the residual with the remaining r - k ranks
    const MatrixX<Scalar> scaled = s.apply(base - dec.Q.values, Direction::forward);
    fix = pull_back(s, svd_truncated(scaled, r - k), r - k);
    dec.L.resize(w.rows(), r);
    dec.R.resize(r, w.cols());
    dec.L << kept.L, fix.L;
    dec.R << kept.R, fix.R;
  } else {
    // one rank-r correction of W - Q replaces both terms
    fix = qer_reconstruct(w, dec.Q, s, r);
    dec.L = std::move(fix.L);
    dec.R = std::move(fix.R);
  }
  dec.scaled_error = scaled_recon_error(w, dec, s);
  return dec;
}

template <typename Scalar>
SplitSelection<Scalar> auto_select(const MatrixX<Scalar>& w, const ScalingOperator<Scalar>& s,
                                   Eigen::Index r, std::uint64_t seed,
                                   ProbeCache<Scalar>* cache) {
  const auto weight = selection_profile<Scalar>(s.apply(w, Direction::forward), r, seed + 2);
  if (cache) return select_k(weight, *cache->get(s, w.rows(), w.cols(), seed, r), r, seed);
  return select_k(weight, probe_profile(s, w.rows(), w.cols(), seed, r), r, seed);
}

template <typename Scalar, typename Quantizer>
SrrDecomposition<Scalar> srr_run(const MatrixX<Scalar>& w, const ScalingOperator<Scalar>& s,
                                 const Quantizer& quantizer, Eigen::Index r, SplitRank split,
                                 ReconMode mode, ProbeCache<Scalar>* cache) {
  check_weight_scaling(w, s);
  check_rank(r, w.rows(), w.cols());
  std::optional<SplitSelection<Scalar>> selection;
  Eigen::Index k = 0;
  if (const auto* fixed = std::get_if<Eigen::Index>(&split)) {
    k = *fixed;
    if (k < 0 || k > r)
      throw DomainError("split k " + std::to_string(k) + " outside [0, " + std::to_string(r) + "]");
  } else {
    selection = auto_select(w, s, r, std::get<AutoSplit>(split).seed, cache);
    k = selection->k_star;
  }
  const SvdFactors<Scalar> weight_svd = svd_truncated(s.apply(w, Direction::forward), k);
  auto dec = srr_from_svd(w, s, quantizer, r, k, weight_svd, mode);
  dec.selection = std::move(selection);
  return dec;
}

}  // namespace detail

/// Preserve the top-k scaled subspace, quantize the remainder, reconstruct its
/// error with the remaining r - k ranks.
template <typename Scalar, typename Quantizer>
  requires WeightQuantizer<Quantizer, Scalar>
SrrDecomposition<Scalar> srr_decompose(const MatrixX<Scalar>& w, const ScalingOperator<Scalar>& s,
                                       const Quantizer& quantizer, Eigen::Index r,
                                       SplitRank split, ProbeCache<Scalar>* cache = nullptr) {
  return detail::srr_run(w, s, quantizer, r, split, ReconMode::split, cache);
}

template <typename Scalar>
SrrDecomposition<Scalar> srr_decompose(const MatrixX<Scalar>& w, const ScalingOperator<Scalar>& s,
                                       const QuantizerConfig& config, Eigen::Index r,
                                       SplitRank split, ProbeCache<Scalar>* cache = nullptr) {
  config.validate();
  return detail::srr_run(w, s, BlockQuantizer{config}, r, split, ReconMode::split, cache);
}

/// Same preserve and quantize steps, then a single rank-r reconstruction of W - Q.
template <typename Scalar, typename Quantizer>
  requires WeightQuantizer<Quantizer, Scalar>
SrrDecomposition<Scalar> srr_global_recon(const MatrixX<Scalar>& w,
                                          const ScalingOperator<Scalar>& s,
                                          const Quantizer& quantizer, Eigen::Index r,
                                          SplitRank split, ProbeCache<Scalar>* cache = nullptr) {
  return detail::srr_run(w, s, quantizer, r, split, ReconMode::global, cache);
}

template <typename Scalar>
SrrDecomposition<Scalar> srr_global_recon(const MatrixX<Scalar>& w,
                                          const ScalingOperator<Scalar>& s,
                                          const QuantizerConfig& config, Eigen::Index r,
                                          SplitRank split, ProbeCache<Scalar>* cache = nullptr) {
  config.validate();
  return detail::srr_run(w, s, BlockQuantizer{config}, r, split, ReconMode::global, cache);
}

/// Plain QER: Q = Q(W), L R = S^-1 SVD_r(S (W - Q)).
template <typename Scalar>
SrrDecomposition<Scalar> qer_pipeline(const MatrixX<Scalar>& w, const ScalingOperator<Scalar>& s,
                                      const QuantizerConfig& config, Eigen::Index r) {
  detail::check_weight_scaling(w, s);
  SrrDecomposition<Scalar> dec;
  dec.Q = quantize(w, config);
  auto lr = qer_reconstruct(w, dec.Q, s, r);
  dec.L = std::move(lr.L);
  dec.R = std::move(lr.R);
  dec.k = 0;
  dec.rank = r;
  dec.scaling = s.kind();
  dec.scaled_error = scaled_recon_error(w, dec, s);
  return dec;
}

template <typename Scalar>
struct OracleSplit {
  Eigen::Index k_opt = 0;
  std::vector<Scalar> loss_curve;  // true scaled error for k = 0..r
};

/// Exhaustive search over k: runs the full split pipeline for every k and
/// keeps the smallest true scaled error (ties to smaller k).
template <typename Scalar>
OracleSplit<Scalar> oracle_best_split(const MatrixX<Scalar>& w, const ScalingOperator<Scalar>& s,
                                      const QuantizerConfig& config, Eigen::Index r) {
  config.validate();
  detail::check_weight_scaling(w, s);
  detail::check_rank(r, w.rows(), w.cols());
  // One SVD of S W serves every k: the leading triplets are shared.
  const SvdFactors<Scalar> weight_svd = svd_truncated(s.apply(w, Direction::forward), r);
  OracleSplit<Scalar> out;
  out.loss_curve.resize(static_cast<std::size_t>(r + 1));
  const BlockQuantizer quantizer{config};
  for (Eigen::Index k = 0; k <= r; ++k) {
    const auto dec =
        detail::srr_from_svd(w, s, quantizer, r, k, weight_svd, ReconMode::split);
    out.loss_curve[static_cast<std::size_t>(k)] = dec.scaled_error;
    if (dec.scaled_error < out.loss_curve[static_cast<std::size_t>(out.k_opt)]) out.k_opt = k;
  }
  return out;
}

/// Empirical relative error scale ||S E_Q(A)|| / ||S A|| over Gaussian draws
/// of A (S.dim() x cols).
template <typename Scalar>
EtaEstimate<Scalar> estimate_eta(const QuantizerConfig& config, const ScalingOperator<Scalar>& s,
                                 Eigen::Index trials, Eigen::Index cols, std::uint64_t seed) {
  config.validate();
  if (trials < 1) throw DomainError("estimate_eta needs at least one trial");
  if (cols < 1 || cols > kMaxDim) throw DomainError("estimate_eta: cols out of range");
  Rng rng(seed);
  EtaEstimate<Scalar> out;
  out.samples = trials;
  for (Eigen::Index t = 0; t < trials; ++t) {
    MatrixX<Scalar> a = gaussian_matrix<Scalar>(s.dim(), cols, rng);
    const Scalar denom = s.apply(a, Direction::forward).norm();
    if (denom == Scalar(0)) {  // measure-zero; redraw
      --t;
      continue;
    }
    const MatrixX<Scalar> err = quantization_error(a, quantize(a, config));
    out.ratios.push_back(s.apply(err, Direction::forward).norm() / denom);
  }
  Scalar mean(0);
  for (Scalar v : out.ratios) mean += v;
  mean /= static_cast<Scalar>(trials);
  Scalar var(0);
  for (Scalar v : out.ratios) var += (v - mean) * (v - mean);
  var = trials > 1 ? var / static_cast<Scalar>(trials - 1) : Scalar(0);
  out.eta_hat = mean;
  out.coefficient_of_variation = mean > Scalar(0) ? std::sqrt(var) / mean : Scalar(0);
  return out;
}

}  // namespace srr
