#include "oracles.hpp"

#include <srr/linalg.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

namespace srr {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

TEST(Oracle, JacobiMatchesKnownSpectrum) {
  const VectorXd sigma = (VectorXd(4) << 5.0, 2.0, 1.0, 0.25).finished();
  const MatrixXd a = oracle::with_spectrum(7, 4, sigma, 1);
  const auto f = oracle::jacobi_svd(a);
  EXPECT_LT((f.S - sigma).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((f.U * f.S.asDiagonal() * f.V.transpose() - a).norm(), 1e-12);
  // wide input goes through the transpose branch
  EXPECT_LT((oracle::singular_values(a.transpose()) - sigma).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SvdTruncated, DiagonalExample) {
  const MatrixXd a = VectorXd((VectorXd(2) << 3.0, 4.0).finished()).asDiagonal();
  const auto f = svd_truncated(a, 1);
  ASSERT_EQ(f.rank(), 1);
  EXPECT_NEAR(f.S(0), 4.0, 1e-14);
  EXPECT_NEAR((a - f.reconstruct()).norm(), 3.0, 1e-14);
}

TEST(SvdTruncated, RankZeroIsEmpty) {
  const MatrixXd a = gaussian_matrix(5, 4, 9);
  const auto f = svd_truncated(a, 0);
  EXPECT_EQ(f.U.rows(), 5);
  EXPECT_EQ(f.U.cols(), 0);
  EXPECT_EQ(f.V.rows(), 4);
  EXPECT_EQ(f.S.size(), 0);
  const MatrixXd rec = f.reconstruct();
  EXPECT_EQ(rec.rows(), 5);
  EXPECT_EQ(rec.cols(), 4);
  EXPECT_EQ(rec.norm(), 0.0);
  EXPECT_DOUBLE_EQ((a - rec).norm(), a.norm());
}

TEST(SvdTruncated, ResidualMatchesJacobiTail) {
  const MatrixXd a = gaussian_matrix(8, 6, 7);
  const VectorXd sigma = oracle::singular_values(a);
  const auto f = svd_truncated(a, 3);
  EXPECT_LT((f.S - sigma.head(3)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR((a - f.reconstruct()).norm(), oracle::tail_norm(sigma, 3), 1e-12);
}

TEST(SvdTruncated, FactorsAreOrthonormal) {
  const MatrixXd a = gaussian_matrix(40, 25, 3);
  const auto f = svd_truncated(a, 10);
  EXPECT_LT((f.U.transpose() * f.U - MatrixXd::Identity(10, 10)).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT((f.V.transpose() * f.V - MatrixXd::Identity(10, 10)).cwiseAbs().maxCoeff(), 1e-8);
  for (Eigen::Index j = 1; j < f.S.size(); ++j) EXPECT_LE(f.S(j), f.S(j - 1));
}

TEST(SvdTruncated, Errors) {
  const MatrixXd a = gaussian_matrix(4, 3, 1);
  EXPECT_THROW(svd_truncated(a, 4), DomainError);
  EXPECT_THROW(svd_truncated(a, -1), DomainError);
  MatrixXd bad = a;
  bad(1, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(svd_truncated(bad, 1), InputError);
  bad(1, 1) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(spectral_profile(bad), InputError);
  EXPECT_THROW(svd_truncated(MatrixXd::Zero(kMaxDim + 1, 1), 1), DomainError);
}

TEST(SvdRandomized, RecoversExactlyLowRank) {
  const MatrixXd a = gaussian_matrix(60, 1, 1) * gaussian_matrix(1, 45, 2) +
                     gaussian_matrix(60, 1, 3) * gaussian_matrix(1, 45, 4);
  const auto f = svd_randomized(a, 2, 11);
  EXPECT_LE((a - f.reconstruct()).norm(), 1e-8 * a.norm());
}

TEST(SvdRandomized, ZeroMatrix) {
  const auto f = svd_randomized(MatrixXd::Zero(20, 12), 1, 5);
  EXPECT_EQ(f.S(0), 0.0);
}

TEST(SvdRandomized, TopValuesWithinOnePercent) {
  const MatrixXd a = oracle::with_spectrum(128, 96, oracle::geometric(96, 0.8), 21);
  const auto exact = svd_truncated(a, 16);
  const auto approx = svd_randomized(a, 16, 5);
  for (Eigen::Index j = 0; j < 16; ++j)
    EXPECT_LE(std::abs(approx.S(j) - exact.S(j)), 0.01 * exact.S(j)) << "j=" << j;
}

TEST(SvdRandomized, SketchWidthBound) {
  const MatrixXd a = gaussian_matrix(30, 20, 1);
  EXPECT_THROW(svd_randomized(a, 7, 14, 4, 1), DomainError);  // 21 > 20
  EXPECT_NO_THROW(svd_randomized(a, 5, 15, 4, 1));
  EXPECT_THROW(svd_randomized(a, 0, 0, 4, 1), DomainError);
}

TEST(SvdRandomized, DeterministicPerSeed) {
  const MatrixXd a = gaussian_matrix(50, 40, 8);
  const auto f1 = svd_randomized(a, 5, 99);
  const auto f2 = svd_randomized(a, 5, 99);
  EXPECT_TRUE(f1.U == f2.U);
  EXPECT_TRUE(f1.S == f2.S);
  EXPECT_TRUE(f1.V == f2.V);
}

// Randomized error stays within 5% of the exact truncation error on
// geometric spectra with ratio <= 0.9.
TEST(SvdRandomized, ErrorCloseToExactOnDecayingSpectra) {
  int cases = 0;
  for (double ratio : {0.5, 0.7, 0.8, 0.9}) {
    for (Eigen::Index p : {4, 8, 16}) {
      const MatrixXd a = oracle::with_spectrum(100, 80, oracle::geometric(80, ratio), 30 + p);
      const double exact = (a - svd_truncated(a, p).reconstruct()).norm();
      const double approx = (a - svd_randomized(a, p, 7).reconstruct()).norm();
      EXPECT_LE(approx, 1.05 * exact) << "ratio=" << ratio << " p=" << p;
      ++cases;
    }
  }
  EXPECT_EQ(cases, 12);
}

TEST(SpectralProfile, Examples) {
  const MatrixXd d = VectorXd((VectorXd(2) << 3.0, 4.0).finished()).asDiagonal();
  const auto p = spectral_profile(d);
  ASSERT_EQ(p.singular_values.size(), 2u);
  EXPECT_NEAR(p.singular_values[0], 4.0, 1e-14);
  EXPECT_NEAR(p.singular_values[1], 3.0, 1e-14);
  EXPECT_NEAR(p.total_energy, 25.0, 1e-12);

  const auto z = spectral_profile(MatrixXd::Zero(5, 5));
  for (double s : z.singular_values) EXPECT_EQ(s, 0.0);
  EXPECT_EQ(z.total_energy, 0.0);

  const MatrixXd a = gaussian_matrix(10, 10, 3);
  const auto q = spectral_profile(a);
  double direct = 0.0;
  for (Eigen::Index i = 0; i < 10; ++i)
    for (Eigen::Index j = 0; j < 10; ++j) direct += a(i, j) * a(i, j);
  EXPECT_NEAR(q.total_energy, direct, 1e-9 * direct);
  for (std::size_t j = 1; j < q.singular_values.size(); ++j)
    EXPECT_LE(q.singular_values[j], q.singular_values[j - 1]);
}

TEST(Rho, Examples) {
  const MatrixXd d = VectorXd((VectorXd(2) << 3.0, 4.0).finished()).asDiagonal();
  const auto p = spectral_profile(d);
  EXPECT_EQ(rho(p, 0), 1.0);
  EXPECT_NEAR(rho(p, 1), 0.36, 1e-14);
  EXPECT_EQ(rho(p, 2), 0.0);
  EXPECT_THROW(rho(p, 3), DomainError);
  EXPECT_THROW(rho(p, -1), DomainError);

  const auto z = spectral_profile(MatrixXd::Zero(4, 3));
  for (Eigen::Index k = 0; k <= 3; ++k) EXPECT_EQ(rho(z, k), 0.0);

  // rank-2 input: everything captured from p = 2 on
  const MatrixXd low = gaussian_matrix(9, 2, 1) * gaussian_matrix(2, 7, 2);
  const auto lp = spectral_profile(low);
  EXPECT_LT(rho(lp, 2), 1e-15);
  EXPECT_LT(rho(lp, 7), 1e-15);
}

TEST(Rho, MonotoneAndResidualIdentity) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const MatrixXd a = gaussian_matrix(12 + seed % 5, 9, seed);
    const auto prof = spectral_profile(a);
    for (Eigen::Index p = 0; p < prof.size(); ++p) {
      EXPECT_LE(rho(prof, p + 1), rho(prof, p));
      const double resid = (a - svd_truncated(a, p).reconstruct()).squaredNorm();
      const double model = rho(prof, p) * a.squaredNorm();
      EXPECT_NEAR(resid, model, 1e-8 * std::max(resid, 1e-300)) << "seed=" << seed << " p=" << p;
    }
  }
}

TEST(PartialProfile, MatchesExactLeadingValues) {
  const MatrixXd a = oracle::with_spectrum(90, 70, oracle::geometric(70, 0.85), 4);
  const auto full = spectral_profile(a);
  const auto part = partial_profile(a, 10, 3);
  EXPECT_FALSE(part.complete());
  EXPECT_NEAR(part.total_energy, full.total_energy, 1e-12 * full.total_energy);
  for (Eigen::Index p = 0; p <= 10; ++p) EXPECT_NEAR(rho(part, p), rho(full, p), 1e-6);
  EXPECT_THROW(rho(part, 11), DomainError);
}

TEST(EckartYoung, BeatsRandomCandidates) {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const MatrixXd a = gaussian_matrix<double>(32, 24, rng);
    for (Eigen::Index p : {1, 4, 8}) {
      const double best = (a - svd_truncated(a, p).reconstruct()).norm();
      for (int c = 0; c < 10; ++c) {
        const MatrixXd b = gaussian_matrix<double>(32, p, rng) * gaussian_matrix<double>(p, 24, rng);
        EXPECT_LT(best, (a - b).norm());
      }
    }
  }
}

TEST(Linalg, FloatInstantiation) {
  const Eigen::MatrixXf a = gaussian_matrix<float>(12, 8, 1);
  const auto f = svd_truncated(a, 3);
  const auto prof = spectral_profile(a);
  EXPECT_NEAR((a - f.reconstruct()).squaredNorm(), rho(prof, 3) * a.squaredNorm(),
              1e-4f * a.squaredNorm());
}

}  // namespace
}  // namespace srr
