#include "dramn/dmd.hpp"

#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"

using namespace dramn;

namespace {

TimeSeriesWindow window_from(const Matrix& data) {
  TimeSeriesWindow w;
  w.data = data;
  w.dt = 1e-3;
  return w;
}

}  // namespace

TEST(BuildSnapshots, ShiftDefinition) {
  Matrix d(3, 1);
  d << 1.0, 2.0, 3.0;
  const auto s = build_snapshots(window_from(d));
  ASSERT_EQ(s.x1.rows(), 1);
  ASSERT_EQ(s.x1.cols(), 2);
  EXPECT_DOUBLE_EQ(s.x1(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(s.x1(0, 1), 2.0);
  EXPECT_DOUBLE_EQ(s.x2(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(s.x2(0, 1), 3.0);
}

TEST(BuildSnapshots, ConstantWindow) {
  const auto s = build_snapshots(window_from(Matrix::Constant(5, 2, 7.5)));
  EXPECT_TRUE(s.x1.isApprox(Matrix::Constant(2, 4, 7.5)));
  EXPECT_TRUE(s.x2.isApprox(s.x1));
}

TEST(BuildSnapshots, HalvingRecurrence) {
  Matrix d(4, 1);
  d << 1.0, 0.5, 0.25, 0.125;
  const auto s = build_snapshots(window_from(d));
  EXPECT_DOUBLE_EQ(s.x1(0, 2), 0.25);
  EXPECT_DOUBLE_EQ(s.x2(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(s.x2(0, 2), 0.125);
}

TEST(BuildSnapshots, DegenerateWindow) {
  EXPECT_THROW(build_snapshots(window_from(Matrix::Ones(1, 3))), DegenerateWindowError);
}

TEST(TruncatedSvd, Identity) {
  const auto s = truncated_svd(Matrix::Identity(3, 3), 2, 1e-12);
  ASSERT_EQ(s.s.size(), 2);
  EXPECT_NEAR(s.s(0), 1.0, 1e-14);
  EXPECT_NEAR(s.s(1), 1.0, 1e-14);
  EXPECT_TRUE((s.u.transpose() * s.u).isApprox(Matrix::Identity(2, 2), 1e-14));
  EXPECT_TRUE((s.v.transpose() * s.v).isApprox(Matrix::Identity(2, 2), 1e-14));
}

TEST(TruncatedSvd, RelativeToleranceCutoff) {
  Matrix a = Matrix::Zero(2, 2);
  a(0, 0) = 3.0;
  a(1, 1) = 1e-20;
  const auto s = truncated_svd(a, 5, 1e-12);
  ASSERT_EQ(s.s.size(), 1);
  EXPECT_DOUBLE_EQ(s.s(0), 3.0);
}

TEST(TruncatedSvd, MatchesIndependentJacobi) {
  std::mt19937_64 rng(42);
  std::normal_distribution<double> nd;
  Matrix a(4, 6);
  for (Index i = 0; i < a.size(); ++i) a.data()[i] = nd(rng);
  const auto s = truncated_svd(a, 3, 1e-12);
  ASSERT_EQ(s.s.size(), 3);
  const Vector ref = oracle::jacobi_singular_values(a);
  for (Index k = 0; k < 3; ++k) EXPECT_NEAR(s.s(k), ref(k), 1e-10);
  EXPECT_LE((s.u.transpose() * s.u - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LE((s.v.transpose() * s.v - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-10);
  // spectral error of the rank-3 reconstruction is sigma_4
  const Matrix recon = s.u * s.s.asDiagonal() * s.v.transpose();
  const double err = oracle::jacobi_singular_values(a - recon)(0);
  EXPECT_NEAR(err, ref(3), 1e-10);
}

TEST(TruncatedSvd, ZeroMatrix) {
  EXPECT_THROW(truncated_svd(Matrix::Zero(3, 4), 2, 1e-10), ZeroMatrixError);
}

TEST(ReducedOperator, StaticAndScaledData) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd;
  Matrix x1(3, 10);
  for (Index i = 0; i < x1.size(); ++i) x1.data()[i] = nd(rng);
  const auto s = truncated_svd(x1, 3, 1e-12);
  const Matrix a_same = reduced_operator(s.u, s.s, s.v, x1);
  EXPECT_TRUE(a_same.isApprox(Matrix::Identity(3, 3), 1e-12));
  const Matrix a_double = reduced_operator(s.u, s.s, s.v, 2.0 * x1);
  EXPECT_TRUE(a_double.isApprox(2.0 * Matrix::Identity(3, 3), 1e-12));
}

TEST(ReducedOperator, SimilarToGenerator) {
  Matrix a(2, 2);
  a << 0.9, 0.2, -0.3, 0.7;
  Matrix x(2, 30);
  x.col(0) << 1.0, 0.3;
  for (Index k = 1; k < x.cols(); ++k) x.col(k) = a * x.col(k - 1);
  const Matrix x1 = x.leftCols(29), x2 = x.rightCols(29);
  const auto s = truncated_svd(x1, 2, 1e-14);
  const Matrix at = reduced_operator(s.u, s.s, s.v, x2);
  const auto ev_at = oracle::eigenvalues_2x2(at);
  const auto ev_a = oracle::eigenvalues_2x2(a);
  EXPECT_NEAR(std::abs(ev_at[0] - ev_a[0]) + std::abs(ev_at[1] - ev_a[1]), 0.0, 1e-8);
}

TEST(EigSmall, Diagonal) {
  Matrix a = Matrix::Zero(2, 2);
  a(0, 0) = 0.5;
  a(1, 1) = 0.9;
  const auto e = eig_small(a);
  EXPECT_NEAR(e.values(0).real(), 0.9, 1e-15);
  EXPECT_NEAR(e.values(1).real(), 0.5, 1e-15);
}

TEST(EigSmall, RotationSpectrumAndOrdering) {
  const double w = 0.3;
  Matrix a(2, 2);
  a << std::cos(w), -std::sin(w), std::sin(w), std::cos(w);
  const auto e = eig_small(a);
  EXPECT_NEAR(e.values(0).real(), std::cos(w), 1e-14);
  EXPECT_NEAR(e.values(0).imag(), std::sin(w), 1e-14);  // +imag first on a tie
  EXPECT_NEAR(e.values(1).imag(), -std::sin(w), 1e-14);
  for (Index k = 0; k < 2; ++k) {
    EXPECT_LE((a.cast<Complex>() * e.vectors.col(k) - e.values(k) * e.vectors.col(k)).norm(), 1e-12);
  }
}

TEST(EigSmall, CompanionDoubleRoot) {
  // z^2 - z + 0.25
  Matrix a(2, 2);
  a << 1.0, -0.25, 1.0, 0.0;
  const auto e = eig_small(a);
  EXPECT_NEAR(std::abs(e.values(0) - 0.5), 0.0, 1e-7);
  EXPECT_NEAR(std::abs(e.values(1) - 0.5), 0.0, 1e-7);
}

TEST(DmdModes, ScalarHalving) {
  Matrix d(6, 1);
  d(0, 0) = 1.0;
  for (Index k = 1; k < 6; ++k) d(k, 0) = 0.5 * d(k - 1, 0);
  DmdConfig cfg;
  const auto r = dmd(window_from(d), cfg);
  ASSERT_EQ(r.r_eff, 1);
  EXPECT_NEAR(r.eigenvalues(0).real(), 0.5, 1e-14);
  EXPECT_NEAR(r.eigenvalues(0).imag(), 0.0, 1e-14);
  EXPECT_GT(std::abs(r.modes(0, 0)), 0.0);
}

TEST(DmdModes, DecoupledAxes) {
  Matrix d(20, 2);
  d.row(0) << 1.0, 1.0;
  for (Index k = 1; k < 20; ++k) d.row(k) << 0.9 * d(k - 1, 0), 0.4 * d(k - 1, 1);
  const auto r = dmd(window_from(d), DmdConfig{});
  ASSERT_EQ(r.r_eff, 2);
  EXPECT_NEAR(r.eigenvalues(0).real(), 0.9, 1e-10);
  EXPECT_NEAR(r.eigenvalues(1).real(), 0.4, 1e-10);
  EXPECT_LE(std::abs(r.modes(1, 0)) / std::abs(r.modes(0, 0)), 1e-8);
  EXPECT_LE(std::abs(r.modes(0, 1)) / std::abs(r.modes(1, 1)), 1e-8);
}

TEST(DmdModes, IdentityDynamics) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  Matrix x1(3, 8);
  for (Index i = 0; i < x1.size(); ++i) x1.data()[i] = nd(rng);
  const auto s = truncated_svd(x1, 3, 1e-12);
  const auto e = eig_small(reduced_operator(s.u, s.s, s.v, x1));
  for (Index k = 0; k < 3; ++k) EXPECT_NEAR(std::abs(e.values(k) - 1.0), 0.0, 1e-12);
  const ComplexMatrix phi = dmd_modes(x1, s.v, s.s, e.vectors);
  // modes lie in the column space of x1
  const Matrix q = s.u;
  const ComplexMatrix resid = phi - q.cast<Complex>() * (q.transpose().cast<Complex>() * phi);
  EXPECT_LE(resid.norm(), 1e-10 * phi.norm());
}

TEST(DelayEmbed, SingleShift) {
  Matrix d(3, 1);
  d << 1.0, 2.0, 3.0;  // a, b, c
  const auto e = delay_embed(window_from(d), 1);
  ASSERT_EQ(e.data.rows(), 2);
  ASSERT_EQ(e.data.cols(), 2);
  // channel block 0 = [b, c], block 1 = [a, b]
  EXPECT_EQ(e.data(0, 0), 2.0);
  EXPECT_EQ(e.data(1, 0), 3.0);
  EXPECT_EQ(e.data(0, 1), 1.0);
  EXPECT_EQ(e.data(1, 1), 2.0);
}

TEST(DelayEmbed, DisabledIsIdentity) {
  Matrix d = Matrix::Random(5, 2);
  EXPECT_EQ(delay_embed(window_from(d), 0).data, d);
}

TEST(DelayEmbed, HankelBlock) {
  Matrix d(5, 1);
  d << 10, 11, 12, 13, 14;
  const auto e = delay_embed(window_from(d), 2);
  // hand-built: block j, sample k -> x[k + 2 - j]
  Matrix expect(3, 3);
  expect << 12, 11, 10,
            13, 12, 11,
            14, 13, 12;
  EXPECT_EQ(e.data, expect);
}

TEST(DelayEmbed, TooManyDelays) {
  EXPECT_THROW(delay_embed(window_from(Matrix::Ones(3, 1)), 3), DegenerateWindowError);
}

TEST(Dmd, RecoversLtiSpectrum) {
  // block diag(0.95, rotation with modulus |0.8 + 0.3i|)
  Matrix a = Matrix::Zero(3, 3);
  a(0, 0) = 0.95;
  a(1, 1) = 0.8;
  a(1, 2) = -0.3;
  a(2, 1) = 0.3;
  a(2, 2) = 0.8;
  std::mt19937_64 rng(9);
  Matrix basis(3, 3);
  std::normal_distribution<double> nd;
  for (Index i = 0; i < 9; ++i) basis.data()[i] = nd(rng);
  const Matrix gen = basis * a * basis.inverse();
  Matrix d(200, 3);
  d.row(0) << 1.0, -0.5, 0.25;
  for (Index k = 1; k < 200; ++k) d.row(k) = (gen * d.row(k - 1).transpose()).transpose();
  DmdConfig cfg;
  cfg.rank = 3;
  const auto r = dmd(window_from(d), cfg);
  ASSERT_EQ(r.r_eff, 3);
  EXPECT_NEAR(std::abs(r.eigenvalues(0) - Complex(0.95, 0.0)), 0.0, 1e-6);
  EXPECT_NEAR(std::abs(r.eigenvalues(1) - Complex(0.8, 0.3)), 0.0, 1e-6);
  EXPECT_NEAR(std::abs(r.eigenvalues(2) - Complex(0.8, -0.3)), 0.0, 1e-6);
}

TEST(Dmd, ConstantWindowSingleUnitMode) {
  const auto r = dmd(window_from(Matrix::Constant(50, 3, 2.0)), DmdConfig{});
  ASSERT_EQ(r.r_eff, 1);
  EXPECT_NEAR(std::abs(r.eigenvalues(0) - 1.0), 0.0, 1e-12);
}

TEST(Dmd, RankClamp) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  Matrix d(30, 2);
  for (Index i = 0; i < d.size(); ++i) d.data()[i] = nd(rng);
  DmdConfig cfg;
  cfg.rank = 5;
  EXPECT_LE(dmd(window_from(d), cfg).r_eff, 2);
}

TEST(Dmd, DelayEmbeddingRecoversScalarOscillation) {
  // one channel cannot hold a rotation; two delays can
  Matrix d(100, 1);
  const double w = 0.2;
  for (Index k = 0; k < 100; ++k) d(k, 0) = std::pow(0.99, k) * std::cos(w * k);
  DmdConfig cfg;
  cfg.rank = 2;
  cfg.delay_embedding = 2;
  const auto r = dmd(window_from(d), cfg);
  ASSERT_EQ(r.r_eff, 2);
  EXPECT_EQ(r.modes.rows(), 1);
  EXPECT_NEAR(std::abs(r.eigenvalues(0) - std::polar(0.99, w)), 0.0, 1e-8);
  EXPECT_EQ(r.window_len, 100);
}

TEST(DmdProperties, RankBoundWithDelays) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 20; ++trial) {
    const Index n = 1 + trial % 3;
    const Index t = 3 + trial;
    const int delays = trial % 3;
    if (delays >= t - 1) continue;
    Matrix d(t, n);
    for (Index i = 0; i < d.size(); ++i) d.data()[i] = nd(rng);
    DmdConfig cfg;
    cfg.rank = 1 + trial % 6;
    cfg.delay_embedding = delays;
    const auto r = dmd(window_from(d), cfg);
    const Index bound = std::min<Index>({cfg.rank, n * (delays + 1), t - delays - 1});
    EXPECT_LE(r.r_eff, bound);
    EXPECT_GE(r.r_eff, 1);
  }
}

TEST(DmdProperties, ShiftInvarianceOfNonUnitEigenvalues) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    // two states seen through three channels leaves room for the offset
    const auto sys = oracle::random_lti(2, 0.9, rng);
    const Matrix states = oracle::simulate(sys.a, 60, rng);
    Matrix obs(3, 2);
    obs << 1.0, 0.2, -0.4, 1.0, 0.7, 0.5;
    Matrix shifted = states * obs.transpose();
    for (Index c = 0; c < 3; ++c) shifted.col(c).array() += 1.0 + c;
    DmdConfig cfg;
    cfg.rank = 3;
    cfg.svd_rel_tol = 1e-13;
    const auto r = dmd(window_from(shifted), cfg);
    // all generator eigenvalues survive, plus one at 1
    int unit = 0;
    for (Index k = 0; k < r.eigenvalues.size(); ++k) {
      if (std::abs(r.eigenvalues(k) - 1.0) < 1e-6) ++unit;
    }
    EXPECT_EQ(unit, 1);
    for (const auto& lam : sys.eigenvalues) {
      double best = 1e9;
      for (Index k = 0; k < r.eigenvalues.size(); ++k) best = std::min(best, std::abs(r.eigenvalues(k) - lam));
      EXPECT_LE(best, 1e-6);
    }
  }
}

TEST(DmdProperties, OneStepPrediction) {
  std::mt19937_64 rng(33);
  for (int trial = 0; trial < 10; ++trial) {
    const Index n = 2 + trial % 5;
    const auto sys = oracle::random_lti(n, 1.0, rng);
    const Matrix data = oracle::simulate(sys.a, 10 * n + 10, rng);
    DmdConfig cfg;
    cfg.rank = static_cast<int>(n);
    const auto r = dmd(window_from(data), cfg);
    const auto s = build_snapshots(window_from(data));
    const ComplexMatrix pinv = r.modes.completeOrthogonalDecomposition().pseudoInverse();
    const ComplexMatrix pred = r.modes * r.eigenvalues.asDiagonal() * pinv * s.x1.cast<Complex>();
    EXPECT_LE((s.x2.cast<Complex>() - pred).norm() / s.x2.norm(), 1e-6);
  }
}

TEST(DmdProperties, RandomSpectrumRecovery) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    const Index n = 1 + trial % 8;
    const auto sys = oracle::random_lti(n, 1.2, rng);
    const Matrix data = oracle::simulate(sys.a, 10 * n + 10, rng);
    DmdConfig cfg;
    cfg.rank = static_cast<int>(n);
    const auto r = dmd(window_from(data), cfg);
    EXPECT_LE(oracle::spectrum_distance(r.eigenvalues, sys.eigenvalues), 1e-6) << "n=" << n;
  }
}
