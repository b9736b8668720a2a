#include <gtest/gtest.h>

#include <random>

#include "fkstab/riccati.hpp"

using namespace fkstab;

namespace {

Eigen::MatrixXd m1(double v) { return Eigen::MatrixXd::Constant(1, 1, v); }

Eigen::MatrixXd random_matrix(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> nd;
  Eigen::MatrixXd M(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) M(i, j) = nd(rng);
  return M;
}

}  // namespace

TEST(ScalarRiccati, Examples) {
  EXPECT_NEAR(scalar_riccati({1, 0, 1}, 0, 30), 1.0, 1e-10);
  EXPECT_NEAR(scalar_riccati({0, -1, 1}, 1, 5), std::exp(-5) / (1 + (1 - std::exp(-5))), 1e-10);
  ScalarRiccati r{1, 1, 2};
  EXPECT_DOUBLE_EQ(r.fixed_point(), 1.0);
  EXPECT_NEAR(scalar_riccati(r, 5, 10), 1.0, 1e-8);
}

// With a0 = 0 the flow is logistic: z_t = a1 z0 e^{a1 t} / (a1 + b z0 (e^{a1 t} - 1)).
TEST(ScalarRiccati, MatchesLogisticClosedForm) {
  for (double a1 : {0.5, 2.0})
    for (double z0 : {0.1, 3.0, 50.0})
      for (double t : {0.3, 1.0, 4.0}) {
        double e = std::exp(a1 * t);
        double exact = a1 * z0 * e / (a1 + 0.7 * z0 * (e - 1));
        EXPECT_NEAR(scalar_riccati({0, a1, 0.7}, z0, t), exact, 1e-10 * (1 + exact));
      }
}

TEST(ScalarRiccati, MonotoneConvergenceFromBothSides) {
  ScalarRiccati r{2, -1, 0.5};
  std::vector<double> ts;
  for (int k = 1; k <= 40; ++k) ts.push_back(0.25 * k);
  auto below = scalar_riccati_path(r, 0.0, ts), above = scalar_riccati_path(r, 10.0, ts);
  double zs = r.fixed_point();
  for (std::size_t k = 1; k < ts.size(); ++k) {
    EXPECT_GE(below[k], below[k - 1]);
    EXPECT_LE(above[k], above[k - 1]);
    EXPECT_LE(below[k], zs + 1e-12);
    EXPECT_GE(above[k], zs - 1e-12);
  }
}

TEST(ScalarRiccati, ComparisonProperty) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> ts;
  for (int k = 1; k <= 20; ++k) ts.push_back(0.5 * k);
  for (int trial = 0; trial < 100; ++trial) {
    ScalarRiccati r{3 * u(rng), 4 * u(rng) - 2, 0.1 + 2 * u(rng)};
    double z0 = 5 * u(rng), z1 = z0 + 5 * u(rng);
    auto lo = scalar_riccati_path(r, z0, ts), hi = scalar_riccati_path(r, z1, ts);
    for (std::size_t k = 0; k < ts.size(); ++k) EXPECT_LE(lo[k], hi[k] + 1e-12);
  }
}

TEST(ScalarRiccati, StiffStartHalvesStep) {
  ScalarRiccati r{0, 0, 1};
  double z = scalar_riccati(r, 1e5, 1.0);
  EXPECT_NEAR(z, 1e5 / (1 + 1e5), 1e-6);
}

TEST(ScalarRiccati, RejectsBadSpec) {
  EXPECT_THROW(scalar_riccati({-1, 0, 1}, 0, 1), error);
  EXPECT_THROW(scalar_riccati({1, 0, 0}, 0, 1), error);
  EXPECT_THROW(scalar_riccati({1, 0, 1}, -1, 1), error);
}

TEST(MatrixRiccati, OneDimensionalTanh) {
  MatrixRiccati spec{m1(0), m1(1), m1(1), m1(0)};
  for (double t : {0.1, 0.5, 1.0, 3.0}) EXPECT_NEAR(matrix_riccati(spec, t)(0, 0), std::tanh(t), 1e-8);
}

TEST(MatrixRiccati, WithoutSReducesToLyapunovOde) {
  std::mt19937_64 rng(32);
  Eigen::MatrixXd A = random_matrix(rng, 2) - 2 * Eigen::MatrixXd::Identity(2, 2);
  Eigen::MatrixXd Sg = random_matrix(rng, 2);
  Eigen::MatrixXd R = Sg * Sg.transpose();
  MatrixRiccati spec{A, R, Eigen::MatrixXd::Zero(2, 2), {}};
  double t = 1.5;
  Eigen::MatrixXd p = matrix_riccati(spec, t);
  // C_t = int_0^t e^{As} R e^{A's} ds by composite Simpson
  int N = 2000;
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(2, 2);
  for (int k = 0; k <= N; ++k) {
    double s = t * k / N, w = (k == 0 || k == N) ? 1 : (k % 2 ? 4 : 2);
    Eigen::MatrixXd E = expm(A * s);
    C += w * E * R * E.transpose();
  }
  C *= t / (3 * N);
  EXPECT_LT((p - C).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(MatrixRiccati, SymmetricAlongTheFlowAndFixedPoint) {
  std::mt19937_64 rng(33);
  Eigen::MatrixXd A = random_matrix(rng, 2);
  Eigen::MatrixXd Sg = random_matrix(rng, 2), Sh = random_matrix(rng, 2);
  MatrixRiccati spec{A, Sg * Sg.transpose(), Sh * Sh.transpose(), {}};
  double worst = 0;
  matrix_riccati(spec, 2.0, 1e-3, [&](double, const Eigen::MatrixXd& p) {
    worst = std::max(worst, (p - p.transpose()).cwiseAbs().maxCoeff());
  });
  EXPECT_LE(worst, 1e-12);
  auto fp = riccati_fixed_point(spec);
  ASSERT_TRUE(fp.converged);
  EXPECT_LE(fp.residual, 1e-8);
  EXPECT_GT(min_eigenvalue(fp.p), 0.0);
  Eigen::EigenSolver<Eigen::MatrixXd> es(A - fp.p * spec.S);
  EXPECT_LT(es.eigenvalues().real().maxCoeff(), 0.0);
}

TEST(MatrixRiccati, RejectsNonPsdInput) {
  MatrixRiccati spec{m1(0), m1(-1), m1(1), m1(0)};
  EXPECT_THROW(matrix_riccati(spec, 1), error);
  Eigen::MatrixXd R(2, 2);
  R << 1, 0.5, 0, 1;
  MatrixRiccati asym{Eigen::MatrixXd::Zero(2, 2), R, Eigen::MatrixXd::Identity(2, 2), {}};
  EXPECT_THROW(matrix_riccati(asym, 1), error);
}

TEST(CoupledOscillator, HarmonicReduction) {
  Eigen::VectorXd x = Eigen::VectorXd::Constant(1, 0.7);
  auto r = coupled_oscillator_semigroup(m1(0), m1(1), m1(1), x, 20);
  EXPECT_NEAR(r.rho_hat, -0.5, 1e-8);
  EXPECT_NEAR(r.p(0, 0), std::tanh(20.0), 1e-8);
  auto s = coupled_oscillator_semigroup(m1(0), m1(1), m1(1), x, 1.0);
  // Q_t(1)(x) = cosh(t)^{-1/2} exp(-x^2 tanh(t)/2)
  EXPECT_NEAR(s.logQ1, -0.5 * (0.49 * std::tanh(1.0) + std::log(std::cosh(1.0))), 1e-9);
  EXPECT_NEAR(s.m(0), 0.7 / std::cosh(1.0), 1e-9);
}

TEST(CoupledOscillator, TailAverageMatchesFixedPoint) {
  std::mt19937_64 rng(34);
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::MatrixXd A = random_matrix(rng, 2), Sg = random_matrix(rng, 2), Sh = random_matrix(rng, 2);
    Eigen::MatrixXd S = Sh * Sh.transpose();
    Eigen::VectorXd x(2);
    x << 1, -1;
    auto r = coupled_oscillator_semigroup(A, Sg, S, x, 40);
    auto fp = riccati_fixed_point({A, Sg * Sg.transpose(), S, {}});
    EXPECT_NEAR(r.rho_hat, -(fp.p * S).trace() / 2, 1e-6);
    EXPECT_LT(r.m.norm(), 1e-6);
  }
}

TEST(CoupledOscillator, SimilarityInvariance) {
  std::mt19937_64 rng(35);
  Eigen::MatrixXd A = random_matrix(rng, 2), Sg = random_matrix(rng, 2), Sh = random_matrix(rng, 2);
  Eigen::MatrixXd S = Sh * Sh.transpose();
  Eigen::VectorXd x = Eigen::VectorXd::Zero(2);
  double base = coupled_oscillator_semigroup(A, Sg, S, x, 40).rho_hat;
  for (int k = 0; k < 5; ++k) {
    Eigen::MatrixXd M = random_matrix(rng, 2) + 2 * Eigen::MatrixXd::Identity(2, 2);
    Eigen::MatrixXd Mi = M.inverse();
    Eigen::MatrixXd S2 = symmetrize(Mi.transpose() * S * Mi);
    double r = coupled_oscillator_semigroup(M * A * Mi, M * Sg, S2, x, 40).rho_hat;
    EXPECT_NEAR(r, base, 1e-6);
  }
}

TEST(CoupledOscillator, RejectsUncontrollable) {
  Eigen::MatrixXd A = Eigen::MatrixXd::Identity(2, 2), Sg(2, 2);
  Sg << 1, 0, 0, 0;
  EXPECT_THROW(coupled_oscillator_semigroup(A, Sg, Eigen::MatrixXd::Identity(2, 2), Eigen::VectorXd::Zero(2), 1),
               error);
  EXPECT_THROW(coupled_oscillator_semigroup(A, Eigen::MatrixXd::Identity(2, 2), Sg * Sg, Eigen::VectorXd::Zero(2), 1),
               error);
}

TEST(BirthDeath, LogisticDriftExamples) {
  auto s = BirthDeathSpec::logistic(1.5, 0.3, 0.2, 0.1, 0.4);
  Eigen::VectorXi one = Eigen::VectorXi::Constant(1, 1);
  EXPECT_DOUBLE_EQ(bd_generator_drift(s, one), 1.5 + 0.3);
  auto t = BirthDeathSpec::logistic(1, 0, 0, 0.1, 0);
  EXPECT_NEAR(bd_generator_drift(t, Eigen::VectorXi::Constant(1, 10)), 1.0, 1e-12);
  for (int x = 2; x <= 200; ++x) {
    Eigen::VectorXi v = Eigen::VectorXi::Constant(1, x);
    EXPECT_NEAR(bd_generator_drift(s, v), s.quadratic_drift(v), 1e-9 * x * x);
  }
  EXPECT_NEAR(bd_generator_drift(s, one) - s.quadratic_drift(one), 0.2 + 0.4, 1e-12);
}

TEST(BirthDeath, MultivariateDriftExamples) {
  Eigen::Vector2d lam(1.0, 0.5), mu(0.2, 0.3), ups(0.4, 0.1), vs(0.0, 0.0);
  Eigen::Matrix2d C, D;
  C << 0, 0.1, 0.05, 0;
  D << 0.5, 0.1, 0.2, 0.6;
  auto s = BirthDeathSpec::multivariate(lam, mu, ups, vs, C, D);
  Eigen::VectorXi e1(2);
  e1 << 1, 0;
  EXPECT_NEAR(bd_generator_drift(s, e1), (0.4 + 1.0 + 0.1 * 0) + 0.1, 1e-12);
  double a1 = (lam - mu).maxCoeff(), b = s.b_coercive();
  for (int i = 1; i <= 20; ++i)
    for (int j = 1; j <= 20; ++j) {
      Eigen::VectorXi x(2);
      x << i, j;
      double L = bd_generator_drift(s, x);
      EXPECT_NEAR(L, s.quadratic_drift(x), 1e-9 * (i + j) * (i + j));
      double n2 = double(i) * i + double(j) * j;
      EXPECT_LE(L, ups.sum() - vs.sum() + a1 * (i + j) - b * n2 + 1e-9);
    }
}

TEST(BirthDeath, RejectsBadSpecs) {
  EXPECT_THROW(BirthDeathSpec::logistic(1, 0, 0, 0, 0), error);
  EXPECT_THROW(BirthDeathSpec::logistic(-1, 0, 0, 1, 0), error);
  Eigen::Vector2d z(0, 0), one(1, 1);
  Eigen::Matrix2d I = Eigen::Matrix2d::Identity();
  EXPECT_THROW(BirthDeathSpec::multivariate(one, one, z, z, I, I), error);
  EXPECT_THROW(BirthDeathSpec::multivariate(one, one, z, one, Eigen::Matrix2d::Zero(), I), error);
}

TEST(BirthDeath, PureDeathMeanDecreases) {
  auto s = BirthDeathSpec::logistic(0, 0, 0.5, 0.2, 0);
  auto rep = bd_moment_bound(s, Eigen::VectorXi::Constant(1, 30), 4.0, 2000, 7);
  EXPECT_TRUE(rep.holds);
  EXPECT_FALSE(rep.truncated);
  for (std::size_t k = 1; k < rep.mean.size(); ++k) EXPECT_LE(rep.mean[k], rep.mean[k - 1]);
}

TEST(BirthDeath, LogisticMomentBelowMajorant) {
  auto s = BirthDeathSpec::logistic(2, 0, 0, 0.5, 0);
  auto rep = bd_moment_bound(s, Eigen::VectorXi::Constant(1, 50), 5.0, 10000, 11, 4);
  EXPECT_TRUE(rep.holds);
  EXPECT_FALSE(rep.truncated);
  EXPECT_EQ(rep.times.size(), 10u);
  EXPECT_NEAR(s.majorant().fixed_point(), 5.0, 1e-12);
  for (std::size_t k = 0; k < rep.mean.size(); ++k) EXPECT_LE(rep.mean[k], rep.majorant[k] + 3 * rep.stderr_[k]);
}

TEST(BirthDeath, LotkaVolterraMomentBelowMajorant) {
  Eigen::Vector2d lam(2.0, 1.5), mu(0.5, 0.4), z(0, 0);
  Eigen::Matrix2d C, D;
  C << 0, 0.05, 0.05, 0;
  D << 0.3, 0.1, 0.1, 0.4;
  auto s = BirthDeathSpec::multivariate(lam, mu, z, z, C, D);
  Eigen::VectorXi x0(2);
  x0 << 10, 15;
  auto rep = bd_moment_bound(s, x0, 3.0, 4000, 12, 4);
  EXPECT_TRUE(rep.holds);
}

TEST(BirthDeath, DeterministicAcrossThreadCounts) {
  auto s = BirthDeathSpec::logistic(2, 0, 0, 0.5, 0);
  auto a = bd_moment_bound(s, Eigen::VectorXi::Constant(1, 20), 2.0, 500, 5, 1);
  auto b = bd_moment_bound(s, Eigen::VectorXi::Constant(1, 20), 2.0, 500, 5, 3);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.stderr_, b.stderr_);
}

TEST(BirthDeath, StateCapFlagsTruncation) {
  auto s = BirthDeathSpec::logistic(5, 1, 0, 0.001, 0);
  s.state_cap = 60;
  auto rep = bd_moment_bound(s, Eigen::VectorXi::Constant(1, 50), 1.0, 50, 3);
  EXPECT_TRUE(rep.truncated);
}
