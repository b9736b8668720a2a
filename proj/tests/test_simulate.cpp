#include <gtest/gtest.h>

#include "fkstab/simulate.hpp"

using namespace fkstab;

namespace {

Eigen::VectorXd at(double x) { return Eigen::VectorXd::Constant(1, x); }

}  // namespace

TEST(CounterRng, ReproducibleAndDistinctStreams) {
  CounterRng a(7, 3), b(7, 3), c(7, 4);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a(), b());
  CounterRng d(7, 3);
  int same = 0;
  for (int i = 0; i < 100; ++i) same += d() == c();
  EXPECT_EQ(same, 0);
}

TEST(CounterRng, NormalMoments) {
  CounterRng g(1, 0);
  double s = 0, s2 = 0, s4 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    double z = g.normal();
    s += z, s2 += z * z, s4 += z * z * z * z;
  }
  EXPECT_NEAR(s / n, 0, 0.01);
  EXPECT_NEAR(s2 / n, 1, 0.01);
  EXPECT_NEAR(s4 / n, 3, 0.06);
}

TEST(SdeStep, BrownianIncrementVariance) {
  auto e = make_ensemble(50000, at(0), 11);
  sde_step(SDEModel::brownian(), e, 0.01);
  double v = e.positions.col(0).squaredNorm() / e.size();
  EXPECT_NEAR(v, 0.01, 0.01 * 0.03);
}

TEST(SdeStep, NonFiniteKillsAndFlags) {
  SDEModel m = SDEModel::brownian();
  m.drift = [](std::span<const double> x, std::span<double> b) { b[0] = x[0] > 0 ? INFINITY : 0.0; };
  auto e = make_ensemble(1000, at(0), 3);
  sde_step(m, e, 0.01);
  sde_step(m, e, 0.01);
  EXPECT_GT(e.nonfinite, 0);
  EXPECT_EQ(e.alive_count() + e.nonfinite, 1000);
}

TEST(SdeStep, Rejections) {
  auto e = make_ensemble(10, at(0), 1);
  EXPECT_THROW(sde_step(SDEModel::brownian(), e, 0.0), error);
  EXPECT_THROW(sde_step(SDEModel::brownian(2), e, 0.1), error);
  SDEModel bad;
  EXPECT_THROW(sde_step(bad, e, 0.1), error);
  EXPECT_THROW(make_ensemble(0, at(0), 1), error);
}

TEST(FeynmanKac, NoAbsorptionGivesUnitMass) {
  auto est = feynman_kac_estimate(SDEModel::ou(), AbsorptionSpec{}, at(0.3), 0.5, 2000, 0.01, 5);
  EXPECT_DOUBLE_EQ(est.Q1, 1.0);
  EXPECT_DOUBLE_EQ(est.Q1_stderr, 0.0);
  EXPECT_DOUBLE_EQ(est.alive_fraction, 1.0);
}

TEST(FeynmanKac, HarmonicMass) {
  auto est = feynman_kac_estimate(SDEModel::brownian(), AbsorptionSpec::quadratic(), at(0.4), 1.0, 20000, 2e-3, 9);
  double exact = ClosedFormKernel::harmonic().mass(1.0, 0.4);
  EXPECT_LT(std::abs(est.Q1 - exact), 3 * est.Q1_stderr + 1e-4);
}

TEST(FeynmanKac, DirichletSurvivalWithBridge) {
  auto est = feynman_kac_estimate(SDEModel::brownian(), AbsorptionSpec::interval(0, 1), at(0.3), 0.2, 20000, 1e-3, 4);
  EXPECT_LT(std::abs(est.Q1 - dirichlet_survival(0.2, 0.3, 50)), 3 * est.Q1_stderr);
}

TEST(FeynmanKac, GridMonitoringOverestimatesSurvival) {
  auto est = feynman_kac_estimate(SDEModel::brownian(), AbsorptionSpec::interval(0, 1, false), at(0.5), 0.3, 20000,
                                  1e-3, 4);
  EXPECT_GT(est.Q1 - dirichlet_survival(0.3, 0.5, 50), 5 * est.Q1_stderr);
}

TEST(FeynmanKac, MassCurveMonotone) {
  auto est = feynman_kac_estimate(SDEModel::ou(0.5), AbsorptionSpec::quadratic(), at(1.0), 2.0, 3000, 0.01, 2, {}, 1, 20);
  ASSERT_EQ(est.mass.size(), 20u);
  for (std::size_t k = 1; k < est.mass.size(); ++k) EXPECT_LE(est.mass[k], est.mass[k - 1]);
  EXPECT_DOUBLE_EQ(est.mass.back(), est.Q1);
}

TEST(FeynmanKac, DeterministicAcrossThreadCounts) {
  auto run = [](int threads) {
    return feynman_kac_estimate(SDEModel::brownian(), AbsorptionSpec::interval(-1, 1), at(0), 0.5, 4000, 0.01, 17,
                                {[](std::span<const double> x) { return x[0] * x[0]; }}, threads);
  };
  auto a = run(1), b = run(3);
  EXPECT_EQ(a.Q1, b.Q1);
  EXPECT_EQ(a.Qf[0], b.Qf[0]);
  auto c = feynman_kac_estimate(SDEModel::brownian(), AbsorptionSpec::interval(-1, 1), at(0), 0.5, 4000, 0.01, 18);
  EXPECT_NE(a.Q1, c.Q1);
}

TEST(FeynmanKac, StepHalvingWithinNoise) {
  auto run = [](double dt) {
    return feynman_kac_estimate(SDEModel::brownian(), AbsorptionSpec::quadratic(), at(0), 1.0, 20000, dt, 21);
  };
  auto a = run(1e-3), b = run(5e-4);
  EXPECT_LT(std::abs(a.Q1 - b.Q1), 2 * std::hypot(a.Q1_stderr, b.Q1_stderr));
}

TEST(FeynmanKac, Rejections) {
  auto brown = SDEModel::brownian();
  EXPECT_THROW(feynman_kac_estimate(brown, AbsorptionSpec::interval(0, 1), at(2), 0.1, 10, 0.01, 1), error);
  EXPECT_THROW(feynman_kac_estimate(brown, AbsorptionSpec{}, at(0), 0.105, 10, 0.01, 1), error);
  EXPECT_THROW(feynman_kac_estimate(brown, AbsorptionSpec{}, Eigen::VectorXd::Zero(2), 0.1, 10, 0.01, 1), error);
  EXPECT_THROW(feynman_kac_estimate(brown, AbsorptionSpec{}, at(0), -1, 10, 0.01, 1), error);
}

TEST(FeynmanKac, AllDeadIsReported) {
  auto est = feynman_kac_estimate(SDEModel::brownian(), AbsorptionSpec::interval(0, 0.02, false), at(0.01), 1.0, 200,
                                  0.01, 1);
  EXPECT_TRUE(est.all_dead);
  EXPECT_EQ(est.Q1, 0.0);
}

TEST(FeynmanKac, GaussOuMeanAgainstClosedForm) {
  // X_t | x ~ N(x e^{-t}, (1 - e^{-2t})/2) for dX = -X dt + dB
  auto est = feynman_kac_estimate(SDEModel::ou(), AbsorptionSpec{}, at(2.0), 1.0, 20000, 1e-3, 8,
                                  {[](std::span<const double> x) { return x[0]; }});
  EXPECT_LT(std::abs(est.Qf[0] - 2 * std::exp(-1.0)), 3 * est.Qf_stderr[0] + 2e-3);
}

TEST(Qsd, HarmonicRateAndShape) {
  auto eta0 = [](CounterRng& g, std::span<double> x) { x[0] = 2 * g.normal(); };
  auto q = qsd_particle_estimate(SDEModel::brownian(), AbsorptionSpec::quadratic(), eta0, 8.0, 5000, 10, 2e-3, 3);
  EXPECT_NEAR(q.rho_hat, -0.5, 0.02);
  EXPECT_NEAR(q.variance, 1.0, 0.1);
  EXPECT_NEAR(q.weights.sum(), 1.0, 1e-12);
}

TEST(Qsd, DirichletRate) {
  auto eta0 = [](CounterRng& g, std::span<double> x) { x[0] = g.uniform(); };
  auto q = qsd_particle_estimate(SDEModel::brownian(), AbsorptionSpec::interval(0, 1), eta0, 2.0, 5000, 10, 1e-3, 3);
  EXPECT_NEAR(q.rho_hat, -M_PI * M_PI / 2, 0.1);
  EXPECT_NEAR(q.mean, 0.5, 0.03);
}

TEST(Qsd, HDynamicsStationaryVariance) {
  auto eta0 = [](CounterRng& g, std::span<double> x) { x[0] = g.normal(); };
  auto q = qsd_particle_estimate(SDEModel::ou(), AbsorptionSpec{}, eta0, 5.0, 5000, 10, 2e-3, 5);
  EXPECT_NEAR(q.rho_hat, 0.0, 1e-12);
  EXPECT_NEAR(q.variance, 0.5, 0.05);
}

TEST(Qsd, ExtinctionAndArgumentErrors) {
  auto eta0 = [](CounterRng& g, std::span<double> x) { x[0] = 0.01 * g.uniform(); };
  EXPECT_THROW(qsd_particle_estimate(SDEModel::brownian(), AbsorptionSpec::interval(0, 0.01, false), eta0, 1.0, 50, 50,
                                     0.01, 1),
               error);
  EXPECT_THROW(qsd_particle_estimate(SDEModel::brownian(), AbsorptionSpec{}, eta0, 1.0, 50, 0, 0.01, 1), error);
  EXPECT_THROW(qsd_particle_estimate(SDEModel::brownian(), AbsorptionSpec{}, eta0, 0.01, 50, 10, 0.01, 1), error);
}

TEST(McValidate, SmallBudgetCases) {
  MCBudget b{20000, 2e-3, 4, 1};
  for (const auto& name : {"harmonic_mass_t1", "dirichlet_survival_t03"}) {
    auto r = mc_validate(name, b);
    EXPECT_TRUE(r.pass) << name << " z=" << r.z;
  }
  EXPECT_NEAR(mc_validate("harmonic_mass_t1", b).oracle, 1 / std::sqrt(std::cosh(1.0)), 1e-15);
  EXPECT_THROW(mc_validate("nope", b), error);
}
