#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dtsync/model.hpp"
#include "dtsync/trajectory.hpp"
#include "support.hpp"

namespace dtsync {
namespace {

TEST(IncentivePool, HandEvaluatedValues) {
  VspParams p;
  p.d = 80;
  p.theta = 0.05;
  EXPECT_NEAR(incentive_pool(1.0, p, 1.0, 1.0), 84.0, 1e-12);
  p.theta = 0.1;
  EXPECT_EQ(incentive_pool(0.0, p, 1.0, 1.0), 0.0);
  p.d = 50;
  p.theta = 1.0;
  EXPECT_NEAR(incentive_pool(2.0, p, 1.0, 1.0), 200.0, 1e-12);
}

TEST(IncentivePool, NegativeIntensityIsDomainError) {
  EXPECT_THROW(incentive_pool(-1e-3, VspParams{}, 1.0, 1.0), DomainError);
}

TEST(IncentivePool, StrictlyIncreasingInEachArgument) {
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> u(0.01, 2.0);
  for (int i = 0; i < 200; ++i) {
    VspParams p;
    p.d = 50 + 70 * u(rng);
    p.theta = u(rng);
    const double eta = u(rng);
    const double base = incentive_pool(eta, p, 1.0, 1.0);
    EXPECT_GT(incentive_pool(eta * 1.01, p, 1.0, 1.0), base);
    VspParams q = p;
    q.d += 1.0;
    EXPECT_GT(incentive_pool(eta, q, 1.0, 1.0), base);
    q = p;
    q.theta += 0.01;
    EXPECT_GT(incentive_pool(eta, q, 1.0, 1.0), base);
  }
}

TEST(UavUtility, UniformSharing) {
  VspParams p;
  p.d = 80;
  p.theta = 0.05;
  p.c = 0.1;
  PopulationParams pop{500, 0.05, 0.1};
  EXPECT_NEAR(uav_utility(0.5, 1.0, p, pop, 1, 1), 0.236, 1e-12);
  EXPECT_EQ(uav_utility(0.0, 3.0, p, pop, 1, 1), 0.0);
  p.theta = 0.1;
  EXPECT_NEAR(uav_utility(0.5, 1.0, p, pop, 1, 1), 0.252, 1e-12);
  EXPECT_THROW(uav_utility(1.5, 1.0, p, pop, 1, 1), DomainError);
}

TEST(UavUtility, BoundedAwayFromTheEmptyVertex) {
  VspParams p;
  PopulationParams pop;
  double hi = -1e300, lo = 1e300;
  for (double x = 0.01; x <= 1.0; x += 0.01) {
    hi = std::max(hi, uav_utility(x, 2.0, p, pop, 1, 1));
    lo = std::min(lo, uav_utility(x, 2.0, p, pop, 1, 1));
  }
  EXPECT_LE(hi, incentive_pool(2.0, p, 1, 1) / (pop.n * 0.01));
  EXPECT_GE(lo, -p.c);
}

TEST(ValueRhs, DecayAndSynchronization) {
  EXPECT_EQ(value_rhs(60, 3, 0.05), 0.0);
  EXPECT_NEAR(value_rhs(40, 0, 0.05), -2.0, 1e-15);
  EXPECT_NEAR(value_rhs(40, 1, 0.1), -3.0, 1e-15);
}

TEST(ReplicatorRhs, SymmetricProvidersAreAtRest) {
  Scenario sc = test::symmetric_scenario(2);
  const Vec dx = replicator_rhs({Vec::Constant(2, 0.5), Vec::Constant(2, 40)}, Vec::Constant(2, 1.0), sc);
  EXPECT_EQ(dx[0], 0.0);
  EXPECT_EQ(dx[1], 0.0);
}

TEST(ReplicatorRhs, HandEvaluatedTwoProviderCase) {
  Scenario sc = test::two_vsp_scenario();
  const Vec dx = replicator_rhs({Vec::Constant(2, 0.5), Vec::Constant(2, 40)}, Vec::Constant(2, 1.0), sc);
  EXPECT_NEAR(dx[0], -2.0e-4, 1e-15);
  EXPECT_NEAR(dx[1], 2.0e-4, 1e-15);
}

TEST(ReplicatorRhs, TangentToTheSimplex) {
  std::mt19937 rng(11);
  for (int M = 1; M <= 5; ++M) {
    Scenario sc = test::random_scenario(M, rng);
    for (int i = 0; i < 50; ++i) {
      const Vec y = test::random_state(sc, rng);
      const Vec eta = test::random_controls(M, rng);
      EXPECT_NEAR(state_rhs(y, eta, sc).head(M).sum(), 0.0, 1e-14);
    }
  }
}

TEST(ReplicatorRhs, UnselectedProviderStaysUnselected) {
  Scenario sc = test::two_vsp_scenario();
  const Vec dx = replicator_rhs({Vec{{0.0, 1.0}}, Vec::Constant(2, 40)}, Vec{{5.0, 1.0}}, sc);
  EXPECT_EQ(dx[0], 0.0);
  EXPECT_EQ(dx[1], 0.0);
}

TEST(StateRhs, SteadyValuesAndSymmetricSharesAreAFixedPoint) {
  Scenario sc = test::symmetric_scenario(2);
  const double eta = 3.0;
  const Vec y{{0.5, 0.5, eta / sc.vsps[0].theta, eta / sc.vsps[1].theta}};
  EXPECT_LT(state_rhs(y, Vec::Constant(2, eta), sc).lpNorm<Eigen::Infinity>(), 1e-15);
}

TEST(StateRhs, ConcatenatesReplicatorAndValueParts) {
  Scenario sc = test::two_vsp_scenario();
  const Vec y{{0.5, 0.5, 40, 40}};
  const Vec dy = state_rhs(y, Vec::Constant(2, 1.0), sc);
  EXPECT_NEAR(dy[0], -2.0e-4, 1e-15);
  EXPECT_NEAR(dy[1], 2.0e-4, 1e-15);
  EXPECT_NEAR(dy[2], value_rhs(40, 1, 0.05), 1e-15);
  EXPECT_NEAR(dy[3], value_rhs(40, 1, 0.1), 1e-15);
}

TEST(InstantaneousPayoff, HandEvaluatedComponents) {
  Scenario sc = test::two_vsp_scenario();
  sc.vsps[0].w = {1.0, 0.001, 0.01, 0.01};
  const Vec y{{0.5, 0.5, 40, 40}};
  EXPECT_NEAR(instantaneous_payoff(0, y, Vec::Constant(2, 1.0), sc), 0.88590, 1e-4);
}

TEST(InstantaneousPayoff, PenaltiesVanishAtTargets) {
  Scenario sc = test::two_vsp_scenario();
  auto& p = sc.vsps[0];
  const double Nb = sc.pop.n * sc.pop.b;
  const double eta = 0.5 * Nb / (p.d * p.k);
  const Vec y{{0.5, 0.5, p.v, 40}};
  const double expected = p.w[0] * 0.5 * Nb * p.alpha + p.w[1] * p.beta_value() * p.v * p.d;
  EXPECT_NEAR(instantaneous_payoff(0, y, Vec{{eta, 1.0}}, sc), expected, 1e-12);
  p.w = {0, 0, 0, 0};
  EXPECT_EQ(instantaneous_payoff(0, y, Vec{{eta, 1.0}}, sc), 0.0);
}

TEST(InstantaneousPayoff, ConcaveInOwnIntensity) {
  std::mt19937 rng(5);
  Scenario sc = test::random_scenario(3, rng);
  for (int i = 0; i < 50; ++i) {
    const Vec y = test::random_state(sc, rng);
    Vec eta = test::random_controls(3, rng);
    const auto& p = sc.vsps[1];
    const double h = 1e-2;
    const double j0 = instantaneous_payoff(1, y, eta, sc);
    eta[1] += h;
    const double jp = instantaneous_payoff(1, y, eta, sc);
    eta[1] -= 2 * h;
    const double jm = instantaneous_payoff(1, y, eta, sc);
    const double curvature = (jp - 2 * j0 + jm) / (h * h);
    EXPECT_NEAR(curvature, -2 * p.w[3] * p.d * p.d * p.k * p.k, 1e-6);
  }
}

TEST(InstantaneousPayoff, GradientMatchesCentralDifferences) {
  std::mt19937 rng(9);
  Scenario sc = test::random_scenario(3, rng);
  for (int i = 0; i < 30; ++i) {
    const Vec y = test::random_state(sc, rng);
    const Vec eta = test::random_controls(3, rng);
    for (int m = 0; m < 3; ++m) {
      const Vec g = payoff_gradient(m, y, eta, sc);
      for (int j = 0; j < 6; ++j) {
        Vec yp = y, ym = y;
        const double h = 1e-6 * std::max(1.0, std::abs(y[j]));
        yp[j] += h;
        ym[j] -= h;
        const double fd = (instantaneous_payoff(m, yp, eta, sc) - instantaneous_payoff(m, ym, eta, sc)) / (2 * h);
        EXPECT_NEAR(g[j], fd, 1e-5 * std::max(1.0, std::abs(fd)));
      }
    }
  }
}

TEST(ScenarioValidation, RejectsBrokenInvariants) {
  Scenario sc = test::two_vsp_scenario();
  sc.x0 = Vec{{0.6, 0.5}};
  EXPECT_THROW(sc.validate(), ModelError);
  sc = test::two_vsp_scenario();
  sc.g1 = 0.0;
  EXPECT_THROW(sc.validate(), ModelError);
  sc = test::two_vsp_scenario();
  sc.vsps[1].w[3] = 0.0;
  EXPECT_THROW(sc.validate(), ModelError);
  sc = test::two_vsp_scenario();
  sc.x0.resize(0);
  sc.validate();
  EXPECT_DOUBLE_EQ(sc.x0[0], 0.5);
}

TEST(DiscountedPayoff, ConstantIntegrands) {
  Trajectory one;
  for (int i = 0; i <= 30000; ++i) one.push_back(i * 0.01, Vec::Constant(1, 1.0));
  EXPECT_NEAR(discounted_payoff(0, one, 0.0), 300.0, 1e-9);
  EXPECT_NEAR(discounted_payoff(0, one, 1.0), 1.0 - std::exp(-300.0), 1e-10);
}

TEST(DiscountedPayoff, IntegrandCancellingTheDiscount) {
  Trajectory tr;
  for (int i = 0; i <= 200; ++i) tr.push_back(i * 0.01, Vec::Constant(1, std::exp(0.5 * i * 0.01)));
  EXPECT_NEAR(discounted_payoff(0, tr, 0.5), 2.0, 1e-12);
}

TEST(DiscountedPayoff, ExactForCubicsOnIrregularMeshes) {
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(0.05, 0.3);
  for (int n : {3, 4, 7, 10}) {
    std::vector<double> t{0.0}, f;
    for (int i = 1; i < n; ++i) t.push_back(t.back() + u(rng));
    for (double ti : t) f.push_back(1 + 2 * ti - 3 * ti * ti);
    const double T = t.back();
    EXPECT_NEAR(discounted_integral(t, f, 0.0), T + T * T - T * T * T, 1e-12) << n;
  }
}

TEST(DiscountedPayoff, EmptyTrajectoryIsAnError) {
  EXPECT_THROW(discounted_payoff(0, Trajectory{}, 1.0), DomainError);
}

}  // namespace
}  // namespace dtsync
