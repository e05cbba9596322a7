#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dtsync/stackelberg.hpp"
#include "support.hpp"

namespace dtsync {
namespace {

Scenario foc_scenario() {
  Scenario sc = test::two_vsp_scenario();
  for (auto& p : sc.vsps) p.w[3] = 0.01;
  sc.vsps[1].role = Role::leader;
  return sc;
}

const Vec kHalf{{0.5, 0.5, 40.0, 40.0}};

LeaderCostates zero_adjoints(int M, size_t followers) {
  return {Vec::Zero(2 * M), std::vector<Vec>(followers, Vec::Zero(2 * M))};
}

struct RandomPoint {
  Scenario sc;
  Hierarchy h;
  Vec y, eta;
  std::vector<Vec> lambda;
  LeaderCostates a;
};

// Random scenario with the last `leaders` providers leading.
RandomPoint random_point(std::mt19937& rng, int M = 3, int leaders = 1, double scale = 2.0) {
  RandomPoint p;
  p.sc = test::random_scenario(M, rng);
  for (int l = 0; l < leaders; ++l) p.sc.vsps[static_cast<size_t>(M - 1 - l)].role = Role::leader;
  p.h = Hierarchy::of(p.sc);
  p.y = test::random_state(p.sc, rng);
  p.eta = test::random_controls(M, rng);
  for (size_t f = 0; f < p.h.followers.size(); ++f) p.lambda.push_back(test::random_costates(2 * M, rng, scale));
  p.a.psi = test::random_costates(2 * M, rng, scale);
  for (size_t f = 0; f < p.h.followers.size(); ++f) p.a.phi.push_back(test::random_costates(2 * M, rng, scale));
  return p;
}

TEST(FollowerFoc, ZeroCostatesBalanceDemand) {
  EXPECT_NEAR(follower_foc(0, kHalf, Vec::Zero(4), foc_scenario()), 3.125, 1e-14);
}

TEST(FollowerFoc, OwnValueCostateShiftsByOne) {
  EXPECT_NEAR(follower_foc(0, kHalf, Vec{{0.0, 0.0, 1.28, 0.0}}, foc_scenario()), 4.125, 1e-12);
}

TEST(FollowerFoc, MatchesTheSimultaneousControl) {
  std::mt19937 rng(5);
  for (int k = 0; k < 20; ++k) {
    const auto p = random_point(rng);
    EXPECT_EQ(follower_foc(0, p.y, p.lambda[0], p.sc), foc_control(0, p.y, p.lambda[0], p.sc));
  }
}

TEST(LeaderHamiltonian, ZeroAdjointsGiveThePayoff) {
  std::mt19937 rng(6);
  const auto p = random_point(rng);
  const int i = p.h.leaders[0];
  EXPECT_NEAR(leader_hamiltonian(i, p.y, p.lambda, p.eta, zero_adjoints(3, 2), p.sc),
              instantaneous_payoff(i, p.y, p.eta, p.sc), 1e-12);
}

TEST(LeaderHamiltonian, WithoutFollowersIsTheSimultaneousHamiltonian) {
  std::mt19937 rng(7);
  Scenario sc = test::random_scenario(2, rng);
  for (auto& v : sc.vsps) v.role = Role::leader;
  const Vec y = test::random_state(sc, rng);
  const Vec eta = test::random_controls(2, rng);
  const Vec psi = test::random_costates(4, rng);
  const LeaderCostates a{psi, {}};
  for (int i = 0; i < 2; ++i) {
    EXPECT_NEAR(leader_hamiltonian(i, y, {}, eta, a, sc), hamiltonian(i, y, eta, psi, sc), 1e-12);
    const auto r = leader_adjoint_rhs(i, y, {}, eta, a, sc);
    EXPECT_TRUE(r.dphi.empty());
    EXPECT_LE((r.dpsi - adjoint_rhs(i, y, eta, psi, sc)).lpNorm<Eigen::Infinity>(), 1e-10);
  }
}

TEST(LeaderHamiltonian, ControlDerivativeMatchesFiniteDifferences) {
  std::mt19937 rng(8);
  for (int k = 0; k < 100; ++k) {
    const auto p = random_point(rng);
    const int i = p.h.leaders[0];
    const double exact = leader_control_derivative(i, p.y, p.lambda, p.eta, p.a, p.sc);
    const double fd = leader_control_derivative_fd(i, p.y, p.lambda, p.eta, p.a, p.sc);
    EXPECT_NEAR(exact, fd, 1e-5 * std::max(1.0, std::abs(exact)));
  }
}

TEST(LeaderFoc, CostateFreeCaseBalancesDemand) {
  const Scenario sc = foc_scenario();
  EXPECT_NEAR(leader_foc(1, kHalf, {Vec::Zero(4)}, Vec::Zero(2), zero_adjoints(2, 1), sc), 3.125, 1e-12);
}

TEST(LeaderFoc, OwnValueAdjointShiftsByOne) {
  const Scenario sc = foc_scenario();
  auto a = zero_adjoints(2, 1);
  a.psi[3] = 2 * 0.01 * 80 * 80 * 0.1 * 0.1;
  EXPECT_NEAR(leader_foc(1, kHalf, {Vec::Zero(4)}, Vec::Zero(2), a, sc), 4.125, 1e-12);
}

TEST(LeaderFoc, AgreesWithNumericMaximizer) {
  std::mt19937 rng(9);
  for (int k = 0; k < 100; ++k) {
    const auto p = random_point(rng, 3, 1, 1.0);
    const int i = p.h.leaders[0];
    const double closed = leader_foc(i, p.y, p.lambda, p.eta, p.a, p.sc);
    const double numeric = leader_foc_numeric(i, p.y, p.lambda, p.eta, p.a, p.sc, 10 * closed + 100);
    EXPECT_NEAR(closed, numeric, 1e-6 * std::max(1.0, closed)) << "point " << k;
  }
}

TEST(LeaderFoc, ZeroesTheControlDerivativeOnInteriorArcs) {
  std::mt19937 rng(10);
  int interior = 0;
  for (int k = 0; k < 50; ++k) {
    auto p = random_point(rng);
    const int i = p.h.leaders[0];
    p.eta[i] = leader_foc(i, p.y, p.lambda, p.eta, p.a, p.sc);
    const double g = leader_control_derivative(i, p.y, p.lambda, p.eta, p.a, p.sc);
    if (p.eta[i] > 0.0) {
      ++interior;
      EXPECT_NEAR(g, 0.0, 1e-9);
    } else {
      EXPECT_LE(g, 1e-12);
    }
  }
  EXPECT_GT(interior, 10);
}

TEST(LeaderAdjoint, ExactMatchesFiniteDifferences) {
  std::mt19937 rng(11);
  for (int k = 0; k < 100; ++k) {
    const auto p = random_point(rng, 3, k % 2 + 1);
    for (const int i : p.h.leaders) {
      const auto& a = p.a;
      const auto ex = leader_adjoint_rhs(i, p.y, p.lambda, p.eta, a, p.sc, GradientMode::exact);
      const auto fd = leader_adjoint_rhs(i, p.y, p.lambda, p.eta, a, p.sc, GradientMode::finite_difference);
      const double scale = std::max(1.0, ex.dpsi.lpNorm<Eigen::Infinity>());
      EXPECT_LE((ex.dpsi - fd.dpsi).lpNorm<Eigen::Infinity>(), 1e-5 * scale);
      for (size_t f = 0; f < ex.dphi.size(); ++f)
        EXPECT_LE((ex.dphi[f] - fd.dphi[f]).lpNorm<Eigen::Infinity>(),
                  1e-5 * std::max(1.0, ex.dphi[f].lpNorm<Eigen::Infinity>()));
    }
  }
}

TEST(LeaderAdjoint, CyclicCoordinateHasConstantAdjoint) {
  std::mt19937 rng(12);
  auto p = random_point(rng);
  p.sc.rho = 0.0;
  // with no phi and no psi weight on z_0, nothing in H^L depends on z_0
  for (auto& v : p.a.phi) v.setZero();
  p.a.psi[3] = 0.0;
  const auto r = leader_adjoint_rhs(p.h.leaders[0], p.y, p.lambda, p.eta, p.a, p.sc);
  EXPECT_NEAR(r.dpsi[3], 0.0, 1e-14);
}

TEST(LeaderAdjoint, LiteralFormReturnsTheFollowerCostateRate) {
  std::mt19937 rng(13);
  const auto p = random_point(rng);
  const auto r = leader_adjoint_rhs(p.h.leaders[0], p.y, p.lambda, p.eta, p.a, p.sc, GradientMode::exact,
                                    PhiEquation::literal);
  Vec eta = p.eta;
  for (size_t f = 0; f < p.lambda.size(); ++f)
    eta[p.h.followers[f]] = follower_foc(p.h.followers[f], p.y, p.lambda[f], p.sc);
  for (size_t f = 0; f < p.lambda.size(); ++f) {
    const Vec rate = adjoint_rhs(p.h.followers[f], p.y, eta, p.lambda[f], p.sc);
    EXPECT_LE((r.dphi[f] - (p.sc.rho * p.a.phi[f] - rate)).lpNorm<Eigen::Infinity>(), 1e-12);
  }
}

TEST(StackedSystem, WithoutLeadersReducesToTheSimultaneousGame) {
  std::mt19937 rng(14);
  for (int k = 0; k < 100; ++k) {
    const int M = 2 + k % 3;
    const Scenario sc = test::random_scenario(M, rng);
    const Hierarchy h = Hierarchy::of(sc);
    ASSERT_TRUE(h.leaders.empty());
    ASSERT_EQ(h.dimension(), nash_dimension(M));
    Vec w(h.dimension());
    w.head(2 * M) = test::random_state(sc, rng);
    w.tail(w.size() - 2 * M) = test::random_costates(static_cast<int>(w.size()) - 2 * M, rng);
    const Vec a = stackelberg_rhs(w, sc, h), b = nash_rhs(w, sc);
    EXPECT_LE((a - b).lpNorm<Eigen::Infinity>(), 1e-10);
    const Vec w1 = w.reverse();
    EXPECT_LE((stackelberg_boundary(w, w1, sc, h) - nash_boundary(w, w1, sc)).lpNorm<Eigen::Infinity>(), 1e-14);
  }
}

TEST(StackedSystem, DimensionCountsEveryBlock) {
  for (int M = 2; M <= 5; ++M) {
    Scenario sc = test::symmetric_scenario(M);
    sc.vsps.back().role = Role::leader;
    const Hierarchy h = Hierarchy::of(sc);
    // y, M-1 follower costates, one psi, M-1 phis
    EXPECT_EQ(h.dimension(), 2 * M * (1 + (M - 1) + 1 + (M - 1)));
    EXPECT_EQ(h.dimension(), 4 * M * M);
  }
}

TEST(SolveStackelberg, RejectsDegenerateHierarchies) {
  Scenario sc = test::comparison_scenario();
  EXPECT_THROW(solve_stackelberg(test::without_roles(sc)), ModelError);
  for (auto& p : sc.vsps) p.role = Role::leader;
  EXPECT_THROW(solve_stackelberg(sc), ModelError);
}

class ComparisonGame : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    leader_ = new StackelbergSolution(solve_stackelberg(test::comparison_scenario()));
    nash_ = new NashSolution(solve_open_loop_nash(test::without_roles(test::comparison_scenario())));
  }
  static void TearDownTestSuite() {
    delete leader_;
    delete nash_;
  }
  static StackelbergSolution* leader_;
  static NashSolution* nash_;
};
StackelbergSolution* ComparisonGame::leader_ = nullptr;
NashSolution* ComparisonGame::nash_ = nullptr;

TEST_F(ComparisonGame, MixedBoundaryConditionsHold) {
  EXPECT_LE(leader_->boundary_residual(), 1e-8);
  EXPECT_LE((leader_->trajectory.front().head(6) - leader_->scenario.initial_state()).lpNorm<Eigen::Infinity>(), 1e-8);
  for (const auto& e : leader_->controls.values()) EXPECT_GE(e.minCoeff(), 0.0);
}

TEST_F(ComparisonGame, LeaderDoesNoWorseThanInSimultaneousPlay) {
  const double tol = 1e-6 * std::abs(nash_->payoffs[2]);
  EXPECT_GE(leader_->payoffs[2], nash_->payoffs[2] - tol);
}

TEST_F(ComparisonGame, MeshPayoffsMatchForwardSimulation) {
  const auto sim = simulate_payoffs(leader_->scenario, leader_->control_path(), leader_->scenario.horizon);
  for (int m = 0; m < 3; ++m) EXPECT_NEAR(leader_->payoffs[m], sim.payoffs[m], 1e-5 * std::abs(sim.payoffs[m]));
}

TEST_F(ComparisonGame, LeaderControlSatisfiesItsFirstOrderCondition) {
  const auto& h = leader_->hierarchy;
  for (size_t k = 0; k < leader_->trajectory.size(); k += 7) {
    const auto p = unstack(h, leader_->trajectory.value(k));
    const Vec eta = leader_->controls.value(k);
    if (eta[2] > 0.0) EXPECT_NEAR(leader_control_derivative(2, p.y, p.lambda, eta, p.leader[0], leader_->scenario), 0.0, 1e-8);
  }
}

TEST_F(ComparisonGame, FollowersHaveNoProfitableDeviation) {
  for (const int m : leader_->hierarchy.followers) {
    const auto devs = random_deviations(leader_->control_path(), m, leader_->scenario.horizon, 20, 3);
    const auto rep = deviation_check(leader_->scenario, leader_->control_path(), m, devs);
    EXPECT_TRUE(rep.passes(1e-3 * std::abs(rep.equilibrium_payoff))) << "follower " << m << " gains " << rep.max_improvement();
  }
}

TEST(ComplexityProbe, DimensionIsQuadraticAndCostTracksIt) {
  GameSolverOptions opt;
  opt.segments = 10;
  opt.steps_per_segment = 20;
  const auto rep = complexity_probe({2, 3, 4}, opt, 400);
  ASSERT_EQ(rep.rows.size(), 3u);
  EXPECT_EQ(rep.rows[0].dimension, 16);
  EXPECT_EQ(rep.rows[1].dimension, 36);
  EXPECT_EQ(rep.rows[2].dimension, 64);
  EXPECT_NEAR(rep.dimension_exponent, 2.0, 1e-12);
  for (const auto& r : rep.rows) EXPECT_EQ(r.rhs_per_shooting_residual, 10 * (4 * 20 + 1));
  const double cost_ratio = rep.rows[2].seconds_per_rhs / rep.rows[0].seconds_per_rhs;
  const double dim_ratio = 64.0 / 16.0;
  EXPECT_GT(cost_ratio, dim_ratio / 2) << cost_ratio;
  EXPECT_LT(cost_ratio, dim_ratio * 2) << cost_ratio;
}

}  // namespace
}  // namespace dtsync
