#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "dtsync/model.hpp"
#include "dtsync/ode.hpp"
#include "support.hpp"

namespace dtsync {
namespace {

OdeProblem decay() {
  return {[](double, const Vec& y) -> Vec { return -y; }, 0.0, 1.0, Vec::Constant(1, 1.0), {}};
}

OdeProblem oscillator() {
  return {[](double, const Vec& y) -> Vec { return Vec{{y[1], -y[0]}}; }, 0.0,
          2 * std::numbers::pi, Vec{{1.0, 0.0}}, {}};
}

TEST(FixedStep, ExponentialDecay) {
  const auto tr = integrate_fixed(decay(), 0.01);
  EXPECT_NEAR(tr.back()[0], std::exp(-1.0), 1e-8);
  EXPECT_DOUBLE_EQ(tr.t_end(), 1.0);
}

TEST(FixedStep, HarmonicOscillatorReturnsHome) {
  const auto tr = integrate_fixed(oscillator(), 0.01);
  EXPECT_NEAR(tr.back()[0], 1.0, 1e-6);
  EXPECT_NEAR(tr.back()[1], 0.0, 1e-6);
}

TEST(FixedStep, ZeroFieldKeepsTheInitialValue) {
  OdeProblem p{[](double, const Vec& y) -> Vec { return Vec::Zero(y.size()); }, 0, 5,
               Vec{{1.5, -2.0, 3.25}}, {}};
  const auto tr = integrate_fixed(p, 0.3);
  for (const auto& v : tr.values()) EXPECT_EQ(v, p.y0);
}

TEST(FixedStep, FourthOrderConvergence) {
  // y' = y cos t, y(0)=1 has y = exp(sin t).
  OdeProblem p{[](double t, const Vec& y) -> Vec { return y * std::cos(t); }, 0, 3,
               Vec::Constant(1, 1.0), {}};
  const double exact = std::exp(std::sin(3.0));
  const double e1 = std::abs(integrate_fixed(p, 0.1).back()[0] - exact);
  const double e2 = std::abs(integrate_fixed(p, 0.05).back()[0] - exact);
  EXPECT_GT(e1 / e2, 12.0);
  EXPECT_LT(e1 / e2, 20.0);
}

TEST(FixedStep, NonFiniteDerivativeReportsTime) {
  OdeProblem p{[](double t, const Vec& y) -> Vec {
                 return t > 0.5 ? Vec::Constant(1, std::nan("")) : Vec(-y);
               },
               0, 1, Vec::Constant(1, 1.0), {}};
  try {
    integrate_fixed(p, 0.1);
    FAIL() << "expected IntegrationError";
  } catch (const IntegrationError& e) {
    EXPECT_GT(e.time(), 0.5);
    EXPECT_LE(e.time(), 0.7);
  }
}

TEST(Adaptive, ExponentialDecay) {
  const auto tr = integrate_adaptive(decay(), {1e-9, 1e-12});
  EXPECT_NEAR(tr.back()[0], std::exp(-1.0), 1e-8);
  EXPECT_DOUBLE_EQ(tr.t_end(), 1.0);
}

TEST(Adaptive, Logistic) {
  OdeProblem p{[](double, const Vec& y) -> Vec { return y.cwiseProduct((1.0 - y.array()).matrix()); },
               0, 10, Vec::Constant(1, 0.1), {}};
  const auto tr = integrate_adaptive(p, {1e-10, 1e-12});
  const double e10 = std::exp(10.0);
  EXPECT_NEAR(tr.back()[0], e10 / (9.0 + e10), 1e-7);
}

TEST(Adaptive, BlowUpIsReportedNotReturned) {
  OdeProblem p{[](double, const Vec& y) -> Vec { return y.cwiseProduct(y); }, 0, 2,
               Vec::Constant(1, 1.0), {}};
  EXPECT_THROW(integrate_adaptive(p), IntegrationError);
}

TEST(Adaptive, TimeReversalRecoversTheStart) {
  OdeProblem p{[](double, const Vec& y) -> Vec { return Vec{{-0.5 * y[0] + y[1], -y[0] - 0.2 * y[1]}}; },
               0, 4, Vec{{1.0, -0.5}}, {}};
  AdaptiveOptions opt{1e-10, 1e-12};
  const auto fwd = integrate_adaptive(p, opt);
  const auto back = integrate_adaptive(time_reversed(p, fwd.back()), opt);
  EXPECT_LT((back.back() - p.y0).lpNorm<Eigen::Infinity>(), 1e-8);
}

TEST(Adaptive, ReplicatorKeepsSharesOnTheSimplex) {
  Scenario sc = test::two_vsp_scenario();
  const Vec eta{{2.0, 5.0}};
  OdeProblem p{[&](double, const Vec& y) { return state_rhs(y, eta, sc); }, 0, 300,
               sc.initial_state(), {}};
  const auto tr = integrate_adaptive(p);
  for (const auto& y : tr.values()) {
    EXPECT_NEAR(y.head(2).sum(), 1.0, 1e-9);
    EXPECT_GE(y.head(2).minCoeff(), 0.0);
  }
}

TEST(Adaptive, ProjectionIsApplied) {
  int calls = 0;
  OdeProblem p = decay();
  p.project = [&](Vec& y) {
    ++calls;
    y = y.cwiseMax(0.5);
  };
  const auto tr = integrate_adaptive(p);
  EXPECT_GT(calls, 0);
  EXPECT_NEAR(tr.back()[0], 0.5, 1e-15);
}

TEST(Adaptive, RejectsBadArguments) {
  OdeProblem p = decay();
  p.t1 = p.t0;
  EXPECT_THROW(integrate_adaptive(p), DomainError);
  EXPECT_THROW(integrate_fixed(decay(), 0.0), DomainError);
  EXPECT_THROW(integrate_adaptive(decay(), {0.0, 1e-10}), DomainError);
}

}  // namespace
}  // namespace dtsync
