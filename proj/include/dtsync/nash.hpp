#pragma once

// Open-loop Nash equilibrium of the simultaneous synchronization game:
// current-value Hamiltonians, clamped first-order controls, costate
// dynamics, and the coupled state-costate boundary-value problem.

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <vector>

#include "dtsync/bvp.hpp"
#include "dtsync/error.hpp"
#include "dtsync/evo.hpp"
#include "dtsync/game.hpp"
#include "dtsync/model.hpp"
#include "dtsync/trajectory.hpp"

namespace dtsync {

/// Row m holds the costates lambda_m of provider m (length 2M).
using CostateBlock = Eigen::MatrixXd;

/// H_m = J_m + lambda_m . f(y, eta).
inline double hamiltonian(int m, const Vec& y, const Vec& eta, const Vec& lambda_m,
                          const Scenario& sc) {
  return instantaneous_payoff(m, y, eta, sc) + lambda_m.dot(state_rhs(y, eta, sc));
}

/// dH_m / d(eta_m).
inline double hamiltonian_control_derivative(int m, const Vec& y, const Vec& eta,
                                             const Vec& lambda_m, const Scenario& sc) {
  const auto& p = sc.vsps[static_cast<size_t>(m)];
  const double dk = p.d * p.k;
  const double gap = y[m] * sc.pop.n * sc.pop.b - eta[m] * dk;
  return 2.0 * p.w[3] * dk * gap + detail::control_transport<double>(sc, m, y, lambda_m);
}

/// Maximizer of H_m over eta_m >= 0. Only provider m's own costates enter,
/// so the controls of the other providers are not needed.
inline double foc_control(int m, const Vec& y, const Vec& lambda_m, const Scenario& sc) {
  return detail::foc_control<double>(sc, m, y, lambda_m);
}

inline Vec foc_controls(const Vec& y, const CostateBlock& lambda, const Scenario& sc) {
  const int M = sc.size();
  Vec eta(M);
  for (int m = 0; m < M; ++m) eta[m] = foc_control(m, y, lambda.row(m).transpose(), sc);
  return eta;
}

/// dH_m/dy by central differences with step 1e-6 max(1, |y_i|).
inline Vec hamiltonian_gradient_fd(int m, const Vec& y, const Vec& eta, const Vec& lambda_m,
                                   const Scenario& sc) {
  Vec g(y.size());
  Vec yp = y, ym = y;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double h = 1e-6 * std::max(1.0, std::abs(y[i]));
    yp[i] = y[i] + h;
    ym[i] = y[i] - h;
    g[i] = (hamiltonian(m, yp, eta, lambda_m, sc) - hamiltonian(m, ym, eta, lambda_m, sc)) / (2 * h);
    yp[i] = ym[i] = y[i];
  }
  return g;
}

inline Vec hamiltonian_gradient(int m, const Vec& y, const Vec& eta, const Vec& lambda_m,
                                const Scenario& sc, GradientMode mode = GradientMode::exact) {
  if (mode == GradientMode::finite_difference) return hamiltonian_gradient_fd(m, y, eta, lambda_m, sc);
  return detail::hamiltonian_gradient<double>(sc, m, y, eta, lambda_m);
}

/// d(lambda_m)/dt = rho lambda_m - dH_m/dy at the equilibrium controls.
inline Vec adjoint_rhs(int m, const Vec& y, const Vec& eta_star, const Vec& lambda_m,
                       const Scenario& sc, GradientMode mode = GradientMode::exact) {
  return sc.rho * lambda_m - hamiltonian_gradient(m, y, eta_star, lambda_m, sc, mode);
}

// ---------------------------------------------------------------------------
// Stacked system w = (y, lambda_1, ..., lambda_M)

inline Eigen::Index nash_dimension(int M) { return 2 * M + 2 * M * M; }

inline CostateBlock unstack_costates(const Vec& w, int M) {
  CostateBlock L(M, 2 * M);
  for (int m = 0; m < M; ++m) L.row(m) = w.segment(2 * M + 2 * M * m, 2 * M).transpose();
  return L;
}

inline Vec nash_rhs(const Vec& w, const Scenario& sc, GradientMode mode = GradientMode::exact) {
  const int M = sc.size();
  const Vec y = w.head(2 * M);
  const CostateBlock L = unstack_costates(w, M);
  const Vec eta = foc_controls(y, L, sc);
  Vec dw(w.size());
  dw.head(2 * M) = state_rhs(y, eta, sc);
  for (int m = 0; m < M; ++m)
    dw.segment(2 * M + 2 * M * m, 2 * M) = adjoint_rhs(m, y, eta, L.row(m).transpose(), sc, mode);
  return dw;
}

inline Vec nash_boundary(const Vec& wa, const Vec& wb, const Scenario& sc) {
  const int M = sc.size();
  Vec r(wa.size());
  r.head(2 * M) = wa.head(2 * M) - sc.initial_state();
  r.tail(wa.size() - 2 * M) = wb.tail(wa.size() - 2 * M);
  return r;
}

// ---------------------------------------------------------------------------

struct NashSolution {
  Scenario scenario;
  Trajectory trajectory;  // stacked (y, lambda)
  Trajectory controls;    // eta*(t) on the same mesh
  Vec payoffs;            // discounted, Simpson on the solution mesh
  SolveDiagnostics diagnostics;

  int size() const { return scenario.size(); }
  Vec state(double t) const { return trajectory.at(t).head(2 * size()); }
  CostateBlock costates(double t) const { return unstack_costates(trajectory.at(t), size()); }
  /// Equilibrium controls from the interpolated states and costates.
  Vec eta(double t) const {
    const Vec w = trajectory.at(t);
    return foc_controls(w.head(2 * size()), unstack_costates(w, size()), scenario);
  }
  /// Self-contained copy, safe to outlive the solution.
  ControlPath control_path() const {
    return [sc = scenario, tr = trajectory](double t) {
      const Vec w = tr.at(t);
      return foc_controls(w.head(2 * sc.size()), unstack_costates(w, sc.size()), sc);
    };
  }
  /// max_m ||lambda_m(T)||_inf
  double transversality_residual() const {
    return trajectory.back().tail(trajectory.dim() - 2 * size()).lpNorm<Eigen::Infinity>();
  }
};

namespace detail {

inline Trajectory controls_on_mesh(const Trajectory& stacked,
                                   const std::function<Vec(const Vec&)>& controls_of) {
  Trajectory out;
  for (size_t i = 0; i < stacked.size(); ++i)
    out.push_back(stacked.times()[i], controls_of(stacked.value(i)));
  return out;
}

}  // namespace detail

/// Open-loop Nash equilibrium on [0, horizon].
inline NashSolution solve_open_loop_nash(const Scenario& scenario, const GameSolverOptions& opt = {}) {
  Scenario sc = scenario;
  sc.validate();
  const int M = sc.size();
  const Eigen::Index n = nash_dimension(M);

  BvpProblem p;
  p.rhs = [&sc, mode = opt.gradient](double, const Vec& w) { return nash_rhs(w, sc, mode); };
  p.boundary = [&sc](const Vec& a, const Vec& b) { return nash_boundary(a, b, sc); };
  const Vec y0 = sc.initial_state();
  auto cold = [&](double) {
    Vec w = Vec::Zero(n);
    w.head(2 * M) = y0;
    return w;
  };

  NashSolution sol;
  sol.scenario = sc;
  BvpSolution bvp = detail::solve_game_bvp(p, cold, sc.horizon, opt, sol.diagnostics);
  sol.trajectory = std::move(bvp.trajectory);
  detail::check_twin_values(sol.trajectory, M);
  const auto controls_of = [&](const Vec& w) {
    return foc_controls(w.head(2 * M), unstack_costates(w, M), sc);
  };
  sol.controls = detail::controls_on_mesh(sol.trajectory, controls_of);
  sol.payoffs = detail::mesh_payoffs(sc, sol.trajectory, controls_of);
  return sol;
}

/// Largest FOC violation along the solution mesh: |dH_m/d eta_m| where
/// eta_m > 0, and the positive part of dH_m/d eta_m where eta_m = 0.
inline double foc_residual(const NashSolution& sol) {
  const int M = sol.size();
  double worst = 0.0;
  for (size_t i = 0; i < sol.trajectory.size(); ++i) {
    const Vec w = sol.trajectory.value(i);
    const Vec y = w.head(2 * M);
    const CostateBlock L = unstack_costates(w, M);
    const Vec eta = sol.controls.value(i);
    for (int m = 0; m < M; ++m) {
      const double g = hamiltonian_control_derivative(m, y, eta, L.row(m).transpose(), sol.scenario);
      worst = std::max(worst, eta[m] > 0.0 ? std::abs(g) : std::max(0.0, g));
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Unilateral deviations

using ScalarPath = std::function<double(double)>;

struct DeviationReport {
  int provider = 0;
  double equilibrium_payoff = 0.0;       // simulated with the equilibrium path
  std::vector<double> deviation_payoffs;
  double max_improvement() const {
    double best = -std::numeric_limits<double>::infinity();
    for (double p : deviation_payoffs) best = std::max(best, p - equilibrium_payoff);
    return best;
  }
  bool passes(double tol) const { return max_improvement() <= tol; }
};

/// Replaces provider m's control path with each candidate, keeping the
/// others on `base`, and compares simulated discounted payoffs.
inline DeviationReport deviation_check(const Scenario& sc, const ControlPath& base, int m,
                                       const std::vector<ScalarPath>& candidates) {
  DeviationReport rep;
  rep.provider = m;
  rep.equilibrium_payoff = simulate_payoffs(sc, base, sc.horizon).payoffs[m];
  rep.deviation_payoffs = parallel_map<double>(candidates.size(), [&](size_t k) {
    const ControlPath mixed = [&](double t) {
      Vec e = base(t);
      e[m] = candidates[k](t);
      return e;
    };
    return simulate_payoffs(sc, mixed, sc.horizon).payoffs[m];
  });
  return rep;
}

inline DeviationReport unilateral_deviation_check(const NashSolution& sol, int m,
                                                  const std::vector<ScalarPath>& candidates) {
  return deviation_check(sol.scenario, sol.control_path(), m, candidates);
}

/// Candidate deviations for provider m: constant shifts, scalings and random
/// piecewise-constant perturbations of its equilibrium path, all kept >= 0.
inline std::vector<ScalarPath> random_deviations(const ControlPath& base, int m, double horizon,
                                                 int count, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<ScalarPath> out;
  for (int k = 0; k < count; ++k) {
    const int kind = k % 3;
    if (kind == 0) {
      const double shift = (unit(rng) - 0.5) * 2.0;
      out.push_back([=](double t) { return std::max(0.0, base(t)[m] + shift); });
    } else if (kind == 1) {
      const double scale = 0.5 + unit(rng);
      out.push_back([=](double t) { return base(t)[m] * scale; });
    } else {
      // piecewise-constant relative perturbation, denser near t = 0 where
      // discounting leaves most of the payoff
      const int pieces = 4 + static_cast<int>(unit(rng) * 8);
      std::vector<double> knots{0.0}, factors;
      for (int i = 1; i < pieces; ++i) knots.push_back(horizon * std::pow(unit(rng), 3.0));
      std::sort(knots.begin(), knots.end());
      for (int i = 0; i < pieces; ++i) factors.push_back(0.6 + 0.8 * unit(rng));
      out.push_back([=](double t) {
        const auto it = std::upper_bound(knots.begin(), knots.end(), t);
        const size_t piece = static_cast<size_t>(std::max<std::ptrdiff_t>(0, it - knots.begin() - 1));
        return base(t)[m] * factors[piece];
      });
    }
  }
  return out;
}

}  // namespace dtsync
