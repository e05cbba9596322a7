#pragma once

// Open-loop Stackelberg equilibrium: followers best-respond through their
// own costates, leaders optimize anticipating the followers' costate
// dynamics via the augmented adjoints psi (states) and phi (follower
// costates).

#include <Eigen/Core>
#include <unsupported/Eigen/AutoDiff>

#include <chrono>
#include <cmath>
#include <vector>

#include "dtsync/bvp.hpp"
#include "dtsync/error.hpp"
#include "dtsync/evo.hpp"
#include "dtsync/game.hpp"
#include "dtsync/model.hpp"
#include "dtsync/nash.hpp"

namespace dtsync {

/// Leaders and followers of a scenario plus the layout of the stacked vector
/// w = (y, lambda_f for f in F, psi_l for l in L, phi_{l,f} for l in L, f in F).
struct Hierarchy {
  int M = 0;
  std::vector<int> leaders;
  std::vector<int> followers;

  /// Providers marked `leader` lead; everyone else follows.
  static Hierarchy of(const Scenario& sc) {
    Hierarchy h;
    h.M = sc.size();
    for (int m = 0; m < h.M; ++m)
      (sc.vsps[static_cast<size_t>(m)].role == Role::leader ? h.leaders : h.followers).push_back(m);
    return h;
  }

  Eigen::Index L() const { return static_cast<Eigen::Index>(leaders.size()); }
  Eigen::Index F() const { return static_cast<Eigen::Index>(followers.size()); }
  Eigen::Index block() const { return 2 * M; }
  Eigen::Index lambda_offset(Eigen::Index f) const { return block() + f * block(); }
  Eigen::Index psi_offset(Eigen::Index l) const { return block() + F() * block() + l * block(); }
  Eigen::Index phi_offset(Eigen::Index l, Eigen::Index f) const {
    return block() + F() * block() + L() * block() + (l * F() + f) * block();
  }
  Eigen::Index dimension() const { return block() * (1 + F() + L() + L() * F()); }
};

/// Leader-side adjoints of one leader: psi (length 2M) and one phi row per
/// follower.
struct LeaderCostates {
  Vec psi;
  std::vector<Vec> phi;
};

enum class PhiEquation {
  conventional,  // phi' = rho phi - dH^L / d(lambda_f)
  literal        // phi' = rho phi - dH^L / d(phi), which is the follower costate rate
};

struct StackelbergOptions {
  GameSolverOptions solver;
  GradientMode leader_gradient = GradientMode::exact;  // forward-mode AD or central differences
  PhiEquation phi_equation = PhiEquation::conventional;
  double eta_max = 0.0;  // bound for the numeric fallback; 0 derives it from the scenario
};

namespace detail {

inline double default_eta_max(const Scenario& sc) {
  double best = 0.0;
  for (const auto& p : sc.vsps) best = std::max(best, sc.pop.n * sc.pop.b / (p.d * p.k));
  return 2.0 * best;
}

/// Rate of a follower's costates, lambda' = rho lambda - dH_f/dy, controls fixed.
template <class S>
VecT<S> follower_costate_rate(const Scenario& sc, int m, const VecT<S>& y, const VecT<S>& eta,
                              const VecT<S>& lambda) {
  return sc.rho * lambda - hamiltonian_gradient<S>(sc, m, y, eta, lambda);
}

/// H_i^L with the follower best responses substituted. `eta` carries the
/// leader controls; follower entries are overwritten.
template <class S>
S leader_hamiltonian(const Scenario& sc, const Hierarchy& h, int i, const VecT<S>& y,
                     const std::vector<VecT<S>>& lambda_f, VecT<S> eta, const LeaderCostates& a) {
  for (size_t f = 0; f < h.followers.size(); ++f)
    eta[h.followers[f]] = foc_control<S>(sc, h.followers[f], y, lambda_f[f]);
  S H = payoff<S>(sc, i, y, eta[i]);
  const VecT<S> dy = state_rhs<S>(sc, y, eta);
  for (Eigen::Index j = 0; j < dy.size(); ++j) H += a.psi[j] * dy[j];
  for (size_t f = 0; f < h.followers.size(); ++f) {
    const VecT<S> dl = follower_costate_rate<S>(sc, h.followers[f], y, eta, lambda_f[f]);
    for (Eigen::Index j = 0; j < dl.size(); ++j) H += a.phi[f][j] * dl[j];
  }
  return H;
}

using AdDerivatives = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 96, 1>;
using AdScalar = Eigen::AutoDiffScalar<AdDerivatives>;

}  // namespace detail

// ---------------------------------------------------------------------------
// Pointwise pieces

/// Follower best response; identical to the simultaneous-game control since
/// leader controls enter only through the shared state.
inline double follower_foc(int m, const Vec& y, const Vec& lambda_m, const Scenario& sc) {
  return foc_control(m, y, lambda_m, sc);
}

inline double leader_hamiltonian(int i, const Vec& y, const std::vector<Vec>& lambda_f,
                                 const Vec& eta, const LeaderCostates& a, const Scenario& sc) {
  return detail::leader_hamiltonian<double>(sc, Hierarchy::of(sc), i, y, lambda_f, eta, a);
}

/// dH_i^L / d(eta_i) by central differences.
inline double leader_control_derivative_fd(int i, const Vec& y, const std::vector<Vec>& lambda_f,
                                           const Vec& eta, const LeaderCostates& a,
                                           const Scenario& sc, double h = 1e-5) {
  Vec ep = eta, em = eta;
  ep[i] += h;
  em[i] -= h;
  return (leader_hamiltonian(i, y, lambda_f, ep, a, sc) -
          leader_hamiltonian(i, y, lambda_f, em, a, sc)) / (2 * h);
}

/// dH_i^L / d(eta_i): J_i and psi.f contribute as for a simultaneous player,
/// and each follower costate rate depends on eta_i through the average utility.
inline double leader_control_derivative(int i, const Vec& y, const std::vector<Vec>& lambda_f,
                                        const Vec& eta, const LeaderCostates& a,
                                        const Scenario& sc) {
  const int M = sc.size();
  const auto& p = sc.vsps[static_cast<size_t>(i)];
  const double dk = p.d * p.k;
  double g = 2.0 * p.w[3] * dk * (y[i] * sc.pop.n * sc.pop.b - eta[i] * dk) +
             detail::control_transport<double>(sc, i, y, a.psi);
  if (y[i] > 0.0) {
    double coupling = 0.0;
    for (size_t f = 0; f < lambda_f.size(); ++f)
      for (int j = 0; j < M; ++j)
        if (y[j] > 0.0) coupling += a.phi[f][j] * lambda_f[f][j];
    g += sc.pop.delta * sc.share_factor(i) * coupling;
  }
  return g;
}

/// Golden-section maximizer of H_i^L over eta_i in [0, eta_max].
inline double leader_foc_numeric(int i, const Vec& y, const std::vector<Vec>& lambda_f,
                                 const Vec& eta, const LeaderCostates& a, const Scenario& sc,
                                 double eta_max, double tol = 1e-9) {
  const double r = (std::sqrt(5.0) - 1.0) / 2.0;
  Vec trial = eta;
  auto H = [&](double e) {
    trial[i] = e;
    return leader_hamiltonian(i, y, lambda_f, trial, a, sc);
  };
  double lo = 0.0, hi = eta_max;
  double c = hi - r * (hi - lo), d = lo + r * (hi - lo);
  double fc = H(c), fd = H(d);
  while (hi - lo > tol) {
    if (fc > fd) {
      hi = d, d = c, fd = fc, c = hi - r * (hi - lo), fc = H(c);
    } else {
      lo = c, c = d, fc = fd, d = lo + r * (hi - lo), fd = H(d);
    }
  }
  const double best = 0.5 * (lo + hi);
  return H(0.0) >= H(best) ? 0.0 : best;
}

/// Maximizer of H_i^L over eta_i >= 0. H_i^L is quadratic in eta_i, so the
/// FOC is linear; a non-concave point falls back to the numeric maximizer.
inline double leader_foc(int i, const Vec& y, const std::vector<Vec>& lambda_f, const Vec& eta,
                         const LeaderCostates& a, const Scenario& sc, double eta_max = 0.0) {
  const auto& p = sc.vsps[static_cast<size_t>(i)];
  if (!(p.w[3] > 0.0)) throw DomainError("w4 = 0 leaves the leader control unbounded");
  const double dk = p.d * p.k;
  const double curvature = -2.0 * p.w[3] * dk * dk;
  {
    const double h = 1e-2;
    Vec e = eta;
    e[i] = std::max(eta[i], h);
    const double h0 = leader_hamiltonian(i, y, lambda_f, e, a, sc);
    e[i] += h;
    const double hp = leader_hamiltonian(i, y, lambda_f, e, a, sc);
    e[i] -= 2 * h;
    const double hm = leader_hamiltonian(i, y, lambda_f, e, a, sc);
    if (!(hp - 2 * h0 + hm < 0.0))
      return leader_foc_numeric(i, y, lambda_f, eta, a, sc,
                                eta_max > 0.0 ? eta_max : detail::default_eta_max(sc));
  }
  Vec at_zero = eta;
  at_zero[i] = 0.0;
  const double slope0 = leader_control_derivative(i, y, lambda_f, at_zero, a, sc);
  return std::max(0.0, -slope0 / curvature);
}

struct LeaderAdjointRates {
  Vec dpsi;
  std::vector<Vec> dphi;
};

/// psi_i' = rho psi_i - dH_i^L/dy and phi_{i,f}' = rho phi_{i,f} - dH_i^L/d(lambda_f)
/// (or the literal -dH_i^L/d(phi) form), with leader controls held fixed and
/// follower controls differentiated through their best responses.
inline LeaderAdjointRates leader_adjoint_rhs(int i, const Vec& y, const std::vector<Vec>& lambda_f,
                                             const Vec& eta, const LeaderCostates& a,
                                             const Scenario& sc,
                                             GradientMode mode = GradientMode::exact,
                                             PhiEquation form = PhiEquation::conventional) {
  const Hierarchy h = Hierarchy::of(sc);
  const int M = sc.size();
  const auto nF = lambda_f.size();
  const Eigen::Index nvar = 2 * M * static_cast<Eigen::Index>(1 + nF);
  Vec grad(nvar);

  if (mode == GradientMode::exact && nvar <= 96) {
    using detail::AdScalar;
    VecT<AdScalar> yad(2 * M);
    for (int j = 0; j < 2 * M; ++j) yad[j] = AdScalar(y[j], nvar, j);
    std::vector<VecT<AdScalar>> lad(nF, VecT<AdScalar>(2 * M));
    for (size_t f = 0; f < nF; ++f)
      for (int j = 0; j < 2 * M; ++j)
        lad[f][j] = AdScalar(lambda_f[f][j], nvar, 2 * M * static_cast<Eigen::Index>(1 + f) + j);
    VecT<AdScalar> ead(M);
    for (int j = 0; j < M; ++j) ead[j] = AdScalar(eta[j], detail::AdDerivatives::Zero(nvar));
    const AdScalar H = detail::leader_hamiltonian<AdScalar>(sc, h, i, yad, lad, ead, a);
    grad = H.derivatives();
  } else {
    Vec packed(nvar);
    packed.head(2 * M) = y;
    for (size_t f = 0; f < nF; ++f) packed.segment(2 * M * static_cast<Eigen::Index>(1 + f), 2 * M) = lambda_f[f];
    auto H = [&](const Vec& v) {
      std::vector<Vec> lf(nF);
      for (size_t f = 0; f < nF; ++f) lf[f] = v.segment(2 * M * static_cast<Eigen::Index>(1 + f), 2 * M);
      return detail::leader_hamiltonian<double>(sc, h, i, Vec(v.head(2 * M)), lf, eta, a);
    };
    Vec vp = packed, vm = packed;
    for (Eigen::Index j = 0; j < nvar; ++j) {
      const double step = 1e-6 * std::max(1.0, std::abs(packed[j]));
      vp[j] = packed[j] + step;
      vm[j] = packed[j] - step;
      grad[j] = (H(vp) - H(vm)) / (2 * step);
      vp[j] = vm[j] = packed[j];
    }
  }

  LeaderAdjointRates out;
  out.dpsi = sc.rho * a.psi - grad.head(2 * M);
  out.dphi.resize(nF);
  Vec eta_full = eta;
  for (size_t f = 0; f < nF; ++f) {
    if (form == PhiEquation::conventional) {
      out.dphi[f] = sc.rho * a.phi[f] - grad.segment(2 * M * static_cast<Eigen::Index>(1 + f), 2 * M);
    } else {
      eta_full[h.followers[f]] = follower_foc(h.followers[f], y, lambda_f[f], sc);
    }
  }
  if (form == PhiEquation::literal)
    for (size_t f = 0; f < nF; ++f)
      out.dphi[f] = sc.rho * a.phi[f] -
                    detail::follower_costate_rate<double>(sc, h.followers[f], y, eta_full, lambda_f[f]);
  return out;
}

// ---------------------------------------------------------------------------
// Stacked system

/// Unpacked view of a stacked vector.
struct StackelbergPoint {
  Vec y;
  std::vector<Vec> lambda;         // per follower
  std::vector<LeaderCostates> leader;  // per leader
};

inline StackelbergPoint unstack(const Hierarchy& h, const Vec& w) {
  StackelbergPoint p;
  const Eigen::Index B = h.block();
  p.y = w.head(B);
  for (Eigen::Index f = 0; f < h.F(); ++f) p.lambda.push_back(w.segment(h.lambda_offset(f), B));
  for (Eigen::Index l = 0; l < h.L(); ++l) {
    LeaderCostates a;
    a.psi = w.segment(h.psi_offset(l), B);
    for (Eigen::Index f = 0; f < h.F(); ++f) a.phi.push_back(w.segment(h.phi_offset(l, f), B));
    p.leader.push_back(std::move(a));
  }
  return p;
}

/// Equilibrium controls at a stacked point: follower best responses and the
/// leaders' FOCs (mutually independent pointwise).
inline Vec stackelberg_controls(const Hierarchy& h, const StackelbergPoint& p, const Scenario& sc,
                                double eta_max = 0.0) {
  Vec eta = Vec::Zero(h.M);
  for (Eigen::Index f = 0; f < h.F(); ++f)
    eta[h.followers[static_cast<size_t>(f)]] =
        follower_foc(h.followers[static_cast<size_t>(f)], p.y, p.lambda[static_cast<size_t>(f)], sc);
  for (Eigen::Index l = 0; l < h.L(); ++l) {
    const int i = h.leaders[static_cast<size_t>(l)];
    eta[i] = leader_foc(i, p.y, p.lambda, eta, p.leader[static_cast<size_t>(l)], sc, eta_max);
  }
  return eta;
}

/// Right-hand side of the stacked system. Valid for any split, including no
/// leaders (where it coincides with the simultaneous game).
inline Vec stackelberg_rhs(const Vec& w, const Scenario& sc, const Hierarchy& h,
                           const StackelbergOptions& opt = {}) {
  const StackelbergPoint p = unstack(h, w);
  const Vec eta = stackelberg_controls(h, p, sc, opt.eta_max);
  Vec dw(w.size());
  dw.head(h.block()) = state_rhs(p.y, eta, sc);
  for (Eigen::Index f = 0; f < h.F(); ++f)
    dw.segment(h.lambda_offset(f), h.block()) =
        adjoint_rhs(h.followers[static_cast<size_t>(f)], p.y, eta, p.lambda[static_cast<size_t>(f)], sc,
                    opt.solver.gradient);
  for (Eigen::Index l = 0; l < h.L(); ++l) {
    const auto r = leader_adjoint_rhs(h.leaders[static_cast<size_t>(l)], p.y, p.lambda, eta,
                                      p.leader[static_cast<size_t>(l)], sc, opt.leader_gradient,
                                      opt.phi_equation);
    dw.segment(h.psi_offset(l), h.block()) = r.dpsi;
    for (Eigen::Index f = 0; f < h.F(); ++f)
      dw.segment(h.phi_offset(l, f), h.block()) = r.dphi[static_cast<size_t>(f)];
  }
  return dw;
}

/// y(0) = y0, lambda_f(T) = 0, psi_l(T) = 0, phi_{l,f}(0) = 0.
inline Vec stackelberg_boundary(const Vec& wa, const Vec& wb, const Scenario& sc, const Hierarchy& h) {
  Vec r(wa.size());
  const Eigen::Index B = h.block();
  r.head(B) = wa.head(B) - sc.initial_state();
  for (Eigen::Index f = 0; f < h.F(); ++f) r.segment(h.lambda_offset(f), B) = wb.segment(h.lambda_offset(f), B);
  for (Eigen::Index l = 0; l < h.L(); ++l) {
    r.segment(h.psi_offset(l), B) = wb.segment(h.psi_offset(l), B);
    for (Eigen::Index f = 0; f < h.F(); ++f) r.segment(h.phi_offset(l, f), B) = wa.segment(h.phi_offset(l, f), B);
  }
  return r;
}

// ---------------------------------------------------------------------------

struct StackelbergSolution {
  Scenario scenario;
  Hierarchy hierarchy;
  StackelbergOptions options;
  Trajectory trajectory;  // stacked
  Trajectory controls;
  Vec payoffs;
  SolveDiagnostics diagnostics;

  int size() const { return scenario.size(); }
  Vec state(double t) const { return trajectory.at(t).head(2 * size()); }
  Vec eta(double t) const {
    return stackelberg_controls(hierarchy, unstack(hierarchy, trajectory.at(t)), scenario, options.eta_max);
  }
  /// Self-contained copy, safe to outlive the solution.
  ControlPath control_path() const {
    return [sc = scenario, h = hierarchy, tr = trajectory, cap = options.eta_max](double t) {
      return stackelberg_controls(h, unstack(h, tr.at(t)), sc, cap);
    };
  }
  /// max of ||lambda_f(T)||, ||psi_l(T)|| and ||phi_{l,f}(0)||.
  double boundary_residual() const {
    const Vec r = stackelberg_boundary(trajectory.front(), trajectory.back(), scenario, hierarchy);
    return r.tail(r.size() - 2 * size()).lpNorm<Eigen::Infinity>();
  }
};

inline StackelbergSolution solve_stackelberg(const Scenario& scenario, const StackelbergOptions& opt = {}) {
  Scenario sc = scenario;
  sc.validate();
  const Hierarchy h = Hierarchy::of(sc);
  if (h.leaders.empty()) throw ModelError("Stackelberg game needs at least one leader; use the simultaneous solver");
  if (h.followers.empty()) throw ModelError("Stackelberg game needs at least one follower");
  const Eigen::Index n = h.dimension();

  BvpProblem p;
  p.rhs = [&](double, const Vec& w) { return stackelberg_rhs(w, sc, h, opt); };
  p.boundary = [&](const Vec& a, const Vec& b) { return stackelberg_boundary(a, b, sc, h); };
  const Vec y0 = sc.initial_state();
  auto cold = [&](double) {
    Vec w = Vec::Zero(n);
    w.head(2 * h.M) = y0;
    return w;
  };

  StackelbergSolution sol;
  sol.scenario = sc;
  sol.hierarchy = h;
  sol.options = opt;
  sol.options.solver.warm_start.reset();
  BvpSolution bvp = detail::solve_game_bvp(p, cold, sc.horizon, opt.solver, sol.diagnostics);
  sol.trajectory = std::move(bvp.trajectory);
  detail::check_twin_values(sol.trajectory, h.M);
  const auto controls_of = [&](const Vec& w) { return stackelberg_controls(h, unstack(h, w), sc, opt.eta_max); };
  sol.controls = detail::controls_on_mesh(sol.trajectory, controls_of);
  sol.payoffs = detail::mesh_payoffs(sc, sol.trajectory, controls_of);
  return sol;
}

// ---------------------------------------------------------------------------

struct ComplexityRow {
  int M = 0;
  Eigen::Index dimension = 0;
  double seconds_per_rhs = 0.0;
  long rhs_per_shooting_residual = 0;  // segments x (4 steps + 1)
};

struct ComplexityReport {
  std::vector<ComplexityRow> rows;
  double dimension_exponent = 0.0;  // least-squares slope of log(dimension) vs log(M)
  double cost_exponent = 0.0;       // same for seconds per evaluation
};

/// Times the stacked right-hand side for scenarios with one leader (the last
/// provider) and M - 1 followers.
inline ComplexityReport complexity_probe(const std::vector<int>& sizes, const GameSolverOptions& solver = {},
                                         int repetitions = 2000) {
  ComplexityReport rep;
  std::vector<double> lm, ld, lc;
  for (int M : sizes) {
    if (M < 2) throw DomainError("complexity probe needs M >= 2");
    Scenario sc;
    sc.vsps.resize(static_cast<size_t>(M));
    for (int m = 0; m < M; ++m) sc.vsps[static_cast<size_t>(m)].theta = 0.05 * (m + 1);
    sc.vsps.back().role = Role::leader;
    sc.z0 = Vec::Constant(M, 40.0);
    sc.validate();
    const Hierarchy h = Hierarchy::of(sc);
    Vec w = Vec::Zero(h.dimension());
    w.head(2 * M) = sc.initial_state();
    for (Eigen::Index j = 2 * M; j < w.size(); ++j) w[j] = 0.01 * std::sin(static_cast<double>(j));
    volatile double sink = 0.0;
    const auto t0 = std::chrono::steady_clock::now();
    for (int r = 0; r < repetitions; ++r) sink = sink + stackelberg_rhs(w, sc, h)[0];
    const auto t1 = std::chrono::steady_clock::now();
    ComplexityRow row;
    row.M = M;
    row.dimension = h.dimension();
    row.seconds_per_rhs = std::chrono::duration<double>(t1 - t0).count() / repetitions;
    row.rhs_per_shooting_residual = static_cast<long>(solver.segments) * (4L * solver.steps_per_segment + 1);
    rep.rows.push_back(row);
    lm.push_back(std::log(M));
    ld.push_back(std::log(static_cast<double>(row.dimension)));
    lc.push_back(std::log(row.seconds_per_rhs));
  }
  auto slope = [&](const std::vector<double>& v) {
    const double n = static_cast<double>(lm.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (size_t k = 0; k < lm.size(); ++k) {
      sx += lm[k];
      sy += v[k];
      sxx += lm[k] * lm[k];
      sxy += lm[k] * v[k];
    }
    const double den = n * sxx - sx * sx;
    return den != 0.0 ? (n * sxy - sx * sy) / den : 0.0;
  };
  if (sizes.size() >= 2) {
    rep.dimension_exponent = slope(ld);
    rep.cost_exponent = slope(lc);
  }
  return rep;
}

}  // namespace dtsync
