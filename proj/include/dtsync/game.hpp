#pragma once

// Pieces shared by the differential-game solvers: solver options, horizon
// continuation with a turnpike-spliced guess, and payoff post-processing.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dtsync/bvp.hpp"
#include "dtsync/error.hpp"
#include "dtsync/model.hpp"
#include "dtsync/trajectory.hpp"

namespace dtsync {

enum class BvpMethod { collocation, shooting };
enum class GradientMode { exact, finite_difference };

struct GameSolverOptions {
  BvpMethod method = BvpMethod::collocation;
  double tol = 1e-8;
  int mesh_points = 601;        // collocation nodes over the full horizon
  int segments = 100;           // shooting segments over the full horizon
  int steps_per_segment = 20;   // RK4 steps inside each shooting segment
  bool refine = true;
  bool continuation = true;     // T/4 -> T/2 -> T
  GradientMode gradient = GradientMode::exact;
  /// Stacked solution of a nearby problem; tried before the continuation path.
  std::optional<Trajectory> warm_start;
  NewtonOptions newton;
};

struct SolveDiagnostics {
  double residual_norm = 0.0;
  int iterations = 0;
  long rhs_evaluations = 0;
  std::vector<double> horizons;  // continuation stages actually solved
  bool warm_started = false;
};

namespace detail {

/// Guess on [0, T_new] built from a solution on [0, T_old]: the first half is
/// kept, the second half is mapped onto the end, and the gap between them
/// holds the mid-horizon (turnpike) value.
inline std::function<Vec(double)> turnpike_splice(const Trajectory& prev, double T_new) {
  const double T_old = prev.t_end();
  return [prev, T_old, T_new, mid = prev.at(0.5 * T_old)](double t) -> Vec {
    const double half = 0.5 * std::min(T_old, T_new);
    if (t <= half) return prev.at(t);
    if (t >= T_new - half) return prev.at(T_old - (T_new - t));
    return mid;
  };
}

inline BvpSolution solve_stage(const BvpProblem& p, const GameSolverOptions& opt, double T_full) {
  const double frac = (p.t1 - p.t0) / T_full;
  if (opt.method == BvpMethod::collocation) {
    const int pts = std::max(11, static_cast<int>(std::ceil((opt.mesh_points - 1) * frac)) + 1);
    return solve_collocation(p, pts, opt.tol, {opt.refine, opt.newton});
  }
  const int seg = std::max(2, static_cast<int>(std::ceil(opt.segments * frac)));
  return solve_multiple_shooting(p, seg, opt.tol, {opt.steps_per_segment, opt.newton});
}

/// Solves the game BVP on [0, T], warm-started if possible, otherwise by
/// horizon continuation from the cold guess.
inline BvpSolution solve_game_bvp(BvpProblem p, const std::function<Vec(double)>& cold_guess,
                                  double T, const GameSolverOptions& opt, SolveDiagnostics& diag) {
  auto account = [&](const BvpSolution& s, double horizon) {
    diag.iterations += s.iterations;
    diag.rhs_evaluations += s.rhs_evaluations;
    diag.residual_norm = s.residual_norm;
    diag.horizons.push_back(horizon);
  };
  p.t0 = 0.0;
  if (opt.warm_start && !opt.warm_start->empty()) {
    const Trajectory& ws = *opt.warm_start;
    p.t1 = T;
    p.initial_guess = turnpike_splice(ws, T);
    try {
      BvpSolution s = solve_stage(p, opt, T);
      account(s, T);
      diag.warm_started = true;
      return s;
    } catch (const BvpError&) {
      // fall through to the cold path
    }
  }
  std::vector<double> stages{T};
  if (opt.continuation) stages = {0.25 * T, 0.5 * T, T};
  Trajectory prev;
  for (size_t k = 0; k < stages.size(); ++k) {
    p.t1 = stages[k];
    if (k == 0)
      p.initial_guess = cold_guess;
    else
      p.initial_guess = turnpike_splice(prev, stages[k]);
    BvpSolution s = solve_stage(p, opt, T);
    account(s, stages[k]);
    if (k + 1 == stages.size()) return s;
    prev = std::move(s.trajectory);
  }
  throw DomainError("no continuation stage");  // unreachable
}

inline void check_twin_values(const Trajectory& tr, int M) {
  for (size_t i = 0; i < tr.size(); ++i) {
    const double zmin = tr.value(i).segment(M, M).minCoeff();
    if (zmin < -1e-6)
      throw ModelError("twin value became negative (" + std::to_string(zmin) + ") at t = " +
                       std::to_string(tr.times()[i]));
  }
}

/// Discounted payoffs by composite Simpson over the solution mesh, each
/// interval subdivided and sampled from the Hermite interpolant.
inline Vec mesh_payoffs(const Scenario& sc, const Trajectory& stacked,
                        const std::function<Vec(const Vec&)>& controls_of, int subdivisions = 8) {
  const int M = sc.size();
  std::vector<double> t;
  std::vector<Vec> y, eta;
  const auto& nodes = stacked.times();
  for (size_t i = 0; i < nodes.size(); ++i) {
    const int parts = (i + 1 < nodes.size()) ? subdivisions : 1;
    for (int k = 0; k < parts; ++k) {
      const double tk = (k == 0) ? nodes[i] : nodes[i] + (nodes[i + 1] - nodes[i]) * k / parts;
      const Vec w = (k == 0) ? stacked.value(i) : stacked.at(tk);
      t.push_back(tk);
      y.push_back(w.head(2 * M));
      eta.push_back(controls_of(w));
    }
  }
  Vec out(M);
  std::vector<double> f(t.size());
  for (int m = 0; m < M; ++m) {
    for (size_t i = 0; i < t.size(); ++i) f[i] = instantaneous_payoff(m, y[i], eta[i], sc);
    out[m] = discounted_integral(t, f, sc.rho);
  }
  return out;
}

}  // namespace detail

}  // namespace dtsync
