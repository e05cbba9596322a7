#pragma once

// Lower-level evolutionary game: provider selection under replicator
// dynamics, its stationary points, and empirical stability checks.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "dtsync/error.hpp"
#include "dtsync/model.hpp"
#include "dtsync/ode.hpp"
#include "dtsync/parallel.hpp"
#include "dtsync/trajectory.hpp"

namespace dtsync {

using ControlPath = std::function<Vec(double)>;

inline ControlPath constant_control(Vec eta) {
  return [eta = std::move(eta)](double) { return eta; };
}

/// Accepted states drifting off the simplex by at most this much are repaired.
inline constexpr double kSimplexRepair = 1e-9;

namespace detail {

inline void check_controls(const Vec& eta, int M, double t) {
  if (eta.size() != M) throw DomainError("control vector has the wrong length");
  if (!eta.allFinite()) throw IntegrationError("non-finite control", t);
  if ((eta.array() < 0.0).any()) throw DomainError("synchronization intensity must be >= 0");
}

/// Clips tiny negative shares and renormalizes; larger violations abort.
inline void project_shares(Vec& y, int M) {
  auto x = y.head(M);
  const double low = x.minCoeff();
  const double drift = std::abs(x.sum() - 1.0);
  if (low < -kSimplexRepair || drift > kSimplexRepair)
    throw IntegrationError("population shares left the simplex (min " + std::to_string(low) +
                               ", sum drift " + std::to_string(drift) + ")",
                           std::numeric_limits<double>::quiet_NaN());
  x = x.cwiseMax(0.0);
  x /= x.sum();
}

inline void check_simplex(const Vec& x) {
  if ((x.array() < 0.0).any() || std::abs(x.sum() - 1.0) > 1e-9)
    throw DomainError("shares must lie on the simplex");
}

}  // namespace detail

inline AdaptiveOptions selection_tolerances() { return {1e-10, 1e-12}; }

/// States (x, z) over [0, T] under the given control path.
inline Trajectory simulate_selection(const Scenario& sc, const ControlPath& eta, double T,
                                     const AdaptiveOptions& opt = selection_tolerances()) {
  const int M = sc.size();
  detail::check_simplex(sc.x0);
  OdeProblem p;
  p.t0 = 0.0;
  p.t1 = T;
  p.y0 = sc.initial_state();
  p.rhs = [&](double t, const Vec& y) {
    const Vec e = eta(t);
    detail::check_controls(e, M, t);
    return state_rhs(y, e, sc);
  };
  p.project = [M](Vec& y) { detail::project_shares(y, M); };
  return integrate_adaptive(p, opt);
}

struct SimulatedPayoffs {
  Trajectory states;  // (x, z)
  Vec payoffs;        // discounted payoff of every provider over [0, T]
};

/// Forward simulation with one discounted-payoff accumulator per provider.
/// Deviation checks compare payoffs computed this way on both sides.
inline SimulatedPayoffs simulate_payoffs(const Scenario& sc, const ControlPath& eta, double T,
                                         const AdaptiveOptions& opt = selection_tolerances()) {
  const int M = sc.size();
  detail::check_simplex(sc.x0);
  OdeProblem p;
  p.t0 = 0.0;
  p.t1 = T;
  p.y0 = Vec::Zero(3 * M);
  p.y0.head(2 * M) = sc.initial_state();
  p.rhs = [&](double t, const Vec& s) {
    const Vec e = eta(t);
    detail::check_controls(e, M, t);
    const Vec y = s.head(2 * M);
    Vec ds(3 * M);
    ds.head(2 * M) = state_rhs(y, e, sc);
    const double disc = std::exp(-sc.rho * t);
    for (int m = 0; m < M; ++m) ds[2 * M + m] = disc * instantaneous_payoff(m, y, e, sc);
    return ds;
  };
  p.project = [M](Vec& s) { detail::project_shares(s, M); };
  const Trajectory full = integrate_adaptive(p, opt);
  SimulatedPayoffs out;
  for (size_t i = 0; i < full.size(); ++i)
    out.states.push_back(full.times()[i], full.value(i).head(2 * M),
                         full.derivative(i).head(2 * M));
  out.payoffs = full.back().tail(M);
  return out;
}

// ---------------------------------------------------------------------------

enum class EssClass { interior, boundary };

inline std::string_view to_string(EssClass c) {
  return c == EssClass::interior ? "interior" : "boundary";
}

struct EssResult {
  Vec x_star;
  bool converged = false;
  double settle_time = std::numeric_limits<double>::quiet_NaN();
  EssClass classification = EssClass::interior;
  double utility_gap = 0.0;  // max over selected m of |u_m - ubar|
};

/// Per-device utilities of the selected providers and their spread.
inline double utility_gap(const Scenario& sc, const Vec& x, const Vec& eta) {
  const int M = sc.size();
  double ubar = 0.0;
  for (int m = 0; m < M; ++m)
    if (x[m] > 0.0) ubar += eta[m] * sc.share_factor(m) - sc.vsps[static_cast<size_t>(m)].c * x[m];
  double gap = 0.0;
  for (int m = 0; m < M; ++m)
    if (x[m] > 0.0) {
      const double u = eta[m] * sc.share_factor(m) / x[m] - sc.vsps[static_cast<size_t>(m)].c;
      gap = std::max(gap, std::abs(u - ubar));
    }
  return gap;
}

/// Stationary shares for constant controls. Selected providers equalize
/// R_m / x_m - c_m; with equal costs this is x_m = R_m / sum R.
inline EssResult interior_ess_fixed_eta(const Scenario& sc, const Vec& eta) {
  const int M = sc.size();
  detail::check_controls(eta, M, 0.0);
  Vec R(M);
  for (int m = 0; m < M; ++m) R[m] = eta[m] * sc.share_factor(m);
  if (!(R.maxCoeff() > 0.0)) throw DomainError("no provider offers a positive incentive");

  std::vector<int> active;
  for (int m = 0; m < M; ++m)
    if (R[m] > 0.0) active.push_back(m);
  bool equal_cost = true;
  for (int m : active)
    equal_cost = equal_cost && sc.vsps[static_cast<size_t>(m)].c == sc.vsps[static_cast<size_t>(active[0])].c;

  EssResult out;
  out.x_star = Vec::Zero(M);
  if (equal_cost) {
    out.x_star = R / R.sum();
  } else {
    // sum_m R_m / (L + c_m) = 1 is strictly decreasing in L > -min c_m
    double cmin = std::numeric_limits<double>::infinity();
    for (int m : active) cmin = std::min(cmin, sc.vsps[static_cast<size_t>(m)].c);
    auto excess = [&](double L) {
      double s = -1.0;
      for (int m : active) s += R[m] / (L + sc.vsps[static_cast<size_t>(m)].c);
      return s;
    };
    double lo = -cmin, hi = -cmin + 1.0;
    while (excess(hi) > 0.0) hi = -cmin + 2.0 * (hi + cmin);
    for (int i = 0; i < 200 && hi - lo > 1e-15 * std::max(1.0, std::abs(hi)); ++i) {
      const double mid = 0.5 * (lo + hi);
      (excess(mid) > 0.0 ? lo : hi) = mid;
    }
    const double L = 0.5 * (lo + hi);
    for (int m : active) out.x_star[m] = R[m] / (L + sc.vsps[static_cast<size_t>(m)].c);
    out.x_star /= out.x_star.sum();
  }
  out.converged = true;
  out.settle_time = 0.0;
  out.classification =
      static_cast<int>(active.size()) == M ? EssClass::interior : EssClass::boundary;
  out.utility_gap = utility_gap(sc, out.x_star, eta);
  return out;
}

namespace detail {

/// Newton polish of a settled state onto the exact stationary point of the
/// replicator field for the controls `eta`. Returns false if it wanders off.
inline bool polish_stationary(const Scenario& sc, const Vec& eta, Vec& x) {
  const int M = sc.size();
  if (M == 1) return true;
  std::vector<int> active;
  for (int m = 0; m < M; ++m)
    if (x[m] > 1e-6) active.push_back(m);
  const auto A = static_cast<Eigen::Index>(active.size());
  if (A < 2) return false;
  auto field = [&](const Vec& xa) {
    Vec y = Vec::Zero(2 * M);
    for (Eigen::Index i = 0; i < A; ++i) y[active[static_cast<size_t>(i)]] = xa[i];
    const Vec dy = state_rhs(y, eta, sc);
    Vec F(A);
    for (Eigen::Index i = 0; i + 1 < A; ++i) F[i] = dy[active[static_cast<size_t>(i)]];
    F[A - 1] = xa.sum() - 1.0;
    return F;
  };
  Vec xa(A);
  for (Eigen::Index i = 0; i < A; ++i) xa[i] = x[active[static_cast<size_t>(i)]];
  const Vec start = xa;
  for (int it = 0; it < 20; ++it) {
    const Vec F = field(xa);
    if (F.lpNorm<Eigen::Infinity>() < 1e-15) break;
    Eigen::MatrixXd J(A, A);
    for (Eigen::Index j = 0; j < A; ++j) {
      Vec xp = xa;
      const double h = 1e-7;
      xp[j] += h;
      J.col(j) = (field(xp) - F) / h;
    }
    const Vec dx = J.fullPivLu().solve(-F);
    if (!dx.allFinite()) return false;
    xa += dx;
    if (dx.lpNorm<Eigen::Infinity>() < 1e-15) break;
  }
  if ((xa - start).lpNorm<Eigen::Infinity>() > 1e-4 || (xa.array() <= 0.0).any()) return false;
  x.setZero();
  for (Eigen::Index i = 0; i < A; ++i) x[active[static_cast<size_t>(i)]] = xa[i];
  return true;
}

}  // namespace detail

/// Integrates until ||dx/dt||_inf < tol or t_max. The settled state is then
/// polished onto the stationary point of the field at the settle time.
inline EssResult find_ess(const Scenario& sc, const ControlPath& eta, double tol = 1e-8,
                          double t_max = 1e5) {
  if (!(tol > 0.0)) throw DomainError("tol must be > 0");
  if (!(t_max > 0.0)) throw DomainError("t_max must be > 0");
  const int M = sc.size();
  EssResult out;
  const double window = std::min(t_max, 20.0 / sc.pop.delta);
  double t0 = 0.0;
  Vec y = sc.initial_state();
  for (;;) {
    OdeProblem p;
    p.t0 = t0;
    p.t1 = std::min(t_max, t0 + window);
    p.y0 = y;
    p.rhs = [&](double t, const Vec& yy) {
      const Vec e = eta(t);
      detail::check_controls(e, M, t);
      return state_rhs(yy, e, sc);
    };
    p.project = [M](Vec& yy) { detail::project_shares(yy, M); };
    const Trajectory tr = integrate_adaptive(p, selection_tolerances());
    for (size_t i = 0; i < tr.size(); ++i) {
      const double rate = tr.derivative(i).head(M).lpNorm<Eigen::Infinity>();
      if (rate < tol) {
        out.converged = true;
        out.settle_time = tr.times()[i];
        if (i > 0) {
          // the rate decays roughly exponentially across one step
          const double prev = tr.derivative(i - 1).head(M).lpNorm<Eigen::Infinity>();
          const double s = rate > 0.0 ? std::log(prev / tol) / std::log(prev / rate) : 1.0;
          out.settle_time = tr.times()[i - 1] + std::clamp(s, 0.0, 1.0) * (tr.times()[i] - tr.times()[i - 1]);
        }
        out.x_star = tr.value(i).head(M);
        break;
      }
    }
    if (out.converged || p.t1 >= t_max) {
      if (!out.converged) out.x_star = tr.back().head(M);
      break;
    }
    t0 = p.t1;
    y = tr.back();
  }
  const Vec e = eta(out.converged ? out.settle_time : t_max);
  if (out.converged) detail::polish_stationary(sc, e, out.x_star);
  out.classification = (out.x_star.array() < 1e-6).any() ? EssClass::boundary : EssClass::interior;
  out.utility_gap = utility_gap(sc, out.x_star, e);
  return out;
}

// ---------------------------------------------------------------------------

struct ProbeResult {
  Vec x0;
  Vec x_final;
  double final_distance = 0.0;
  bool eventually_decreasing = false;
  bool lyapunov_certified = false;
  double max_vdot = 0.0;  // largest sampled e_m * dx_m/dt where |e_m| > threshold
};

struct StabilityReport {
  Vec x_star;
  std::vector<ProbeResult> probes;
  bool all_converge(double tol) const {
    return std::all_of(probes.begin(), probes.end(),
                       [&](const ProbeResult& p) { return p.final_distance <= tol; });
  }
  bool all_certified() const {
    return std::all_of(probes.begin(), probes.end(),
                       [](const ProbeResult& p) { return p.lyapunov_certified; });
  }
};

struct StabilityOptions {
  double horizon = 0.0;             // 0 picks 40 / delta
  double error_threshold = 1e-7;    // |e_m| below this counts as e_m = 0
};

/// Integrates from each perturbed start and checks the Lyapunov functions
/// V_m = e_m^2 / 2, e_m = x_m - x*_m, by sampling dV_m/dt = e_m dx_m/dt on
/// the integrator mesh.
inline StabilityReport stability_probe(const Scenario& sc, const ControlPath& eta, const Vec& x_star,
                                       const std::vector<Vec>& perturbations,
                                       const StabilityOptions& opt = {}) {
  const int M = sc.size();
  if (x_star.size() != M) throw DomainError("x_star has the wrong length");
  const double T = opt.horizon > 0.0 ? opt.horizon : 40.0 / sc.pop.delta;
  StabilityReport report;
  report.x_star = x_star;
  report.probes = parallel_map<ProbeResult>(perturbations.size(), [&](size_t k) {
    Scenario s = sc;
    s.x0 = perturbations[k];
    detail::check_simplex(s.x0);
    const Trajectory tr = simulate_selection(s, eta, T);
    ProbeResult r;
    r.x0 = s.x0;
    r.x_final = tr.back().head(M);
    r.final_distance = (r.x_final - x_star).lpNorm<Eigen::Infinity>();

    std::vector<double> dist;
    dist.reserve(tr.size());
    r.lyapunov_certified = true;
    r.max_vdot = -std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < tr.size(); ++i) {
      const Vec e = tr.value(i).head(M) - x_star;
      dist.push_back(e.norm());
      const Vec xdot = tr.derivative(i).head(M);
      for (int m = 0; m < M; ++m) {
        if (std::abs(e[m]) <= opt.error_threshold) continue;
        const double vdot = e[m] * xdot[m];
        r.max_vdot = std::max(r.max_vdot, vdot);
        if (!(vdot < 0.0)) r.lyapunov_certified = false;
      }
    }
    if (!std::isfinite(r.max_vdot)) r.max_vdot = 0.0;
    // distance is nonincreasing over (at least) the second half of the horizon
    size_t last_rise = 0;
    for (size_t i = 1; i < dist.size(); ++i)
      if (dist[i] > dist[i - 1] + 1e-14) last_rise = i;
    r.eventually_decreasing = tr.times()[last_rise] <= 0.5 * T;
    return r;
  });
  return report;
}

// ---------------------------------------------------------------------------

struct DirectionField {
  int dimension = 0;
  std::vector<Vec> x;
  std::vector<Vec> xdot;
};

/// Samples dx/dt for fixed controls over the simplex: a uniform grid in x_1
/// for two providers, a triangular grid for three.
inline DirectionField direction_field(const Scenario& sc, const Vec& eta, int resolution) {
  const int M = sc.size();
  if (M < 2 || M > 3)
    throw DomainError("direction field supports 2 or 3 providers, got " + std::to_string(M));
  if (resolution < 1) throw DomainError("resolution must be >= 1");
  detail::check_controls(eta, M, 0.0);
  DirectionField out;
  out.dimension = M;
  const double r = resolution;
  if (M == 2) {
    for (int i = 0; i <= resolution; ++i) out.x.push_back(Vec{{i / r, 1.0 - i / r}});
  } else {
    for (int i = 0; i <= resolution; ++i)
      for (int j = 0; i + j <= resolution; ++j)
        out.x.push_back(Vec{{i / r, j / r, std::max(0.0, 1.0 - i / r - j / r)}});
  }
  out.xdot = parallel_map<Vec>(out.x.size(), [&](size_t k) {
    return replicator_rhs({out.x[k], sc.z0}, eta, sc);
  });
  return out;
}

}  // namespace dtsync
