#pragma once

// Domain types and the instantaneous formulas of the synchronization game:
// incentive pools, device utilities, replicator and value dynamics, and the
// per-provider payoff integrand together with its exact partial derivatives.
//
// Every formula that enters a Hamiltonian is written once as a template on the
// scalar type so that the leader adjoint equations can differentiate through
// it with forward-mode AD (see stackelberg.hpp).

#include <Eigen/Core>
#include <unsupported/Eigen/AutoDiff>

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dtsync/error.hpp"

namespace dtsync {

using Vec = Eigen::VectorXd;
template <class S>
using VecT = Eigen::Matrix<S, Eigen::Dynamic, 1>;

inline double value_of(double v) { return v; }
template <class D>
double value_of(const Eigen::AutoDiffScalar<D>& v) {
  return v.value();
}

/// Zero carrying the derivative layout of `like`; a bare S(0) would give an
/// AD scalar with no derivative storage, which cannot be mixed with seeded ones.
template <class S>
S zero_like(const S& like) {
  return like * 0.0;
}

enum class Role { simultaneous, leader, follower };

inline std::string_view to_string(Role r) {
  switch (r) {
    case Role::leader:
      return "leader";
    case Role::follower:
      return "follower";
    default:
      return "simultaneous";
  }
}

/// Economic and decay parameters of one virtual service provider.
struct VspParams {
  double d = 80.0;      // number of digital twins
  double theta = 0.05;  // value decay rate
  double alpha = 0.1;   // unit data price
  std::optional<double> beta;  // unit value preference; defaults to e^{10 theta}
  double k = 0.1;       // data request per twin per synchronization
  double v = 60.0;      // desired twin value
  double c = 0.1;       // per-device sensing cost
  std::array<double, 4> w{0.1, 0.001, 0.01, 0.002};
  Role role = Role::simultaneous;

  double beta_value() const { return beta ? *beta : std::exp(10.0 * theta); }

  void validate() const {
    if (!(theta > 0.0)) throw ModelError("theta must be > 0");
    if (!(d >= 1.0)) throw ModelError("d must be >= 1");
    if (!(k > 0.0)) throw ModelError("k must be > 0");
    for (double wi : w)
      if (!(wi >= 0.0)) throw ModelError("payoff weights must be >= 0");
    if (!(w[3] > 0.0)) throw ModelError("w4 must be > 0 for a concave Hamiltonian");
  }

  bool operator==(const VspParams&) const = default;
};

struct PopulationParams {
  double n = 500.0;     // device population size
  double delta = 0.05;  // learning rate
  double b = 0.1;       // data contribution per device

  void validate() const {
    if (!(n >= 1.0)) throw ModelError("population n must be >= 1");
    if (!(delta > 0.0)) throw ModelError("population delta must be > 0");
    if (!(b > 0.0)) throw ModelError("population b must be > 0");
  }

  bool operator==(const PopulationParams&) const = default;
};

/// A complete game instance.
struct Scenario {
  std::vector<VspParams> vsps;
  PopulationParams pop;
  double g0 = 1.0;
  double g1 = 1.0;
  double rho = 1.0;
  double horizon = 300.0;
  Vec x0;
  Vec z0;

  int size() const { return static_cast<int>(vsps.size()); }

  /// g(theta_m) d_m / N: incentive handed to one device per unit intensity.
  double share_factor(int m) const {
    const auto& p = vsps[static_cast<size_t>(m)];
    return p.d * (g0 + g1 * p.theta) / pop.n;
  }

  std::vector<int> indices_with_role(Role r) const {
    std::vector<int> out;
    for (int m = 0; m < size(); ++m)
      if (vsps[static_cast<size_t>(m)].role == r) out.push_back(m);
    return out;
  }

  /// Fills optional fields and checks every model invariant.
  void validate() {
    const int M = size();
    if (M < 1) throw ModelError("scenario needs at least one provider");
    for (const auto& p : vsps) p.validate();
    pop.validate();
    if (!(g1 > 0.0)) throw ModelError("g1 must be > 0");
    if (!(rho >= 0.0)) throw ModelError("rho must be >= 0");
    if (!(horizon > 0.0)) throw ModelError("horizon must be > 0");
    if (x0.size() == 0) x0 = Vec::Constant(M, 1.0 / M);
    if (x0.size() != M) throw ModelError("x0 must have one entry per provider");
    if (z0.size() != M) throw ModelError("z0 must have one entry per provider");
    if ((x0.array() < 0.0).any()) throw ModelError("x0 entries must be >= 0");
    if (std::abs(x0.sum() - 1.0) > 1e-12) throw ModelError("x0 must sum to 1");
    if ((z0.array() < 0.0).any()) throw ModelError("z0 entries must be >= 0");
  }

  Vec initial_state() const {
    Vec y(2 * size());
    y << x0, z0;
    return y;
  }

  bool operator==(const Scenario& o) const {
    return vsps == o.vsps && pop == o.pop && g0 == o.g0 && g1 == o.g1 && rho == o.rho &&
           horizon == o.horizon && x0 == o.x0 && z0 == o.z0;
  }
};

/// Population shares and twin values; stacks as y = (x, z).
struct SystemState {
  Vec x;
  Vec z;

  Vec stacked() const {
    Vec y(x.size() + z.size());
    y << x, z;
    return y;
  }
  static SystemState from_stacked(const Vec& y) {
    const Eigen::Index M = y.size() / 2;
    return {y.head(M), y.segment(M, M)};
  }
};

using ControlVector = Vec;

// ---------------------------------------------------------------------------
// Scalar formulas

inline double incentive_pool(double eta_m, const VspParams& p, double g0, double g1) {
  if (eta_m < 0.0) throw DomainError("synchronization intensity must be >= 0");
  return eta_m * p.d * (g0 + g1 * p.theta);
}

/// Per-device utility under uniform sharing; zero for an unselected provider.
inline double uav_utility(double x_m, double eta_m, const VspParams& p, const PopulationParams& pop,
                          double g0, double g1) {
  if (x_m < 0.0 || x_m > 1.0) throw DomainError("population share must lie in [0,1]");
  if (x_m == 0.0) return 0.0;
  return incentive_pool(eta_m, p, g0, g1) / (pop.n * x_m) - p.c;
}

inline double value_rhs(double z_m, double eta_m, double theta) { return eta_m - theta * z_m; }

// ---------------------------------------------------------------------------
// Templated system formulas. y = (x_1..x_M, z_1..z_M).

namespace detail {

/// Average utility. x_j u_j = eta_j G_j - c_j x_j for every selected provider.
template <class S>
S average_utility(const Scenario& sc, const VecT<S>& y, const VecT<S>& eta) {
  S ubar = zero_like(y[0]);
  for (int j = 0; j < sc.size(); ++j)
    if (value_of(y[j]) > 0.0)
      ubar += eta[j] * sc.share_factor(j) - sc.vsps[static_cast<size_t>(j)].c * y[j];
  return ubar;
}

template <class S>
VecT<S> state_rhs(const Scenario& sc, const VecT<S>& y, const VecT<S>& eta) {
  const int M = sc.size();
  const double delta = sc.pop.delta;
  const S ubar = average_utility(sc, y, eta);
  VecT<S> dy(2 * M);
  for (int m = 0; m < M; ++m) {
    const auto& p = sc.vsps[static_cast<size_t>(m)];
    if (value_of(y[m]) > 0.0)
      dy[m] = delta * (eta[m] * sc.share_factor(m) - p.c * y[m] - y[m] * ubar);
    else
      dy[m] = zero_like(y[m]);
    dy[M + m] = eta[m] - p.theta * y[M + m];
  }
  return dy;
}

template <class S>
S payoff(const Scenario& sc, int m, const VecT<S>& y, const S& eta_m) {
  const int M = sc.size();
  const auto& p = sc.vsps[static_cast<size_t>(m)];
  const double Nb = sc.pop.n * sc.pop.b;
  const S gap_z = y[M + m] - p.v;
  const S gap_data = y[m] * Nb - eta_m * (p.d * p.k);
  return p.w[0] * (y[m] * (Nb * p.alpha)) + p.w[1] * (p.beta_value() * p.d) * y[M + m] -
         p.w[2] * gap_z * gap_z - p.w[3] * gap_data * gap_data;
}

/// Row vector lambda * d(state_rhs)/dy.
template <class S>
VecT<S> costate_transport(const Scenario& sc, const VecT<S>& y, const VecT<S>& eta,
                          const VecT<S>& lambda) {
  const int M = sc.size();
  const double delta = sc.pop.delta;
  const S ubar = average_utility(sc, y, eta);
  S weighted = zero_like(y[0]);  // sum over selected m of lambda_{x_m} x_m
  for (int m = 0; m < M; ++m)
    if (value_of(y[m]) > 0.0) weighted += lambda[m] * y[m];
  VecT<S> g(2 * M);
  for (int i = 0; i < M; ++i) {
    const double ci = sc.vsps[static_cast<size_t>(i)].c;
    if (value_of(y[i]) > 0.0)
      g[i] = delta * (ci * weighted - lambda[i] * (ci + ubar));
    else
      g[i] = zero_like(y[i]);
    g[M + i] = -sc.vsps[static_cast<size_t>(i)].theta * lambda[M + i];
  }
  return g;
}

/// Row vector lambda * d(state_rhs)/d(eta_j).
template <class S>
S control_transport(const Scenario& sc, int j, const VecT<S>& y, const VecT<S>& lambda) {
  const int M = sc.size();
  S out = lambda[M + j];
  if (value_of(y[j]) <= 0.0) return out;
  const double Gj = sc.share_factor(j);
  S weighted = zero_like(y[0]);
  for (int m = 0; m < M; ++m)
    if (value_of(y[m]) > 0.0) weighted += lambda[m] * y[m];
  out += sc.pop.delta * Gj * (lambda[j] - weighted);
  return out;
}

template <class S>
VecT<S> payoff_gradient(const Scenario& sc, int m, const VecT<S>& y, const S& eta_m) {
  const int M = sc.size();
  const auto& p = sc.vsps[static_cast<size_t>(m)];
  const double Nb = sc.pop.n * sc.pop.b;
  VecT<S> g = VecT<S>::Constant(2 * M, zero_like(y[0]));
  const S gap_data = y[m] * Nb - eta_m * (p.d * p.k);
  g[m] = p.w[0] * Nb * p.alpha - 2.0 * p.w[3] * Nb * gap_data;
  g[M + m] = p.w[1] * p.beta_value() * p.d - 2.0 * p.w[2] * (y[M + m] - p.v);
  return g;
}

/// Clamped maximizer of H_m over eta_m; H_m is quadratic in eta_m with
/// curvature -2 w4 d^2 k^2.
template <class S>
S foc_control(const Scenario& sc, int m, const VecT<S>& y, const VecT<S>& lambda_m) {
  const auto& p = sc.vsps[static_cast<size_t>(m)];
  if (!(p.w[3] > 0.0)) throw DomainError("w4 = 0 leaves the control unbounded");
  const double dk = p.d * p.k;
  S eta = y[m] * (sc.pop.n * sc.pop.b / dk) +
          control_transport(sc, m, y, lambda_m) / (2.0 * p.w[3] * dk * dk);
  if (value_of(eta) < 0.0) return zero_like(eta);
  return eta;
}

/// dH_m/dy with all controls held fixed.
template <class S>
VecT<S> hamiltonian_gradient(const Scenario& sc, int m, const VecT<S>& y, const VecT<S>& eta,
                             const VecT<S>& lambda_m) {
  return payoff_gradient(sc, m, y, eta[m]) + costate_transport(sc, y, eta, lambda_m);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Double-precision API

inline Vec state_rhs(const Vec& y, const ControlVector& eta, const Scenario& sc) {
  return detail::state_rhs<double>(sc, y, eta);
}

inline Vec state_rhs(const SystemState& s, const ControlVector& eta, const Scenario& sc) {
  return state_rhs(s.stacked(), eta, sc);
}

/// dx/dt of the replicator dynamics; components sum to zero on the simplex.
inline Vec replicator_rhs(const SystemState& s, const ControlVector& eta, const Scenario& sc) {
  return state_rhs(s, eta, sc).head(sc.size());
}

inline double instantaneous_payoff(int m, const Vec& y, const ControlVector& eta,
                                   const Scenario& sc) {
  return detail::payoff<double>(sc, m, y, eta[m]);
}

inline double instantaneous_payoff(int m, const SystemState& s, const ControlVector& eta,
                                   const Scenario& sc) {
  return instantaneous_payoff(m, s.stacked(), eta, sc);
}

inline Vec payoff_gradient(int m, const Vec& y, const ControlVector& eta, const Scenario& sc) {
  return detail::payoff_gradient<double>(sc, m, y, eta[m]);
}

/// d(state_rhs)/d(eta_j) as a column of length 2M.
inline Vec control_sensitivity(int j, const Vec& y, const Scenario& sc) {
  const int M = sc.size();
  Vec out = Vec::Zero(2 * M);
  for (int i = 0; i < 2 * M; ++i) {
    Vec e = Vec::Zero(2 * M);
    e[i] = 1.0;
    out[i] = detail::control_transport<double>(sc, j, y, e);
  }
  return out;
}

/// Composite Simpson rule for int e^{-rho t} f(t) dt on an arbitrary
/// ascending mesh. Odd interval counts close with a three-point end panel.
inline double discounted_integral(std::span<const double> t, std::span<const double> f,
                                  double rho) {
  if (t.size() != f.size()) throw DomainError("time and value samples differ in length");
  if (t.empty()) throw DomainError("cannot integrate an empty trajectory");
  const size_t n = t.size();
  if (n == 1) return 0.0;
  auto g = [&](size_t i) { return std::exp(-rho * t[i]) * f[i]; };
  if (n == 2) return 0.5 * (t[1] - t[0]) * (g(0) + g(1));
  double sum = 0.0;
  size_t i = 0;
  for (; i + 2 < n; i += 2) {
    const double h0 = t[i + 1] - t[i];
    const double h1 = t[i + 2] - t[i + 1];
    sum += (h0 + h1) / 6.0 *
           ((2.0 - h1 / h0) * g(i) + (h0 + h1) * (h0 + h1) / (h0 * h1) * g(i + 1) +
            (2.0 - h0 / h1) * g(i + 2));
  }
  if (i + 1 < n) {
    // last interval [t_{n-2}, t_{n-1}] from the quadratic through three points
    const double h0 = t[n - 2] - t[n - 3];
    const double h1 = t[n - 1] - t[n - 2];
    sum += h1 * (g(n - 1) * (2.0 * h1 + 3.0 * h0) / (6.0 * (h0 + h1)) +
                 g(n - 2) * (h1 + 3.0 * h0) / (6.0 * h0) -
                 g(n - 3) * h1 * h1 / (6.0 * h0 * (h0 + h1)));
  }
  return sum;
}

}  // namespace dtsync
