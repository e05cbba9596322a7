#pragma once

// Explicit initial-value integrators: classical RK4 on a uniform mesh and the
// Dormand-Prince 5(4) embedded pair with step-size control.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>

#include "dtsync/error.hpp"
#include "dtsync/trajectory.hpp"

namespace dtsync {

using OdeRhs = std::function<Vec(double, const Vec&)>;

struct OdeProblem {
  OdeRhs rhs;
  double t0 = 0.0;
  double t1 = 1.0;
  Vec y0;
  /// Applied to every accepted state; may repair or reject it.
  std::function<void(Vec&)> project;
};

struct AdaptiveOptions {
  double rtol = 1e-8;
  double atol = 1e-10;
  double initial_step = 0.0;  // 0 picks a step from the derivative scale
  double max_step = std::numeric_limits<double>::infinity();
};

namespace detail {

inline void check_finite(const Vec& v, double t, const char* what) {
  if (!v.allFinite()) throw IntegrationError(std::string("non-finite ") + what, t);
}

inline void check_problem(const OdeProblem& p) {
  if (!p.rhs) throw DomainError("ODE problem has no right-hand side");
  if (!(p.t1 > p.t0)) throw DomainError("ODE problem needs t1 > t0");
}

}  // namespace detail

/// Classical fourth-order Runge-Kutta on a uniform mesh; the last step is
/// shortened to land on t1.
inline Trajectory integrate_fixed(const OdeProblem& p, double step) {
  detail::check_problem(p);
  if (!(step > 0.0)) throw DomainError("step must be > 0");
  const auto steps = static_cast<long>(std::ceil((p.t1 - p.t0) / step - 1e-9));
  Trajectory out;
  Vec y = p.y0;
  double t = p.t0;
  Vec f = p.rhs(t, y);
  detail::check_finite(f, t, "derivative");
  out.push_back(t, y, f);
  for (long i = 0; i < steps; ++i) {
    const double t_next = (i + 1 == steps) ? p.t1 : p.t0 + static_cast<double>(i + 1) * step;
    const double h = t_next - t;
    const Vec k2 = p.rhs(t + 0.5 * h, y + 0.5 * h * f);
    const Vec k3 = p.rhs(t + 0.5 * h, y + 0.5 * h * k2);
    const Vec k4 = p.rhs(t + h, y + h * k3);
    y += h / 6.0 * (f + 2.0 * k2 + 2.0 * k3 + k4);
    t = t_next;
    if (p.project) p.project(y);
    f = p.rhs(t, y);
    detail::check_finite(f, t, "derivative");
    out.push_back(t, y, f);
  }
  return out;
}

/// Dormand-Prince 5(4) with local error controlled to rtol*|y| + atol.
inline Trajectory integrate_adaptive(const OdeProblem& p, const AdaptiveOptions& opt = {}) {
  detail::check_problem(p);
  if (!(opt.rtol > 0.0) || !(opt.atol > 0.0)) throw DomainError("tolerances must be > 0");

  static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                          a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                          a64 = 49.0 / 176, a65 = -5103.0 / 18656;
  static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                          b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                          e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

  Trajectory out;
  double t = p.t0;
  Vec y = p.y0;
  Vec k1 = p.rhs(t, y);
  detail::check_finite(k1, t, "derivative");
  out.push_back(t, y, k1);

  const double span = p.t1 - p.t0;
  double h = opt.initial_step;
  if (!(h > 0.0)) {
    const Vec scale = (opt.atol + opt.rtol * y.array().abs()).matrix();
    const double d0 = (y.array() / scale.array()).matrix().norm();
    const double d1 = (k1.array() / scale.array()).matrix().norm();
    h = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    h = std::min(h, span);
  }
  h = std::min(h, opt.max_step);

  const double min_step = 1e-13 * std::max(1.0, std::abs(p.t1));
  double err_prev = 1e-4;
  while (t < p.t1) {
    if (t + h > p.t1) h = p.t1 - t;
    if (h < min_step) throw IntegrationError("step size underflow (stiff or singular problem)", t);
    const Vec k2 = p.rhs(t + c2 * h, y + h * a21 * k1);
    const Vec k3 = p.rhs(t + c3 * h, y + h * (a31 * k1 + a32 * k2));
    const Vec k4 = p.rhs(t + c4 * h, y + h * (a41 * k1 + a42 * k2 + a43 * k3));
    const Vec k5 = p.rhs(t + c5 * h, y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
    const Vec k6 =
        p.rhs(t + h, y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
    Vec y_new = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    const Vec k7 = p.rhs(t + h, y_new);
    const Vec err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);

    double err_norm = 0.0;
    if (y_new.allFinite() && k7.allFinite()) {
      const auto scale = opt.atol + opt.rtol * y.array().abs().max(y_new.array().abs());
      err_norm = std::sqrt((err.array() / scale).square().mean());
    } else {
      err_norm = std::numeric_limits<double>::infinity();
    }

    if (err_norm <= 1.0) {
      t = (t + h >= p.t1) ? p.t1 : t + h;
      Vec f_new = k7;
      if (p.project) {
        const Vec before = y_new;
        p.project(y_new);
        if (y_new != before) f_new = p.rhs(t, y_new);
      }
      detail::check_finite(y_new, t, "state");
      y = std::move(y_new);
      k1 = std::move(f_new);
      out.push_back(t, y, k1);
      // PI controller
      const double fac = 0.9 * std::pow(std::max(err_norm, 1e-10), -0.7 / 5.0) *
                         std::pow(err_prev, 0.4 / 5.0);
      h *= std::clamp(fac, 0.2, 5.0);
      err_prev = std::max(err_norm, 1e-4);
    } else {
      const double fac = std::isfinite(err_norm) ? 0.9 * std::pow(err_norm, -0.2) : 0.1;
      h *= std::clamp(fac, 0.1, 0.5);
    }
    h = std::min(h, opt.max_step);
  }
  return out;
}

/// The same problem run backwards in time: s in [0, t1 - t0] maps to t1 - s.
inline OdeProblem time_reversed(const OdeProblem& p, Vec y_end) {
  OdeProblem r;
  r.t0 = 0.0;
  r.t1 = p.t1 - p.t0;
  r.y0 = std::move(y_end);
  r.rhs = [f = p.rhs, T = p.t1](double s, const Vec& y) -> Vec { return -f(T - s, y); };
  r.project = p.project;
  return r;
}

}  // namespace dtsync
