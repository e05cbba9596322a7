#pragma once

// Two-point boundary-value solvers for state/costate systems: multiple
// shooting and three-stage Lobatto IIIA collocation, both driven by a damped
// Newton iteration over a sparse finite-difference Jacobian.

#include <Eigen/Core>
#include <Eigen/SparseCore>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "dtsync/error.hpp"
#include "dtsync/ode.hpp"
#include "dtsync/trajectory.hpp"

namespace dtsync {

using BoundaryFn = std::function<Vec(const Vec& wa, const Vec& wb)>;

struct BvpProblem {
  OdeRhs rhs;
  BoundaryFn boundary;  // residual of length dim(w)
  double t0 = 0.0;
  double t1 = 1.0;
  std::function<Vec(double)> initial_guess;
};

struct NewtonOptions {
  int max_iterations = 60;
  double armijo = 1e-4;
  double backtrack = 0.5;
  double min_step = 1e-4;
  int stagnation_window = 5;
  double stagnation_reduction = 1e-3;
};

struct BvpSolution {
  Trajectory trajectory;
  double residual_norm = 0.0;
  int iterations = 0;
  long rhs_evaluations = 0;
};

class BvpError : public Error {
 public:
  enum class Kind { stagnation, singular_jacobian, max_iterations };

  BvpError(Kind kind, const std::string& what, Trajectory best, double residual,
           double condition = std::numeric_limits<double>::quiet_NaN())
      : Error(what), kind_(kind), best_(std::move(best)), residual_(residual),
        condition_(condition) {}

  Kind kind() const { return kind_; }
  /// Best iterate seen before the failure.
  const Trajectory& best() const { return best_; }
  double residual() const { return residual_; }
  double condition_estimate() const { return condition_; }

 private:
  Kind kind_;
  Trajectory best_;
  double residual_;
  double condition_;
};

namespace detail {

using SparseMat = Eigen::SparseMatrix<double>;
using Triplets = std::vector<Eigen::Triplet<double>>;

inline double fd_step(double v) { return std::max(1e-7, 1e-7 * std::abs(v)); }

/// Forward-difference Jacobian of f at w given f(w).
inline Eigen::MatrixXd fd_jacobian(const std::function<Vec(const Vec&)>& f, const Vec& w,
                                   const Vec& fw) {
  Eigen::MatrixXd J(fw.size(), w.size());
  Vec wp = w;
  for (Eigen::Index j = 0; j < w.size(); ++j) {
    const double h = fd_step(w[j]);
    wp[j] = w[j] + h;
    J.col(j) = (f(wp) - fw) / h;
    wp[j] = w[j];
  }
  return J;
}

inline void add_block(Triplets& t, Eigen::Index row, Eigen::Index col, const Eigen::MatrixXd& B) {
  for (Eigen::Index j = 0; j < B.cols(); ++j)
    for (Eigen::Index i = 0; i < B.rows(); ++i)
      if (B(i, j) != 0.0) t.emplace_back(row + i, col + j, B(i, j));
}

inline void add_identity(Triplets& t, Eigen::Index row, Eigen::Index col, Eigen::Index n,
                         double s) {
  for (Eigen::Index i = 0; i < n; ++i) t.emplace_back(row + i, col + i, s);
}

/// Lower bound on cond_1(J) from a few inverse power iterations through an
/// existing factorization.
inline double condition_estimate(const SparseMat& J, Eigen::SparseLU<SparseMat, Eigen::NaturalOrdering<int>>& lu) {
  double norm_j = 0.0;
  for (Eigen::Index c = 0; c < J.outerSize(); ++c) {
    double col = 0.0;
    for (SparseMat::InnerIterator it(J, c); it; ++it) col += std::abs(it.value());
    norm_j = std::max(norm_j, col);
  }
  Vec x(J.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = 1.0 + 0.5 * std::sin(1.0 + 3.0 * i);
  x /= x.lpNorm<1>();
  double growth = 0.0;
  for (int k = 0; k < 3; ++k) {
    const Vec y = lu.solve(x);
    if (!y.allFinite()) return std::numeric_limits<double>::infinity();
    growth = std::max(growth, y.lpNorm<1>() / x.lpNorm<1>());
    x = y / y.lpNorm<1>();
  }
  return norm_j * growth;
}

inline constexpr double kSingularCondition = 1e10;

struct NewtonSystem {
  std::function<Vec(const Vec&)> residual;
  std::function<SparseMat(const Vec& u, const Vec& r)> jacobian;
  std::function<Trajectory(const Vec&)> to_trajectory;
};

struct NewtonResult {
  Vec u;
  double residual_norm;
  int iterations;
};

inline double safe_merit(const std::function<Vec(const Vec&)>& F, const Vec& u, Vec& r) {
  try {
    r = F(u);
  } catch (const IntegrationError&) {
    return std::numeric_limits<double>::infinity();
  }
  if (!r.allFinite()) return std::numeric_limits<double>::infinity();
  return 0.5 * r.squaredNorm();
}

inline NewtonResult damped_newton(const NewtonSystem& sys, Vec u, double tol,
                                  const NewtonOptions& opt) {
  Vec r = sys.residual(u);
  if (!r.allFinite())
    throw BvpError(BvpError::Kind::stagnation, "initial guess gives a non-finite residual",
                   sys.to_trajectory(u), std::numeric_limits<double>::infinity());
  double merit = 0.5 * r.squaredNorm();
  std::vector<double> history{r.lpNorm<Eigen::Infinity>()};
  int it = 0;
  while (history.back() > tol) {
    if (it >= opt.max_iterations)
      throw BvpError(BvpError::Kind::max_iterations, "Newton iteration limit reached",
                     sys.to_trajectory(u), history.back());
    const SparseMat J = sys.jacobian(u, r);
    Eigen::SparseLU<SparseMat, Eigen::NaturalOrdering<int>> lu;
    lu.compute(J);
    const double cond = lu.info() == Eigen::Success ? condition_estimate(J, lu)
                                                    : std::numeric_limits<double>::infinity();
    const Vec du = cond < kSingularCondition ? Vec(lu.solve(-r)) : Vec();
    if (cond >= kSingularCondition || !du.allFinite())
      throw BvpError(BvpError::Kind::singular_jacobian,
                     "singular Jacobian (condition estimate " + std::to_string(cond) + ")",
                     sys.to_trajectory(u), history.back(), cond);
    double step = 1.0;
    Vec r_trial;
    double trial = safe_merit(sys.residual, u + du, r_trial);
    while (trial > (1.0 - 2.0 * opt.armijo * step) * merit && step > opt.min_step) {
      step *= opt.backtrack;
      trial = safe_merit(sys.residual, u + step * du, r_trial);
    }
    if (!(trial < merit))
      throw BvpError(BvpError::Kind::stagnation, "line search found no descent",
                     sys.to_trajectory(u), history.back());
    u += step * du;
    r = std::move(r_trial);
    merit = trial;
    ++it;
    history.push_back(r.lpNorm<Eigen::Infinity>());
    const auto w = static_cast<size_t>(opt.stagnation_window);
    if (history.size() > w && history.back() > tol &&
        history.back() > (1.0 - opt.stagnation_reduction) * history[history.size() - 1 - w])
      throw BvpError(BvpError::Kind::stagnation,
                     "Newton stagnated: residual " + std::to_string(history.back()),
                     sys.to_trajectory(u), history.back());
  }
  return {std::move(u), history.back(), it};
}

inline Eigen::Index guess_dim(const BvpProblem& p) {
  if (!p.rhs || !p.boundary || !p.initial_guess)
    throw DomainError("BVP problem is missing rhs, boundary or initial guess");
  if (!(p.t1 > p.t0)) throw DomainError("BVP problem needs t1 > t0");
  const Eigen::Index n = p.initial_guess(p.t0).size();
  if (p.boundary(p.initial_guess(p.t0), p.initial_guess(p.t1)).size() != n)
    throw DomainError("boundary residual length must equal the state dimension");
  if (p.rhs(p.t0, p.initial_guess(p.t0)).size() != n)
    throw DomainError("rhs length must equal the state dimension");
  return n;
}

}  // namespace detail

// ---------------------------------------------------------------------------

struct ShootingOptions {
  int steps_per_segment = 100;  // RK4 steps inside each segment
  NewtonOptions newton;
};

/// Multiple shooting: unknowns are the segment start vectors; each segment is
/// propagated with fixed-step RK4 so the shooting map is smooth for the
/// finite-difference Jacobian.
inline BvpSolution solve_multiple_shooting(const BvpProblem& p, int segments, double tol,
                                           const ShootingOptions& opt = {}) {
  if (segments < 1) throw DomainError("segments must be >= 1");
  if (!(tol > 0.0)) throw DomainError("tol must be > 0");
  const Eigen::Index n = detail::guess_dim(p);
  const auto K = static_cast<Eigen::Index>(segments);
  const double H = (p.t1 - p.t0) / static_cast<double>(segments);
  auto node = [&](Eigen::Index k) { return k == K ? p.t1 : p.t0 + static_cast<double>(k) * H; };
  long evals = 0;

  auto propagate = [&](Eigen::Index k, const Vec& s) -> Trajectory {
    OdeProblem ivp{p.rhs, node(k), node(k + 1), s, {}};
    evals += 4L * opt.steps_per_segment + 1;
    return integrate_fixed(ivp, (node(k + 1) - node(k)) / opt.steps_per_segment);
  };
  auto end_of = [&](Eigen::Index k, const Vec& s) { return propagate(k, s).back(); };

  detail::NewtonSystem sys;
  sys.residual = [&](const Vec& u) {
    Vec r(n * K);
    Vec last;
    for (Eigen::Index k = 0; k < K; ++k) {
      const Vec e = end_of(k, u.segment(k * n, n));
      if (k + 1 < K)
        r.segment(n + k * n, n) = e - u.segment((k + 1) * n, n);
      else
        last = e;
    }
    r.head(n) = p.boundary(u.head(n), last);
    return r;
  };
  sys.jacobian = [&](const Vec& u, const Vec&) {
    detail::Triplets trip;
    Eigen::MatrixXd phi_last;
    Vec end_last;
    for (Eigen::Index k = 0; k < K; ++k) {
      const Vec s = u.segment(k * n, n);
      const Vec e = end_of(k, s);
      const Eigen::MatrixXd Phi =
          detail::fd_jacobian([&](const Vec& v) { return end_of(k, v); }, s, e);
      if (k + 1 < K) {
        detail::add_block(trip, n + k * n, k * n, Phi);
        detail::add_identity(trip, n + k * n, (k + 1) * n, n, -1.0);
      } else {
        phi_last = Phi;
        end_last = e;
      }
    }
    const Vec wa = u.head(n);
    const Vec b0 = p.boundary(wa, end_last);
    const Eigen::MatrixXd Ba =
        detail::fd_jacobian([&](const Vec& v) { return p.boundary(v, end_last); }, wa, b0);
    const Eigen::MatrixXd Bb =
        detail::fd_jacobian([&](const Vec& v) { return p.boundary(wa, v); }, end_last, b0);
    detail::add_block(trip, 0, 0, Ba);
    detail::add_block(trip, 0, (K - 1) * n, Bb * phi_last);
    detail::SparseMat J(n * K, n * K);
    J.setFromTriplets(trip.begin(), trip.end());
    return J;
  };
  sys.to_trajectory = [&](const Vec& u) {
    Trajectory out;
    for (Eigen::Index k = 0; k < K; ++k) {
      const Trajectory seg = propagate(k, u.segment(k * n, n));
      const size_t keep = (k + 1 < K) ? seg.size() - 1 : seg.size();
      for (size_t i = 0; i < keep; ++i)
        out.push_back(seg.times()[i], seg.value(i), p.rhs(seg.times()[i], seg.value(i)));
    }
    return out;
  };

  Vec u0(n * K);
  for (Eigen::Index k = 0; k < K; ++k) u0.segment(k * n, n) = p.initial_guess(node(k));
  const auto res = detail::damped_newton(sys, u0, tol, opt.newton);
  BvpSolution sol;
  sol.trajectory = sys.to_trajectory(res.u);
  sol.residual_norm = res.residual_norm;
  sol.iterations = res.iterations;
  sol.rhs_evaluations = evals;
  return sol;
}

// ---------------------------------------------------------------------------

struct CollocationOptions {
  bool refine = true;  // one bisection pass over the worst 20% of intervals
  NewtonOptions newton;
};

namespace detail {

/// Lobatto IIIA (three stages) on a fixed mesh. Unknowns alternate node and
/// interval-midpoint vectors: w_0, w_{1/2}, w_1, ..., w_N.
inline BvpSolution collocate_on_mesh(const BvpProblem& p, const std::vector<double>& mesh,
                                      double tol, const NewtonOptions& opt, long& evals) {
  const Eigen::Index n = p.initial_guess(p.t0).size();
  const auto N = static_cast<Eigen::Index>(mesh.size()) - 1;
  const Eigen::Index P = 2 * N + 1;
  auto point_time = [&](Eigen::Index q) {
    const auto i = static_cast<size_t>(q / 2);
    return (q % 2 == 0) ? mesh[i] : 0.5 * (mesh[i] + mesh[i + 1]);
  };

  auto eval_all = [&](const Vec& u) {
    std::vector<Vec> f(static_cast<size_t>(P));
    for (Eigen::Index q = 0; q < P; ++q)
      f[static_cast<size_t>(q)] = p.rhs(point_time(q), u.segment(q * n, n));
    evals += P;
    return f;
  };

  // Boundary rows that only involve w(t1) go last, which keeps the Jacobian
  // banded for separated boundary conditions.
  std::vector<Eigen::Index> bc_row(static_cast<size_t>(n));
  {
    const Vec ga = p.initial_guess(mesh.front()), gb = p.initial_guess(mesh.back());
    const Vec b0 = p.boundary(ga, gb);
    const Eigen::MatrixXd Ba = fd_jacobian([&](const Vec& v) { return p.boundary(v, gb); }, ga, b0);
    Eigen::Index right = 0;
    for (Eigen::Index i = 0; i < n; ++i) right += Ba.row(i).lpNorm<Eigen::Infinity>() == 0.0;
    Eigen::Index top = 0, bottom = n * P - right;
    for (Eigen::Index i = 0; i < n; ++i)
      if (Ba.row(i).lpNorm<Eigen::Infinity>() == 0.0) bc_row[static_cast<size_t>(i)] = bottom++;
    for (Eigen::Index i = 0; i < n; ++i)
      if (Ba.row(i).lpNorm<Eigen::Infinity>() != 0.0) bc_row[static_cast<size_t>(i)] = top++;
  }
  const Eigen::Index left_rows = std::count_if(bc_row.begin(), bc_row.end(),
                                               [&](Eigen::Index r) { return r < n; });
  auto place_bc = [&](Vec& r, const Vec& b) {
    for (Eigen::Index i = 0; i < n; ++i) r[bc_row[static_cast<size_t>(i)]] = b[i];
  };

  NewtonSystem sys;
  sys.residual = [&](const Vec& u) {
    const auto f = eval_all(u);
    Vec r(n * P);
    place_bc(r, p.boundary(u.head(n), u.segment(2 * N * n, n)));
    for (Eigen::Index i = 0; i < N; ++i) {
      const double h = mesh[static_cast<size_t>(i + 1)] - mesh[static_cast<size_t>(i)];
      const auto a = 2 * i, m = 2 * i + 1, b = 2 * i + 2;
      const Vec& fa = f[static_cast<size_t>(a)];
      const Vec& fm = f[static_cast<size_t>(m)];
      const Vec& fb = f[static_cast<size_t>(b)];
      r.segment(left_rows + a * n, n) = u.segment(m * n, n) - u.segment(a * n, n) -
                                        h * (5.0 / 24.0 * fa + 1.0 / 3.0 * fm - 1.0 / 24.0 * fb);
      r.segment(left_rows + m * n, n) = u.segment(b * n, n) - u.segment(a * n, n) -
                                        h * (1.0 / 6.0 * fa + 2.0 / 3.0 * fm + 1.0 / 6.0 * fb);
    }
    return r;
  };
  sys.jacobian = [&](const Vec& u, const Vec&) {
    std::vector<Eigen::MatrixXd> A(static_cast<size_t>(P));
    for (Eigen::Index q = 0; q < P; ++q) {
      const double t = point_time(q);
      const Vec w = u.segment(q * n, n);
      const Vec fw = p.rhs(t, w);
      A[static_cast<size_t>(q)] =
          fd_jacobian([&](const Vec& v) { return p.rhs(t, v); }, w, fw);
      evals += n + 1;
    }
    Triplets trip;
    trip.reserve(static_cast<size_t>(N * 6 * n * n + 2 * n * n));
    const Vec wa = u.head(n), wb = u.segment(2 * N * n, n);
    const Vec b0 = p.boundary(wa, wb);
    const Eigen::MatrixXd Ba = fd_jacobian([&](const Vec& v) { return p.boundary(v, wb); }, wa, b0);
    const Eigen::MatrixXd Bb = fd_jacobian([&](const Vec& v) { return p.boundary(wa, v); }, wb, b0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Index row = bc_row[static_cast<size_t>(i)];
      for (Eigen::Index j = 0; j < n; ++j) {
        if (Ba(i, j) != 0.0) trip.emplace_back(row, j, Ba(i, j));
        if (Bb(i, j) != 0.0) trip.emplace_back(row, 2 * N * n + j, Bb(i, j));
      }
    }
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
    for (Eigen::Index i = 0; i < N; ++i) {
      const double h = mesh[static_cast<size_t>(i + 1)] - mesh[static_cast<size_t>(i)];
      const auto a = 2 * i, m = 2 * i + 1, b = 2 * i + 2;
      const auto& Aa = A[static_cast<size_t>(a)];
      const auto& Am = A[static_cast<size_t>(m)];
      const auto& Ab = A[static_cast<size_t>(b)];
      const Eigen::Index r1 = left_rows + a * n, r2 = left_rows + m * n;
      add_block(trip, r1, a * n, -I - h * 5.0 / 24.0 * Aa);
      add_block(trip, r1, m * n, I - h / 3.0 * Am);
      add_block(trip, r1, b * n, h / 24.0 * Ab);
      add_block(trip, r2, a * n, -I - h / 6.0 * Aa);
      add_block(trip, r2, m * n, -2.0 * h / 3.0 * Am);
      add_block(trip, r2, b * n, I - h / 6.0 * Ab);
    }
    SparseMat J(n * P, n * P);
    J.setFromTriplets(trip.begin(), trip.end());
    return J;
  };
  sys.to_trajectory = [&](const Vec& u) {
    Trajectory out;
    for (Eigen::Index q = 0; q < P; ++q) {
      const double t = point_time(q);
      const Vec w = u.segment(q * n, n);
      out.push_back(t, w, p.rhs(t, w));
    }
    return out;
  };

  Vec u0(n * P);
  for (Eigen::Index q = 0; q < P; ++q) u0.segment(q * n, n) = p.initial_guess(point_time(q));
  const auto res = damped_newton(sys, u0, tol, opt);
  BvpSolution sol;
  sol.trajectory = sys.to_trajectory(res.u);
  sol.residual_norm = res.residual_norm;
  sol.iterations = res.iterations;
  return sol;
}

/// Per-interval defect: ODE residual h ||u' - f(t, u)||_inf of the cubic
/// Hermite interpolant at the interval quarter points. (The collocation
/// midpoint itself lies on that cubic, so it carries no error signal.)
inline std::vector<double> interval_defects(const Trajectory& tr, const OdeRhs& rhs) {
  std::vector<double> out;
  const auto& t = tr.times();
  for (size_t a = 0; a + 2 < t.size(); a += 2) {
    const size_t b = a + 2;
    const double h = t[b] - t[a];
    double worst = 0.0;
    for (double s : {0.25, 0.75}) {
      const double s2 = s * s, s3 = s2 * s;
      const Vec u = (2 * s3 - 3 * s2 + 1) * tr.value(a) + (s3 - 2 * s2 + s) * h * tr.derivative(a) +
                    (-2 * s3 + 3 * s2) * tr.value(b) + (s3 - s2) * h * tr.derivative(b);
      const Vec du = (6 * s2 - 6 * s) / h * tr.value(a) + (3 * s2 - 4 * s + 1) * tr.derivative(a) +
                     (6 * s - 6 * s2) / h * tr.value(b) + (3 * s2 - 2 * s) * tr.derivative(b);
      worst = std::max(worst, h * (du - rhs(t[a] + s * h, u)).lpNorm<Eigen::Infinity>());
    }
    out.push_back(worst);
  }
  return out;
}

}  // namespace detail

/// Three-stage Lobatto IIIA collocation (fourth order) on a uniform mesh of
/// `mesh_points` nodes, optionally followed by one bisection pass over the
/// worst 20% of intervals.
inline BvpSolution solve_collocation(const BvpProblem& p, int mesh_points, double tol,
                                     const CollocationOptions& opt = {}) {
  if (mesh_points < 3) throw DomainError("mesh_points must be >= 3");
  if (!(tol > 0.0)) throw DomainError("tol must be > 0");
  detail::guess_dim(p);
  std::vector<double> mesh(static_cast<size_t>(mesh_points));
  for (int i = 0; i < mesh_points; ++i)
    mesh[static_cast<size_t>(i)] =
        (i + 1 == mesh_points) ? p.t1 : p.t0 + (p.t1 - p.t0) * i / (mesh_points - 1);
  long evals = 0;
  BvpSolution sol = detail::collocate_on_mesh(p, mesh, tol, opt.newton, evals);
  if (opt.refine) {
    const auto defect = detail::interval_defects(sol.trajectory, p.rhs);
    std::vector<size_t> order(defect.size());
    std::iota(order.begin(), order.end(), size_t{0});
    const size_t worst = (defect.size() + 4) / 5;
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(worst),
                      order.end(), [&](size_t a, size_t b) { return defect[a] > defect[b]; });
    std::vector<bool> split(defect.size(), false);
    for (size_t i = 0; i < worst; ++i) split[order[i]] = true;
    std::vector<double> refined{mesh.front()};
    for (size_t i = 0; i + 1 < mesh.size(); ++i) {
      if (split[i]) refined.push_back(0.5 * (mesh[i] + mesh[i + 1]));
      refined.push_back(mesh[i + 1]);
    }
    BvpProblem q = p;
    q.initial_guess = [coarse = sol.trajectory](double t) { return coarse.at(t); };
    const int first_iterations = sol.iterations;
    sol = detail::collocate_on_mesh(q, refined, tol, opt.newton, evals);
    sol.iterations += first_iterations;
  }
  sol.rhs_evaluations = evals;
  return sol;
}

}  // namespace dtsync
