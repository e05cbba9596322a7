#pragma once

// Static Stackelberg benchmark: every provider commits to one constant
// intensity at t = 0 and only the population and twin values evolve.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <tuple>
#include <vector>

#include "dtsync/error.hpp"
#include "dtsync/evo.hpp"
#include "dtsync/model.hpp"
#include "dtsync/parallel.hpp"

namespace dtsync {

struct StaticOptions {
  double eta_max = 0.0;  // 0 derives 2 max_m N b / (d_m k_m)
  int grid_points = 21;
  double search_tol = 1e-4;
  int max_rounds = 100;
  double fixed_point_tol = 1e-4;
};

/// Follower best responses did not settle; carries the last iterate.
class StaticConvergenceError : public Error {
 public:
  StaticConvergenceError(const std::string& what, Vec last) : Error(what), last_(std::move(last)) {}
  const Vec& last_iterate() const { return last_; }

 private:
  Vec last_;
};

struct StaticSolution {
  Scenario scenario;
  int leader = -1;
  Vec constants;
  Trajectory trajectory;  // (x, z)
  Vec payoffs;
  int follower_rounds = 0;  // Jacobi rounds at the final leader constant
};

inline double static_eta_max(const Scenario& sc, const StaticOptions& opt = {}) {
  if (opt.eta_max > 0.0) return opt.eta_max;
  double best = 0.0;
  for (const auto& p : sc.vsps) best = std::max(best, sc.pop.n * sc.pop.b / (p.d * p.k));
  return 2.0 * best;
}

/// Discounted payoffs over the horizon when everyone holds a constant.
inline Vec static_payoffs(const Scenario& sc, const Vec& constants) {
  return simulate_payoffs(sc, constant_control(constants), sc.horizon).payoffs;
}

namespace detail {

/// Maximizer of f on [0, hi]: the best of an even grid (lowest index on
/// ties), refined by golden section inside the neighbouring grid cells.
inline double grid_golden_max(const std::function<double(double)>& f, double hi, int grid, double tol) {
  if (grid < 2) throw DomainError("search grid needs at least 2 points");
  const double step = hi / (grid - 1);
  const auto values = parallel_map<double>(static_cast<size_t>(grid), [&](size_t k) { return f(step * static_cast<double>(k)); });
  const size_t best = static_cast<size_t>(std::max_element(values.begin(), values.end()) - values.begin());
  double lo = step * (best == 0 ? 0.0 : static_cast<double>(best) - 1.0);
  double up = std::min(hi, step * (static_cast<double>(best) + 1.0));
  const double r = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = up - r * (up - lo), d = lo + r * (up - lo);
  double fc = f(c), fd = f(d);
  while (up - lo > tol) {
    if (fc > fd) {
      up = d, d = c, fd = fc, c = up - r * (up - lo), fc = f(c);
    } else {
      lo = c, c = d, fc = fd, d = lo + r * (up - lo), fd = f(d);
    }
  }
  const double refined = 0.5 * (lo + up);
  return f(refined) > values[best] ? refined : step * static_cast<double>(best);
}

}  // namespace detail

/// Best constant for provider m with every other constant held fixed.
inline double follower_static_best_response(int m, const Vec& constants, const Scenario& sc,
                                            const StaticOptions& opt = {}) {
  if (m < 0 || m >= sc.size()) throw DomainError("provider index out of range");
  auto f = [&](double c) {
    Vec trial = constants;
    trial[m] = c;
    return static_payoffs(sc, trial)[m];
  };
  return detail::grid_golden_max(f, static_eta_max(sc, opt), opt.grid_points, opt.search_tol);
}

/// Jacobi best-response iteration over the followers with the leader's
/// constant fixed. Returns the converged constants and the rounds used.
inline std::pair<Vec, int> equilibrate_followers(const Vec& start, const std::vector<int>& followers,
                                                 const Scenario& sc, const StaticOptions& opt = {}) {
  Vec c = start;
  for (int round = 1; round <= opt.max_rounds; ++round) {
    Vec next = c;
    for (const int m : followers) next[m] = follower_static_best_response(m, c, sc, opt);
    const double change = (next - c).lpNorm<Eigen::Infinity>();
    c = next;
    if (change <= opt.fixed_point_tol) return {c, round};
  }
  throw StaticConvergenceError("follower best responses did not converge in " + std::to_string(opt.max_rounds) +
                                   " rounds",
                               c);
}

inline StaticSolution solve_static_stackelberg(const Scenario& scenario, const StaticOptions& opt = {}) {
  Scenario sc = scenario;
  sc.validate();
  std::vector<int> leaders, followers;
  for (int m = 0; m < sc.size(); ++m)
    (sc.vsps[static_cast<size_t>(m)].role == Role::leader ? leaders : followers).push_back(m);
  if (leaders.size() != 1) throw ModelError("static Stackelberg game needs exactly one leader");
  const int i = leaders.front();

  // Followers start from the demand-balancing intensity at the initial shares.
  Vec start(sc.size());
  for (int m = 0; m < sc.size(); ++m) {
    const auto& p = sc.vsps[static_cast<size_t>(m)];
    start[m] = sc.x0[m] * sc.pop.n * sc.pop.b / (p.d * p.k);
  }
  auto leader_payoff = [&](double c) {
    Vec s = start;
    s[i] = c;
    const Vec eq = equilibrate_followers(s, followers, sc, opt).first;
    return static_payoffs(sc, eq)[i];
  };
  const double best = detail::grid_golden_max(leader_payoff, static_eta_max(sc, opt), opt.grid_points, opt.search_tol);

  StaticSolution sol;
  sol.scenario = sc;
  sol.leader = i;
  start[i] = best;
  std::tie(sol.constants, sol.follower_rounds) = equilibrate_followers(start, followers, sc, opt);
  const auto sim = simulate_payoffs(sc, constant_control(sol.constants), sc.horizon);
  sol.trajectory = sim.states;
  sol.payoffs = sim.payoffs;
  return sol;
}

}  // namespace dtsync
