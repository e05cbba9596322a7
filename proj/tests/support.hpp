#pragma once

// Scenario builders and random generators shared by the unit tests.

#include <random>

#include "dtsync/model.hpp"

namespace dtsync::test {

/// Two providers with the d=80, N=500, delta=0.05 setting used throughout.
inline Scenario two_vsp_scenario() {
  Scenario sc;
  sc.vsps.resize(2);
  sc.vsps[0].theta = 0.05;
  sc.vsps[1].theta = 0.1;
  sc.pop = {500, 0.05, 0.1};
  sc.rho = 1.0;
  sc.horizon = 300.0;
  sc.x0 = Vec::Constant(2, 0.5);
  sc.z0 = Vec::Constant(2, 40.0);
  sc.validate();
  return sc;
}

/// Three providers, the last one leading, with slow selection and heavy discounting.
inline Scenario comparison_scenario() {
  Scenario sc;
  sc.vsps.resize(3);
  const double theta[] = {0.05, 0.1, 0.15};
  for (int m = 0; m < 3; ++m) sc.vsps[static_cast<size_t>(m)].theta = theta[m];
  sc.vsps[2].role = Role::leader;
  sc.pop.delta = 0.02;
  sc.rho = 1.0;
  sc.z0 = Vec::Constant(3, 40.0);
  sc.validate();
  return sc;
}

/// Same providers with every role reset to simultaneous play.
inline Scenario without_roles(Scenario sc) {
  for (auto& p : sc.vsps) p.role = Role::simultaneous;
  return sc;
}

inline Scenario symmetric_scenario(int M) {
  Scenario sc;
  sc.vsps.resize(static_cast<size_t>(M));
  for (auto& p : sc.vsps) p.theta = 0.1;
  sc.z0 = Vec::Constant(M, 40.0);
  sc.validate();
  return sc;
}

inline Scenario random_scenario(int M, std::mt19937& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Scenario sc;
  sc.vsps.resize(static_cast<size_t>(M));
  for (auto& p : sc.vsps) {
    p.d = 50 + 70 * u(rng);
    p.theta = 0.05 + 0.2 * u(rng);
    p.k = 0.1 + 0.4 * u(rng);
    p.c = 0.05 + 0.1 * u(rng);
    p.alpha = 0.01 + u(rng);
    p.w = {0.001 + u(rng) * 0.2, 0.001 + 0.01 * u(rng), 0.005 + 0.02 * u(rng), 0.001 + 0.01 * u(rng)};
  }
  sc.pop = {350 + 200 * u(rng), 0.01 + 0.09 * u(rng), 0.1 + 0.9 * u(rng)};
  sc.rho = 0.5 + u(rng);
  sc.z0 = Vec::Constant(M, 40.0);
  sc.validate();
  return sc;
}

/// Random interior state: shares on the open simplex, values in [20, 80].
inline Vec random_state(const Scenario& sc, std::mt19937& rng) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  const int M = sc.size();
  Vec y(2 * M);
  for (int m = 0; m < M; ++m) y[m] = u(rng);
  y.head(M) /= y.head(M).sum();
  for (int m = 0; m < M; ++m) y[M + m] = 20 + 60 * u(rng);
  return y;
}

inline Vec random_controls(int M, std::mt19937& rng) {
  std::uniform_real_distribution<double> u(0.1, 8.0);
  Vec eta(M);
  for (int m = 0; m < M; ++m) eta[m] = u(rng);
  return eta;
}

inline Vec random_costates(int n, std::mt19937& rng, double scale = 5.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Vec l(n);
  for (int i = 0; i < n; ++i) l[i] = u(rng);
  return l;
}

}  // namespace dtsync::test
