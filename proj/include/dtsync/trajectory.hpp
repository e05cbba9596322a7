#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "dtsync/error.hpp"
#include "dtsync/model.hpp"

namespace dtsync {

/// Time-sampled vector path. When derivatives are stored alongside the
/// samples, at() uses cubic Hermite interpolation; otherwise it is linear.
class Trajectory {
 public:
  Trajectory() = default;

  void push_back(double t, Vec value, Vec derivative = Vec()) {
    if (!times_.empty() && !(t > times_.back()))
      throw DomainError("trajectory times must be strictly increasing");
    if (!values_.empty() && value.size() != values_.front().size())
      throw DomainError("trajectory sample dimension changed");
    all_derivs_ = all_derivs_ && derivative.size() == value.size();
    times_.push_back(t);
    values_.push_back(std::move(value));
    derivs_.push_back(std::move(derivative));
  }

  size_t size() const { return times_.size(); }
  bool empty() const { return times_.empty(); }
  Eigen::Index dim() const { return values_.empty() ? 0 : values_.front().size(); }
  double t_begin() const { return times_.front(); }
  double t_end() const { return times_.back(); }

  const std::vector<double>& times() const { return times_; }
  const std::vector<Vec>& values() const { return values_; }
  const Vec& value(size_t i) const { return values_[i]; }
  const Vec& derivative(size_t i) const { return derivs_[i]; }
  const Vec& front() const { return values_.front(); }
  const Vec& back() const { return values_.back(); }
  bool has_derivatives() const { return !empty() && all_derivs_; }

  /// Samples of one component.
  std::vector<double> component(Eigen::Index i) const {
    std::vector<double> out;
    out.reserve(size());
    for (const auto& v : values_) out.push_back(v[i]);
    return out;
  }

  /// Interpolated state; clamps to the end samples outside [t_begin, t_end].
  Vec at(double t) const {
    if (empty()) throw DomainError("interpolating an empty trajectory");
    if (t <= times_.front()) return values_.front();
    if (t >= times_.back()) return values_.back();
    const auto it = std::upper_bound(times_.begin(), times_.end(), t);
    const size_t i = static_cast<size_t>(it - times_.begin()) - 1;
    const double h = times_[i + 1] - times_[i];
    const double s = (t - times_[i]) / h;
    if (!has_derivatives()) return (1.0 - s) * values_[i] + s * values_[i + 1];
    const double s2 = s * s, s3 = s2 * s;
    const double h00 = 2 * s3 - 3 * s2 + 1, h10 = s3 - 2 * s2 + s;
    const double h01 = -2 * s3 + 3 * s2, h11 = s3 - s2;
    return h00 * values_[i] + h10 * h * derivs_[i] + h01 * values_[i + 1] +
           h11 * h * derivs_[i + 1];
  }

 private:
  std::vector<double> times_;
  std::vector<Vec> values_;
  std::vector<Vec> derivs_;
  bool all_derivs_ = true;
};

/// int_0^T e^{-rho t} J(t) dt where column `m` of the trajectory holds J.
inline double discounted_payoff(int m, const Trajectory& integrand, double rho) {
  if (integrand.empty()) throw DomainError("cannot integrate an empty trajectory");
  const auto f = integrand.component(m);
  return discounted_integral(integrand.times(), f, rho);
}

}  // namespace dtsync
