#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>

#include "gpreg/errors.hpp"

namespace gpreg {

// Gaussian prior on the log of a positive parameter.
struct LogGaussianPrior {
  double mean = 0.0;
  double stddev = 1.0;
};

// Box constraint in constrained (positive) space, enforced by projection.
struct Bounds {
  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();
};

// A positive scalar parameter. The optimizer works on u = log(value); the
// constrained value is cached so that user-supplied values round-trip
// exactly instead of through exp(log(v)). value 0 maps to u = -inf, which
// exp() round-trips, and its gradient contribution vanishes by the chain
// rule.
class HyperParam {
 public:
  HyperParam() = default;
  HyperParam(std::string name, double value) : name_(std::move(name)) {
    set_value(value);
  }

  const std::string& name() const { return name_; }
  void set_name(std::string n) { name_ = std::move(n); }

  double value() const { return value_; }
  double log_value() const { return log_value_; }

  void set_value(double v) {
    if (std::isnan(v) || v < 0.0)
      throw ConfigError("invalid value " + std::to_string(v) +
                        " for parameter '" + name_ + "' (must be >= 0)");
    if (bounds_) v = std::min(std::max(v, bounds_->lo), bounds_->hi);
    value_ = v;
    log_value_ = std::log(v);
  }

  void set_log_value(double u) {
    if (bounds_) {
      const double lo = std::log(bounds_->lo);
      const double hi = std::log(bounds_->hi);
      u = std::min(std::max(u, lo), hi);
    }
    log_value_ = u;
    value_ = std::exp(u);
  }

  void set_bounds(Bounds b) {
    if (std::isnan(b.lo) || std::isnan(b.hi) || b.lo < 0.0 || b.hi < b.lo)
      throw ConfigError("invalid bounds for parameter '" + name_ + "'");
    bounds_ = b;
    set_value(value_);  // re-project
  }
  const std::optional<Bounds>& bounds() const { return bounds_; }

  void set_prior(LogGaussianPrior p) {
    if (!(p.stddev > 0.0))
      throw ConfigError("prior stddev must be positive for parameter '" +
                        name_ + "'");
    prior_ = p;
  }
  const std::optional<LogGaussianPrior>& prior() const { return prior_; }

  double log_prior_density() const {
    if (!prior_) return 0.0;
    const double z = (log_value_ - prior_->mean) / prior_->stddev;
    return -0.5 * z * z - std::log(prior_->stddev) -
           0.5 * std::log(2.0 * M_PI);
  }

  // d(log prior)/du
  double log_prior_gradient() const {
    if (!prior_) return 0.0;
    return -(log_value_ - prior_->mean) / (prior_->stddev * prior_->stddev);
  }

 private:
  std::string name_;
  double value_ = 1.0;
  double log_value_ = 0.0;
  std::optional<LogGaussianPrior> prior_;
  std::optional<Bounds> bounds_;
};

}  // namespace gpreg
