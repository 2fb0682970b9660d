#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "gpreg/errors.hpp"

namespace gpreg {

// 64-bit FNV-1a over the raw bytes of the values; used to detect transforms
// being applied at a training stage they were not fitted on.
inline std::uint64_t fingerprint(const Eigen::VectorXd& v) {
  std::uint64_t h = 14695981039346656037ull;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    std::uint64_t bits;
    const double d = v[i];
    std::memcpy(&bits, &d, sizeof bits);
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xffu;
      h *= 1099511628211ull;
    }
  }
  return h;
}

// A single invertible scalar transform with fitted parameters.
struct ColumnTransform {
  enum class Kind { ZScore, Log, BoxCox };

  Kind kind = Kind::ZScore;
  double mean = 0.0;    // ZScore
  double stddev = 1.0;  // ZScore
  double shift = 0.0;   // Log / BoxCox
  double lambda = 1.0;  // BoxCox

  double apply_one(double y) const {
    switch (kind) {
      case Kind::ZScore:
        return (y - mean) / stddev;
      case Kind::Log:
        if (!(y + shift > 0.0))
          throw DomainError("log transform: value " + std::to_string(y) +
                            " is not positive after shift " +
                            std::to_string(shift));
        return std::log(y + shift);
      case Kind::BoxCox: {
        const double s = y + shift;
        if (!(s > 0.0))
          throw DomainError("Box-Cox transform: value " + std::to_string(y) +
                            " is not positive after shift " +
                            std::to_string(shift));
        if (std::abs(lambda) < 1e-9) return std::log(s);
        return (std::pow(s, lambda) - 1.0) / lambda;
      }
    }
    throw Error("unreachable transform kind");
  }

  // Out-of-range latent values (possible for Box-Cox quantile bounds) clamp
  // to the infimum of the original domain rather than throwing.
  double inverse_one(double t) const {
    switch (kind) {
      case Kind::ZScore:
        return mean + stddev * t;
      case Kind::Log:
        return std::exp(t) - shift;
      case Kind::BoxCox: {
        if (std::abs(lambda) < 1e-9) return std::exp(t) - shift;
        const double base = lambda * t + 1.0;
        if (base <= 0.0) return -shift;
        return std::pow(base, 1.0 / lambda) - shift;
      }
    }
    throw Error("unreachable transform kind");
  }

  // d apply / d y at y, for likelihood change-of-variables.
  double derivative_one(double y) const {
    switch (kind) {
      case Kind::ZScore:
        return 1.0 / stddev;
      case Kind::Log:
        return 1.0 / (y + shift);
      case Kind::BoxCox:
        if (std::abs(lambda) < 1e-9) return 1.0 / (y + shift);
        return std::pow(y + shift, lambda - 1.0);
    }
    throw Error("unreachable transform kind");
  }

  Eigen::VectorXd apply(const Eigen::VectorXd& y) const {
    Eigen::VectorXd out(y.size());
    for (Eigen::Index i = 0; i < y.size(); ++i) out[i] = apply_one(y[i]);
    return out;
  }
  Eigen::VectorXd inverse(const Eigen::VectorXd& t) const {
    Eigen::VectorXd out(t.size());
    for (Eigen::Index i = 0; i < t.size(); ++i) out[i] = inverse_one(t[i]);
    return out;
  }
};

namespace detail {

inline void require_values(const Eigen::VectorXd& v, const char* what) {
  if (v.size() == 0) throw EmptyDataset(std::string(what) + ": no values");
  if (!v.allFinite())
    throw NonFiniteInput(std::string(what) + ": values contain NaN/inf");
}

inline double positivity_shift(const Eigen::VectorXd& v) {
  const double lo = v.minCoeff(), hi = v.maxCoeff();
  const double eps = 1e-6 * (hi - lo);
  return std::max(0.0, eps - lo);
}

}  // namespace detail

inline ColumnTransform fit_zscore(const Eigen::VectorXd& v) {
  detail::require_values(v, "zscore");
  ColumnTransform t;
  t.kind = ColumnTransform::Kind::ZScore;
  t.mean = v.mean();
  t.stddev = std::sqrt((v.array() - t.mean).square().mean());  // population
  if (!(t.stddev > 0.0))
    throw DegenerateColumn("zscore: column is constant (" +
                           std::to_string(t.mean) + ")");
  return t;
}

inline ColumnTransform fit_log(const Eigen::VectorXd& v) {
  detail::require_values(v, "log transform");
  ColumnTransform t;
  t.kind = ColumnTransform::Kind::Log;
  t.shift = detail::positivity_shift(v);
  if (!(v.minCoeff() + t.shift > 0.0))
    throw NonPositiveAfterShift(
        "log transform: values are not positive even after shift " +
        std::to_string(t.shift));
  return t;
}

// Profile log likelihood of the Box-Cox parameter:
//   l(lambda) = -(n/2) log var(z(lambda)) + (lambda - 1) sum log(y + shift)
// maximized over [-2, 2] by golden-section search to 1e-4.
inline ColumnTransform fit_boxcox(const Eigen::VectorXd& v) {
  detail::require_values(v, "Box-Cox transform");
  ColumnTransform t;
  t.kind = ColumnTransform::Kind::BoxCox;
  t.shift = detail::positivity_shift(v);
  const Eigen::ArrayXd s = v.array() + t.shift;
  if (!(s.minCoeff() > 0.0))
    throw NonPositiveAfterShift(
        "Box-Cox transform: values are not positive even after shift " +
        std::to_string(t.shift));
  const double sum_log = s.log().sum();
  const double n = static_cast<double>(v.size());

  auto profile = [&](double lam) {
    Eigen::ArrayXd z;
    if (std::abs(lam) < 1e-9)
      z = s.log();
    else
      z = (s.pow(lam) - 1.0) / lam;
    const double var = (z - z.mean()).square().mean();
    if (!(var > 0.0)) return -std::numeric_limits<double>::infinity();
    return -0.5 * n * std::log(var) + (lam - 1.0) * sum_log;
  };

  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = -2.0, b = 2.0;
  double c = b - gr * (b - a), d = a + gr * (b - a);
  double fc = profile(c), fd = profile(d);
  while (b - a > 1e-4) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - gr * (b - a);
      fc = profile(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + gr * (b - a);
      fd = profile(d);
    }
  }
  t.lambda = 0.5 * (a + b);
  return t;
}

inline ColumnTransform fit_transform(ColumnTransform::Kind kind,
                                     const Eigen::VectorXd& v) {
  switch (kind) {
    case ColumnTransform::Kind::ZScore: return fit_zscore(v);
    case ColumnTransform::Kind::Log: return fit_log(v);
    case ColumnTransform::Kind::BoxCox: return fit_boxcox(v);
  }
  throw Error("unreachable transform kind");
}

// Target-side chain: optional warp (Log/BoxCox) followed by optional
// standardization, fitted jointly on the training targets. The fingerprint
// of those targets gates later training-stage applications.
struct TargetTransform {
  std::optional<ColumnTransform> warp;
  std::optional<ColumnTransform> zscore;
  std::int64_t fit_rows = 0;
  std::uint64_t fit_hash = 0;

  bool is_identity() const { return !warp && !zscore; }

  double apply_one(double y) const {
    double t = warp ? warp->apply_one(y) : y;
    return zscore ? zscore->apply_one(t) : t;
  }
  double inverse_one(double t) const {
    double y = zscore ? zscore->inverse_one(t) : t;
    return warp ? warp->inverse_one(y) : y;
  }
  Eigen::VectorXd apply(const Eigen::VectorXd& y) const {
    Eigen::VectorXd out(y.size());
    for (Eigen::Index i = 0; i < y.size(); ++i) out[i] = apply_one(y[i]);
    return out;
  }
  Eigen::VectorXd inverse(const Eigen::VectorXd& t) const {
    Eigen::VectorXd out(t.size());
    for (Eigen::Index i = 0; i < t.size(); ++i) out[i] = inverse_one(t[i]);
    return out;
  }

  // log |d apply / d y| for likelihood change-of-variables
  double log_jacobian_one(double y) const {
    double lj = 0.0;
    double t = y;
    if (warp) {
      lj += std::log(warp->derivative_one(y));
      t = warp->apply_one(y);
    }
    if (zscore) lj += std::log(zscore->derivative_one(t));
    return lj;
  }

  // Negative log predictive density of the original-scale value y under a
  // Gaussian in transformed space.
  double nlpd_one(double y, double mean_t, double var_t) const {
    const double t = apply_one(y);
    const double z2 = (t - mean_t) * (t - mean_t) / var_t;
    return 0.5 * std::log(2.0 * M_PI * var_t) + 0.5 * z2 -
           log_jacobian_one(y);
  }

  void assert_fitted_on(const Eigen::VectorXd& y) const {
    if (is_identity()) return;
    if (fit_rows != y.size() || fit_hash != fingerprint(y))
      throw LeakageError(
          "target transform was fitted on different values than the "
          "training targets it is being applied to");
  }
};

inline TargetTransform fit_target_transform(
    const Eigen::VectorXd& y, std::optional<ColumnTransform::Kind> warp_kind,
    bool standardize) {
  TargetTransform t;
  t.fit_rows = y.size();
  t.fit_hash = fingerprint(y);
  Eigen::VectorXd work = y;
  if (warp_kind) {
    if (*warp_kind == ColumnTransform::Kind::ZScore)
      throw ConfigError("zscore is not a warp; use standardize instead");
    t.warp = fit_transform(*warp_kind, y);
    work = t.warp->apply(y);
  }
  if (standardize) t.zscore = fit_zscore(work);
  return t;
}

// Central 95% interval and median of the back-transformed predictive
// distribution, by mapping Gaussian quantiles through the inverse. The
// half-width / 1.96 entries stand in for a standard deviation on the
// original scale (exact for affine chains).
struct PredictiveQuantiles {
  Eigen::VectorXd median;
  Eigen::VectorXd lower95;
  Eigen::VectorXd upper95;
  Eigen::VectorXd std_proxy;
};

inline constexpr double kZ95 = 1.959963984540054;

inline PredictiveQuantiles inverse_predictive(const TargetTransform& t,
                                              const Eigen::VectorXd& mean_t,
                                              const Eigen::VectorXd& var_t) {
  if (mean_t.size() != var_t.size())
    throw LengthMismatch("inverse_predictive: mean/variance size mismatch");
  PredictiveQuantiles q;
  const Eigen::Index n = mean_t.size();
  q.median.resize(n);
  q.lower95.resize(n);
  q.upper95.resize(n);
  q.std_proxy.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double sd = std::sqrt(std::max(var_t[i], 0.0));
    q.median[i] = t.inverse_one(mean_t[i]);
    q.lower95[i] = t.inverse_one(mean_t[i] - kZ95 * sd);
    q.upper95[i] = t.inverse_one(mean_t[i] + kZ95 * sd);
    q.std_proxy[i] = (q.upper95[i] - q.lower95[i]) / (2.0 * kZ95);
  }
  return q;
}

// Per-column standardizer for model inputs.
struct InputStandardizer {
  std::vector<ColumnTransform> cols;

  Eigen::MatrixXd apply(const Eigen::MatrixXd& X) const {
    if (static_cast<std::size_t>(X.cols()) != cols.size())
      throw SchemaMismatch("input standardizer fitted on " +
                           std::to_string(cols.size()) + " columns, got " +
                           std::to_string(X.cols()));
    Eigen::MatrixXd out(X.rows(), X.cols());
    for (Eigen::Index j = 0; j < X.cols(); ++j)
      out.col(j) = (X.col(j).array() - cols[j].mean) / cols[j].stddev;
    return out;
  }
};

inline InputStandardizer fit_input_standardizer(const Eigen::MatrixXd& X) {
  InputStandardizer s;
  for (Eigen::Index j = 0; j < X.cols(); ++j)
    s.cols.push_back(fit_zscore(X.col(j)));
  return s;
}

}  // namespace gpreg
