#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "gpreg/errors.hpp"
#include "gpreg/transform.hpp"

namespace gpreg {

namespace detail {

inline void require_same_size(const Eigen::VectorXd& a,
                              const Eigen::VectorXd& b, const char* what) {
  if (a.size() != b.size())
    throw LengthMismatch(std::string(what) + ": got " +
                         std::to_string(a.size()) + " and " +
                         std::to_string(b.size()) + " values");
  if (a.size() == 0)
    throw EmptyDataset(std::string(what) + ": no values to score");
}

}  // namespace detail

inline double rmse(const Eigen::VectorXd& pred, const Eigen::VectorXd& actual) {
  detail::require_same_size(pred, actual, "rmse");
  return std::sqrt((pred - actual).squaredNorm() /
                   static_cast<double>(pred.size()));
}

inline double mae(const Eigen::VectorXd& pred, const Eigen::VectorXd& actual) {
  detail::require_same_size(pred, actual, "mae");
  return (pred - actual).cwiseAbs().mean();
}

inline double bias(const Eigen::VectorXd& pred, const Eigen::VectorXd& actual) {
  detail::require_same_size(pred, actual, "bias");
  return (pred - actual).mean();
}

// Coefficient of determination against the evaluated set's own mean.
inline double r2(const Eigen::VectorXd& pred, const Eigen::VectorXd& actual) {
  detail::require_same_size(pred, actual, "r2");
  const double ss_res = (pred - actual).squaredNorm();
  const double ss_tot =
      (actual.array() - actual.mean()).square().sum();
  if (ss_tot == 0.0)
    throw DegenerateData("r2 undefined: actual values are constant");
  return 1.0 - ss_res / ss_tot;
}

struct TailRmse {
  double low = 0.0;   // over the smallest ceil(5% n) actual values
  double high = 0.0;  // over the largest ceil(5% n)
  Eigen::Index tail_count = 0;
};

// Accuracy in the distribution tails, where extremes matter most. Rows are
// ranked by actual value with the row index breaking ties, and each tail
// holds exactly ceil(0.05 n) rows.
inline TailRmse tail_rmse(const Eigen::VectorXd& pred,
                          const Eigen::VectorXd& actual) {
  detail::require_same_size(pred, actual, "tail rmse");
  const Eigen::Index n = pred.size();
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return actual[a] != actual[b] ? actual[a] < actual[b] : a < b;
  });
  TailRmse out;
  out.tail_count = (n + 19) / 20;  // ceil(n / 20)
  double lo = 0.0, hi = 0.0;
  for (Eigen::Index i = 0; i < out.tail_count; ++i) {
    const Eigen::Index a = order[i];
    const Eigen::Index b = order[n - 1 - i];
    lo += (pred[a] - actual[a]) * (pred[a] - actual[a]);
    hi += (pred[b] - actual[b]) * (pred[b] - actual[b]);
  }
  out.low = std::sqrt(lo / static_cast<double>(out.tail_count));
  out.high = std::sqrt(hi / static_cast<double>(out.tail_count));
  return out;
}

inline double coverage(const Eigen::VectorXd& actual,
                       const Eigen::VectorXd& lower,
                       const Eigen::VectorXd& upper) {
  detail::require_same_size(actual, lower, "coverage");
  detail::require_same_size(actual, upper, "coverage");
  Eigen::Index hits = 0;
  for (Eigen::Index i = 0; i < actual.size(); ++i)
    hits += actual[i] >= lower[i] && actual[i] <= upper[i];
  return static_cast<double>(hits) / static_cast<double>(actual.size());
}

// Mean negative log predictive density in the original target units. The
// model predicts in transformed space; the change of variables charges the
// transform's log-Jacobian per row.
inline double mean_nlpd(const TargetTransform& t, const Eigen::VectorXd& y,
                        const Eigen::VectorXd& mean_t,
                        const Eigen::VectorXd& var_t) {
  detail::require_same_size(y, mean_t, "nlpd");
  detail::require_same_size(y, var_t, "nlpd");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i)
    acc += t.nlpd_one(y[i], mean_t[i], var_t[i]);
  return acc / static_cast<double>(y.size());
}

// Schwarz criterion: twice the negative log marginal likelihood plus a
// complexity charge of log(n) per fitted hyperparameter. Lower is better.
inline double bic(double lml, Eigen::Index num_params, Eigen::Index n) {
  if (n < 1) throw EmptyDataset("bic needs at least one training row");
  return -2.0 * lml +
         static_cast<double>(num_params) * std::log(static_cast<double>(n));
}

struct ResidualDiagnostics {
  double resid_mean = 0.0;
  double resid_std = 0.0;
  double std_resid_mean = 0.0;  // residual / predictive std, ~N(0,1) when
  double std_resid_std = 0.0;   // the model is calibrated
  std::vector<double> feature_correlation;  // Pearson r per input column
  Eigen::Index n = 0;
};

inline ResidualDiagnostics residual_diagnostics(const Eigen::VectorXd& pred,
                                                const Eigen::VectorXd& actual,
                                                const Eigen::VectorXd& pred_std,
                                                const Eigen::MatrixXd& X) {
  detail::require_same_size(pred, actual, "residual diagnostics");
  detail::require_same_size(pred, pred_std, "residual diagnostics");
  if (X.rows() != pred.size())
    throw LengthMismatch("residual diagnostics: inputs have " +
                         std::to_string(X.rows()) + " rows, predictions " +
                         std::to_string(pred.size()));

  ResidualDiagnostics out;
  out.n = pred.size();
  const Eigen::VectorXd r = actual - pred;
  out.resid_mean = r.mean();
  out.resid_std =
      std::sqrt((r.array() - out.resid_mean).square().sum() / out.n);

  Eigen::VectorXd z(out.n);
  for (Eigen::Index i = 0; i < out.n; ++i) {
    if (!(pred_std[i] > 0.0))
      throw DegenerateData("predictive standard deviation must be positive");
    z[i] = r[i] / pred_std[i];
  }
  out.std_resid_mean = z.mean();
  out.std_resid_std =
      std::sqrt((z.array() - out.std_resid_mean).square().sum() / out.n);

  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    const Eigen::ArrayXd f = X.col(j).array() - X.col(j).mean();
    const Eigen::ArrayXd rc = r.array() - out.resid_mean;
    const double denom = std::sqrt(f.square().sum() * rc.square().sum());
    out.feature_correlation.push_back(denom > 0.0 ? (f * rc).sum() / denom
                                                  : 0.0);
  }
  return out;
}

struct ModelRank {
  std::string name;
  double value = 0.0;
  int rank = 0;  // 1 is best; ties share the smallest applicable rank
};

inline std::vector<ModelRank> compare_models(
    const std::vector<std::string>& names, const std::vector<double>& values,
    bool lower_is_better = true) {
  if (names.size() != values.size())
    throw LengthMismatch("model comparison: " + std::to_string(names.size()) +
                         " names vs " + std::to_string(values.size()) +
                         " values");
  std::vector<ModelRank> out(names.size());
  for (std::size_t i = 0; i < names.size(); ++i)
    out[i] = {names[i], values[i], 1};
  for (std::size_t i = 0; i < out.size(); ++i)
    for (std::size_t j = 0; j < out.size(); ++j) {
      const bool better = lower_is_better ? out[j].value < out[i].value
                                          : out[j].value > out[i].value;
      out[i].rank += better;
    }
  return out;
}

}  // namespace gpreg
