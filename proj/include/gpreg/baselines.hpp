#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "gpreg/errors.hpp"

namespace gpreg {

// Inverse-distance weighted k-nearest-neighbor regression. Exact matches
// short-circuit: if any neighbor sits at distance zero the prediction is
// the plain average of all zero-distance targets.
inline Eigen::VectorXd knn_predict(const Eigen::MatrixXd& X,
                                   const Eigen::VectorXd& y,
                                   const Eigen::MatrixXd& Xstar, int k = 10) {
  if (X.rows() != y.size())
    throw LengthMismatch("knn: inputs have " + std::to_string(X.rows()) +
                         " rows, targets " + std::to_string(y.size()));
  if (X.rows() == 0) throw EmptyDataset("knn has no training rows");
  if (Xstar.cols() != X.cols())
    throw SchemaMismatch("knn query has " + std::to_string(Xstar.cols()) +
                         " columns, training data has " +
                         std::to_string(X.cols()));
  if (k < 1) throw ConfigError("knn needs k >= 1");
  const Eigen::Index kk = std::min<Eigen::Index>(k, X.rows());

  Eigen::VectorXd out(Xstar.rows());
  std::vector<Eigen::Index> order(X.rows());
  for (Eigen::Index q = 0; q < Xstar.rows(); ++q) {
    const Eigen::VectorXd d2 =
        (X.rowwise() - Xstar.row(q)).rowwise().squaredNorm();
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::partial_sort(order.begin(), order.begin() + kk, order.end(),
                      [&](Eigen::Index a, Eigen::Index b) {
                        return d2[a] != d2[b] ? d2[a] < d2[b] : a < b;
                      });

    double zero_sum = 0.0;
    Eigen::Index zero_count = 0;
    double wsum = 0.0, acc = 0.0;
    for (Eigen::Index i = 0; i < kk; ++i) {
      const Eigen::Index idx = order[i];
      if (d2[idx] == 0.0) {
        zero_sum += y[idx];
        ++zero_count;
      } else {
        const double w = 1.0 / std::sqrt(d2[idx]);
        wsum += w;
        acc += w * y[idx];
      }
    }
    out[q] = zero_count > 0 ? zero_sum / static_cast<double>(zero_count)
                            : acc / wsum;
  }
  return out;
}

struct LinearBaseline {
  Eigen::VectorXd weights;
  double intercept = 0.0;

  Eigen::VectorXd predict(const Eigen::MatrixXd& Xstar) const {
    if (Xstar.cols() != weights.size())
      throw SchemaMismatch("linear baseline query has " +
                           std::to_string(Xstar.cols()) +
                           " columns, model has " +
                           std::to_string(weights.size()));
    return (Xstar * weights).array() + intercept;
  }
};

// Ordinary least squares with an intercept, solved by a column-pivoted QR.
// A rank-deficient design matrix is an error that names the columns whose
// pivots collapsed, since silently dropping them would skew comparisons.
inline LinearBaseline fit_linear_baseline(
    const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
    const std::vector<std::string>& feature_names = {}) {
  if (X.rows() != y.size())
    throw LengthMismatch("linear baseline: inputs have " +
                         std::to_string(X.rows()) + " rows, targets " +
                         std::to_string(y.size()));
  if (X.rows() == 0) throw EmptyDataset("linear baseline has no rows");

  Eigen::MatrixXd A(X.rows(), X.cols() + 1);
  A.leftCols(X.cols()) = X;
  A.col(X.cols()).setOnes();

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  if (qr.rank() < A.cols()) {
    // pivots beyond the numerical rank point at the dependent columns
    std::string cols;
    const auto& perm = qr.colsPermutation().indices();
    for (Eigen::Index i = qr.rank(); i < A.cols(); ++i) {
      const Eigen::Index c = perm[i];
      if (!cols.empty()) cols += ", ";
      if (c == X.cols())
        cols += "(intercept)";
      else if (static_cast<std::size_t>(c) < feature_names.size())
        cols += feature_names[c];
      else
        cols += "column " + std::to_string(c);
    }
    throw RankDeficient("design matrix is rank deficient; dependent: " + cols);
  }

  const Eigen::VectorXd beta = qr.solve(y);
  LinearBaseline out;
  out.weights = beta.head(X.cols());
  out.intercept = beta[X.cols()];
  return out;
}

}  // namespace gpreg
