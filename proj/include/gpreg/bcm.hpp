#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "gpreg/cluster.hpp"
#include "gpreg/errors.hpp"
#include "gpreg/gp.hpp"
#include "gpreg/train.hpp"

namespace gpreg {

enum class ExpertMode {
  Independent,   // every expert trains its own hyperparameters
  SharedHypers,  // train once on a subsample, share across experts
};

enum class Aggregation { BCM, RobustBCM };

struct ExpertEnsemble {
  std::vector<GPModel> models;
  std::vector<PosteriorCache> caches;
  std::vector<std::vector<Eigen::Index>> rows;  // training rows per expert
  std::size_t failed_chunks = 0;  // experts dropped after training blew up
};

namespace detail {

inline std::vector<std::vector<Eigen::Index>> rows_by_chunk(
    const Chunking& ch) {
  std::vector<std::vector<Eigen::Index>> rows(ch.M);
  for (Eigen::Index i = 0; i < ch.assignment.size(); ++i)
    rows[ch.assignment[i]].push_back(i);
  return rows;
}

inline Eigen::VectorXi stride_subsample(Eigen::Index n, Eigen::Index cap) {
  const Eigen::Index take = std::min(n, cap);
  Eigen::VectorXi idx(take);
  for (Eigen::Index i = 0; i < take; ++i)
    idx[i] = static_cast<int>(i * n / take);
  return idx;
}

}  // namespace detail

// Trains one GP per chunk. Independent mode optimizes every expert from its
// own data-driven initialization; SharedHypers optimizes once on a strided
// subsample of the whole set and reuses those hyperparameters everywhere.
// Experts whose training fails numerically are dropped (and counted); if
// none survive the whole ensemble is unusable.
inline ExpertEnsemble fit_experts(
    const GPModel& proto, const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
    const Chunking& ch, ExpertMode mode, const TrainConfig& cfg,
    Eigen::Index shared_subsample_cap = 2000,
    const std::map<std::string, double>& init_overrides = {}) {
  if (ch.assignment.size() != X.rows())
    throw LengthMismatch("chunk assignment covers " +
                         std::to_string(ch.assignment.size()) + " rows, data has " +
                         std::to_string(X.rows()));
  ExpertEnsemble ens;
  const auto chunk_rows = detail::rows_by_chunk(ch);

  GPModel shared = proto;
  if (mode == ExpertMode::SharedHypers) {
    const auto idx = detail::stride_subsample(X.rows(), shared_subsample_cap);
    Eigen::MatrixXd Xs(idx.size(), X.cols());
    Eigen::VectorXd ys(idx.size());
    for (Eigen::Index i = 0; i < idx.size(); ++i) {
      Xs.row(i) = X.row(idx[i]);
      ys[i] = y[idx[i]];
    }
    initialize_hyperparams(shared, Xs, ys, init_overrides);
    shared = optimize(shared, Xs, ys, cfg).model;
  }

  for (const auto& rows : chunk_rows) {
    Eigen::MatrixXd Xc(rows.size(), X.cols());
    Eigen::VectorXd yc(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      Xc.row(i) = X.row(rows[i]);
      yc[i] = y[rows[i]];
    }
    try {
      GPModel m = shared;
      if (mode == ExpertMode::Independent) {
        m = proto;
        initialize_hyperparams(m, Xc, yc, init_overrides);
        m = optimize(m, Xc, yc, cfg).model;
      }
      ens.caches.push_back(fit_cache(m, Xc, yc));
      ens.models.push_back(std::move(m));
      ens.rows.push_back(rows);
    } catch (const NumericError&) {
      ++ens.failed_chunks;
    } catch (const DataError&) {
      ++ens.failed_chunks;  // e.g. a chunk with a constant column
    }
  }
  if (ens.models.empty())
    throw AllChunksFailed("no expert survived training (" +
                          std::to_string(ens.failed_chunks) + " chunks failed)");
  return ens;
}

struct CombinedPoint {
  double mean = 0.0;
  double variance = 0.0;
  bool prior_fallback = false;
};

// Product-of-experts aggregation in precision space for one test point.
// Expert k contributes weight beta_k times its posterior precision; the
// prior is subtracted with the same weight so that an expert who has
// learned nothing (posterior = prior) cancels out instead of sharpening
// the ensemble. Plain BCM fixes beta = 1; the robust variant weighs
// experts by their entropy reduction
// max(0, (log prior_var - log posterior_var) / 2). Means aggregate on
// residuals from each expert's prior mean, so a nonzero mean function is
// honored. If the aggregate precision is not positive and finite the point
// falls back to the (averaged) prior.
inline CombinedPoint combine_experts(const std::vector<double>& means,
                                     const std::vector<double>& variances,
                                     const std::vector<double>& prior_means,
                                     const std::vector<double>& prior_vars,
                                     Aggregation agg) {
  const std::size_t M = means.size();
  if (M == 0 || variances.size() != M || prior_means.size() != M ||
      prior_vars.size() != M)
    throw LengthMismatch("expert aggregation arrays disagree in length");

  double pbar_inv = 0.0;
  double mbar = 0.0;
  for (std::size_t k = 0; k < M; ++k) {
    pbar_inv += 1.0 / prior_vars[k];
    mbar += prior_means[k];
  }
  pbar_inv /= static_cast<double>(M);
  mbar /= static_cast<double>(M);

  double precision = pbar_inv;
  double weighted_resid = 0.0;
  for (std::size_t k = 0; k < M; ++k) {
    const double pv = prior_vars[k];
    const double sv = std::max(variances[k], 1e-300);
    double beta = 1.0;
    if (agg == Aggregation::RobustBCM)
      beta = std::max(0.0, 0.5 * (std::log(pv) - std::log(sv)));
    precision += beta * (1.0 / sv - 1.0 / pv);
    weighted_resid += beta / sv * (means[k] - prior_means[k]);
  }

  CombinedPoint out;
  if (!(precision > 0.0) || !std::isfinite(precision)) {
    out.prior_fallback = true;
    out.variance = 1.0 / pbar_inv;
    out.mean = mbar;
  } else {
    out.variance = 1.0 / precision;
    out.mean = mbar + weighted_resid / precision;
  }
  return out;
}

// Runs every expert over the test inputs and combines them pointwise.
// Observation variance adds the experts' average noise level on top of the
// aggregated latent variance.
inline PredictiveDistribution aggregate_predict(const ExpertEnsemble& ens,
                                                const Eigen::MatrixXd& Xstar,
                                                Aggregation agg) {
  const std::size_t M = ens.models.size();
  if (M == 0) throw AllChunksFailed("empty expert ensemble");
  const Eigen::Index n = Xstar.rows();

  std::vector<PredictiveDistribution> preds(M);
  std::vector<Eigen::VectorXd> prior_var(M), prior_mean(M);
  double noise_sum = 0.0;
  for (std::size_t k = 0; k < M; ++k) {
    preds[k] = predict(ens.models[k], ens.caches[k], Xstar);
    prior_var[k] = eval_kernel_diag(ens.models[k].kernel, Xstar);
    prior_mean[k] = ens.models[k].mean.evaluate(Xstar);
    noise_sum += ens.models[k].noise.value();
  }
  const double mean_noise = noise_sum / static_cast<double>(M);

  PredictiveDistribution out;
  out.mean.resize(n);
  out.latent_variance.resize(n);
  out.observation_variance.resize(n);

  std::vector<double> means(M), vars(M), pmeans(M), pvars(M);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < M; ++k) {
      means[k] = preds[k].mean[i];
      vars[k] = preds[k].latent_variance[i];
      pmeans[k] = prior_mean[k][i];
      pvars[k] = prior_var[k][i];
    }
    const CombinedPoint c = combine_experts(means, vars, pmeans, pvars, agg);
    if (c.prior_fallback) ++out.prior_fallbacks;
    out.mean[i] = c.mean;
    out.latent_variance[i] = c.variance;
    out.observation_variance[i] = c.variance + mean_noise;
  }
  return out;
}

}  // namespace gpreg
