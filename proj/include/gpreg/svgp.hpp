#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "gpreg/cluster.hpp"
#include "gpreg/errors.hpp"
#include "gpreg/gp.hpp"
#include "gpreg/train.hpp"

namespace gpreg {

// Sparse regression with inducing inputs, using the collapsed variational
// bound: the optimal variational distribution over inducing values is
// plugged in analytically, leaving a deterministic objective
//   F = log N(y | 0, Qnn + noise I) - trace(Knn - Qnn) / (2 noise),
// Qnn = Knm Kmm^{-1} Kmn. F never exceeds the exact log marginal
// likelihood and touches it when the inducing set spans the training set.

namespace detail {

constexpr double kInducingJitter = 1e-10;  // relative to mean diag of Kmm

struct SvgpParts {
  Eigen::MatrixXd Lm;      // chol(Kmm + jitter)
  Eigen::MatrixXd A;       // Lm^{-1} Kmn
  Eigen::LLT<Eigen::MatrixXd> D;  // chol(noise I + A A^T)
  Eigen::VectorXd ar;      // A r
  Eigen::VectorXd beta_d;  // D^{-1} A r
  double rr = 0.0;         // r^T r
  double tr_knn = 0.0;
  double value = 0.0;
};

inline SvgpParts svgp_parts(const GPModel& model, const Eigen::MatrixXd& Z,
                            const Eigen::MatrixXd& X,
                            const Eigen::VectorXd& r) {
  const Eigen::Index n = X.rows();
  const Eigen::Index m = Z.rows();
  const double s2 = model.noise.value();

  SvgpParts p;
  Eigen::MatrixXd Kmm = eval_kernel(model.kernel, Z);
  const double scale = Kmm.diagonal().mean();
  Kmm.diagonal().array() += kInducingJitter * scale;
  Eigen::LLT<Eigen::MatrixXd> llt(Kmm);
  if (llt.info() != Eigen::Success) {
    Kmm.diagonal().array() += 1e-4 * scale;  // one escalation, then give up
    llt.compute(Kmm);
    if (llt.info() != Eigen::Success)
      throw NotPositiveDefinite(
          "inducing-point covariance is not positive definite");
  }
  p.Lm = llt.matrixL();

  const Eigen::MatrixXd Kmn = eval_kernel(model.kernel, Z, X);
  p.A = p.Lm.triangularView<Eigen::Lower>().solve(Kmn);

  Eigen::MatrixXd Dm = p.A * p.A.transpose();
  Dm.diagonal().array() += s2;
  p.D.compute(Dm);
  if (p.D.info() != Eigen::Success)
    throw NotPositiveDefinite("collapsed-bound inner system failed");

  p.ar = p.A * r;
  p.beta_d = p.D.solve(p.ar);
  p.rr = r.squaredNorm();
  p.tr_knn = eval_kernel_diag(model.kernel, X).sum();

  const double logdet_d =
      2.0 * Eigen::MatrixXd(p.D.matrixL()).diagonal().array().log().sum();
  const double quad = (p.rr - p.ar.dot(p.beta_d)) / s2;
  p.value = -0.5 * (quad + logdet_d +
                    static_cast<double>(n - m) * std::log(s2) +
                    static_cast<double>(n) * std::log(2.0 * M_PI)) -
            (p.tr_knn - p.A.squaredNorm()) / (2.0 * s2);
  return p;
}

}  // namespace detail

inline double svgp_bound(const GPModel& model, const Eigen::MatrixXd& Z,
                         const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  require_zero_mean(model, "sparse inducing-point mode");
  validate_training_data(model, X, y, false);
  return detail::svgp_parts(model, Z, X, y).value;
}

struct SvgpEval {
  double value = 0.0;
  Eigen::VectorXd grad_params;  // aligned with model.pack()
  Eigen::MatrixXd grad_Z;       // same shape as Z
};

// Bound plus exact gradients with respect to the packed (log-space) kernel
// and noise parameters and the inducing locations. The dependency flows
// through Kmm, Kmn and diag(Knn) only, so each receives a weight matrix and
// the kernel module contracts them against its own derivatives.
inline SvgpEval svgp_bound_gradient(const GPModel& model,
                                    const Eigen::MatrixXd& Z,
                                    const Eigen::MatrixXd& X,
                                    const Eigen::VectorXd& y) {
  require_zero_mean(model, "sparse inducing-point mode");
  validate_training_data(model, X, y, false);
  const detail::SvgpParts p = detail::svgp_parts(model, Z, X, y);
  const Eigen::Index n = X.rows();
  const double s2 = model.noise.value();

  // beta = (Qnn + noise I)^{-1} r via the Woodbury identity
  const Eigen::VectorXd beta = (y - p.A.transpose() * p.beta_d) / s2;
  const Eigen::MatrixXd C =
      p.Lm.transpose().triangularView<Eigen::Upper>().solve(p.A);
  const Eigen::MatrixXd CAt = C * p.A.transpose();      // m x m
  const Eigen::MatrixXd E = p.D.solve(p.A);             // m x n
  const Eigen::VectorXd Cbeta = (C * y - CAt * p.beta_d) / s2;

  const Eigen::MatrixXd Wmn =
      Cbeta * beta.transpose() + (CAt * E) / s2;
  const Eigen::MatrixXd Wmm = -0.5 * Cbeta * Cbeta.transpose() -
                              (CAt * p.D.solve(CAt.transpose())) / (2.0 * s2);
  const Eigen::VectorXd wnn =
      Eigen::VectorXd::Constant(n, -1.0 / (2.0 * s2));

  SvgpEval out;
  out.value = p.value;
  const Eigen::Index kp = model.kernel.param_count();
  out.grad_params.resize(model.param_count());
  out.grad_params.head(kp) = weighted_param_grads(model.kernel, Z, X, Wmn) +
                             weighted_param_grads(model.kernel, Z, Z, Wmm) +
                             weighted_diag_grads(model.kernel, X, wnn);

  if (model.noise_learnable) {
    const double tr_dinv_aat =
        (p.A.array() * E.array()).sum();  // trace(D^{-1} A A^T)
    const double d_ds2 =
        0.5 * beta.squaredNorm() -
        (static_cast<double>(n) - tr_dinv_aat) / (2.0 * s2) +
        (p.tr_knn - p.A.squaredNorm()) / (2.0 * s2 * s2);
    out.grad_params[out.grad_params.size() - 1] = d_ds2 * s2;  // log-space
  }

  out.grad_Z = weighted_input_grads(model.kernel, Z, X, Wmn) +
               2.0 * weighted_input_grads(model.kernel, Z, Z, Wmm);
  return out;
}

struct SvgpResult {
  GPModel model;
  Eigen::MatrixXd Z;
  double bound = -std::numeric_limits<double>::infinity();
  bool converged = false;
  std::vector<double> trace;
};

// Maximizes the collapsed bound plus hyperparameter priors over kernel and
// noise parameters and the inducing locations together. Inducing inputs
// start at k-means centers of the training inputs.
inline SvgpResult svgp_fit(const GPModel& model0, const Eigen::MatrixXd& X,
                           const Eigen::VectorXd& y, int num_inducing,
                           const TrainConfig& cfg) {
  require_zero_mean(model0, "sparse inducing-point mode");
  if (num_inducing < 1)
    throw ConfigError("need at least one inducing point");
  GPModel model = model0;
  validate_training_data(model, X, y, false);

  const int m0 = static_cast<int>(
      std::min<Eigen::Index>(num_inducing, X.rows()));
  const Eigen::MatrixXd Z0 = chunk_kmeans(X, m0, cfg.seed).centroids;
  const Eigen::Index m = Z0.rows();
  const Eigen::Index d = Z0.cols();
  const Eigen::Index np = model.param_count();

  Eigen::VectorXd theta(np + m * d);
  theta.head(np) = model.pack();
  theta.tail(m * d) =
      Eigen::Map<const Eigen::VectorXd>(Z0.data(), m * d);

  auto unpack_z = [m, d](const Eigen::VectorXd& th, Eigen::Index off) {
    return Eigen::MatrixXd(
        Eigen::Map<const Eigen::MatrixXd>(th.data() + off, m, d));
  };

  auto eval = [&](const Eigen::VectorXd& th, Eigen::VectorXd& grad) {
    model.unpack(th.head(np));
    const Eigen::MatrixXd Z = unpack_z(th, np);
    const SvgpEval ev = svgp_bound_gradient(model, Z, X, y);
    grad.resize(th.size());
    grad.head(np) = ev.grad_params + model.log_prior_gradient();
    grad.tail(m * d) =
        Eigen::Map<const Eigen::VectorXd>(ev.grad_Z.data(), m * d);
    return ev.value + model.log_prior();
  };
  auto project = [&](Eigen::VectorXd& th) {
    model.unpack(th.head(np));
    th.head(np) = model.pack();
  };

  const AdamOutcome run = adam_maximize(eval, project, theta, cfg);
  if (!std::isfinite(run.best_objective))
    throw NonFiniteObjective("sparse bound never evaluated to a finite value");

  SvgpResult out;
  model.unpack(run.best_u.head(np));
  out.model = model;
  out.Z = unpack_z(run.best_u, np);
  out.bound = svgp_bound(out.model, out.Z, X, y);
  out.converged = run.converged;
  out.trace = run.trace;
  return out;
}

struct SvgpCache {
  Eigen::MatrixXd Z;
  Eigen::MatrixXd Lm;  // chol(Kmm + jitter)
  Eigen::MatrixXd LB;  // chol(I + A A^T / noise)
  Eigen::VectorXd c;   // LB^{-1} A r / noise
  double noise = 0.0;
};

inline SvgpCache svgp_cache(const GPModel& model, const Eigen::MatrixXd& Z,
                            const Eigen::MatrixXd& X,
                            const Eigen::VectorXd& y) {
  require_zero_mean(model, "sparse inducing-point mode");
  validate_training_data(model, X, y, false);
  const detail::SvgpParts p = detail::svgp_parts(model, Z, X, y);
  const double s2 = model.noise.value();

  SvgpCache cache;
  cache.Z = Z;
  cache.Lm = p.Lm;
  Eigen::MatrixXd B = (p.A * p.A.transpose()) / s2;
  B.diagonal().array() += 1.0;
  Eigen::LLT<Eigen::MatrixXd> llt(B);
  if (llt.info() != Eigen::Success)
    throw NotPositiveDefinite("sparse predictive system failed");
  cache.LB = llt.matrixL();
  cache.c = cache.LB.triangularView<Eigen::Lower>().solve(p.ar) / s2;
  cache.noise = s2;
  return cache;
}

inline PredictiveDistribution svgp_predict(const GPModel& model,
                                           const SvgpCache& cache,
                                           const Eigen::MatrixXd& Xstar) {
  if (Xstar.cols() != cache.Z.cols())
    throw SchemaMismatch("prediction inputs have " +
                         std::to_string(Xstar.cols()) + " columns, expected " +
                         std::to_string(cache.Z.cols()));
  if (!Xstar.allFinite())
    throw NonFiniteInput("prediction inputs contain NaN or infinity");

  const Eigen::MatrixXd Kms = eval_kernel(model.kernel, cache.Z, Xstar);
  const Eigen::MatrixXd tmp1 =
      cache.Lm.triangularView<Eigen::Lower>().solve(Kms);
  const Eigen::MatrixXd tmp2 =
      cache.LB.triangularView<Eigen::Lower>().solve(tmp1);

  PredictiveDistribution out;
  out.mean = tmp2.transpose() * cache.c;
  out.latent_variance = eval_kernel_diag(model.kernel, Xstar) -
                        tmp1.colwise().squaredNorm().transpose() +
                        tmp2.colwise().squaredNorm().transpose();
  for (Eigen::Index i = 0; i < out.latent_variance.size(); ++i) {
    if (out.latent_variance[i] < 0.0) {
      out.latent_variance[i] = 0.0;
      ++out.clamped;
    }
  }
  out.observation_variance =
      out.latent_variance.array() + cache.noise;
  return out;
}

}  // namespace gpreg
