#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "gpreg/errors.hpp"
#include "gpreg/kernel.hpp"
#include "gpreg/mean.hpp"

namespace gpreg {

// Exact GP: mean + kernel tree + observation noise variance. Parameter
// vector layout is [kernel u's, mean params, noise u] with u = log value.
struct GPModel {
  MeanSpec mean;
  KernelExpr kernel;
  HyperParam noise{"noise.variance", 0.1};
  bool noise_learnable = true;
  std::vector<double> jitter_levels{0.0, 1e-8, 1e-6, 1e-4};
  Eigen::Index exact_cap = 10000;

  Eigen::Index param_count() const {
    return kernel.param_count() + mean.param_count() +
           (noise_learnable ? 1 : 0);
  }

  Eigen::VectorXd pack() const {
    Eigen::VectorXd u(param_count());
    u.head(kernel.param_count()) = kernel.pack();
    u.segment(kernel.param_count(), mean.param_count()) = mean.pack();
    if (noise_learnable) u[u.size() - 1] = noise.log_value();
    return u;
  }

  void unpack(const Eigen::VectorXd& u) {
    if (u.size() != param_count())
      throw Error("model unpack: expected " + std::to_string(param_count()) +
                  " values, got " + std::to_string(u.size()));
    kernel.unpack(u.head(kernel.param_count()));
    mean.unpack(u.segment(kernel.param_count(), mean.param_count()));
    if (noise_learnable) noise.set_log_value(u[u.size() - 1]);
  }

  std::vector<std::string> param_names() const {
    std::vector<std::string> names = kernel.param_names();
    for (auto& m : mean.param_names()) names.push_back(m);
    if (noise_learnable) names.push_back("noise.variance");
    return names;
  }

  double log_prior() const {
    double lp = kernel.log_prior();
    if (noise_learnable) lp += noise.log_prior_density();
    return lp;
  }

  Eigen::VectorXd log_prior_gradient() const {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(param_count());
    g.head(kernel.param_count()) = kernel.log_prior_gradient();
    if (noise_learnable) g[g.size() - 1] = noise.log_prior_gradient();
    return g;
  }
};

struct PosteriorCache {
  Eigen::MatrixXd X;      // training inputs
  Eigen::VectorXd y;      // training targets
  Eigen::VectorXd resid;  // y - mean(X)
  Eigen::MatrixXd L;      // lower Cholesky of K + noise I (+ jitter)
  Eigen::VectorXd alpha;  // (K + noise I)^{-1} resid
  double jitter = 0.0;    // absolute diagonal addition that made LLT succeed

  Eigen::Index size() const { return y.size(); }
};

struct PredictiveDistribution {
  Eigen::VectorXd mean;
  Eigen::VectorXd latent_variance;       // f* variance
  Eigen::VectorXd observation_variance;  // latent + noise
  std::size_t clamped = 0;               // negative latent variances zeroed
  std::size_t prior_fallbacks = 0;       // aggregation fallbacks (ensembles)
};

struct JitterChol {
  Eigen::MatrixXd L;
  double jitter = 0.0;
};

// Tries LLT with escalating absolute jitter level*scale added to the
// diagonal. The factor lives in the lower triangle of L.
inline JitterChol cholesky_with_jitter(const Eigen::MatrixXd& A, double scale,
                                       const std::vector<double>& levels = {
                                           0.0, 1e-8, 1e-6, 1e-4}) {
  for (double level : levels) {
    Eigen::MatrixXd buf = A;
    if (level > 0.0) buf.diagonal().array() += level * scale;
    Eigen::LLT<Eigen::Ref<Eigen::MatrixXd>> llt(buf);
    if (llt.info() == Eigen::Success) return {std::move(buf), level * scale};
  }
  throw NotPositiveDefinite(
      "Cholesky failed at all jitter levels (diagonal scale " +
      std::to_string(scale) + ")");
}

inline void validate_training_data(const GPModel& model,
                                   const Eigen::MatrixXd& X,
                                   const Eigen::VectorXd& y,
                                   bool enforce_cap = true) {
  if (X.rows() != y.size())
    throw LengthMismatch("inputs have " + std::to_string(X.rows()) +
                         " rows but targets have " + std::to_string(y.size()));
  if (X.rows() == 0) throw EmptyDataset("no training rows");
  if (!X.allFinite() || !y.allFinite())
    throw NonFiniteInput("training data contains NaN or infinity");
  if (enforce_cap && X.rows() > model.exact_cap)
    throw SizeCapExceeded("exact GP limited to " +
                          std::to_string(model.exact_cap) + " rows, got " +
                          std::to_string(X.rows()) +
                          " (use experts or sparse mode)");
}

inline void require_zero_mean(const GPModel& model, const char* what) {
  if (model.mean.kind != MeanSpec::Kind::Zero || model.mean.param_count() > 0)
    throw ConfigError(std::string(what) +
                      " supports only a zero mean function");
}

inline PosteriorCache fit_cache(const GPModel& model, const Eigen::MatrixXd& X,
                                const Eigen::VectorXd& y) {
  validate_training_data(model, X, y);
  Eigen::MatrixXd K = eval_kernel(model.kernel, X);
  const double scale = K.diagonal().mean();
  K.diagonal().array() += model.noise.value();
  JitterChol chol = cholesky_with_jitter(K, scale, model.jitter_levels);

  PosteriorCache cache;
  cache.X = X;
  cache.y = y;
  cache.resid = y - model.mean.evaluate(X);
  cache.alpha = chol.L.triangularView<Eigen::Lower>().solve(cache.resid);
  chol.L.triangularView<Eigen::Lower>().transpose().solveInPlace(cache.alpha);
  cache.L = std::move(chol.L);
  cache.jitter = chol.jitter;
  return cache;
}

// -1/2 r'(K+s2I)^{-1}r - 1/2 log|K+s2I| - n/2 log(2 pi), reusing the cached
// factor. y may differ from the cached targets (same inputs assumed).
inline double log_marginal_likelihood(const GPModel& model,
                                      const PosteriorCache& cache,
                                      const Eigen::VectorXd& y) {
  if (y.size() != cache.size())
    throw LengthMismatch("targets do not match cached training size");
  Eigen::VectorXd resid = y - model.mean.evaluate(cache.X);
  Eigen::VectorXd v = cache.L.triangularView<Eigen::Lower>().solve(resid);
  const double n = static_cast<double>(y.size());
  return -0.5 * v.squaredNorm() -
         cache.L.diagonal().array().log().sum() -
         0.5 * n * std::log(2.0 * M_PI);
}

inline double log_marginal_likelihood(const GPModel& model,
                                      const Eigen::MatrixXd& X,
                                      const Eigen::VectorXd& y) {
  return log_marginal_likelihood(model, fit_cache(model, X, y), y);
}

struct LmlEval {
  double value = 0.0;
  Eigen::VectorXd gradient;
  double jitter = 0.0;
};

// LML and d LML / d u in one factorization, via the trace identity with
// W = (alpha alpha' - K^{-1})/2 contracted against kernel gradients.
inline LmlEval lml_value_and_gradient(const GPModel& model,
                                      const Eigen::MatrixXd& X,
                                      const Eigen::VectorXd& y) {
  validate_training_data(model, X, y);
  const Eigen::Index n = X.rows();
  Eigen::MatrixXd K = eval_kernel(model.kernel, X);
  const double scale = K.diagonal().mean();
  K.diagonal().array() += model.noise.value();
  JitterChol chol = cholesky_with_jitter(K, scale, model.jitter_levels);
  K.resize(0, 0);

  const Eigen::VectorXd resid = y - model.mean.evaluate(X);
  Eigen::VectorXd alpha = chol.L.triangularView<Eigen::Lower>().solve(resid);

  LmlEval out;
  out.jitter = chol.jitter;
  out.value = -0.5 * alpha.squaredNorm() -
              chol.L.diagonal().array().log().sum() -
              0.5 * static_cast<double>(n) * std::log(2.0 * M_PI);

  chol.L.triangularView<Eigen::Lower>().transpose().solveInPlace(alpha);
  Eigen::MatrixXd W = Eigen::MatrixXd::Identity(n, n);
  chol.L.triangularView<Eigen::Lower>().solveInPlace(W);
  chol.L.triangularView<Eigen::Lower>().transpose().solveInPlace(W);
  W = 0.5 * (alpha * alpha.transpose() - W);

  Eigen::VectorXd g(model.param_count());
  g.head(model.kernel.param_count()) =
      weighted_param_grads(model.kernel, X, X, W);
  if (model.mean.param_count() > 0)
    g.segment(model.kernel.param_count(), model.mean.param_count()) =
        model.mean.param_gradients(X).transpose() * alpha;
  if (model.noise_learnable)
    g[g.size() - 1] = model.noise.value() * W.trace();
  out.gradient = std::move(g);
  return out;
}

inline Eigen::VectorXd lml_gradient(const GPModel& model,
                                    const Eigen::MatrixXd& X,
                                    const Eigen::VectorXd& y) {
  return lml_value_and_gradient(model, X, y).gradient;
}

inline PredictiveDistribution predict(const GPModel& model,
                                      const PosteriorCache& cache,
                                      const Eigen::MatrixXd& Xstar) {
  if (Xstar.cols() != cache.X.cols())
    throw SchemaMismatch("prediction inputs have " +
                         std::to_string(Xstar.cols()) + " columns, expected " +
                         std::to_string(cache.X.cols()));
  if (!Xstar.allFinite())
    throw NonFiniteInput("prediction inputs contain NaN or infinity");

  const Eigen::Index m = Xstar.rows();
  PredictiveDistribution out;
  out.mean.resize(m);
  out.latent_variance.resize(m);
  const Eigen::VectorXd prior_mean = model.mean.evaluate(Xstar);
  const Eigen::VectorXd kss = eval_kernel_diag(model.kernel, Xstar);

  constexpr Eigen::Index kBlock = 2048;
  for (Eigen::Index start = 0; start < m; start += kBlock) {
    const Eigen::Index len = std::min(kBlock, m - start);
    const Eigen::MatrixXd Ks =
        eval_kernel(model.kernel, cache.X, Xstar.middleRows(start, len));
    out.mean.segment(start, len) =
        Ks.transpose() * cache.alpha + prior_mean.segment(start, len);
    const Eigen::MatrixXd V = cache.L.triangularView<Eigen::Lower>().solve(Ks);
    out.latent_variance.segment(start, len) =
        kss.segment(start, len) - V.colwise().squaredNorm().transpose();
  }
  for (Eigen::Index i = 0; i < m; ++i) {
    if (out.latent_variance[i] < 0.0) {
      out.latent_variance[i] = 0.0;
      ++out.clamped;
    }
  }
  out.observation_variance =
      out.latent_variance.array() + model.noise.value();
  return out;
}

// Draws from the prior (cache == nullptr) or posterior at the given inputs;
// each column of the result is one draw.
inline Eigen::MatrixXd sample(const GPModel& model, const Eigen::MatrixXd& X,
                              int count, std::uint64_t seed,
                              const PosteriorCache* cache = nullptr) {
  if (count <= 0) throw Error("sample: count must be positive");
  const Eigen::Index n = X.rows();
  Eigen::VectorXd mu;
  Eigen::MatrixXd C;
  if (!cache) {
    mu = model.mean.evaluate(X);
    C = eval_kernel(model.kernel, X);
  } else {
    const Eigen::MatrixXd Ks = eval_kernel(model.kernel, cache->X, X);
    mu = Ks.transpose() * cache->alpha + model.mean.evaluate(X);
    const Eigen::MatrixXd V = cache->L.triangularView<Eigen::Lower>().solve(Ks);
    C = eval_kernel(model.kernel, X) - V.transpose() * V;
  }
  // degenerate posteriors need an absolute floor for the jitter scale
  const double scale = std::max(C.diagonal().mean(), 1e-10);
  JitterChol chol = cholesky_with_jitter(C, scale, model.jitter_levels);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd Z(n, count);
  for (int c = 0; c < count; ++c)
    for (Eigen::Index i = 0; i < n; ++i) Z(i, c) = gauss(rng);
  Eigen::MatrixXd draws = chol.L.triangularView<Eigen::Lower>() * Z;
  draws.colwise() += mu;
  return draws;
}

// One latent prior draw plus observation noise. The latent draw consumes the
// generator first, so the same seed yields the same latent field regardless
// of the noise setting (noise 0 returns the latent values themselves).
inline Eigen::VectorXd generate_synthetic(const GPModel& model,
                                          const Eigen::MatrixXd& X,
                                          std::uint64_t seed) {
  const Eigen::Index n = X.rows();
  Eigen::MatrixXd C = eval_kernel(model.kernel, X);
  const double scale = std::max(C.diagonal().mean(), 1e-10);
  JitterChol chol = cholesky_with_jitter(C, scale, model.jitter_levels);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i) z[i] = gauss(rng);
  Eigen::VectorXd f =
      model.mean.evaluate(X) + chol.L.triangularView<Eigen::Lower>() * z;
  const double sd = std::sqrt(model.noise.value());
  for (Eigen::Index i = 0; i < n; ++i) f[i] += sd * gauss(rng);
  return f;
}

}  // namespace gpreg
