#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "gpreg/errors.hpp"
#include "gpreg/gp.hpp"

namespace gpreg {

struct TrainConfig {
  double learning_rate = 0.01;
  int epochs = 150;
  int restarts = 3;
  std::uint64_t seed = 0;
  double grad_tol = 1e-6;  // early stop on inf-norm of the gradient
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  // called as progress(restart, epoch, objective) when set
  std::function<void(int, int, double)> progress;
};

struct AdamOutcome {
  Eigen::VectorXd best_u;
  double best_objective = -std::numeric_limits<double>::infinity();
  std::vector<double> trace;  // objective at init and after each step
  bool converged = false;
  bool failed = false;  // non-finite objective/gradient before any progress
  int epochs_run = 0;
};

// Full-batch Adam ascent on eval (returns objective, fills gradient).
// project() re-applies box constraints after every step. A non-finite
// objective mid-run stops the run but keeps the best iterate seen.
inline AdamOutcome adam_maximize(
    const std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>& eval,
    const std::function<void(Eigen::VectorXd&)>& project, Eigen::VectorXd u,
    const TrainConfig& cfg, int restart_index = 0) {
  AdamOutcome out;
  project(u);
  Eigen::VectorXd g(u.size());

  auto safe_eval = [&](const Eigen::VectorXd& at, Eigen::VectorXd& grad) {
    double f;
    try {
      f = eval(at, grad);
    } catch (const NumericError&) {
      return -std::numeric_limits<double>::infinity();
    }
    if (!std::isfinite(f) || !grad.allFinite())
      return -std::numeric_limits<double>::infinity();
    return f;
  };

  double f = safe_eval(u, g);
  if (!std::isfinite(f)) {
    out.failed = true;
    return out;
  }
  out.trace.push_back(f);
  out.best_u = u;
  out.best_objective = f;
  if (cfg.progress) cfg.progress(restart_index, 0, f);

  Eigen::VectorXd m = Eigen::VectorXd::Zero(u.size());
  Eigen::VectorXd v = Eigen::VectorXd::Zero(u.size());
  for (int t = 1; t <= cfg.epochs; ++t) {
    if (g.cwiseAbs().maxCoeff() < cfg.grad_tol) {
      out.converged = true;
      break;
    }
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseAbs2();
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    u += (cfg.learning_rate / bc1) * m.cwiseQuotient(
             ((v / bc2).cwiseSqrt().array() + cfg.adam_eps).matrix());
    project(u);

    f = safe_eval(u, g);
    out.epochs_run = t;
    if (!std::isfinite(f)) break;  // keep best iterate found so far
    out.trace.push_back(f);
    if (cfg.progress) cfg.progress(restart_index, t, f);
    if (f > out.best_objective) {
      out.best_objective = f;
      out.best_u = u;
    }
  }
  return out;
}

struct TrainResult {
  GPModel model;
  double objective = -std::numeric_limits<double>::infinity();
  std::vector<double> trace;  // winning restart
  bool converged = false;
  int best_restart = 0;
  std::vector<std::string> param_names;
  Eigen::VectorXd final_params;  // constrained-space values
};

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline Eigen::VectorXd constrained_values(const GPModel& m) {
  Eigen::VectorXd v(m.param_count());
  Eigen::Index i = 0;
  m.kernel.visit_params([&](const HyperParam& p) { v[i++] = p.value(); });
  const Eigen::VectorXd mp = m.mean.pack();
  v.segment(i, mp.size()) = mp;
  i += mp.size();
  if (m.noise_learnable) v[i] = m.noise.value();
  return v;
}

}  // namespace detail

// MAP fit: maximizes LML + log prior over the model's learnable parameters
// with best-of-restarts. Restart 0 starts exactly at the supplied values;
// later restarts jitter the lengthscales log-uniformly in [1/3, 3].
inline TrainResult optimize(const GPModel& model0, const Eigen::MatrixXd& X,
                            const Eigen::VectorXd& y, const TrainConfig& cfg) {
  if (cfg.restarts < 1) throw ConfigError("restarts must be >= 1");
  GPModel model = model0;
  model.mean.ensure_dims(X.cols());
  validate_training_data(model, X, y);

  auto eval = [&](const Eigen::VectorXd& u, Eigen::VectorXd& grad) {
    GPModel m = model;
    m.unpack(u);
    LmlEval e = lml_value_and_gradient(m, X, y);
    grad = e.gradient + m.log_prior_gradient();
    return e.value + m.log_prior();
  };
  auto project = [&](Eigen::VectorXd& u) {
    GPModel m = model;
    m.unpack(u);  // set_log_value clamps into bounds
    u = m.pack();
  };

  std::vector<Eigen::Index> ls_slots;
  {
    const auto names = model.param_names();
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(names.size()); ++i)
      if (names[i].find(".lengthscale") != std::string::npos)
        ls_slots.push_back(i);
  }
  const Eigen::VectorXd u0 = model.pack();

  TrainResult best;
  bool have_winner = false;
  for (int r = 0; r < cfg.restarts; ++r) {
    AdamOutcome run;
    for (int attempt = 0; attempt < 5; ++attempt) {
      Eigen::VectorXd u = u0;
      if (r > 0 || attempt > 0) {
        std::mt19937_64 rng(
            detail::mix_seed(cfg.seed, 977u * r + attempt));
        std::uniform_real_distribution<double> jit(-std::log(3.0),
                                                   std::log(3.0));
        for (auto i : ls_slots) u[i] += jit(rng);
      }
      run = adam_maximize(eval, project, std::move(u), cfg, r);
      if (!run.failed) break;  // pathological init: rejitter and retry
    }
    if (run.failed) continue;
    if (!have_winner || run.best_objective > best.objective) {
      have_winner = true;
      best.objective = run.best_objective;
      best.trace = std::move(run.trace);
      best.converged = run.converged;
      best.best_restart = r;
      best.model = model;
      best.model.unpack(run.best_u);
    }
  }
  if (!have_winner)
    throw NonFiniteObjective(
        "objective was non-finite for every restart and jittered init");
  best.param_names = best.model.param_names();
  best.final_params = detail::constrained_values(best.model);
  return best;
}

// Sets constrained-space values addressed by parameter name; positive
// parameters bypass log space so the written value round-trips exactly.
inline void set_params_by_name(GPModel& model,
                               const std::map<std::string, double>& values) {
  const auto names = model.param_names();
  const Eigen::Index n_kernel = model.kernel.param_count();
  const Eigen::Index n_mean = model.mean.param_count();
  for (const auto& [name, value] : values) {
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end())
      throw UnknownParam("no parameter named '" + name + "'");
    const Eigen::Index i = it - names.begin();
    if (i < n_kernel) {
      Eigen::Index j = 0;
      model.kernel.visit_params([&](HyperParam& p) {
        if (j++ == i) p.set_value(value);
      });
    } else if (i < n_kernel + n_mean) {
      Eigen::VectorXd mp = model.mean.pack();
      mp[i - n_kernel] = value;
      model.mean.unpack(mp);
    } else {
      model.noise.set_value(value);
    }
  }
}

// Median-distance initialization. Lengthscales get the median pairwise
// distance of the leaf's (subsampled) feature subspace, per dimension for
// ARD; leaf variances split var(y) evenly; noise starts at 0.1 var(y).
// Periodic leaves put the median into the period and keep lengthscale 1.
// overrides (constrained space, by parameter name) are applied afterwards
// and stored exactly.
inline void initialize_hyperparams(
    GPModel& model, const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
    const std::map<std::string, double>& overrides = {}) {
  model.mean.ensure_dims(X.cols());
  validate_training_data(model, X, y);
  const Eigen::Index n = X.rows();

  std::vector<Eigen::Index> rows;
  const Eigen::Index stride = std::max<Eigen::Index>(1, n / 1000);
  for (Eigen::Index i = 0; i < n && rows.size() < 1000; i += stride)
    rows.push_back(i);

  auto median_of = [](std::vector<double>& v) {
    // median of the positive entries; 0 if there are none
    v.erase(std::remove_if(v.begin(), v.end(),
                           [](double d) { return !(d > 0.0); }),
            v.end());
    if (v.empty()) return 0.0;
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + mid, v.end());
    double hi = v[mid];
    if (v.size() % 2 == 0) {
      const double lo = *std::max_element(v.begin(), v.begin() + mid);
      return 0.5 * (lo + hi);
    }
    return hi;
  };

  const double var_y =
      std::max((y.array() - y.mean()).square().mean(), 1e-6);
  Eigen::Index n_leaves = 0;
  model.kernel.for_each_leaf([&](const BaseKernel&) { ++n_leaves; });

  model.kernel.for_each_leaf([&](BaseKernel& k) {
    if (k.feature_idx.size() != k.features.size() || k.lengthscales.empty())
      throw Error("initialize_hyperparams: kernel not bound");
    k.variance.set_value(var_y / static_cast<double>(n_leaves));
    if (k.kind == KernelKind::Periodic) {
      std::vector<double> dist;
      for (std::size_t a = 0; a < rows.size(); ++a)
        for (std::size_t b = a + 1; b < rows.size(); ++b)
          dist.push_back(std::abs(X(rows[a], k.feature_idx[0]) -
                                  X(rows[b], k.feature_idx[0])));
      const double med = median_of(dist);
      if (med == 0.0)
        throw DegenerateData("feature '" + k.features[0] +
                             "' has no spread; cannot initialize period");
      k.period.set_value(med);
      k.lengthscales[0].set_value(1.0);
      return;
    }
    if (k.ard) {
      for (std::size_t d = 0; d < k.features.size(); ++d) {
        std::vector<double> dist;
        for (std::size_t a = 0; a < rows.size(); ++a)
          for (std::size_t b = a + 1; b < rows.size(); ++b)
            dist.push_back(std::abs(X(rows[a], k.feature_idx[d]) -
                                    X(rows[b], k.feature_idx[d])));
        const double med = median_of(dist);
        if (med == 0.0)
          throw DegenerateColumn("feature '" + k.features[d] +
                                 "' is constant; cannot initialize its "
                                 "lengthscale");
        k.lengthscales[d].set_value(med);
      }
    } else {
      std::vector<double> dist;
      for (std::size_t a = 0; a < rows.size(); ++a)
        for (std::size_t b = a + 1; b < rows.size(); ++b) {
          double r2 = 0.0;
          for (auto c : k.feature_idx) {
            const double t = X(rows[a], c) - X(rows[b], c);
            r2 += t * t;
          }
          dist.push_back(std::sqrt(r2));
        }
      const double med = median_of(dist);
      if (med == 0.0)
        throw DegenerateData(
            "all inputs identical in kernel subspace; cannot initialize "
            "lengthscale");
      k.lengthscales[0].set_value(med);
    }
  });

  model.noise.set_value(0.1 * var_y);
  if (model.mean.learnable) {
    if (model.mean.kind == MeanSpec::Kind::Constant)
      model.mean.constant = y.mean();
    if (model.mean.kind == MeanSpec::Kind::Linear) {
      model.mean.weights.setZero();
      model.mean.intercept = y.mean();
    }
  }

  if (!overrides.empty()) set_params_by_name(model, overrides);
}

struct GradientCheck {
  std::vector<std::string> names;
  Eigen::VectorXd analytic;
  Eigen::VectorXd numeric;
  Eigen::VectorXd rel_error;  // |a - n| / max(1, |a|, |n|)
  double max_rel_error = 0.0;
};

// Central differences on the MAP objective (LML + log prior) in u space.
inline GradientCheck check_gradients(const GPModel& model,
                                     const Eigen::MatrixXd& X,
                                     const Eigen::VectorXd& y,
                                     double step = 1e-6) {
  GradientCheck out;
  out.names = model.param_names();
  {
    GPModel m = model;
    LmlEval e = lml_value_and_gradient(m, X, y);
    out.analytic = e.gradient + m.log_prior_gradient();
  }
  const Eigen::VectorXd u0 = model.pack();
  out.numeric.resize(u0.size());
  auto value_at = [&](const Eigen::VectorXd& u) {
    GPModel m = model;
    m.unpack(u);
    return log_marginal_likelihood(m, fit_cache(m, X, y), y) + m.log_prior();
  };
  for (Eigen::Index i = 0; i < u0.size(); ++i) {
    Eigen::VectorXd up = u0, um = u0;
    up[i] += step;
    um[i] -= step;
    out.numeric[i] = (value_at(up) - value_at(um)) / (2.0 * step);
  }
  out.rel_error.resize(u0.size());
  for (Eigen::Index i = 0; i < u0.size(); ++i) {
    const double denom = std::max(
        {1.0, std::abs(out.analytic[i]), std::abs(out.numeric[i])});
    out.rel_error[i] = std::abs(out.analytic[i] - out.numeric[i]) / denom;
  }
  out.max_rel_error =
      u0.size() ? out.rel_error.cwiseAbs().maxCoeff() : 0.0;
  return out;
}

struct SelfCheckParam {
  std::string name;
  double truth = 0.0;
  double recovered = 0.0;
};

struct SelfCheckReport {
  std::vector<SelfCheckParam> params;  // kernel + noise, constrained space
  TrainResult fit;

  // number of compared parameters recovered within rel tolerance of the truth
  int within(double rtol = 0.3) const {
    int k = 0;
    for (const auto& p : params)
      if (std::abs(p.recovered - p.truth) <= rtol * std::abs(p.truth)) ++k;
    return k;
  }

  // every compared parameter recovered within rel tolerance of the truth
  bool ok(double rtol = 0.3) const {
    return within(rtol) == static_cast<int>(params.size());
  }
};

// Trust check: draw synthetic targets from the model at the given inputs,
// refit from heuristic inits, and compare recovered kernel/noise parameters
// against the generating values.
inline SelfCheckReport synthetic_self_check(const GPModel& model,
                                            const Eigen::MatrixXd& X,
                                            std::uint64_t seed,
                                            TrainConfig cfg) {
  const Eigen::VectorXd y_syn = generate_synthetic(model, X, seed);
  GPModel fresh = model;
  initialize_hyperparams(fresh, X, y_syn);
  SelfCheckReport report;
  report.fit = optimize(fresh, X, y_syn, cfg);

  const auto names = model.param_names();
  const Eigen::VectorXd truth = detail::constrained_values(model);
  const Eigen::VectorXd rec = detail::constrained_values(report.fit.model);
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i].rfind("mean.", 0) == 0) continue;
    report.params.push_back({names[i], truth[i], rec[i]});
  }
  return report;
}

}  // namespace gpreg
