#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "gpreg/bcm.hpp"
#include "gpreg/kernel_dsl.hpp"
#include "gpreg/kronecker.hpp"
#include "gpreg/svgp.hpp"
#include "support/brute.hpp"

using namespace gpreg;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

GPModel make_model(const std::string& expr,
                   const std::vector<std::string>& features, double noise) {
  GPModel m;
  m.kernel = parse_kernel_expr(expr);
  m.kernel.bind(features);
  m.noise.set_value(noise);
  return m;
}

Eigen::MatrixXd random_inputs(Eigen::Index n, Eigen::Index d,
                              std::uint64_t seed, double spread = 2.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, spread);
  Eigen::MatrixXd X(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) X(i, j) = g(rng);
  return X;
}

Eigen::VectorXd random_targets(Eigen::Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) y[i] = g(rng);
  return y;
}

// dense Kronecker product for pinning the matvec convention
Eigen::MatrixXd dense_kron(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  Eigen::MatrixXd K(A.rows() * B.rows(), A.cols() * B.cols());
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < A.cols(); ++j)
      K.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
  return K;
}

}  // namespace

TEST_CASE("expert combination matches hand-computed aggregates") {
  // two identical experts: posterior (1, 0.5), prior (0, 1)
  const std::vector<double> means{1.0, 1.0}, vars{0.5, 0.5},
      pmeans{0.0, 0.0}, pvars{1.0, 1.0};

  const CombinedPoint plain =
      combine_experts(means, vars, pmeans, pvars, Aggregation::BCM);
  CHECK_FALSE(plain.prior_fallback);
  CHECK_THAT(plain.variance, WithinAbs(1.0 / 3.0, 1e-15));
  CHECK_THAT(plain.mean, WithinAbs(4.0 / 3.0, 1e-15));

  const CombinedPoint robust =
      combine_experts(means, vars, pmeans, pvars, Aggregation::RobustBCM);
  CHECK_FALSE(robust.prior_fallback);
  CHECK_THAT(robust.variance, WithinAbs(0.5906161091496412, 1e-14));
  CHECK_THAT(robust.mean, WithinAbs(0.8187677817007174, 1e-14));
}

TEST_CASE("an expert that learned nothing cancels out") {
  const std::vector<double> one_mean{2.0}, one_var{0.4}, one_pm{0.5},
      one_pv{1.5};
  for (const auto agg : {Aggregation::BCM, Aggregation::RobustBCM}) {
    const CombinedPoint solo =
        combine_experts(one_mean, one_var, one_pm, one_pv, agg);
    // add an expert whose posterior equals its prior
    const CombinedPoint with_blank = combine_experts(
        {2.0, 0.5}, {0.4, 1.5}, {0.5, 0.5}, {1.5, 1.5}, agg);
    CHECK_THAT(with_blank.mean, WithinAbs(solo.mean, 1e-12));
    CHECK_THAT(with_blank.variance, WithinAbs(solo.variance, 1e-12));
  }
}

TEST_CASE("non-positive aggregate precision falls back to the prior") {
  // both experts report variance far above the prior, which drives the
  // plain aggregate precision negative
  const CombinedPoint c = combine_experts({3.0, -3.0}, {10.0, 10.0},
                                          {0.25, 0.25}, {1.0, 1.0},
                                          Aggregation::BCM);
  CHECK(c.prior_fallback);
  CHECK_THAT(c.variance, WithinAbs(1.0, 1e-15));
  CHECK_THAT(c.mean, WithinAbs(0.25, 1e-15));

  // the robust weights zero those experts out instead
  const CombinedPoint r = combine_experts({3.0, -3.0}, {10.0, 10.0},
                                          {0.25, 0.25}, {1.0, 1.0},
                                          Aggregation::RobustBCM);
  CHECK_FALSE(r.prior_fallback);
  CHECK_THAT(r.variance, WithinAbs(1.0, 1e-15));
  CHECK_THAT(r.mean, WithinAbs(0.25, 1e-15));

  CHECK_THROWS_AS(combine_experts({1.0}, {1.0, 2.0}, {0.0}, {1.0},
                                  Aggregation::BCM),
                  LengthMismatch);
}

TEST_CASE("a single-expert ensemble reproduces the exact GP") {
  const Eigen::MatrixXd X = random_inputs(40, 2, 5);
  const Eigen::VectorXd y = random_targets(40, 6);
  GPModel model = make_model("SE(a, b)", {"a", "b"}, 0.1);

  Chunking one;
  one.assignment = Eigen::VectorXi::Zero(40);
  one.M = 1;
  one.sizes = {40};

  TrainConfig cfg;
  cfg.epochs = 0;  // keep the prototype hyperparameters
  cfg.restarts = 1;
  const ExpertEnsemble ens =
      fit_experts(model, X, y, one, ExpertMode::Independent, cfg);
  REQUIRE(ens.models.size() == 1);
  CHECK(ens.failed_chunks == 0);

  const Eigen::MatrixXd Xs = random_inputs(15, 2, 7);
  const PredictiveDistribution direct =
      predict(ens.models[0], ens.caches[0], Xs);
  // plain aggregation with one expert collapses to that expert exactly;
  // the robust variant reweights by entropy, so only check it stays sane
  const PredictiveDistribution combined =
      aggregate_predict(ens, Xs, Aggregation::BCM);
  CHECK(combined.prior_fallbacks == 0);
  for (Eigen::Index i = 0; i < 15; ++i) {
    CHECK_THAT(combined.mean[i], WithinAbs(direct.mean[i], 1e-10));
    CHECK_THAT(combined.latent_variance[i],
               WithinAbs(direct.latent_variance[i], 1e-10));
    CHECK_THAT(combined.observation_variance[i],
               WithinAbs(direct.observation_variance[i], 1e-10));
  }
  const PredictiveDistribution robust =
      aggregate_predict(ens, Xs, Aggregation::RobustBCM);
  for (Eigen::Index i = 0; i < 15; ++i) {
    CHECK(std::isfinite(robust.mean[i]));
    CHECK(robust.latent_variance[i] > 0.0);
  }
}

TEST_CASE("chunked experts approximate the full exact GP") {
  // smooth 1-D function, four spatial chunks, shared hyperparameters
  const Eigen::Index n = 160;
  Eigen::MatrixXd X(n, 1);
  Eigen::VectorXd y(n);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 1.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    X(i, 0) = 8.0 * static_cast<double>(i) / (n - 1);
    y[i] = std::sin(1.7 * X(i, 0)) + 0.05 * g(rng);
  }

  GPModel proto = make_model("SE(x)", {"x"}, 0.05);
  const Chunking ch = chunk_kmeans(X, 4, 17);
  TrainConfig cfg;
  cfg.epochs = 40;
  cfg.restarts = 1;
  const ExpertEnsemble ens =
      fit_experts(proto, X, y, ch, ExpertMode::SharedHypers, cfg);
  REQUIRE(ens.models.size() == 4);
  // shared mode: every expert carries identical hyperparameters
  for (std::size_t k = 1; k < 4; ++k) {
    CHECK(ens.models[k].pack() == ens.models[0].pack());
    CHECK(ens.models[k].noise.value() == ens.models[0].noise.value());
  }

  GPModel full = ens.models[0];
  const PosteriorCache cache = fit_cache(full, X, y);
  Eigen::MatrixXd Xs(30, 1);
  for (int i = 0; i < 30; ++i) Xs(i, 0) = 0.2 + 7.6 * i / 29.0;
  const PredictiveDistribution exact = predict(full, cache, Xs);

  for (const auto agg : {Aggregation::BCM, Aggregation::RobustBCM}) {
    const PredictiveDistribution approx = aggregate_predict(ens, Xs, agg);
    double max_err = 0.0, sq = 0.0;
    for (int i = 0; i < 30; ++i) {
      const double e = std::abs(approx.mean[i] - exact.mean[i]);
      max_err = std::max(max_err, e);
      sq += e * e;
      CHECK(approx.latent_variance[i] >= 0.0);
      CHECK(approx.observation_variance[i] > approx.latent_variance[i]);
    }
    // chunk seams cost accuracy, but the error stays far below the O(1)
    // signal amplitude
    CHECK(max_err < 0.3);
    CHECK(std::sqrt(sq / 30.0) < 0.1);
  }
}

TEST_CASE("independent experts train per chunk") {
  const Eigen::Index n = 60;
  Eigen::MatrixXd X(n, 1);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    X(i, 0) = 0.1 * static_cast<double>(i);
    y[i] = std::cos(X(i, 0));
  }
  GPModel proto = make_model("SE(x)", {"x"}, 0.1);
  const Chunking ch = chunk_kmeans(X, 2, 1);
  TrainConfig cfg;
  cfg.epochs = 25;
  cfg.restarts = 1;
  const ExpertEnsemble ens =
      fit_experts(proto, X, y, ch, ExpertMode::Independent, cfg);
  REQUIRE(ens.models.size() == 2);
  CHECK(ens.rows[0].size() + ens.rows[1].size() == static_cast<std::size_t>(n));
  // chunks saw different data, so the fitted kernels differ
  CHECK(ens.models[0].pack() != ens.models[1].pack());

  Chunking bad;
  bad.assignment = Eigen::VectorXi::Zero(10);
  bad.M = 1;
  CHECK_THROWS_AS(
      fit_experts(proto, X, y, bad, ExpertMode::Independent, cfg),
      LengthMismatch);
}

TEST_CASE("collapsed bound never exceeds the exact marginal likelihood") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index n = 24;
    const Eigen::MatrixXd X = random_inputs(n, 2, 100 + trial);
    const Eigen::VectorXd y = random_targets(n, 200 + trial);
    GPModel model = make_model(trial % 2 ? "Mat52(a, b)" : "SE(a, b)",
                               {"a", "b"}, 0.05 + 0.4 * uni(rng));
    model.kernel.unpack(Eigen::VectorXd::Random(3) * 0.5);

    const double lml = log_marginal_likelihood(model, X, y);

    const Eigen::Index m = 5 + trial % 8;
    const Eigen::MatrixXd Z = X.topRows(m);
    CHECK(svgp_bound(model, Z, X, y) <= lml + 1e-9);

    // inducing set = training set: the bound becomes tight
    CHECK_THAT(svgp_bound(model, X, X, y), WithinAbs(lml, 1e-4));
  }
}

TEST_CASE("collapsed bound gradients match finite differences") {
  const Eigen::Index n = 14, m = 5;
  const Eigen::MatrixXd X = random_inputs(n, 2, 42);
  const Eigen::VectorXd y = random_targets(n, 43);
  Eigen::MatrixXd Z = random_inputs(m, 2, 44);

  GPModel model = make_model("SE(a) * Mat32(b)", {"a", "b"}, 0.2);
  const SvgpEval ev = svgp_bound_gradient(model, Z, X, y);
  CHECK_THAT(ev.value, WithinAbs(svgp_bound(model, Z, X, y), 1e-12));

  const double h = 1e-5;
  Eigen::VectorXd u0 = model.pack();
  for (Eigen::Index p = 0; p < u0.size(); ++p) {
    Eigen::VectorXd up = u0, um = u0;
    up[p] += h;
    um[p] -= h;
    GPModel mp = model, mm = model;
    mp.unpack(up);
    mm.unpack(um);
    const double fd =
        (svgp_bound(mp, Z, X, y) - svgp_bound(mm, Z, X, y)) / (2.0 * h);
    const double rel = std::abs(ev.grad_params[p] - fd) /
                       std::max({1.0, std::abs(fd), std::abs(ev.grad_params[p])});
    INFO("parameter " << p);
    CHECK(rel < 1e-6);
  }

  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < 2; ++j) {
      Eigen::MatrixXd Zp = Z, Zm = Z;
      Zp(i, j) += h;
      Zm(i, j) -= h;
      const double fd =
          (svgp_bound(model, Zp, X, y) - svgp_bound(model, Zm, X, y)) /
          (2.0 * h);
      const double rel = std::abs(ev.grad_Z(i, j) - fd) /
                         std::max({1.0, std::abs(fd), std::abs(ev.grad_Z(i, j))});
      INFO("inducing point " << i << " dim " << j);
      CHECK(rel < 1e-6);
    }
  }
}

TEST_CASE("sparse prediction with full inducing set matches exact GP") {
  const Eigen::Index n = 25;
  const Eigen::MatrixXd X = random_inputs(n, 2, 77);
  const Eigen::VectorXd y = random_targets(n, 78);
  GPModel model = make_model("SE(a, b)", {"a", "b"}, 0.15);

  const PosteriorCache cache = fit_cache(model, X, y);
  const Eigen::MatrixXd Xs = random_inputs(10, 2, 79);
  const PredictiveDistribution exact = predict(model, cache, Xs);

  const SvgpCache sc = svgp_cache(model, X, X, y);
  const PredictiveDistribution sparse = svgp_predict(model, sc, Xs);
  for (Eigen::Index i = 0; i < 10; ++i) {
    CHECK_THAT(sparse.mean[i], WithinAbs(exact.mean[i], 1e-5));
    CHECK_THAT(sparse.latent_variance[i],
               WithinAbs(exact.latent_variance[i], 1e-5));
    CHECK_THAT(sparse.observation_variance[i],
               WithinAbs(exact.observation_variance[i], 1e-5));
  }

  CHECK_THROWS_AS(svgp_predict(model, sc, random_inputs(3, 5, 1)),
                  SchemaMismatch);
}

TEST_CASE("sparse training improves the bound and respects the cap") {
  const Eigen::Index n = 120;
  Eigen::MatrixXd X(n, 1);
  Eigen::VectorXd y(n);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g(0.0, 1.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    X(i, 0) = 6.0 * static_cast<double>(i) / (n - 1);
    y[i] = std::sin(2.0 * X(i, 0)) + 0.1 * g(rng);
  }
  GPModel proto = make_model("SE(x)", {"x"}, 0.2);

  TrainConfig cfg;
  cfg.epochs = 60;
  cfg.restarts = 1;
  cfg.seed = 4;
  const SvgpResult res = svgp_fit(proto, X, y, 8, cfg);
  REQUIRE(res.Z.rows() == 8);
  REQUIRE(res.Z.cols() == 1);
  CHECK(std::isfinite(res.bound));
  CHECK(res.bound > res.trace.front());
  CHECK(res.bound <= log_marginal_likelihood(res.model, X, y) + 1e-9);

  // a mean function is not part of the sparse objective
  GPModel with_mean = proto;
  with_mean.mean.kind = MeanSpec::Kind::Constant;
  with_mean.mean.learnable = true;
  CHECK_THROWS_AS(svgp_fit(with_mean, X, y, 8, cfg), ConfigError);

  // sparse paths must not trip the exact-size cap
  GPModel tiny_cap = proto;
  tiny_cap.exact_cap = 50;
  CHECK_NOTHROW(svgp_bound(tiny_cap, X.topRows(8), X, y));
}

TEST_CASE("kron matvec matches the dense Kronecker product") {
  std::mt19937_64 rng(55);
  auto randm = [&](Eigen::Index k) {
    std::normal_distribution<double> g(0.0, 1.0);
    Eigen::MatrixXd M(k, k);
    for (Eigen::Index i = 0; i < k; ++i)
      for (Eigen::Index j = 0; j < k; ++j) M(i, j) = g(rng);
    return M;
  };
  const Eigen::MatrixXd A = randm(3), B = randm(4), C = randm(2);

  const Eigen::VectorXd x2 = random_targets(12, 1);
  const Eigen::VectorXd d2 = dense_kron(A, B) * x2;
  CHECK((kron_matvec({A, B}, x2) - d2).cwiseAbs().maxCoeff() < 1e-12);

  const Eigen::VectorXd x3 = random_targets(24, 2);
  const Eigen::VectorXd d3 = dense_kron(A, dense_kron(B, C)) * x3;
  CHECK((kron_matvec({A, B, C}, x3) - d3).cwiseAbs().maxCoeff() < 1e-12);

  CHECK_THROWS_AS(kron_matvec({A, B}, x3), LengthMismatch);
}

TEST_CASE("grid inference recognizes full grids and rejects others") {
  Eigen::MatrixXd X(6, 2);
  X << 0, 10, 0, 20, 1, 10, 1, 20, 2, 10, 2, 20;
  const GridSpec g = infer_grid(X);
  REQUIRE(g.axes.size() == 2);
  CHECK(g.axes[0].size() == 3);
  CHECK(g.axes[1].size() == 2);
  CHECK(g.total() == 6);
  // row (2, 20) sits at flat index 2 * 2 + 1
  CHECK(g.flat_of_row[5] == 5);
  CHECK(g.flat_of_row[1] == 1);

  // shuffled row order maps to the same cells
  Eigen::MatrixXd Xs = X.colwise().reverse();
  const GridSpec gs = infer_grid(Xs);
  for (int i = 0; i < 6; ++i) CHECK(gs.flat_of_row[5 - i] == g.flat_of_row[i]);

  Eigen::MatrixXd dup = X;
  dup.row(5) = dup.row(0);  // duplicate cell, same row count
  CHECK_THROWS_AS(infer_grid(dup), InvalidGrid);
  CHECK_THROWS_AS(infer_grid(X.topRows(5)), InvalidGrid);
  CHECK_THROWS_AS(infer_grid(Eigen::MatrixXd(0, 2)), EmptyDataset);
}

TEST_CASE("grid likelihood and gradient match the dense computation") {
  // 4 x 3 grid in shuffled row order
  std::vector<double> ax{-1.0, 0.0, 1.5, 2.0}, ay{0.0, 0.7, 2.2};
  Eigen::MatrixXd X(12, 2);
  int r = 0;
  for (double a : ax)
    for (double b : ay) {
      X(r, 0) = a;
      X(r, 1) = b;
      ++r;
    }
  const Eigen::VectorXd perm_y = random_targets(12, 91);
  Eigen::PermutationMatrix<Eigen::Dynamic> P(12);
  P.setIdentity();
  std::mt19937_64 rng(13);
  for (int i = 11; i > 0; --i)
    std::swap(P.indices()[i],
              P.indices()[detail::bounded_rand(rng, i + 1)]);
  const Eigen::MatrixXd Xrows = P * X;
  const Eigen::VectorXd yrows = P * perm_y;

  GPModel model = make_model("SE(a) * Mat52(b)", {"a", "b"}, 0.3);
  model.kernel.unpack((Eigen::VectorXd(4) << 0.2, -0.1, 0.1, 0.4).finished());

  const GridSpec grid = infer_grid(Xrows);
  const KroneckerSystem sys = kronecker_fit(model, grid, yrows);

  const double dense_lml = log_marginal_likelihood(model, Xrows, yrows);
  CHECK_THAT(sys.lml, WithinAbs(dense_lml, 1e-8));

  // gradients agree with the dense path (same packed layout)
  const LmlEval dense = lml_value_and_gradient(model, Xrows, yrows);
  const Eigen::VectorXd gk = kronecker_lml_gradient(sys);
  REQUIRE(gk.size() == dense.gradient.size());
  for (Eigen::Index p = 0; p < gk.size(); ++p) {
    INFO("parameter " << p);
    CHECK_THAT(gk[p], WithinAbs(dense.gradient[p], 1e-8));
  }

  // predictions at off-grid points match the dense posterior
  const PosteriorCache cache = fit_cache(model, Xrows, yrows);
  const Eigen::MatrixXd Xs = random_inputs(7, 2, 19, 1.0);
  const PredictiveDistribution exact = predict(model, cache, Xs);
  const PredictiveDistribution kron = kronecker_predict(sys, Xs);
  for (int i = 0; i < 7; ++i) {
    CHECK_THAT(kron.mean[i], WithinAbs(exact.mean[i], 1e-8));
    CHECK_THAT(kron.latent_variance[i],
               WithinAbs(exact.latent_variance[i], 1e-8));
    CHECK_THAT(kron.observation_variance[i],
               WithinAbs(exact.observation_variance[i], 1e-8));
  }
}

TEST_CASE("three-axis grid likelihood matches dense") {
  std::vector<Eigen::VectorXd> axes{
      (Eigen::VectorXd(3) << 0.0, 1.0, 2.5).finished(),
      (Eigen::VectorXd(2) << -1.0, 0.5).finished(),
      (Eigen::VectorXd(2) << 3.0, 4.0).finished()};
  Eigen::MatrixXd X(12, 3);
  int r = 0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k) {
        X(r, 0) = axes[0][i];
        X(r, 1) = axes[1][j];
        X(r, 2) = axes[2][k];
        ++r;
      }
  const Eigen::VectorXd y = random_targets(12, 92);
  GPModel model =
      make_model("SE(a) * Mat32(b) * Mat52(c)", {"a", "b", "c"}, 0.25);

  const KroneckerSystem sys = kronecker_fit(model, infer_grid(X), y);
  CHECK_THAT(sys.lml, WithinAbs(log_marginal_likelihood(model, X, y), 1e-8));
}

TEST_CASE("grid mode validates kernel structure and mean") {
  Eigen::MatrixXd X(4, 2);
  X << 0, 0, 0, 1, 1, 0, 1, 1;
  const Eigen::VectorXd y = random_targets(4, 3);
  const GridSpec grid = infer_grid(X);

  GPModel sum = make_model("SE(a) + SE(b)", {"a", "b"}, 0.1);
  CHECK_THROWS_AS(kronecker_fit(sum, grid, y), ConfigError);

  GPModel joint = make_model("SE(a, b)", {"a", "b"}, 0.1);
  CHECK_THROWS_AS(kronecker_fit(joint, grid, y), ConfigError);

  GPModel twice = make_model("SE(a) * Mat32(a)", {"a", "b"}, 0.1);
  CHECK_THROWS_AS(kronecker_fit(twice, grid, y), ConfigError);

  GPModel with_mean = make_model("SE(a) * SE(b)", {"a", "b"}, 0.1);
  with_mean.mean.kind = MeanSpec::Kind::Constant;
  with_mean.mean.constant = 1.0;
  CHECK_THROWS_AS(kronecker_fit(with_mean, grid, y), ConfigError);

  GPModel ok = make_model("SE(a) * SE(b)", {"a", "b"}, 0.1);
  CHECK_NOTHROW(kronecker_fit(ok, grid, y));
  CHECK_THROWS_AS(kronecker_fit(ok, grid, random_targets(5, 1)),
                  LengthMismatch);
}

TEST_CASE("grid training improves the objective") {
  std::vector<double> ticks;
  for (int i = 0; i < 8; ++i) ticks.push_back(0.5 * i);
  Eigen::MatrixXd X(64, 2);
  Eigen::VectorXd y(64);
  int r = 0;
  std::mt19937_64 rng(77);
  std::normal_distribution<double> g(0.0, 1.0);
  for (double a : ticks)
    for (double b : ticks) {
      X(r, 0) = a;
      X(r, 1) = b;
      y[r] = std::sin(a) * std::cos(0.8 * b) + 0.05 * g(rng);
      ++r;
    }
  GPModel model = make_model("SE(a) * SE(b)", {"a", "b"}, 0.3);

  const GridSpec grid = infer_grid(X);
  const double before = kronecker_fit(model, grid, y).lml;
  TrainConfig cfg;
  cfg.epochs = 40;
  cfg.restarts = 1;
  const KroneckerSystem tuned = kronecker_optimize(model, grid, y, cfg);
  CHECK(tuned.lml > before);
}
