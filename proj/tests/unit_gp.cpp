#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "gpreg/cg.hpp"
#include "gpreg/gp.hpp"
#include "gpreg/kernel_dsl.hpp"
#include "gpreg/train.hpp"
#include "support/brute.hpp"

using namespace gpreg;
using Catch::Approx;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

GPModel se_model_1d(double variance, double lengthscale, double noise) {
  GPModel m;
  m.kernel = parse_kernel_expr("SE(x)");
  m.kernel.bind({"x"});
  m.kernel.base().variance.set_value(variance);
  m.kernel.base().lengthscales[0].set_value(lengthscale);
  m.noise.set_value(noise);
  return m;
}

MatrixXd randn(int n, int d, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  MatrixXd X(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) X(i, j) = g(rng);
  return X;
}

}  // namespace

TEST_CASE("one observation: closed-form likelihood, prediction, gradient") {
  GPModel m = se_model_1d(1.0, 1.0, 0.1);
  MatrixXd X(1, 1);
  X << 0.0;
  VectorXd y(1);
  y << 1.0;

  PosteriorCache cache = fit_cache(m, X, y);
  CHECK(cache.jitter == 0.0);
  CHECK(log_marginal_likelihood(m, cache, y) ==
        Approx(-1.4211390776522896).epsilon(1e-13));

  auto pred = predict(m, cache, X);
  CHECK(pred.mean[0] == Approx(0.9090909090909091).epsilon(1e-13));
  CHECK(pred.latent_variance[0] == Approx(0.09090909090909094).margin(1e-13));
  CHECK(pred.observation_variance[0] ==
        Approx(0.19090909090909094).epsilon(1e-13));

  VectorXd g = lml_gradient(m, X, y);
  REQUIRE(g.size() == 3);  // variance, lengthscale, noise
  CHECK(g[0] == Approx(-0.041322314049586806).epsilon(1e-12));
  CHECK(g[1] == 0.0);  // zero distance: lengthscale has no effect
  CHECK(g[2] == Approx(-0.00413223140495868).epsilon(1e-12));
}

TEST_CASE("two observations: frozen likelihood value") {
  GPModel m = se_model_1d(1.0, 1.0, 0.2);
  MatrixXd X(2, 1);
  X << 0.0, 1.0;
  VectorXd y(2);
  y << 1.0, -1.0;
  CHECK(log_marginal_likelihood(m, fit_cache(m, X, y), y) ==
        Approx(-3.5577033377206715).epsilon(1e-13));
}

TEST_CASE("matches the dense-inverse reference on random instances") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> pick_n(5, 60), pick_d(1, 3),
      pick_kind(0, 2);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  for (int inst = 0; inst < 12; ++inst) {
    const int n = pick_n(rng), d = pick_d(rng);
    GPModel m;
    std::string feats = "x0";
    for (int j = 1; j < d; ++j) feats += ", x" + std::to_string(j);
    const char* kinds[] = {"SE", "Mat32", "Mat52"};
    m.kernel = parse_kernel_expr(std::string(kinds[pick_kind(rng)]) + "(" +
                                 feats + ")");
    std::vector<std::string> cols;
    for (int j = 0; j < d; ++j) cols.push_back("x" + std::to_string(j));
    m.kernel.bind(cols);
    m.kernel.base().variance.set_value(0.5 + unif(rng));
    for (auto& l : m.kernel.base().lengthscales)
      l.set_value(0.5 + 1.5 * unif(rng));
    m.noise.set_value(std::exp(-4.0 + 3.0 * unif(rng)));
    m.mean.kind = MeanSpec::Kind::Constant;
    m.mean.constant = unif(rng) - 0.5;

    MatrixXd X = randn(n, d, 100 + inst);
    VectorXd y = randn(n, 1, 200 + inst);
    MatrixXd Xs = randn(7, d, 300 + inst);

    MatrixXd Ky = eval_kernel(m.kernel, X);
    Ky.diagonal().array() += m.noise.value();
    const VectorXd resid = y - m.mean.evaluate(X);

    PosteriorCache cache = fit_cache(m, X, y);
    REQUIRE(cache.jitter == 0.0);
    CHECK(log_marginal_likelihood(m, cache, y) ==
          Approx(brute::lml(Ky, resid)).epsilon(1e-10));

    VectorXd bmean, bvar;
    brute::predict(Ky, resid, eval_kernel(m.kernel, X, Xs),
                   eval_kernel_diag(m.kernel, Xs), bmean, bvar);
    auto pred = predict(m, cache, Xs);
    for (int i = 0; i < 7; ++i) {
      CHECK(pred.mean[i] ==
            Approx(bmean[i] + m.mean.constant).margin(1e-8));
      CHECK(pred.latent_variance[i] == Approx(bvar[i]).margin(1e-8));
    }
  }
}

TEST_CASE("noise-free GP interpolates its training targets") {
  GPModel m = se_model_1d(1.2, 0.9, 0.0);
  MatrixXd X(5, 1);
  X << -2.0, -0.7, 0.1, 1.3, 2.4;
  VectorXd y(5);
  y << 0.3, -0.5, 1.1, 0.2, -0.9;
  PosteriorCache cache = fit_cache(m, X, y);
  auto pred = predict(m, cache, X);
  for (int i = 0; i < 5; ++i) {
    CHECK(pred.mean[i] == Approx(y[i]).margin(1e-7));
    CHECK(pred.latent_variance[i] < 1e-7);
  }
}

TEST_CASE("jitter ladder rescues duplicate rows at zero noise") {
  GPModel m = se_model_1d(1.0, 1.0, 0.0);
  MatrixXd X(4, 1);
  X << 0.5, 0.5, 1.5, 2.5;  // exact duplicate makes K singular
  VectorXd y(4);
  y << 1.0, 1.0, 0.0, -1.0;
  PosteriorCache cache = fit_cache(m, X, y);
  CHECK(cache.jitter > 0.0);
  auto pred = predict(m, cache, X);
  CHECK(pred.mean.allFinite());
  CHECK(pred.mean[0] == Approx(1.0).margin(1e-3));
}

TEST_CASE("input validation for fit and predict") {
  GPModel m = se_model_1d(1.0, 1.0, 0.1);
  MatrixXd X(2, 1);
  X << 0.0, 1.0;
  VectorXd y(2);
  y << 1.0, std::nan("");
  CHECK_THROWS_AS(fit_cache(m, X, y), NonFiniteInput);

  y[1] = 0.0;
  VectorXd y3(3);
  CHECK_THROWS_AS(fit_cache(m, X, y3), LengthMismatch);

  m.exact_cap = 1;
  CHECK_THROWS_AS(fit_cache(m, X, y), SizeCapExceeded);
  m.exact_cap = 10000;

  PosteriorCache cache = fit_cache(m, X, y);
  MatrixXd bad(2, 2);
  bad.setZero();
  CHECK_THROWS_AS(predict(m, cache, bad), SchemaMismatch);
}

TEST_CASE("analytic gradients agree with central differences") {
  GPModel m;
  m.kernel =
      parse_kernel_expr("SE(a, b) + Mat52(c) * Periodic(a)");
  m.kernel.bind({"a", "b", "c"});
  Eigen::Index i = 0;
  m.kernel.visit_params([&](HyperParam& p) {
    p.set_value(0.6 + 0.2 * static_cast<double>(i++));
  });
  m.kernel.children()[0].base().variance.set_prior({0.2, 0.8});
  m.noise.set_value(0.05);
  m.noise.set_prior({-2.0, 1.5});
  m.mean.kind = MeanSpec::Kind::Constant;
  m.mean.learnable = true;
  m.mean.constant = 0.3;

  MatrixXd X = randn(24, 3, 9);
  VectorXd y = randn(24, 1, 10);
  auto report = check_gradients(m, X, y, 1e-6);
  INFO("max rel error " << report.max_rel_error);
  CHECK(report.max_rel_error < 1e-5);
}

TEST_CASE("prediction reverts to the prior far from the data") {
  GPModel m = se_model_1d(1.7, 1.0, 0.1);
  m.mean.kind = MeanSpec::Kind::Constant;
  m.mean.constant = 5.0;
  MatrixXd X(3, 1);
  X << 0.0, 0.3, 0.7;
  VectorXd y(3);
  y << 4.0, 4.2, 4.4;
  PosteriorCache cache = fit_cache(m, X, y);
  MatrixXd far(1, 1);
  far << 80.0;
  auto pred = predict(m, cache, far);
  CHECK(pred.mean[0] == Approx(5.0).margin(1e-8));
  CHECK(pred.latent_variance[0] == Approx(1.7).margin(1e-8));
  CHECK(pred.observation_variance[0] == Approx(1.8).margin(1e-8));
}

TEST_CASE("conjugate gradients solve SPD systems and flag stalls") {
  MatrixXd A = randn(40, 40, 55);
  A = A * A.transpose() + 40.0 * MatrixXd::Identity(40, 40);
  VectorXd b = randn(40, 1, 56);
  auto matvec = [&](const VectorXd& v) -> VectorXd { return A * v; };

  auto res = solve_cg(matvec, b, {1e-10, 400});
  CHECK((A * res.x - b).norm() / b.norm() < 1e-9);

  VectorXd diag = A.diagonal();
  auto pres = solve_cg(matvec, b, {1e-10, 400}, &diag);
  CHECK((A * pres.x - b).norm() / b.norm() < 1e-9);

  CHECK_THROWS_AS(solve_cg(matvec, b, {1e-14, 2}), NoConvergence);
}

TEST_CASE("samples are seeded deterministically with matching moments") {
  GPModel m = se_model_1d(1.0, 1.2, 0.0);
  MatrixXd X(3, 1);
  X << 0.0, 0.5, 2.0;

  MatrixXd a = sample(m, X, 4, 42);
  MatrixXd b = sample(m, X, 4, 42);
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a - sample(m, X, 4, 43)).cwiseAbs().maxCoeff() > 1e-8);

  const int draws = 20000;
  MatrixXd S = sample(m, X, draws, 7);
  MatrixXd centered = S.colwise() - S.rowwise().mean();
  MatrixXd emp = centered * centered.transpose() / double(draws - 1);
  MatrixXd K = eval_kernel(m.kernel, X);
  CHECK((emp - K).cwiseAbs().maxCoeff() < 0.06);
  CHECK(S.rowwise().mean().cwiseAbs().maxCoeff() < 0.05);
}

TEST_CASE("synthetic targets split into latent draw plus fresh noise") {
  GPModel quiet = se_model_1d(1.0, 0.8, 0.0);
  GPModel noisy = se_model_1d(1.0, 0.8, 0.09);
  MatrixXd X = randn(400, 1, 77);
  VectorXd f = generate_synthetic(quiet, X, 5);
  VectorXd y = generate_synthetic(noisy, X, 5);
  VectorXd eps = y - f;  // same latent draw by construction
  const double sd = std::sqrt((eps.array() - eps.mean()).square().mean());
  CHECK(sd == Approx(0.3).epsilon(0.12));
  CHECK(generate_synthetic(noisy, X, 5) == y);
}

TEST_CASE("median-distance initialization and overrides") {
  GPModel m;
  m.kernel = parse_kernel_expr("SE(x, y)");
  m.kernel.bind({"x", "y"});
  MatrixXd X = randn(500, 2, 31);
  VectorXd y = 2.0 * randn(500, 1, 32);

  initialize_hyperparams(m, X, y);
  // per-dimension median |z - z'| for standard normals is about 0.95
  CHECK(m.kernel.base().lengthscales[0].value() == Approx(0.95).margin(0.1));
  CHECK(m.kernel.base().lengthscales[1].value() == Approx(0.95).margin(0.1));
  const double var_y = (y.array() - y.mean()).square().mean();
  CHECK(m.kernel.base().variance.value() == Approx(var_y).epsilon(1e-12));
  CHECK(m.noise.value() == Approx(0.1 * var_y).epsilon(1e-12));

  initialize_hyperparams(m, X, y, {{"k0.lengthscale.x", 30.0}});
  CHECK(m.kernel.base().lengthscales[0].value() == 30.0);

  CHECK_THROWS_AS(initialize_hyperparams(m, X, y, {{"k9.variance", 1.0}}),
                  UnknownParam);

  MatrixXd Xc = X;
  Xc.col(1).setConstant(3.0);
  CHECK_THROWS_AS(initialize_hyperparams(m, Xc, y), DegenerateColumn);
}

TEST_CASE("training improves the objective and respects restart nesting") {
  GPModel truth = se_model_1d(1.5, 0.7, 0.05);
  MatrixXd X = 2.0 * randn(120, 1, 91);
  VectorXd y = generate_synthetic(truth, X, 17);

  GPModel m = se_model_1d(1.0, 1.0, 0.1);
  initialize_hyperparams(m, X, y);
  const double lml0 = log_marginal_likelihood(m, fit_cache(m, X, y), y);

  TrainConfig cfg;
  cfg.epochs = 100;
  cfg.restarts = 1;
  cfg.seed = 3;
  TrainResult one = optimize(m, X, y, cfg);
  CHECK(one.objective > lml0);
  CHECK(one.trace.front() == Approx(lml0).epsilon(1e-12));

  cfg.restarts = 3;
  TrainResult three = optimize(m, X, y, cfg);
  CHECK(three.objective >= one.objective);  // restart 0 is shared

  // a slack lengthscale plus slack noise should move toward the truth
  CHECK(one.model.kernel.base().lengthscales[0].value() ==
        Approx(0.7).epsilon(0.6));
  CHECK(one.model.noise.value() < 0.1);

  cfg.epochs = 0;
  TrainResult frozen = optimize(m, X, y, cfg);
  CHECK(frozen.final_params.size() == 3);
  CHECK(frozen.objective == Approx(lml0).epsilon(1e-12));
}
