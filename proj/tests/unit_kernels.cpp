#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "gpreg/kernel.hpp"
#include "gpreg/kernel_dsl.hpp"

using namespace gpreg;
using Catch::Approx;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

BaseKernel make_base(KernelKind kind, std::vector<std::string> feats,
                     double variance, std::vector<double> ls,
                     bool ard = true, double period = 1.0) {
  BaseKernel k;
  k.kind = kind;
  k.features = std::move(feats);
  k.ard = ard;
  k.variance.set_value(variance);
  for (std::size_t i = 0; i < ls.size(); ++i)
    k.lengthscales.emplace_back("lengthscale", ls[i]);
  k.period.set_value(period);
  return k;
}

MatrixXd random_inputs(int n, int d, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  MatrixXd X(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) X(i, j) = gauss(rng);
  return X;
}

// A three-leaf composite exercising sum, product, ARD, and the periodic leaf.
KernelExpr composite_kernel() {
  auto se = KernelExpr::leaf(
      make_base(KernelKind::SquaredExponential, {"a", "b"}, 1.3, {0.9, 1.4}));
  auto m52 = KernelExpr::leaf(
      make_base(KernelKind::Matern52, {"c"}, 0.7, {1.1}));
  auto per = KernelExpr::leaf(make_base(KernelKind::Periodic, {"a"}, 0.5,
                                        {0.8}, true, 2.3));
  std::vector<KernelExpr> prod;
  prod.push_back(std::move(m52));
  prod.push_back(std::move(per));
  std::vector<KernelExpr> terms;
  terms.push_back(std::move(se));
  terms.push_back(KernelExpr::product(std::move(prod)));
  auto k = KernelExpr::sum(std::move(terms));
  k.bind({"a", "b", "c"});
  return k;
}

}  // namespace

TEST_CASE("base kernel values at unit scaled distance") {
  MatrixXd X(2, 1);
  X << 0.0, 1.0;
  struct Case {
    KernelKind kind;
    double expected;
  } cases[] = {
      {KernelKind::SquaredExponential, 0.6065306597126334},
      {KernelKind::Matern32, 0.4833577245965077},
      {KernelKind::Matern52, 0.5239941088318203},
  };
  for (const auto& c : cases) {
    auto k = KernelExpr::leaf(make_base(c.kind, {"x"}, 1.0, {1.0}));
    k.bind({"x"});
    MatrixXd K = eval_kernel(k, X);
    CHECK(K(0, 0) == Approx(1.0).epsilon(1e-14));
    CHECK(K(0, 1) == Approx(c.expected).epsilon(1e-12));
    CHECK(K(1, 0) == K(0, 1));
  }

  // periodic: l=1, p=2, |dx|=0.5 -> exp(-2 sin^2(pi/4)) = exp(-1)
  auto p = KernelExpr::leaf(
      make_base(KernelKind::Periodic, {"x"}, 1.0, {1.0}, true, 2.0));
  p.bind({"x"});
  MatrixXd Xp(2, 1);
  Xp << 0.25, 0.75;
  MatrixXd Kp = eval_kernel(p, Xp);
  CHECK(Kp(0, 1) == Approx(0.3678794411714424).epsilon(1e-12));
  // exact periodicity: shifting one input by p leaves the value unchanged
  MatrixXd Xq(2, 1);
  Xq << 0.25, 0.75 + 2.0;
  CHECK(eval_kernel(p, Xq)(0, 1) == Approx(Kp(0, 1)).epsilon(1e-12));
}

TEST_CASE("variance scales the whole gram matrix") {
  MatrixXd X = random_inputs(6, 2, 11);
  auto k1 = KernelExpr::leaf(
      make_base(KernelKind::Matern32, {"x", "y"}, 1.0, {0.7, 1.3}));
  auto k2 = KernelExpr::leaf(
      make_base(KernelKind::Matern32, {"x", "y"}, 2.5, {0.7, 1.3}));
  k1.bind({"x", "y"});
  k2.bind({"x", "y"});
  CHECK((eval_kernel(k2, X) - 2.5 * eval_kernel(k1, X)).cwiseAbs().maxCoeff() <
        1e-14);
}

TEST_CASE("gram matrices are symmetric PSD with unit diagonal scaling") {
  MatrixXd X = random_inputs(30, 3, 7);
  auto k = composite_kernel();
  MatrixXd K = eval_kernel(k, X);
  REQUIRE(K.rows() == 30);
  CHECK((K - K.transpose()).cwiseAbs().maxCoeff() == 0.0);  // mirrored exactly
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(K);
  REQUIRE(es.info() == Eigen::Success);
  CHECK(es.eigenvalues().minCoeff() > -1e-10 * K.diagonal().mean() * K.rows());
  // diagonal equals summed leaf variances: 1.3 + 0.7 * 0.5
  CHECK(K(4, 4) == Approx(1.3 + 0.35).epsilon(1e-12));
  CHECK((eval_kernel_diag(k, X) - K.diagonal()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("sum and product nodes compose leaf grams pointwise") {
  MatrixXd X = random_inputs(9, 3, 3);
  auto a = KernelExpr::leaf(
      make_base(KernelKind::SquaredExponential, {"a", "b"}, 1.3, {0.9, 1.4}));
  auto b = KernelExpr::leaf(make_base(KernelKind::Matern52, {"c"}, 0.7, {1.1}));
  a.bind({"a", "b", "c"});
  b.bind({"a", "b", "c"});
  MatrixXd Ka = eval_kernel(a, X), Kb = eval_kernel(b, X);

  std::vector<KernelExpr> two;
  two.push_back(a);
  two.push_back(b);
  auto s = KernelExpr::sum(two);
  auto p = KernelExpr::product(two);
  CHECK((eval_kernel(s, X) - (Ka + Kb)).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((eval_kernel(p, X) - Ka.cwiseProduct(Kb)).cwiseAbs().maxCoeff() <
        1e-14);
}

TEST_CASE("ARD with equal lengthscales matches the shared lengthscale") {
  MatrixXd X = random_inputs(8, 2, 19);
  auto ard = KernelExpr::leaf(
      make_base(KernelKind::Matern52, {"x", "y"}, 1.0, {0.6, 0.6}, true));
  auto iso = KernelExpr::leaf(
      make_base(KernelKind::Matern52, {"x", "y"}, 1.0, {0.6}, false));
  ard.bind({"x", "y"});
  iso.bind({"x", "y"});
  CHECK((eval_kernel(ard, X) - eval_kernel(iso, X)).cwiseAbs().maxCoeff() <
        1e-14);
}

TEST_CASE("rescaling a feature and its lengthscale leaves the gram fixed") {
  MatrixXd X = random_inputs(10, 2, 23);
  auto k1 = KernelExpr::leaf(
      make_base(KernelKind::SquaredExponential, {"x", "y"}, 1.0, {0.8, 1.7}));
  auto k2 = KernelExpr::leaf(
      make_base(KernelKind::SquaredExponential, {"x", "y"}, 1.0,
                {0.8 * 25.0, 1.7}));
  k1.bind({"x", "y"});
  k2.bind({"x", "y"});
  MatrixXd Xs = X;
  Xs.col(0) *= 25.0;
  CHECK((eval_kernel(k1, X) - eval_kernel(k2, Xs)).cwiseAbs().maxCoeff() <
        1e-12);
}

TEST_CASE("kernel gradients match central differences in log space") {
  MatrixXd X = random_inputs(7, 3, 41);
  auto k = composite_kernel();
  auto grads = kernel_gradients(k, X);
  REQUIRE(static_cast<Eigen::Index>(grads.size()) == k.param_count());

  const double h = 1e-5;
  VectorXd u0 = k.pack();
  for (Eigen::Index p = 0; p < u0.size(); ++p) {
    VectorXd up = u0, um = u0;
    up[p] += h;
    um[p] -= h;
    KernelExpr kp = k, km = k;
    kp.unpack(up);
    km.unpack(um);
    MatrixXd fd = (eval_kernel(kp, X) - eval_kernel(km, X)) / (2.0 * h);
    const double err = (fd - grads[p]).cwiseAbs().maxCoeff();
    INFO("param " << k.param_names()[p]);
    CHECK(err < 1e-7);
  }
}

TEST_CASE("weighted contractions agree with materialized gradients") {
  MatrixXd A = random_inputs(6, 3, 5);
  MatrixXd B = random_inputs(9, 3, 6);
  MatrixXd W = random_inputs(6, 9, 77);
  auto k = composite_kernel();

  auto grads = kernel_gradients(k, A, B);
  VectorXd contracted = weighted_param_grads(k, A, B, W);
  for (std::size_t p = 0; p < grads.size(); ++p)
    CHECK(contracted[p] ==
          Approx(W.cwiseProduct(grads[p]).sum()).margin(1e-10));

  VectorXd w = VectorXd::LinSpaced(6, 0.5, 2.0);
  VectorXd dg = weighted_diag_grads(k, A, w);
  // only variance entries survive on the diagonal of stationary kernels
  auto names = k.param_names();
  for (Eigen::Index p = 0; p < dg.size(); ++p) {
    if (names[p].find("variance") == std::string::npos) {
      CHECK(dg[p] == 0.0);
    }
  }
  // d diag / d u_var = leaf variance * cofactor diag
  CHECK(dg[0] == Approx(1.3 * w.sum()).epsilon(1e-12));
  CHECK(dg[3] == Approx(0.7 * 0.5 * w.sum()).epsilon(1e-12));  // m52 * per
}

TEST_CASE("input gradients match central differences") {
  MatrixXd A = random_inputs(5, 3, 15);
  MatrixXd B = random_inputs(8, 3, 16);
  MatrixXd W = random_inputs(5, 8, 17);
  auto k = composite_kernel();

  MatrixXd G = weighted_input_grads(k, A, B, W);
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    for (Eigen::Index d = 0; d < A.cols(); ++d) {
      MatrixXd Ap = A, Am = A;
      Ap(i, d) += h;
      Am(i, d) -= h;
      const double fd = (W.cwiseProduct(eval_kernel(k, Ap, B)).sum() -
                         W.cwiseProduct(eval_kernel(k, Am, B)).sum()) /
                        (2.0 * h);
      CHECK(G(i, d) == Approx(fd).margin(1e-6));
    }
  }
}

TEST_CASE("parser handles precedence, parentheses, and case") {
  auto e = parse_kernel_expr("SE(x, y) + mat32(elev) * Periodic(t)");
  REQUIRE(e.node() == KernelExpr::Node::Sum);
  REQUIRE(e.children().size() == 2);
  CHECK(e.children()[0].base().kind == KernelKind::SquaredExponential);
  CHECK(e.children()[0].base().features ==
        std::vector<std::string>{"x", "y"});
  REQUIRE(e.children()[1].node() == KernelExpr::Node::Product);
  CHECK(e.children()[1].children()[0].base().kind == KernelKind::Matern32);
  CHECK(e.children()[1].children()[1].base().kind == KernelKind::Periodic);

  auto g = parse_kernel_expr("(SE(x) + Mat32(y)) * Mat52(z)");
  REQUIRE(g.node() == KernelExpr::Node::Product);
  CHECK(g.children()[0].node() == KernelExpr::Node::Sum);
  CHECK(g.children()[1].is_leaf());
}

TEST_CASE("parser rejects malformed expressions") {
  CHECK_THROWS_AS(parse_kernel_expr("RQ(x)"), UnknownKernel);
  CHECK_THROWS_AS(parse_kernel_expr("SE(x"), SyntaxError);
  CHECK_THROWS_AS(parse_kernel_expr("SE()"), SyntaxError);
  CHECK_THROWS_AS(parse_kernel_expr("SE(x)) "), SyntaxError);
  CHECK_THROWS_AS(parse_kernel_expr("SE(x) + "), SyntaxError);
  CHECK_THROWS_AS(parse_kernel_expr(""), SyntaxError);
  CHECK_THROWS_AS(parse_kernel_expr("Periodic(x, y)"), ArityError);
  CHECK_THROWS_AS(parse_kernel_expr("SE(x, x)"), ArityError);
}

TEST_CASE("print and reparse preserve structure") {
  const char* exprs[] = {
      "SE(x)",
      "SE(x, y) + Mat32(elev) * Periodic(t)",
      "(SE(x) + Mat32(y)) * (Mat52(z) + SE(w))",
      "Mat32(x, y, elev) + Mat32(ocean_dist)",
  };
  for (const char* s : exprs) {
    auto e = parse_kernel_expr(s);
    auto round = parse_kernel_expr(print_kernel_expr(e));
    CHECK(structurally_equal(e, round));
  }
  CHECK(print_kernel_expr(parse_kernel_expr("se(x,y)+mat32(z)*mat52(w)")) ==
        "SE(x, y) + Mat32(z) * Mat52(w)");
}

TEST_CASE("bind resolves features and sizes lengthscales") {
  auto e = parse_kernel_expr("SE(x, y) + Periodic(t)");
  CHECK_THROWS_AS(e.bind({"x", "y"}), UnknownFeature);
  e.bind({"t", "x", "y"});
  CHECK(e.children()[0].base().feature_idx ==
        std::vector<Eigen::Index>{1, 2});
  CHECK(e.children()[0].base().lengthscales.size() == 2);  // ARD default
  CHECK(e.children()[1].base().lengthscales.size() == 1);

  auto iso = parse_kernel_expr("SE(x, y)");
  iso.base().ard = false;
  iso.bind({"x", "y"});
  CHECK(iso.base().lengthscales.size() == 1);
}

TEST_CASE("pack, unpack, and parameter names stay aligned") {
  auto e = parse_kernel_expr("SE(x, y) + Periodic(t)");
  e.bind({"x", "y", "t"});
  auto names = e.param_names();
  std::vector<std::string> want = {"k0.variance",      "k0.lengthscale.x",
                                   "k0.lengthscale.y", "k1.variance",
                                   "k1.lengthscale",   "k1.period"};
  CHECK(names == want);

  VectorXd u = e.pack();
  REQUIRE(u.size() == 6);
  u[1] = std::log(3.5);
  e.unpack(u);
  CHECK(e.children()[0].base().lengthscales[0].value() == Approx(3.5));
  CHECK(e.pack()[1] == Approx(std::log(3.5)));
}

TEST_CASE("log priors accumulate over parameters with priors set") {
  auto e = parse_kernel_expr("SE(x)");
  e.bind({"x"});
  e.base().variance.set_value(std::exp(0.3));
  e.base().variance.set_prior({0.0, 1.0});
  const double expect = -0.5 * 0.09 - 0.5 * std::log(2.0 * M_PI);
  CHECK(e.log_prior() == Approx(expect).epsilon(1e-12));
  VectorXd g = e.log_prior_gradient();
  CHECK(g[0] == Approx(-0.3).epsilon(1e-12));
  CHECK(g[1] == 0.0);  // no prior on the lengthscale
}

TEST_CASE("bounds project values into range") {
  HyperParam p("lengthscale", 1.0);
  p.set_bounds({0.5, 2.0});
  p.set_value(10.0);
  CHECK(p.value() == Approx(2.0));
  p.set_log_value(std::log(0.01));
  CHECK(p.value() == Approx(0.5));
  CHECK_THROWS_AS(p.set_value(-1.0), ConfigError);
}
