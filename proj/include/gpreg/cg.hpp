#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>

#include "gpreg/errors.hpp"

namespace gpreg {

struct CGOptions {
  double tol = 1e-8;  // on relative residual |Ax - b| / |b|
  int max_iters = 1000;
};

struct CGResult {
  Eigen::VectorXd x;
  int iterations = 0;
  double residual = 0.0;  // relative
};

// Preconditioned conjugate gradients for SPD operators given as a matvec.
// Optional Jacobi preconditioner (diagonal of A). Throws NoConvergence when
// the tolerance is not reached within max_iters.
inline CGResult solve_cg(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& matvec,
    const Eigen::VectorXd& b, CGOptions opt = {},
    const Eigen::VectorXd* jacobi = nullptr) {
  const double bnorm = b.norm();
  CGResult out;
  out.x = Eigen::VectorXd::Zero(b.size());
  if (bnorm == 0.0) return out;

  Eigen::VectorXd r = b;  // residual for x = 0
  auto precond = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
    if (!jacobi) return v;
    return v.cwiseQuotient(*jacobi);
  };
  Eigen::VectorXd z = precond(r);
  Eigen::VectorXd p = z;
  double rz = r.dot(z);

  for (int it = 1; it <= opt.max_iters; ++it) {
    const Eigen::VectorXd Ap = matvec(p);
    const double pAp = p.dot(Ap);
    if (!(pAp > 0.0))
      throw NumericError("CG: operator is not positive definite (p'Ap = " +
                         std::to_string(pAp) + ")");
    const double alpha = rz / pAp;
    out.x += alpha * p;
    r -= alpha * Ap;
    out.iterations = it;
    out.residual = r.norm() / bnorm;
    if (out.residual <= opt.tol) return out;
    z = precond(r);
    const double rz_new = r.dot(z);
    p = z + (rz_new / rz) * p;
    rz = rz_new;
  }
  throw NoConvergence("CG did not reach tol " + std::to_string(opt.tol) +
                      " in " + std::to_string(opt.max_iters) +
                      " iterations (residual " +
                      std::to_string(out.residual) + ")");
}

}  // namespace gpreg
