#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "gpreg/errors.hpp"
#include "gpreg/gp.hpp"
#include "gpreg/train.hpp"

namespace gpreg {

// Exact inference on full tensor-product grids. When every input column
// takes values on its own axis and the rows enumerate the complete cross
// product, a product kernel with one factor per axis makes the covariance
// a Kronecker product of small per-axis matrices. Eigendecomposing each
// factor then gives the exact log marginal likelihood and solves in time
// that scales with the axis sizes instead of the full row count.

struct GridSpec {
  std::vector<Eigen::VectorXd> axes;      // sorted unique values per column
  std::vector<Eigen::Index> flat_of_row;  // dataset row -> flat grid index

  Eigen::Index total() const {
    Eigen::Index n = 1;
    for (const auto& a : axes) n *= a.size();
    return n;
  }
};

// Recognizes a full grid: every column's distinct values define an axis,
// the row count must equal the product of axis sizes, and every grid cell
// must appear exactly once. Flat indices run with the first column slowest
// (row-major over axes).
inline GridSpec infer_grid(const Eigen::MatrixXd& X) {
  if (X.rows() == 0) throw EmptyDataset("no rows to arrange on a grid");
  GridSpec g;
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    std::vector<double> vals(X.col(j).data(), X.col(j).data() + X.rows());
    std::sort(vals.begin(), vals.end());
    vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
    g.axes.emplace_back(
        Eigen::Map<const Eigen::VectorXd>(vals.data(), vals.size()));
  }
  Eigen::Index total = 1;
  for (const auto& a : g.axes) {
    if (total > X.rows() / a.size() + 1) throw InvalidGrid("grid overflows");
    total *= a.size();
  }
  if (total != X.rows())
    throw InvalidGrid("rows do not form a full grid: " +
                      std::to_string(X.rows()) + " rows vs " +
                      std::to_string(total) + " grid cells");

  g.flat_of_row.resize(X.rows());
  std::vector<char> seen(total, 0);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    Eigen::Index flat = 0;
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
      const auto& axis = g.axes[j];
      const double* lo =
          std::lower_bound(axis.data(), axis.data() + axis.size(), X(i, j));
      flat = flat * axis.size() + (lo - axis.data());
    }
    if (seen[flat])
      throw InvalidGrid("grid cell appears more than once (row " +
                        std::to_string(i) + ")");
    seen[flat] = 1;
    g.flat_of_row[i] = flat;
  }
  return g;
}

// y = (A_1 kron A_2 kron ... kron A_D) x, never forming the big matrix.
// Flat indexing matches infer_grid: axis 1 slowest, axis D fastest.
inline Eigen::VectorXd kron_matvec(const std::vector<Eigen::MatrixXd>& factors,
                                   Eigen::VectorXd x) {
  Eigen::Index n = 1;
  for (const auto& f : factors) {
    if (f.rows() != f.cols()) throw Error("kron factors must be square");
    n *= f.rows();
  }
  if (x.size() != n)
    throw LengthMismatch("kron operand has size " + std::to_string(x.size()) +
                         ", factors give " + std::to_string(n));
  // stride of axis d = product of later axis sizes; each contiguous
  // (stride x n_d) slice, read column-wise, exposes axis d as columns
  Eigen::Index stride = n;
  Eigen::VectorXd out(n);
  for (const auto& f : factors) {
    const Eigen::Index nd = f.rows();
    stride /= nd;
    const Eigen::Index block = stride * nd;
    for (Eigen::Index start = 0; start < n; start += block) {
      Eigen::Map<const Eigen::MatrixXd> S(x.data() + start, stride, nd);
      Eigen::Map<Eigen::MatrixXd> T(out.data() + start, stride, nd);
      T = S * f.transpose();
    }
    std::swap(x, out);
  }
  return x;
}

struct KroneckerSystem {
  GPModel model;
  GridSpec grid;
  std::vector<Eigen::MatrixXd> K;       // per-axis covariance factors
  std::vector<Eigen::MatrixXd> Q;       // per-axis eigenvectors
  std::vector<Eigen::VectorXd> lambda;  // per-axis eigenvalues
  Eigen::VectorXd lam;                  // combined eigenvalues, grid order
  Eigen::VectorXd y_grid;               // targets rearranged to grid order
  Eigen::VectorXd alpha;                // (K + noise I)^{-1} y, grid order
  double lml = 0.0;
};

namespace detail {

// The kernel must multiply one leaf per grid axis, each leaf on exactly
// that axis's feature. Returns leaves ordered by axis.
inline std::vector<const KernelExpr*> axis_leaves(const KernelExpr& k,
                                                  std::size_t num_axes) {
  std::vector<const KernelExpr*> leaves(num_axes, nullptr);
  auto place = [&](const KernelExpr& leaf) {
    if (leaf.node() != KernelExpr::Node::Leaf)
      throw ConfigError(
          "grid mode needs a plain product of kernels, not nested sums");
    if (leaf.base().feature_idx.size() != 1)
      throw ConfigError("grid mode kernels must touch exactly one feature");
    const auto idx = static_cast<std::size_t>(leaf.base().feature_idx[0]);
    if (idx >= num_axes || leaves[idx])
      throw ConfigError("grid mode needs exactly one kernel per feature");
    leaves[idx] = &leaf;
  };
  if (k.node() == KernelExpr::Node::Leaf) {
    place(k);
  } else if (k.node() == KernelExpr::Node::Product) {
    for (const auto& c : k.children()) place(c);
  } else {
    throw ConfigError("grid mode needs a product kernel, one factor per axis");
  }
  for (const auto* l : leaves)
    if (!l) throw ConfigError("grid mode needs exactly one kernel per feature");
  return leaves;
}

// Embeds axis values into a full-width matrix so a leaf bound to feature j
// can be evaluated on its own axis without rebinding.
inline Eigen::MatrixXd axis_inputs(const GridSpec& g, std::size_t axis,
                                   Eigen::Index width) {
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(g.axes[axis].size(), width);
  X.col(static_cast<Eigen::Index>(axis)) = g.axes[axis];
  return X;
}

}  // namespace detail

inline KroneckerSystem kronecker_fit(const GPModel& model,
                                     const GridSpec& grid,
                                     const Eigen::VectorXd& y) {
  require_zero_mean(model, "grid mode");
  const Eigen::Index n = grid.total();
  if (y.size() != n)
    throw LengthMismatch("targets have " + std::to_string(y.size()) +
                         " rows, grid has " + std::to_string(n));
  if (!y.allFinite())
    throw NonFiniteInput("training targets contain NaN or infinity");
  const std::size_t D = grid.axes.size();
  const auto leaves = detail::axis_leaves(model.kernel, D);
  const Eigen::Index width = static_cast<Eigen::Index>(D);

  KroneckerSystem sys;
  sys.model = model;
  sys.grid = grid;
  sys.lam = Eigen::VectorXd::Ones(1);
  for (std::size_t d = 0; d < D; ++d) {
    const Eigen::MatrixXd Xd = detail::axis_inputs(grid, d, width);
    Eigen::MatrixXd Kd = eval_kernel(*leaves[d], Xd);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Kd);
    if (es.info() != Eigen::Success)
      throw EigenFailure("axis covariance eigendecomposition failed");
    sys.K.push_back(std::move(Kd));
    sys.Q.push_back(es.eigenvectors());
    // kernel factors are positive semidefinite; tiny negative eigenvalues
    // are roundoff
    sys.lambda.push_back(es.eigenvalues().cwiseMax(0.0));
    Eigen::VectorXd next(sys.lam.size() * sys.lambda.back().size());
    for (Eigen::Index i = 0; i < sys.lam.size(); ++i)
      next.segment(i * sys.lambda.back().size(), sys.lambda.back().size()) =
          sys.lam[i] * sys.lambda.back();
    sys.lam = std::move(next);
  }

  sys.y_grid.resize(n);
  for (Eigen::Index i = 0; i < n; ++i)
    sys.y_grid[grid.flat_of_row[i]] = y[i];

  std::vector<Eigen::MatrixXd> Qt;
  for (const auto& Qd : sys.Q) Qt.push_back(Qd.transpose());
  const double s2 = sys.model.noise.value();
  const Eigen::VectorXd w = kron_matvec(Qt, sys.y_grid);
  const Eigen::VectorXd wd = w.array() / (sys.lam.array() + s2);
  sys.alpha = kron_matvec(sys.Q, wd);

  sys.lml = -0.5 * (w.dot(wd) +
                    (sys.lam.array() + s2).log().sum() +
                    static_cast<double>(n) * std::log(2.0 * M_PI));
  return sys;
}

// Gradient of the grid log marginal likelihood with respect to the packed
// model parameters. For a parameter of axis d the covariance derivative is
// the Kronecker product with that one factor replaced, so both the
// quadratic term and the trace term reduce to per-axis pieces:
// diag(Q^T dK Q) is the Kronecker product of the per-axis diagonals.
inline Eigen::VectorXd kronecker_lml_gradient(const KroneckerSystem& sys) {
  const std::size_t D = sys.grid.axes.size();
  const auto leaves = detail::axis_leaves(sys.model.kernel, D);
  const Eigen::Index width = static_cast<Eigen::Index>(D);
  const double s2 = sys.model.noise.value();
  const Eigen::ArrayXd denom = sys.lam.array() + s2;

  // leaves in DFS order drive the packed layout; map axis -> packed offset
  std::vector<Eigen::Index> offset_of_axis(D, 0);
  {
    Eigen::Index off = 0;
    sys.model.kernel.for_each_leaf([&](const BaseKernel& b) {
      offset_of_axis[static_cast<std::size_t>(b.feature_idx[0])] = off;
      off += b.param_count();
    });
  }

  Eigen::VectorXd grad = Eigen::VectorXd::Zero(sys.model.param_count());
  for (std::size_t d = 0; d < D; ++d) {
    const Eigen::MatrixXd Xd = detail::axis_inputs(sys.grid, d, width);
    const auto dKs = kernel_gradients(*leaves[d], Xd);
    for (std::size_t p = 0; p < dKs.size(); ++p) {
      // quadratic part: alpha^T dK alpha with dK = K_1 kron .. dK_d .. K_D
      std::vector<Eigen::MatrixXd> factors = sys.K;
      factors[d] = dKs[p];
      const double quad = sys.alpha.dot(kron_matvec(factors, sys.alpha));

      // trace part: sum_i diag(Q^T dK Q)_i / (lam_i + noise); for the
      // untouched axes diag(Q^T K Q) is just the eigenvalues
      Eigen::VectorXd diag_prod = Eigen::VectorXd::Ones(1);
      for (std::size_t e = 0; e < D; ++e) {
        const Eigen::VectorXd piece =
            e == d ? (sys.Q[e].transpose() * dKs[p] * sys.Q[e])
                         .diagonal()
                         .eval()
                   : sys.lambda[e];
        Eigen::VectorXd next(diag_prod.size() * piece.size());
        for (Eigen::Index i = 0; i < diag_prod.size(); ++i)
          next.segment(i * piece.size(), piece.size()) =
              diag_prod[i] * piece;
        diag_prod = std::move(next);
      }
      const double trace = (diag_prod.array() / denom).sum();
      grad[offset_of_axis[d] + static_cast<Eigen::Index>(p)] =
          0.5 * (quad - trace);
    }
  }

  if (sys.model.noise_learnable) {
    const double quad = sys.alpha.squaredNorm();
    const double trace = (1.0 / denom).sum();
    grad[grad.size() - 1] = 0.5 * (quad - trace) * s2;  // log-space
  }
  return grad;
}

// Adam ascent on the grid objective (marginal likelihood plus priors),
// reusing the generic optimizer loop.
inline KroneckerSystem kronecker_optimize(const GPModel& model0,
                                          const GridSpec& grid,
                                          const Eigen::VectorXd& y,
                                          const TrainConfig& cfg) {
  GPModel model = model0;
  auto eval = [&](const Eigen::VectorXd& u, Eigen::VectorXd& grad) {
    model.unpack(u);
    const KroneckerSystem sys = kronecker_fit(model, grid, y);
    grad = kronecker_lml_gradient(sys) + model.log_prior_gradient();
    return sys.lml + model.log_prior();
  };
  auto project = [&](Eigen::VectorXd& u) {
    model.unpack(u);
    u = model.pack();
  };
  const AdamOutcome run = adam_maximize(eval, project, model.pack(), cfg);
  if (!std::isfinite(run.best_objective))
    throw NonFiniteObjective("grid objective never became finite");
  model.unpack(run.best_u);
  return kronecker_fit(model, grid, y);
}

inline PredictiveDistribution kronecker_predict(const KroneckerSystem& sys,
                                                const Eigen::MatrixXd& Xstar) {
  const std::size_t D = sys.grid.axes.size();
  if (Xstar.cols() != static_cast<Eigen::Index>(D))
    throw SchemaMismatch("prediction inputs have " +
                         std::to_string(Xstar.cols()) + " columns, expected " +
                         std::to_string(D));
  if (!Xstar.allFinite())
    throw NonFiniteInput("prediction inputs contain NaN or infinity");
  const auto leaves = detail::axis_leaves(sys.model.kernel, D);
  const Eigen::Index width = static_cast<Eigen::Index>(D);
  const double s2 = sys.model.noise.value();

  PredictiveDistribution out;
  out.mean.resize(Xstar.rows());
  out.latent_variance.resize(Xstar.rows());
  const Eigen::VectorXd kss = eval_kernel_diag(sys.model.kernel, Xstar);

  for (Eigen::Index i = 0; i < Xstar.rows(); ++i) {
    // cross covariance to the grid is a Kronecker product of axis vectors
    Eigen::VectorXd ks = Eigen::VectorXd::Ones(1);
    Eigen::VectorXd qk = Eigen::VectorXd::Ones(1);  // Q^T ks, same pattern
    for (std::size_t d = 0; d < D; ++d) {
      Eigen::MatrixXd xrow = Eigen::MatrixXd::Zero(1, width);
      xrow(0, static_cast<Eigen::Index>(d)) = Xstar(i, d);
      const Eigen::MatrixXd Xd = detail::axis_inputs(sys.grid, d, width);
      const Eigen::VectorXd kd =
          eval_kernel(*leaves[d], xrow, Xd).row(0).transpose();
      const Eigen::VectorXd qd = sys.Q[d].transpose() * kd;
      auto extend = [](const Eigen::VectorXd& acc, const Eigen::VectorXd& v) {
        Eigen::VectorXd next(acc.size() * v.size());
        for (Eigen::Index a = 0; a < acc.size(); ++a)
          next.segment(a * v.size(), v.size()) = acc[a] * v;
        return next;
      };
      ks = extend(ks, kd);
      qk = extend(qk, qd);
    }
    out.mean[i] = ks.dot(sys.alpha);
    const double explained =
        (qk.array().square() / (sys.lam.array() + s2)).sum();
    double var = kss[i] - explained;
    if (var < 0.0) {
      var = 0.0;
      ++out.clamped;
    }
    out.latent_variance[i] = var;
  }
  out.observation_variance = out.latent_variance.array() + s2;
  return out;
}

}  // namespace gpreg
