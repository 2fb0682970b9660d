#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "gpreg/errors.hpp"
#include "gpreg/hyperparam.hpp"

namespace gpreg {

enum class KernelKind { SquaredExponential, Matern32, Matern52, Periodic };

inline const char* kernel_kind_name(KernelKind k) {
  switch (k) {
    case KernelKind::SquaredExponential: return "SE";
    case KernelKind::Matern32: return "Mat32";
    case KernelKind::Matern52: return "Mat52";
    case KernelKind::Periodic: return "Periodic";
  }
  return "?";
}

inline KernelKind kernel_kind_from_string(const std::string& name) {
  std::string low(name);
  std::transform(low.begin(), low.end(), low.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  if (low == "se") return KernelKind::SquaredExponential;
  if (low == "mat32") return KernelKind::Matern32;
  if (low == "mat52") return KernelKind::Matern52;
  if (low == "periodic") return KernelKind::Periodic;
  throw UnknownKernel("unknown kernel '" + name +
                      "' (known: SE, Mat32, Mat52, Periodic)");
}

// One stationary covariance over a feature subspace. feature_idx is resolved
// against a concrete column order by KernelExpr::bind() before evaluation.
struct BaseKernel {
  KernelKind kind = KernelKind::SquaredExponential;
  std::vector<std::string> features;
  std::vector<Eigen::Index> feature_idx;
  bool ard = true;
  HyperParam variance{"variance", 1.0};
  std::vector<HyperParam> lengthscales;  // one per feature if ARD, else one
  HyperParam period{"period", 1.0};      // Periodic only

  Eigen::Index param_count() const {
    Eigen::Index n = 1 + static_cast<Eigen::Index>(lengthscales.size());
    if (kind == KernelKind::Periodic) ++n;
    return n;
  }
};

// Sum/product tree over base kernels. Value type; children are deep copies.
class KernelExpr {
 public:
  enum class Node { Leaf, Sum, Product };

  KernelExpr() = default;

  static KernelExpr leaf(BaseKernel base) {
    KernelExpr e;
    e.node_ = Node::Leaf;
    e.base_ = std::move(base);
    return e;
  }
  static KernelExpr sum(std::vector<KernelExpr> terms) {
    if (terms.empty()) throw Error("kernel sum needs at least one term");
    if (terms.size() == 1) return std::move(terms.front());
    KernelExpr e;
    e.node_ = Node::Sum;
    e.children_ = std::move(terms);
    return e;
  }
  static KernelExpr product(std::vector<KernelExpr> factors) {
    if (factors.empty()) throw Error("kernel product needs at least one factor");
    if (factors.size() == 1) return std::move(factors.front());
    KernelExpr e;
    e.node_ = Node::Product;
    e.children_ = std::move(factors);
    return e;
  }

  Node node() const { return node_; }
  bool is_leaf() const { return node_ == Node::Leaf; }
  const BaseKernel& base() const { return base_; }
  BaseKernel& base() { return base_; }
  const std::vector<KernelExpr>& children() const { return children_; }
  std::vector<KernelExpr>& children() { return children_; }

  template <class F>
  void for_each_leaf(F&& f) {
    if (node_ == Node::Leaf) {
      f(base_);
      return;
    }
    for (auto& c : children_) c.for_each_leaf(f);
  }
  template <class F>
  void for_each_leaf(F&& f) const {
    if (node_ == Node::Leaf) {
      f(base_);
      return;
    }
    for (const auto& c : children_) c.for_each_leaf(f);
  }

  // Resolves feature names to column positions and sizes lengthscale vectors
  // (missing ones default to 1). Throws UnknownFeature / ArityError.
  void bind(const std::vector<std::string>& columns) {
    for_each_leaf([&](BaseKernel& k) {
      if (k.features.empty())
        throw ArityError("kernel leaf needs at least one feature");
      if (k.kind == KernelKind::Periodic && k.features.size() != 1)
        throw ArityError("Periodic takes exactly one feature, got " +
                         std::to_string(k.features.size()));
      for (std::size_t a = 0; a < k.features.size(); ++a)
        for (std::size_t b = a + 1; b < k.features.size(); ++b)
          if (k.features[a] == k.features[b])
            throw ArityError("duplicate feature '" + k.features[a] +
                             "' in kernel leaf");
      k.feature_idx.clear();
      for (const auto& f : k.features) {
        auto it = std::find(columns.begin(), columns.end(), f);
        if (it == columns.end())
          throw UnknownFeature("kernel references unknown feature '" + f +
                               "'");
        k.feature_idx.push_back(it - columns.begin());
      }
      const std::size_t want = k.ard ? k.features.size() : 1;
      if (k.lengthscales.empty())
        k.lengthscales.assign(want, HyperParam("lengthscale", 1.0));
      else if (k.lengthscales.size() != want)
        throw ArityError("kernel leaf expects " + std::to_string(want) +
                         " lengthscale(s), got " +
                         std::to_string(k.lengthscales.size()));
    });
  }

  bool bound() const {
    bool ok = true;
    for_each_leaf([&](const BaseKernel& k) {
      if (k.feature_idx.size() != k.features.size() || k.lengthscales.empty())
        ok = false;
    });
    return ok;
  }

  template <class F>
  void visit_params(F&& f) {
    if (node_ == Node::Leaf) {
      f(base_.variance);
      for (auto& l : base_.lengthscales) f(l);
      if (base_.kind == KernelKind::Periodic) f(base_.period);
      return;
    }
    for (auto& c : children_) c.visit_params(f);
  }
  template <class F>
  void visit_params(F&& f) const {
    if (node_ == Node::Leaf) {
      f(base_.variance);
      for (const auto& l : base_.lengthscales) f(l);
      if (base_.kind == KernelKind::Periodic) f(base_.period);
      return;
    }
    for (const auto& c : children_) c.visit_params(f);
  }

  Eigen::Index param_count() const {
    Eigen::Index n = 0;
    for_each_leaf([&](const BaseKernel& k) { n += k.param_count(); });
    return n;
  }

  // Parameter vector in log space, leaves in depth-first order; per leaf:
  // variance, lengthscale(s), period.
  Eigen::VectorXd pack() const {
    Eigen::VectorXd u(param_count());
    Eigen::Index i = 0;
    visit_params([&](const HyperParam& p) { u[i++] = p.log_value(); });
    return u;
  }

  void unpack(const Eigen::VectorXd& u) {
    if (u.size() != param_count())
      throw Error("kernel unpack: expected " + std::to_string(param_count()) +
                  " values, got " + std::to_string(u.size()));
    Eigen::Index i = 0;
    visit_params([&](HyperParam& p) { p.set_log_value(u[i++]); });
  }

  // Addressed names: k0.variance, k0.lengthscale.x (ARD over >1 feature),
  // k1.lengthscale, k2.period, ... with leaves numbered depth-first.
  std::vector<std::string> param_names() const {
    std::vector<std::string> names;
    int leaf = 0;
    for_each_leaf([&](const BaseKernel& k) {
      const std::string p = "k" + std::to_string(leaf++);
      names.push_back(p + ".variance");
      if (k.ard && k.features.size() > 1) {
        for (const auto& f : k.features)
          names.push_back(p + ".lengthscale." + f);
      } else {
        for (std::size_t i = 0; i < std::max<std::size_t>(
                 k.lengthscales.empty() ? 1 : k.lengthscales.size(), 1); ++i)
          names.push_back(p + ".lengthscale");
      }
      if (k.kind == KernelKind::Periodic) names.push_back(p + ".period");
    });
    return names;
  }

  double log_prior() const {
    double lp = 0.0;
    visit_params([&](const HyperParam& p) { lp += p.log_prior_density(); });
    return lp;
  }

  Eigen::VectorXd log_prior_gradient() const {
    Eigen::VectorXd g(param_count());
    Eigen::Index i = 0;
    visit_params([&](const HyperParam& p) { g[i++] = p.log_prior_gradient(); });
    return g;
  }

 private:
  Node node_ = Node::Leaf;
  BaseKernel base_;
  std::vector<KernelExpr> children_;
};

namespace detail {

inline double radial_value(KernelKind kind, double r2) {
  switch (kind) {
    case KernelKind::SquaredExponential:
      return std::exp(-0.5 * r2);
    case KernelKind::Matern32: {
      const double t = std::sqrt(3.0 * r2);
      return (1.0 + t) * std::exp(-t);
    }
    case KernelKind::Matern52: {
      const double t = std::sqrt(5.0 * r2);
      return (1.0 + t + t * t / 3.0) * std::exp(-t);
    }
    default:
      return 0.0;
  }
}

// h(r) = -c'(r)/r, finite at r = 0. Lengthscale gradient in log space is
// s2 * h * (delta_d / l_d)^2; input gradient is -s2 * h * delta_d / l_d^2.
inline double radial_scale_factor(KernelKind kind, double r2) {
  switch (kind) {
    case KernelKind::SquaredExponential:
      return std::exp(-0.5 * r2);
    case KernelKind::Matern32:
      return 3.0 * std::exp(-std::sqrt(3.0 * r2));
    case KernelKind::Matern52: {
      const double t = std::sqrt(5.0 * r2);
      return (5.0 / 3.0) * (1.0 + t) * std::exp(-t);
    }
    default:
      return 0.0;
  }
}

struct LeafGeometry {
  const BaseKernel* k;
  double s2;
  std::vector<double> inv_l;  // per feature (shared entry repeated if not ARD)
  double period = 0.0;
};

inline LeafGeometry leaf_geometry(const BaseKernel& k, Eigen::Index cols_a,
                                  Eigen::Index cols_b) {
  if (k.feature_idx.size() != k.features.size() || k.lengthscales.empty())
    throw Error("kernel leaf not bound to a column layout");
  for (auto c : k.feature_idx)
    if (c < 0 || c >= cols_a || c >= cols_b)
      throw Error("kernel leaf bound against a different column layout");
  LeafGeometry g;
  g.k = &k;
  g.s2 = k.variance.value();
  g.inv_l.resize(k.features.size());
  for (std::size_t d = 0; d < k.features.size(); ++d) {
    const double l = k.lengthscales[k.ard ? d : 0].value();
    g.inv_l[d] = 1.0 / l;
  }
  if (k.kind == KernelKind::Periodic) g.period = k.period.value();
  return g;
}

inline double pair_r2(const LeafGeometry& g, const Eigen::MatrixXd& A,
                      Eigen::Index i, const Eigen::MatrixXd& B,
                      Eigen::Index j) {
  double r2 = 0.0;
  for (std::size_t d = 0; d < g.k->feature_idx.size(); ++d) {
    const double t =
        (A(i, g.k->feature_idx[d]) - B(j, g.k->feature_idx[d])) * g.inv_l[d];
    r2 += t * t;
  }
  return r2;
}

inline Eigen::MatrixXd leaf_value(const BaseKernel& k, const Eigen::MatrixXd& A,
                                  const Eigen::MatrixXd& B, bool symmetric) {
  const LeafGeometry g = leaf_geometry(k, A.cols(), B.cols());
  Eigen::MatrixXd out(A.rows(), B.rows());
  if (k.kind == KernelKind::Periodic) {
    const Eigen::Index c = k.feature_idx[0];
    const double inv_l2 = g.inv_l[0] * g.inv_l[0];
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
      for (Eigen::Index j = symmetric ? i : 0; j < B.rows(); ++j) {
        const double q = std::sin(M_PI * (A(i, c) - B(j, c)) / g.period);
        out(i, j) = g.s2 * std::exp(-2.0 * q * q * inv_l2);
      }
    }
  } else {
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
      for (Eigen::Index j = symmetric ? i : 0; j < B.rows(); ++j)
        out(i, j) = g.s2 * radial_value(k.kind, pair_r2(g, A, i, B, j));
    }
  }
  if (symmetric)
    out.triangularView<Eigen::StrictlyLower>() = out.transpose();
  return out;
}

// Fills grads[pos..pos+p) with d K / d u for this leaf's parameters
// (u = log value), in pack order.
inline void leaf_grads(const BaseKernel& k, const Eigen::MatrixXd& A,
                       const Eigen::MatrixXd& B, bool symmetric,
                       std::vector<Eigen::MatrixXd>& grads, std::size_t pos) {
  const LeafGeometry g = leaf_geometry(k, A.cols(), B.cols());
  const std::size_t nd = k.feature_idx.size();
  for (Eigen::Index p = 0; p < k.param_count(); ++p)
    grads[pos + p].setZero(A.rows(), B.rows());

  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    for (Eigen::Index j = symmetric ? i : 0; j < B.rows(); ++j) {
      if (k.kind == KernelKind::Periodic) {
        const Eigen::Index c = k.feature_idx[0];
        const double delta = A(i, c) - B(j, c);
        const double inv_l2 = g.inv_l[0] * g.inv_l[0];
        const double q = std::sin(M_PI * delta / g.period);
        const double v = g.s2 * std::exp(-2.0 * q * q * inv_l2);
        grads[pos + 0](i, j) = v;
        grads[pos + 1](i, j) = v * 4.0 * q * q * inv_l2;
        grads[pos + 2](i, j) = v * (2.0 * M_PI * delta / g.period) * inv_l2 *
                               std::sin(2.0 * M_PI * delta / g.period);
      } else {
        double r2 = 0.0;
        double sq[16];
        double* sqp = nd <= 16 ? sq : nullptr;
        std::vector<double> sq_dyn;
        if (!sqp) {
          sq_dyn.resize(nd);
          sqp = sq_dyn.data();
        }
        for (std::size_t d = 0; d < nd; ++d) {
          const double t = (A(i, k.feature_idx[d]) - B(j, k.feature_idx[d])) *
                           g.inv_l[d];
          sqp[d] = t * t;
          r2 += sqp[d];
        }
        const double v = g.s2 * radial_value(k.kind, r2);
        const double h = g.s2 * radial_scale_factor(k.kind, r2);
        grads[pos + 0](i, j) = v;
        if (k.ard) {
          for (std::size_t d = 0; d < nd; ++d)
            grads[pos + 1 + d](i, j) = h * sqp[d];
        } else {
          grads[pos + 1](i, j) = h * r2;
        }
      }
    }
  }
  if (symmetric) {
    for (Eigen::Index p = 0; p < k.param_count(); ++p)
      grads[pos + p].triangularView<Eigen::StrictlyLower>() =
          grads[pos + p].transpose();
  }
}

// out[pos..] += sum_ij W(i,j) * dK(i,j)/du, contracted on the fly.
inline void leaf_weighted_grads(const BaseKernel& k, const Eigen::MatrixXd& A,
                                const Eigen::MatrixXd& B,
                                const Eigen::MatrixXd& W, Eigen::VectorXd& out,
                                Eigen::Index pos) {
  const LeafGeometry g = leaf_geometry(k, A.cols(), B.cols());
  const std::size_t nd = k.feature_idx.size();
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    for (Eigen::Index j = 0; j < B.rows(); ++j) {
      const double w = W(i, j);
      if (w == 0.0) continue;
      if (k.kind == KernelKind::Periodic) {
        const Eigen::Index c = k.feature_idx[0];
        const double delta = A(i, c) - B(j, c);
        const double inv_l2 = g.inv_l[0] * g.inv_l[0];
        const double q = std::sin(M_PI * delta / g.period);
        const double v = g.s2 * std::exp(-2.0 * q * q * inv_l2);
        out[pos + 0] += w * v;
        out[pos + 1] += w * v * 4.0 * q * q * inv_l2;
        out[pos + 2] += w * v * (2.0 * M_PI * delta / g.period) * inv_l2 *
                        std::sin(2.0 * M_PI * delta / g.period);
      } else {
        double r2 = 0.0;
        double sq[16];
        std::vector<double> sq_dyn;
        double* sqp = sq;
        if (nd > 16) {
          sq_dyn.resize(nd);
          sqp = sq_dyn.data();
        }
        for (std::size_t d = 0; d < nd; ++d) {
          const double t = (A(i, k.feature_idx[d]) - B(j, k.feature_idx[d])) *
                           g.inv_l[d];
          sqp[d] = t * t;
          r2 += sqp[d];
        }
        const double v = g.s2 * radial_value(k.kind, r2);
        const double h = g.s2 * radial_scale_factor(k.kind, r2);
        out[pos + 0] += w * v;
        if (k.ard) {
          for (std::size_t d = 0; d < nd; ++d) out[pos + 1 + d] += w * h * sqp[d];
        } else {
          out[pos + 1] += w * h * r2;
        }
      }
    }
  }
}

// out(i, col_d) += sum_j W(i,j) * d k(a_i, b_j) / d a_i[d]
inline void leaf_weighted_input_grads(const BaseKernel& k,
                                      const Eigen::MatrixXd& A,
                                      const Eigen::MatrixXd& B,
                                      const Eigen::MatrixXd& W,
                                      Eigen::MatrixXd& out) {
  const LeafGeometry g = leaf_geometry(k, A.cols(), B.cols());
  const std::size_t nd = k.feature_idx.size();
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    for (Eigen::Index j = 0; j < B.rows(); ++j) {
      const double w = W(i, j);
      if (w == 0.0) continue;
      if (k.kind == KernelKind::Periodic) {
        const Eigen::Index c = k.feature_idx[0];
        const double delta = A(i, c) - B(j, c);
        const double inv_l2 = g.inv_l[0] * g.inv_l[0];
        const double q = std::sin(M_PI * delta / g.period);
        const double v = g.s2 * std::exp(-2.0 * q * q * inv_l2);
        out(i, c) -= w * v * (2.0 * M_PI / g.period) * inv_l2 *
                     std::sin(2.0 * M_PI * delta / g.period);
      } else {
        const double r2 = pair_r2(g, A, i, B, j);
        const double h = g.s2 * radial_scale_factor(k.kind, r2);
        for (std::size_t d = 0; d < nd; ++d) {
          const Eigen::Index c = k.feature_idx[d];
          const double delta = A(i, c) - B(j, c);
          out(i, c) -= w * h * delta * g.inv_l[d] * g.inv_l[d];
        }
      }
    }
  }
}

inline Eigen::MatrixXd eval_rec(const KernelExpr& e, const Eigen::MatrixXd& A,
                                const Eigen::MatrixXd& B, bool symmetric) {
  switch (e.node()) {
    case KernelExpr::Node::Leaf:
      return leaf_value(e.base(), A, B, symmetric);
    case KernelExpr::Node::Sum: {
      Eigen::MatrixXd out = eval_rec(e.children()[0], A, B, symmetric);
      for (std::size_t i = 1; i < e.children().size(); ++i)
        out += eval_rec(e.children()[i], A, B, symmetric);
      return out;
    }
    case KernelExpr::Node::Product: {
      Eigen::MatrixXd out = eval_rec(e.children()[0], A, B, symmetric);
      for (std::size_t i = 1; i < e.children().size(); ++i)
        out = out.cwiseProduct(eval_rec(e.children()[i], A, B, symmetric));
      return out;
    }
  }
  throw Error("unreachable kernel node");
}

inline void grads_rec(const KernelExpr& e, const Eigen::MatrixXd& A,
                      const Eigen::MatrixXd& B, bool symmetric,
                      std::vector<Eigen::MatrixXd>& grads, std::size_t& pos) {
  switch (e.node()) {
    case KernelExpr::Node::Leaf: {
      leaf_grads(e.base(), A, B, symmetric, grads, pos);
      pos += e.base().param_count();
      return;
    }
    case KernelExpr::Node::Sum: {
      for (const auto& c : e.children()) grads_rec(c, A, B, symmetric, grads, pos);
      return;
    }
    case KernelExpr::Node::Product: {
      const std::size_t q = e.children().size();
      std::vector<Eigen::MatrixXd> vals(q);
      for (std::size_t i = 0; i < q; ++i)
        vals[i] = eval_rec(e.children()[i], A, B, symmetric);
      for (std::size_t i = 0; i < q; ++i) {
        const std::size_t start = pos;
        grads_rec(e.children()[i], A, B, symmetric, grads, pos);
        Eigen::MatrixXd cof = Eigen::MatrixXd::Ones(A.rows(), B.rows());
        for (std::size_t j = 0; j < q; ++j)
          if (j != i) cof = cof.cwiseProduct(vals[j]);
        for (std::size_t p = start; p < pos; ++p)
          grads[p] = grads[p].cwiseProduct(cof);
      }
      return;
    }
  }
  throw Error("unreachable kernel node");
}

inline void weighted_grads_rec(const KernelExpr& e, const Eigen::MatrixXd& A,
                               const Eigen::MatrixXd& B,
                               const Eigen::MatrixXd& W, Eigen::VectorXd& out,
                               Eigen::Index& pos) {
  switch (e.node()) {
    case KernelExpr::Node::Leaf: {
      leaf_weighted_grads(e.base(), A, B, W, out, pos);
      pos += e.base().param_count();
      return;
    }
    case KernelExpr::Node::Sum: {
      for (const auto& c : e.children()) weighted_grads_rec(c, A, B, W, out, pos);
      return;
    }
    case KernelExpr::Node::Product: {
      const std::size_t q = e.children().size();
      std::vector<Eigen::MatrixXd> vals(q);
      for (std::size_t i = 0; i < q; ++i)
        vals[i] = eval_rec(e.children()[i], A, B, false);
      for (std::size_t i = 0; i < q; ++i) {
        Eigen::MatrixXd Wi = W;
        for (std::size_t j = 0; j < q; ++j)
          if (j != i) Wi = Wi.cwiseProduct(vals[j]);
        weighted_grads_rec(e.children()[i], A, B, Wi, out, pos);
      }
      return;
    }
  }
  throw Error("unreachable kernel node");
}

inline void weighted_input_grads_rec(const KernelExpr& e,
                                     const Eigen::MatrixXd& A,
                                     const Eigen::MatrixXd& B,
                                     const Eigen::MatrixXd& W,
                                     Eigen::MatrixXd& out) {
  switch (e.node()) {
    case KernelExpr::Node::Leaf:
      leaf_weighted_input_grads(e.base(), A, B, W, out);
      return;
    case KernelExpr::Node::Sum:
      for (const auto& c : e.children())
        weighted_input_grads_rec(c, A, B, W, out);
      return;
    case KernelExpr::Node::Product: {
      const std::size_t q = e.children().size();
      std::vector<Eigen::MatrixXd> vals(q);
      for (std::size_t i = 0; i < q; ++i)
        vals[i] = eval_rec(e.children()[i], A, B, false);
      for (std::size_t i = 0; i < q; ++i) {
        Eigen::MatrixXd Wi = W;
        for (std::size_t j = 0; j < q; ++j)
          if (j != i) Wi = Wi.cwiseProduct(vals[j]);
        weighted_input_grads_rec(e.children()[i], A, B, Wi, out);
      }
      return;
    }
  }
  throw Error("unreachable kernel node");
}

inline Eigen::VectorXd diag_rec(const KernelExpr& e, const Eigen::MatrixXd& A) {
  switch (e.node()) {
    case KernelExpr::Node::Leaf: {
      const LeafGeometry g = leaf_geometry(e.base(), A.cols(), A.cols());
      return Eigen::VectorXd::Constant(A.rows(), g.s2);
    }
    case KernelExpr::Node::Sum: {
      Eigen::VectorXd out = diag_rec(e.children()[0], A);
      for (std::size_t i = 1; i < e.children().size(); ++i)
        out += diag_rec(e.children()[i], A);
      return out;
    }
    case KernelExpr::Node::Product: {
      Eigen::VectorXd out = diag_rec(e.children()[0], A);
      for (std::size_t i = 1; i < e.children().size(); ++i)
        out = out.cwiseProduct(diag_rec(e.children()[i], A));
      return out;
    }
  }
  throw Error("unreachable kernel node");
}

// Stationary leaves have constant diagonal s2, so only variance entries get
// nonzero diagonal gradients.
inline void weighted_diag_grads_rec(const KernelExpr& e,
                                    const Eigen::MatrixXd& A,
                                    const Eigen::VectorXd& w,
                                    Eigen::VectorXd& out, Eigen::Index& pos) {
  switch (e.node()) {
    case KernelExpr::Node::Leaf: {
      const LeafGeometry g = leaf_geometry(e.base(), A.cols(), A.cols());
      out[pos] += g.s2 * w.sum();
      pos += e.base().param_count();
      return;
    }
    case KernelExpr::Node::Sum: {
      for (const auto& c : e.children())
        weighted_diag_grads_rec(c, A, w, out, pos);
      return;
    }
    case KernelExpr::Node::Product: {
      const std::size_t q = e.children().size();
      std::vector<Eigen::VectorXd> vals(q);
      for (std::size_t i = 0; i < q; ++i) vals[i] = diag_rec(e.children()[i], A);
      for (std::size_t i = 0; i < q; ++i) {
        Eigen::VectorXd wi = w;
        for (std::size_t j = 0; j < q; ++j)
          if (j != i) wi = wi.cwiseProduct(vals[j]);
        weighted_diag_grads_rec(e.children()[i], A, wi, out, pos);
      }
      return;
    }
  }
  throw Error("unreachable kernel node");
}

}  // namespace detail

inline Eigen::MatrixXd eval_kernel(const KernelExpr& k, const Eigen::MatrixXd& A,
                                   const Eigen::MatrixXd& B) {
  return detail::eval_rec(k, A, B, false);
}

inline Eigen::MatrixXd eval_kernel(const KernelExpr& k,
                                   const Eigen::MatrixXd& X) {
  return detail::eval_rec(k, X, X, true);
}

inline Eigen::VectorXd eval_kernel_diag(const KernelExpr& k,
                                        const Eigen::MatrixXd& X) {
  return detail::diag_rec(k, X);
}

// d K / d u_p for every kernel parameter, pack order.
inline std::vector<Eigen::MatrixXd> kernel_gradients(const KernelExpr& k,
                                                     const Eigen::MatrixXd& X) {
  std::vector<Eigen::MatrixXd> grads(k.param_count());
  std::size_t pos = 0;
  detail::grads_rec(k, X, X, true, grads, pos);
  return grads;
}

inline std::vector<Eigen::MatrixXd> kernel_gradients(const KernelExpr& k,
                                                     const Eigen::MatrixXd& A,
                                                     const Eigen::MatrixXd& B) {
  std::vector<Eigen::MatrixXd> grads(k.param_count());
  std::size_t pos = 0;
  detail::grads_rec(k, A, B, false, grads, pos);
  return grads;
}

// sum_ij W(i,j) dK(A,B)(i,j)/du_p without materializing per-parameter
// matrices. The exact-GP likelihood gradient and the sparse bound both
// reduce to contractions of this form.
inline Eigen::VectorXd weighted_param_grads(const KernelExpr& k,
                                            const Eigen::MatrixXd& A,
                                            const Eigen::MatrixXd& B,
                                            const Eigen::MatrixXd& W) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(k.param_count());
  Eigen::Index pos = 0;
  detail::weighted_grads_rec(k, A, B, W, out, pos);
  return out;
}

// sum_i w_i * d diag(K(X,X))_i / du_p
inline Eigen::VectorXd weighted_diag_grads(const KernelExpr& k,
                                           const Eigen::MatrixXd& X,
                                           const Eigen::VectorXd& w) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(k.param_count());
  Eigen::Index pos = 0;
  detail::weighted_diag_grads_rec(k, X, w, out, pos);
  return out;
}

// out(i, d) = sum_j W(i,j) * d k(a_i, b_j) / d a_i[d]; rows of A are treated
// as free inputs (used for inducing-point gradients).
inline Eigen::MatrixXd weighted_input_grads(const KernelExpr& k,
                                            const Eigen::MatrixXd& A,
                                            const Eigen::MatrixXd& B,
                                            const Eigen::MatrixXd& W) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(A.rows(), A.cols());
  detail::weighted_input_grads_rec(k, A, B, W, out);
  return out;
}

}  // namespace gpreg
