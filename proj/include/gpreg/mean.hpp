#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "gpreg/errors.hpp"

namespace gpreg {

// Prior mean over inputs. Parameters live in plain (unconstrained) space and
// only enter the optimizer when learnable is set.
struct MeanSpec {
  enum class Kind { Zero, Constant, Linear };

  Kind kind = Kind::Zero;
  bool learnable = false;
  double constant = 0.0;
  Eigen::VectorXd weights;  // Linear: one per input column
  double intercept = 0.0;

  void ensure_dims(Eigen::Index d) {
    if (kind == Kind::Linear && weights.size() == 0)
      weights = Eigen::VectorXd::Zero(d);
  }

  Eigen::VectorXd evaluate(const Eigen::MatrixXd& X) const {
    switch (kind) {
      case Kind::Zero:
        return Eigen::VectorXd::Zero(X.rows());
      case Kind::Constant:
        return Eigen::VectorXd::Constant(X.rows(), constant);
      case Kind::Linear:
        if (weights.size() != X.cols())
          throw LengthMismatch("linear mean has " +
                               std::to_string(weights.size()) +
                               " weights for " + std::to_string(X.cols()) +
                               " input columns");
        return ((X * weights).array() + intercept).matrix();
    }
    throw Error("unreachable mean kind");
  }

  Eigen::Index param_count() const {
    if (!learnable) return 0;
    switch (kind) {
      case Kind::Zero: return 0;
      case Kind::Constant: return 1;
      case Kind::Linear: return weights.size() + 1;
    }
    return 0;
  }

  Eigen::VectorXd pack() const {
    Eigen::VectorXd v(param_count());
    if (!learnable) return v;
    if (kind == Kind::Constant) v[0] = constant;
    if (kind == Kind::Linear) {
      v.head(weights.size()) = weights;
      v[weights.size()] = intercept;
    }
    return v;
  }

  void unpack(const Eigen::VectorXd& v) {
    if (v.size() != param_count())
      throw Error("mean unpack: wrong parameter count");
    if (!learnable) return;
    if (kind == Kind::Constant) constant = v[0];
    if (kind == Kind::Linear) {
      weights = v.head(weights.size());
      intercept = v[weights.size()];
    }
  }

  std::vector<std::string> param_names() const {
    std::vector<std::string> names;
    if (!learnable) return names;
    if (kind == Kind::Constant) names.push_back("mean.constant");
    if (kind == Kind::Linear) {
      for (Eigen::Index i = 0; i < weights.size(); ++i)
        names.push_back("mean.w" + std::to_string(i));
      names.push_back("mean.intercept");
    }
    return names;
  }

  // n x param_count() matrix of d mean / d theta.
  Eigen::MatrixXd param_gradients(const Eigen::MatrixXd& X) const {
    Eigen::MatrixXd G(X.rows(), param_count());
    if (!learnable) return G;
    if (kind == Kind::Constant) G.col(0).setOnes();
    if (kind == Kind::Linear) {
      G.leftCols(weights.size()) = X;
      G.col(weights.size()).setOnes();
    }
    return G;
  }
};

}  // namespace gpreg
