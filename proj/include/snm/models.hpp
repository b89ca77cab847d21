#pragma once

// Bayesian binary regression posteriors under an isotropic N(0, sigma2 I) prior.

#include <cmath>
#include <memory>
#include <string>

#include "snm/errors.hpp"
#include "snm/linalg.hpp"
#include "snm/msn.hpp"
#include "snm/specialfns.hpp"

namespace snm {

// A log-density known up to a constant, with unmixed third derivatives.
class Target {
 public:
  virtual ~Target() = default;
  virtual Eigen::Index dim() const = 0;
  virtual double log_joint(const Vector& theta) const = 0;
  virtual Vector grad(const Vector& theta) const = 0;
  virtual Matrix hessian(const Vector& theta) const = 0;
  virtual Vector tud(const Vector& theta) const = 0;

 protected:
  void check_dim(const Vector& theta) const { require_same_size(dim(), theta.size(), "target: theta"); }
};

// Design X (intercept first), binary response y, and Z with rows (2 y_i - 1) x_i.
class GlmData {
 public:
  GlmData(Matrix X, Vector y) : X_(std::move(X)), y_(std::move(y)) {
    require_same_size(X_.rows(), y_.size(), "GlmData: y");
    if (X_.cols() < 1) throw DimensionError("GlmData: design needs at least one column");
    if (!X_.allFinite()) throw InputError("GlmData: non-finite design entry");
    for (Eigen::Index i = 0; i < y_.size(); ++i) {
      if (y_[i] != 0.0 && y_[i] != 1.0) throw InputError("GlmData: response must be 0 or 1");
      if (X_(i, 0) != 1.0) throw InputError("GlmData: first design column must be all ones");
    }
    Z_ = (2.0 * y_.array() - 1.0).matrix().asDiagonal() * X_;
  }

  Eigen::Index n() const { return X_.rows(); }
  Eigen::Index p() const { return X_.cols(); }
  const Matrix& X() const { return X_; }
  const Vector& y() const { return y_; }
  const Matrix& Z() const { return Z_; }

 private:
  Matrix X_;
  Vector y_;
  Matrix Z_;
};

enum class GlmKind { Probit, Logistic };

inline const char* to_string(GlmKind k) { return k == GlmKind::Probit ? "probit" : "logistic"; }

inline GlmKind glm_kind_from_string(const std::string& s) {
  if (s == "probit") return GlmKind::Probit;
  if (s == "logistic") return GlmKind::Logistic;
  throw InputError("unknown model kind '" + s + "'");
}

inline double log1pexp(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

class GlmModel final : public Target {
 public:
  GlmModel(GlmData data, GlmKind kind, double prior_variance = 1e4)
      : data_(std::move(data)), kind_(kind), s2_(prior_variance) {
    if (!(prior_variance > 0.0) || !std::isfinite(prior_variance)) {
      throw InputError("GlmModel: prior variance must be positive and finite");
    }
  }

  Eigen::Index dim() const override { return data_.p(); }
  const GlmData& data() const { return data_; }
  GlmKind kind() const { return kind_; }
  double prior_variance() const { return s2_; }

  double log_joint(const Vector& theta) const override {
    check_dim(theta);
    double ll = 0.0;
    if (kind_ == GlmKind::Probit) {
      const Vector eta = data_.Z() * theta;
      for (double e : eta) ll += log_norm_cdf(e);
    } else {
      const Vector eta = data_.X() * theta;
      for (Eigen::Index i = 0; i < eta.size(); ++i) ll += data_.y()[i] * eta[i] - log1pexp(eta[i]);
    }
    return ll - theta.squaredNorm() / (2.0 * s2_);
  }

  Vector grad(const Vector& theta) const override {
    check_dim(theta);
    Vector g;
    if (kind_ == GlmKind::Probit) {
      g = data_.Z().transpose() * zeta_vec(ZetaOrder(1), data_.Z() * theta);
    } else {
      g = data_.X().transpose() * (data_.y() - probabilities(theta));
    }
    return g - theta / s2_;
  }

  Matrix hessian(const Vector& theta) const override {
    check_dim(theta);
    Vector w;
    const Matrix* M;
    if (kind_ == GlmKind::Probit) {
      w = zeta_vec(ZetaOrder(2), data_.Z() * theta);
      M = &data_.Z();
    } else {
      const Vector pr = probabilities(theta);
      w = -(pr.array() * (1.0 - pr.array())).matrix();
      M = &data_.X();
    }
    Matrix h = M->transpose() * w.asDiagonal() * *M;
    h.diagonal().array() -= 1.0 / s2_;
    return 0.5 * (h + h.transpose());
  }

  Vector tud(const Vector& theta) const override {
    check_dim(theta);
    if (kind_ == GlmKind::Probit) {
      return data_.Z().array().cube().matrix().transpose() * zeta_vec(ZetaOrder(3), data_.Z() * theta);
    }
    const Vector pr = probabilities(theta);
    const Vector w = -(pr.array() * (1.0 - pr.array()) * (1.0 - 2.0 * pr.array())).matrix();
    return data_.X().array().cube().matrix().transpose() * w;
  }

 private:
  Vector probabilities(const Vector& theta) const {
    Vector eta = data_.X() * theta;
    for (double& e : eta) e = logistic(e);
    return eta;
  }

  GlmData data_;
  GlmKind kind_;
  double s2_;
};

// An MSN density as a target; its statistics are known in closed form.
class MsnTarget final : public Target {
 public:
  explicit MsnTarget(MsnParams params) : p_(std::move(params)) {}

  Eigen::Index dim() const override { return p_.dim(); }
  const MsnParams& params() const { return p_; }
  double log_joint(const Vector& t) const override {
    check_dim(t);
    return log_density(p_, t);
  }
  Vector grad(const Vector& t) const override {
    check_dim(t);
    return grad_log_density(p_, t);
  }
  Matrix hessian(const Vector& t) const override {
    check_dim(t);
    return hessian_log_density(p_, t);
  }
  Vector tud(const Vector& t) const override {
    check_dim(t);
    return tud_log_density(p_, t);
  }

 private:
  MsnParams p_;
};

}  // namespace snm
