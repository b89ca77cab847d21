#pragma once

// Multivariate skew-normal distribution SN_p(mu, Sigma, d) with density
//   p(theta) = 2 phi_p(theta; mu, Sigma) Phi(d'(theta - mu)).

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>

#include "snm/errors.hpp"
#include "snm/linalg.hpp"
#include "snm/newton.hpp"
#include "snm/specialfns.hpp"

namespace snm {

// d = Sigma^{-1} delta / sqrt(1 - delta' Sigma^{-1} delta).
inline Vector d_from_delta(const Eigen::Ref<const Vector>& delta, const SpdFactor& sigma) {
  require_same_size(sigma.dim(), delta.size(), "d_from_delta: delta");
  const Vector w = sigma.solve(delta);
  const double q = delta.dot(w);
  if (!(q < 1.0)) {
    throw ConstraintError("d_from_delta: delta' Sigma^{-1} delta = " + std::to_string(q) + " is not below 1", q);
  }
  return w / std::sqrt(1.0 - q);
}

inline Vector d_from_delta(const Eigen::Ref<const Vector>& delta, const Eigen::Ref<const Matrix>& sigma) {
  return d_from_delta(delta, SpdFactor(sigma, "d_from_delta: sigma"));
}

// Immutable parameter triple with a cached Cholesky factor of Sigma.
class MsnParams {
 public:
  MsnParams(Vector mu, const Eigen::Ref<const Matrix>& sigma, Vector d)
      : mu_(std::move(mu)), d_(std::move(d)) {
    require_same_size(mu_.size(), sigma.rows(), "MsnParams: sigma rows");
    require_same_size(mu_.size(), d_.size(), "MsnParams: d");
    if (!mu_.allFinite() || !d_.allFinite()) throw InputError("MsnParams: non-finite location or skewness");
    sigma_ = symmetrized(sigma, "MsnParams: sigma");
    factor_ = SpdFactor(sigma_, "MsnParams: sigma");
    const Vector sd = sigma_ * d_;
    dsd_ = d_.dot(sd);
    delta_ = sd / std::sqrt(1.0 + dsd_);
    const double q = factor_.inv_quad(delta_);
    if (!(q < 1.0 - 1e-12) && dsd_ < 1e11) {
      throw ConstraintError("MsnParams: delta constraint violated", q);
    }
  }

  static MsnParams gaussian(Vector mean, const Eigen::Ref<const Matrix>& cov) {
    const auto p = mean.size();
    return MsnParams(std::move(mean), cov, Vector::Zero(p));
  }

  // Builds the parameters from (mu, Sigma, delta) via d_from_delta.
  static MsnParams from_delta(Vector mu, const Eigen::Ref<const Matrix>& sigma, const Eigen::Ref<const Vector>& delta) {
    SpdFactor f(sigma, "MsnParams: sigma");
    Vector d = d_from_delta(delta, f);
    return MsnParams(std::move(mu), sigma, std::move(d));
  }

  Eigen::Index dim() const { return mu_.size(); }
  const Vector& mu() const { return mu_; }
  const Matrix& sigma() const { return sigma_; }
  const Vector& d() const { return d_; }
  const Vector& delta() const { return delta_; }
  double d_sigma_d() const { return dsd_; }
  const SpdFactor& sigma_factor() const { return factor_; }

 private:
  Vector mu_;
  Matrix sigma_;
  Vector d_;
  SpdFactor factor_;
  Vector delta_;
  double dsd_ = 0.0;
};

// Posterior mean, covariance and third-order unmixed central moments.
struct MomentStats {
  Vector mean;
  Matrix cov;
  Vector tum;

  MomentStats() = default;
  MomentStats(Vector mean_, const Eigen::Ref<const Matrix>& cov_, Vector tum_)
      : mean(std::move(mean_)), cov(symmetrized(cov_, "MomentStats: cov")), tum(std::move(tum_)) {
    require_same_size(mean.size(), cov.rows(), "MomentStats: cov");
    require_same_size(mean.size(), tum.size(), "MomentStats: tum");
    if (!is_spd(cov)) throw InputError("MomentStats: cov is not positive definite");
  }
  MomentStats(Vector mean_, const Eigen::Ref<const Matrix>& cov_)
      : MomentStats(mean_, cov_, Vector::Zero(mean_.size())) {}

  Eigen::Index dim() const { return mean.size(); }
};

// Mode, negative Hessian at the mode and third-order unmixed log-density derivatives.
struct DerivativeStats {
  Vector mode;
  Matrix neg_hessian;
  Vector tud;

  DerivativeStats() = default;
  DerivativeStats(Vector mode_, const Eigen::Ref<const Matrix>& neg_hessian_, Vector tud_)
      : mode(std::move(mode_)), neg_hessian(symmetrized(neg_hessian_, "DerivativeStats: neg_hessian")),
        tud(std::move(tud_)) {
    require_same_size(mode.size(), neg_hessian.rows(), "DerivativeStats: neg_hessian");
    require_same_size(mode.size(), tud.size(), "DerivativeStats: tud");
    if (!is_spd(neg_hessian)) throw InputError("DerivativeStats: negative Hessian is not positive definite");
  }
  DerivativeStats(Vector mode_, const Eigen::Ref<const Matrix>& neg_hessian_)
      : DerivativeStats(mode_, neg_hessian_, Vector::Zero(mode_.size())) {}

  Eigen::Index dim() const { return mode.size(); }
};

inline double log_density(const MsnParams& P, const Eigen::Ref<const Vector>& theta) {
  require_same_size(P.dim(), theta.size(), "log_density: theta");
  const Vector r = theta - P.mu();
  const double p = static_cast<double>(P.dim());
  const double quad = P.sigma_factor().inv_quad(r);
  return std::log(2.0) - p * kLogSqrt2Pi - 0.5 * P.sigma_factor().log_det() - 0.5 * quad +
         zeta(0, P.d().dot(r));
}

inline Vector grad_log_density(const MsnParams& P, const Eigen::Ref<const Vector>& theta) {
  require_same_size(P.dim(), theta.size(), "grad_log_density: theta");
  const Vector r = theta - P.mu();
  return -P.sigma_factor().solve(r) + zeta(1, P.d().dot(r)) * P.d();
}

inline Matrix hessian_log_density(const MsnParams& P, const Eigen::Ref<const Vector>& theta) {
  require_same_size(P.dim(), theta.size(), "hessian_log_density: theta");
  const double k = P.d().dot(theta - P.mu());
  return -P.sigma_factor().inverse() + zeta(2, k) * P.d() * P.d().transpose();
}

inline Vector tud_log_density(const MsnParams& P, const Eigen::Ref<const Vector>& theta) {
  require_same_size(P.dim(), theta.size(), "tud_log_density: theta");
  const double k = P.d().dot(theta - P.mu());
  return zeta(3, k) * cube(P.d());
}

inline constexpr double kTumFactor = 0.21801361414499016069;  // sqrt(2)(4 - pi) / pi^{3/2}

inline MomentStats moments(const MsnParams& P) {
  const Vector& delta = P.delta();
  return MomentStats(P.mu() + kSqrt2OverPi * delta, P.sigma() - kTwoOverPi * delta * delta.transpose(),
                     kTumFactor * cube(delta));
}

// Marginal of coordinate j. Marginals of an MSN are skew-normal with the same delta_j.
inline MsnParams marginal(const MsnParams& P, Eigen::Index j) {
  if (j < 0 || j >= P.dim()) throw DimensionError("marginal: coordinate index out of range");
  const double s = P.sigma()(j, j);
  const double dj = P.delta()[j];
  const double q = dj * dj / s;
  if (!(q < 1.0)) throw ConstraintError("marginal: delta constraint violated", q);
  Vector mu(1), d(1);
  Matrix sigma(1, 1);
  mu[0] = P.mu()[j];
  sigma(0, 0) = s;
  d[0] = dj / s / std::sqrt(1.0 - q);
  return MsnParams(std::move(mu), sigma, std::move(d));
}

// Density of a univariate skew normal, the common case for marginal evaluation.
inline double density_1d(const MsnParams& P, double x) {
  const double s = std::sqrt(P.sigma()(0, 0));
  const double z = (x - P.mu()[0]) / s;
  return 2.0 * std::exp(norm_logpdf(z)) / s * norm_cdf(P.d()[0] * (x - P.mu()[0]));
}

// Draws n rows by the conditioning representation: X0 ~ N(0,1) and
// X | X0 ~ N(delta X0, Sigma - delta delta'), theta = mu + sign(X0) X.
template <typename Urbg>
Matrix sample(const MsnParams& P, Eigen::Index n, Urbg& rng) {
  const Eigen::Index p = P.dim();
  const Vector& delta = P.delta();
  const SpdFactor cond(P.sigma() - delta * delta.transpose(), "sample: conditional covariance");
  const Matrix L = cond.lower();
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix out(n, p);
  Vector z(p);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x0 = std::abs(normal(rng));
    for (Eigen::Index k = 0; k < p; ++k) z[k] = normal(rng);
    out.row(i) = (P.mu() + delta * x0 + L * z).transpose();
  }
  return out;
}

inline Matrix sample(const MsnParams& P, Eigen::Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample(P, n, rng);
}

// Mode of the density by damped Newton on the log density (strictly concave).
inline Vector mode(const MsnParams& P, double grad_tol = 1e-13) {
  NewtonOptions opts;
  opts.grad_tol = grad_tol * (1.0 + static_cast<double>(P.dim()));
  const auto res = damped_newton([&](const Vector& t) { return log_density(P, t); },
                                 [&](const Vector& t) { return grad_log_density(P, t); },
                                 [&](const Vector& t) { return hessian_log_density(P, t); },
                                 Vector(P.mu() + kSqrt2OverPi * P.delta()), opts);
  return res.x;
}

// Exact derivative statistics at the mode (mode, -Hessian, TUD).
inline DerivativeStats derivative_stats(const MsnParams& P) {
  const Vector m = mode(P);
  return DerivativeStats(m, -hessian_log_density(P, m), tud_log_density(P, m));
}

}  // namespace snm
