#pragma once

// Posterior statistics feeding the matching schemes.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "snm/errors.hpp"
#include "snm/linalg.hpp"
#include "snm/models.hpp"
#include "snm/msn.hpp"
#include "snm/newton.hpp"
#include "snm/specialfns.hpp"

namespace snm {

struct GaussianApprox {
  Vector mean;
  Matrix cov;
  // "laplace" or the label of an externally produced approximation.
  std::string source = "laplace";

  GaussianApprox() = default;
  GaussianApprox(Vector mean_, const Eigen::Ref<const Matrix>& cov_, std::string source_ = "laplace")
      : mean(std::move(mean_)), cov(symmetrized(cov_, "GaussianApprox: cov")), source(std::move(source_)) {
    require_same_size(mean.size(), cov.rows(), "GaussianApprox: cov");
    if (!mean.allFinite()) throw InputError("GaussianApprox: non-finite mean");
    if (!is_spd(cov)) throw InputError("GaussianApprox: cov is not positive definite");
  }

  Eigen::Index dim() const { return mean.size(); }
  Vector sd() const { return cov.diagonal().cwiseSqrt(); }
};

struct ModeFit {
  DerivativeStats stats;
  NewtonResult newton;
};

inline ModeFit find_mode_detailed(const Target& target, const Vector& theta0, const NewtonOptions& opts = {}) {
  require_same_size(target.dim(), theta0.size(), "find_mode: theta0");
  NewtonResult nr = damped_newton([&](const Vector& t) { return target.log_joint(t); },
                                  [&](const Vector& t) { return target.grad(t); },
                                  [&](const Vector& t) { return target.hessian(t); }, theta0, opts);
  DerivativeStats st(nr.x, -nr.hessian, target.tud(nr.x));
  return {std::move(st), std::move(nr)};
}

inline DerivativeStats find_mode(const Target& target, const Vector& theta0, const NewtonOptions& opts = {}) {
  return find_mode_detailed(target, theta0, opts).stats;
}

inline DerivativeStats find_mode(const Target& target) { return find_mode(target, Vector::Zero(target.dim())); }

inline GaussianApprox laplace(const DerivativeStats& st) {
  return GaussianApprox(st.mode, SpdFactor(st.neg_hessian, "laplace: neg_hessian").inverse(), "laplace");
}

inline GaussianApprox laplace(const Target& target) { return laplace(find_mode(target)); }

// ---------------------------------------------------------------------------
// Importance sampling with a multivariate t proposal.

enum class Stabilization { TruncateSqrtMean, None };

struct ImportanceConfig {
  std::size_t n_samples = 50000;
  double df = 5.0;
  Stabilization stabilization = Stabilization::TruncateSqrtMean;
  std::uint64_t seed = 1;
  bool third_moments = true;

  void validate() const {
    if (n_samples < 1000) throw InputError("importance sampling needs at least 1000 draws");
    if (!(df > 0.0) || !std::isfinite(df)) throw InputError("t degrees of freedom must be positive");
    if (third_moments && !(df > 3.0)) throw InputError("third moments need t degrees of freedom above 3");
  }
};

inline constexpr double kMinEss = 50.0;

struct ImportanceResult {
  MomentStats stats;
  Vector mean_se;
  Matrix cov_se;
  Vector tum_se;
  double ess = 0.0;
  // Set when the effective sample size falls below kMinEss.
  bool unreliable = false;
  std::size_t n_truncated = 0;
  // Normalized weights after stabilization, one per draw.
  Vector weights;
};

inline ImportanceResult importance_moments(const Target& target, const DerivativeStats& mode,
                                           const ImportanceConfig& cfg = {}) {
  cfg.validate();
  const Eigen::Index p = target.dim();
  require_same_size(p, mode.dim(), "importance_moments: mode");
  const auto N = static_cast<Eigen::Index>(cfg.n_samples);
  const Matrix L = SpdFactor(SpdFactor(mode.neg_hessian, "importance: J").inverse(), "importance: scale").lower();

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::chi_squared_distribution<double> chi2(cfg.df);
  Matrix draws(N, p);
  Vector logw(N);
  Vector z(p);
  for (Eigen::Index i = 0; i < N; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) z[j] = normal(rng);
    const double g = chi2(rng);
    const double scale = std::sqrt(cfg.df / g);
    const Vector theta = mode.mode + scale * (L * z);
    draws.row(i) = theta.transpose();
    const double q = z.squaredNorm() * cfg.df / g;
    const double log_t = -0.5 * (cfg.df + p) * std::log1p(q / cfg.df);
    logw[i] = target.log_joint(theta) - log_t;
  }

  double lmax = -INFINITY;
  for (double v : logw) {
    if (std::isfinite(v)) lmax = std::max(lmax, v);
  }
  if (!std::isfinite(lmax)) throw NonConvergenceError("importance sampling: no finite weights", INFINITY);
  Vector w(N);
  for (Eigen::Index i = 0; i < N; ++i) w[i] = std::isfinite(logw[i]) ? std::exp(logw[i] - lmax) : 0.0;

  ImportanceResult out;
  if (cfg.stabilization == Stabilization::TruncateSqrtMean) {
    const double cap = w.mean() * std::sqrt(static_cast<double>(N));
    for (double& v : w) {
      if (v > cap) v = cap, ++out.n_truncated;
    }
  }
  w /= w.sum();
  out.ess = 1.0 / w.squaredNorm();
  out.unreliable = out.ess < kMinEss;

  const Vector mean = draws.transpose() * w;
  const Matrix c = draws.rowwise() - mean.transpose();
  const Matrix cw = w.asDiagonal() * c;
  Matrix cov = c.transpose() * cw;
  cov = 0.5 * (cov + cov.transpose());
  const Vector tum = c.array().cube().matrix().transpose() * w;

  // Delta-method standard errors of self-normalized estimates.
  const Vector w2 = w.array().square();
  out.mean_se = (c.array().square().matrix().transpose() * w2).cwiseSqrt();
  out.cov_se.resize(p, p);
  for (Eigen::Index a = 0; a < p; ++a)
    for (Eigen::Index b = 0; b < p; ++b) {
      const Vector h = c.col(a).cwiseProduct(c.col(b)).array() - cov(a, b);
      out.cov_se(a, b) = std::sqrt(w2.dot(h.cwiseProduct(h)));
    }
  out.tum_se.resize(p);
  for (Eigen::Index a = 0; a < p; ++a) {
    const Vector h = c.col(a).array().cube() - tum[a];
    out.tum_se[a] = std::sqrt(w2.dot(h.cwiseProduct(h)));
  }
  const Vector third = cfg.third_moments ? tum : Vector(Vector::Zero(p));
  if (is_spd(cov)) {
    out.stats = MomentStats(mean, cov, third);
  } else {
    // Too few effective draws to span every direction.
    out.stats.mean = mean;
    out.stats.cov = cov;
    out.stats.tum = third;
    out.unreliable = true;
  }
  out.weights = std::move(w);
  return out;
}

// ---------------------------------------------------------------------------
// Marginal-based mean estimates.

// One uniform grid per coordinate.
struct QuadratureGrid {
  std::vector<Vector> axes;

  static QuadratureGrid around(const Vector& center, const Vector& sds, double half_width = 8.0,
                               Eigen::Index n_points = 400) {
    require_same_size(center.size(), sds.size(), "QuadratureGrid: sds");
    if (n_points < 3) throw InputError("QuadratureGrid: need at least 3 points");
    if (!(half_width > 0.0)) throw InputError("QuadratureGrid: half width must be positive");
    QuadratureGrid g;
    for (Eigen::Index j = 0; j < center.size(); ++j) {
      if (!(sds[j] > 0.0)) throw InputError("QuadratureGrid: sds must be positive");
      const double h = half_width * sds[j];
      g.axes.push_back(Vector::LinSpaced(n_points, center[j] - h, center[j] + h));
    }
    return g;
  }

  static QuadratureGrid around(const GaussianApprox& base, double half_width = 8.0, Eigen::Index n_points = 400) {
    return around(base.mean, base.sd(), half_width, n_points);
  }

  Eigen::Index dim() const { return static_cast<Eigen::Index>(axes.size()); }
};

// An unnormalized log-density on a grid, normalized by the trapezoid rule.
struct GridMarginal {
  Vector grid;
  Vector density;

  static GridMarginal from_log(Vector grid, const Vector& logd) {
    const double mx = logd.maxCoeff();
    if (!std::isfinite(mx)) throw NonConvergenceError("marginal: log density not finite on the grid", INFINITY);
    Vector d = (logd.array() - mx).exp().matrix();
    const double z = trapezoid(grid, d);
    return {std::move(grid), d / z};
  }

  double mean() const { return trapezoid(grid, grid.cwiseProduct(density)); }
};

namespace detail {

inline std::vector<Eigen::Index> other_indices(Eigen::Index p, Eigen::Index j) {
  std::vector<Eigen::Index> idx;
  for (Eigen::Index k = 0; k < p; ++k) {
    if (k != j) idx.push_back(k);
  }
  return idx;
}

}  // namespace detail

inline std::vector<GridMarginal> jensen_marginals(const GlmModel& model, const GaussianApprox& base,
                                                  const QuadratureGrid& grid) {
  if (model.kind() != GlmKind::Probit) throw UnsupportedError("Jensen marginals are implemented for probit only");
  const Eigen::Index p = model.dim();
  require_same_size(p, base.dim(), "jensen: base");
  require_same_size(p, grid.dim(), "jensen: grid");
  const Matrix& Z = model.data().Z();
  const double s2 = model.prior_variance();

  std::vector<GridMarginal> out;
  for (Eigen::Index j = 0; j < p; ++j) {
    const auto rest = detail::other_indices(p, j);
    const auto q = static_cast<Eigen::Index>(rest.size());
    const Matrix Zr = Z(Eigen::all, rest);
    const Vector s_rj = base.cov(rest, j);
    const double s_jj = base.cov(j, j);
    const Matrix cond_cov = base.cov(rest, rest) - s_rj * s_rj.transpose() / s_jj;
    const Vector sig2 = (Zr * cond_cov).cwiseProduct(Zr).rowwise().sum();
    const double logdet = q > 0 ? SpdFactor(cond_cov, "jensen: conditional cov").log_det() : 0.0;
    const double trace = cond_cov.trace();

    const Vector& axis = grid.axes[j];
    Vector logd(axis.size());
    for (Eigen::Index k = 0; k < axis.size(); ++k) {
      const double tj = axis[k];
      const Vector cond_mean = base.mean(rest) + s_rj * ((tj - base.mean[j]) / s_jj);
      const Vector eta = tj * Z.col(j) + Zr * cond_mean;
      double v = 0.0;
      for (Eigen::Index i = 0; i < eta.size(); ++i) {
        const ZetaValues zv = zeta_all(eta[i]);
        v += zv.z0 + 0.5 * zv.z2 * sig2[i];
      }
      v -= (tj * tj + cond_mean.squaredNorm() + trace) / (2.0 * s2);
      logd[k] = v + 0.5 * logdet;
    }
    out.push_back(GridMarginal::from_log(axis, logd));
  }
  return out;
}

inline Vector jensen_mean(const GlmModel& model, const GaussianApprox& base, const QuadratureGrid& grid) {
  const auto m = jensen_marginals(model, base, grid);
  Vector mean(m.size());
  for (std::size_t j = 0; j < m.size(); ++j) mean[static_cast<Eigen::Index>(j)] = m[j].mean();
  return mean;
}

inline Vector jensen_mean(const GlmModel& model, const GaussianApprox& base) {
  return jensen_mean(model, base, QuadratureGrid::around(base));
}

namespace detail {

// The target restricted to theta_{-j} with theta_j held fixed.
class ConditionalTarget final : public Target {
 public:
  ConditionalTarget(const Target& full, Eigen::Index j) : full_(full), j_(j), rest_(other_indices(full.dim(), j)) {}

  void fix(double value) { value_ = value; }
  Eigen::Index dim() const override { return static_cast<Eigen::Index>(rest_.size()); }
  double log_joint(const Vector& t) const override { return full_.log_joint(embed(t)); }
  Vector grad(const Vector& t) const override { return full_.grad(embed(t))(rest_); }
  Matrix hessian(const Vector& t) const override { return full_.hessian(embed(t))(rest_, rest_); }
  Vector tud(const Vector& t) const override { return full_.tud(embed(t))(rest_); }

  Vector embed(const Vector& t) const {
    Vector x(full_.dim());
    x[j_] = value_;
    x(rest_) = t;
    return x;
  }

  Vector restrict(const Vector& x) const { return x(rest_); }

 private:
  const Target& full_;
  Eigen::Index j_;
  std::vector<Eigen::Index> rest_;
  double value_ = 0.0;
};

}  // namespace detail

// Improved Laplace marginals: |Sigma_{theta_j}|^{1/2} p(mu_{theta_j}, theta_j, D) on the grid.
// Each inner Newton solve is warm-started from the previous grid point.
inline std::vector<GridMarginal> improved_laplace_marginals(const Target& target, const Vector& mode,
                                                            const QuadratureGrid& grid,
                                                            const NewtonOptions& opts = {}) {
  const Eigen::Index p = target.dim();
  require_same_size(p, grid.dim(), "improved_laplace: grid");
  require_same_size(p, mode.size(), "improved_laplace: mode");
  std::vector<GridMarginal> out;
  for (Eigen::Index j = 0; j < p; ++j) {
    detail::ConditionalTarget cond(target, j);
    const Vector& axis = grid.axes[j];
    Vector logd(axis.size());
    // March outward from the grid point nearest the mode in both directions.
    Eigen::Index start = 0;
    (axis.array() - mode[j]).abs().minCoeff(&start);
    for (int dir : {+1, -1}) {
      Vector warm = cond.restrict(mode);
      for (Eigen::Index k = dir > 0 ? start : start - 1; k >= 0 && k < axis.size(); k += dir) {
        cond.fix(axis[k]);
        if (cond.dim() == 0) {
          logd[k] = cond.log_joint(warm);
          continue;
        }
        NewtonResult nr;
        try {
          nr = damped_newton([&](const Vector& t) { return cond.log_joint(t); },
                             [&](const Vector& t) { return cond.grad(t); },
                             [&](const Vector& t) { return cond.hessian(t); }, warm, opts);
        } catch (const NonConvergenceError& e) {
          throw NonConvergenceError(std::string("improved Laplace inner solve: ") + e.what(), e.grad_norm(), k);
        }
        warm = nr.x;
        const double logdet_prec = SpdFactor(-nr.hessian, "improved_laplace: conditional precision").log_det();
        logd[k] = nr.value - 0.5 * logdet_prec;
      }
    }
    out.push_back(GridMarginal::from_log(axis, logd));
  }
  return out;
}

inline Vector improved_laplace_mean(const Target& target, const Vector& mode, const QuadratureGrid& grid,
                                    const NewtonOptions& opts = {}) {
  const auto m = improved_laplace_marginals(target, mode, grid, opts);
  Vector mean(m.size());
  for (std::size_t j = 0; j < m.size(); ++j) mean[static_cast<Eigen::Index>(j)] = m[j].mean();
  return mean;
}

inline Vector improved_laplace_mean(const Target& target, const GaussianApprox& base) {
  return improved_laplace_mean(target, base.mean, QuadratureGrid::around(base));
}

}  // namespace snm
