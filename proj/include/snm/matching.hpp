#pragma once

// Skew-normal matching: find (mu, Sigma, d) whose moments and/or mode
// derivatives equal a set of target statistics.
//
//   MM   mean, covariance, third unmixed central moments
//   DM   mode, negative Hessian, third unmixed log-density derivatives
//   MMH  mean, mode, negative Hessian
//   MMC  mean, mode, covariance
//
// The kappa equations are solved in rescaled forms that share their roots
// on kappa > 0 with the textbook forms but have no poles there.

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "snm/errors.hpp"
#include "snm/linalg.hpp"
#include "snm/msn.hpp"
#include "snm/roots.hpp"
#include "snm/specialfns.hpp"

namespace snm {

enum class MatchStatus { Exact, Adjusted, Failed };

inline const char* to_string(MatchStatus s) {
  switch (s) {
    case MatchStatus::Exact:
      return "exact";
    case MatchStatus::Adjusted:
      return "adjusted";
    case MatchStatus::Failed:
      return "failed";
  }
  return "failed";
}

inline constexpr double kResidualTol = 1e-8;

struct MatchResult {
  std::optional<MsnParams> params;
  MatchStatus status = MatchStatus::Failed;
  // Shrink factor used by an adjusted result.
  std::optional<double> adjust;
  std::optional<double> kappa;
  std::string reason;
  // One relative residual per matching equation.
  std::vector<double> residuals;
  int n_kappa_roots = 0;

  bool ok() const { return status != MatchStatus::Failed; }

  double max_residual() const {
    double r = 0.0;
    for (double x : residuals) r = std::max(r, std::isfinite(x) ? x : INFINITY);
    return r;
  }

  const MsnParams& get() const {
    if (!params) throw Error("match failed: " + reason);
    return *params;
  }

  static MatchResult failed(std::string why) {
    MatchResult r;
    r.reason = std::move(why);
    return r;
  }

  // Builds an exact or adjusted result, downgrading it to failed when the
  // residuals do not certify the solution.
  static MatchResult certified(MsnParams p, std::vector<double> res, std::optional<double> kappa,
                               std::optional<double> adjust = std::nullopt) {
    MatchResult r;
    r.params = std::move(p);
    r.residuals = std::move(res);
    r.kappa = kappa;
    r.adjust = adjust;
    r.status = adjust ? MatchStatus::Adjusted : MatchStatus::Exact;
    if (!(r.max_residual() < kResidualTol)) {
      r.status = MatchStatus::Failed;
      r.reason = "residual certification";
    }
    return r;
  }
};

struct LossWeights {
  double w_mm = 2000.0;
  double w_mmc = 50.0;

  void validate() const {
    if (!(w_mm > 0.0) || !(w_mmc > 0.0) || !std::isfinite(w_mm) || !std::isfinite(w_mmc)) {
      throw InputError("loss weights must be positive and finite");
    }
  }
};

// Existence threshold on v' C^{-1} v for moment matching.
inline const double kMmThreshold = std::cbrt(2.0) * std::pow(4.0 - kPi, 2.0 / 3.0) / (kPi - 2.0);
// Existence threshold on Delta' C^{-1} Delta for mean-mode-covariance matching.
inline constexpr double kMmcThreshold = 2.0 / (kPi - 2.0);

namespace detail {

inline double rel_scalar(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

inline bool skew_negligible(const Vector& delta, const Vector& mean) {
  return delta.norm() < 1e-10 * (1.0 + mean.norm());
}

// Residual of 0 = -Sigma^{-1}(m - mu) + zeta_1(kappa) d.
inline double mode_residual(const MsnParams& p, const Vector& m, double z1) {
  const Vector lhs = p.sigma_factor().solve(m - p.mu());
  return rel_error(z1 * p.d(), lhs);
}

inline double kappa_residual(const MsnParams& p, const Vector& m, double kappa) {
  return rel_scalar(p.d().dot(m - p.mu()), kappa);
}

inline double mean_residual(const MsnParams& p, const Vector& mean) {
  return rel_error(p.mu() + kSqrt2OverPi * p.delta(), mean);
}

inline double hessian_residual(const MsnParams& p, const Matrix& J, double z2) {
  const Matrix implied = p.sigma_factor().inverse() - z2 * p.d() * p.d().transpose();
  return rel_error(implied, J);
}

inline double cov_residual(const MsnParams& p, const Matrix& C) {
  return rel_error(p.sigma() - kTwoOverPi * p.delta() * p.delta().transpose(), C);
}

// Terms shared by the mean-mode schemes, with s = zeta_1(kappa) and eps = s / kappa:
//   ell = sqrt(2/pi) / sqrt(1 + eps) - sqrt(s kappa),   lambda = sqrt(eps) ell.
struct MeanModeTerms {
  double s, eps, ell, lambda;
};

inline MeanModeTerms mean_mode_terms(double kappa) {
  const double s = zeta(1, kappa);
  const double eps = s / kappa;
  const double ell = kSqrt2OverPi / std::sqrt(1.0 + eps) - std::sqrt(s * kappa);
  return {s, eps, ell, std::sqrt(eps) * ell};
}

// Location from the target mean once Sigma and d are known.
inline Vector location_from_mean(const Vector& mean, const Matrix& sigma, const Vector& d) {
  const Vector sd = sigma * d;
  return mean - kSqrt2OverPi * sd / std::sqrt(1.0 + d.dot(sd));
}

// Shared by the exact and the adjusted MM paths.
inline const double kMmDeltaScale = std::cbrt(std::pow(kPi, 1.5) / (std::sqrt(2.0) * (4.0 - kPi)));

inline MatchResult mm_solve(const MomentStats& st, const Vector& v, std::optional<double> adjust) {
  const Vector delta = kMmDeltaScale * v;
  const Vector mu = st.mean - kSqrt2OverPi * delta;
  const Matrix sigma = st.cov + kTwoOverPi * delta * delta.transpose();
  MsnParams p = MsnParams::from_delta(mu, sigma, delta);
  const MomentStats implied = moments(p);
  const Vector tum = adjust ? Vector(std::pow(*adjust, 3) * st.tum) : st.tum;
  std::vector<double> res{rel_error(implied.mean, st.mean), rel_error(implied.cov, st.cov),
                          rel_error(implied.tum, tum)};
  return MatchResult::certified(std::move(p), std::move(res), std::nullopt, adjust);
}

struct MmcSolution {
  MsnParams params;
  double kappa, s;
  int n_roots;
};

inline MmcSolution mmc_solve(const Vector& mode, const Vector& mean, const Matrix& C, const SpdFactor& cf,
                             const KappaGrid& grid) {
  const Vector delta = mean - mode;
  const double G = cf.inv_quad(delta);
  auto h = [&](double k) {
    const auto t = mean_mode_terms(k);
    return t.ell * t.ell + G * (kTwoOverPi / (1.0 + t.eps) - 1.0);
  };
  const KappaRoot root = solve_kappa(h, grid);
  const auto t = mean_mode_terms(root.kappa);
  const double beta = kTwoOverPi / ((1.0 + t.eps) * t.ell * t.ell);
  const Matrix sigma = C + beta * delta * delta.transpose();
  const Vector d = SpdFactor(sigma, "mmc: scale").solve(delta) / t.lambda;
  return {MsnParams(location_from_mean(mean, sigma, d), sigma, d), root.kappa, t.s, root.n_roots};
}

inline MatchResult mmc_certify(MmcSolution sol, const Vector& mode, const Vector& mean, const Matrix& C,
                               std::optional<double> adjust) {
  const MsnParams& p = sol.params;
  std::vector<double> res{mode_residual(p, mode, sol.s), mean_residual(p, mean), cov_residual(p, C),
                          kappa_residual(p, mode, sol.kappa)};
  auto r = MatchResult::certified(std::move(sol.params), std::move(res), sol.kappa, adjust);
  r.n_kappa_roots = sol.n_roots;
  return r;
}

}  // namespace detail

// Moment matching.
inline MatchResult match_moments(const MomentStats& st, const LossWeights& w = {}) {
  w.validate();
  require_same_size(st.mean.size(), st.tum.size(), "match_moments: tum");
  const SpdFactor cf(st.cov, "match_moments: cov");
  const Vector v = signed_cbrt(st.tum);
  const double q = cf.inv_quad(v);
  try {
    if (q < kMmThreshold) return detail::mm_solve(st, v, std::nullopt);
  } catch (const Error& e) {
    return MatchResult::failed(e.what());
  }

  const double ub = std::sqrt(kMmThreshold / q);
  const double vnorm = v.norm();
  auto loss = [&](double a) {
    try {
      const Vector delta = detail::kMmDeltaScale * a * v;
      const Matrix sigma = st.cov + kTwoOverPi * delta * delta.transpose();
      const double l = w.w_mm * (1.0 - a) * vnorm + d_from_delta(delta, sigma).norm();
      return std::isfinite(l) ? l : std::numeric_limits<double>::max();
    } catch (const Error&) {
      return std::numeric_limits<double>::max();
    }
  };
  const auto best = minimize_scalar(loss, 1e-6 * ub, ub * (1.0 - 1e-6));
  if (!(best.value < std::numeric_limits<double>::max())) return MatchResult::failed("adjustment loss not finite");
  try {
    return detail::mm_solve(st, best.x * v, best.x);
  } catch (const Error& e) {
    return MatchResult::failed(e.what());
  }
}

// Derivative matching.
inline MatchResult match_derivatives(const DerivativeStats& st, const KappaGrid& grid = {}) {
  const Vector& m = st.mode;
  const Matrix& J = st.neg_hessian;
  require_same_size(m.size(), st.tud.size(), "match_derivatives: tud");
  const SpdFactor jf(J, "match_derivatives: neg_hessian");

  if (st.tud.isZero(0.0)) {
    MsnParams g = MsnParams::gaussian(m, jf.inverse());
    std::vector<double> res{0.0, detail::hessian_residual(g, J, 0.0), 0.0, 0.0};
    return MatchResult::certified(std::move(g), std::move(res), std::nullopt);
  }

  const Vector u = signed_cbrt(st.tud);
  const double R = jf.inv_quad(u);
  auto h = [&](double k) {
    const double s = zeta(1, k);
    const double b = (k + s) * (k + s) - 1.0 + s * (k + s);
    return k * std::pow(b, 2.0 / 3.0) - R * std::cbrt(s) * (k * (k + s) + 1.0);
  };
  KappaRoot root;
  try {
    root = solve_kappa(h, grid);
  } catch (const NoRootError&) {
    return MatchResult::failed("no kappa root");
  }
  const double kappa = root.kappa;
  const ZetaValues z = zeta_all(kappa);
  if (!(z.z3 > 0.0)) return MatchResult::failed("zeta_3 not positive at root");
  const Vector d = signed_cbrt(st.tud / z.z3);
  const Matrix prec = J + z.z2 * d * d.transpose();
  if (!is_spd(prec)) return MatchResult::failed("indefinite scale");
  try {
    const SpdFactor pf(prec, "match_derivatives: precision");
    const Matrix sigma = pf.inverse();
    const Vector mu = m - z.z1 * sigma * d;
    MsnParams p(mu, sigma, d);
    std::vector<double> res{detail::mode_residual(p, m, z.z1), detail::hessian_residual(p, J, z.z2),
                            rel_error(z.z3 * cube(p.d()), st.tud), detail::kappa_residual(p, m, kappa)};
    auto r = MatchResult::certified(std::move(p), std::move(res), kappa);
    r.n_kappa_roots = root.n_roots;
    return r;
  } catch (const Error& e) {
    return MatchResult::failed(e.what());
  }
}

// Mean-mode-Hessian matching.
inline MatchResult match_mmh(const DerivativeStats& st, const Vector& mean, const KappaGrid& grid = {}) {
  const Vector& m = st.mode;
  const Matrix& J = st.neg_hessian;
  require_same_size(m.size(), mean.size(), "match_mmh: mean");
  if (!mean.allFinite()) throw InputError("match_mmh: non-finite mean");
  const SpdFactor jf(J, "match_mmh: neg_hessian");
  const Vector delta = mean - m;

  if (detail::skew_negligible(delta, mean)) {
    MsnParams g = MsnParams::gaussian(m, jf.inverse());
    std::vector<double> res{0.0, detail::hessian_residual(g, J, 0.0), detail::mean_residual(g, m), 0.0};
    return MatchResult::certified(std::move(g), std::move(res), std::nullopt);
  }

  const double Q = delta.dot(J * delta);
  // D = 1 / alpha.
  auto D = [&](double k, const detail::MeanModeTerms& t) {
    const double l2 = t.ell * t.ell;
    return -l2 / (k * (k + t.s)) - Q + k * (k + t.s) * l2;
  };
  auto F = [&](double k) {
    const auto t = detail::mean_mode_terms(k);
    const double l2 = t.ell * t.ell;
    return D(k, t) * (l2 - Q) - Q * l2;
  };
  // The solution has Sigma - J^{-1} positive semidefinite, hence D < 0. D is
  // negative near 0 and F changes sign on (0, kappa_D), so the search stops at
  // the first zero of D.
  KappaRoot root;
  try {
    KappaGrid below = grid;
    below.hi = solve_kappa([&](double k) { return D(k, detail::mean_mode_terms(k)); }, grid).kappa;
    root = solve_kappa(F, below);
  } catch (const NoRootError&) {
    return MatchResult::failed("no kappa root");
  }
  const double kappa = root.kappa;
  const auto t = detail::mean_mode_terms(kappa);
  const Matrix sigma = jf.inverse() - delta * delta.transpose() / D(kappa, t);
  if (!is_spd(sigma)) return MatchResult::failed("indefinite scale");
  try {
    const Vector d = SpdFactor(sigma, "match_mmh: scale").solve(delta) / t.lambda;
    MsnParams p(detail::location_from_mean(mean, sigma, d), sigma, d);
    const double z2 = -t.s * (kappa + t.s);
    std::vector<double> res{detail::mode_residual(p, m, t.s), detail::hessian_residual(p, J, z2),
                            detail::mean_residual(p, mean), detail::kappa_residual(p, m, kappa)};
    auto r = MatchResult::certified(std::move(p), std::move(res), kappa);
    r.n_kappa_roots = root.n_roots;
    return r;
  } catch (const Error& e) {
    return MatchResult::failed(e.what());
  }
}

// Mean-mode-covariance matching. Above the existence threshold the skew
// direction is shrunk when allow_adjust is set.
inline MatchResult match_mmc(const Vector& mode, const MomentStats& st, const LossWeights& w = {},
                             bool allow_adjust = true, const KappaGrid& grid = {}) {
  w.validate();
  const Vector& mean = st.mean;
  const Matrix& C = st.cov;
  require_same_size(mean.size(), mode.size(), "match_mmc: mode");
  if (!mode.allFinite()) throw InputError("match_mmc: non-finite mode");
  const SpdFactor cf(C, "match_mmc: cov");
  const Vector delta = mean - mode;

  if (detail::skew_negligible(delta, mean)) {
    MsnParams g = MsnParams::gaussian(mean, C);
    std::vector<double> res{0.0, 0.0, detail::cov_residual(g, C), 0.0};
    return MatchResult::certified(std::move(g), std::move(res), std::nullopt);
  }

  const double G = cf.inv_quad(delta);
  if (G < kMmcThreshold) {
    try {
      return detail::mmc_certify(detail::mmc_solve(mode, mean, C, cf, grid), mode, mean, C, std::nullopt);
    } catch (const NoRootError&) {
      return MatchResult::failed("no kappa root");
    } catch (const Error& e) {
      return MatchResult::failed(e.what());
    }
  }
  if (!allow_adjust) return MatchResult::failed("G above threshold");

  const double ub = std::sqrt(kMmcThreshold / G);
  const double dnorm = delta.norm();
  auto loss = [&](double a) {
    try {
      const auto sol = detail::mmc_solve(mode, mode + a * delta, C, cf, grid);
      const double l = w.w_mmc * (1.0 - a) * dnorm + sol.params.d().norm();
      return std::isfinite(l) ? l : std::numeric_limits<double>::max();
    } catch (const Error&) {
      return std::numeric_limits<double>::max();
    }
  };
  const auto best = minimize_scalar(loss, 1e-6 * ub, ub * (1.0 - 1e-6));
  if (!(best.value < std::numeric_limits<double>::max())) return MatchResult::failed("adjustment loss not finite");
  try {
    const Vector mean_a = mode + best.x * delta;
    return detail::mmc_certify(detail::mmc_solve(mode, mean_a, C, cf, grid), mode, mean_a, C, best.x);
  } catch (const Error& e) {
    return MatchResult::failed(e.what());
  }
}

}  // namespace snm
