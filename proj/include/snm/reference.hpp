#pragma once

// Gold-standard posterior marginals and the marginal L1 accuracy metric.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "snm/errors.hpp"
#include "snm/estimators.hpp"
#include "snm/linalg.hpp"
#include "snm/models.hpp"
#include "snm/msn.hpp"

namespace snm {

// A one-dimensional density tabulated on an increasing grid.
struct MarginalCurve {
  Vector grid;
  Vector density;
  std::string label;
  // Moments of the underlying reference draws, when known; they set the accuracy bounds.
  double ref_mean = NAN;
  double ref_sd = NAN;

  MarginalCurve() = default;
  MarginalCurve(Vector grid_, Vector density_, std::string label_ = {})
      : grid(std::move(grid_)), density(std::move(density_)), label(std::move(label_)) {
    require_same_size(grid.size(), density.size(), "MarginalCurve: density");
    if (grid.size() < 2) throw InputError("MarginalCurve: need at least two grid points");
    for (Eigen::Index i = 1; i < grid.size(); ++i) {
      if (!(grid[i] > grid[i - 1])) throw InputError("MarginalCurve: grid must be strictly increasing");
    }
    if (!density.allFinite() || (density.array() < 0.0).any()) {
      throw InputError("MarginalCurve: density must be finite and nonnegative");
    }
  }

  double center() const { return std::isfinite(ref_mean) ? ref_mean : mean(); }
  double spread() const { return std::isfinite(ref_sd) ? ref_sd : sd(); }

  double mass() const { return trapezoid(grid, density); }
  double mean() const { return trapezoid(grid, grid.cwiseProduct(density)) / mass(); }
  double sd() const {
    const double m = mean();
    return std::sqrt(trapezoid(grid, (grid.array() - m).square().matrix().cwiseProduct(density)) / mass());
  }

  // Linear interpolation, zero outside the grid.
  double operator()(double x) const {
    if (x < grid[0] || x > grid[grid.size() - 1]) return 0.0;
    const auto* b = grid.data();
    const auto* e = b + grid.size();
    auto it = std::upper_bound(b, e, x);
    if (it == e) return density[grid.size() - 1];
    const auto i = static_cast<Eigen::Index>(it - b);
    const double t = (x - grid[i - 1]) / (grid[i] - grid[i - 1]);
    return (1.0 - t) * density[i - 1] + t * density[i];
  }
};

// ---------------------------------------------------------------------------
// L1 accuracy: 1 - 1/2 * integral |p_ref - p_approx|, evaluated on mean +- 5 sd.

inline constexpr int kAccuracyIntervals = 1000;

inline Vector accuracy_grid(double mean, double sd) {
  if (!(sd > 0.0) || !std::isfinite(sd) || !std::isfinite(mean)) {
    throw InputError("l1_accuracy: reference mean/sd must be finite with sd > 0");
  }
  return Vector::LinSpaced(kAccuracyIntervals + 1, mean - 5.0 * sd, mean + 5.0 * sd);
}

inline double l1_accuracy(const std::function<double(double)>& reference, const std::function<double(double)>& approx,
                          double mean, double sd) {
  const Vector x = accuracy_grid(mean, sd);
  Vector diff(x.size()), pr(x.size()), pa(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    pr[i] = reference(x[i]);
    pa[i] = approx(x[i]);
    diff[i] = std::abs(pr[i] - pa[i]);
  }
  // Mass outside the window enters through the difference of the missing masses of two unit-mass densities.
  const double outside = std::abs(trapezoid(x, pr) - trapezoid(x, pa));
  const double acc = 1.0 - 0.5 * (trapezoid(x, diff) + outside);
  return std::clamp(acc, 0.0, 1.0);
}

inline double l1_accuracy(const MarginalCurve& reference, const std::function<double(double)>& approx, double mean,
                          double sd) {
  return l1_accuracy([&](double x) { return reference(x); }, approx, mean, sd);
}

// Bounds taken from the reference curve's own mean and sd.
inline double l1_accuracy(const MarginalCurve& reference, const std::function<double(double)>& approx) {
  return l1_accuracy(reference, approx, reference.center(), reference.spread());
}

inline double normal_density(double x, double mean, double sd) { return std::exp(norm_logpdf((x - mean) / sd)) / sd; }

// Per-coordinate accuracies of a skew-normal or Gaussian approximation.
inline Vector marginal_accuracies(const std::vector<MarginalCurve>& reference, const MsnParams& approx) {
  require_same_size(static_cast<Eigen::Index>(reference.size()), approx.dim(), "marginal_accuracies: approximation");
  Vector acc(approx.dim());
  for (Eigen::Index j = 0; j < approx.dim(); ++j) {
    const MsnParams m = marginal(approx, j);
    acc[j] = l1_accuracy(reference[static_cast<std::size_t>(j)], [&](double x) { return density_1d(m, x); });
  }
  return acc;
}

inline Vector marginal_accuracies(const std::vector<MarginalCurve>& reference, const GaussianApprox& approx) {
  return marginal_accuracies(reference, MsnParams::gaussian(approx.mean, approx.cov));
}

// ---------------------------------------------------------------------------
// Kernel density estimation.

inline double silverman_bandwidth(const Vector& x) {
  const auto n = x.size();
  if (n < 2) throw InputError("kde: need at least two samples");
  const double mean = x.mean();
  const double sd = std::sqrt((x.array() - mean).square().sum() / static_cast<double>(n - 1));
  std::vector<double> s(x.data(), x.data() + n);
  std::sort(s.begin(), s.end());
  auto quantile = [&](double q) {
    const double h = (static_cast<double>(n) - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, s.size() - 1);
    return s[lo] + (h - static_cast<double>(lo)) * (s[hi] - s[lo]);
  };
  const double iqr = quantile(0.75) - quantile(0.25);
  const double spread = iqr > 0.0 ? std::min(sd, iqr / 1.34) : sd;
  if (!(spread > 0.0)) throw InputError("kde: samples have zero spread");
  return 0.9 * spread * std::pow(static_cast<double>(n), -0.2);
}

inline MarginalCurve kde(const Vector& samples, const Vector& grid, std::string label = "kde") {
  const double bw = silverman_bandwidth(samples);
  std::vector<double> s(samples.data(), samples.data() + samples.size());
  std::sort(s.begin(), s.end());
  const double reach = 8.0 * bw;
  const double norm = 1.0 / (static_cast<double>(s.size()) * bw);
  Vector dens(grid.size());
  for (Eigen::Index k = 0; k < grid.size(); ++k) {
    const double g = grid[k];
    auto lo = std::lower_bound(s.begin(), s.end(), g - reach);
    auto hi = std::upper_bound(lo, s.end(), g + reach);
    double acc = 0.0;
    for (auto it = lo; it != hi; ++it) {
      const double u = (g - *it) / bw;
      acc += std::exp(-0.5 * u * u);
    }
    dens[k] = acc * norm / std::sqrt(2.0 * kPi);
  }
  return MarginalCurve(grid, dens, std::move(label));
}

// ---------------------------------------------------------------------------
// Tensor-grid quadrature reference for p <= 3.

struct GridReferenceOptions {
  // Points per axis; zero selects 400 (p <= 2) or 200 (p = 3).
  Eigen::Index n_points = 0;
  double half_width_sds = 10.0;
  // Axis ends whose marginal density exceeds this fraction of the peak trigger widening.
  double edge_tol = 1e-12;
  int max_widen = 6;
};

inline std::vector<MarginalCurve> grid_marginals(const Target& target, const GaussianApprox& laplace_base,
                                                 const GridReferenceOptions& opts = {}) {
  const Eigen::Index p = target.dim();
  if (p > 3) throw UnsupportedError("grid quadrature reference supports p <= 3");
  require_same_size(p, laplace_base.dim(), "grid_marginals: base");
  const Eigen::Index n = opts.n_points > 0 ? opts.n_points : (p <= 2 ? 400 : 200);
  if (n < 3) throw InputError("grid_marginals: need at least 3 points per axis");

  Vector lo = laplace_base.mean - opts.half_width_sds * laplace_base.sd();
  Vector hi = laplace_base.mean + opts.half_width_sds * laplace_base.sd();
  for (int attempt = 0;; ++attempt) {
    std::vector<Vector> axes;
    for (Eigen::Index j = 0; j < p; ++j) axes.push_back(Vector::LinSpaced(n, lo[j], hi[j]));
    std::vector<Vector> marg(static_cast<std::size_t>(p), Vector::Zero(n));

    // Log density over the tensor grid, then exponentiate relative to the max.
    const Eigen::Index total = p == 1 ? n : (p == 2 ? n * n : n * n * n);
    std::vector<double> logd(static_cast<std::size_t>(total));
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(p));
    Vector theta(p);
    double mx = -INFINITY;
    for (Eigen::Index flat = 0; flat < total; ++flat) {
      Eigen::Index r = flat;
      for (Eigen::Index j = p - 1; j >= 0; --j) {
        idx[static_cast<std::size_t>(j)] = r % n;
        r /= n;
        theta[j] = axes[static_cast<std::size_t>(j)][idx[static_cast<std::size_t>(j)]];
      }
      const double v = target.log_joint(theta);
      logd[static_cast<std::size_t>(flat)] = v;
      if (std::isfinite(v)) mx = std::max(mx, v);
    }
    if (!std::isfinite(mx)) throw NonConvergenceError("grid_marginals: log density not finite on the grid", INFINITY);

    // Trapezoid weights per axis.
    std::vector<Vector> tw;
    for (const auto& a : axes) {
      const double h = a[1] - a[0];
      Vector w = Vector::Constant(n, h);
      w[0] = w[n - 1] = 0.5 * h;
      tw.push_back(w);
    }
    for (Eigen::Index flat = 0; flat < total; ++flat) {
      Eigen::Index r = flat;
      for (Eigen::Index j = p - 1; j >= 0; --j) {
        idx[static_cast<std::size_t>(j)] = r % n;
        r /= n;
      }
      const double v = logd[static_cast<std::size_t>(flat)];
      const double f = std::isfinite(v) ? std::exp(v - mx) : 0.0;
      for (Eigen::Index j = 0; j < p; ++j) {
        double w = f;
        for (Eigen::Index k = 0; k < p; ++k) {
          if (k != j) w *= tw[static_cast<std::size_t>(k)][idx[static_cast<std::size_t>(k)]];
        }
        marg[static_cast<std::size_t>(j)][idx[static_cast<std::size_t>(j)]] += w;
      }
    }

    bool widen = false;
    for (Eigen::Index j = 0; j < p; ++j) {
      const Vector& m = marg[static_cast<std::size_t>(j)];
      const double peak = m.maxCoeff();
      const double width = hi[j] - lo[j];
      if (m[0] > opts.edge_tol * peak) lo[j] -= 0.5 * width, widen = true;
      if (m[n - 1] > opts.edge_tol * peak) hi[j] += 0.5 * width, widen = true;
    }
    if (widen && attempt < opts.max_widen) continue;

    std::vector<MarginalCurve> out;
    for (Eigen::Index j = 0; j < p; ++j) {
      Vector& m = marg[static_cast<std::size_t>(j)];
      m /= trapezoid(axes[static_cast<std::size_t>(j)], m);
      out.emplace_back(axes[static_cast<std::size_t>(j)], m, "quadrature");
    }
    return out;
  }
}

// ---------------------------------------------------------------------------
// Adaptive random-walk Metropolis.

struct MhConfig {
  std::size_t n_iter = 50000;
  std::size_t n_warmup = 5000;
  std::size_t n_chains = 4;
  std::uint64_t seed = 1;
  // Starting points are drawn from the Laplace approximation with sds inflated by this factor.
  double overdispersion = 2.0;
  bool parallel = true;

  void validate() const {
    if (n_chains < 2) throw InputError("mh: need at least two chains");
    if (n_warmup >= n_iter) throw InputError("mh: warmup must be shorter than the run");
    if (n_iter - n_warmup < 20) throw InputError("mh: too few post-warmup iterations");
  }
};

inline constexpr double kRhatLimit = 1.1;

struct ChainDiagnostics {
  Vector rhat;
  Vector ess;
  double accepted_fraction = 0.0;

  bool converged() const { return (rhat.array() < kRhatLimit).all(); }
};

// Split-R-hat over chains given as (iterations x p) matrices.
inline Vector split_rhat(const std::vector<Matrix>& chains) {
  if (chains.empty()) throw InputError("split_rhat: no chains");
  const Eigen::Index p = chains[0].cols();
  const Eigen::Index half = chains[0].rows() / 2;
  if (half < 2) throw InputError("split_rhat: chains too short");
  std::vector<Matrix> parts;
  for (const auto& c : chains) {
    parts.push_back(c.topRows(half));
    parts.push_back(c.middleRows(c.rows() - half, half));
  }
  const double n = static_cast<double>(half);
  const double m = static_cast<double>(parts.size());
  Vector rhat(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    Vector means(parts.size()), vars(parts.size());
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const auto col = parts[k].col(j);
      means[static_cast<Eigen::Index>(k)] = col.mean();
      vars[static_cast<Eigen::Index>(k)] = (col.array() - col.mean()).square().sum() / (n - 1.0);
    }
    const double W = vars.mean();
    const double B = n * (means.array() - means.mean()).square().sum() / (m - 1.0);
    const double var_plus = (n - 1.0) / n * W + B / n;
    rhat[j] = W > 0.0 ? std::sqrt(var_plus / W) : 1.0;
  }
  return rhat;
}

// Multi-chain effective sample size with Geyer's initial positive sequence.
inline Vector effective_sample_size(const std::vector<Matrix>& chains) {
  const Eigen::Index p = chains[0].cols();
  const Eigen::Index n = chains[0].rows();
  const double M = static_cast<double>(chains.size());
  Vector ess(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    std::vector<Vector> centered;
    Vector means(chains.size()), vars(chains.size());
    for (std::size_t k = 0; k < chains.size(); ++k) {
      const Vector col = chains[k].col(j);
      means[static_cast<Eigen::Index>(k)] = col.mean();
      centered.push_back(col.array() - col.mean());
      vars[static_cast<Eigen::Index>(k)] = centered.back().squaredNorm() / (static_cast<double>(n) - 1.0);
    }
    const double W = vars.mean();
    const double B = static_cast<double>(n) * (means.array() - means.mean()).square().sum() / (M - 1.0);
    const double var_plus = (static_cast<double>(n) - 1.0) / static_cast<double>(n) * W + B / static_cast<double>(n);
    if (!(var_plus > 0.0)) {
      ess[j] = M * static_cast<double>(n);
      continue;
    }
    auto rho = [&](Eigen::Index lag) {
      double ac = 0.0;
      for (const auto& c : centered) {
        ac += c.head(n - lag).dot(c.tail(n - lag)) / static_cast<double>(n);
      }
      return 1.0 - (W - ac / M) / var_plus;
    };
    double tau = -1.0;
    for (Eigen::Index t = 0; t + 1 < n; t += 2) {
      const double pair = rho(t) + rho(t + 1);
      if (!(pair > 0.0)) break;
      tau += 2.0 * pair;
    }
    ess[j] = M * static_cast<double>(n) / std::max(tau, 1.0 / std::log10(M * static_cast<double>(n)));
  }
  return ess;
}

struct McmcResult {
  // Post-warmup draws pooled in chain order.
  Matrix samples;
  std::vector<Matrix> chains;
  ChainDiagnostics diagnostics;
};

namespace detail {

struct ChainOutput {
  Matrix draws;
  std::size_t accepted = 0;
};

inline ChainOutput run_chain(const Target& target, const GaussianApprox& base, const MhConfig& cfg,
                             std::size_t chain) {
  const Eigen::Index p = target.dim();
  std::seed_seq seq{static_cast<std::uint64_t>(cfg.seed), static_cast<std::uint64_t>(chain)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto gauss = [&]() {
    Vector z(p);
    for (Eigen::Index j = 0; j < p; ++j) z[j] = normal(rng);
    return z;
  };

  const double scale = 2.38 * 2.38 / static_cast<double>(p);
  const Matrix base_L = SpdFactor(base.cov, "mh: base covariance").lower();
  Matrix prop_L = std::sqrt(scale) * base_L;
  Vector x = base.mean + cfg.overdispersion * (base_L * gauss());
  double fx = target.log_joint(x);
  for (int tries = 0; !std::isfinite(fx) && tries < 100; ++tries) {
    x = base.mean + base_L * gauss();
    fx = target.log_joint(x);
  }
  if (!std::isfinite(fx)) throw NonConvergenceError("mh: no finite starting point", INFINITY);

  // Running moments for adaptation during warmup.
  Vector run_mean = Vector::Zero(p);
  Matrix run_m2 = Matrix::Zero(p, p);
  double count = 0.0;
  const std::size_t adapt_start = std::min<std::size_t>(cfg.n_warmup / 4, 1000);

  ChainOutput out;
  out.draws.resize(static_cast<Eigen::Index>(cfg.n_iter - cfg.n_warmup), p);
  for (std::size_t it = 0; it < cfg.n_iter; ++it) {
    const Vector y = x + prop_L * gauss();
    const double fy = target.log_joint(y);
    const bool accept = std::isfinite(fy) && std::log(unif(rng)) < fy - fx;
    if (accept) x = y, fx = fy;
    if (it < cfg.n_warmup) {
      count += 1.0;
      const Vector dlt = x - run_mean;
      run_mean += dlt / count;
      run_m2 += dlt * (x - run_mean).transpose();
      if (it >= adapt_start && it % 50 == 0) {
        Matrix cov = run_m2 / std::max(1.0, count - 1.0);
        cov = 0.5 * (cov + cov.transpose());
        cov.diagonal().array() += 1e-10 * std::max(1.0, cov.diagonal().maxCoeff());
        Eigen::LLT<Matrix> llt(scale * cov);
        if (llt.info() == Eigen::Success) prop_L = llt.matrixL();
      }
    } else {
      out.draws.row(static_cast<Eigen::Index>(it - cfg.n_warmup)) = x.transpose();
      if (accept) ++out.accepted;
    }
  }
  return out;
}

}  // namespace detail

inline McmcResult mh_sample(const Target& target, const GaussianApprox& base, const MhConfig& cfg = {}) {
  cfg.validate();
  require_same_size(target.dim(), base.dim(), "mh_sample: base");
  std::vector<detail::ChainOutput> outs(cfg.n_chains);
  if (cfg.parallel) {
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(cfg.n_chains);
    for (std::size_t c = 0; c < cfg.n_chains; ++c) {
      threads.emplace_back([&, c]() {
        try {
          outs[c] = detail::run_chain(target, base, cfg, c);
        } catch (...) {
          errors[c] = std::current_exception();
        }
      });
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  } else {
    for (std::size_t c = 0; c < cfg.n_chains; ++c) outs[c] = detail::run_chain(target, base, cfg, c);
  }

  McmcResult res;
  const Eigen::Index per = static_cast<Eigen::Index>(cfg.n_iter - cfg.n_warmup);
  res.samples.resize(per * static_cast<Eigen::Index>(cfg.n_chains), target.dim());
  std::size_t accepted = 0;
  for (std::size_t c = 0; c < cfg.n_chains; ++c) {
    res.samples.middleRows(static_cast<Eigen::Index>(c) * per, per) = outs[c].draws;
    accepted += outs[c].accepted;
    res.chains.push_back(std::move(outs[c].draws));
  }
  res.diagnostics.rhat = split_rhat(res.chains);
  res.diagnostics.ess = effective_sample_size(res.chains);
  res.diagnostics.accepted_fraction = static_cast<double>(accepted) / static_cast<double>(res.samples.rows());
  return res;
}

// KDE marginals of the pooled draws, each evaluated on its own accuracy grid.
inline std::vector<MarginalCurve> mcmc_marginals(const McmcResult& mc) {
  std::vector<MarginalCurve> out;
  for (Eigen::Index j = 0; j < mc.samples.cols(); ++j) {
    const Vector x = mc.samples.col(j);
    const double m = x.mean();
    const double sd = std::sqrt((x.array() - m).square().sum() / static_cast<double>(x.size() - 1));
    // Slightly wider than the accuracy window so its end points interpolate cleanly.
    out.push_back(kde(x, Vector::LinSpaced(kAccuracyIntervals + 1, m - 5.5 * sd, m + 5.5 * sd), "mcmc"));
    out.back().ref_mean = m;
    out.back().ref_sd = sd;
  }
  return out;
}

}  // namespace snm
