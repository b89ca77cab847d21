#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

#include <boost/math/tools/minima.hpp>
#include <boost/math/tools/roots.hpp>

#include "snm/errors.hpp"

namespace snm {

// Geometric grid scanned for sign changes: lo * 10^{j / per_decade}, j = 0..n_steps.
// Points at or beyond hi are dropped and hi itself is scanned last.
struct KappaGrid {
  double lo = 1e-8;
  int per_decade = 4;
  int n_steps = 48;
  double hi = INFINITY;

  double at(int j) const { return lo * std::pow(10.0, static_cast<double>(j) / per_decade); }
};

struct KappaRoot {
  double kappa = 0.0;
  double value = 0.0;
  // Number of accepted roots found on the grid; more than one means the smallest was taken.
  int n_roots = 0;
};

namespace detail {

inline double width_tolerance(double x) {
  return std::max(1e-12, 4.0 * std::numeric_limits<double>::epsilon() * std::abs(x));
}

template <typename F>
std::pair<double, double> refine_bracket(F& f, double a, double b, double fa, double fb) {
  std::uintmax_t iters = 200;
  auto tol = [](double x, double y) { return std::abs(x - y) <= width_tolerance(std::max(std::abs(x), std::abs(y))); };
  auto r = boost::math::tools::toms748_solve(f, a, b, fa, fb, tol, iters);
  const double fl = f(r.first);
  const double fr = f(r.second);
  return std::abs(fl) <= std::abs(fr) ? std::make_pair(r.first, fl) : std::make_pair(r.second, fr);
}

}  // namespace detail

// Smallest positive root of f found by scanning the grid for sign changes.
// A bracket whose refined value is larger than both of its end values is a
// pole, not a root, and is skipped.
template <typename F>
KappaRoot solve_kappa(F&& f, const KappaGrid& grid = {}) {
  std::function<double(double)> g = [&](double k) { return f(k); };
  KappaRoot out;
  bool have = false;
  double prev_k = NAN, prev_f = NAN;
  std::vector<double> ks;
  for (int j = 0; j <= grid.n_steps && grid.at(j) < grid.hi; ++j) ks.push_back(grid.at(j));
  if (grid.hi < grid.at(grid.n_steps)) ks.push_back(grid.hi);
  for (const double k : ks) {
    const double v = g(k);
    if (!std::isfinite(v)) {
      prev_k = prev_f = NAN;
      continue;
    }
    if (v == 0.0) {
      if (!have) out = {k, 0.0, 0}, have = true;
      ++out.n_roots;
    } else if (std::isfinite(prev_f) && prev_f != 0.0 && (prev_f < 0.0) != (v < 0.0)) {
      const auto [root, fr] = detail::refine_bracket(g, prev_k, k, prev_f, v);
      if (std::abs(fr) <= std::min(std::abs(prev_f), std::abs(v))) {
        if (!have) out = {root, fr, 0}, have = true;
        ++out.n_roots;
      }
    }
    prev_k = k;
    prev_f = v;
  }
  if (!have) throw NoRootError("no sign change of the kappa equation on the search grid");
  return out;
}

struct Minimum {
  double x = 0.0;
  double value = 0.0;
};

// Minimizes a continuous scalar function on [lo, hi].
template <typename F>
Minimum minimize_scalar(F&& f, double lo, double hi, int bits = 40, std::uintmax_t max_iter = 500) {
  auto r = boost::math::tools::brent_find_minima(f, lo, hi, bits, max_iter);
  return {r.first, r.second};
}

}  // namespace snm
