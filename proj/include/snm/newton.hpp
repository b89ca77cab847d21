#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "snm/errors.hpp"
#include "snm/linalg.hpp"

namespace snm {

struct NewtonOptions {
  // Gradient-norm threshold; a negative value selects 1e-10 * (1 + p).
  double grad_tol = -1.0;
  int max_iter = 500;
  // Step lengths tried are 1, 1/2, ..., 2^-max_halvings.
  int max_halvings = 20;
};

struct NewtonResult {
  Vector x;
  double value = 0.0;
  Vector grad;
  Matrix hessian;
  int iterations = 0;
  // Objective value after every accepted iterate, starting with the initial point.
  std::vector<double> trace;
};

namespace detail {

// Solves (-H) s = g, regularizing -H when it is not numerically positive definite.
inline Vector newton_direction(const Matrix& hessian, const Vector& grad) {
  Matrix neg = -0.5 * (hessian + hessian.transpose());
  Eigen::LLT<Matrix> llt(neg);
  if (llt.info() == Eigen::Success) return llt.solve(grad);
  double ridge = 1e-8 * std::max(1.0, neg.diagonal().cwiseAbs().maxCoeff());
  for (int i = 0; i < 60; ++i, ridge *= 4.0) {
    llt.compute(neg + ridge * Matrix::Identity(neg.rows(), neg.cols()));
    if (llt.info() == Eigen::Success) return llt.solve(grad);
  }
  return grad;
}

}  // namespace detail

// Damped Newton-Raphson ascent for a smooth concave objective.
//
// Each iteration takes x <- x + lambda * (-H)^{-1} g with lambda the first of
// 1, 1/2, 1/4, ... that increases the objective. Once the objective change
// drops to rounding level, a step is also accepted if it shrinks the gradient.
template <typename Value, typename Grad, typename Hess>
NewtonResult damped_newton(Value&& value, Grad&& grad, Hess&& hess, Vector x0, const NewtonOptions& opts = {}) {
  const double p = static_cast<double>(x0.size());
  const double tol = opts.grad_tol > 0.0 ? opts.grad_tol : 1e-10 * (1.0 + p);
  const double eps = std::numeric_limits<double>::epsilon();

  NewtonResult res;
  res.x = std::move(x0);
  res.value = value(res.x);
  res.grad = grad(res.x);
  if (!std::isfinite(res.value) || !res.grad.allFinite()) {
    throw NonConvergenceError("newton: objective is not finite at the starting point", INFINITY);
  }
  res.trace.push_back(res.value);

  for (int it = 0; it < opts.max_iter; ++it) {
    const double gnorm = res.grad.norm();
    if (gnorm < tol) {
      res.hessian = hess(res.x);
      res.iterations = it;
      return res;
    }
    const Matrix h = hess(res.x);
    const Vector dir = detail::newton_direction(h, res.grad);
    bool accepted = false;
    double lambda = 1.0;
    for (int k = 0; k <= opts.max_halvings; ++k, lambda *= 0.5) {
      Vector trial = res.x + lambda * dir;
      const double f = value(trial);
      if (!std::isfinite(f)) continue;
      const bool increased = f > res.value;
      const bool flat = std::abs(f - res.value) <= 16.0 * eps * (1.0 + std::abs(res.value));
      Vector g;
      if (increased || flat) {
        g = grad(trial);
        if (!increased && !(g.norm() < gnorm)) continue;
      } else {
        continue;
      }
      res.x = std::move(trial);
      res.value = f;
      res.grad = std::move(g);
      res.trace.push_back(f);
      accepted = true;
      break;
    }
    if (!accepted) {
      throw NonConvergenceError("newton: line search failed to increase the objective", gnorm);
    }
  }
  if (res.grad.norm() < tol) {
    res.hessian = hess(res.x);
    res.iterations = opts.max_iter;
    return res;
  }
  throw NonConvergenceError("newton: no convergence after " + std::to_string(opts.max_iter) + " iterations",
                            res.grad.norm());
}

}  // namespace snm
