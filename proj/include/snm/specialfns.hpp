#pragma once

// Derivatives of log Phi(x), the standard normal log-CDF:
//   zeta_0 = log Phi, zeta_1 = phi / Phi (inverse Mills ratio),
//   zeta_2 = -zeta_1 (x + zeta_1),
//   zeta_3 = -zeta_2 (x + zeta_1) - zeta_1 (1 + zeta_2).
//
// For x < -2 the recurrences cancel catastrophically, so the tail is evaluated
// from the Laplace continued fraction of the Mills ratio,
//   1 / zeta_1(-t) = 1 / (t + T_1),  T_k = k / (t + T_{k+1}),
// in which x + zeta_1 = T_1, 1 + zeta_2 = T_1 (T_2 - T_1) and
// zeta_3 = zeta_1 T_1^2 T_2^2 T_3 (t + 3 T_3 - 2 T_4) / 6 are cancellation free.

#include <array>
#include <cmath>
#include <string>

#include "snm/errors.hpp"
#include "snm/linalg.hpp"

namespace snm {

class ZetaOrder {
 public:
  explicit constexpr ZetaOrder(int k) : k_(k) {
    if (k < 0 || k > 3) throw DomainError("zeta order must be in {0,1,2,3}, got " + std::to_string(k));
  }
  constexpr int value() const noexcept { return k_; }

 private:
  int k_;
};

struct ZetaValues {
  double z0;
  double z1;
  double z2;
  double z3;
  double operator[](int k) const { return k == 0 ? z0 : k == 1 ? z1 : k == 2 ? z2 : z3; }
};

inline double norm_logpdf(double x) { return -0.5 * x * x - kLogSqrt2Pi; }

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

namespace detail {

struct MillsTail {
  double t;
  std::array<double, 5> T;  // T[1..4]
};

// Backward evaluation of the continued fraction, valid for t >= 2.
inline MillsTail mills_tail(double t) {
  const int depth = t < 3.0 ? 160 : t < 5.0 ? 80 : t < 10.0 ? 40 : 20;
  MillsTail out{t, {0.0, 0.0, 0.0, 0.0, 0.0}};
  double T = 0.0;
  for (int k = depth; k >= 1; --k) {
    T = k / (t + T);
    if (k <= 4) out.T[static_cast<std::size_t>(k)] = T;
  }
  return out;
}

inline void check_finite(double x) {
  if (!std::isfinite(x)) throw DomainError("zeta: argument must be finite");
}

}  // namespace detail

inline constexpr double kZetaTailSwitch = -2.0;

// All four derivatives at once; the recurrences share their intermediates.
inline ZetaValues zeta_all(double x) {
  detail::check_finite(x);
  if (x < kZetaTailSwitch) {
    const auto tail = detail::mills_tail(-x);
    const double t = tail.t;
    const auto& T = tail.T;
    const double z1 = t + T[1];
    const double z0 = norm_logpdf(x) - std::log(z1);
    const double z2 = -z1 * T[1];
    const double z3 = z1 * T[1] * T[1] * T[2] * T[2] * T[3] * (t + 3.0 * T[3] - 2.0 * T[4]) / 6.0;
    return {z0, z1, z2, z3};
  }
  double z0;
  if (x < 0.0) {
    z0 = std::log(norm_cdf(x));
  } else {
    z0 = std::log1p(-0.5 * std::erfc(x / std::sqrt(2.0)));
  }
  const double z1 = std::exp(norm_logpdf(x)) / std::exp(z0);
  const double w = x + z1;
  const double z2 = -z1 * w;
  const double z3 = z1 * (w * w - 1.0 - z2);
  return {z0, z1, z2, z3};
}

// zeta_0 alone, skipping the continued fraction until erfc nears underflow.
inline double log_norm_cdf(double x) {
  detail::check_finite(x);
  if (x < -30.0) return zeta_all(x).z0;
  if (x < 0.0) return std::log(norm_cdf(x));
  return std::log1p(-0.5 * std::erfc(x / std::sqrt(2.0)));
}

inline double zeta(ZetaOrder k, double x) { return zeta_all(x)[k.value()]; }

inline double zeta(int k, double x) { return zeta(ZetaOrder(k), x); }

inline Vector zeta_vec(ZetaOrder k, const Eigen::Ref<const Vector>& xs) {
  Vector out(xs.size());
  for (Eigen::Index i = 0; i < xs.size(); ++i) out[i] = zeta(k, xs[i]);
  return out;
}

// log zeta_1(x); finite for every finite x, including where zeta_1 underflows.
inline double log_zeta1(double x) {
  detail::check_finite(x);
  if (x < kZetaTailSwitch) return std::log(-x + detail::mills_tail(-x).T[1]);
  return norm_logpdf(x) - zeta_all(x).z0;
}

}  // namespace snm
