#include <cmath>
#include <utility>
#include <vector>

#include <gtest/gtest.h>

#include "snm/specialfns.hpp"
#include "zeta_reference.hpp"

namespace {

using snm::zeta;
using snm::ZetaOrder;
using snm::testing::kZetaReference;

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

TEST(Zeta, ClosedFormsAtZero) {
  EXPECT_NEAR(zeta(0, 0.0), std::log(0.5), 1e-16);
  EXPECT_NEAR(zeta(1, 0.0), std::sqrt(2.0 / M_PI), 1e-15);
  EXPECT_NEAR(zeta(2, 0.0), -2.0 / M_PI, 1e-15);
  EXPECT_NEAR(zeta(3, 0.0), 2.0 * std::pow(2.0 / M_PI, 1.5) - std::sqrt(2.0 / M_PI), 1e-15);
  EXPECT_NEAR(zeta(3, 0.0), 0.2180136, 1e-7);
}

TEST(Zeta, MatchesHighPrecisionReference) {
  for (const auto& r : kZetaReference) {
    const double tol = std::abs(r.x) <= 8.0 ? 1e-12 : 1e-9;
    for (int k = 0; k < 4; ++k) {
      EXPECT_LT(rel(zeta(k, r.x), r.z[k]), tol) << "k=" << k << " x=" << r.x;
    }
  }
}

TEST(Zeta, ThirdDerivativeMatchesSixthOrderDifferencesOfLogPhi) {
  // 7-point stencil for f''' at x = 0, error O(h^4).
  const double h = 1e-2;
  auto f = [](double x) { return zeta(0, x); };
  const double d3 = (-f(3 * h) + 8 * f(2 * h) - 13 * f(h) + 13 * f(-h) - 8 * f(-2 * h) + f(-3 * h)) /
                    (8 * h * h * h);
  EXPECT_NEAR(d3, zeta(3, 0.0), 1e-6);
}

TEST(Zeta, RejectsInvalidOrderAndNonFiniteArgument) {
  EXPECT_THROW(ZetaOrder(4), snm::DomainError);
  EXPECT_THROW(ZetaOrder(-1), snm::DomainError);
  EXPECT_THROW(zeta(1, std::nan("")), snm::DomainError);
  EXPECT_THROW(zeta(0, INFINITY), snm::DomainError);
  EXPECT_THROW(snm::zeta_vec(ZetaOrder(1), snm::Vector::Constant(2, -INFINITY)), snm::DomainError);
}

TEST(Zeta, VectorForm) {
  const auto z = snm::zeta_vec(ZetaOrder(1), snm::Vector::Zero(2));
  ASSERT_EQ(z.size(), 2);
  EXPECT_NEAR(z[0], 0.7978845608, 1e-10);
  EXPECT_NEAR(z[1], 0.7978845608, 1e-10);
  EXPECT_EQ(snm::zeta_vec(ZetaOrder(0), snm::Vector()).size(), 0);
  snm::Vector xs(2);
  xs << -5.0, 5.0;
  const auto v = snm::zeta_vec(ZetaOrder(2), xs);
  EXPECT_EQ(v[0], zeta(2, -5.0));
  EXPECT_EQ(v[1], zeta(2, 5.0));
}

std::vector<double> grid() {
  std::vector<double> xs;
  for (int i = 0; i <= 64; ++i) xs.push_back(-8.0 + 0.25 * i);
  return xs;
}

TEST(ZetaProperties, EachOrderIsTheDerivativeOfThePrevious) {
  const double h = 1e-5;
  for (int k = 1; k <= 3; ++k) {
    for (double x : grid()) {
      auto f = [&](double u) { return zeta(k - 1, u); };
      const double fd = (f(x - 2 * h) - 8 * f(x - h) + 8 * f(x + h) - f(x + 2 * h)) / (12 * h);
      const double exact = zeta(k, x);
      EXPECT_LT(std::abs(fd - exact) / std::max(std::abs(exact), 1e-300), 1e-6) << "k=" << k << " x=" << x;
    }
  }
}

TEST(ZetaProperties, SignsFromLogConcavity) {
  auto xs = grid();
  xs.push_back(30.0);
  xs.push_back(-30.0);
  for (double x : xs) {
    EXPECT_GT(zeta(1, x), 0.0) << x;
    EXPECT_LT(zeta(2, x), 0.0) << x;
  }
}

TEST(ZetaProperties, ThirdDerivativePositiveOnGrid) {
  for (double x : grid()) EXPECT_GT(zeta(3, x), 0.0) << x;
}

TEST(ZetaProperties, LeadingMillsRatioAsymptotics) {
  for (double x : {-20.0, -30.0, -100.0, -700.0, -1500.0}) {
    const double t = -x;
    EXPECT_LT(std::abs(zeta(1, x) - (t + 1.0 / t)) / t, 0.01) << x;
    EXPECT_TRUE(std::isfinite(zeta(0, x)));
    EXPECT_TRUE(std::isfinite(zeta(3, x)));
  }
}

TEST(ZetaProperties, LogPhiStrictlyIncreasing) {
  const auto xs = grid();
  for (std::size_t i = 1; i < xs.size(); ++i) EXPECT_LT(zeta(0, xs[i - 1]), zeta(0, xs[i]));
}

TEST(ZetaProperties, LogZeta1AgreesWithZeta1AndStaysFinite) {
  for (double x : grid()) EXPECT_NEAR(snm::log_zeta1(x), std::log(zeta(1, x)), 1e-12);
  EXPECT_TRUE(std::isfinite(snm::log_zeta1(1e3)));
  EXPECT_NEAR(snm::log_zeta1(1e3), snm::norm_logpdf(1e3), 1e-9);
}

TEST(ZetaProperties, LogNormCdfAgreesWithZeta0) {
  for (const auto& r : kZetaReference) EXPECT_LT(rel(snm::log_norm_cdf(r.x), r.z[0]), 1e-12) << r.x;
  for (double x : grid()) EXPECT_LT(rel(snm::log_norm_cdf(x), zeta(0, x)), 1e-13) << x;
  EXPECT_LT(rel(snm::log_norm_cdf(-30.5), zeta(0, -30.5)), 1e-14);
}

TEST(ZetaProperties, BranchesAreContinuousAtTheSwitch) {
  const double x = snm::kZetaTailSwitch;
  for (int k = 0; k < 4; ++k) {
    const double a = zeta(k, std::nextafter(x, -INFINITY));
    const double b = zeta(k, x);
    EXPECT_LT(std::abs(a - b) / std::abs(b), 1e-13) << k;
  }
}

}  // namespace
