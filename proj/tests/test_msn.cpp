#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "snm/msn.hpp"
#include "test_util.hpp"

namespace {

using namespace snm;
using snm::testing::max_rel;
using snm::testing::random_msn;

MsnParams scalar(double mu, double sigma, double d) {
  return MsnParams(Vector::Constant(1, mu), Matrix::Constant(1, 1, sigma), Vector::Constant(1, d));
}

TEST(MsnParams, RejectsBadInputs) {
  EXPECT_THROW(MsnParams(Vector::Zero(2), Matrix::Identity(3, 3), Vector::Zero(2)), DimensionError);
  EXPECT_THROW(MsnParams(Vector::Zero(2), Matrix::Identity(2, 2), Vector::Zero(3)), DimensionError);
  Matrix indefinite(2, 2);
  indefinite << 1, 2, 2, 1;
  EXPECT_THROW(MsnParams(Vector::Zero(2), indefinite, Vector::Zero(2)), InputError);
  Matrix asym = Matrix::Identity(2, 2);
  asym(0, 1) = 0.1;
  EXPECT_THROW(MsnParams(Vector::Zero(2), asym, Vector::Zero(2)), InputError);
  Vector bad = Vector::Zero(2);
  bad[1] = NAN;
  EXPECT_THROW(MsnParams(bad, Matrix::Identity(2, 2), Vector::Zero(2)), InputError);
}

TEST(MsnParams, SymmetrizesSmallDrift) {
  Matrix s = Matrix::Identity(2, 2);
  s(0, 1) = 0.3;
  s(1, 0) = 0.3 + 1e-12;
  const MsnParams P(Vector::Zero(2), s, Vector::Zero(2));
  EXPECT_EQ(P.sigma()(0, 1), P.sigma()(1, 0));
}

TEST(MsnParams, DeltaConstraintClosure) {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 50; ++rep) {
    const auto P = random_msn(1 + rep % 4, rng, 3.0);
    const double q = P.sigma_factor().inv_quad(P.delta());
    EXPECT_LT(q, 1.0 - 1e-12);
    EXPECT_NEAR(q, P.d_sigma_d() / (1.0 + P.d_sigma_d()), 1e-12);
  }
}

TEST(LogDensity, ReducesToGaussianWhenUnskewed) {
  const MsnParams P(Vector::Zero(2), Matrix::Identity(2, 2), Vector::Zero(2));
  EXPECT_NEAR(log_density(P, Vector::Zero(2)), -std::log(2 * M_PI), 1e-14);
  EXPECT_NEAR(log_density(scalar(0, 1, 1), Vector::Zero(1)), -0.5 * std::log(2 * M_PI), 1e-14);
  EXPECT_NEAR(log_density(scalar(0, 1, 1), Vector::Zero(1)), -0.918939, 1e-6);
  EXPECT_THROW(log_density(P, Vector::Zero(3)), DimensionError);
}

TEST(LogDensity, UnivariateNormalizesUnderQuadrature) {
  const auto P = scalar(0.0, 1.0, 3.0);
  // Trapezoid over [-12, 12] with 24001 points.
  double z = 0.0;
  const double h = 1e-3;
  for (int i = 0; i <= 24000; ++i) {
    const double x = -12.0 + h * i;
    const double w = (i == 0 || i == 24000) ? 0.5 : 1.0;
    z += w * h * std::exp(log_density(P, Vector::Constant(1, x)));
  }
  EXPECT_NEAR(z, 1.0, 1e-10);
  // log p(0.5) = log 2 + log phi(0.5) + log Phi(1.5)
  const double expected = std::log(2.0) + norm_logpdf(0.5) + std::log(norm_cdf(1.5));
  EXPECT_NEAR(log_density(P, Vector::Constant(1, 0.5)), expected, 1e-14);
  EXPECT_NEAR(density_1d(P, 0.5), std::exp(expected), 1e-14);
}

TEST(LogDensity, NormalizationOnTrapezoidGrid) {
  std::mt19937_64 rng(5);
  for (int p = 1; p <= 2; ++p) {
    const auto P = random_msn(p, rng, 2.0);
    const int n = 2000;
    Vector lo(p), step(p);
    for (int j = 0; j < p; ++j) {
      const double s = std::sqrt(P.sigma()(j, j));
      lo[j] = P.mu()[j] - 10 * s;
      step[j] = 20 * s / (n - 1);
    }
    double total = 0.0;
    if (p == 1) {
      for (int i = 0; i < n; ++i) {
        const double w = (i == 0 || i == n - 1) ? 0.5 : 1.0;
        total += w * step[0] * std::exp(log_density(P, Vector::Constant(1, lo[0] + i * step[0])));
      }
    } else {
      Vector t(2);
      for (int i = 0; i < n; ++i) {
        const double wi = (i == 0 || i == n - 1) ? 0.5 : 1.0;
        for (int k = 0; k < n; ++k) {
          const double wk = (k == 0 || k == n - 1) ? 0.5 : 1.0;
          t << lo[0] + i * step[0], lo[1] + k * step[1];
          total += wi * wk * step[0] * step[1] * std::exp(log_density(P, t));
        }
      }
    }
    EXPECT_NEAR(total, 1.0, 1e-4) << "p=" << p;
  }
}

TEST(Derivatives, ClosedFormCases) {
  const auto P = scalar(0, 1, 1);
  EXPECT_NEAR(grad_log_density(P, Vector::Zero(1))[0], 0.7978845608, 1e-10);
  EXPECT_NEAR(hessian_log_density(P, Vector::Zero(1))(0, 0), -1.6366197724, 1e-10);
  EXPECT_NEAR(tud_log_density(scalar(0, 1, 2), Vector::Zero(1))[0], 1.744109, 1e-6);

  std::mt19937_64 rng(3);
  const Matrix S = snm::testing::random_spd(3, rng);
  const Vector mu = snm::testing::random_vector(3, rng, -1, 1);
  const MsnParams G(mu, S, Vector::Zero(3));
  EXPECT_LT(grad_log_density(G, mu).norm(), 1e-14);
  EXPECT_LT(max_rel(hessian_log_density(G, mu + Vector::Ones(3)), -S.inverse()), 1e-12);
  EXPECT_EQ(tud_log_density(G, Vector::Ones(3)), Vector::Zero(3));
}

TEST(Derivatives, AgreeWithFiniteDifferences) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> n(0.0, 0.5);
  for (int rep = 0; rep < 50; ++rep) {
    const int p = 1 + rep % 3;
    const auto P = random_msn(p, rng, 3.0);
    Vector theta = P.mu();
    for (int j = 0; j < p; ++j) theta[j] += n(rng);

    auto f = [&](const Vector& t) { return log_density(P, t); };
    auto g = [&](const Vector& t) { return grad_log_density(P, t); };
    const Vector grad = g(theta);
    EXPECT_LT(max_rel(snm::testing::fd_gradient(f, theta), grad), 1e-6) << rep;
    const Matrix hess = hessian_log_density(P, theta);
    EXPECT_LT(max_rel(snm::testing::fd_jacobian(g, theta), hess), 1e-5) << rep;
    const Vector tud = tud_log_density(P, theta);
    Vector fd3(p);
    for (int j = 0; j < p; ++j) fd3[j] = snm::testing::fd_third(f, theta, j);
    // Third differences carry roundoff near 1e-9, so tiny tuds are compared on an absolute floor.
    EXPECT_LT((fd3 - tud).cwiseAbs().maxCoeff() / std::max(1e-3, tud.cwiseAbs().maxCoeff()), 1e-4) << rep;
  }
}

TEST(Moments, ClosedFormScalarCase) {
  const auto m = moments(scalar(0, 1, 1));
  EXPECT_NEAR(m.mean[0], std::sqrt(1 / M_PI), 1e-15);
  EXPECT_NEAR(m.mean[0], 0.5641896, 1e-7);
  EXPECT_NEAR(m.cov(0, 0), 1 - 1 / M_PI, 1e-15);
  EXPECT_NEAR(m.tum[0], 0.0770795, 1e-7);

  const MsnParams G(Vector::Ones(2), Matrix::Identity(2, 2), Vector::Zero(2));
  const auto g = moments(G);
  EXPECT_EQ(g.mean, G.mu());
  EXPECT_EQ(g.cov, G.sigma());
  EXPECT_EQ(g.tum, Vector::Zero(2));
}

struct McMoments {
  Vector mean, mean_se;
  Matrix cov, cov_se;
  Vector tum, tum_se;
};

McMoments monte_carlo(const Matrix& x) {
  const double n = static_cast<double>(x.rows());
  const Eigen::Index p = x.cols();
  McMoments out;
  out.mean = x.colwise().mean().transpose();
  const Matrix c = x.rowwise() - out.mean.transpose();
  out.cov = c.transpose() * c / n;
  out.mean_se = (out.cov.diagonal() / n).cwiseSqrt();
  out.cov_se.resize(p, p);
  for (Eigen::Index a = 0; a < p; ++a)
    for (Eigen::Index b = 0; b < p; ++b) {
      const Vector prod = c.col(a).cwiseProduct(c.col(b));
      out.cov_se(a, b) = std::sqrt((prod.array() - out.cov(a, b)).square().mean() / n);
    }
  out.tum = c.array().cube().colwise().mean().transpose();
  out.tum_se.resize(p);
  for (Eigen::Index a = 0; a < p; ++a) {
    out.tum_se[a] = std::sqrt((c.col(a).array().cube() - out.tum[a]).square().mean() / n);
  }
  return out;
}

TEST(Moments, ScalarCaseAgreesWithTenMillionDraws) {
  const auto P = scalar(0, 1, 1);
  const auto mc = monte_carlo(sample(P, 10'000'000, 2024));
  const auto m = moments(P);
  EXPECT_LT(std::abs(mc.mean[0] - m.mean[0]), 3 * mc.mean_se[0]);
  EXPECT_LT(std::abs(mc.cov(0, 0) - m.cov(0, 0)), 3 * mc.cov_se(0, 0));
  EXPECT_LT(std::abs(mc.tum[0] - m.tum[0]), 3 * mc.tum_se[0]);
}

TEST(Moments, AgreeWithSamplingOracle) {
  std::mt19937_64 rng(99);
  for (int rep = 0; rep < 20; ++rep) {
    const int p = 1 + rep % 4;
    const auto P = random_msn(p, rng, 3.0);
    const auto m = moments(P);
    const auto mc = monte_carlo(sample(P, 200'000, 1000 + rep));
    for (int a = 0; a < p; ++a) {
      EXPECT_LT(std::abs(mc.mean[a] - m.mean[a]), 4 * mc.mean_se[a]) << rep;
      EXPECT_LT(std::abs(mc.tum[a] - m.tum[a]), 4 * mc.tum_se[a]) << rep;
      for (int b = 0; b < p; ++b) EXPECT_LT(std::abs(mc.cov(a, b) - m.cov(a, b)), 4 * mc.cov_se(a, b)) << rep;
    }
  }
}

TEST(Moments, RandomFourDimensionalCaseMillionDraws) {
  std::mt19937_64 rng(7);
  const auto P = random_msn(4, rng, 3.0);
  const auto m = moments(P);
  const auto mc = monte_carlo(sample(P, 1'000'000, 77));
  for (int a = 0; a < 4; ++a) {
    EXPECT_LT(std::abs(mc.mean[a] - m.mean[a]), 4 * mc.mean_se[a]);
    EXPECT_LT(std::abs(mc.tum[a] - m.tum[a]), 4 * mc.tum_se[a]);
  }
}

TEST(DFromDelta, ScalarAndZeroCases) {
  EXPECT_NEAR(d_from_delta(Vector::Constant(1, 0.6), Matrix::Identity(1, 1))[0], 0.75, 1e-15);
  EXPECT_EQ(d_from_delta(Vector::Zero(3), Matrix::Identity(3, 3)), Vector::Zero(3));
}

TEST(DFromDelta, ConstraintViolationCarriesQuadraticForm) {
  try {
    d_from_delta(Vector::Constant(1, 1.5), Matrix::Identity(1, 1));
    FAIL() << "expected ConstraintError";
  } catch (const ConstraintError& e) {
    EXPECT_NEAR(e.quadratic_form(), 2.25, 1e-15);
  }
}

TEST(DFromDelta, InvertsTheDeltaMap) {
  std::mt19937_64 rng(23);
  for (int rep = 0; rep < 25; ++rep) {
    const auto P = random_msn(1 + rep % 5, rng, 3.0);
    EXPECT_LT(max_rel(d_from_delta(P.delta(), P.sigma()), P.d()), 1e-12);
  }
}

TEST(Marginal, GaussianCase) {
  std::mt19937_64 rng(2);
  const MsnParams P(Vector::Ones(3), snm::testing::random_spd(3, rng), Vector::Zero(3));
  for (int j = 0; j < 3; ++j) {
    const auto m = marginal(P, j);
    EXPECT_EQ(m.mu()[0], P.mu()[j]);
    EXPECT_EQ(m.sigma()(0, 0), P.sigma()(j, j));
    EXPECT_EQ(m.d()[0], 0.0);
  }
  EXPECT_THROW(marginal(P, 3), DimensionError);
}

TEST(Marginal, MatchesNumericalMarginalizationInTwoDimensions) {
  std::mt19937_64 rng(41);
  const auto P = random_msn(2, rng, 2.5);
  const auto m = marginal(P, 0);
  const double s1 = std::sqrt(P.sigma()(1, 1));
  const int n = 8001;
  const double lo = P.mu()[1] - 12 * s1, h = 24 * s1 / (n - 1);
  double worst = 0.0;
  for (double off : {-2.0, -1.0, -0.3, 0.0, 0.4, 1.0, 2.5}) {
    const double x = P.mu()[0] + off * std::sqrt(P.sigma()(0, 0));
    double integral = 0.0;
    Vector t(2);
    for (int k = 0; k < n; ++k) {
      t << x, lo + k * h;
      integral += ((k == 0 || k == n - 1) ? 0.5 : 1.0) * h * std::exp(log_density(P, t));
    }
    worst = std::max(worst, std::abs(integral - density_1d(m, x)));
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(Marginal, IndependentCoordinateKeepsItsSkewness) {
  Matrix S = Matrix::Zero(3, 3);
  S.diagonal() << 2.0, 0.5, 1.5;
  Vector d = Vector::Zero(3);
  d[0] = 1.7;
  const MsnParams P(Vector::Zero(3), S, d);
  const auto m = marginal(P, 0);
  EXPECT_NEAR(m.d()[0], 1.7, 1e-13);
  EXPECT_NEAR(m.sigma()(0, 0), 2.0, 1e-15);
  const auto other = marginal(P, 1);
  EXPECT_NEAR(other.d()[0], 0.0, 1e-15);
}

TEST(Sample, GaussianMeanAndDeterminism) {
  std::mt19937_64 rng(8);
  const Matrix S = snm::testing::random_spd(3, rng);
  const MsnParams G(Vector::Ones(3), S, Vector::Zero(3));
  const int n = 100'000;
  const Matrix x = sample(G, n, 5);
  const Vector mean = x.colwise().mean().transpose();
  for (int j = 0; j < 3; ++j) EXPECT_LT(std::abs(mean[j] - 1.0), 4 * std::sqrt(S(j, j) / n));

  EXPECT_EQ(sample(G, 1000, 42), sample(G, 1000, 42));
  EXPECT_NE(sample(G, 1000, 42), sample(G, 1000, 43));
}

TEST(Sample, ScalarMean) {
  const Matrix x = sample(scalar(0, 1, 1), 1'000'000, 9);
  EXPECT_NEAR(x.mean(), 0.5642, 0.004);
}

// zeta_1 and the mode: m = mu + zeta_1(kappa) Sigma d with kappa / zeta_1(kappa) = d'Sigma d.
Vector mode_by_bisection(const MsnParams& P) {
  const double target = P.d_sigma_d();
  if (target == 0.0) return P.mu();
  double lo = 0.0, hi = 50.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (mid / zeta(1, mid) < target ? lo : hi) = mid;
  }
  const double k = 0.5 * (lo + hi);
  return P.mu() + zeta(1, k) * P.sigma() * P.d();
}

TEST(Mode, NewtonAgreesWithScalarReduction) {
  std::mt19937_64 rng(31);
  for (int rep = 0; rep < 25; ++rep) {
    const auto P = random_msn(1 + rep % 6, rng, 3.0);
    const Vector m = mode(P);
    EXPECT_LT(max_rel(m, mode_by_bisection(P)), 1e-10) << rep;
    EXPECT_LT(grad_log_density(P, m).norm(), 1e-10);
  }
}

}  // namespace
