#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "snm/estimators.hpp"
#include "test_util.hpp"

namespace {

using namespace snm;

// -1/2 (theta - c)' A (theta - c).
class GaussianTarget final : public Target {
 public:
  GaussianTarget(Vector c, Matrix A) : c_(std::move(c)), A_(std::move(A)) {}
  Eigen::Index dim() const override { return c_.size(); }
  double log_joint(const Vector& t) const override { return -0.5 * (t - c_).dot(A_ * (t - c_)); }
  Vector grad(const Vector& t) const override { return -A_ * (t - c_); }
  Matrix hessian(const Vector&) const override { return -A_; }
  Vector tud(const Vector& t) const override { return Vector::Zero(t.size()); }

 private:
  Vector c_;
  Matrix A_;
};

GlmModel intercept_only(std::initializer_list<double> ys) {
  Vector y(static_cast<Eigen::Index>(ys.size()));
  Eigen::Index i = 0;
  for (double v : ys) y[i++] = v;
  return GlmModel(GlmData(Matrix::Ones(y.size(), 1), y), GlmKind::Probit, 1e4);
}

GlmModel eight_point_probit() {
  Matrix X(8, 2);
  X << 1, -0.8, 1, 0.3, 1, 1.7, 1, -2.1, 1, 0.05, 1, 0.9, 1, -0.4, 1, 2.6;
  Vector y(8);
  y << 0, 1, 1, 0, 1, 0, 0, 1;
  return GlmModel(GlmData(X, y), GlmKind::Probit, 1e4);
}

GlmModel pure_prior(Eigen::Index p, double s2) { return GlmModel(GlmData(Matrix(0, p), Vector(0)), GlmKind::Probit, s2); }

// Dense-grid quadrature values from tests/oracles/posterior_oracle.py.
constexpr double kP1Mean = 0.752765731553928, kP1Var = 0.497773296404939, kP1Tum = 0.0801802077114576;
const Vector kP2Mean = (Vector(2) << -0.42174422719700577, 1.4321253495671415).finished();
const Vector kP2Sd = (Vector(2) << 0.6324212636344873, 0.8029639796342423).finished();

TEST(FindMode, PurePrior) {
  const auto st = find_mode(pure_prior(3, 4.0), Vector::Constant(3, 1.5));
  EXPECT_LT(st.mode.norm(), 1e-14);
  EXPECT_LT(rel_error(st.neg_hessian, Matrix::Identity(3, 3) / 4.0), 1e-15);
}

TEST(FindMode, ProbitGradientVanishes) {
  const auto m = eight_point_probit();
  const auto st = find_mode(m);
  EXPECT_LT(m.grad(st.mode).norm(), 1e-10);
  EXPECT_EQ(st.tud, m.tud(st.mode));
}

TEST(FindMode, QuadraticTakesOneFullStep) {
  std::mt19937_64 rng(1);
  const Matrix A = snm::testing::random_spd(4, rng);
  const Vector c = snm::testing::random_vector(4, rng, -3, 3);
  const auto fit = find_mode_detailed(GaussianTarget(c, A), Vector::Zero(4));
  EXPECT_LT(rel_error(fit.stats.mode, c), 1e-12);
  EXPECT_EQ(fit.newton.iterations, 1);
}

TEST(FindMode, ObjectiveIncreasesAlongTheTrajectory) {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 10; ++rep) {
    const auto kind = rep % 2 ? GlmKind::Logistic : GlmKind::Probit;
    const GlmModel m(snm::testing::random_glm(20, snm::testing::random_vector(3, rng, -1, 1), rng), kind, 1e4);
    const auto fit = find_mode_detailed(m, Vector::Constant(3, 2.0));
    // Steps at rounding level may leave the objective unchanged.
    const auto& tr = fit.newton.trace;
    for (std::size_t i = 1; i < tr.size(); ++i) {
      const double slack = 16 * std::numeric_limits<double>::epsilon() * (1 + std::abs(tr[i - 1]));
      EXPECT_GE(tr[i], tr[i - 1] - slack);
      if (tr[i - 1] < tr.back() - 1e-6) {
        EXPECT_GT(tr[i], tr[i - 1]);
      }
    }
  }
}

TEST(FindMode, IterationCapThrowsWithGradientNorm) {
  NewtonOptions opts;
  opts.max_iter = 1;
  try {
    find_mode(eight_point_probit(), Vector::Constant(2, 3.0), opts);
    FAIL();
  } catch (const NonConvergenceError& e) {
    EXPECT_GT(e.grad_norm(), 0.0);
  }
}

TEST(Laplace, PurePriorAndSymmetricInstance) {
  const auto g = laplace(pure_prior(2, 9.0));
  EXPECT_LT(g.mean.norm(), 1e-14);
  EXPECT_LT(rel_error(g.cov, 9.0 * Matrix::Identity(2, 2)), 1e-14);
  EXPECT_EQ(g.source, "laplace");
  // Balanced responses give a posterior symmetric about zero.
  EXPECT_NEAR(laplace(intercept_only({1, 0, 1, 0})).mean[0], 0.0, 1e-6);
  EXPECT_TRUE(is_spd(laplace(eight_point_probit()).cov));
}

TEST(GaussianApprox, Validation) {
  EXPECT_THROW(GaussianApprox(Vector::Zero(2), -Matrix::Identity(2, 2)), InputError);
  EXPECT_THROW(GaussianApprox(Vector::Zero(3), Matrix::Identity(2, 2)), DimensionError);
}

TEST(Importance, GaussianTarget) {
  std::mt19937_64 rng(3);
  const Matrix A = snm::testing::random_spd(3, rng);
  const Vector c = snm::testing::random_vector(3, rng, -1, 1);
  const GaussianTarget t(c, A);
  ImportanceConfig cfg;
  cfg.seed = 11;
  const auto r = importance_moments(t, find_mode(t), cfg);
  EXPECT_NEAR(r.weights.sum(), 1.0, 1e-12);
  EXPECT_TRUE((r.weights.array() >= 0).all());
  for (int j = 0; j < 3; ++j) {
    EXPECT_LT(std::abs(r.stats.mean[j] - c[j]), 4 * r.mean_se[j]);
    EXPECT_LT(std::abs(r.stats.tum[j]), 4 * r.tum_se[j]);
  }
  EXPECT_EQ(r.stats.cov, r.stats.cov.transpose());
  EXPECT_TRUE(is_spd(r.stats.cov));
  EXPECT_FALSE(r.unreliable);
  EXPECT_GT(r.ess, 1000.0);
}

TEST(Importance, MatchesQuadratureOnOneDimensionalProbit) {
  const auto m = intercept_only({1, 1, 0, 1});
  ImportanceConfig cfg;
  cfg.seed = 2024;
  const auto r = importance_moments(m, find_mode(m), cfg);
  EXPECT_LT(std::abs(r.stats.mean[0] - kP1Mean), 4 * r.mean_se[0]);
  EXPECT_LT(std::abs(r.stats.cov(0, 0) - kP1Var), 4 * r.cov_se(0, 0));
  EXPECT_LT(std::abs(r.stats.tum[0] - kP1Tum), 4 * r.tum_se[0]);
}

TEST(Importance, FixedSeedIsBitIdentical) {
  const auto m = eight_point_probit();
  const auto st = find_mode(m);
  ImportanceConfig cfg;
  cfg.seed = 99;
  cfg.n_samples = 5000;
  const auto a = importance_moments(m, st, cfg);
  const auto b = importance_moments(m, st, cfg);
  EXPECT_EQ(a.stats.mean, b.stats.mean);
  EXPECT_EQ(a.stats.cov, b.stats.cov);
  EXPECT_EQ(a.stats.tum, b.stats.tum);
  cfg.seed = 100;
  EXPECT_NE(importance_moments(m, st, cfg).stats.mean, a.stats.mean);
}

TEST(Importance, PoorProposalIsFlagged) {
  const GaussianTarget t(Vector::Zero(2), Matrix::Identity(2, 2) * 1e4);
  ImportanceConfig cfg;
  cfg.n_samples = 2000;
  cfg.stabilization = Stabilization::None;
  // Proposal far too wide: a handful of draws carry all the weight.
  const DerivativeStats bad(Vector::Zero(2), Matrix::Identity(2, 2) * 1e-2);
  const auto r = importance_moments(t, bad, cfg);
  EXPECT_TRUE(r.unreliable);
  EXPECT_LT(r.ess, kMinEss);
}

TEST(Importance, ConfigValidation) {
  const auto m = eight_point_probit();
  const auto st = find_mode(m);
  ImportanceConfig cfg;
  cfg.n_samples = 10;
  EXPECT_THROW(importance_moments(m, st, cfg), InputError);
  cfg.n_samples = 5000;
  cfg.df = 3.0;
  EXPECT_THROW(importance_moments(m, st, cfg), InputError);
  cfg.third_moments = false;
  EXPECT_NO_THROW(importance_moments(m, st, cfg));
}

TEST(QuadratureGrid, Structure) {
  const Vector c = (Vector(2) << 1.0, -2.0).finished();
  const Vector s = (Vector(2) << 0.5, 2.0).finished();
  const auto g = QuadratureGrid::around(c, s, 8.0, 401);
  ASSERT_EQ(g.dim(), 2);
  for (int j = 0; j < 2; ++j) {
    EXPECT_EQ(g.axes[j].size(), 401);
    EXPECT_NEAR(g.axes[j][200], c[j], 1e-14);
    EXPECT_NEAR(g.axes[j][0] + g.axes[j][400], 2 * c[j], 1e-13);
    EXPECT_NEAR(g.axes[j][1] - g.axes[j][0], 2 * 8.0 * s[j] / 400, 1e-13);
  }
  EXPECT_THROW(QuadratureGrid::around(c, -s), InputError);
}

TEST(Jensen, PurePriorAndOneDimension) {
  const auto prior = pure_prior(3, 2.0);
  EXPECT_LT(jensen_mean(prior, laplace(prior)).cwiseAbs().maxCoeff(), 1e-6);
  const auto m = intercept_only({1, 1, 0, 1});
  EXPECT_NEAR(jensen_mean(m, laplace(m))[0], kP1Mean, 1e-6);
}

TEST(Jensen, TwoDimensionalProbit) {
  const auto m = eight_point_probit();
  const Vector mean = jensen_mean(m, laplace(m));
  for (int j = 0; j < 2; ++j) EXPECT_LT(std::abs(mean[j] - kP2Mean[j]), 0.15 * kP2Sd[j]) << j;
}

TEST(Jensen, LogisticIsUnsupported) {
  const GlmModel m(eight_point_probit().data(), GlmKind::Logistic);
  EXPECT_THROW(jensen_mean(m, laplace(m)), UnsupportedError);
}

TEST(ImprovedLaplace, PurePriorAndOneDimension) {
  const auto prior = pure_prior(2, 3.0);
  EXPECT_LT(improved_laplace_mean(prior, laplace(prior)).cwiseAbs().maxCoeff(), 1e-6);
  const auto m = intercept_only({1, 1, 0, 1});
  EXPECT_NEAR(improved_laplace_mean(m, laplace(m))[0], kP1Mean, 1e-8);
}

TEST(ImprovedLaplace, TwoDimensionalProbit) {
  const auto m = eight_point_probit();
  const Vector mean = improved_laplace_mean(m, laplace(m));
  for (int j = 0; j < 2; ++j) EXPECT_LT(std::abs(mean[j] - kP2Mean[j]), 0.05 * kP2Sd[j]) << j;
}

TEST(ImprovedLaplace, ExactOnGaussianTargets) {
  std::mt19937_64 rng(6);
  const Matrix A = snm::testing::random_spd(3, rng);
  const Vector c = snm::testing::random_vector(3, rng, -1, 1);
  const GaussianTarget t(c, A);
  const auto base = laplace(t);
  EXPECT_LT(rel_error(improved_laplace_mean(t, base), c), 1e-8);
}

}  // namespace
