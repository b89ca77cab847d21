#pragma once

#include <cmath>
#include <span>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "snm/errors.hpp"

namespace snm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kSqrt2OverPi = 0.79788456080286535588;  // sqrt(2/pi)
inline constexpr double kTwoOverPi = 0.63661977236758134308;
inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;  // log(sqrt(2 pi))

inline bool all_finite(const Eigen::Ref<const Matrix>& a) { return a.allFinite(); }

inline void require_same_size(Eigen::Index a, Eigen::Index b, const std::string& what) {
  if (a != b) {
    throw DimensionError(what + ": expected size " + std::to_string(a) + ", got " + std::to_string(b));
  }
}

// Validates a user-supplied symmetric matrix. Asymmetry up to 1e-8 (relative to
// max |A_ij|) is treated as floating-point drift and removed by (A + A')/2.
inline Matrix symmetrized(const Eigen::Ref<const Matrix>& a, const std::string& what) {
  if (a.rows() != a.cols()) {
    throw DimensionError(what + ": matrix is not square");
  }
  if (!a.allFinite()) {
    throw InputError(what + ": matrix has non-finite entries");
  }
  const double scale = a.cwiseAbs().maxCoeff();
  const double asym = (a - a.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-8 * scale) {
    throw InputError(what + ": matrix is not symmetric (max asymmetry " + std::to_string(asym) + ")");
  }
  return 0.5 * (a + a.transpose());
}

// Cholesky factor of a symmetric positive-definite matrix.
class SpdFactor {
 public:
  SpdFactor() = default;

  explicit SpdFactor(const Eigen::Ref<const Matrix>& a, const std::string& what = "matrix")
      : llt_(symmetrized(a, what)) {
    if (llt_.info() != Eigen::Success || !llt_.matrixLLT().allFinite() ||
        (llt_.rows() > 0 && llt_.matrixLLT().diagonal().minCoeff() <= 0.0)) {
      throw InputError(what + ": matrix is not positive definite");
    }
  }

  Eigen::Index dim() const { return llt_.rows(); }
  Matrix lower() const { return llt_.matrixL(); }
  Matrix reconstructed() const { return llt_.reconstructedMatrix(); }

  template <typename Rhs>
  auto solve(const Rhs& b) const {
    return llt_.solve(b);
  }

  Matrix inverse() const {
    Matrix inv = llt_.solve(Matrix::Identity(dim(), dim()));
    return 0.5 * (inv + inv.transpose());
  }

  double log_det() const { return 2.0 * llt_.matrixLLT().diagonal().array().log().sum(); }

  // x' A^{-1} x
  double inv_quad(const Eigen::Ref<const Vector>& x) const {
    const Vector w = llt_.matrixL().solve(x);
    return w.squaredNorm();
  }

 private:
  Eigen::LLT<Matrix> llt_;
};

// True when the matrix (after symmetrization) admits a Cholesky factorization.
inline bool is_spd(const Eigen::Ref<const Matrix>& a) {
  if (a.rows() != a.cols() || !a.allFinite()) return false;
  Eigen::LLT<Matrix> llt(0.5 * (a + a.transpose()));
  return llt.info() == Eigen::Success && (a.rows() == 0 || llt.matrixLLT().diagonal().minCoeff() > 0.0);
}

// Component-wise real (signed) cube root.
inline Vector signed_cbrt(const Eigen::Ref<const Vector>& x) {
  return x.unaryExpr([](double v) { return std::cbrt(v); });
}

inline Vector cube(const Eigen::Ref<const Vector>& x) { return x.array().cube().matrix(); }

// Composite trapezoidal rule on an arbitrary increasing grid.
inline double trapezoid(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionError("trapezoid: grid and values differ in length");
  double total = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i) {
    total += 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
  }
  return total;
}

inline double trapezoid(const Vector& x, const Vector& y) {
  return trapezoid(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())),
                   std::span<const double>(y.data(), static_cast<std::size_t>(y.size())));
}

// max |a - b| / max(1, max |b|): relative error of a against reference b.
inline double rel_error(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Matrix>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return INFINITY;
  if (a.size() == 0) return 0.0;
  return (a - b).cwiseAbs().maxCoeff() / std::max(1.0, b.cwiseAbs().maxCoeff());
}

}  // namespace snm
