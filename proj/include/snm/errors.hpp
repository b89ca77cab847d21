#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace snm {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite or out-of-domain scalar argument.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Vector/matrix sizes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Malformed user input: non-SPD matrices, bad files, invalid configuration.
class InputError : public Error {
 public:
  using Error::Error;
};

class UnsupportedError : public Error {
 public:
  using Error::Error;
};

// delta' Sigma^{-1} delta >= 1, so no skewness vector d exists.
class ConstraintError : public Error {
 public:
  ConstraintError(const std::string& what, double quadratic_form)
      : Error(what), quadratic_form_(quadratic_form) {}
  double quadratic_form() const noexcept { return quadratic_form_; }

 private:
  double quadratic_form_;
};

class NoRootError : public Error {
 public:
  using Error::Error;
};

class NonConvergenceError : public Error {
 public:
  NonConvergenceError(const std::string& what, double grad_norm, std::ptrdiff_t index = -1)
      : Error(what), grad_norm_(grad_norm), index_(index) {}
  double grad_norm() const noexcept { return grad_norm_; }
  // Grid-point index for failures inside a quadrature sweep, -1 otherwise.
  std::ptrdiff_t index() const noexcept { return index_; }

 private:
  double grad_norm_;
  std::ptrdiff_t index_;
};

}  // namespace snm
