#pragma once

#include <complex>
#include <stdexcept>
#include <string>

namespace hybridtest {

/// Raised when an iterative or spectral solve does not produce a usable result.
class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A condensation was requested at (or numerically next to) a pole of the
/// clamped-interface sub-model. Carries the offending Laplace point.
class NearPoleError : public NumericalFailure {
 public:
  NearPoleError(std::complex<double> s, double rcond)
      : NumericalFailure("bulk dynamic stiffness numerically singular at s = (" +
                         std::to_string(s.real()) + ", " + std::to_string(s.imag()) +
                         "), rcond = " + std::to_string(rcond)),
        s_(s),
        rcond_(rcond) {}

  std::complex<double> s() const { return s_; }
  double rcond() const { return rcond_; }

 private:
  std::complex<double> s_;
  double rcond_;
};

}  // namespace hybridtest
