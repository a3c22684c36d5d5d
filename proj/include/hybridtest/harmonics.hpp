#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "hybridtest/units.hpp"

namespace hybridtest {

using cplx = std::complex<double>;

/// Fundamental frequency snapped so that one period spans a whole number of
/// samples.
struct SampledFrequency {
  Frequency omega;
  int period_samples = 0;
};

inline SampledFrequency snap_frequency(Frequency f, double dt) {
  if (!(f.khz() > 0) || !(dt > 0)) throw std::invalid_argument("frequency and dt must be positive");
  const long p = std::lround(f.period() / dt);
  if (p < 4) throw std::invalid_argument("fewer than four samples per period");
  return {Frequency::from_khz(1.0 / (static_cast<double>(p) * dt)), static_cast<int>(p)};
}

/// Truncated Fourier coefficients of a set of named channels,
/// x(t) = Re sum_k c_k e^{i k omega t}, k = 0..N_H. Row per channel, column per
/// harmonic.
class HarmonicVector {
 public:
  HarmonicVector(Frequency omega, std::vector<std::string> channels, int n_harmonics)
      : omega_(omega),
        channels_(std::move(channels)),
        c_(Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(channels_.size()), n_harmonics + 1)) {
    if (n_harmonics < 0) throw std::invalid_argument("harmonic count must be non-negative");
    if (channels_.empty()) throw std::invalid_argument("harmonic vector needs at least one channel");
  }

  HarmonicVector(Frequency omega, std::vector<std::string> channels, Eigen::MatrixXcd coeffs)
      : omega_(omega), channels_(std::move(channels)), c_(std::move(coeffs)) {
    if (c_.rows() != static_cast<Eigen::Index>(channels_.size()) || c_.cols() < 1) {
      throw std::invalid_argument("coefficient matrix does not match the channel list");
    }
    for (Eigen::Index r = 0; r < c_.rows(); ++r) c_(r, 0) = c_(r, 0).real();
  }

  Frequency omega() const { return omega_; }
  int n_harmonics() const { return static_cast<int>(c_.cols()) - 1; }
  int n_channels() const { return static_cast<int>(c_.rows()); }
  const std::vector<std::string>& channels() const { return channels_; }

  int channel_index(const std::string& name) const {
    for (std::size_t i = 0; i < channels_.size(); ++i)
      if (channels_[i] == name) return static_cast<int>(i);
    throw std::out_of_range("no channel named '" + name + "'");
  }

  cplx operator()(int channel, int k) const { return c_(channel, k); }
  cplx at(const std::string& channel, int k) const { return c_(channel_index(channel), k); }

  void set(int channel, int k, cplx value) {
    if (k == 0 && value.imag() != 0.0) throw std::invalid_argument("harmonic 0 must be real");
    c_(channel, k) = value;
  }

  const Eigen::MatrixXcd& coefficients() const { return c_; }

  /// Value of a channel at time t (ms).
  double evaluate(int channel, double t) const {
    double v = 0.0;
    for (int k = 0; k <= n_harmonics(); ++k) {
      v += (c_(channel, k) * std::polar(1.0, k * omega_.angular() * t)).real();
    }
    return v;
  }

  bool conforms(const HarmonicVector& o) const {
    return o.channels_ == channels_ && o.c_.cols() == c_.cols() && o.omega_ == omega_;
  }

  HarmonicVector& operator+=(const HarmonicVector& o) {
    require_conforming(o);
    c_ += o.c_;
    return *this;
  }
  HarmonicVector& operator-=(const HarmonicVector& o) {
    require_conforming(o);
    c_ -= o.c_;
    return *this;
  }
  HarmonicVector& operator*=(double a) {
    c_ *= a;
    return *this;
  }
  friend HarmonicVector operator+(HarmonicVector a, const HarmonicVector& b) { return a += b; }
  friend HarmonicVector operator-(HarmonicVector a, const HarmonicVector& b) { return a -= b; }
  friend HarmonicVector operator*(double s, HarmonicVector a) { return a *= s; }

 private:
  void require_conforming(const HarmonicVector& o) const {
    if (!conforms(o)) throw std::invalid_argument("harmonic vectors do not conform");
  }

  Frequency omega_;
  std::vector<std::string> channels_;
  Eigen::MatrixXcd c_;
};

/// Synchronous discrete Fourier projection over exactly n periods.
/// `samples` holds one row per sample and one column per channel; row r was
/// taken at sample index first_index + r (time (first_index + r) dt), so
/// phases refer to t = 0.
inline HarmonicVector extract_harmonics(const Eigen::MatrixXd& samples, long first_index,
                                        const SampledFrequency& sf, int n_periods, int n_harmonics,
                                        std::vector<std::string> channels) {
  if (n_periods < 1) throw std::invalid_argument("need at least one period");
  if (sf.period_samples < 2 * n_harmonics + 1) {
    throw std::invalid_argument("too few samples per period for the requested harmonics");
  }
  const long expected = static_cast<long>(n_periods) * sf.period_samples;
  if (samples.rows() != expected) {
    throw std::invalid_argument("window of " + std::to_string(samples.rows()) +
                                " samples is not " + std::to_string(n_periods) + " periods of " +
                                std::to_string(sf.period_samples) + " samples");
  }
  if (samples.cols() != static_cast<Eigen::Index>(channels.size())) {
    throw std::invalid_argument("channel names do not match sample columns");
  }
  const int P = sf.period_samples;
  Eigen::MatrixXcd basis(P, n_harmonics + 1);
  for (int j = 0; j < P; ++j) {
    for (int k = 0; k <= n_harmonics; ++k) {
      // Phase index reduced modulo P keeps the basis exactly periodic.
      const long m = ((first_index + j) % P) * k % P;
      basis(j, k) = std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(m) / P);
    }
  }
  Eigen::MatrixXd folded = Eigen::MatrixXd::Zero(P, samples.cols());
  for (long r = 0; r < expected; ++r) folded.row(r % P) += samples.row(r);
  Eigen::MatrixXcd c = (folded.transpose().cast<cplx>() * basis) / static_cast<double>(expected);
  c.rightCols(n_harmonics) *= 2.0;
  return HarmonicVector(sf.omega, std::move(channels), std::move(c));
}

/// Advance harmonic k of the selected channels by theta_k (multiplication by
/// e^{+i theta_k}). theta has one entry per harmonic including k = 0.
inline HarmonicVector compensate_phase(HarmonicVector h, const std::vector<double>& theta,
                                       const std::vector<std::string>& channels) {
  if (static_cast<int>(theta.size()) != h.n_harmonics() + 1) {
    throw std::invalid_argument("one compensation angle per harmonic required");
  }
  for (const auto& name : channels) {
    const int ch = h.channel_index(name);
    for (int k = 1; k <= h.n_harmonics(); ++k) h.set(ch, k, h(ch, k) * std::polar(1.0, theta[k]));
  }
  return h;
}

/// Per-harmonic angles for a lag that grows linearly with frequency:
/// theta_k = k * theta_1.
inline std::vector<double> proportional_angles(double theta_1, int n_harmonics) {
  std::vector<double> out(n_harmonics + 1);
  for (int k = 0; k <= n_harmonics; ++k) out[k] = k * theta_1;
  return out;
}

}  // namespace hybridtest
