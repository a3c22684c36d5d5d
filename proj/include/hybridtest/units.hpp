#pragma once

#include <compare>
#include <numbers>

namespace hybridtest {

/// Cyclic frequency. Internally stored in kHz, the natural unit of the
/// kg-mm-ms system used throughout the library; reports convert to Hz.
class Frequency {
 public:
  constexpr Frequency() = default;

  static constexpr Frequency from_khz(double f) { return Frequency(f); }
  static constexpr Frequency from_hz(double f) { return Frequency(f * 1e-3); }
  /// From an angular frequency in rad/ms.
  static constexpr Frequency from_angular(double omega) {
    return Frequency(omega / (2.0 * std::numbers::pi));
  }

  constexpr double khz() const { return khz_; }
  constexpr double hz() const { return khz_ * 1e3; }
  /// Angular frequency in rad/ms.
  constexpr double angular() const { return 2.0 * std::numbers::pi * khz_; }
  /// Period in ms.
  constexpr double period() const { return 1.0 / khz_; }

  constexpr auto operator<=>(const Frequency&) const = default;

 private:
  explicit constexpr Frequency(double khz) : khz_(khz) {}
  double khz_ = 0.0;
};

}  // namespace hybridtest
