#pragma once

#include <numbers>

namespace cavqed {

// All rates are stored as angular frequencies (rad/s). I/O and reporting
// quote "value/2pi GHz" throughout, matching the helpers below.

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

inline constexpr double ghz_to_rad(double f_over_2pi_ghz) {
  return f_over_2pi_ghz * kTwoPi * 1e9;
}

inline constexpr double rad_to_ghz(double omega) {
  return omega / (kTwoPi * 1e9);
}

namespace constants {
inline constexpr double hbar = 1.054571817e-34;       // J s
inline constexpr double c0 = 2.99792458e8;            // m/s
inline constexpr double eps0 = 8.8541878128e-12;      // F/m
}  // namespace constants

}  // namespace cavqed
