#pragma once

#include <complex>
#include <cstdint>
#include <span>
#include <vector>

#include "cavqed/fit.hpp"

namespace cavqed {

// Spectral peak with Gaussian sigma and Lorentzian FWHM components. The
// amplitude is the peak area in axis units.
struct LineProfile {
  double center = 0.0;
  double sigma_g = 0.0;
  double fwhm_l = 0.0;
  double amplitude = 1.0;
};

// Faddeeva function w(z) for Im(z) >= 0. Relative accuracy ~1e-13.
std::complex<double> faddeeva(std::complex<double> z);

// Gaussian (x) Lorentzian convolution density at x, integrating to amplitude.
double voigt_density(double x, const LineProfile& profile);

struct VoigtFitResult {
  LineProfile profile;  // sigma_g frozen to the supplied value
  FitResult fit;        // parameters: center, fwhm_l, amplitude
};

// Poisson-weighted least-squares Voigt fit to a binned histogram with the
// Gaussian component frozen.
VoigtFitResult fit_voigt_fixed_gaussian(std::span<const double> bin_centers,
                                        std::span<const double> counts,
                                        double sigma_fixed);

// Multi-peak variant sharing one frozen Gaussian width; initial centers
// seed one Voigt per peak.
std::vector<VoigtFitResult> fit_voigt_multipeak(std::span<const double> x,
                                                std::span<const double> y,
                                                std::span<const double> center_guesses,
                                                double sigma_fixed);

enum class DetuningUnit : std::uint8_t { picometre, gigahertz };

struct DetuningSeries {
  std::vector<double> times;      // s
  std::vector<double> detunings;  // pm or GHz per `unit`
  std::vector<bool> quiet_mask;   // per-sample cryocooler quiet flag
  DetuningUnit unit = DetuningUnit::picometre;

  void validate() const;
};

struct VibrationSummary {
  double rms_full = 0.0;   // in-band RMS over the whole series
  double rms_quiet = 0.0;  // in-band RMS over the quiet-masked subset
  double sigma_g = 0.0;    // quiet-histogram Gaussian fit (filled by pipeline)
  double fwhm_l = 0.0;     // full-histogram Lorentzian component (pipeline)
  std::vector<double> frequencies;          // Hz
  std::vector<double> cumulative_rms_full;  // non-decreasing
  std::vector<double> cumulative_rms_quiet;
};

struct PsdOptions {
  std::size_t segment_length = 0;  // 0 = auto (power of two near n/8)
  double overlap = 0.5;            // Hann window, Welch averaging
};

// One-sided Welch PSD normalized so that the integral equals the variance;
// cumulative RMS curves plus in-band RMS for the full and quiet subsets.
VibrationSummary psd_cumulative_rms(const DetuningSeries& series, double sample_rate_hz,
                                    double band_lo_hz, double band_hi_hz,
                                    const PsdOptions& opts = {});

// Linear length<->frequency conversion through the resonance slope (pm/GHz).
double pm_to_ghz(double pm, double slope_pm_per_ghz);
double ghz_to_pm(double ghz, double slope_pm_per_ghz);

// Delta_cw = Delta_e - (Delta_l - kappa'), vibration contribution subtracted.
// Uncertainties combine in quadrature. Throws if delta_l < kappa' by more
// than `tolerance_sigma` combined sigmas (inconsistent calibration).
MeasuredValue deconvolve_emitter_linewidth(MeasuredValue delta_e, MeasuredValue delta_l,
                                           MeasuredValue kappa_prime,
                                           double tolerance_sigma = 3.0);

enum class SweepDirection : std::uint8_t { up, down };

struct SweepTrace {
  double time = 0.0;        // acquisition timestamp, s
  std::vector<double> x;    // sweep axis (piezo units), ascending
  std::vector<double> y;    // transmission
  SweepDirection direction = SweepDirection::up;
};

// Per-sweep carrier positions converted to frequency detunings using the
// known 2*sideband spacing as a ruler. Up and down sweeps are referenced to
// their own direction mean so piezo hysteresis cancels.
DetuningSeries resonance_sweep_detunings(std::span<const SweepTrace> traces,
                                         double sideband_spacing_ghz);

}  // namespace cavqed
