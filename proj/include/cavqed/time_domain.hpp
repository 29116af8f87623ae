#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cavqed/cqed.hpp"
#include "cavqed/fit.hpp"

namespace cavqed {

struct TcspcHistogram {
  std::vector<double> bin_edges;    // seconds, ascending, size = counts.size()+1
  std::vector<std::uint64_t> counts;
  std::uint64_t total_events = 0;

  void validate() const;
  std::vector<double> centers() const;
  double bin_width() const;
};

// Eq-level g2 parameters: bunching amplitude, excited/shelving lifetimes,
// signal fraction, instrument response, normalization.
struct G2Params {
  double a = 0.0;
  double tau1 = 1e-9;
  double tau2 = 1e-7;
  double s = 1.0;
  double sigma_t = 0.0;
  double norm = 1.0;

  void validate() const;
};

struct TimeTag {
  std::uint64_t ps = 0;  // picoseconds
  std::uint8_t channel = 0;
};

struct TimeTagStream {
  std::vector<TimeTag> records;
  void validate() const;  // per-channel monotone timestamps
};

// nodes/weights for \int f(u) exp(-u^2) du
struct GaussHermiteRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};
GaussHermiteRule gauss_hermite(int n);

struct DecayModelOptions {
  int gh_nodes = 64;
  bool normalize_peak = true;   // false: normalize by area
  bool trapezoid_detuning = false;  // brute-force detuning integral (oracle path)
  int trapezoid_points = 2001;      // over +-8 sigma_nu
};

// Detection-probability curve: Gaussian-detuning-weighted rho_cc(t, delta)
// convolved with a Gaussian IRF, evaluated on t_grid (may start below 0).
std::vector<double> vibration_averaged_decay(const CqedParams& params, double sigma_nu,
                                             double sigma_t, std::span<const double> t_grid,
                                             const DecayModelOptions& opts = {});

struct EmgFit {
  MeasuredValue lifetime;   // exponential time constant, s
  MeasuredValue sigma_t;    // Gaussian response, s
  double t0 = 0.0;
  double amplitude = 0.0;
  double baseline = 0.0;
  FitResult fit;
};

// Exponentially modified Gaussian fit with Poisson weights.
EmgFit fit_emg(const TcspcHistogram& histogram);
EmgFit fit_emg(std::span<const double> t, std::span<const double> y,
               std::span<const double> weights);

struct FixedLifetimeInputs {
  MeasuredValue kappa_ghz;     // cavity linewidth during lifetime data
  MeasuredValue gamma_ghz;     // bare decay rate
  MeasuredValue pump_ghz;      // incoherent pump
  MeasuredValue sigma_nu_ghz;  // quiet-period detuning spread
};

struct LinewidthConstraint {
  MeasuredValue delta_cw_ghz;     // measured driven linewidth
  MeasuredValue kappa_prime_ghz;  // cavity linewidth when the spectrum was taken
};

// gamma* from the driven-linewidth relation at fixed g (quadratic in
// Gamma_cw, positive root). Returns a negative value when infeasible.
double gamma_star_from_constraint(double g_ghz, double delta_cw_ghz, double kappa_prime_ghz,
                                  double gamma_ghz, double pump_ghz);

struct ConstrainedFitMember {
  double g_ghz = 0.0;
  double gamma_star_ghz = 0.0;
  double sigma_t_s = 0.0;
};

struct ConstrainedFitResult {
  std::vector<ConstrainedFitMember> members;
  MeasuredValue g_ghz;           // ensemble mean +- std
  MeasuredValue gamma_star_ghz;
  MeasuredValue sigma_t_s;
  MeasuredValue c_inc;           // 4g^2/(kappa gamma) over the ensemble
  std::vector<double> band_times;
  std::vector<double> band_lo;   // 16th percentile of the fitted curves
  std::vector<double> band_hi;   // 84th percentile
};

// Fits the vibration-averaged decay model to a TCSPC histogram with
// gamma* eliminated through the driven-linewidth constraint; the fixed
// inputs are resampled from their Gaussians for each of the n_mc members.
ConstrainedFitResult fit_constrained_lifetime(const TcspcHistogram& histogram,
                                              const FixedLifetimeInputs& fixed,
                                              const LinewidthConstraint& constraint,
                                              int n_mc, std::uint64_t seed = 1);

// 1 - (1+a) e^{-|tau|/tau1} + a e^{-|tau|/tau2}
double g2_ideal(double tau, double a, double tau1, double tau2);

// IRF-convolved, N-scaled, background-corrected correlation.
double g2_measured(double tau, const G2Params& params);
std::vector<double> g2_measured_curve(std::span<const double> taus, const G2Params& params);

struct CoincidenceHistogram {
  TcspcHistogram histogram;        // raw cross-channel coincidences
  std::vector<double> normalized;  // counts / uncorrelated expectation
  std::uint64_t windows_used = 0;
  std::uint64_t windows_total = 0;
};

// Cross-channel delay histogram restricted to acquisition windows with at
// least min_counts events.
CoincidenceHistogram hbt_postselect(const TimeTagStream& stream, double window_s,
                                    std::uint64_t min_counts, double max_delay_s,
                                    double bin_width_s);

struct RateBinResult {
  double mean_rate_hz = 0.0;       // mean count rate of the gated windows
  MeasuredValue decay_rate_hz;     // fitted 1/tau
  std::uint64_t n_events = 0;
  std::uint64_t n_windows = 0;
};

// Groups detection events by per-gate mean count rate and EMG-fits the
// sync-referenced delay histogram of each group.
std::vector<RateBinResult> intensity_gated_rates(const TimeTagStream& stream,
                                                 std::uint8_t sync_channel,
                                                 std::uint8_t detect_channel, double gate_s,
                                                 std::span<const double> rate_bin_edges_hz);

}  // namespace cavqed
