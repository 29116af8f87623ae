#include "cavqed/lineshape.hpp"

#include <fftw3.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <mutex>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace cavqed {

namespace {

constexpr double kSqrtPi = 1.7724538509055160273;
constexpr int kWeidemanN = 64;

void require(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

struct WeidemanTable {
  double L;
  std::array<double, kWeidemanN> a;
};

// Rational expansion coefficients from the sampled generating function
// (one-off DFT; table is small).
WeidemanTable make_weideman() {
  constexpr int N = kWeidemanN;
  constexpr int M = 2 * N;
  constexpr int M2 = 2 * M;
  WeidemanTable tbl{};
  tbl.L = std::sqrt(N / std::sqrt(2.0));
  std::array<double, M2> f{};
  f[0] = 0.0;
  for (int i = 0; i < 2 * M - 1; ++i) {
    const int k = -M + 1 + i;
    const double theta = k * std::numbers::pi / M;
    const double t = tbl.L * std::tan(0.5 * theta);
    f[i + 1] = std::exp(-t * t) * (tbl.L * tbl.L + t * t);
  }
  std::array<double, M2> shifted{};
  for (int i = 0; i < M2; ++i) shifted[i] = f[(i + M) % M2];
  for (int k = 1; k <= N; ++k) {
    double re = 0.0;
    for (int n = 0; n < M2; ++n)
      re += shifted[n] * std::cos(2.0 * std::numbers::pi * k * n / M2);
    tbl.a[N - k] = re / M2;  // a[0] holds the highest-degree coefficient
  }
  return tbl;
}

std::complex<double> faddeeva_continued_fraction(std::complex<double> z) {
  std::complex<double> r = 0.0;
  for (int k = 12; k >= 1; --k) r = (0.5 * k) / (z - r);
  return std::complex<double>(0.0, 1.0) / (kSqrtPi * (z - r));
}

}  // namespace

std::complex<double> faddeeva(std::complex<double> z) {
  if (z.imag() < 0.0) throw std::invalid_argument("faddeeva: requires Im(z) >= 0");
  if (std::norm(z) > 256.0) return faddeeva_continued_fraction(z);
  static const WeidemanTable tbl = make_weideman();
  const std::complex<double> iz(-z.imag(), z.real());
  const std::complex<double> denom = tbl.L - iz;
  const std::complex<double> Z = (tbl.L + iz) / denom;
  std::complex<double> p = 0.0;
  for (int i = 0; i < kWeidemanN; ++i) p = p * Z + tbl.a[i];
  return 2.0 * p / (denom * denom) + (1.0 / kSqrtPi) / denom;
}

double voigt_density(double x, const LineProfile& profile) {
  require(profile.sigma_g >= 0.0 && profile.fwhm_l >= 0.0, "voigt_density: negative width");
  require(profile.sigma_g > 0.0 || profile.fwhm_l > 0.0, "voigt_density: both widths zero");
  const double dx = x - profile.center;
  const double sg = profile.sigma_g;
  const double hwhm = 0.5 * profile.fwhm_l;

  // limit dispatch keeps the pure profiles exact when one width dominates
  if (profile.fwhm_l == 0.0 || (sg > 0.0 && profile.fwhm_l < 2e-6 * sg)) {
    const double norm = 1.0 / (sg * std::sqrt(2.0 * std::numbers::pi));
    return profile.amplitude * norm * std::exp(-0.5 * dx * dx / (sg * sg));
  }
  if (sg == 0.0 || (profile.fwhm_l > 0.0 && sg < 2e-6 * profile.fwhm_l)) {
    return profile.amplitude * hwhm / (std::numbers::pi * (dx * dx + hwhm * hwhm));
  }
  const double inv = 1.0 / (sg * std::numbers::sqrt2);
  const std::complex<double> z(dx * inv, hwhm * inv);
  return profile.amplitude * faddeeva(z).real() / (sg * std::sqrt(2.0 * std::numbers::pi));
}

VoigtFitResult fit_voigt_fixed_gaussian(std::span<const double> bin_centers,
                                        std::span<const double> counts, double sigma_fixed) {
  require(bin_centers.size() == counts.size(), "fit_voigt_fixed_gaussian: size mismatch");
  require(sigma_fixed >= 0.0, "fit_voigt_fixed_gaussian: negative sigma");
  std::size_t populated = 0;
  for (double c : counts) populated += c > 0.0;
  if (populated < 10)
    throw std::invalid_argument("fit_voigt_fixed_gaussian: fewer than 10 populated bins");

  const std::size_t n = bin_centers.size();
  std::vector<double> spacing;
  spacing.reserve(n - 1);
  for (std::size_t i = 1; i < n; ++i) spacing.push_back(bin_centers[i] - bin_centers[i - 1]);
  std::nth_element(spacing.begin(), spacing.begin() + spacing.size() / 2, spacing.end());
  const double dx = spacing[spacing.size() / 2];
  require(dx > 0.0, "fit_voigt_fixed_gaussian: bin centers not increasing");

  double total = 0.0, mean = 0.0, peak = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    total += counts[i];
    mean += counts[i] * bin_centers[i];
    peak = std::max(peak, counts[i]);
  }
  mean /= std::max(total, 1.0);

  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = 1.0 / std::max(counts[i], 1.0);

  auto model = [sigma_fixed, dx](double x, std::span<const double> p) {
    LineProfile prof{p[0], sigma_fixed, std::abs(p[1]), p[2]};
    return voigt_density(x, prof) * dx;
  };
  const double fwhm_init = std::max(dx, 0.5 * sigma_fixed + dx);
  std::vector<double> init = {mean, fwhm_init, total * 1.0};
  FitResult fit = least_squares(model, bin_centers, counts, w, init,
                                {"center", "fwhm_l", "amplitude"});
  VoigtFitResult out;
  out.fit = fit;
  out.profile = {fit.value("center"), sigma_fixed, std::abs(fit.value("fwhm_l")),
                 fit.value("amplitude")};
  return out;
}

std::vector<VoigtFitResult> fit_voigt_multipeak(std::span<const double> x,
                                                std::span<const double> y,
                                                std::span<const double> center_guesses,
                                                double sigma_fixed) {
  require(!center_guesses.empty(), "fit_voigt_multipeak: no peaks requested");
  require(x.size() == y.size() && x.size() > 3 * center_guesses.size() + 1,
          "fit_voigt_multipeak: too few samples");
  const std::size_t k = center_guesses.size();
  const double dx = (x.back() - x.front()) / static_cast<double>(x.size() - 1);

  Eigen::VectorXd init(3 * k + 1);
  for (std::size_t j = 0; j < k; ++j) {
    // nearest sample height seeds the area
    std::size_t near = 0;
    double best = 1e300;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = std::abs(x[i] - center_guesses[j]);
      if (d < best) {
        best = d;
        near = i;
      }
    }
    init[3 * j + 0] = center_guesses[j];
    init[3 * j + 1] = std::max(2.0 * dx, sigma_fixed);
    init[3 * j + 2] = std::max(y[near], 1e-6) * (sigma_fixed + 2.0 * dx) * 3.0;
  }
  init[3 * k] = 0.0;  // baseline

  std::vector<double> xv(x.begin(), x.end());
  CurveModel model = [xv, k, sigma_fixed](const Eigen::VectorXd& p) {
    Eigen::VectorXd out = Eigen::VectorXd::Constant(xv.size(), p[3 * k]);
    for (std::size_t j = 0; j < k; ++j) {
      LineProfile prof{p[3 * j], sigma_fixed, std::abs(p[3 * j + 1]), p[3 * j + 2]};
      for (std::size_t i = 0; i < xv.size(); ++i) out[i] += voigt_density(xv[i], prof);
    }
    return out;
  };
  Eigen::VectorXd yv = Eigen::Map<const Eigen::VectorXd>(y.data(), y.size());
  Eigen::VectorXd wv = Eigen::VectorXd::Ones(y.size());
  std::vector<std::string> names;
  for (std::size_t j = 0; j < k; ++j) {
    names.push_back("center" + std::to_string(j));
    names.push_back("fwhm_l" + std::to_string(j));
    names.push_back("amplitude" + std::to_string(j));
  }
  names.push_back("baseline");
  FitResult fit = least_squares(model, yv, wv, init, names);

  std::vector<VoigtFitResult> out(k);
  for (std::size_t j = 0; j < k; ++j) {
    out[j].fit = fit;
    out[j].profile = {fit.params[3 * j], sigma_fixed, std::abs(fit.params[3 * j + 1]),
                      fit.params[3 * j + 2]};
  }
  return out;
}

void DetuningSeries::validate() const {
  require(times.size() == detunings.size() && times.size() == quiet_mask.size(),
          "DetuningSeries: field lengths differ");
  for (std::size_t i = 1; i < times.size(); ++i)
    require(times[i] >= times[i - 1], "DetuningSeries: times not monotone");
}

namespace {

std::mutex g_fftw_mutex;

// averaged Hann-windowed periodograms over the supplied segment starts
std::vector<double> welch_accumulate(std::span<const double> x,
                                     const std::vector<std::size_t>& starts,
                                     std::size_t nper, double fs) {
  std::vector<double> window(nper);
  double u = 0.0;
  for (std::size_t i = 0; i < nper; ++i) {
    window[i] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * i / nper));
    u += window[i] * window[i];
  }
  const std::size_t nf = nper / 2 + 1;
  std::vector<double> psd(nf, 0.0);

  double* in;
  fftw_complex* out;
  fftw_plan plan;
  {
    std::lock_guard lock(g_fftw_mutex);
    in = fftw_alloc_real(nper);
    out = fftw_alloc_complex(nf);
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(nper), in, out, FFTW_ESTIMATE);
  }
  for (std::size_t s : starts) {
    double mean = 0.0;
    for (std::size_t i = 0; i < nper; ++i) mean += x[s + i];
    mean /= nper;
    for (std::size_t i = 0; i < nper; ++i) in[i] = (x[s + i] - mean) * window[i];
    fftw_execute(plan);
    for (std::size_t kf = 0; kf < nf; ++kf) {
      const double mag2 = out[kf][0] * out[kf][0] + out[kf][1] * out[kf][1];
      double scale = 1.0 / (fs * u);
      if (kf != 0 && !(nper % 2 == 0 && kf == nf - 1)) scale *= 2.0;  // one-sided
      psd[kf] += mag2 * scale;
    }
  }
  {
    std::lock_guard lock(g_fftw_mutex);
    fftw_destroy_plan(plan);
    fftw_free(in);
    fftw_free(out);
  }
  for (double& v : psd) v /= static_cast<double>(starts.size());
  return psd;
}

std::size_t floor_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p * 2 <= n) p *= 2;
  return p;
}

std::vector<std::size_t> segment_starts(std::size_t run_begin, std::size_t run_len,
                                        std::size_t nper, double overlap) {
  std::vector<std::size_t> starts;
  if (run_len < nper) return starts;
  const std::size_t hop = std::max<std::size_t>(1, static_cast<std::size_t>(nper * (1.0 - overlap)));
  for (std::size_t s = 0; s + nper <= run_len; s += hop) starts.push_back(run_begin + s);
  return starts;
}

}  // namespace

VibrationSummary psd_cumulative_rms(const DetuningSeries& series, double sample_rate_hz,
                                    double band_lo_hz, double band_hi_hz,
                                    const PsdOptions& opts) {
  series.validate();
  require(sample_rate_hz > 0.0, "psd_cumulative_rms: sample rate must be positive");
  require(band_lo_hz >= 0.0 && band_hi_hz > band_lo_hz, "psd_cumulative_rms: bad band");
  require(band_hi_hz <= 0.5 * sample_rate_hz + 1e-9,
          "psd_cumulative_rms: band exceeds Nyquist");
  const std::size_t n = series.detunings.size();
  require(n >= 32, "psd_cumulative_rms: series too short");

  std::size_t nper = opts.segment_length ? opts.segment_length
                                         : std::clamp<std::size_t>(floor_pow2(n / 8), 64, 65536);
  nper = std::min(nper, floor_pow2(n));

  const auto full_starts = segment_starts(0, n, nper, opts.overlap);
  const auto psd_full = welch_accumulate(series.detunings, full_starts, nper, sample_rate_hz);

  // quiet subset: Welch over maximal contiguous quiet runs
  std::vector<std::pair<std::size_t, std::size_t>> runs;
  std::size_t begin = 0;
  bool in_run = false;
  std::size_t longest = 0;
  for (std::size_t i = 0; i <= n; ++i) {
    const bool q = i < n && series.quiet_mask[i];
    if (q && !in_run) {
      begin = i;
      in_run = true;
    } else if (!q && in_run) {
      runs.emplace_back(begin, i - begin);
      longest = std::max(longest, i - begin);
      in_run = false;
    }
  }
  if (runs.empty()) throw std::invalid_argument("psd_cumulative_rms: empty quiet mask");
  std::size_t nper_q = std::min(nper, floor_pow2(longest));
  require(nper_q >= 16, "psd_cumulative_rms: quiet runs too short for a periodogram");
  std::vector<std::size_t> quiet_starts;
  for (const auto& [b, len] : runs) {
    auto s = segment_starts(b, len, nper_q, opts.overlap);
    quiet_starts.insert(quiet_starts.end(), s.begin(), s.end());
  }
  require(!quiet_starts.empty(), "psd_cumulative_rms: quiet runs too short");
  const auto psd_quiet = welch_accumulate(series.detunings, quiet_starts, nper_q, sample_rate_hz);

  VibrationSummary out;
  const double df = sample_rate_hz / static_cast<double>(nper);
  const double df_q = sample_rate_hz / static_cast<double>(nper_q);
  out.frequencies.resize(psd_full.size());
  out.cumulative_rms_full.resize(psd_full.size());
  double acc = 0.0, in_band_full = 0.0;
  for (std::size_t k = 0; k < psd_full.size(); ++k) {
    out.frequencies[k] = k * df;
    acc += psd_full[k] * df;
    out.cumulative_rms_full[k] = std::sqrt(acc);
    if (out.frequencies[k] >= band_lo_hz && out.frequencies[k] <= band_hi_hz)
      in_band_full += psd_full[k] * df;
  }
  // quiet curve resampled onto the full-frequency grid by accumulation
  out.cumulative_rms_quiet.resize(psd_full.size());
  double acc_q = 0.0, in_band_quiet = 0.0;
  std::size_t kq = 0;
  for (std::size_t k = 0; k < psd_full.size(); ++k) {
    while (kq < psd_quiet.size() && kq * df_q <= out.frequencies[k] + 0.5 * df) {
      acc_q += psd_quiet[kq] * df_q;
      if (kq * df_q >= band_lo_hz && kq * df_q <= band_hi_hz) in_band_quiet += psd_quiet[kq] * df_q;
      ++kq;
    }
    out.cumulative_rms_quiet[k] = std::sqrt(acc_q);
  }
  out.rms_full = std::sqrt(in_band_full);
  out.rms_quiet = std::sqrt(in_band_quiet);
  return out;
}

double pm_to_ghz(double pm, double slope_pm_per_ghz) {
  require(slope_pm_per_ghz > 0.0, "pm_to_ghz: slope must be positive");
  return pm / slope_pm_per_ghz;
}

double ghz_to_pm(double ghz, double slope_pm_per_ghz) {
  require(slope_pm_per_ghz > 0.0, "ghz_to_pm: slope must be positive");
  return ghz * slope_pm_per_ghz;
}

MeasuredValue deconvolve_emitter_linewidth(MeasuredValue delta_e, MeasuredValue delta_l,
                                           MeasuredValue kappa_prime, double tolerance_sigma) {
  require(delta_e.value > 0.0 && delta_l.value > 0.0 && kappa_prime.value > 0.0,
          "deconvolve_emitter_linewidth: linewidths must be positive");
  const double excess = delta_l.value - kappa_prime.value;
  const double excess_sigma =
      std::sqrt(delta_l.sigma * delta_l.sigma + kappa_prime.sigma * kappa_prime.sigma);
  if (excess < -tolerance_sigma * std::max(excess_sigma, 1e-12))
    throw std::invalid_argument(
        "deconvolve_emitter_linewidth: laser peak narrower than cavity linewidth "
        "(inconsistent calibration)");
  MeasuredValue out;
  out.value = delta_e.value - excess;
  out.sigma = std::sqrt(delta_e.sigma * delta_e.sigma + delta_l.sigma * delta_l.sigma +
                        kappa_prime.sigma * kappa_prime.sigma);
  return out;
}

namespace {

struct TripletFit {
  double center;      // carrier position, axis units
  double separation;  // carrier-sideband separation, axis units
  double fwhm;        // Lorentzian FWHM, axis units
};

TripletFit fit_triplet(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  require(n > 20, "sweep trace too short");
  // crude peak finding for initial values
  std::vector<double> sorted(y.begin(), y.end());
  std::nth_element(sorted.begin(), sorted.begin() + n / 2, sorted.end());
  const double med = sorted[n / 2];
  const double ymax = *std::max_element(y.begin(), y.end());
  const double thresh = med + 0.15 * (ymax - med);
  std::vector<std::size_t> peaks;
  for (std::size_t i = 1; i + 1 < n; ++i) {
    if (y[i] > thresh && y[i] >= y[i - 1] && y[i] >= y[i + 1]) {
      if (!peaks.empty() && i - peaks.back() < n / 50) {
        if (y[i] > y[peaks.back()]) peaks.back() = i;
      } else {
        peaks.push_back(i);
      }
    }
  }
  std::sort(peaks.begin(), peaks.end(),
            [&](std::size_t a, std::size_t b) { return y[a] > y[b]; });
  if (peaks.size() < 3)
    throw std::runtime_error("resonance_sweep_detunings: fewer than 3 resolvable peaks");
  peaks.resize(3);
  std::sort(peaks.begin(), peaks.end());

  const double c0 = x[peaks[1]];
  const double s0 = 0.5 * (x[peaks[2]] - x[peaks[0]]);
  const double w0 = std::max(s0 / 6.0, (x.back() - x.front()) / n * 3.0);
  const double a_side = std::max({y[peaks[0]], y[peaks[2]]}) - med;
  const double a_carrier = y[peaks[1]] - med;

  auto lor = [](double dx, double hw) { return hw * hw / (dx * dx + hw * hw); };
  auto model = [&](double xx, std::span<const double> p) {
    const double c = p[0], s = std::abs(p[1]), hw = 0.5 * std::abs(p[2]);
    return p[3] * lor(xx - c, hw) + p[4] * (lor(xx - c - s, hw) + lor(xx - c + s, hw)) + p[5];
  };
  std::vector<double> w(n, 1.0);
  std::vector<double> init = {c0, s0, w0, a_carrier, a_side, med};
  FitResult fit = least_squares(model, x, y, w, init,
                                {"center", "separation", "fwhm", "amp_carrier", "amp_side",
                                 "baseline"});
  return {fit.value("center"), std::abs(fit.value("separation")), std::abs(fit.value("fwhm"))};
}

}  // namespace

DetuningSeries resonance_sweep_detunings(std::span<const SweepTrace> traces,
                                         double sideband_spacing_ghz) {
  require(sideband_spacing_ghz > 0.0, "resonance_sweep_detunings: spacing must be positive");
  require(!traces.empty(), "resonance_sweep_detunings: no traces");

  struct Entry {
    double time;
    double pos_ghz;
    SweepDirection dir;
  };
  std::vector<Entry> entries;
  entries.reserve(traces.size());
  for (const auto& tr : traces) {
    const TripletFit f = fit_triplet(tr.x, tr.y);
    const double ghz_per_axis = sideband_spacing_ghz / f.separation;
    entries.push_back({tr.time, f.center * ghz_per_axis, tr.direction});
  }
  double mean_up = 0.0, mean_down = 0.0;
  std::size_t n_up = 0, n_down = 0;
  for (const auto& e : entries) {
    if (e.dir == SweepDirection::up) {
      mean_up += e.pos_ghz;
      ++n_up;
    } else {
      mean_down += e.pos_ghz;
      ++n_down;
    }
  }
  if (n_up) mean_up /= n_up;
  if (n_down) mean_down /= n_down;

  std::vector<std::size_t> order(entries.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return entries[a].time < entries[b].time; });

  DetuningSeries out;
  out.unit = DetuningUnit::gigahertz;
  for (std::size_t i : order) {
    const auto& e = entries[i];
    const double ref = e.dir == SweepDirection::up ? mean_up : mean_down;
    out.times.push_back(e.time);
    out.detunings.push_back(e.pos_ghz - ref);
    out.quiet_mask.push_back(true);
  }
  return out;
}

}  // namespace cavqed
