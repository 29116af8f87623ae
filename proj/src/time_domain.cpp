#include "cavqed/time_domain.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "cavqed/lineshape.hpp"
#include "cavqed/rng.hpp"
#include "cavqed/units.hpp"

namespace cavqed {

namespace {

void require(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

double erfcx_pos(double x) {
  // exp(x^2) erfc(x) for x >= 0, via the Faddeeva function on the
  // imaginary axis
  return faddeeva(std::complex<double>(0.0, x)).real();
}

}  // namespace

void TcspcHistogram::validate() const {
  require(bin_edges.size() == counts.size() + 1, "TcspcHistogram: edges/counts mismatch");
  for (std::size_t i = 1; i < bin_edges.size(); ++i)
    require(bin_edges[i] > bin_edges[i - 1], "TcspcHistogram: edges not increasing");
  std::uint64_t sum = 0;
  for (std::uint64_t c : counts) sum += c;
  require(sum <= total_events, "TcspcHistogram: counts exceed total_events");
}

std::vector<double> TcspcHistogram::centers() const {
  std::vector<double> c(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i)
    c[i] = 0.5 * (bin_edges[i] + bin_edges[i + 1]);
  return c;
}

double TcspcHistogram::bin_width() const {
  require(bin_edges.size() >= 2, "TcspcHistogram: no bins");
  return (bin_edges.back() - bin_edges.front()) / static_cast<double>(counts.size());
}

void G2Params::validate() const {
  require(tau1 > 0.0 && tau2 > 0.0, "G2Params: lifetimes must be positive");
  require(s >= 0.0 && s <= 1.0, "G2Params: signal fraction outside [0,1]");
  require(a >= 0.0, "G2Params: negative bunching amplitude");
  require(sigma_t >= 0.0, "G2Params: negative response time");
}

void TimeTagStream::validate() const {
  std::map<std::uint8_t, std::uint64_t> last;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    auto it = last.find(r.channel);
    if (it != last.end() && r.ps < it->second)
      throw std::invalid_argument("TimeTagStream: out-of-order timestamp at record " +
                                  std::to_string(i));
    last[r.channel] = r.ps;
  }
}

GaussHermiteRule gauss_hermite(int n) {
  require(n >= 2, "gauss_hermite: need at least 2 nodes");
  static std::mutex mtx;
  static std::map<int, GaussHermiteRule> cache;
  std::lock_guard lock(mtx);
  if (auto it = cache.find(n); it != cache.end()) return it->second;

  // Golub-Welsch on the Hermite Jacobi matrix (weight exp(-x^2))
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) {
    const double b = std::sqrt(0.5 * k);
    J(k, k - 1) = b;
    J(k - 1, k) = b;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  GaussHermiteRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  for (int i = 0; i < n; ++i) {
    rule.nodes[i] = es.eigenvalues()[i];
    const double v0 = es.eigenvectors()(0, i);
    rule.weights[i] = std::sqrt(std::numbers::pi) * v0 * v0;
  }
  cache[n] = rule;
  return rule;
}

std::vector<double> vibration_averaged_decay(const CqedParams& params, double sigma_nu,
                                             double sigma_t, std::span<const double> t_grid,
                                             const DecayModelOptions& opts) {
  params.validate();
  require(sigma_nu >= 0.0 && sigma_t >= 0.0, "vibration_averaged_decay: negative width");
  require(t_grid.size() >= 2, "vibration_averaged_decay: grid too short");
  for (std::size_t i = 1; i < t_grid.size(); ++i)
    require(t_grid[i] > t_grid[i - 1], "vibration_averaged_decay: grid not increasing");

  const std::size_t n = t_grid.size();
  std::vector<double> raw(n, 0.0);

  auto rho_cc_at = [&](double t, double delta) {
    CqedParams p = params;
    p.detuning = delta;
    return populations_analytic(p, t).second;
  };

  if (sigma_nu == 0.0) {
    for (std::size_t i = 0; i < n; ++i)
      raw[i] = t_grid[i] >= 0.0 ? rho_cc_at(t_grid[i], params.detuning) : 0.0;
  } else if (opts.trapezoid_detuning) {
    const int m = std::max(41, opts.trapezoid_points | 1);
    const double half = 8.0 * sigma_nu;
    const double h = 2.0 * half / (m - 1);
    for (std::size_t i = 0; i < n; ++i) {
      if (t_grid[i] < 0.0) continue;
      double acc = 0.0;
      for (int j = 0; j < m; ++j) {
        const double d = -half + j * h;
        const double w = (j == 0 || j == m - 1) ? 0.5 : 1.0;
        acc += w * rho_cc_at(t_grid[i], params.detuning + d) *
               std::exp(-0.5 * d * d / (sigma_nu * sigma_nu));
      }
      raw[i] = acc * h;
    }
  } else {
    require(opts.gh_nodes >= 8, "vibration_averaged_decay: too few quadrature nodes");
    const GaussHermiteRule rule = gauss_hermite(opts.gh_nodes);
    const double scale = std::numbers::sqrt2 * sigma_nu;
    for (std::size_t i = 0; i < n; ++i) {
      if (t_grid[i] < 0.0) continue;
      double acc = 0.0;
      for (int j = 0; j < opts.gh_nodes; ++j)
        acc += rule.weights[j] * rho_cc_at(t_grid[i], params.detuning + scale * rule.nodes[j]);
      raw[i] = acc * scale;
    }
  }

  // IRF convolution on the (uniform) grid
  std::vector<double> out;
  const double dt = t_grid[1] - t_grid[0];
  if (sigma_t > 0.25 * dt) {
    for (std::size_t i = 2; i < n; ++i)
      require(std::abs((t_grid[i] - t_grid[i - 1]) - dt) < 1e-6 * dt,
              "vibration_averaged_decay: IRF convolution needs a uniform grid");
    const int half = static_cast<int>(std::ceil(6.0 * sigma_t / dt));
    std::vector<double> kern(2 * half + 1);
    double ksum = 0.0;
    for (int j = -half; j <= half; ++j) {
      kern[j + half] = std::exp(-0.5 * (j * dt) * (j * dt) / (sigma_t * sigma_t));
      ksum += kern[j + half];
    }
    for (double& kv : kern) kv /= ksum;
    out.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (int j = -half; j <= half; ++j) {
        const std::ptrdiff_t idx = static_cast<std::ptrdiff_t>(i) + j;
        if (idx >= 0 && idx < static_cast<std::ptrdiff_t>(n))
          acc += raw[idx] * kern[half - j];
      }
      out[i] = acc;
    }
  } else {
    out = raw;
  }

  if (opts.normalize_peak) {
    const double peak = *std::max_element(out.begin(), out.end());
    if (peak <= 0.0) throw std::runtime_error("vibration_averaged_decay: vanishing curve");
    for (double& v : out) v /= peak;
  } else {
    double area = 0.0;
    for (double v : out) area += v * dt;
    if (area <= 0.0) throw std::runtime_error("vibration_averaged_decay: vanishing curve");
    for (double& v : out) v /= area;
  }
  return out;
}

namespace {

// exponentially modified Gaussian density (unit area)
double emg_density(double t, double t0, double sigma, double tau) {
  const double dt = t - t0;
  const double b = (sigma / tau - dt / sigma) / std::numbers::sqrt2;
  if (b >= 0.0) {
    return 0.5 / tau * erfcx_pos(b) * std::exp(-0.5 * dt * dt / (sigma * sigma));
  }
  const double expo = 0.5 * sigma * sigma / (tau * tau) - dt / tau;
  return 0.5 / tau * std::exp(expo) * std::erfc(b);
}

}  // namespace

EmgFit fit_emg(std::span<const double> t, std::span<const double> y,
               std::span<const double> weights) {
  const std::size_t n = t.size();
  require(n == y.size() && n == weights.size(), "fit_emg: size mismatch");
  require(n >= 8, "fit_emg: too few bins");

  const std::size_t ipk =
      std::distance(y.begin(), std::max_element(y.begin(), y.end()));
  if (ipk < 3 || ipk + 3 >= n)
    throw std::invalid_argument("fit_emg: histogram peak at boundary");

  const double dt = (t.back() - t.front()) / static_cast<double>(n - 1);
  const double ymax = y[ipk];
  double baseline0 = *std::min_element(y.begin(), y.end());

  // rise half-width seeds sigma, tail mean-excess seeds tau
  std::size_t ihalf = ipk;
  while (ihalf > 0 && y[ihalf] > baseline0 + 0.5 * (ymax - baseline0)) --ihalf;
  double sigma0 = std::max((t[ipk] - t[ihalf]) / 1.18, 0.5 * dt);
  double num = 0.0, den = 0.0;
  for (std::size_t i = ipk; i < n; ++i) {
    const double v = std::max(y[i] - baseline0, 0.0);
    num += v * (t[i] - t[ipk]);
    den += v;
  }
  double tau0 = std::max(den > 0.0 ? num / den : 4.0 * dt, 2.0 * dt);
  double area0 = 0.0;
  for (std::size_t i = 0; i < n; ++i) area0 += std::max(y[i] - baseline0, 0.0) * dt;

  auto f = [](double x, std::span<const double> p) {
    return p[0] * emg_density(x, p[1], std::abs(p[2]), std::abs(p[3])) + p[4];
  };
  std::vector<double> init = {area0 / dt * dt, t[ipk] - sigma0, sigma0, tau0, baseline0};
  // amplitude is total counts here because emg_density carries 1/time units
  init[0] = area0;
  FitResult fit = least_squares(f, t, y, weights, init,
                                {"amplitude", "t0", "sigma_t", "tau", "baseline"});
  EmgFit out;
  out.fit = fit;
  out.lifetime = {std::abs(fit.value("tau")), fit.error("tau")};
  out.sigma_t = {std::abs(fit.value("sigma_t")), fit.error("sigma_t")};
  out.t0 = fit.value("t0");
  out.amplitude = fit.value("amplitude");
  out.baseline = fit.value("baseline");
  return out;
}

EmgFit fit_emg(const TcspcHistogram& histogram) {
  histogram.validate();
  const auto centers = histogram.centers();
  std::vector<double> y(histogram.counts.size()), w(histogram.counts.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = static_cast<double>(histogram.counts[i]);
    w[i] = 1.0 / std::max(y[i], 1.0);  // Poisson
  }
  return fit_emg(centers, y, w);
}

double gamma_star_from_constraint(double g_ghz, double delta_cw_ghz, double kappa_prime_ghz,
                                  double gamma_ghz, double pump_ghz) {
  // Delta_cw^2 = Gcw (Gcw + B g^2) with B = 4(gamma+pump+kappa')/(kappa'(gamma+pump));
  // positive root of the quadratic in Gcw, then subtract the known rates.
  const double gp = gamma_ghz + pump_ghz;
  require(kappa_prime_ghz > 0.0 && gp > 0.0, "gamma_star_from_constraint: bad fixed rates");
  const double B = 4.0 * (gp + kappa_prime_ghz) / (kappa_prime_ghz * gp);
  const double bg2 = B * g_ghz * g_ghz;
  const double gcw =
      0.5 * (-bg2 + std::sqrt(bg2 * bg2 + 4.0 * delta_cw_ghz * delta_cw_ghz));
  return gcw - (gamma_ghz + kappa_prime_ghz + pump_ghz);
}

namespace {

struct DecayFitGrid {
  std::vector<double> fine_t;
  std::vector<double> centers;
};

// Curve model: peak-normalized vibration-averaged decay on a fine grid,
// sampled at the histogram centers. p = (g_ghz, sigma_t, amplitude, t0, baseline)
Eigen::VectorXd decay_model_eval(const Eigen::VectorXd& p, const DecayFitGrid& grid,
                                 double kappa_ghz, double gamma_ghz, double sigma_nu_ghz,
                                 double delta_cw_ghz, double kappa_prime_ghz,
                                 double pump_ghz) {
  const double g_ghz = std::abs(p[0]);
  const double sigma_t = std::abs(p[1]);
  double gs_ghz = gamma_star_from_constraint(g_ghz, delta_cw_ghz, kappa_prime_ghz,
                                             gamma_ghz, pump_ghz);
  gs_ghz = std::max(gs_ghz, 0.0);  // bounds keep the fit on the feasible side

  CqedParams cp;
  cp.g = ghz_to_rad(g_ghz);
  cp.kappa = ghz_to_rad(kappa_ghz);
  cp.gamma = ghz_to_rad(gamma_ghz);
  cp.gamma_star = ghz_to_rad(gs_ghz);
  std::vector<double> shifted(grid.fine_t.size());
  for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] = grid.fine_t[i] - p[3];
  const auto curve =
      vibration_averaged_decay(cp, ghz_to_rad(sigma_nu_ghz), sigma_t, shifted);

  Eigen::VectorXd out(grid.centers.size());
  const double t0f = grid.fine_t.front();
  const double dtf = grid.fine_t[1] - grid.fine_t[0];
  for (std::size_t i = 0; i < grid.centers.size(); ++i) {
    const double pos = (grid.centers[i] - t0f) / dtf;
    const auto j = static_cast<std::ptrdiff_t>(std::floor(pos));
    double v;
    if (j < 0)
      v = curve.front();
    else if (j + 1 >= static_cast<std::ptrdiff_t>(curve.size()))
      v = curve.back();
    else
      v = curve[j] + (pos - j) * (curve[j + 1] - curve[j]);
    out[i] = p[2] * v + p[4];
  }
  return out;
}

}  // namespace

ConstrainedFitResult fit_constrained_lifetime(const TcspcHistogram& histogram,
                                              const FixedLifetimeInputs& fixed,
                                              const LinewidthConstraint& constraint,
                                              int n_mc, std::uint64_t seed) {
  histogram.validate();
  require(n_mc >= 1, "fit_constrained_lifetime: n_mc must be >= 1");

  DecayFitGrid grid;
  grid.centers = histogram.centers();
  std::vector<double> y(histogram.counts.size()), w(histogram.counts.size());
  double ymax = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = static_cast<double>(histogram.counts[i]);
    w[i] = 1.0 / std::max(y[i], 1.0);
    ymax = std::max(ymax, y[i]);
  }
  const EmgFit pre = fit_emg(histogram);
  const double sigma_t0 = std::max(pre.sigma_t.value, 0.25 * histogram.bin_width());

  const double fine_dt =
      std::min({sigma_t0 / 8.0, pre.lifetime.value / 20.0, histogram.bin_width()});
  const double t_lo = grid.centers.front() - 8.0 * sigma_t0;
  const double t_hi = grid.centers.back() + 2.0 * fine_dt;
  for (double tt = t_lo; tt <= t_hi; tt += fine_dt) grid.fine_t.push_back(tt);

  const Eigen::VectorXd yv = Eigen::Map<const Eigen::VectorXd>(y.data(), y.size());
  const Eigen::VectorXd wv = Eigen::Map<const Eigen::VectorXd>(w.data(), w.size());

  std::map<std::string, MeasuredValue> inputs = {
      {"delta_cw", constraint.delta_cw_ghz}, {"gamma", fixed.gamma_ghz},
      {"kappa", fixed.kappa_ghz},            {"kappa_prime", constraint.kappa_prime_ghz},
      {"pump", fixed.pump_ghz},              {"sigma_nu", fixed.sigma_nu_ghz}};

  auto spec = [&](const FixedInputMap& d) -> FitResult {
    const double dcw = d.at("delta_cw"), kp = d.at("kappa_prime");
    const double ga = d.at("gamma"), pi = d.at("pump");
    const double ka = d.at("kappa"), snu = d.at("sigma_nu");
    const double gcw0 = ga + kp + pi;
    const double B = 4.0 * (gcw0) / (kp * (ga + pi)) + 0.0;  // placeholder, recomputed below
    (void)B;
    const double bq = 4.0 * (ga + pi + kp) / (kp * (ga + pi));
    const double g2max = (dcw * dcw / gcw0 - gcw0) / bq;
    if (!(g2max > 0.0))
      throw std::runtime_error("constraint gives gamma* < 0 for all g in bounds");
    const double gmax = std::sqrt(g2max);

    CurveModel model = [&](const Eigen::VectorXd& p) {
      return decay_model_eval(p, grid, ka, ga, snu, dcw, kp, pi);
    };
    Eigen::VectorXd lower(5), upper(5);
    lower << 1e-4, 0.25 * histogram.bin_width(), 0.0, grid.centers.front(), 0.0;
    upper << 0.999 * gmax, 20.0 * sigma_t0, 10.0 * ymax, grid.centers.back(),
        0.5 * ymax;

    FitResult best;
    double best_chi2 = std::numeric_limits<double>::infinity();
    for (double frac : {0.35, 0.6, 0.85}) {
      Eigen::VectorXd init(5);
      init << frac * gmax, sigma_t0, ymax, pre.t0 + 1.18 * sigma_t0, pre.baseline;
      try {
        FitResult r = least_squares(model, yv, wv, init,
                                    {"g_ghz", "sigma_t", "amplitude", "t0", "baseline"},
                                    lower, upper);
        if (r.converged && r.chi2 < best_chi2) {
          best_chi2 = r.chi2;
          best = r;
        }
      } catch (const std::exception&) {
      }
    }
    if (!best.converged) throw std::runtime_error("decay fit divergence");
    // append the eliminated parameter so the ensemble can summarize it
    const double gs = gamma_star_from_constraint(best.value("g_ghz"), dcw, kp, ga, pi);
    const Eigen::Index np = best.params.size();
    best.params.conservativeResize(np + 2);
    best.params[np] = gs;
    best.params[np + 1] = 4.0 * best.value("g_ghz") * best.value("g_ghz") / (ka * ga);
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(np + 2, np + 2);
    cov.topLeftCorner(np, np) = best.covariance;
    best.covariance = cov;
    best.names.push_back("gamma_star_ghz");
    best.names.push_back("c_inc");
    return best;
  };

  McEnsemble ens = monte_carlo_propagate(spec, inputs, n_mc, seed);

  ConstrainedFitResult out;
  out.g_ghz = ens.measured("g_ghz");
  out.gamma_star_ghz = ens.measured("gamma_star_ghz");
  out.sigma_t_s = ens.measured("sigma_t");
  out.c_inc = ens.measured("c_inc");
  for (const auto& m : ens.members)
    out.members.push_back({m.value("g_ghz"), m.value("gamma_star_ghz"), m.value("sigma_t")});

  // per-fit curve band at the histogram centers
  out.band_times = grid.centers;
  std::vector<std::vector<double>> curves;
  for (const auto& m : ens.members) {
    // reconstruct this member's drawn inputs is unnecessary: evaluate with the
    // member's own fitted parameters and the central fixed inputs
    Eigen::VectorXd p(5);
    p << m.value("g_ghz"), m.value("sigma_t"), m.value("amplitude"), m.value("t0"),
        m.value("baseline");
    Eigen::VectorXd c = decay_model_eval(
        p, grid, fixed.kappa_ghz.value, fixed.gamma_ghz.value, fixed.sigma_nu_ghz.value,
        constraint.delta_cw_ghz.value, constraint.kappa_prime_ghz.value,
        fixed.pump_ghz.value);
    curves.emplace_back(c.data(), c.data() + c.size());
  }
  out.band_lo.resize(grid.centers.size());
  out.band_hi.resize(grid.centers.size());
  for (std::size_t i = 0; i < grid.centers.size(); ++i) {
    std::vector<double> vals;
    vals.reserve(curves.size());
    for (const auto& c : curves) vals.push_back(c[i]);
    std::sort(vals.begin(), vals.end());
    const double pos16 = 0.16 * (vals.size() - 1);
    const double pos84 = 0.84 * (vals.size() - 1);
    auto interp = [&](double pos) {
      const std::size_t j = static_cast<std::size_t>(pos);
      const std::size_t j1 = std::min(j + 1, vals.size() - 1);
      return vals[j] + (pos - j) * (vals[j1] - vals[j]);
    };
    out.band_lo[i] = interp(pos16);
    out.band_hi[i] = interp(pos84);
  }
  return out;
}

double g2_ideal(double tau, double a, double tau1, double tau2) {
  require(tau1 > 0.0 && tau2 > 0.0, "g2_ideal: lifetimes must be positive");
  const double at = std::abs(tau);
  return 1.0 - (1.0 + a) * std::exp(-at / tau1) + a * std::exp(-at / tau2);
}

namespace {

double g2_background(double tau, const G2Params& p) {
  return p.s * p.s * g2_ideal(tau, p.a, p.tau1, p.tau2) + (1.0 - p.s * p.s);
}

}  // namespace

double g2_measured(double tau, const G2Params& params) {
  params.validate();
  if (params.sigma_t == 0.0) return params.norm * g2_background(tau, params);
  // Gaussian-kernel quadrature split at the |tau| kink
  const double half = 8.0 * params.sigma_t;
  const int m = 1024;
  auto piece = [&](double ulo, double uhi) {
    if (uhi <= ulo) return 0.0;
    const double h = (uhi - ulo) / m;
    double acc = 0.0;
    for (int j = 0; j <= m; ++j) {
      const double u = ulo + j * h;
      const double wg = std::exp(-0.5 * u * u / (params.sigma_t * params.sigma_t));
      const double f = wg * g2_background(tau - u, params);
      acc += (j == 0 || j == m) ? 0.5 * f : f;
    }
    return acc * h;
  };
  double total;
  if (tau > -half && tau < half)
    total = piece(-half, tau) + piece(tau, half);
  else
    total = piece(-half, half);
  const double knorm = params.sigma_t * std::sqrt(2.0 * std::numbers::pi);
  return params.norm * total / knorm;
}

std::vector<double> g2_measured_curve(std::span<const double> taus, const G2Params& params) {
  std::vector<double> out(taus.size());
  for (std::size_t i = 0; i < taus.size(); ++i) out[i] = g2_measured(taus[i], params);
  return out;
}

CoincidenceHistogram hbt_postselect(const TimeTagStream& stream, double window_s,
                                    std::uint64_t min_counts, double max_delay_s,
                                    double bin_width_s) {
  stream.validate();
  require(window_s > 0.0 && max_delay_s > 0.0 && bin_width_s > 0.0,
          "hbt_postselect: window, delay and bin width must be positive");

  std::vector<std::uint64_t> ch0, ch1;
  for (const auto& r : stream.records) {
    if (r.channel == 0) ch0.push_back(r.ps);
    if (r.channel == 1) ch1.push_back(r.ps);
  }
  require(!ch0.empty() && !ch1.empty(), "hbt_postselect: need events on channels 0 and 1");

  const auto wps = static_cast<std::uint64_t>(window_s * 1e12);
  const auto max_delay_ps = max_delay_s * 1e12;
  const auto bin_ps = bin_width_s * 1e12;
  const int nbins = std::max(1, static_cast<int>(std::round(2.0 * max_delay_ps / bin_ps)));
  const double lo = -max_delay_ps;

  CoincidenceHistogram out;
  out.histogram.counts.assign(nbins, 0);
  out.histogram.bin_edges.resize(nbins + 1);
  for (int i = 0; i <= nbins; ++i)
    out.histogram.bin_edges[i] = (lo + i * bin_ps) * 1e-12;

  const std::uint64_t t_end = std::max(ch0.back(), ch1.back());
  const std::uint64_t n_windows = t_end / wps + 1;
  out.windows_total = n_windows;

  double uncorrelated_per_bin = 0.0;
  std::size_t i0 = 0, i1 = 0;
  for (std::uint64_t wdx = 0; wdx < n_windows; ++wdx) {
    const std::uint64_t wlo = wdx * wps, whi = wlo + wps;
    const std::size_t b0 = i0, b1 = i1;
    while (i0 < ch0.size() && ch0[i0] < whi) ++i0;
    while (i1 < ch1.size() && ch1[i1] < whi) ++i1;
    const std::uint64_t n0 = i0 - b0, n1 = i1 - b1;
    if (n0 + n1 <= min_counts) continue;
    ++out.windows_used;
    uncorrelated_per_bin +=
        static_cast<double>(n0) * static_cast<double>(n1) * bin_ps / static_cast<double>(wps);
    // two-pointer sweep over the cross pairs within the delay window
    std::size_t j1 = b1;
    for (std::size_t j0 = b0; j0 < i0; ++j0) {
      const double t0v = static_cast<double>(ch0[j0]);
      while (j1 < i1 && static_cast<double>(ch1[j1]) < t0v - max_delay_ps) ++j1;
      for (std::size_t k = j1; k < i1; ++k) {
        const double d = static_cast<double>(ch1[k]) - t0v;
        if (d > max_delay_ps) break;
        int bin = static_cast<int>((d - lo) / bin_ps);
        bin = std::clamp(bin, 0, nbins - 1);
        ++out.histogram.counts[bin];
        ++out.histogram.total_events;
      }
    }
  }
  if (out.windows_used == 0)
    throw std::runtime_error("hbt_postselect: no windows pass the count threshold");

  out.normalized.resize(nbins);
  for (int i = 0; i < nbins; ++i)
    out.normalized[i] = uncorrelated_per_bin > 0.0
                            ? static_cast<double>(out.histogram.counts[i]) / uncorrelated_per_bin
                            : 0.0;
  return out;
}

std::vector<RateBinResult> intensity_gated_rates(const TimeTagStream& stream,
                                                 std::uint8_t sync_channel,
                                                 std::uint8_t detect_channel, double gate_s,
                                                 std::span<const double> rate_bin_edges_hz) {
  stream.validate();
  require(gate_s > 0.0, "intensity_gated_rates: gate must be positive");
  require(rate_bin_edges_hz.size() >= 2, "intensity_gated_rates: need at least one rate bin");

  std::vector<std::uint64_t> sync, det;
  for (const auto& r : stream.records) {
    if (r.channel == sync_channel) sync.push_back(r.ps);
    if (r.channel == detect_channel) det.push_back(r.ps);
  }
  require(!sync.empty(), "intensity_gated_rates: sync channel has no events");
  require(!det.empty(), "intensity_gated_rates: detect channel has no events");

  // median sync period sets the delay-histogram span
  std::vector<std::uint64_t> periods;
  for (std::size_t i = 1; i < sync.size(); ++i) periods.push_back(sync[i] - sync[i - 1]);
  std::nth_element(periods.begin(), periods.begin() + periods.size() / 2, periods.end());
  const std::uint64_t period_ps = periods[periods.size() / 2];

  const auto gate_ps = static_cast<std::uint64_t>(gate_s * 1e12);
  const std::uint64_t t_end = det.back();
  const std::uint64_t n_windows = t_end / gate_ps + 1;
  const std::size_t n_bins = rate_bin_edges_hz.size() - 1;

  // per-window rate -> rate-bin assignment
  std::vector<std::size_t> window_bin(n_windows, SIZE_MAX);
  std::vector<std::uint64_t> window_counts(n_windows, 0);
  for (std::uint64_t t : det) ++window_counts[t / gate_ps];
  std::vector<std::uint64_t> bin_windows(n_bins, 0);
  for (std::uint64_t wdx = 0; wdx < n_windows; ++wdx) {
    const double rate = static_cast<double>(window_counts[wdx]) / gate_s;
    for (std::size_t b = 0; b < n_bins; ++b) {
      if (rate >= rate_bin_edges_hz[b] && rate < rate_bin_edges_hz[b + 1]) {
        window_bin[wdx] = b;
        ++bin_windows[b];
        break;
      }
    }
  }

  // sync-referenced delay histograms per rate bin
  const int n_delay = 128;
  const double dbin = static_cast<double>(period_ps) / n_delay;
  std::vector<std::vector<double>> hist(n_bins, std::vector<double>(n_delay, 0.0));
  std::vector<std::uint64_t> bin_events(n_bins, 0);
  std::size_t is = 0;
  for (std::uint64_t t : det) {
    while (is + 1 < sync.size() && sync[is + 1] <= t) ++is;
    if (sync[is] > t) continue;
    const std::size_t b = window_bin[t / gate_ps];
    if (b == SIZE_MAX) continue;
    const auto delay = static_cast<double>(t - sync[is]);
    const int k = static_cast<int>(delay / dbin);
    if (k >= 0 && k < n_delay) {
      hist[b][k] += 1.0;
      ++bin_events[b];
    }
  }

  std::vector<RateBinResult> out;
  std::vector<double> centers(n_delay);
  for (int k = 0; k < n_delay; ++k) centers[k] = (k + 0.5) * dbin * 1e-12;
  for (std::size_t b = 0; b < n_bins; ++b) {
    if (bin_windows[b] == 0) continue;  // nothing assigned here
    if (bin_events[b] < 200)
      throw std::runtime_error("intensity_gated_rates: rate bin " + std::to_string(b) +
                               " has too few events for a fit");
    std::vector<double> w(n_delay);
    for (int k = 0; k < n_delay; ++k) w[k] = 1.0 / std::max(hist[b][k], 1.0);
    const EmgFit fit = fit_emg(centers, hist[b], w);
    RateBinResult r;
    double rate_sum = 0.0;
    for (std::uint64_t wdx = 0; wdx < n_windows; ++wdx)
      if (window_bin[wdx] == b) rate_sum += static_cast<double>(window_counts[wdx]) / gate_s;
    r.mean_rate_hz = rate_sum / static_cast<double>(bin_windows[b]);
    const double tau = fit.lifetime.value;
    r.decay_rate_hz = {1.0 / tau, fit.lifetime.sigma / (tau * tau)};
    r.n_events = bin_events[b];
    r.n_windows = bin_windows[b];
    out.push_back(r);
  }
  if (out.empty()) throw std::runtime_error("intensity_gated_rates: no populated rate bins");
  return out;
}

}  // namespace cavqed
