#include "cavqed/optics.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "cavqed/units.hpp"

namespace cavqed {

namespace {

using cplx = std::complex<double>;
constexpr cplx kI{0.0, 1.0};

void require(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

struct Char2x2 {
  cplx m00{1.0}, m01{0.0}, m10{0.0}, m11{1.0};
};

Char2x2 multiply(const Char2x2& a, const Char2x2& b) {
  return {a.m00 * b.m00 + a.m01 * b.m10, a.m00 * b.m01 + a.m01 * b.m11,
          a.m10 * b.m00 + a.m11 * b.m10, a.m10 * b.m01 + a.m11 * b.m11};
}

Char2x2 layer_matrix(const Layer& l, double wavelength) {
  const double phi = kTwoPi * l.n * l.d / wavelength;
  const double c = std::cos(phi), s = std::sin(phi);
  return {cplx{c}, kI * (s / l.n), kI * (l.n * s), cplx{c}};
}

Char2x2 stack_matrix(std::span<const Layer> layers, double wavelength) {
  Char2x2 m;
  for (const auto& l : layers) m = multiply(m, layer_matrix(l, wavelength));
  return m;
}

ReflectionResult reflection_from(const Char2x2& m, double n_in, double n_out) {
  const cplx a = n_in * (m.m00 + m.m01 * n_out);
  const cplx b = m.m10 + m.m11 * n_out;
  return {(a - b) / (a + b), 2.0 * n_in / (a + b)};
}

// reflection seen from the cavity medium, physical phase convention
// (conjugate of the characteristic-matrix result)
cplx mirror_reflection(const CoatingStack& mirror, double wavelength, double n_cavity,
                       std::span<const Layer> interposed = {}) {
  if (mirror.ideal) return cplx{-1.0, 0.0};
  std::vector<Layer> layers(interposed.begin(), interposed.end());
  layers.insert(layers.end(), mirror.layers_from_cavity.begin(),
                mirror.layers_from_cavity.end());
  const Char2x2 m = stack_matrix(layers, wavelength);
  return std::conj(reflection_from(m, n_cavity, mirror.n_substrate).r);
}

}  // namespace

void LayerStack::validate() const {
  require(n_in >= 1.0 && n_out >= 1.0, "LayerStack: half-space index below 1");
  for (const auto& l : layers)
    require(l.n >= 1.0 && l.d > 0.0 && std::isfinite(l.n) && std::isfinite(l.d),
            "LayerStack: invalid layer");
}

double LayerStack::total_thickness() const {
  double t = 0.0;
  for (const auto& l : layers) t += l.d;
  return t;
}

CoatingStack CoatingStack::ideal_mirror() {
  CoatingStack s;
  s.ideal = true;
  return s;
}

CoatingStack CoatingStack::default_mirror(double design_wavelength) {
  CoatingStack s;
  s.n_substrate = 1.45;
  constexpr double n_h = 2.10, n_l = 1.45;
  s.layers_from_cavity.push_back({n_l, 50e-9});  // protective cap
  for (int i = 0; i < 15; ++i) {
    s.layers_from_cavity.push_back({n_h, design_wavelength / (4.0 * n_h)});
    s.layers_from_cavity.push_back({n_l, design_wavelength / (4.0 * n_l)});
  }
  return s;
}

CoatingStack CoatingStack::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("CoatingStack: cannot open " + path);
  CoatingStack s;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    double n, d_nm;
    if (!(ss >> n)) continue;  // blank/comment line
    std::string key;
    if (!(ss >> d_nm)) {
      throw std::runtime_error("CoatingStack: malformed line " + std::to_string(lineno) +
                               " in " + path + " (expected: index thickness_nm)");
    }
    if (n < 1.0 || d_nm <= 0.0)
      throw std::runtime_error("CoatingStack: invalid layer at line " + std::to_string(lineno));
    s.layers_from_cavity.push_back({n, d_nm * 1e-9});
  }
  if (s.layers_from_cavity.empty())
    throw std::runtime_error("CoatingStack: no layers in " + path);
  return s;
}

void CavityGeometry::validate() const {
  require(roc > 0.0 && t_diamond > 0.0 && t_air > 0.0 && waist > 0.0 && n_diamond >= 1.0,
          "CavityGeometry: all dimensions must be positive");
}

double CavityGeometry::expected_waist(double wavelength) const {
  const double le = effective_length();
  if (le >= roc) return std::numeric_limits<double>::quiet_NaN();
  return std::sqrt(wavelength / std::numbers::pi * std::sqrt(le * (roc - le)));
}

ReflectionResult stack_reflection(const LayerStack& stack, double wavelength) {
  stack.validate();
  require(wavelength > 0.0, "stack_reflection: wavelength must be positive");
  const Char2x2 m = stack_matrix(stack.layers, wavelength);
  return reflection_from(m, stack.n_in, stack.n_out);
}

double stack_transmittance(const LayerStack& stack, double wavelength) {
  const auto rt = stack_reflection(stack, wavelength);
  return (stack.n_out / stack.n_in) * std::norm(rt.t);
}

LayerStack full_stack(const HybridCavity& cavity) {
  cavity.geometry.validate();
  require(!cavity.planar_mirror.ideal && !cavity.fiber_mirror.ideal,
          "full_stack: ideal mirrors have no layer representation");
  LayerStack s;
  s.n_in = cavity.planar_mirror.n_substrate;
  s.n_out = cavity.fiber_mirror.n_substrate;
  s.layers.assign(cavity.planar_mirror.layers_from_cavity.rbegin(),
                  cavity.planar_mirror.layers_from_cavity.rend());
  s.layers.push_back({cavity.geometry.n_diamond, cavity.geometry.t_diamond});
  s.layers.push_back({1.0, cavity.geometry.t_air});
  s.layers.insert(s.layers.end(), cavity.fiber_mirror.layers_from_cavity.begin(),
                  cavity.fiber_mirror.layers_from_cavity.end());
  return s;
}

FieldProfile standing_wave_profile(const LayerStack& stack, double wavelength,
                                   std::size_t points) {
  stack.validate();
  const double k0 = kTwoPi / wavelength;
  const std::size_t nl = stack.layers.size();
  std::vector<cplx> A(nl), B(nl);
  cplx af{1.0, 0.0}, bf{0.0, 0.0};  // unit transmitted wave in the exit half-space
  double n_next = stack.n_out;
  for (std::size_t j = nl; j-- > 0;) {
    const auto& l = stack.layers[j];
    const cplx e = af + bf;
    const cplx h = n_next * (af - bf);
    const cplx ar = 0.5 * (e + h / l.n);
    const cplx br = 0.5 * (e - h / l.n);
    const double phi = k0 * l.n * l.d;
    A[j] = ar * std::exp(-kI * phi);
    B[j] = br * std::exp(kI * phi);
    af = A[j];
    bf = B[j];
    n_next = l.n;
  }
  FieldProfile out;
  const double total = stack.total_thickness();
  double z0 = 0.0;
  for (std::size_t j = 0; j < nl; ++j) {
    const auto& l = stack.layers[j];
    const auto np = std::max<std::size_t>(5, static_cast<std::size_t>(points * l.d / total));
    for (std::size_t i = 0; i < np; ++i) {
      const double zz = l.d * static_cast<double>(i) / static_cast<double>(np - 1);
      const cplx e = A[j] * std::exp(kI * (k0 * l.n * zz)) + B[j] * std::exp(-kI * (k0 * l.n * zz));
      out.z.push_back(z0 + zz);
      out.e_abs.push_back(std::abs(e));
      out.n.push_back(l.n);
      out.layer.push_back(static_cast<int>(j));
    }
    z0 += l.d;
  }
  return out;
}

std::vector<double> transfer_matrix_resonances(const LayerStack& stack, double lam_lo,
                                               double lam_hi, double coarse_step) {
  stack.validate();
  require(lam_lo > 0.0 && lam_hi > lam_lo && coarse_step > 0.0,
          "transfer_matrix_resonances: bad scan window");
  // |denominator| dips at resonance and varies on the free-spectral-range
  // scale elsewhere, so a coarse grid brackets every dip
  auto dmag = [&](double lam) {
    const Char2x2 m = stack_matrix(stack.layers, lam);
    const cplx a = stack.n_in * (m.m00 + m.m01 * stack.n_out);
    const cplx b = m.m10 + m.m11 * stack.n_out;
    return std::abs(a + b);
  };
  std::vector<double> lams, mags;
  for (double l = lam_lo; l <= lam_hi; l += coarse_step) {
    lams.push_back(l);
    mags.push_back(dmag(l));
  }
  std::vector<double> res;
  for (std::size_t i = 1; i + 1 < lams.size(); ++i) {
    if (mags[i] <= mags[i - 1] && mags[i] <= mags[i + 1]) {
      double a = lams[i - 1], b = lams[i + 1];
      constexpr double gr = 0.61803398874989484;
      double m1 = b - gr * (b - a), m2 = a + gr * (b - a);
      double f1 = dmag(m1), f2 = dmag(m2);
      while (b - a > 1e-9 * lams[i]) {
        if (f1 < f2) {
          b = m2;
          m2 = m1;
          f2 = f1;
          m1 = b - gr * (b - a);
          f1 = dmag(m1);
        } else {
          a = m1;
          m1 = m2;
          f1 = f2;
          m2 = a + gr * (b - a);
          f2 = dmag(m2);
        }
      }
      const double lam = 0.5 * (a + b);
      // keep genuine dips only (reject flat shoulders)
      if (dmag(lam) < 0.5 * std::min(mags[i - 1], mags[i + 1])) res.push_back(lam);
    }
  }
  if (res.empty())
    throw std::runtime_error("transfer_matrix_resonances: no resonance in scan window");
  return res;
}

namespace {

double gouy_phase(const CavityGeometry& g, int order) {
  const double le = g.effective_length();
  if (le >= g.roc)
    throw std::runtime_error("gouy_phase: unstable geometry (effective length >= roc)");
  return (order + 1) * std::acos(std::sqrt(1.0 - le / g.roc));
}

// wrapped round-trip phase; zero at resonance
double roundtrip_angle(const HybridCavity& cav, double lam, double t_air, int order) {
  const Layer diamond{cav.geometry.n_diamond, cav.geometry.t_diamond};
  const cplx rl = mirror_reflection(cav.planar_mirror, lam, 1.0, {&diamond, 1});
  const cplx rr = mirror_reflection(cav.fiber_mirror, lam, 1.0);
  double phase = kTwoPi / lam * 2.0 * t_air;
  if (order >= 0) {
    CavityGeometry g = cav.geometry;
    g.t_air = t_air;
    phase -= 2.0 * gouy_phase(g, order);
  }
  return std::arg(rl * rr * std::exp(kI * phase));
}

double refine_resonance(const HybridCavity& cav, double lam, double t_air, int order) {
  for (int it = 0; it < 120; ++it) {
    const double f = roundtrip_angle(cav, lam, t_air, order);
    const double h = 1e-6 * lam * 1e-3;
    const double fp = (roundtrip_angle(cav, lam + h, t_air, order) -
                       roundtrip_angle(cav, lam - h, t_air, order)) /
                      (2.0 * h);
    if (fp == 0.0) break;
    double step = f / fp;
    step = std::clamp(step, -2e-10, 2e-10);
    lam -= step;
    if (std::abs(step) < 1e-8 * lam * 1e-6) break;
  }
  return lam;
}

}  // namespace

std::vector<double> cavity_resonances(const HybridCavity& cavity, double lam_lo,
                                      double lam_hi, int transverse_order) {
  cavity.geometry.validate();
  require(lam_lo > 0.0 && lam_hi > lam_lo, "cavity_resonances: bad window");
  const double l_opt = cavity.geometry.t_air +
                       cavity.geometry.n_diamond * cavity.geometry.t_diamond + 2e-6;
  const double fsr = lam_lo * lam_lo / (2.0 * l_opt);
  const auto n = static_cast<std::size_t>(
      std::clamp(60.0 * (lam_hi - lam_lo) / fsr, 400.0, 400000.0));
  std::vector<double> res;
  double prev = roundtrip_angle(cavity, lam_lo, cavity.geometry.t_air, transverse_order);
  double prev_lam = lam_lo;
  for (std::size_t i = 1; i <= n; ++i) {
    const double lam = lam_lo + (lam_hi - lam_lo) * static_cast<double>(i) / n;
    const double cur = roundtrip_angle(cavity, lam, cavity.geometry.t_air, transverse_order);
    const bool crossing = (prev >= 0.0 && cur < 0.0) || (prev < 0.0 && cur >= 0.0);
    if (crossing && std::abs(cur - prev) < std::numbers::pi) {
      res.push_back(refine_resonance(cavity, 0.5 * (prev_lam + lam), cavity.geometry.t_air,
                                     transverse_order));
    }
    prev = cur;
    prev_lam = lam;
  }
  return res;
}

HybridCavity tune_air_gap(const HybridCavity& cavity, double wavelength) {
  cavity.geometry.validate();
  require(wavelength > 0.0, "tune_air_gap: wavelength must be positive");
  const double k = kTwoPi / wavelength;
  const double t0 = cavity.geometry.t_air;
  const double f0 = roundtrip_angle(cavity, wavelength, t0, -1);
  // phase rises at 2k per unit length; pick the nearest zero
  double best = t0 - f0 / (2.0 * k);
  for (double cand : {best - wavelength / 2.0, best + wavelength / 2.0})
    if (std::abs(cand - t0) < std::abs(best - t0)) best = cand;
  HybridCavity out = cavity;
  for (int it = 0; it < 80; ++it) {
    const double f = roundtrip_angle(cavity, wavelength, best, -1);
    const double h = 1e-13;
    const double fp = (roundtrip_angle(cavity, wavelength, best + h, -1) -
                       roundtrip_angle(cavity, wavelength, best - h, -1)) /
                      (2.0 * h);
    if (fp == 0.0) break;
    const double step = f / fp;
    best -= step;
    if (std::abs(step) < 1e-18) break;
  }
  require(best > 0.0, "tune_air_gap: tuned gap not positive");
  out.geometry.t_air = best;
  return out;
}

double quantize_field(FieldProfile& profile, double waist, double wavelength, int layer_begin,
                      int layer_end) {
  require(waist > 0.0 && wavelength > 0.0, "quantize_field: bad inputs");
  require(profile.z.size() >= 3, "quantize_field: degenerate profile");
  double energy_lineal = 0.0;
  for (std::size_t i = 1; i < profile.z.size(); ++i) {
    const double dz = profile.z[i] - profile.z[i - 1];
    if (dz <= 0.0) continue;  // layer boundaries duplicate z
    const double f0 = constants::eps0 * profile.n[i - 1] * profile.n[i - 1] *
                      profile.e_abs[i - 1] * profile.e_abs[i - 1];
    const double f1 =
        constants::eps0 * profile.n[i] * profile.n[i] * profile.e_abs[i] * profile.e_abs[i];
    energy_lineal += 0.5 * (f0 + f1) * dz;
  }
  const double area = std::numbers::pi * waist * waist / 2.0;
  const double energy = energy_lineal * area;
  if (energy <= 0.0) throw std::runtime_error("quantize_field: zero-energy profile");
  const double omega = kTwoPi * constants::c0 / wavelength;
  const double scale = std::sqrt(constants::hbar * omega / 2.0 / energy);
  double e_max = 0.0;
  for (std::size_t i = 0; i < profile.e_abs.size(); ++i) {
    profile.e_abs[i] *= scale;
    if (profile.layer[i] >= layer_begin && profile.layer[i] < layer_end)
      e_max = std::max(e_max, profile.e_abs[i]);
  }
  if (e_max == 0.0) throw std::runtime_error("quantize_field: requested layer range is empty");
  return e_max;
}

double dipole_moment(double tau, double wavelength, double n) {
  require(tau > 0.0 && wavelength > 0.0 && n >= 1.0, "dipole_moment: bad inputs");
  const double mu2 = 3.0 * constants::eps0 * wavelength * wavelength * wavelength *
                     constants::hbar /
                     (8.0 * n * std::numbers::pi * std::numbers::pi * tau);
  return std::sqrt(mu2);
}

namespace {

double g0_central(const HybridCavity& cavity, double tau, double lam_target) {
  const HybridCavity tuned = tune_air_gap(cavity, lam_target);
  const LayerStack stack = full_stack(tuned);
  FieldProfile prof = standing_wave_profile(stack, lam_target);
  const int diamond_layer = static_cast<int>(tuned.planar_mirror.layers_from_cavity.size());
  const double e_max = quantize_field(prof, tuned.geometry.waist, lam_target, diamond_layer,
                                      diamond_layer + 1);
  const double mu = dipole_moment(tau, lam_target, tuned.geometry.n_diamond);
  return e_max * mu / constants::hbar;
}

}  // namespace

G0Result ideal_coupling(const HybridCavity& cavity, double tau, double lam_target,
                        const GeometryErrors& errors) {
  cavity.geometry.validate();
  require(tau > 0.0, "ideal_coupling: tau must be positive");

  const HybridCavity tuned = tune_air_gap(cavity, lam_target);
  const LayerStack stack = full_stack(tuned);
  FieldProfile prof = standing_wave_profile(stack, lam_target);
  const int diamond_layer = static_cast<int>(tuned.planar_mirror.layers_from_cavity.size());
  const double e_max = quantize_field(prof, tuned.geometry.waist, lam_target, diamond_layer,
                                      diamond_layer + 1);
  const double mu = dipole_moment(tau, lam_target, tuned.geometry.n_diamond);

  G0Result out;
  out.wavelength = lam_target;
  out.t_air_used = tuned.geometry.t_air;
  out.e_max = e_max;
  out.mu = mu;
  out.g0.value = e_max * mu / constants::hbar;

  // finite-difference propagation of the supplied input errors
  double var = 0.0;
  auto add_partial = [&](double sigma, auto&& apply) {
    if (sigma <= 0.0) return;
    HybridCavity hi = cavity, lo = cavity;
    double tau_hi = tau, tau_lo = tau;
    apply(hi, tau_hi, sigma);
    apply(lo, tau_lo, -sigma);
    const double d = 0.5 * (g0_central(hi, tau_hi, lam_target) -
                            g0_central(lo, tau_lo, lam_target));
    var += d * d;
  };
  add_partial(errors.waist, [](HybridCavity& c, double&, double s) { c.geometry.waist += s; });
  add_partial(errors.t_diamond,
              [](HybridCavity& c, double&, double s) { c.geometry.t_diamond += s; });
  add_partial(errors.t_air, [](HybridCavity& c, double&, double s) { c.geometry.t_air += s; });
  add_partial(errors.tau, [](HybridCavity&, double& t, double s) { t += s; });
  out.g0.sigma = std::sqrt(var);
  return out;
}

std::vector<DispersionPoint> simulate_dispersion(const HybridCavity& cavity, double t_air_lo,
                                                 double t_air_hi, int n_lengths, double lam_lo,
                                                 double lam_hi,
                                                 std::span<const int> transverse_orders) {
  require(t_air_hi > t_air_lo && n_lengths >= 2, "simulate_dispersion: bad length range");
  std::vector<DispersionPoint> out;
  for (int i = 0; i < n_lengths; ++i) {
    HybridCavity c = cavity;
    c.geometry.t_air =
        t_air_lo + (t_air_hi - t_air_lo) * static_cast<double>(i) / (n_lengths - 1);
    for (int order : transverse_orders) {
      for (double lam : cavity_resonances(c, lam_lo, lam_hi, order))
        out.push_back({c.geometry.t_air, lam, order});
    }
  }
  return out;
}

double dispersion_slope(const HybridCavity& cavity, double lam_target) {
  // gap tuned on the Gouy-corrected fundamental so the slope is evaluated at
  // the requested wavelength
  HybridCavity c = cavity;
  const double k = kTwoPi / lam_target;
  double t = c.geometry.t_air;
  t -= roundtrip_angle(c, lam_target, t, 0) / (2.0 * k);
  for (int it = 0; it < 80; ++it) {
    const double f = roundtrip_angle(c, lam_target, t, 0);
    const double h = 1e-13;
    const double fp =
        (roundtrip_angle(c, lam_target, t + h, 0) - roundtrip_angle(c, lam_target, t - h, 0)) /
        (2.0 * h);
    if (fp == 0.0) break;
    t -= f / fp;
  }
  const double hl = 1e-14, ht = 1e-13;
  const double fl = (roundtrip_angle(c, lam_target + hl, t, 0) -
                     roundtrip_angle(c, lam_target - hl, t, 0)) /
                    (2.0 * hl);
  const double ft =
      (roundtrip_angle(c, lam_target, t + ht, 0) - roundtrip_angle(c, lam_target, t - ht, 0)) /
      (2.0 * ht);
  return std::abs(fl / ft * lam_target * lam_target / constants::c0);
}

FitResult fit_dispersion_geometry(const HybridCavity& initial,
                                  std::span<const DispersionPoint> loci) {
  require(loci.size() >= 4, "fit_dispersion_geometry: need at least 4 locus points");
  std::vector<DispersionPoint> pts(loci.begin(), loci.end());
  CurveModel model = [initial, pts](const Eigen::VectorXd& p) {
    HybridCavity c = initial;
    c.geometry.roc = p[0];
    c.geometry.t_diamond = p[1];
    Eigen::VectorXd out(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
      HybridCavity ci = c;
      ci.geometry.t_air = pts[i].t_air;
      out[i] =
          refine_resonance(ci, pts[i].wavelength, pts[i].t_air, pts[i].transverse_order);
    }
    return out;
  };
  Eigen::VectorXd y(pts.size()), w(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    y[i] = pts[i].wavelength;
    w[i] = 1.0 / (1e-12 * 1e-12);  // pm-scale residuals
  }
  Eigen::VectorXd init(2);
  init << initial.geometry.roc, initial.geometry.t_diamond;
  LeastSquaresOptions opts;
  opts.fd_step_rel = 1e-4;
  opts.fd_step_min = 1e-11;
  return least_squares(model, y, w, init, {"roc", "t_diamond"}, {}, {}, opts);
}

SidebandFit fit_sideband_scan(std::span<const double> x, std::span<const double> y,
                              double sideband_spacing_ghz, std::optional<double> slope_pm_per_ghz,
                              std::optional<double> wavelength,
                              std::optional<double> optical_path) {
  require(x.size() == y.size() && x.size() > 30, "fit_sideband_scan: bad trace");
  require(sideband_spacing_ghz > 0.0, "fit_sideband_scan: spacing must be positive");

  const std::size_t n = x.size();
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
  if (peaks.size() < 3) throw std::runtime_error("fit_sideband_scan: unresolved sidebands");
  peaks.resize(3);
  std::sort(peaks.begin(), peaks.end());

  auto lor = [](double dx, double hw) { return hw * hw / (dx * dx + hw * hw); };
  auto model = [&](double xx, std::span<const double> p) {
    const double c = p[0], s = std::abs(p[1]), hw = 0.5 * std::abs(p[2]);
    return p[3] * lor(xx - c, hw) + p[4] * (lor(xx - c - s, hw) + lor(xx - c + s, hw)) + p[5];
  };
  const double c0 = x[peaks[1]];
  const double s0 = 0.5 * (x[peaks[2]] - x[peaks[0]]);
  std::vector<double> w(n, 1.0);
  std::vector<double> init = {c0,
                              s0,
                              std::max(s0 / 6.0, (x.back() - x.front()) / n * 3.0),
                              y[peaks[1]] - med,
                              std::max(y[peaks[0]], y[peaks[2]]) - med,
                              med};
  FitResult fit = least_squares(model, x, y, w, init,
                                {"center", "separation", "fwhm", "amp_carrier", "amp_side",
                                 "baseline"});

  const double sep = std::abs(fit.value("separation"));
  const double fwhm_axis = std::abs(fit.value("fwhm"));
  const double ruler = sideband_spacing_ghz / sep;  // GHz per axis unit
  SidebandFit out;
  out.fit = fit;
  out.kappa_ghz.value = fwhm_axis * ruler;
  const double r_fwhm = fit.error("fwhm") / std::max(fwhm_axis, 1e-300);
  const double r_sep = fit.error("separation") / std::max(sep, 1e-300);
  out.kappa_ghz.sigma = out.kappa_ghz.value * std::sqrt(r_fwhm * r_fwhm + r_sep * r_sep);
  if (slope_pm_per_ghz) {
    out.length_linewidth_pm.value = out.kappa_ghz.value * *slope_pm_per_ghz;
    out.length_linewidth_pm.sigma = out.kappa_ghz.sigma * *slope_pm_per_ghz;
    if (wavelength)
      out.finesse = *wavelength / (2.0 * out.length_linewidth_pm.value * 1e-12);
  }
  if (optical_path && out.kappa_ghz.value > 0.0) {
    const double fsr_ghz = constants::c0 / (2.0 * *optical_path) / 1e9;
    out.finesse_fsr = fsr_ghz / out.kappa_ghz.value;
  }
  return out;
}

double EfficiencyLedger::product_supplied() const {
  double p = 1.0;
  for (const auto& f : {eta_qe, eta_dw, eta_br, eta_z, cos2_alpha})
    if (f) p *= *f;
  return p;
}

void EfficiencyLedger::validate() const {
  for (const auto& f : {eta_qe, eta_dw, eta_br, eta_z, cos2_alpha})
    if (f) require(*f > 0.0 && *f <= 1.0, "EfficiencyLedger: factors must lie in (0,1]");
}

MeasuredValue qe_bound(MeasuredValue g, MeasuredValue g0, const EfficiencyLedger& ledger) {
  require(g.value > 0.0 && g.value <= g0.value, "qe_bound: requires 0 < g <= g0");
  ledger.validate();
  require(!ledger.eta_qe.has_value(), "qe_bound: eta_qe must be left unset");
  const double eta = ledger.product_supplied();
  const double bound = (g.value / g0.value) * (g.value / g0.value) / eta;
  if (bound > 1.0 + 1e-12)
    throw std::domain_error("qe_bound: bound exceeds 1 (inconsistent inputs)");
  double rel2 = 4.0 * (g.sigma / g.value) * (g.sigma / g.value) +
                4.0 * (g0.sigma / g0.value) * (g0.sigma / g0.value);
  auto add_rel = [&rel2](const std::optional<double>& f, double s) {
    if (f && s > 0.0) rel2 += (s / *f) * (s / *f);
  };
  add_rel(ledger.eta_dw, ledger.sigma_eta_dw);
  add_rel(ledger.eta_br, ledger.sigma_eta_br);
  add_rel(ledger.eta_z, ledger.sigma_eta_z);
  add_rel(ledger.cos2_alpha, ledger.sigma_cos2_alpha);
  return {bound, bound * std::sqrt(rel2)};
}

double eta_z(double z, double n, double wavelength) {
  require(n >= 1.0 && wavelength > 0.0, "eta_z: bad inputs");
  const double c = std::cos(kTwoPi * n * z / wavelength);
  return c * c;
}

double unity_qe_straggle(MeasuredValue g, MeasuredValue g0, const EfficiencyLedger& ledger,
                         double n, double wavelength) {
  require(g.value > 0.0 && g.value <= g0.value, "unity_qe_straggle: requires 0 < g <= g0");
  ledger.validate();
  double eta_other = 1.0;
  for (const auto& f : {ledger.eta_dw, ledger.eta_br, ledger.cos2_alpha})
    if (f) eta_other *= *f;
  const double eta_z_req = (g.value / g0.value) * (g.value / g0.value) / eta_other;
  if (eta_z_req > 1.0)
    throw std::domain_error("unity_qe_straggle: required eta_Z exceeds 1 (infeasible)");
  const double arg = std::acos(std::sqrt(eta_z_req));
  require(std::abs(arg) < std::numbers::pi / 2.0, "unity_qe_straggle: outside inverse branch");
  return wavelength / (kTwoPi * n) * arg;
}

}  // namespace cavqed
