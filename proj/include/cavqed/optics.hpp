#pragma once

#include <complex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cavqed/fit.hpp"

namespace cavqed {

struct Layer {
  double n = 1.0;  // refractive index
  double d = 0.0;  // thickness, m
};

// Ordered layers with terminating half-spaces, traversal from n_in to n_out.
struct LayerStack {
  std::vector<Layer> layers;
  double n_in = 1.0;
  double n_out = 1.0;

  void validate() const;
  double total_thickness() const;
};

// Mirror coating as seen from the cavity medium; ideal() stands in for a
// perfect r = -1 reflector.
struct CoatingStack {
  std::vector<Layer> layers_from_cavity;
  double n_substrate = 1.45;
  bool ideal = false;

  static CoatingStack ideal_mirror();
  // default surrogate: 50 nm silica cap + 15 quarter-wave pairs (2.10/1.45)
  // designed at 602 nm on a silica substrate
  static CoatingStack default_mirror(double design_wavelength = 602e-9);
  // text format, one layer per line: refractive_index thickness_nm
  static CoatingStack from_file(const std::string& path);
};

struct CavityGeometry {
  double roc = 22.5e-6;       // fiber mirror radius of curvature
  double t_diamond = 1.05e-6;
  double t_air = 6.95e-6;
  double waist = 1.30e-6;     // 1/e^2 intensity radius
  double n_diamond = 2.41;

  void validate() const;
  double effective_length() const { return t_air + t_diamond / n_diamond; }
  // expected fundamental waist of the stable resonator; NaN when unstable
  double expected_waist(double wavelength) const;
  bool stable() const { return effective_length() < roc; }
};

struct HybridCavity {
  CavityGeometry geometry;
  CoatingStack planar_mirror;  // diamond side
  CoatingStack fiber_mirror;
};

struct ReflectionResult {
  std::complex<double> r;
  std::complex<double> t;
};

// Characteristic-matrix amplitude coefficients at normal incidence.
ReflectionResult stack_reflection(const LayerStack& stack, double wavelength);
double stack_transmittance(const LayerStack& stack, double wavelength);

// Full sandwich substrate | planar mirror | diamond | air | fiber mirror | substrate
LayerStack full_stack(const HybridCavity& cavity);

struct FieldProfile {
  std::vector<double> z;        // m, through the stack
  std::vector<double> e_abs;    // |E|, scaled only after quantize_field
  std::vector<double> n;        // local index
  std::vector<int> layer;       // owning layer index in the stack
};

// Forward/backward plane-wave amplitudes through the stack at `wavelength`,
// unit transmitted amplitude.
FieldProfile standing_wave_profile(const LayerStack& stack, double wavelength,
                                   std::size_t points = 40000);

// Resonances of a whole stack located by transmission maxima inside the scan.
std::vector<double> transfer_matrix_resonances(const LayerStack& stack, double lam_lo,
                                               double lam_hi, double coarse_step);

// Round-trip-phase resonances of the hybrid cavity. transverse_order < 0
// disables the Gouy term (plane-wave 1D condition, used for quantization).
std::vector<double> cavity_resonances(const HybridCavity& cavity, double lam_lo,
                                      double lam_hi, int transverse_order = -1);

// Adjusts t_air by at most half a wavelength so the 1D resonance sits at
// `wavelength`; returns the tuned geometry.
HybridCavity tune_air_gap(const HybridCavity& cavity, double wavelength);

// Scales the profile so the intra-cavity energy with a Gaussian transverse
// area pi w^2 / 2 equals hbar*omega/2; returns max |E| inside the layer range
// [layer_begin, layer_end).
double quantize_field(FieldProfile& profile, double waist, double wavelength,
                      int layer_begin, int layer_end);

// mu = sqrt(3 eps0 lambda^3 hbar / (8 n pi^2 tau))
double dipole_moment(double tau, double wavelength, double n);

struct G0Result {
  MeasuredValue g0;         // rad/s
  double wavelength = 0.0;  // resonance used for quantization
  double t_air_used = 0.0;
  double e_max = 0.0;       // V/m inside the diamond
  double mu = 0.0;          // C m
};

struct GeometryErrors {
  double waist = 0.0;
  double t_diamond = 0.0;
  double t_air = 0.0;
  double tau = 0.0;
};

// g0 = |E_max||mu|/hbar at the tuned 1D resonance nearest the target
// wavelength; uncertainty from finite-difference propagation of the
// geometry and lifetime errors.
G0Result ideal_coupling(const HybridCavity& cavity, double tau, double lam_target,
                        const GeometryErrors& errors = {});

struct DispersionPoint {
  double t_air = 0.0;
  double wavelength = 0.0;
  int transverse_order = 0;
};

// Resonance loci over an air-gap range for the requested transverse orders
// (Gouy-corrected round-trip phase).
std::vector<DispersionPoint> simulate_dispersion(const HybridCavity& cavity, double t_air_lo,
                                                 double t_air_hi, int n_lengths,
                                                 double lam_lo, double lam_hi,
                                                 std::span<const int> transverse_orders);

// Local dL/dnu (m/Hz) of the fundamental branch through the resonance
// nearest lam_target after Gouy-corrected gap tuning.
double dispersion_slope(const HybridCavity& cavity, double lam_target);

// Fits roc and t_diamond to measured loci (closed-loop identifiability).
FitResult fit_dispersion_geometry(const HybridCavity& initial,
                                  std::span<const DispersionPoint> loci);

struct SidebandFit {
  MeasuredValue kappa_ghz;          // frequency linewidth /2pi GHz
  MeasuredValue length_linewidth_pm;  // via the supplied slope; 0 when no slope
  double finesse = 0.0;               // lambda / (2 * length linewidth)
  double finesse_fsr = 0.0;           // FSR / linewidth from the optical path
  FitResult fit;
};

// Three-Lorentzian fit with the sideband spacing as the frequency ruler.
SidebandFit fit_sideband_scan(std::span<const double> x, std::span<const double> y,
                              double sideband_spacing_ghz,
                              std::optional<double> slope_pm_per_ghz = {},
                              std::optional<double> wavelength = {},
                              std::optional<double> optical_path = {});

struct EfficiencyLedger {
  std::optional<double> eta_qe;
  std::optional<double> eta_dw;
  std::optional<double> eta_br;
  std::optional<double> eta_z;
  std::optional<double> cos2_alpha;
  // uncertainties for supplied factors (0 when unknown)
  double sigma_eta_dw = 0.0;
  double sigma_eta_br = 0.0;
  double sigma_eta_z = 0.0;
  double sigma_cos2_alpha = 0.0;

  double product_supplied() const;  // unsupplied factors count as 1
  void validate() const;
};

// eta_QE >= (g/g0)^2 / (product of supplied factors); uncertainty propagated.
MeasuredValue qe_bound(MeasuredValue g, MeasuredValue g0, const EfficiencyLedger& ledger);

// eta_Z = cos^2(2 pi n z / lambda)
double eta_z(double z, double n, double wavelength);

// Depth z such that the full efficiency product with eta_QE = 1 matches
// (g/g0)^2. Throws when the required eta_Z exceeds 1.
double unity_qe_straggle(MeasuredValue g, MeasuredValue g0, const EfficiencyLedger& ledger,
                         double n, double wavelength);

}  // namespace cavqed
