#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace cavqed {

// Rates of the coupled emitter-cavity system, all angular (rad/s).
struct CqedParams {
  double g = 0.0;           // coherent coupling
  double kappa = 0.0;       // cavity decay
  double gamma = 0.0;       // emitter spontaneous decay
  double gamma_star = 0.0;  // pure dephasing
  double pump = 0.0;        // incoherent pump (driven model only)
  double detuning = 0.0;    // emitter-cavity detuning, any sign

  void validate() const;  // throws std::invalid_argument on negative/non-finite rates

  double total_decoherence() const { return gamma + gamma_star + kappa; }            // Gamma
  double total_decoherence_cw() const { return total_decoherence() + pump; }         // Gamma_cw
  // detuning-dependent emitter<->cavity exchange rate R
  double exchange_rate() const;
  double exchange_rate_cw() const;
};

struct PopulationTrace {
  std::vector<double> times;
  std::vector<double> rho_aa;  // emitter excited, cavity empty
  std::vector<double> rho_cc;  // emitter ground, one photon
  std::vector<double> rho_gg;  // driven runs only
  std::vector<double> rho_bb;  // driven runs only
  bool driven = false;
};

struct SteadyState {
  double n_expect = 0.0;  // = rho_cc + rho_bb
  double rho_gg = 0.0;
  double rho_aa = 0.0;
  double rho_cc = 0.0;
  double rho_bb = 0.0;
};

struct LindbladOptions {
  double rel_tol = 1e-9;
  double abs_tol = 1e-13;
  std::size_t max_steps = 5'000'000;
};

// Integrates the occupation dynamics of the master equation with jump
// operators sigma_ge (gamma), sigma_ee (gamma*), a (kappa) and, for driven
// runs, sigma_eg (pump), after adiabatic elimination of the coherence.
// Undriven initial state: emitter excited, cavity empty. Driven: ground.
PopulationTrace solve_lindblad_numeric(const CqedParams& params,
                                       std::span<const double> t_grid, bool driven,
                                       const LindbladOptions& opts = {});

// Closed-form undriven populations (rho_aa, rho_cc) at time t.
std::pair<double, double> populations_analytic(const CqedParams& params, double t);

// (p_a, p_c): total emission probability from the atom and from the cavity.
std::pair<double, double> emission_probabilities(const CqedParams& params);

// gamma_cav = R kappa / (R + kappa)
double cavity_decay_rate(const CqedParams& params);

// tau_bare / tau_P = 1 + gamma_cav/gamma with gamma taken as 1/tau_bare.
double lifetime_reduction(const CqedParams& params, double tau_bare);

// (C_inc, C) = (4g^2/(kappa gamma), 4g^2/(kappa(gamma+gamma_star)))
std::pair<double, double> cooperativities(const CqedParams& params);

SteadyState driven_steady_state(const CqedParams& params);

struct CwLine {
  double delta_cw = 0.0;  // emission linewidth (rad/s)
  double a_cw = 0.0;      // on-resonance fluorescence rate kappa<n>(0)
};
// kappa<n>(delta) = a_cw * delta_cw^2 / (delta_cw^2 + 4 delta^2)
CwLine cw_linewidth_amplitude(const CqedParams& params);

struct SaturationRate {
  double exact = 0.0;   // first-order Pade form
  double approx = 0.0;  // gamma + 4g^2 kappa/(4g^2 + kappa Gamma); equals gamma + gamma_cav(0)
};
SaturationRate saturation_pump_rate(const CqedParams& params);

}  // namespace cavqed
