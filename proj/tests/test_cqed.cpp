#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>
#include <vector>

#include "cavqed/cqed.hpp"
#include "cavqed/rng.hpp"
#include "cavqed/units.hpp"
#include "oracles.hpp"

using namespace cavqed;

namespace {

CqedParams gev1(double detuning_ghz = 0.0) {
  CqedParams p;
  p.g = ghz_to_rad(0.36);
  p.kappa = ghz_to_rad(2.07);
  p.gamma = 1.0 / 6.1e-9;
  p.gamma_star = ghz_to_rad(1.0);
  p.detuning = ghz_to_rad(detuning_ghz);
  return p;
}

std::vector<double> linspace(double a, double b, std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = a + (b - a) * static_cast<double>(i) / (n - 1);
  return v;
}

// reduced undriven rate system for the independent RK45 oracle
std::array<double, 2> undriven_rhs(const CqedParams& p, const std::array<double, 2>& x) {
  const double r = p.exchange_rate();
  return {-(p.gamma + r) * x[0] + r * x[1], r * x[0] - (p.kappa + r) * x[1]};
}

std::array<double, 4> driven_rhs(const CqedParams& p, const std::array<double, 4>& x) {
  const double r = p.exchange_rate_cw();
  const double ga = p.gamma, k = p.kappa, pi = p.pump;
  return {-pi * x[0] + ga * x[1] + k * x[2],
          pi * x[0] - (ga + r) * x[1] + r * x[2] + k * x[3],
          r * x[1] - (r + k + pi) * x[2] + ga * x[3],
          pi * x[2] - (ga + k) * x[3]};
}

}  // namespace

TEST_CASE("decoupled emitter decays exponentially") {
  CqedParams p = gev1();
  p.g = 0.0;
  const auto grid = linspace(0.0, 30e-9, 200);
  const auto trace = solve_lindblad_numeric(p, grid, false);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    CHECK(trace.rho_aa[i] == doctest::Approx(std::exp(-p.gamma * grid[i])).epsilon(1e-7));
    CHECK(trace.rho_cc[i] == 0.0);
  }
}

TEST_CASE("numeric solver matches the independent RK45 oracle and the closed form") {
  const CqedParams p = gev1();
  const auto grid = linspace(0.0, 20e-9, 101);
  const auto trace = solve_lindblad_numeric(p, grid, false);
  for (std::size_t i = 1; i < grid.size(); i += 10) {
    const auto o = oracle::integrate_rk45<2>(
        [&p](const std::array<double, 2>& x) { return undriven_rhs(p, x); }, {1.0, 0.0}, 0.0,
        grid[i]);
    CHECK(std::abs(trace.rho_aa[i] - o[0]) < 1e-7);
    CHECK(std::abs(trace.rho_cc[i] - o[1]) < 1e-7);
  }
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto [aa, cc] = populations_analytic(p, grid[i]);
    CHECK(std::abs(trace.rho_aa[i] - aa) < 1e-3);
    CHECK(std::abs(trace.rho_cc[i] - cc) < 1e-3);
  }
}

TEST_CASE("driven dynamics converge to the algebraic steady state") {
  CqedParams p = gev1();
  p.pump = ghz_to_rad(0.08);
  const auto grid = linspace(0.0, 400e-9, 41);
  const auto trace = solve_lindblad_numeric(p, grid, true);
  const SteadyState ss = driven_steady_state(p);
  CHECK(std::abs(trace.rho_gg.back() - ss.rho_gg) < 1e-6);
  CHECK(std::abs(trace.rho_aa.back() - ss.rho_aa) < 1e-6);
  CHECK(std::abs(trace.rho_cc.back() - ss.rho_cc) < 1e-6);
  CHECK(std::abs(trace.rho_bb.back() - ss.rho_bb) < 1e-6);

  // independent oracle for an intermediate time
  const auto o = oracle::integrate_rk45<4>(
      [&p](const std::array<double, 4>& x) { return driven_rhs(p, x); }, {1.0, 0.0, 0.0, 0.0},
      0.0, grid[10]);
  CHECK(std::abs(trace.rho_aa[10] - o[1]) < 1e-7);
  CHECK(std::abs(trace.rho_cc[10] - o[2]) < 1e-7);
}

TEST_CASE("probability conservation") {
  CqedParams p = gev1();
  p.pump = ghz_to_rad(0.08);
  const auto grid = linspace(0.0, 100e-9, 400);
  const auto driven = solve_lindblad_numeric(p, grid, true);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double total =
        driven.rho_gg[i] + driven.rho_aa[i] + driven.rho_cc[i] + driven.rho_bb[i];
    CHECK(std::abs(total - 1.0) < 1e-8);
  }
  const auto undriven = solve_lindblad_numeric(gev1(), grid, false);
  for (std::size_t i = 0; i < grid.size(); ++i)
    CHECK(undriven.rho_aa[i] + undriven.rho_cc[i] <= 1.0 + 1e-10);
}

TEST_CASE("populations_analytic basics") {
  const CqedParams p = gev1();
  const auto [aa0, cc0] = populations_analytic(p, 0.0);
  CHECK(aa0 == 1.0);
  CHECK(cc0 == 0.0);

  CqedParams p0 = p;
  p0.g = 0.0;
  for (double t : {0.1e-9, 1e-9, 10e-9}) CHECK(populations_analytic(p0, t).second == 0.0);

  // degenerate alpha -> 0: g = 0 with gamma = kappa stays finite and exact
  CqedParams pd;
  pd.g = 0.0;
  pd.gamma = 1e9;
  pd.kappa = 1e9;
  const auto [aad, ccd] = populations_analytic(pd, 2e-9);
  CHECK(aad == doctest::Approx(std::exp(-2.0)).epsilon(1e-12));
  CHECK(ccd == 0.0);
}

TEST_CASE("analytic-vs-numeric agreement over 100 random weak-coupling sets") {
  CounterRng rng(2024);
  int checked = 0;
  while (checked < 100) {
    CqedParams p;
    p.kappa = ghz_to_rad(std::pow(10.0, rng.uniform(-1.0, 1.3)));
    p.g = p.kappa / 5.0 * rng.uniform(0.05, 1.0);
    p.gamma = ghz_to_rad(std::pow(10.0, rng.uniform(-2.0, -0.5)));
    p.gamma_star = ghz_to_rad(std::pow(10.0, rng.uniform(-2.0, 0.7)));
    p.detuning = ghz_to_rad(rng.uniform(-3.0, 3.0));
    const double r = p.exchange_rate();
    const double alpha = std::hypot(2.0 * r, p.gamma - p.kappa);
    const double slow = std::max(0.5 * (2.0 * r + p.gamma + p.kappa - alpha), 1e6);
    const double t_max = std::min(8.0 / slow, 300e-9);
    const auto grid = linspace(0.0, t_max, 60);
    const auto trace = solve_lindblad_numeric(p, grid, false);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const auto [aa, cc] = populations_analytic(p, grid[i]);
      CHECK(std::abs(trace.rho_aa[i] - aa) < 2e-3);
      CHECK(std::abs(trace.rho_cc[i] - cc) < 2e-3);
    }
    ++checked;
  }
}

TEST_CASE("emission probabilities") {
  CqedParams p0 = gev1();
  p0.g = 0.0;
  const auto [pa0, pc0] = emission_probabilities(p0);
  CHECK(pa0 == 1.0);
  CHECK(pc0 == 0.0);

  const auto [pa, pc] = emission_probabilities(gev1());
  CHECK(pc == doctest::Approx(0.856).epsilon(5e-3));
  CHECK(pa + pc == 1.0);

  // algebraic identity holds for random parameter sets
  CounterRng rng(5);
  for (int i = 0; i < 25; ++i) {
    CqedParams p;
    p.g = ghz_to_rad(rng.uniform(0.0, 2.0));
    p.kappa = ghz_to_rad(rng.uniform(0.1, 10.0));
    p.gamma = ghz_to_rad(rng.uniform(0.001, 0.3));
    p.gamma_star = ghz_to_rad(rng.uniform(0.0, 5.0));
    p.detuning = ghz_to_rad(rng.uniform(-5.0, 5.0));
    const auto [a, c] = emission_probabilities(p);
    CHECK(a + c == doctest::Approx(1.0).epsilon(1e-14));
  }
  CqedParams bad;
  bad.kappa = 1e9;
  CHECK_THROWS_AS(emission_probabilities(bad), std::invalid_argument);
}

TEST_CASE("emission bookkeeping: gamma int rho_aa + kappa int rho_cc = 1") {
  CounterRng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    CqedParams p;
    p.g = ghz_to_rad(rng.uniform(0.05, 1.0));
    p.kappa = ghz_to_rad(rng.uniform(0.5, 5.0));
    p.gamma = ghz_to_rad(rng.uniform(0.01, 0.2));
    p.gamma_star = ghz_to_rad(rng.uniform(0.0, 3.0));
    p.detuning = ghz_to_rad(rng.uniform(-2.0, 2.0));
    const double r = p.exchange_rate();
    const double alpha = std::hypot(2.0 * r, p.gamma - p.kappa);
    const double slow = 0.5 * (2.0 * r + p.gamma + p.kappa - alpha);
    const double t_end = 60.0 / slow;  // tail below 1e-20
    auto integrand_a = [&p](double t) { return populations_analytic(p, t).first; };
    auto integrand_c = [&p](double t) { return populations_analytic(p, t).second; };
    const double ia = oracle::simpson(integrand_a, 0.0, t_end, 40000);
    const double ic = oracle::simpson(integrand_c, 0.0, t_end, 40000);
    CHECK(p.gamma * ia + p.kappa * ic == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("cavity decay rate") {
  CHECK(rad_to_ghz(cavity_decay_rate(gev1())) == doctest::Approx(0.155).epsilon(3e-3));

  // oracle: p_c/(1-p_c) * gamma
  const auto [pa, pc] = emission_probabilities(gev1());
  CHECK(cavity_decay_rate(gev1()) ==
        doctest::Approx(pc / (1.0 - pc) * gev1().gamma).epsilon(1e-12));

  CHECK(rad_to_ghz(cavity_decay_rate(gev1(1e6))) < 1e-9);  // huge detuning kills it

  CqedParams fast;
  fast.kappa = ghz_to_rad(100.0);
  fast.g = ghz_to_rad(0.1);
  fast.gamma = ghz_to_rad(0.01);
  CHECK(cavity_decay_rate(fast) ==
        doctest::Approx(4.0 * fast.g * fast.g / fast.kappa).epsilon(0.01));
}

TEST_CASE("fast-cavity limit of gamma_cav within 2 percent") {
  CounterRng rng(8);
  for (int i = 0; i < 20; ++i) {
    CqedParams p;
    p.g = ghz_to_rad(rng.uniform(0.01, 0.5));
    p.gamma = ghz_to_rad(rng.uniform(0.001, 0.1));
    p.gamma_star = ghz_to_rad(rng.uniform(0.0, 0.5));
    p.kappa = 100.0 * std::max({p.g, p.gamma, p.gamma_star});
    p.detuning = ghz_to_rad(rng.uniform(-10.0, 10.0));
    const double G = p.total_decoherence();
    const double approx = 4.0 * p.g * p.g / p.kappa * G * G /
                          (G * G + 4.0 * p.detuning * p.detuning);
    const double exact = cavity_decay_rate(p);
    CHECK(std::abs(exact - approx) / exact <= 0.02);
  }
}

TEST_CASE("lifetime reduction factor") {
  const double tau = 6.1e-9;
  const double ratio0 = lifetime_reduction(gev1(), tau);
  CHECK(ratio0 == doctest::Approx(6.93).epsilon(2e-3));
  CHECK(ratio0 == doctest::Approx(1.0 + cavity_decay_rate(gev1()) / (1.0 / tau))
                      .epsilon(1e-12));

  // detuning profile is an even Lorentzian with FWHM Delta
  CqedParams p = gev1();
  p.gamma = 1.0 / tau;
  const double G = p.total_decoherence();
  const double delta_fwhm = std::sqrt(G * G + 4.0 * p.g * p.g * G / p.kappa);
  CqedParams ph = p;
  ph.detuning = 0.5 * delta_fwhm;
  const double enh0 = lifetime_reduction(p, tau) - 1.0;
  const double enh_half = lifetime_reduction(ph, tau) - 1.0;
  CHECK(enh_half == doctest::Approx(0.5 * enh0).epsilon(1e-12));
  ph.detuning = -0.5 * delta_fwhm;
  CHECK(lifetime_reduction(ph, tau) - 1.0 == doctest::Approx(0.5 * enh0).epsilon(1e-12));

  CqedParams pg0 = gev1();
  pg0.g = 0.0;
  CHECK(lifetime_reduction(pg0, tau) == 1.0);
  CHECK_THROWS_AS(lifetime_reduction(gev1(), 0.0), std::invalid_argument);
}

TEST_CASE("cooperativities") {
  const auto [c_inc, c] = cooperativities(gev1());
  CHECK(c_inc == doctest::Approx(9.6).epsilon(5e-3));
  CHECK(c == doctest::Approx(0.24).epsilon(2e-2));
  CqedParams p = gev1();
  p.gamma_star = 0.0;
  const auto [ci2, c2] = cooperativities(p);
  CHECK(ci2 == c2);
}

TEST_CASE("driven steady state") {
  CqedParams p = gev1();
  SUBCASE("no pump stays in the ground state") {
    const SteadyState ss = driven_steady_state(p);
    CHECK(ss.rho_gg == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(ss.n_expect == doctest::Approx(0.0).epsilon(1e-15));
  }
  SUBCASE("expected occupation matches the closed form") {
    p.pump = ghz_to_rad(0.08);
    for (double d_ghz : {0.0, 0.7, -2.5}) {
      p.detuning = ghz_to_rad(d_ghz);
      const SteadyState ss = driven_steady_state(p);
      const double gcw = p.total_decoherence_cw();
      const double n_formula =
          4.0 * p.g * p.g * p.pump * gcw /
          (4.0 * p.g * p.g * gcw * (p.gamma + p.kappa + p.pump) +
           p.kappa * (p.gamma + p.pump) *
               (4.0 * p.detuning * p.detuning + gcw * gcw));
      CHECK(ss.n_expect == doctest::Approx(n_formula).epsilon(1e-12));
      CHECK(ss.n_expect == doctest::Approx(ss.rho_cc + ss.rho_bb).epsilon(1e-14));
      CHECK(ss.rho_gg + ss.rho_aa + ss.rho_cc + ss.rho_bb ==
            doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  SUBCASE("doubly excited occupation is small (one-photon truncation audit)") {
    p.pump = ghz_to_rad(0.08);
    p.detuning = 0.0;
    CHECK(driven_steady_state(p).rho_bb < 1e-3);
    CqedParams pk = p;
    pk.kappa = ghz_to_rad(5.8);
    CHECK(driven_steady_state(pk).rho_bb < 2e-4);
  }
  SUBCASE("all rates zero is rejected") {
    CHECK_THROWS_AS(driven_steady_state(CqedParams{}), std::invalid_argument);
  }
}

TEST_CASE("cw linewidth and amplitude") {
  SUBCASE("g = 0 reduces to the bare dephasing rate") {
    CqedParams p = gev1();
    p.g = 0.0;
    p.pump = ghz_to_rad(0.08);
    CHECK(cw_linewidth_amplitude(p).delta_cw ==
          doctest::Approx(p.total_decoherence_cw()).epsilon(1e-12));
  }
  SUBCASE("degraded-cavity linewidth lands on the measured value") {
    CqedParams p = gev1();
    p.kappa = ghz_to_rad(5.8);
    p.pump = ghz_to_rad(0.08);
    const double dcw_ghz = rad_to_ghz(cw_linewidth_amplitude(p).delta_cw);
    CHECK(dcw_ghz == doctest::Approx(9.06).epsilon(5e-3));
    CHECK(dcw_ghz > 8.6);
    CHECK(dcw_ghz < 9.5);
  }
  SUBCASE("kappa<n>(delta) equals the Lorentzian form to 1e-9 relative") {
    CqedParams p = gev1();
    p.pump = ghz_to_rad(0.08);
    const CwLine line = cw_linewidth_amplitude(p);
    for (int i = 0; i <= 100; ++i) {
      p.detuning = ghz_to_rad(-10.0 + 0.2 * i);
      const SteadyState ss = driven_steady_state(p);
      const double kn = p.kappa * ss.n_expect;
      const double lor = line.a_cw * line.delta_cw * line.delta_cw /
                         (line.delta_cw * line.delta_cw +
                          4.0 * p.detuning * p.detuning);
      CHECK(std::abs(kn - lor) / kn < 1e-9);
    }
    p.detuning = 0.0;
    CHECK(p.kappa * driven_steady_state(p).n_expect ==
          doctest::Approx(line.a_cw).epsilon(1e-12));
  }
}

TEST_CASE("saturation pump rate") {
  const SaturationRate s = saturation_pump_rate(gev1());
  CHECK(rad_to_ghz(s.approx) == doctest::Approx(0.181).epsilon(2e-3));
  CHECK(rad_to_ghz(s.exact) == doctest::Approx(0.1796).epsilon(2e-3));
  // the approximate form is algebraically gamma + gamma_cav(0)
  CHECK(std::abs(s.approx - (gev1().gamma + cavity_decay_rate(gev1()))) / s.approx < 1e-6);

  CqedParams p0 = gev1();
  p0.g = 0.0;
  const SaturationRate s0 = saturation_pump_rate(p0);
  CHECK(s0.approx == doctest::Approx(p0.gamma).epsilon(1e-12));
  const double g0_exact = p0.gamma - p0.gamma * p0.gamma /
                                         (2.0 * p0.gamma + p0.gamma_star + p0.kappa);
  CHECK(s0.exact == doctest::Approx(g0_exact).epsilon(1e-12));
  CHECK(s0.exact == doctest::Approx(p0.gamma).epsilon(0.01));  // gamma << kappa

  // pump estimate (P/P_sat) / tau_min in the paper's quoting convention
  const double pump_ghz = (35.0 / 52.0) / 1.36e-9 / (kTwoPi * 1e9);
  CHECK(pump_ghz == doctest::Approx(0.0788).epsilon(2e-3));
}

TEST_CASE("input validation") {
  CqedParams p = gev1();
  p.g = -1.0;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  std::vector<double> bad_grid = {0.0, 2e-9, 1e-9};
  CHECK_THROWS_AS(solve_lindblad_numeric(gev1(), bad_grid, false), std::invalid_argument);
  std::vector<double> no_zero = {1e-9, 2e-9};
  CHECK_THROWS_AS(solve_lindblad_numeric(gev1(), no_zero, false), std::invalid_argument);
  CHECK_THROWS_AS(populations_analytic(gev1(), -1e-9), std::invalid_argument);
}
