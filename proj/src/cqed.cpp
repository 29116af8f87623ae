#include "cavqed/cqed.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

namespace cavqed {

namespace {

double sinhc(double x) {
  if (std::abs(x) < 1e-4) {
    const double x2 = x * x;
    return 1.0 + x2 / 6.0 + x2 * x2 / 120.0;
  }
  return std::sinh(x) / x;
}

void require(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

// L-stable embedded Rosenbrock pair (ode23s-type) for dx/dt = A x. The rate
// matrix is its own exact Jacobian, so each stage is one LU solve.
class RosenbrockIntegrator {
 public:
  RosenbrockIntegrator(Eigen::MatrixXd a, Eigen::VectorXd x0, const LindbladOptions& opts)
      : a_(std::move(a)), x_(std::move(x0)), opts_(opts) {
    const double fast = std::max(a_.cwiseAbs().rowwise().sum().maxCoeff(), 1.0);
    h_ = 0.05 / fast;
  }

  // advances to t_target, landing on it exactly
  void advance_to(double t_target) {
    static constexpr double d = 0.2928932188134524756;  // 1/(2+sqrt(2))
    static constexpr double e32 = 7.4142135623730950488; // 6+sqrt(2)
    const int n = static_cast<int>(x_.size());
    while (t_ < t_target) {
      double h = std::min(h_, t_target - t_);
      for (;;) {
        if (++steps_ > opts_.max_steps)
          throw std::runtime_error(
              "solve_lindblad_numeric: step limit reached before requested tolerance");
        Eigen::MatrixXd w = Eigen::MatrixXd::Identity(n, n) - h * d * a_;
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(w);
        const Eigen::VectorXd f0 = a_ * x_;
        const Eigen::VectorXd k1 = lu.solve(f0);
        const Eigen::VectorXd f1 = a_ * (x_ + 0.5 * h * k1);
        const Eigen::VectorXd k2 = lu.solve(f1 - k1) + k1;
        const Eigen::VectorXd x_new = x_ + h * k2;
        const Eigen::VectorXd f2 = a_ * x_new;
        const Eigen::VectorXd k3 = lu.solve(f2 - e32 * (k2 - f1) - 2.0 * (k1 - f0));
        const Eigen::VectorXd err = (h / 6.0) * (k1 - 2.0 * k2 + k3);
        double err_norm = 0.0;
        for (int i = 0; i < n; ++i) {
          const double scale =
              opts_.abs_tol + opts_.rel_tol * std::max(std::abs(x_[i]), std::abs(x_new[i]));
          err_norm = std::max(err_norm, std::abs(err[i]) / scale);
        }
        if (err_norm <= 1.0) {
          t_ += h;
          x_ = x_new;
          h_ = h * std::clamp(0.9 * std::pow(std::max(err_norm, 1e-10), -1.0 / 3.0), 1.0, 5.0);
          break;
        }
        h *= std::clamp(0.9 * std::pow(err_norm, -1.0 / 3.0), 0.1, 0.5);
      }
    }
  }

  const Eigen::VectorXd& state() const { return x_; }

 private:
  Eigen::MatrixXd a_;
  Eigen::VectorXd x_;
  LindbladOptions opts_;
  double t_ = 0.0;
  double h_ = 0.0;
  std::size_t steps_ = 0;
};

}  // namespace

void CqedParams::validate() const {
  require(std::isfinite(g) && std::isfinite(kappa) && std::isfinite(gamma) &&
              std::isfinite(gamma_star) && std::isfinite(pump) && std::isfinite(detuning),
          "CqedParams: non-finite rate");
  require(g >= 0 && kappa >= 0 && gamma >= 0 && gamma_star >= 0 && pump >= 0,
          "CqedParams: negative rate");
}

double CqedParams::exchange_rate() const {
  const double G = total_decoherence();
  if (g == 0.0) return 0.0;
  require(G > 0.0, "CqedParams: exchange rate undefined for Gamma = 0 with g > 0");
  return 4.0 * g * g * G / (G * G + 4.0 * detuning * detuning);
}

double CqedParams::exchange_rate_cw() const {
  const double G = total_decoherence_cw();
  if (g == 0.0) return 0.0;
  require(G > 0.0, "CqedParams: exchange rate undefined for Gamma_cw = 0 with g > 0");
  return 4.0 * g * g * G / (G * G + 4.0 * detuning * detuning);
}

PopulationTrace solve_lindblad_numeric(const CqedParams& params,
                                       std::span<const double> t_grid, bool driven,
                                       const LindbladOptions& opts) {
  params.validate();
  require(!t_grid.empty() && t_grid.front() == 0.0,
          "solve_lindblad_numeric: t_grid must start at 0");
  for (std::size_t i = 1; i < t_grid.size(); ++i)
    require(t_grid[i] > t_grid[i - 1], "solve_lindblad_numeric: t_grid not strictly increasing");

  const double R = driven ? params.exchange_rate_cw() : params.exchange_rate();
  const double ga = params.gamma, k = params.kappa, pi = params.pump;

  const std::size_t dim = driven ? 4 : 2;
  // state ordering: undriven (aa, cc); driven (gg, aa, cc, bb)
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(dim, dim);
  if (!driven) {
    A << -(ga + R), R,
         R, -(k + R);
  } else {
    A << -pi,   ga,        k,          0.0,
          pi, -(ga + R),   R,          k,
          0.0,  R,       -(R + k + pi), ga,
          0.0,  0.0,       pi,        -(ga + k);
  }

  Eigen::VectorXd x0 = Eigen::VectorXd::Zero(dim);
  x0[0] = 1.0;  // driven: ground state; undriven: emitter excited

  PopulationTrace out;
  out.driven = driven;
  out.times.assign(t_grid.begin(), t_grid.end());
  auto record = [&](const Eigen::VectorXd& s) {
    if (driven) {
      out.rho_gg.push_back(s[0]);
      out.rho_aa.push_back(s[1]);
      out.rho_cc.push_back(s[2]);
      out.rho_bb.push_back(s[3]);
    } else {
      out.rho_aa.push_back(s[0]);
      out.rho_cc.push_back(s[1]);
    }
  };
  record(x0);
  if (t_grid.size() == 1) return out;

  RosenbrockIntegrator stepper(A, x0, opts);
  for (std::size_t i = 1; i < t_grid.size(); ++i) {
    stepper.advance_to(t_grid[i]);
    record(stepper.state());
  }
  return out;
}

std::pair<double, double> populations_analytic(const CqedParams& params, double t) {
  params.validate();
  require(t >= 0.0, "populations_analytic: t must be >= 0");
  const double R = params.exchange_rate();
  const double ga = params.gamma, k = params.kappa;
  const double d = ga - k;
  const double alpha = std::hypot(2.0 * R, d);
  const double lam_mid = 0.5 * (2.0 * R + ga + k);  // decay midpoint
  const double x = 0.5 * alpha * t;

  if (x < 20.0) {
    // factored form, finite for alpha -> 0 via the sinhc series limit
    const double e = std::exp(-lam_mid * t);
    const double sc = sinhc(x);
    const double rho_aa = e * (std::cosh(x) - 0.5 * d * t * sc);
    const double rho_cc = e * R * t * sc;
    return {std::max(0.0, rho_aa), std::max(0.0, rho_cc)};
  }
  // large separation: split into slow/fast exponentials (both exponents <= 0)
  const double ls = lam_mid - 0.5 * alpha;
  const double lf = lam_mid + 0.5 * alpha;
  const double es = std::exp(-ls * t), ef = std::exp(-lf * t);
  const double rho_aa = ((alpha - d) * es + (alpha + d) * ef) / (2.0 * alpha);
  const double rho_cc = R * (es - ef) / alpha;
  return {std::max(0.0, rho_aa), std::max(0.0, rho_cc)};
}

std::pair<double, double> emission_probabilities(const CqedParams& params) {
  params.validate();
  const double R = params.exchange_rate();
  const double ga = params.gamma, k = params.kappa;
  const double denom = ga * k + R * (ga + k);
  require(denom > 0.0, "emission_probabilities: undefined partition (gamma and R both zero)");
  const double p_a = ga * (R + k) / denom;
  const double p_c = k * R / denom;
  return {p_a, p_c};
}

double cavity_decay_rate(const CqedParams& params) {
  params.validate();
  require(params.kappa > 0.0, "cavity_decay_rate: kappa must be positive");
  const double R = params.exchange_rate();
  if (R == 0.0) return 0.0;
  return R * params.kappa / (R + params.kappa);
}

double lifetime_reduction(const CqedParams& params, double tau_bare) {
  require(tau_bare > 0.0, "lifetime_reduction: tau_bare must be positive");
  CqedParams p = params;
  p.gamma = 1.0 / tau_bare;
  return 1.0 + cavity_decay_rate(p) / p.gamma;
}

std::pair<double, double> cooperativities(const CqedParams& params) {
  params.validate();
  require(params.kappa > 0.0 && params.gamma > 0.0,
          "cooperativities: kappa and gamma must be positive");
  require(params.gamma + params.gamma_star > 0.0,
          "cooperativities: gamma + gamma_star must be positive");
  const double fourg2 = 4.0 * params.g * params.g;
  const double c_inc = fourg2 / (params.kappa * params.gamma);
  const double c = fourg2 / (params.kappa * (params.gamma + params.gamma_star));
  return {c_inc, c};
}

SteadyState driven_steady_state(const CqedParams& params) {
  params.validate();
  require(params.g + params.kappa + params.gamma + params.gamma_star + params.pump > 0.0,
          "driven_steady_state: all rates zero");
  const double R = params.exchange_rate_cw();
  const double ga = params.gamma, k = params.kappa, pi = params.pump;
  Eigen::Matrix4d M;
  M << -pi,   ga,        k,           0.0,
        pi, -(ga + R),   R,           k,
        0.0,  R,       -(R + k + pi), ga,
        0.0,  0.0,       pi,         -(ga + k);
  Eigen::Matrix4d A = M;
  A.row(3) = Eigen::RowVector4d::Ones();  // replace one balance row with trace
  const Eigen::Vector4d b(0.0, 0.0, 0.0, 1.0);
  Eigen::FullPivLU<Eigen::Matrix4d> lu(A);
  if (!lu.isInvertible())
    throw std::invalid_argument("driven_steady_state: degenerate rate matrix");
  const Eigen::Vector4d p = lu.solve(b);
  SteadyState out;
  out.rho_gg = p[0];
  out.rho_aa = p[1];
  out.rho_cc = p[2];
  out.rho_bb = p[3];
  out.n_expect = out.rho_cc + out.rho_bb;
  return out;
}

CwLine cw_linewidth_amplitude(const CqedParams& params) {
  params.validate();
  require(params.kappa > 0.0, "cw_linewidth_amplitude: kappa must be positive");
  require(params.gamma + params.pump > 0.0,
          "cw_linewidth_amplitude: gamma + pump must be positive");
  const double g2 = params.g * params.g;
  const double ga = params.gamma, k = params.kappa, pi = params.pump;
  const double gcw = params.total_decoherence_cw();
  CwLine out;
  out.delta_cw = std::sqrt(gcw * (gcw + 4.0 * g2 * (ga + pi + k) / (k * (ga + pi))));
  out.a_cw = 4.0 * pi * g2 * k / (k * (ga + pi) * gcw + 4.0 * g2 * (ga + pi + k));
  return out;
}

SaturationRate saturation_pump_rate(const CqedParams& params) {
  params.validate();
  require(params.kappa > 0.0, "saturation_pump_rate: kappa must be positive");
  const double g2 = params.g * params.g;
  const double ga = params.gamma, k = params.kappa, gs = params.gamma_star;
  const double denom = 4.0 * g2 + k * (2.0 * ga + gs + k);
  require(denom > 0.0, "saturation_pump_rate: zero denominator");
  SaturationRate out;
  out.exact = ga + (4.0 * g2 - ga * ga) * k / denom;
  const double G = params.total_decoherence();
  out.approx = ga + (g2 > 0.0 ? 4.0 * g2 * k / (4.0 * g2 + k * G) : 0.0);
  return out;
}

}  // namespace cavqed
