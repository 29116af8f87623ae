#include "cavqed/fit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "cavqed/rng.hpp"

namespace cavqed {

namespace {

int index_of(const std::vector<std::string>& names, std::string_view name) {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<int>(i);
  throw std::out_of_range("unknown fit parameter: " + std::string(name));
}

Eigen::VectorXd clamp_to_box(Eigen::VectorXd p, const Eigen::VectorXd& lo,
                             const Eigen::VectorXd& hi) {
  for (int i = 0; i < p.size(); ++i) {
    if (lo.size() == p.size() && std::isfinite(lo[i])) p[i] = std::max(p[i], lo[i]);
    if (hi.size() == p.size() && std::isfinite(hi[i])) p[i] = std::min(p[i], hi[i]);
  }
  return p;
}

}  // namespace

double FitResult::value(std::string_view name) const {
  return params[index_of(names, name)];
}

double FitResult::error(std::string_view name) const {
  const int i = index_of(names, name);
  const double v = covariance(i, i);
  return v > 0.0 ? std::sqrt(v) : 0.0;
}

MeasuredValue FitResult::measured(std::string_view name) const {
  return {value(name), error(name)};
}

FitResult least_squares(const CurveModel& model, const Eigen::VectorXd& y,
                        const Eigen::VectorXd& weights, Eigen::VectorXd init,
                        std::vector<std::string> names, const Eigen::VectorXd& lower,
                        const Eigen::VectorXd& upper, const LeastSquaresOptions& opts) {
  const int n = static_cast<int>(y.size());
  const int np = static_cast<int>(init.size());
  if (weights.size() != n) throw std::invalid_argument("least_squares: weights/y size mismatch");
  if (!names.empty() && static_cast<int>(names.size()) != np)
    throw std::invalid_argument("least_squares: names/params size mismatch");
  if (n < np) throw std::invalid_argument("least_squares: fewer points than parameters");
  for (int i = 0; i < n; ++i)
    if (!std::isfinite(y[i]) || !std::isfinite(weights[i]) || weights[i] < 0.0)
      throw std::invalid_argument("least_squares: non-finite data or negative weight");
  if (lower.size() == np && upper.size() == np) {
    for (int i = 0; i < np; ++i)
      if (std::isfinite(lower[i]) && std::isfinite(upper[i]) && lower[i] > upper[i])
        throw std::invalid_argument("least_squares: inverted bounds");
  }

  Eigen::VectorXd p = clamp_to_box(std::move(init), lower, upper);
  const Eigen::VectorXd w_sqrt = weights.array().sqrt();

  auto chi2_of = [&](const Eigen::VectorXd& pp) {
    const Eigen::VectorXd r = (y - model(pp)).cwiseProduct(w_sqrt);
    return r.squaredNorm();
  };

  auto jacobian = [&](const Eigen::VectorXd& pp) {
    Eigen::MatrixXd J(n, np);
    for (int j = 0; j < np; ++j) {
      const double h = std::max(opts.fd_step_min, opts.fd_step_rel * std::abs(pp[j]));
      Eigen::VectorXd pl = pp, ph = pp;
      ph[j] += h;
      pl[j] -= h;
      J.col(j) = (model(ph) - model(pl)) / (2.0 * h);
    }
    return J;
  };

  double lambda = opts.lambda0;
  double chi2 = chi2_of(p);
  bool converged = false;
  int iter = 0;

  for (; iter < opts.max_iterations; ++iter) {
    const Eigen::MatrixXd J = jacobian(p);
    const Eigen::VectorXd r = (y - model(p)).cwiseProduct(w_sqrt);
    Eigen::MatrixXd Jw = J;
    for (int i = 0; i < n; ++i) Jw.row(i) *= w_sqrt[i];
    const Eigen::MatrixXd JtJ = Jw.transpose() * Jw;
    const Eigen::VectorXd g = Jw.transpose() * r;

    if (g.lpNorm<Eigen::Infinity>() < 1e-14 * std::max(1.0, chi2)) {
      converged = true;
      break;
    }

    bool accepted = false;
    for (int tries = 0; tries < 40; ++tries) {
      Eigen::MatrixXd A = JtJ;
      A.diagonal() += lambda * JtJ.diagonal().cwiseMax(1e-30);
      const Eigen::VectorXd step = A.ldlt().solve(g);
      if (!step.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      const Eigen::VectorXd p_new = clamp_to_box(p + step, lower, upper);
      const double chi2_new = chi2_of(p_new);
      if (std::isfinite(chi2_new) && chi2_new <= chi2) {
        const double rel_dchi = (chi2 - chi2_new) / std::max(chi2, 1e-300);
        const double rel_step = (p_new - p).norm() / std::max(p.norm(), 1e-300);
        p = p_new;
        chi2 = chi2_new;
        lambda = std::max(lambda * 0.3, 1e-12);
        accepted = true;
        if (rel_dchi < opts.ftol || rel_step < opts.xtol) converged = true;
        break;
      }
      lambda *= 10.0;
      if (lambda > 1e14) break;
    }
    if (!accepted || converged) {
      converged = converged || accepted;
      if (!accepted && lambda > 1e14) converged = true;  // stalled at a minimum
      break;
    }
  }
  if (iter == opts.max_iterations)
    throw std::runtime_error("least_squares: iteration cap reached without convergence");

  // undamped Gauss-Newton polish; exact for problems linear in the parameters
  for (int polish = 0; polish < 3; ++polish) {
    Eigen::MatrixXd J = jacobian(p);
    const Eigen::VectorXd r = (y - model(p)).cwiseProduct(w_sqrt);
    for (int i = 0; i < n; ++i) J.row(i) *= w_sqrt[i];
    const Eigen::VectorXd step = (J.transpose() * J).ldlt().solve(J.transpose() * r);
    if (!step.allFinite()) break;
    const Eigen::VectorXd p_new = clamp_to_box(p + step, lower, upper);
    const double chi2_new = chi2_of(p_new);
    if (!std::isfinite(chi2_new) || chi2_new > chi2) break;
    const bool tiny = (p_new - p).norm() <= 1e-14 * std::max(p.norm(), 1e-300);
    p = p_new;
    chi2 = chi2_new;
    if (tiny) break;
  }

  FitResult out;
  out.names = std::move(names);
  out.params = p;
  out.n_points = n;
  out.n_free = np;
  out.n_iterations = iter;
  out.converged = converged;
  out.chi2 = chi2;
  const int dof = std::max(1, n - np);
  out.chi2_reduced = chi2 / dof;

  Eigen::MatrixXd J = jacobian(p);
  for (int i = 0; i < n; ++i) J.row(i) *= w_sqrt[i];
  const Eigen::MatrixXd JtJ = J.transpose() * J;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(JtJ);
  if (lu.isInvertible()) {
    out.covariance = lu.inverse();
  } else {
    // singular Jacobian: report a pseudo-inverse so errors stay finite
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(JtJ, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    Eigen::VectorXd inv = sv;
    for (int i = 0; i < sv.size(); ++i)
      inv[i] = sv[i] > 1e-12 * sv[0] ? 1.0 / sv[i] : 0.0;
    out.covariance = svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
  }
  return out;
}

FitResult least_squares(const std::function<double(double, std::span<const double>)>& f,
                        std::span<const double> x, std::span<const double> y,
                        std::span<const double> weights, std::span<const double> init,
                        std::vector<std::string> names, const LeastSquaresOptions& opts) {
  if (x.size() != y.size() || x.size() != weights.size())
    throw std::invalid_argument("least_squares: x/y/weights size mismatch");
  std::vector<double> xv(x.begin(), x.end());
  CurveModel model = [f, xv](const Eigen::VectorXd& p) {
    Eigen::VectorXd out(xv.size());
    std::span<const double> ps(p.data(), static_cast<std::size_t>(p.size()));
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i], ps);
    return out;
  };
  Eigen::VectorXd yv = Eigen::Map<const Eigen::VectorXd>(y.data(), y.size());
  Eigen::VectorXd wv = Eigen::Map<const Eigen::VectorXd>(weights.data(), weights.size());
  Eigen::VectorXd pv = Eigen::Map<const Eigen::VectorXd>(init.data(), init.size());
  return least_squares(model, yv, wv, pv, std::move(names), {}, {}, opts);
}

FitResult odr_linear(std::span<const MeasuredValue> x, std::span<const MeasuredValue> y) {
  const std::size_t n = x.size();
  if (n != y.size()) throw std::invalid_argument("odr_linear: size mismatch");
  if (n < 3) throw std::invalid_argument("odr_linear: need at least 3 points");
  double xmin = x[0].value, xmax = x[0].value;
  for (const auto& xv : x) {
    xmin = std::min(xmin, xv.value);
    xmax = std::max(xmax, xv.value);
  }
  if (xmax == xmin) throw std::invalid_argument("odr_linear: all x equal");

  // chi2(b) with the intercept profiled out analytically:
  // chi2 = sum (y_i - a - b x_i)^2 / (sy_i^2 + b^2 sx_i^2)
  const double sy_floor = [&] {
    double m = 0.0;
    for (const auto& v : y) m = std::max(m, std::abs(v.value));
    return std::max(1e-12 * std::max(m, 1.0), 1e-300);
  }();

  auto chi2_profile = [&](double b, double* a_out = nullptr) {
    double sw = 0.0, swx = 0.0, swy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double var = std::max(y[i].sigma * y[i].sigma + b * b * x[i].sigma * x[i].sigma,
                                  sy_floor * sy_floor);
      const double w = 1.0 / var;
      sw += w;
      swx += w * x[i].value;
      swy += w * y[i].value;
    }
    const double a = (swy - b * swx) / sw;
    double c = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double var = std::max(y[i].sigma * y[i].sigma + b * b * x[i].sigma * x[i].sigma,
                                  sy_floor * sy_floor);
      const double r = y[i].value - a - b * x[i].value;
      c += r * r / var;
    }
    if (a_out) *a_out = a;
    return c;
  };

  // initial slope from ordinary regression
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i].value;
    my += y[i].value;
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i].value - mx) * (x[i].value - mx);
    sxy += (x[i].value - mx) * (y[i].value - my);
  }
  double b = sxy / sxx;

  // golden-section bracket around the OLS slope, then parabolic refinement
  const double span0 = std::max(std::abs(b), 1e-3 * std::abs(my / (xmax - xmin)) + 1e-12);
  double lo = b - 8.0 * span0 - 1.0, hi = b + 8.0 * span0 + 1.0;
  const double gr = 0.61803398874989484;
  double m1 = hi - gr * (hi - lo), m2 = lo + gr * (hi - lo);
  double f1 = chi2_profile(m1), f2 = chi2_profile(m2);
  for (int it = 0; it < 200 && hi - lo > 1e-13 * (1.0 + std::abs(b)); ++it) {
    if (f1 < f2) {
      hi = m2;
      m2 = m1;
      f2 = f1;
      m1 = hi - gr * (hi - lo);
      f1 = chi2_profile(m1);
    } else {
      lo = m1;
      m1 = m2;
      f1 = f2;
      m2 = lo + gr * (hi - lo);
      f2 = chi2_profile(m2);
    }
  }
  b = 0.5 * (lo + hi);
  double a = 0.0;
  const double chi2 = chi2_profile(b, &a);

  // covariance from the numerical Hessian of chi2/2 in (a, b)
  auto chi2_ab = [&](double aa, double bb) {
    double c = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double var = std::max(y[i].sigma * y[i].sigma + bb * bb * x[i].sigma * x[i].sigma,
                                  sy_floor * sy_floor);
      const double r = y[i].value - aa - bb * x[i].value;
      c += r * r / var;
    }
    return c;
  };
  const double ha = std::max(1e-7 * (std::abs(a) + 1.0), 1e-10);
  const double hb = std::max(1e-7 * (std::abs(b) + 1.0), 1e-10);
  const double f0 = chi2_ab(a, b);
  const double faa = (chi2_ab(a + ha, b) - 2 * f0 + chi2_ab(a - ha, b)) / (ha * ha);
  const double fbb = (chi2_ab(a, b + hb) - 2 * f0 + chi2_ab(a, b - hb)) / (hb * hb);
  const double fab = (chi2_ab(a + ha, b + hb) - chi2_ab(a + ha, b - hb) -
                      chi2_ab(a - ha, b + hb) + chi2_ab(a - ha, b - hb)) /
                     (4 * ha * hb);
  Eigen::Matrix2d H;
  H << 0.5 * faa, 0.5 * fab, 0.5 * fab, 0.5 * fbb;

  FitResult out;
  out.names = {"intercept", "slope"};
  out.params = Eigen::Vector2d(a, b);
  out.covariance = H.inverse();
  out.chi2 = chi2;
  out.n_points = static_cast<int>(n);
  out.n_free = 2;
  out.chi2_reduced = chi2 / std::max<int>(1, static_cast<int>(n) - 2);
  out.converged = true;
  return out;
}

McEnsemble monte_carlo_propagate(const McFitSpec& spec,
                                 const std::map<std::string, MeasuredValue>& fixed_inputs,
                                 int n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("monte_carlo_propagate: n must be >= 1");
  McEnsemble out;
  out.n_requested = n;
  std::vector<std::string> failures;
  for (int k = 0; k < n; ++k) {
    CounterRng rng(seed, static_cast<std::uint64_t>(k));
    FixedInputMap drawn;
    for (const auto& [key, mv] : fixed_inputs)
      drawn[key] = (n == 1 || mv.sigma == 0.0) ? mv.value : rng.normal(mv.value, mv.sigma);
    try {
      FitResult r = spec(drawn);
      if (!r.converged) throw std::runtime_error("member fit did not converge");
      if (out.members.empty()) out.names = r.names;
      out.members.push_back(std::move(r));
    } catch (const std::exception& e) {
      ++out.n_failed;
      if (failures.size() < 5) failures.emplace_back(e.what());
    }
  }
  if (out.n_failed * 5 > n) {
    std::ostringstream ss;
    ss << "monte_carlo_propagate: " << out.n_failed << "/" << n << " member fits failed;";
    for (const auto& f : failures) ss << " [" << f << "]";
    throw std::runtime_error(ss.str());
  }
  const int np = static_cast<int>(out.names.size());
  const int m = static_cast<int>(out.members.size());
  out.mean = Eigen::VectorXd::Zero(np);
  out.stddev = Eigen::VectorXd::Zero(np);
  out.percentile_16_84 = Eigen::MatrixXd::Zero(np, 2);
  for (const auto& r : out.members) out.mean += r.params;
  out.mean /= m;
  if (m > 1) {
    for (const auto& r : out.members)
      out.stddev += (r.params - out.mean).array().square().matrix();
    out.stddev = (out.stddev / (m - 1)).array().sqrt();
  }
  for (int j = 0; j < np; ++j) {
    std::vector<double> vals(m);
    for (int i = 0; i < m; ++i) vals[i] = out.members[i].params[j];
    std::sort(vals.begin(), vals.end());
    auto pct = [&](double q) {
      const double pos = q * (m - 1);
      const int i0 = static_cast<int>(pos);
      const int i1 = std::min(i0 + 1, m - 1);
      return vals[i0] + (pos - i0) * (vals[i1] - vals[i0]);
    };
    out.percentile_16_84(j, 0) = pct(0.16);
    out.percentile_16_84(j, 1) = pct(0.84);
  }
  return out;
}

MeasuredValue McEnsemble::measured(std::string_view name) const {
  const int i = index_of(names, name);
  return {mean[i], stddev[i]};
}

std::vector<bool> sigma_clip(std::span<const double> y, std::span<const double> y_fit,
                             double threshold) {
  if (y.size() != y_fit.size()) throw std::invalid_argument("sigma_clip: size mismatch");
  const std::size_t n = y.size();
  if (n == 0) throw std::invalid_argument("sigma_clip: empty data");
  std::vector<double> r(n);
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    r[i] = y[i] - y_fit[i];
    mean += r[i];
  }
  mean /= n;
  double var = 0.0;
  for (double ri : r) var += (ri - mean) * (ri - mean);
  const double sigma = std::sqrt(var / std::max<std::size_t>(1, n - 1));
  std::vector<bool> keep(n, true);
  if (!std::isfinite(threshold)) return keep;  // infinite threshold keeps all
  std::size_t kept = 0;
  for (std::size_t i = 0; i < n; ++i) {
    keep[i] = std::abs(r[i]) <= threshold * sigma;
    kept += keep[i];
  }
  if (kept == 0) throw std::runtime_error("sigma_clip: all points clipped");
  return keep;
}

FitResult fit_saturation(std::span<const double> powers, std::span<const double> intensities,
                         double c_bg, double c_dark, std::span<const double> weights) {
  const std::size_t n = powers.size();
  if (n != intensities.size()) throw std::invalid_argument("fit_saturation: size mismatch");
  if (n < 3) throw std::invalid_argument("fit_saturation: need at least 3 points");
  std::vector<double> w(weights.begin(), weights.end());
  if (w.empty()) w.assign(n, 1.0);

  double pmax = 0.0, imax = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    pmax = std::max(pmax, powers[i]);
    imax = std::max(imax, intensities[i] - c_bg * powers[i] - c_dark);
  }
  std::vector<double> init = {std::max(imax, 1.0), 0.5 * pmax};

  auto f = [c_bg, c_dark](double p, std::span<const double> q) {
    return q[0] * p / (p + q[1]) + c_bg * p + c_dark;
  };
  FitResult r = least_squares(f, powers, intensities, w, init, {"i_inf", "p_sat"});
  if (r.value("p_sat") > 50.0 * pmax)
    throw std::runtime_error("fit_saturation: data unsaturated (p_sat bound hit)");
  return r;
}

}  // namespace cavqed
