// Test-only independent oracles. These deliberately avoid the library's own
// numerical paths: a different ODE method, brute-force quadratures, and
// closed-form regression formulas.
#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

namespace oracle {

// adaptive Cash-Karp RK45 for dx/dt = f(x)
template <std::size_t N>
std::array<double, N> integrate_rk45(const std::function<std::array<double, N>(
                                         const std::array<double, N>&)>& f,
                                     std::array<double, N> x, double t0, double t1,
                                     double rtol = 1e-11, double atol = 1e-14) {
  static constexpr double b21 = 1.0 / 5.0;
  static constexpr double b31 = 3.0 / 40.0, b32 = 9.0 / 40.0;
  static constexpr double b41 = 3.0 / 10.0, b42 = -9.0 / 10.0, b43 = 6.0 / 5.0;
  static constexpr double b51 = -11.0 / 54.0, b52 = 5.0 / 2.0, b53 = -70.0 / 27.0,
                          b54 = 35.0 / 27.0;
  static constexpr double b61 = 1631.0 / 55296.0, b62 = 175.0 / 512.0, b63 = 575.0 / 13824.0,
                          b64 = 44275.0 / 110592.0, b65 = 253.0 / 4096.0;
  static constexpr double c1 = 37.0 / 378.0, c3 = 250.0 / 621.0, c4 = 125.0 / 594.0,
                          c6 = 512.0 / 1771.0;
  static constexpr double d1 = c1 - 2825.0 / 27648.0, d3 = c3 - 18575.0 / 48384.0,
                          d4 = c4 - 13525.0 / 55296.0, d5 = -277.0 / 14336.0,
                          d6 = c6 - 0.25;

  auto axpy = [](std::array<double, N> base, double h,
                 std::initializer_list<std::pair<double, const std::array<double, N>*>> terms) {
    for (const auto& [coef, k] : terms)
      for (std::size_t i = 0; i < N; ++i) base[i] += h * coef * (*k)[i];
    return base;
  };

  double t = t0;
  double h = (t1 - t0) * 1e-6;
  std::size_t steps = 0;
  while (t < t1) {
    if (++steps > 80'000'000) throw std::runtime_error("oracle rk45: too many steps");
    h = std::min(h, t1 - t);
    const auto k1 = f(x);
    const auto k2 = f(axpy(x, h, {{b21, &k1}}));
    const auto k3 = f(axpy(x, h, {{b31, &k1}, {b32, &k2}}));
    const auto k4 = f(axpy(x, h, {{b41, &k1}, {b42, &k2}, {b43, &k3}}));
    const auto k5 = f(axpy(x, h, {{b51, &k1}, {b52, &k2}, {b53, &k3}, {b54, &k4}}));
    const auto k6 =
        f(axpy(x, h, {{b61, &k1}, {b62, &k2}, {b63, &k3}, {b64, &k4}, {b65, &k5}}));
    auto x5 = axpy(x, h, {{c1, &k1}, {c3, &k3}, {c4, &k4}, {c6, &k6}});
    double err = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      const double e =
          h * (d1 * k1[i] + d3 * k3[i] + d4 * k4[i] + d5 * k5[i] + d6 * k6[i]);
      const double sc = atol + rtol * std::max(std::abs(x[i]), std::abs(x5[i]));
      err = std::max(err, std::abs(e) / sc);
    }
    if (err <= 1.0) {
      t += h;
      x = x5;
      h *= std::min(5.0, 0.9 * std::pow(std::max(err, 1e-12), -0.2));
    } else {
      h *= std::max(0.1, 0.9 * std::pow(err, -0.25));
    }
  }
  return x;
}

// composite-Simpson quadrature on a callable
inline double simpson(const std::function<double(double)>& f, double a, double b, int n) {
  if (n % 2) ++n;
  const double h = (b - a) / n;
  double acc = f(a) + f(b);
  for (int i = 1; i < n; ++i) acc += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return acc * h / 3.0;
}

// Voigt density by direct numerical convolution of Gaussian and Lorentzian
inline double voigt_convolution(double x, double sigma, double fwhm_l, int n = 400001) {
  const double hwhm = 0.5 * fwhm_l;
  const double span = 60.0 * std::max(sigma, hwhm);
  auto integrand = [&](double u) {
    const double gauss =
        std::exp(-0.5 * u * u / (sigma * sigma)) / (sigma * std::sqrt(2.0 * M_PI));
    const double lor = hwhm / (M_PI * ((x - u) * (x - u) + hwhm * hwhm));
    return gauss * lor;
  };
  return simpson(integrand, -span, span, n);
}

// closed-form weighted linear regression (normal equations)
inline std::pair<double, double> linear_regression(std::span<const double> x,
                                                   std::span<const double> y,
                                                   std::span<const double> w) {
  double sw = 0, swx = 0, swy = 0, swxx = 0, swxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sw += w[i];
    swx += w[i] * x[i];
    swy += w[i] * y[i];
    swxx += w[i] * x[i] * x[i];
    swxy += w[i] * x[i] * y[i];
  }
  const double det = sw * swxx - swx * swx;
  const double slope = (sw * swxy - swx * swy) / det;
  const double intercept = (swxx * swy - swx * swxy) / det;
  return {slope, intercept};
}

}  // namespace oracle
