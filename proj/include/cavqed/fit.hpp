#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cavqed {

struct MeasuredValue {
  double value = 0.0;
  double sigma = 0.0;
};

struct FitResult {
  std::vector<std::string> names;
  Eigen::VectorXd params;
  Eigen::MatrixXd covariance;
  double chi2 = 0.0;
  double chi2_reduced = 0.0;
  int n_points = 0;
  int n_free = 0;
  int n_iterations = 0;
  bool converged = false;

  double value(std::string_view name) const;
  double error(std::string_view name) const;  // sqrt of covariance diagonal
  MeasuredValue measured(std::string_view name) const;
};

// Model evaluated over the whole curve at once; x is baked into the closure.
// Needed because several models (IRF convolutions) couple all grid points.
using CurveModel = std::function<Eigen::VectorXd(const Eigen::VectorXd& params)>;

struct LeastSquaresOptions {
  int max_iterations = 200;
  double ftol = 1e-12;   // relative chi2 decrease
  double xtol = 1e-12;   // relative step size
  double fd_step_rel = 1e-6;
  double fd_step_min = 1e-8;
  double lambda0 = 1e-3;
};

// Trust-region Levenberg–Marquardt with central-difference Jacobian.
// weights are 1/sigma_i^2; bounds are optional boxes (NaN = unbounded).
FitResult least_squares(const CurveModel& model, const Eigen::VectorXd& y,
                        const Eigen::VectorXd& weights, Eigen::VectorXd init,
                        std::vector<std::string> names,
                        const Eigen::VectorXd& lower = {},
                        const Eigen::VectorXd& upper = {},
                        const LeastSquaresOptions& opts = {});

// Pointwise convenience overload: y_i = f(x_i, p).
FitResult least_squares(const std::function<double(double, std::span<const double>)>& f,
                        std::span<const double> x, std::span<const double> y,
                        std::span<const double> weights, std::span<const double> init,
                        std::vector<std::string> names,
                        const LeastSquaresOptions& opts = {});

// Linear orthogonal-distance regression (errors on both axes). Reduces to
// ordinary least squares when all x sigmas are zero.
FitResult odr_linear(std::span<const MeasuredValue> x, std::span<const MeasuredValue> y);

struct McEnsemble {
  std::vector<FitResult> members;           // converged members only
  int n_requested = 0;
  int n_failed = 0;
  std::vector<std::string> names;
  Eigen::VectorXd mean;
  Eigen::VectorXd stddev;
  Eigen::MatrixXd percentile_16_84;         // n_params x 2 band

  MeasuredValue measured(std::string_view name) const;
};

using FixedInputMap = std::map<std::string, double>;
using McFitSpec = std::function<FitResult(const FixedInputMap& drawn_inputs)>;

// n independent fits with the fixed inputs drawn from their Gaussians.
// Member k draws from a counter-based stream keyed by (seed, k), so results
// do not depend on evaluation order. Throws if more than 20% of members fail.
McEnsemble monte_carlo_propagate(const McFitSpec& spec,
                                 const std::map<std::string, MeasuredValue>& fixed_inputs,
                                 int n, std::uint64_t seed);

// Single-pass clip: keep points with |residual| <= threshold * sigma_res,
// where sigma_res is the residual std over all points at the supplied fit.
std::vector<bool> sigma_clip(std::span<const double> y, std::span<const double> y_fit,
                             double threshold);

// I(P) = I_inf P/(P+P_sat) + c_bg P + c_dark with frozen backgrounds.
FitResult fit_saturation(std::span<const double> powers, std::span<const double> intensities,
                         double c_bg, double c_dark,
                         std::span<const double> weights = {});

}  // namespace cavqed
