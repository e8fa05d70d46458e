#pragma once

#include "guidedql/guide.hpp"
#include "guidedql/quasi_family.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace guidedql {

//! Epanechnikov kernel 0.75 (1 - z^2) on [-1, 1].
inline double
epanechnikov(double z) noexcept
{
  return (z > -1.0 && z < 1.0) ? 0.75 * (1.0 - z * z) : 0.0;
}

enum class FitMode
{
  Vanilla,
  Unified,
};

struct LocalFitSpec
{
  int p = 1;
  double h = 1.0;
  double gamma = 0.0;
  FitMode mode = FitMode::Unified;

  static LocalFitSpec vanilla(int p, double h)
  {
    return { p, h, 0.0, FitMode::Vanilla };
  }
  static LocalFitSpec unified(int p, double h, double gamma)
  {
    return { p, h, gamma, FitMode::Unified };
  }
  void validate() const;
};

struct LocalFitOptions
{
  int max_iterations = 100;
  int max_halvings = 30;
  double abs_tol = 1e-10;
  double rel_tol = 1e-8;
  double jitter = 1e-12;
};

struct LocalFitResult
{
  double x0 = 0.0;
  std::vector<double> beta;
  double eta_hat = 0.0;
  int iterations = 0;
  bool converged = false;
  double objective = 0.0;
  //! Hessian of the local objective at beta_hat (beta coordinates).
  Eigen::MatrixXd hessian;
  std::size_t effective_n = 0;
};

struct DerivativeEstimates
{
  std::vector<double> values;
};

//! The pieces of the local objective that do not depend on beta.
//!
//! The working linear predictor of observation i is
//! eta_i(beta) = offset_i + scale_i * X_i^T beta, with
//! offset_i = eta(X_i) - eta(x0) * scale_i and
//! scale_i = (eta(X_i) / eta(x0))^gamma. Vanilla fits use offset 0, scale 1.
struct LocalDesign
{
  double x0 = 0.0;
  double h = 1.0;
  int p = 0;
  std::vector<std::size_t> index;
  std::vector<double> dx;
  std::vector<double> weight; // K_h(X_i - x0)
  std::vector<double> offset;
  std::vector<double> scale;
  std::vector<double> y;
  double guide_at_x0 = 1.0;
};

struct LocalObjective
{
  double value = 0.0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd hessian;
};

//! (1, x - x0, ..., (x - x0)^p).
std::vector<double> design_vector(double x, double x0, int p);

//! (eta(x) / eta(x0))^gamma with |.|^gamma for negative ratios and
//! non-integer gamma.
double guide_ratio_power(double ratio, double gamma);

//! Collects the observations inside the kernel window. Throws
//! SparseRegionError and GuideZeroError as fit_local does.
LocalDesign build_local_design(const Dataset& data,
                               const GuideFit& guide,
                               const LocalFitSpec& spec,
                               double x0);

//! Local quasi-likelihood, gradient and Hessian in beta coordinates.
LocalObjective evaluate_local(const LocalDesign& design,
                              const QuasiFamily& fam,
                              std::span<const double> beta);

//! Maximises the locally weighted quasi-likelihood at x0.
//!
//! Vanilla mode maximises sum_i Q(g^{-1}(X_i^T beta), Y_i) K_h(X_i - x0);
//! unified mode replaces the linear predictor by
//! eta(X_i) + (X_i^T beta - eta(x0)) (eta(X_i) / eta(x0))^gamma.
//! In both cases beta_0 estimates eta_0(x0).
LocalFitResult fit_local(const Dataset& data,
                         const QuasiFamily& fam,
                         const GuideFit& guide,
                         const LocalFitSpec& spec,
                         double x0,
                         const LocalFitOptions& opts = {});

//! Newton solve on a prepared design.
LocalFitResult fit_local_design(const LocalDesign& design,
                                const QuasiFamily& fam,
                                FitMode mode,
                                const LocalFitOptions& opts = {});

enum class PointStatus
{
  Ok,
  RetriedWithGammaZero,
  SparseRegion,
  GuideZero,
  NoConvergence,
  Failed,
};

struct CurvePoint
{
  double x = 0.0;
  PointStatus status = PointStatus::Failed;
  std::optional<LocalFitResult> fit;
  std::string message;

  bool ok() const noexcept { return fit.has_value(); }
};

struct CurveOptions
{
  LocalFitOptions fit;
  //! Retry guide-zero points with gamma = 0.
  bool retry_gamma_zero = true;
  unsigned threads = 1;
};

//! Independent local fits at every grid point, in grid order.
//!
//! Per-point failures are recorded in the returned entries; EstimationError
//! is thrown only if every point fails.
std::vector<CurvePoint> estimate_curve(const Dataset& data,
                                       const QuasiFamily& fam,
                                       const GuideFit& guide,
                                       const LocalFitSpec& spec,
                                       std::span<const double> grid,
                                       const CurveOptions& opts = {});

//! Lower-triangular L mapping coefficient errors to derivative errors.
Eigen::MatrixXd derivative_transform(const GuideFit& guide,
                                     double x0,
                                     double gamma,
                                     int p);

//! Estimates of eta_0^{(j)}(x0), j = 0..p, from the local coefficients.
DerivativeEstimates derivative_estimates(const LocalFitResult& res,
                                         const GuideFit& guide,
                                         double gamma);

//! n equally spaced points on [lo, hi] (inclusive).
std::vector<double> uniform_grid(double lo, double hi, std::size_t n);

} // namespace guidedql
