#pragma once

#include "guidedql/guide.hpp"
#include "guidedql/local_fit.hpp"
#include "guidedql/quasi_family.hpp"

#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace guidedql {

//! n geometrically spaced points from lo to hi (inclusive).
std::vector<double> geometric_grid(double lo, double hi, std::size_t n);

//! 20 geometric points from 0.05 (hi - lo) to (hi - lo).
std::vector<double> default_h_grid(double lo, double hi);

//! 0, 0.1, ..., 1, 1.2, 1.4, ..., 5.
std::vector<double> standard_gamma_grid();

//! "lo:hi" clips the standard grid, "lo:hi:count" is uniform, "a,b,c" is
//! explicit. Throws ParseError.
std::vector<double> parse_gamma_grid(std::string_view text);

//! A local fit configuration scored by cross-validation. Unified models refit
//! the guide on every training fold.
struct CvModel
{
  FitMode mode = FitMode::Vanilla;
  GuideSpec guide;
  double gamma = 0.0;
  int p = 1;
};

struct CvOptions
{
  int folds = 5;
  LocalFitOptions fit;
  GuideFitOptions guide;
  unsigned threads = 1;
};

//! K-fold cross-validated quasi-deviance for each h. Folds are i mod K on
//! the x-sorted data; a failed held-out fit makes that h infinite.
std::vector<double> cv_deviance(const Dataset& data,
                                const QuasiFamily& fam,
                                const CvModel& model,
                                std::span<const double> h_grid,
                                const CvOptions& opts = {});

//! CV-deviance minimiser over a deduplicated h grid.
//!
//! Throws SelectionError if n < p + 2 or every candidate fails.
double pilot_bandwidth(const Dataset& data,
                       const QuasiFamily& fam,
                       const CvModel& model,
                       std::span<const double> h_grid,
                       const CvOptions& opts = {});

//! A nonparametric estimate of eta_0 tabulated on a grid.
struct PilotCurve
{
  std::vector<double> x;
  std::vector<double> eta;
};

//! Vanilla local linear fit on the grid; failed points are dropped.
PilotCurve pilot_curve(const Dataset& data,
                       const QuasiFamily& fam,
                       std::span<const double> grid,
                       double h,
                       unsigned threads = 1);

//! Plug-in estimate of the integrated squared guide-scaled curvature of the
//! correction c = (eta_hat - eta_alpha) / eta_alpha^gamma.
//!
//! c'' comes from local cubic least-squares fits to the tabulated c with
//! bandwidth smooth_h; the integral is a trapezoid sum over the pilot grid.
double theta_gamma_hat(const GuideFit& guide,
                       double gamma,
                       const PilotCurve& pilot,
                       double smooth_h,
                       const LocalFitOptions& opts = {});

enum class GammaMethod
{
  ThetaPlugin,
  Cv,
};

struct GammaSelectionOptions
{
  GammaMethod method = GammaMethod::ThetaPlugin;
  int p = 1;
  //! Candidate pilot / CV bandwidths; empty means default_h_grid of each sample.
  std::vector<double> h_grid;
  std::size_t grid_points = 100;
  //! Derivative smoother bandwidth as a multiple of the pilot bandwidth.
  double smooth_factor = 2.0;
  //! cv only: score the vanilla fit too.
  bool include_vanilla = true;
  CvOptions cv;
  unsigned threads = 1;
};

struct GammaSelection
{
  GammaMethod method = GammaMethod::ThetaPlugin;
  std::vector<double> grid;
  std::vector<GuideSpec> guides;
  //! score[g][j]: sum over samples of theta_hat (or of the minimal CV
  //! deviance) for guide g and grid[j]; +inf where a sample failed.
  std::vector<std::vector<double>> score;
  std::vector<double> chosen_per_guide;
  std::size_t chosen_guide = 0;
  double chosen_gamma = 0.0;
  //! cv only.
  double vanilla_score = std::numeric_limits<double>::infinity();
  bool vanilla_chosen = false;
};

//! Chooses gamma (and the guide) from auxiliary samples.
//!
//! Throws SelectionError if every configuration fails.
GammaSelection select_gamma(std::span<const Dataset> samples,
                            const QuasiFamily& fam,
                            std::span<const GuideSpec> guides,
                            std::span<const double> grid,
                            const GammaSelectionOptions& opts = {});

struct BiasVariance
{
  double bias = 0.0;
  double variance = 0.0;
};

//! Pre-asymptotic bias and variance of beta_0 at the design's x0.
//!
//! pilot_beta holds local coefficients of degree >= p + a at the same x0;
//! entries p+1..p+a give the approximation errors r_i. Throws
//! SingularHessianError.
BiasVariance estimate_bias_variance(const LocalDesign& design,
                                    const QuasiFamily& fam,
                                    const LocalFitResult& fit,
                                    std::span<const double> pilot_beta,
                                    int a);

struct BandwidthOptions
{
  int a = 2;
  //! Pilot CV grid; empty means default_h_grid over the data range.
  std::vector<double> pilot_h_grid;
  //! Skip the pilot CV and use this bandwidth when positive.
  double pilot_h = 0.0;
  CvOptions cv;
  LocalFitOptions fit;
  unsigned threads = 1;
};

struct BandwidthSelection
{
  std::vector<double> h_grid;
  std::vector<double> imse_hat;
  double chosen_h = 0.0;
  double pilot_h = 0.0;
  int a = 2;
  //! x points dropped because the pilot fit failed there.
  std::vector<double> skipped_x;
  //! (h, x) fits replaced by the worst finite MSE at that h.
  std::size_t penalized_points = 0;
};

//! argmin over h_grid of the trapezoid integral over x_grid of B^2 + V.
//!
//! spec.h is ignored. Throws SelectionError if no h yields a finite value.
BandwidthSelection select_bandwidth(const Dataset& data,
                                    const QuasiFamily& fam,
                                    const GuideFit& guide,
                                    const LocalFitSpec& spec,
                                    std::span<const double> x_grid,
                                    std::span<const double> h_grid,
                                    const BandwidthOptions& opts = {});

//! Trapezoid rule over (x, f) pairs.
double trapezoid(std::span<const double> x, std::span<const double> f);

} // namespace guidedql
