#pragma once

#include "guidedql/guide.hpp"
#include "guidedql/local_fit.hpp"
#include "guidedql/quasi_family.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace guidedql {

//! Reports scale B^2, V and MSE by this factor in their "scaled" fields.
inline constexpr double kTableScale = 1e4;

enum class ExampleKind
{
  Poisson71,
  Bernoulli72,
  Custom,
};

//! A synthetic design: X uniform on [x_lo, x_hi], Y | X = x drawn from the
//! family with linear predictor eta0(x).
struct ExampleSpec
{
  ExampleKind kind = ExampleKind::Custom;
  std::string name;
  QuasiFamily fam;
  std::function<double(double)> eta0;
  double x_lo = 0.0;
  double x_hi = 1.0;
  std::size_t n = 100;
  std::uint64_t seed = 0;

  //! eta0(x) = 3 sin(pi x / 4 - pi / 2) + 6, X ~ U[-2, 2], Poisson.
  static ExampleSpec poisson71(std::size_t n = 100, std::uint64_t seed = 0);
  //! eta0(x) = 2 sin(pi x), X ~ U[-1, 1], Bernoulli with logit link.
  static ExampleSpec bernoulli72(std::size_t n = 500, std::uint64_t seed = 0);
  static ExampleSpec custom(std::string name,
                            QuasiFamily fam,
                            std::function<double(double)> eta0,
                            double x_lo,
                            double x_hi,
                            std::size_t n,
                            std::uint64_t seed);
  //! "poisson71" or "bernoulli72"; throws ParseError otherwise.
  static ExampleSpec from_id(std::string_view id);
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

//! Seed for item `index` of stream `stream` under a master seed.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index) noexcept;

//! n draws from the example, sorted by x. Deterministic in spec.seed.
Dataset generate_example(const ExampleSpec& spec);

enum class HPolicy
{
  Fixed,
  //! Median of the selector over the tuning samples.
  Selected,
  //! The bandwidth selected for the vanilla estimator.
  SharedFromVanilla,
};

struct EstimatorSpec
{
  std::string label;
  FitMode mode = FitMode::Vanilla;
  GuideSpec guide;
  double gamma = 0.0;
  HPolicy policy = HPolicy::Selected;
  double h = 0.0;

  static EstimatorSpec vanilla();
  static EstimatorSpec unified(GuideSpec guide, double gamma);
  static EstimatorSpec additive(GuideSpec guide) { return unified(guide, 0.0); }
  static EstimatorSpec multiplicative(GuideSpec guide) { return unified(guide, 1.0); }

  //! "vanilla", "additive", "multiplicative" or "unified:<gamma>".
  static EstimatorSpec parse(std::string_view method, const GuideSpec& guide);
};

struct SimulationConfig
{
  ExampleSpec example;
  std::vector<EstimatorSpec> estimators;
  std::size_t R = 200;
  std::size_t J = 100;
  int p = 1;
  int a = 2;
  std::size_t tuning_samples = 10;
  //! Candidate bandwidths; empty means default_h_grid over the support.
  std::vector<double> h_grid;
  unsigned threads = 1;
};

struct MonteCarloReport
{
  std::string label;
  std::string guide;
  double gamma = 0.0;
  double h = 0.0;
  std::vector<double> tuning_h;
  std::size_t R = 0;
  std::size_t J = 0;
  std::vector<double> grid;
  std::vector<double> truth;
  std::vector<double> bias;
  std::vector<double> variance;
  std::vector<double> mse;
  double B2 = 0.0;
  double V = 0.0;
  double MSE = 0.0;
  std::size_t replications_used = 0;
  std::size_t failed_replications = 0;
  std::size_t failed_points = 0;
  //! More than 10% of replications had a failure.
  bool flagged = false;
};

//! B_j, S_j, MSE_j = B_j^2 + S_j and their means over j for an R x J matrix.
MonteCarloReport metrics_from_estimates(const std::vector<std::vector<double>>& curves,
                                        std::span<const double> truth);

//! Selected bandwidth of one estimator on each tuning sample and their median.
struct TunedBandwidth
{
  std::vector<double> per_sample;
  double median = 0.0;
};

TunedBandwidth tune_bandwidth(const SimulationConfig& config, const EstimatorSpec& est);

//! Runs every estimator on R replications; one report per estimator.
std::vector<MonteCarloReport> run_monte_carlo(const SimulationConfig& config);

//! Per-gridpoint CSV: method,j,x,truth,bias,variance,mse.
std::string reports_to_csv(std::span<const MonteCarloReport> reports);

//! Aggregates as JSON, with raw and kTableScale-scaled B^2, V, MSE.
std::string reports_to_json(std::span<const MonteCarloReport> reports,
                            const SimulationConfig& config);

} // namespace guidedql
