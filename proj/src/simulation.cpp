#include "guidedql/simulation.hpp"

#include "guidedql/csv.hpp"
#include "guidedql/errors.hpp"
#include "guidedql/parallel.hpp"
#include "guidedql/selection.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>

namespace guidedql {

namespace {

constexpr std::uint64_t kReplicationStream = 0;
constexpr std::uint64_t kTuningStream = 1;

double uniform01(std::mt19937_64& rng)
{
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

std::string default_label(const EstimatorSpec& e)
{
  if (e.mode == FitMode::Vanilla)
    return "vanilla";
  std::string kind;
  if (e.gamma == 0.0)
    kind = "additive";
  else if (e.gamma == 1.0)
    kind = "multiplicative";
  else
    kind = "unified:" + format_double(e.gamma);
  return kind + "[" + e.guide.to_string() + "]";
}

double median_of(std::vector<double> v)
{
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace

ExampleSpec
ExampleSpec::poisson71(std::size_t n, std::uint64_t seed)
{
  ExampleSpec s;
  s.kind = ExampleKind::Poisson71;
  s.name = "poisson71";
  s.fam = QuasiFamily(FamilyKind::PoissonLog);
  s.eta0 = [](double x) {
    return 3.0 * std::sin(std::numbers::pi * x / 4.0 - std::numbers::pi / 2.0) + 6.0;
  };
  s.x_lo = -2.0;
  s.x_hi = 2.0;
  s.n = n;
  s.seed = seed;
  return s;
}

ExampleSpec
ExampleSpec::bernoulli72(std::size_t n, std::uint64_t seed)
{
  ExampleSpec s;
  s.kind = ExampleKind::Bernoulli72;
  s.name = "bernoulli72";
  s.fam = QuasiFamily(FamilyKind::BernoulliLogit);
  s.eta0 = [](double x) { return 2.0 * std::sin(std::numbers::pi * x); };
  s.x_lo = -1.0;
  s.x_hi = 1.0;
  s.n = n;
  s.seed = seed;
  return s;
}

ExampleSpec
ExampleSpec::custom(std::string name,
                    QuasiFamily fam,
                    std::function<double(double)> eta0,
                    double x_lo,
                    double x_hi,
                    std::size_t n,
                    std::uint64_t seed)
{
  if (!(x_lo < x_hi))
    throw std::invalid_argument("ExampleSpec: need x_lo < x_hi");
  ExampleSpec s;
  s.kind = ExampleKind::Custom;
  s.name = std::move(name);
  s.fam = fam;
  s.eta0 = std::move(eta0);
  s.x_lo = x_lo;
  s.x_hi = x_hi;
  s.n = n;
  s.seed = seed;
  return s;
}

ExampleSpec
ExampleSpec::from_id(std::string_view id)
{
  if (id == "poisson71")
    return poisson71();
  if (id == "bernoulli72")
    return bernoulli72();
  throw ParseError("unknown example '" + std::string(id) +
                   "' (expected poisson71 or bernoulli72)");
}

std::uint64_t
splitmix64(std::uint64_t x) noexcept
{
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t
derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index) noexcept
{
  return splitmix64(splitmix64(master ^ splitmix64(stream)) + index);
}

Dataset
generate_example(const ExampleSpec& spec)
{
  if (spec.n < 1)
    throw std::invalid_argument("generate_example: n must be positive");
  if (!spec.eta0)
    throw std::invalid_argument("generate_example: eta0 is not set");
  std::mt19937_64 rng(splitmix64(spec.seed));
  Dataset d;
  d.x.resize(spec.n);
  d.y.resize(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    const double x = spec.x_lo + (spec.x_hi - spec.x_lo) * uniform01(rng);
    const double mu = spec.fam.inverse_link(spec.eta0(x));
    double y = 0.0;
    switch (spec.fam.kind()) {
      case FamilyKind::PoissonLog:
        y = static_cast<double>(std::poisson_distribution<long long>(mu)(rng));
        break;
      case FamilyKind::BernoulliLogit:
        y = uniform01(rng) < mu ? 1.0 : 0.0;
        break;
      case FamilyKind::GaussianIdentity:
        y = mu + std::normal_distribution<double>(0.0, 1.0)(rng);
        break;
    }
    d.x[i] = x;
    d.y[i] = y;
  }
  d.sort_by_x();
  return d;
}

EstimatorSpec
EstimatorSpec::vanilla()
{
  EstimatorSpec e;
  e.mode = FitMode::Vanilla;
  e.label = default_label(e);
  return e;
}

EstimatorSpec
EstimatorSpec::unified(GuideSpec guide, double gamma)
{
  EstimatorSpec e;
  e.mode = FitMode::Unified;
  e.guide = guide;
  e.gamma = gamma;
  e.label = default_label(e);
  return e;
}

EstimatorSpec
EstimatorSpec::parse(std::string_view method, const GuideSpec& guide)
{
  if (method == "vanilla")
    return vanilla();
  if (method == "additive")
    return additive(guide);
  if (method == "multiplicative")
    return multiplicative(guide);
  if (method.starts_with("unified:")) {
    auto rest = method.substr(8);
    std::istringstream in{ std::string(rest) };
    double g = 0.0;
    in >> g;
    if (rest.empty() || !in.eof() || in.fail() || !std::isfinite(g) || g < 0)
      throw ParseError("bad gamma in method '" + std::string(method) + "'");
    return unified(guide, g);
  }
  throw ParseError("unknown method '" + std::string(method) +
                   "' (expected vanilla, additive, multiplicative or unified:<gamma>)");
}

MonteCarloReport
metrics_from_estimates(const std::vector<std::vector<double>>& curves,
                       std::span<const double> truth)
{
  const std::size_t J = truth.size();
  for (const auto& c : curves)
    if (c.size() != J)
      throw std::invalid_argument("metrics_from_estimates: curve length differs from truth");
  MonteCarloReport rep;
  rep.R = curves.size();
  rep.J = J;
  rep.replications_used = curves.size();
  rep.truth.assign(truth.begin(), truth.end());
  rep.bias.assign(J, 0.0);
  rep.variance.assign(J, 0.0);
  rep.mse.assign(J, 0.0);
  if (curves.empty() || J == 0)
    return rep;
  const double R = static_cast<double>(curves.size());
  for (std::size_t j = 0; j < J; ++j) {
    double mean = 0.0;
    for (const auto& c : curves)
      mean += c[j];
    mean /= R;
    double s = 0.0;
    for (const auto& c : curves)
      s += (c[j] - mean) * (c[j] - mean);
    rep.bias[j] = mean - truth[j];
    rep.variance[j] = s / R;
    rep.mse[j] = rep.bias[j] * rep.bias[j] + rep.variance[j];
  }
  for (std::size_t j = 0; j < J; ++j) {
    rep.B2 += rep.bias[j] * rep.bias[j];
    rep.V += rep.variance[j];
    rep.MSE += rep.mse[j];
  }
  rep.B2 /= static_cast<double>(J);
  rep.V /= static_cast<double>(J);
  rep.MSE /= static_cast<double>(J);
  return rep;
}

TunedBandwidth
tune_bandwidth(const SimulationConfig& config, const EstimatorSpec& est)
{
  const auto& ex = config.example;
  if (config.tuning_samples < 1)
    throw SelectionError("tune_bandwidth: need at least one tuning sample");
  const auto x_grid = uniform_grid(ex.x_lo, ex.x_hi, config.J);
  const auto h_grid =
    config.h_grid.empty() ? default_h_grid(ex.x_lo, ex.x_hi) : config.h_grid;
  const LocalFitSpec spec{ config.p, 1.0, est.gamma, est.mode };
  BandwidthOptions bo;
  bo.a = config.a;
  bo.threads = 1;

  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> chosen(config.tuning_samples, nan);
  parallel_for(config.tuning_samples, config.threads, [&](std::size_t k) {
    ExampleSpec s = ex;
    s.seed = derive_seed(ex.seed, kTuningStream, k);
    const Dataset d = generate_example(s);
    try {
      GuideFit guide = est.mode == FitMode::Unified ? fit_guide(d, ex.fam, est.guide)
                                                    : GuideFit::unit();
      chosen[k] = select_bandwidth(d, ex.fam, guide, spec, x_grid, h_grid, bo).chosen_h;
    } catch (const Error&) {
    }
  });
  TunedBandwidth tb;
  tb.per_sample = chosen;
  std::vector<double> ok;
  for (double h : chosen)
    if (std::isfinite(h))
      ok.push_back(h);
  if (ok.empty())
    throw SelectionError("bandwidth selection failed on every tuning sample for " + est.label);
  tb.median = median_of(ok);
  return tb;
}

std::vector<MonteCarloReport>
run_monte_carlo(const SimulationConfig& config)
{
  const auto& ex = config.example;
  if (config.R < 2)
    throw std::invalid_argument("run_monte_carlo: R must be at least 2");
  if (config.J < 1)
    throw std::invalid_argument("run_monte_carlo: J must be positive");
  if (config.estimators.empty())
    throw std::invalid_argument("run_monte_carlo: no estimators");
  const std::size_t E = config.estimators.size();

  // Bandwidth per estimator.
  std::vector<double> h(E, 0.0);
  std::vector<std::vector<double>> tuning(E);
  std::optional<TunedBandwidth> vanilla_tuned;
  for (std::size_t e = 0; e < E; ++e) {
    const auto& est = config.estimators[e];
    switch (est.policy) {
      case HPolicy::Fixed:
        if (!(est.h > 0))
          throw std::invalid_argument("run_monte_carlo: fixed bandwidth must be positive");
        h[e] = est.h;
        break;
      case HPolicy::Selected: {
        auto tb = tune_bandwidth(config, est);
        h[e] = tb.median;
        tuning[e] = tb.per_sample;
        if (est.mode == FitMode::Vanilla && !vanilla_tuned)
          vanilla_tuned = tb;
        break;
      }
      case HPolicy::SharedFromVanilla:
        if (!vanilla_tuned)
          vanilla_tuned = tune_bandwidth(config, EstimatorSpec::vanilla());
        h[e] = vanilla_tuned->median;
        tuning[e] = vanilla_tuned->per_sample;
        break;
    }
  }

  const auto grid = uniform_grid(ex.x_lo, ex.x_hi, config.J);
  std::vector<double> truth(config.J);
  for (std::size_t j = 0; j < config.J; ++j)
    truth[j] = ex.eta0(grid[j]);

  struct Slot
  {
    std::vector<double> curve;
    bool usable = false;
    std::size_t failed_points = 0;
  };
  std::vector<std::vector<Slot>> slots(config.R, std::vector<Slot>(E));

  parallel_for(config.R, config.threads, [&](std::size_t r) {
    ExampleSpec s = ex;
    s.seed = derive_seed(ex.seed, kReplicationStream, r);
    const Dataset d = generate_example(s);
    std::optional<GuideFit> flat;
    for (std::size_t e = 0; e < E; ++e) {
      const auto& est = config.estimators[e];
      Slot& slot = slots[r][e];
      GuideFit guide = GuideFit::unit();
      try {
        if (est.mode == FitMode::Unified)
          guide = fit_guide(d, ex.fam, est.guide);
      } catch (const Error&) {
        continue;
      }
      // Fallback for failed points: the guide, or a constant fit for vanilla.
      const GuideFit* fallback = &guide;
      if (est.mode == FitMode::Vanilla) {
        if (!flat) {
          try {
            flat = fit_guide(d, ex.fam, GuideSpec::constant());
          } catch (const Error&) {
            continue;
          }
        }
        fallback = &*flat;
      }
      const LocalFitSpec spec{ config.p, h[e], est.gamma, est.mode };
      std::vector<CurvePoint> pts;
      try {
        pts = estimate_curve(d, ex.fam, guide, spec, grid);
      } catch (const EstimationError&) {
      }
      slot.curve.resize(config.J);
      for (std::size_t j = 0; j < config.J; ++j) {
        if (j < pts.size() && pts[j].ok()) {
          slot.curve[j] = pts[j].fit->eta_hat;
        } else {
          slot.curve[j] = fallback->eval(grid[j]);
          ++slot.failed_points;
        }
      }
      slot.usable = true;
    }
  });

  std::vector<MonteCarloReport> reports;
  reports.reserve(E);
  for (std::size_t e = 0; e < E; ++e) {
    std::vector<std::vector<double>> curves;
    std::size_t failed_reps = 0, failed_points = 0;
    for (std::size_t r = 0; r < config.R; ++r) {
      const Slot& slot = slots[r][e];
      if (!slot.usable) {
        ++failed_reps;
        continue;
      }
      if (slot.failed_points > 0)
        ++failed_reps;
      failed_points += slot.failed_points;
      curves.push_back(slot.curve);
    }
    MonteCarloReport rep = metrics_from_estimates(curves, truth);
    const auto& est = config.estimators[e];
    rep.label = est.label.empty() ? default_label(est) : est.label;
    rep.guide = est.mode == FitMode::Unified ? est.guide.to_string() : "none";
    rep.gamma = est.gamma;
    rep.h = h[e];
    rep.tuning_h = tuning[e];
    rep.R = config.R;
    rep.grid = grid;
    rep.failed_replications = failed_reps;
    rep.failed_points = failed_points;
    rep.flagged = static_cast<double>(failed_reps) > 0.1 * static_cast<double>(config.R);
    reports.push_back(std::move(rep));
  }
  return reports;
}

std::string
reports_to_csv(std::span<const MonteCarloReport> reports)
{
  std::string out = "method,j,x,truth,bias,variance,mse\n";
  for (const auto& rep : reports)
    for (std::size_t j = 0; j < rep.J; ++j) {
      out += rep.label;
      out += ',' + std::to_string(j);
      out += ',' + format_double(j < rep.grid.size() ? rep.grid[j] : 0.0);
      out += ',' + format_double(rep.truth[j]);
      out += ',' + format_double(rep.bias[j]);
      out += ',' + format_double(rep.variance[j]);
      out += ',' + format_double(rep.mse[j]);
      out += '\n';
    }
  return out;
}

std::string
reports_to_json(std::span<const MonteCarloReport> reports, const SimulationConfig& config)
{
  using json = nlohmann::ordered_json;
  json root;
  root["example"] = config.example.name;
  root["seed"] = config.example.seed;
  root["n"] = config.example.n;
  root["R"] = config.R;
  root["J"] = config.J;
  root["p"] = config.p;
  root["a"] = config.a;
  root["tuning_samples"] = config.tuning_samples;
  root["table_scale"] = kTableScale;
  json methods = json::array();
  for (const auto& rep : reports) {
    json m;
    m["method"] = rep.label;
    m["guide"] = rep.guide;
    m["gamma"] = rep.gamma;
    m["h"] = rep.h;
    m["tuning_h"] = rep.tuning_h;
    m["B2"] = rep.B2;
    m["V"] = rep.V;
    m["MSE"] = rep.MSE;
    m["B2_scaled"] = rep.B2 * kTableScale;
    m["V_scaled"] = rep.V * kTableScale;
    m["MSE_scaled"] = rep.MSE * kTableScale;
    m["replications_used"] = rep.replications_used;
    m["failed_replications"] = rep.failed_replications;
    m["failed_points"] = rep.failed_points;
    m["flagged"] = rep.flagged;
    methods.push_back(std::move(m));
  }
  root["methods"] = std::move(methods);
  return root.dump(2) + "\n";
}

} // namespace guidedql
