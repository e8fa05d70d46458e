// Acceptance checks: one PASS/FAIL line per criterion. Exit status 1 if any
// criterion fails.

#include "oracles.hpp"

#include "guidedql/errors.hpp"
#include "guidedql/kernel_theory.hpp"
#include "guidedql/local_fit.hpp"
#include "guidedql/quasi_family.hpp"
#include "guidedql/selection.hpp"
#include "guidedql/simulation.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace guidedql;

namespace {

// Master seed for every simulated quantity below.
constexpr std::uint64_t kSeed = 1;
// Stream reserved for the reduction-identity datasets.
constexpr std::uint64_t kIdentityStream = 3;

const GuideSpec kSinP = GuideSpec::sinusoid(std::numbers::pi / 4, -std::numbers::pi / 2);
const GuideSpec kSinB = GuideSpec::sinusoid(std::numbers::pi, 0.0);

struct Outcome
{
  bool pass = true;
  std::string detail;
};

int failures = 0;

void
report(int id, const std::string& name, const Outcome& o, double seconds)
{
  std::printf("%s criterion %d (%s): %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", id, name.c_str(),
              o.detail.c_str(), seconds);
  std::fflush(stdout);
  if (!o.pass)
    ++failures;
}

void
run(int id, const std::string& name, const std::function<Outcome()>& body)
{
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail = std::string("exception: ") + e.what();
  }
  const double s =
    std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  report(id, name, o, s);
}

bool
within(double value, double target, double rel)
{
  return std::abs(value - target) <= rel * std::abs(target);
}

std::string
fmt(const char* f, double v)
{
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void
check(Outcome& o, bool ok, const std::string& what)
{
  if (!o.detail.empty())
    o.detail += "; ";
  o.detail += what + (ok ? "" : " [x]");
  o.pass = o.pass && ok;
}

double
scaled(double v)
{
  return v * kTableScale;
}

const MonteCarloReport&
find(const std::vector<MonteCarloReport>& reps, const std::string& label)
{
  for (const auto& r : reps)
    if (r.label == label)
      return r;
  throw std::runtime_error("missing report " + label);
}

std::string
label_of(const EstimatorSpec& e)
{
  if (e.mode == FitMode::Vanilla)
    return "vanilla";
  if (e.gamma == 0.0)
    return "additive[" + e.guide.to_string() + "]";
  if (e.gamma == 1.0)
    return "multiplicative[" + e.guide.to_string() + "]";
  std::ostringstream os;
  os << "unified:" << e.gamma << "[" << e.guide.to_string() << "]";
  return os.str();
}

Outcome
table1_best_h()
{
  SimulationConfig cfg;
  cfg.example = ExampleSpec::poisson71(100, kSeed);
  cfg.R = 200;
  cfg.J = 100;
  cfg.threads = 1;
  const GuideSpec guides[] = { GuideSpec::polynomial(2), GuideSpec::polynomial(3), kSinP };
  cfg.estimators.push_back(EstimatorSpec::vanilla());
  for (const auto& g : guides) {
    cfg.estimators.push_back(EstimatorSpec::additive(g));
    cfg.estimators.push_back(EstimatorSpec::multiplicative(g));
  }
  auto reps = run_monte_carlo(cfg);
  const auto& van = find(reps, "vanilla");
  Outcome o;
  check(o, within(scaled(van.B2), 2.83, 0.25), "vanilla B2 " + fmt("%.2f", scaled(van.B2)) + " vs 2.83");
  check(o, within(scaled(van.V), 17.22, 0.25), "V " + fmt("%.2f", scaled(van.V)) + " vs 17.22");
  check(o, within(scaled(van.MSE), 20.05, 0.25), "MSE " + fmt("%.2f", scaled(van.MSE)) + " vs 20.05");
  const auto& sin_add = find(reps, label_of(EstimatorSpec::additive(kSinP)));
  check(o, within(scaled(sin_add.MSE), 7.76, 0.30),
        "sin additive MSE " + fmt("%.2f", scaled(sin_add.MSE)) + " vs 7.76 (h " + fmt("%.3f", sin_add.h) + ")");
  check(o, scaled(sin_add.B2) <= 0.15, "sin additive B2 " + fmt("%.3f", scaled(sin_add.B2)) + " <= 0.15");
  bool all_better = true;
  std::string worst;
  for (const auto& r : reps) {
    if (r.label == "vanilla")
      continue;
    if (!(r.MSE < van.MSE)) {
      all_better = false;
      worst += " " + r.label;
    }
  }
  check(o, all_better, "all guided MSE < vanilla" + worst);
  return o;
}

Outcome
table1_same_h()
{
  SimulationConfig cfg;
  cfg.example = ExampleSpec::poisson71(100, kSeed);
  cfg.R = 200;
  cfg.J = 100;
  cfg.threads = 1;
  auto van = EstimatorSpec::vanilla();
  auto add = EstimatorSpec::additive(GuideSpec::polynomial(2));
  add.policy = HPolicy::SharedFromVanilla;
  cfg.estimators = { van, add };
  auto reps = run_monte_carlo(cfg);
  Outcome o;
  check(o, reps[1].h == reps[0].h, "shared h " + fmt("%.4f", reps[0].h));
  check(o, within(scaled(reps[1].B2), 0.50, 0.50),
        "quadratic additive B2 " + fmt("%.3f", scaled(reps[1].B2)) + " vs 0.50");
  check(o, within(reps[1].V, reps[0].V, 0.10),
        "V " + fmt("%.2f", scaled(reps[1].V)) + " vs vanilla " + fmt("%.2f", scaled(reps[0].V)));
  return o;
}

Outcome
table2()
{
  SimulationConfig cfg;
  cfg.example = ExampleSpec::bernoulli72(500, kSeed);
  cfg.R = 200;
  cfg.J = 100;
  cfg.threads = 1;
  cfg.estimators = { EstimatorSpec::vanilla(), EstimatorSpec::multiplicative(kSinB),
                     EstimatorSpec::additive(GuideSpec::polynomial(1)) };
  auto reps = run_monte_carlo(cfg);
  Outcome o;
  const double v = scaled(reps[0].MSE), m = scaled(reps[1].MSE), l = scaled(reps[2].MSE);
  check(o, within(v, 814.0, 0.25), "vanilla MSE " + fmt("%.1f", v) + " vs 814.0");
  check(o, m <= 0.6 * v,
        "sin multiplicative MSE " + fmt("%.1f", m) + " <= 0.6 x vanilla (ratio " + fmt("%.3f", m / v) +
          ", h " + fmt("%.3f", reps[1].h) + ")");
  check(o, within(l, v, 0.05), "linear additive MSE " + fmt("%.1f", l) + " within 5% of vanilla");
  return o;
}

Outcome
theory_vs_empirics()
{
  // eta0(x) = x^2 on [0, 1], x0 = 0.5, N(0, 1) noise.
  const double h = 0.3, x0 = 0.5;
  const std::size_t R = 500;
  std::vector<double> err;
  for (std::size_t r = 0; r < R; ++r) {
    auto ex = ExampleSpec::custom("quadratic", QuasiFamily(), [](double x) { return x * x; }, 0.0,
                                  1.0, 2000, derive_seed(kSeed, 4, r));
    auto d = generate_example(ex);
    auto fit = fit_local(d, ex.fam, GuideFit::unit(), LocalFitSpec::vanilla(1, h), x0);
    err.push_back(fit.eta_hat - x0 * x0);
  }
  double mean = 0.0;
  for (double e : err)
    mean += e;
  mean /= static_cast<double>(R);
  double ss = 0.0;
  for (double e : err)
    ss += (e - mean) * (e - mean);
  const double se = std::sqrt(ss / static_cast<double>(R - 1) / static_cast<double>(R));
  BiasInputs in;
  in.p = 1;
  in.j = 0;
  in.h = h;
  in.x0 = x0;
  in.eta0_derivs = { x0 * x0, 2 * x0, 2.0 };
  const double theory = theoretical_bias(in);
  Outcome o;
  check(o, std::abs(mean - theory) <= 3.0 * se,
        "empirical bias " + fmt("%.5f", mean) + " vs theory " + fmt("%.5f", theory) + ", SE " +
          fmt("%.5f", se));
  return o;
}

Outcome
moment_identities()
{
  std::mt19937_64 rng(kSeed);
  // A boundary region always contains z = 0 because x0 lies in the support.
  std::uniform_real_distribution<double> u(-1.0, 0.0);
  std::vector<KernelRegion> regions{ KernelRegion::interior() };
  for (int k = 0; k < 5; ++k) {
    regions.push_back(KernelRegion::make(u(rng), 1.0));
    regions.push_back(KernelRegion::make(-1.0, -u(rng)));
  }
  double worst = 0.0;
  for (const auto& reg : regions)
    for (int p = 0; p <= 3; ++p)
      for (int r = 0; r <= p; ++r) {
        double fact = 1.0;
        for (int i = 2; i <= r; ++i)
          fact *= i;
        for (int q = 0; q <= p; ++q) {
          const double target = q == r ? fact : 0.0;
          worst = std::max(worst, std::abs(equivalent_kernel_moment(q, r, p, reg) - target));
        }
      }
  Outcome o;
  check(o, worst <= 1e-8, "max deviation " + fmt("%.2e", worst) + " over 11 regions, p <= 3");
  return o;
}

Outcome
reduction_identities()
{
  const QuasiFamily pois(FamilyKind::PoissonLog), gauss;
  const double xs[] = { -1.9, -1.0, 0.0, 0.7, 1.8 };
  const double h = 0.8;
  double d_const = 0.0, d_add = 0.0, d_mult = 0.0, d_wls = 0.0;
  for (std::uint64_t k = 0; k < 20; ++k) {
    auto d = generate_example(ExampleSpec::poisson71(100, derive_seed(kSeed, kIdentityStream, k)));
    auto c = fit_guide(d, pois, GuideSpec::constant());
    auto q = fit_guide(d, pois, GuideSpec::polynomial(2));
    auto qf = [&](double x) { return q.eval(x); };
    for (double x0 : xs) {
      const double v = fit_local(d, pois, GuideFit::unit(), LocalFitSpec::vanilla(1, h), x0).eta_hat;
      for (double g : { 0.0, 0.5, 1.0, 2.0 })
        d_const = std::max(
          d_const, std::abs(fit_local(d, pois, c, LocalFitSpec::unified(1, h, g), x0).eta_hat - v));
      d_add = std::max(d_add, std::abs(fit_local(d, pois, q, LocalFitSpec::unified(1, h, 0.0), x0).eta_hat -
                                       oracle::additive_fit(oracle::Fam::Poisson, d.x, d.y, qf, x0, h, 1)));
      d_mult = std::max(d_mult,
                        std::abs(fit_local(d, pois, q, LocalFitSpec::unified(1, h, 1.0), x0).eta_hat -
                                 oracle::multiplicative_fit(oracle::Fam::Poisson, d.x, d.y, qf, x0, h, 1)));
    }
    auto gd = generate_example(ExampleSpec::custom(
      "gauss", gauss, [](double x) { return std::sin(x); }, -2.0, 2.0, 100,
      derive_seed(kSeed, kIdentityStream, 100 + k)));
    for (double x0 : xs)
      d_wls = std::max(d_wls, std::abs(fit_local(gd, gauss, GuideFit::unit(), LocalFitSpec::vanilla(1, h), x0).eta_hat -
                                       oracle::local_wls(gd.x, gd.y, x0, h, 1)[0]));
  }
  Outcome o;
  check(o, d_const <= 1e-9, "constant guide vs vanilla " + fmt("%.1e", d_const));
  check(o, d_add <= 1e-9, "gamma 0 vs additive " + fmt("%.1e", d_add));
  check(o, d_mult <= 1e-9, "gamma 1 vs multiplicative " + fmt("%.1e", d_mult));
  check(o, d_wls <= 1e-9, "gaussian vs WLS " + fmt("%.1e", d_wls));
  return o;
}

Outcome
finite_differences()
{
  struct Fam
  {
    FamilyKind kind;
    std::vector<double> ys;
  };
  const Fam fams[] = {
    { FamilyKind::GaussianIdentity, { -3, -2, -1, -0.5, 0, 0.5, 1, 2, 3, 4 } },
    { FamilyKind::PoissonLog, { 0, 0.5, 1, 2, 3, 5, 8, 13, 21, 34 } },
    { FamilyKind::BernoulliLogit, { 0, 0.1, 0.2, 0.3, 0.4, 0.6, 0.7, 0.8, 0.9, 1 } },
  };
  double worst = 0.0;
  for (const auto& f : fams) {
    QuasiFamily fam(f.kind);
    for (double y : f.ys)
      for (int k = 0; k < 10; ++k) {
        const double eta = -3.0 + 6.0 * k / 9.0;
        auto q = [&](double e) { return fam.quasi_loglik(fam.inverse_link(e), y); };
        auto q1 = [&](double e) { return fam.score_q1(e, y); };
        const double s = 1e-5;
        const double fd1 = oracle::diff(q, eta, s), fd2 = oracle::diff(q1, eta, s);
        worst = std::max(worst, std::abs(fam.score_q1(eta, y) - fd1) / std::max(1.0, std::abs(fd1)));
        worst = std::max(worst, std::abs(fam.curvature_q2(eta, y) - fd2) / std::max(1.0, std::abs(fd2)));
      }
  }
  Outcome o;
  check(o, worst <= 1e-6, "max scaled deviation " + fmt("%.2e", worst) + " over 3 x 100 points");
  return o;
}

Outcome
bias_exactness()
{
  const QuasiFamily gauss;
  const int a = 2;
  double worst = 0.0;
  for (int p : { 1, 2, 3 }) {
    Dataset d;
    for (int i = 0; i <= 200; ++i) {
      const double x = -1.0 + 0.01 * i;
      double y = 0.0, pw = 1.0;
      for (int k = 0; k <= p; ++k) {
        y += (0.5 + 0.3 * k) * pw * (k % 2 ? -1.0 : 1.0);
        pw *= x;
      }
      d.x.push_back(x);
      d.y.push_back(y);
    }
    auto guide = fit_guide(d, gauss, GuideSpec::constant());
    const double pilot_h = 0.6, h = 0.3;
    for (int k = 0; k < 20; ++k) {
      const double x0 = -0.6 + 1.2 * k / 19.0;
      auto pilot = fit_local(d, gauss, guide, LocalFitSpec::unified(p + a + 1, pilot_h, 0.0), x0);
      auto design = build_local_design(d, guide, LocalFitSpec::unified(p, h, 0.0), x0);
      auto fit = fit_local_design(design, gauss, FitMode::Unified);
      auto bv = estimate_bias_variance(design, gauss, fit, pilot.beta, a);
      worst = std::max(worst, std::abs(bv.bias));
    }
  }
  Outcome o;
  check(o, worst <= 1e-8, "max |bias estimate| " + fmt("%.2e", worst) + " at 20 points, p = 1..3");
  return o;
}

Outcome
gamma_selection()
{
  const auto ex = ExampleSpec::poisson71(100, kSeed);
  std::vector<Dataset> samples;
  for (std::uint64_t k = 0; k < 10; ++k) {
    auto s = ex;
    s.seed = derive_seed(kSeed, 2, k);
    samples.push_back(generate_example(s));
  }
  const std::vector<GuideSpec> guides{ GuideSpec::polynomial(2) };
  const auto grid = standard_gamma_grid();
  auto th = select_gamma(samples, ex.fam, guides, grid);
  GammaSelectionOptions cv_opts;
  cv_opts.method = GammaMethod::Cv;
  auto cv = select_gamma(samples, ex.fam, guides, grid, cv_opts);
  double chosen_cv = cv.vanilla_score;
  if (!cv.vanilla_chosen)
    for (std::size_t j = 0; j < grid.size(); ++j)
      if (grid[j] == cv.chosen_gamma)
        chosen_cv = cv.score[0][j];
  Outcome o;
  check(o, std::abs(th.chosen_gamma - 1.8) <= 0.6,
        "theta plug-in gamma " + fmt("%.1f", th.chosen_gamma) + " vs 1.8");
  check(o, chosen_cv <= cv.vanilla_score,
        std::string("cv choice ") + (cv.vanilla_chosen ? "vanilla" : fmt("%.1f", cv.chosen_gamma)) +
          " deviance " + fmt("%.2f", chosen_cv) + " <= vanilla " + fmt("%.2f", cv.vanilla_score));
  return o;
}

Outcome
determinism()
{
  auto make = [](unsigned threads) {
    SimulationConfig cfg;
    cfg.example = ExampleSpec::poisson71(100, kSeed);
    cfg.R = 30;
    cfg.J = 50;
    cfg.tuning_samples = 4;
    cfg.threads = threads;
    cfg.estimators = { EstimatorSpec::vanilla(), EstimatorSpec::additive(kSinP),
                       EstimatorSpec::unified(GuideSpec::polynomial(2), 1.8) };
    return cfg;
  };
  std::vector<std::string> csv, json;
  for (unsigned t : { 1u, 1u, 4u }) {
    auto cfg = make(t);
    auto reps = run_monte_carlo(cfg);
    csv.push_back(reports_to_csv(reps));
    json.push_back(reports_to_json(reps, make(1)));
  }
  Outcome o;
  check(o, csv[0] == csv[1] && json[0] == json[1], "repeat run identical");
  check(o, csv[0] == csv[2] && json[0] == json[2], "1 vs 4 threads identical");
  return o;
}

} // namespace

int
main()
{
  run(1, "Poisson best-h table", table1_best_h);
  run(2, "Poisson shared-h table", table1_same_h);
  run(3, "Bernoulli table", table2);
  run(4, "theory vs empirics", theory_vs_empirics);
  run(5, "equivalent-kernel moments", moment_identities);
  run(6, "reduction identities", reduction_identities);
  run(7, "finite-difference q1/q2", finite_differences);
  run(8, "bias estimator exactness", bias_exactness);
  run(9, "gamma selection", gamma_selection);
  run(10, "determinism", determinism);
  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
