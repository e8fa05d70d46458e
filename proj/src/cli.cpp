#include "guidedql/cli.hpp"

#include "guidedql/csv.hpp"
#include "guidedql/errors.hpp"
#include "guidedql/guide.hpp"
#include "guidedql/kernel_theory.hpp"
#include "guidedql/local_fit.hpp"
#include "guidedql/parallel.hpp"
#include "guidedql/selection.hpp"
#include "guidedql/simulation.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>
#include <optional>
#include <sstream>

namespace guidedql {

namespace {

// Bad flags, bad input files: exit code 2.
struct UsageError : std::runtime_error
{
  using std::runtime_error::runtime_error;
};

struct Range
{
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
};

double to_number(std::string_view s, const std::string& what)
{
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v))
    throw UsageError(what + ": not a number: '" + std::string(s) + "'");
  return v;
}

Range parse_range(const std::string& text, const std::string& what)
{
  auto a = text.find(':');
  auto b = a == std::string::npos ? a : text.find(':', a + 1);
  if (a == std::string::npos || b == std::string::npos)
    throw UsageError(what + ": expected lo:hi:count, got '" + text + "'");
  Range r;
  r.lo = to_number(std::string_view(text).substr(0, a), what);
  r.hi = to_number(std::string_view(text).substr(a + 1, b - a - 1), what);
  const double c = to_number(std::string_view(text).substr(b + 1), what);
  if (c < 1 || c != std::floor(c) || c > 1e7)
    throw UsageError(what + ": count must be a positive integer");
  r.count = static_cast<std::size_t>(c);
  if (!(r.hi > r.lo) && !(r.count == 1 && r.hi == r.lo))
    throw UsageError(what + ": need lo < hi");
  return r;
}

std::vector<double> linear_points(const Range& r)
{
  return r.count == 1 ? std::vector<double>{ r.lo } : uniform_grid(r.lo, r.hi, r.count);
}

unsigned thread_count(int requested)
{
  return requested > 0 ? static_cast<unsigned>(requested) : default_thread_count();
}

// Parses "none" as vanilla; otherwise a guide spec.
std::optional<GuideSpec> parse_guide_option(const std::string& text)
{
  if (text == "none")
    return std::nullopt;
  try {
    return GuideSpec::parse(text);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

QuasiFamily parse_family(const std::string& text)
{
  try {
    return QuasiFamily::from_string(text);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

Dataset load_data(const std::string& path, const QuasiFamily& fam)
{
  try {
    Dataset d = read_xy_csv_file(path);
    d.validate(fam);
    d.sort_by_x();
    return d;
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

std::string default_guide_for(const ExampleSpec& ex)
{
  if (ex.kind == ExampleKind::Bernoulli72)
    return "sin:omega=" + format_double(std::numbers::pi) + ",phase=0";
  return "sin:omega=" + format_double(std::numbers::pi / 4) +
         ",phase=" + format_double(-std::numbers::pi / 2);
}

std::vector<std::string> split_list(const std::string& s)
{
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, ','))
    if (!cur.empty())
      out.push_back(cur);
  return out;
}

void emit(const std::string& content, const std::string& path, std::ostream& out)
{
  if (path.empty() || path == "-")
    out << content;
  else
    write_file_atomic(path, content);
}

// ---------------------------------------------------------------- fit

struct FitArgs
{
  std::string family, guide = "none", h, grid, data, out;
  double gamma = 0.0;
  int p = 1;
  int threads = 0;
};

int cmd_fit(const FitArgs& a, std::ostream& out, std::ostream& err)
{
  const QuasiFamily fam = parse_family(a.family);
  const auto guide_spec = parse_guide_option(a.guide);
  if (a.p < 0 || a.p > 10)
    throw UsageError("--p must be between 0 and 10");
  const bool auto_h = a.h == "auto";
  const double h = auto_h ? 0.0 : to_number(a.h, "--h");
  if (!auto_h && !(h > 0))
    throw UsageError("--h must be positive or 'auto'");
  std::optional<Range> grid_range;
  if (!a.grid.empty())
    grid_range = parse_range(a.grid, "--grid");
  const Dataset data = load_data(a.data, fam);
  const unsigned threads = thread_count(a.threads);

  const auto grid = grid_range ? linear_points(*grid_range)
                               : uniform_grid(data.x.front(), data.x.back(), 100);
  const FitMode mode = guide_spec ? FitMode::Unified : FitMode::Vanilla;
  GuideFit guide = guide_spec ? fit_guide(data, fam, *guide_spec) : GuideFit::unit();
  LocalFitSpec spec{ a.p, auto_h ? 1.0 : h, a.gamma, mode };
  if (auto_h) {
    BandwidthOptions bo;
    bo.threads = threads;
    auto sel = select_bandwidth(data, fam, guide, spec,
                                grid, default_h_grid(data.x.front(), data.x.back()), bo);
    spec.h = sel.chosen_h;
    (a.out.empty() ? err : out) << "selected h = " << format_double(spec.h) << '\n';
  }
  CurveOptions co;
  co.threads = threads;
  auto pts = estimate_curve(data, fam, guide, spec, grid, co);
  std::string csv = "x,eta_hat,mu_hat\n";
  std::size_t failed = 0;
  for (const auto& pt : pts) {
    csv += format_double(pt.x);
    if (pt.ok()) {
      csv += ',' + format_double(pt.fit->eta_hat) + ',' +
             format_double(fam.inverse_link(pt.fit->eta_hat)) + '\n';
    } else {
      csv += ",nan,nan\n";
      ++failed;
    }
  }
  if (failed > 0)
    err << "warning: " << failed << " of " << pts.size() << " grid points failed\n";
  emit(csv, a.out, out);
  return kExitOk;
}

// ---------------------------------------------------------------- simulate

struct SimArgs
{
  std::string example, methods = "vanilla,additive,multiplicative", guide, h = "select",
                       out = "simulation";
  std::size_t R = 200, J = 100, n = 0, tuning = 10;
  std::uint64_t seed = 1;
  int threads = 0;
};

int cmd_simulate(const SimArgs& a, std::ostream& out, std::ostream&)
{
  SimulationConfig cfg;
  try {
    cfg.example = ExampleSpec::from_id(a.example);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  if (a.R < 2)
    throw UsageError("--R must be at least 2");
  if (a.J < 1)
    throw UsageError("--J must be positive");
  if (a.n > 0)
    cfg.example.n = a.n;
  cfg.example.seed = a.seed;
  cfg.R = a.R;
  cfg.J = a.J;
  cfg.tuning_samples = a.tuning;
  cfg.threads = thread_count(a.threads);

  const std::string guide_text = a.guide.empty() ? default_guide_for(cfg.example) : a.guide;
  const auto guide = parse_guide_option(guide_text);
  HPolicy policy = HPolicy::Selected;
  double fixed_h = 0.0;
  if (a.h == "shared")
    policy = HPolicy::SharedFromVanilla;
  else if (a.h != "select") {
    policy = HPolicy::Fixed;
    fixed_h = to_number(a.h, "--h");
    if (!(fixed_h > 0))
      throw UsageError("--h must be positive, 'select' or 'shared'");
  }
  const auto methods = split_list(a.methods);
  if (methods.empty())
    throw UsageError("--methods is empty");
  for (const auto& m : methods) {
    EstimatorSpec e;
    try {
      if (m != "vanilla" && !guide)
        throw UsageError("method '" + m + "' needs a guide");
      e = EstimatorSpec::parse(m, guide.value_or(GuideSpec::constant()));
    } catch (const Error& ex) {
      throw UsageError(ex.what());
    }
    e.policy = policy;
    e.h = fixed_h;
    cfg.estimators.push_back(e);
  }

  auto reports = run_monte_carlo(cfg);
  const std::string csv = reports_to_csv(reports);
  const std::string json = reports_to_json(reports, cfg);
  write_file_atomic(a.out + ".csv", csv);
  write_file_atomic(a.out + ".json", json);
  out << "method,h,B2_scaled,V_scaled,MSE_scaled,flagged\n";
  for (const auto& r : reports)
    out << r.label << ',' << format_double(r.h) << ',' << format_double(r.B2 * kTableScale)
        << ',' << format_double(r.V * kTableScale) << ','
        << format_double(r.MSE * kTableScale) << ',' << (r.flagged ? 1 : 0) << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- kernel-table

struct KernelArgs
{
  int p = 1;
  std::string region = "interior", out;
};

int cmd_kernel_table(const KernelArgs& a, std::ostream& out, std::ostream&)
{
  if (a.p < 0 || a.p > 5)
    throw UsageError("--p must be between 0 and 5");
  KernelRegion region;
  if (a.region != "interior") {
    auto c = a.region.find(':');
    if (c == std::string::npos)
      throw UsageError("--region must be 'interior' or lo:hi");
    const double lo = to_number(std::string_view(a.region).substr(0, c), "--region");
    const double hi = to_number(std::string_view(a.region).substr(c + 1), "--region");
    try {
      region = KernelRegion::make(lo, hi);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  std::string csv = "quantity,index,value\n";
  auto row = [&](const char* q, int i, double v) {
    csv += std::string(q) + ',' + std::to_string(i) + ',' + format_double(v) + '\n';
  };
  for (int l = 0; l <= 2 * a.p + 2; ++l)
    row("nu", l, nu_moment(l, region));
  row("int_K2", 0, kernel_square_integral(region));
  for (int j = 0; j <= a.p; ++j)
    row("moment_p1", j, equivalent_kernel_moment(a.p + 1, j, a.p, region));
  for (int j = 0; j <= a.p; ++j)
    row("moment_p2", j, equivalent_kernel_moment(a.p + 2, j, a.p, region));
  for (int j = 0; j <= a.p; ++j)
    row("int_Kj2", j, equivalent_kernel_product(j, j, a.p, region));
  emit(csv, a.out, out);
  return kExitOk;
}

// ---------------------------------------------------------------- select-gamma

struct GammaArgs
{
  std::string example = "poisson71", grid = "0:5", method = "theta", out, family;
  std::vector<std::string> guides, data;
  std::size_t samples = 10, n = 0;
  std::uint64_t seed = 1;
  int p = 1;
  int threads = 0;
};

int cmd_select_gamma(const GammaArgs& a, std::ostream& out, std::ostream&)
{
  GammaSelectionOptions opts;
  if (a.method == "theta")
    opts.method = GammaMethod::ThetaPlugin;
  else if (a.method == "cv")
    opts.method = GammaMethod::Cv;
  else
    throw UsageError("--method must be 'theta' or 'cv'");
  opts.p = a.p;
  opts.threads = thread_count(a.threads);
  std::vector<double> grid;
  try {
    grid = parse_gamma_grid(a.grid);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }

  std::vector<Dataset> samples;
  QuasiFamily fam;
  std::optional<ExampleSpec> ex;
  if (!a.data.empty()) {
    if (a.family.empty())
      throw UsageError("--family is required with data files");
    fam = parse_family(a.family);
    for (const auto& path : a.data)
      samples.push_back(load_data(path, fam));
  } else {
    try {
      ex = ExampleSpec::from_id(a.example);
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    fam = ex->fam;
    if (a.samples < 1)
      throw UsageError("--samples must be positive");
  }
  std::vector<GuideSpec> guides;
  std::vector<std::string> guide_texts = a.guides;
  if (guide_texts.empty())
    guide_texts.push_back(ex ? "poly:2" : "poly:1");
  for (const auto& g : guide_texts) {
    auto spec = parse_guide_option(g);
    if (!spec)
      throw UsageError("select-gamma needs a guide, not 'none'");
    guides.push_back(*spec);
  }
  if (ex) {
    if (a.n > 0)
      ex->n = a.n;
    for (std::size_t k = 0; k < a.samples; ++k) {
      ExampleSpec s = *ex;
      s.seed = derive_seed(a.seed, 2, k);
      samples.push_back(generate_example(s));
    }
  }

  auto sel = select_gamma(samples, fam, guides, grid, opts);
  const bool multi = guides.size() > 1;
  const std::string score_name = opts.method == GammaMethod::Cv ? "cv_deviance" : "theta_hat";
  std::string csv = multi ? "guide,gamma," + score_name + "\n" : "gamma," + score_name + "\n";
  for (std::size_t g = 0; g < guides.size(); ++g)
    for (std::size_t j = 0; j < grid.size(); ++j) {
      if (multi)
        csv += '"' + guides[g].to_string() + "\",";
      csv += format_double(grid[j]) + ',' + format_double(sel.score[g][j]) + '\n';
    }
  if (opts.method == GammaMethod::Cv)
    csv += multi ? "vanilla,," + format_double(sel.vanilla_score) + '\n'
                 : "vanilla," + format_double(sel.vanilla_score) + '\n';
  if (sel.vanilla_chosen)
    csv += "chosen,vanilla\n";
  else if (multi)
    csv += "chosen," + format_double(sel.chosen_gamma) + ",\"" +
           guides[sel.chosen_guide].to_string() + "\"\n";
  else
    csv += "chosen," + format_double(sel.chosen_gamma) + '\n';
  emit(csv, a.out, out);
  return kExitOk;
}

// ---------------------------------------------------------------- bandwidth

struct BandwidthArgs
{
  std::string family, guide = "none", h_grid, grid, data, out;
  double gamma = 0.0;
  int p = 1, a = 2;
  int threads = 0;
};

int cmd_bandwidth(const BandwidthArgs& a, std::ostream& out, std::ostream&)
{
  const QuasiFamily fam = parse_family(a.family);
  const auto guide_spec = parse_guide_option(a.guide);
  if (a.p < 0 || a.p > 6)
    throw UsageError("--p must be between 0 and 6");
  if (a.a < 1 || a.a > 4)
    throw UsageError("--a must be between 1 and 4");
  std::optional<Range> hr, xr;
  if (!a.h_grid.empty()) {
    hr = parse_range(a.h_grid, "--h-grid");
    if (!(hr->lo > 0))
      throw UsageError("--h-grid: bandwidths must be positive");
  }
  if (!a.grid.empty())
    xr = parse_range(a.grid, "--grid");
  const Dataset data = load_data(a.data, fam);

  const auto h_grid = hr ? geometric_grid(hr->lo, hr->hi, hr->count)
                         : default_h_grid(data.x.front(), data.x.back());
  const auto x_grid = xr ? linear_points(*xr) : uniform_grid(data.x.front(), data.x.back(), 100);
  const FitMode mode = guide_spec ? FitMode::Unified : FitMode::Vanilla;
  GuideFit guide = guide_spec ? fit_guide(data, fam, *guide_spec) : GuideFit::unit();
  BandwidthOptions bo;
  bo.a = a.a;
  bo.threads = thread_count(a.threads);
  auto sel = select_bandwidth(data, fam, guide, LocalFitSpec{ a.p, 1.0, a.gamma, mode },
                              x_grid, h_grid, bo);
  std::string csv = "h,imse,selected\n";
  for (std::size_t m = 0; m < sel.h_grid.size(); ++m)
    csv += format_double(sel.h_grid[m]) + ',' + format_double(sel.imse_hat[m]) + ',' +
           (sel.h_grid[m] == sel.chosen_h ? "1" : "0") + '\n';
  csv += "chosen," + format_double(sel.chosen_h) + '\n';
  emit(csv, a.out, out);
  return kExitOk;
}

} // namespace

int
run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
  CLI::App app{ "Guided local quasi-likelihood estimation", "guidedql" };
  // "--h" is the bandwidth option, so help is long-form only.
  app.set_help_flag("--help", "Print this help message and exit");
  app.require_subcommand(1);
  app.set_version_flag("--version", "guidedql 1.0.0");

  FitArgs fa;
  auto* fit = app.add_subcommand("fit", "Estimate eta on a grid from x,y CSV data");
  fit->add_option("--family", fa.family, "gaussian, poisson or bernoulli")->required();
  fit->add_option("--guide", fa.guide, "none, const, poly:<d> or sin:omega=<w>,phase=<p>")
    ->capture_default_str();
  fit->add_option("--gamma", fa.gamma, "Correction exponent")->capture_default_str();
  fit->add_option("--p", fa.p, "Local polynomial degree")->capture_default_str();
  fit->add_option("--h", fa.h, "Bandwidth, or 'auto'")->required();
  fit->add_option("--grid", fa.grid, "Evaluation grid lo:hi:count");
  fit->add_option("--out", fa.out, "Output CSV (default stdout)");
  fit->add_option("--threads", fa.threads, "Worker threads");
  fit->add_option("data", fa.data, "Input CSV with header x,y")->required();

  SimArgs sa;
  auto* sim = app.add_subcommand("simulate", "Monte Carlo comparison on a synthetic example");
  sim->add_option("--example", sa.example, "poisson71 or bernoulli72")->required();
  sim->add_option("--R", sa.R, "Replications")->capture_default_str();
  sim->add_option("--J", sa.J, "Grid points")->capture_default_str();
  sim->add_option("--n", sa.n, "Sample size (default: the example's)");
  sim->add_option("--seed", sa.seed, "Master seed")->capture_default_str();
  sim->add_option("--methods", sa.methods, "Comma list of vanilla, additive, multiplicative, unified:<gamma>")
    ->capture_default_str();
  sim->add_option("--guide", sa.guide, "Guide for the guided methods");
  sim->add_option("--h", sa.h, "'select', 'shared' or a bandwidth")->capture_default_str();
  sim->add_option("--tuning", sa.tuning, "Tuning samples for bandwidth selection")
    ->capture_default_str();
  sim->add_option("--out", sa.out, "Output prefix for .csv and .json")->capture_default_str();
  sim->add_option("--threads", sa.threads, "Worker threads");

  KernelArgs ka;
  auto* ker = app.add_subcommand("kernel-table", "Kernel moments and equivalent-kernel constants");
  ker->add_option("--p", ka.p, "Local polynomial degree")->capture_default_str();
  ker->add_option("--region", ka.region, "'interior' or lo:hi within [-1, 1]")
    ->capture_default_str();
  ker->add_option("--out", ka.out, "Output CSV (default stdout)");

  GammaArgs ga;
  auto* gam = app.add_subcommand("select-gamma", "Choose the correction exponent");
  gam->add_option("--example", ga.example, "Auxiliary samples from poisson71 or bernoulli72")
    ->capture_default_str();
  gam->add_option("--samples", ga.samples, "Number of auxiliary samples")->capture_default_str();
  gam->add_option("--n", ga.n, "Sample size (default: the example's)");
  gam->add_option("--seed", ga.seed, "Seed")->capture_default_str();
  gam->add_option("--family", ga.family, "Family for data files");
  gam->add_option("--guide", ga.guides, "Guide (repeatable)");
  gam->add_option("--grid", ga.grid, "lo:hi (standard grid), lo:hi:count or a,b,c")
    ->capture_default_str();
  gam->add_option("--method", ga.method, "theta or cv")->capture_default_str();
  gam->add_option("--p", ga.p, "Local polynomial degree")->capture_default_str();
  gam->add_option("--out", ga.out, "Output CSV (default stdout)");
  gam->add_option("--threads", ga.threads, "Worker threads");
  gam->add_option("data", ga.data, "CSV samples instead of a synthetic example");

  BandwidthArgs ba;
  auto* bw = app.add_subcommand("bandwidth", "Pre-asymptotic bandwidth selection");
  bw->add_option("--family", ba.family, "gaussian, poisson or bernoulli")->required();
  bw->add_option("--guide", ba.guide, "none or a guide spec")->capture_default_str();
  bw->add_option("--gamma", ba.gamma, "Correction exponent")->capture_default_str();
  bw->add_option("--p", ba.p, "Local polynomial degree")->capture_default_str();
  bw->add_option("--a", ba.a, "Approximation order")->capture_default_str();
  bw->add_option("--h-grid", ba.h_grid, "Geometric bandwidth grid lo:hi:count");
  bw->add_option("--grid", ba.grid, "Integration grid lo:hi:count");
  bw->add_option("--out", ba.out, "Output CSV (default stdout)");
  bw->add_option("--threads", ba.threads, "Worker threads");
  bw->add_option("data", ba.data, "Input CSV with header x,y")->required();

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (fit->parsed())
      return cmd_fit(fa, out, err);
    if (sim->parsed())
      return cmd_simulate(sa, out, err);
    if (ker->parsed())
      return cmd_kernel_table(ka, out, err);
    if (gam->parsed())
      return cmd_select_gamma(ga, out, err);
    if (bw->parsed())
      return cmd_bandwidth(ba, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitNumeric;
  }
  return kExitUsage;
}

} // namespace guidedql
