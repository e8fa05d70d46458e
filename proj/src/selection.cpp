#include "guidedql/selection.hpp"

#include "guidedql/errors.hpp"
#include "guidedql/parallel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <string>

namespace guidedql {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double parse_number(std::string_view s)
{
  while (!s.empty() && s.front() == ' ')
    s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ')
    s.remove_suffix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v))
    throw ParseError("not a number: '" + std::string(s) + "'");
  return v;
}

std::vector<std::string_view> split(std::string_view s, char sep)
{
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos - start));
    if (pos == std::string_view::npos)
      return out;
    start = pos + 1;
  }
}

Dataset sorted_copy(const Dataset& data)
{
  Dataset d = data;
  d.sort_by_x();
  return d;
}

std::size_t argmin_finite(std::span<const double> v)
{
  std::size_t best = v.size();
  for (std::size_t i = 0; i < v.size(); ++i)
    if (std::isfinite(v[i]) && (best == v.size() || v[i] < v[best]))
      best = i;
  return best;
}

std::vector<double> uniform_over(const Dataset& d, std::size_t n)
{
  auto [lo, hi] = std::minmax_element(d.x.begin(), d.x.end());
  return uniform_grid(*lo, *hi, n);
}

} // namespace

std::vector<double>
geometric_grid(double lo, double hi, std::size_t n)
{
  if (!(lo > 0 && hi >= lo) || n == 0)
    throw std::invalid_argument("geometric_grid: need 0 < lo <= hi and n >= 1");
  if (n == 1)
    return { lo };
  std::vector<double> g(n);
  const double ratio = std::log(hi / lo) / static_cast<double>(n - 1);
  for (std::size_t k = 0; k < n; ++k)
    g[k] = lo * std::exp(ratio * static_cast<double>(k));
  g.back() = hi;
  return g;
}

std::vector<double>
default_h_grid(double lo, double hi)
{
  const double range = hi - lo;
  if (!(range > 0))
    throw SelectionError("default_h_grid: data range is empty");
  return geometric_grid(0.05 * range, range, 20);
}

std::vector<double>
standard_gamma_grid()
{
  std::vector<double> g;
  for (int k = 0; k <= 10; ++k)
    g.push_back(k / 10.0);
  for (int k = 6; k <= 25; ++k)
    g.push_back(k / 5.0);
  return g;
}

std::vector<double>
parse_gamma_grid(std::string_view text)
{
  std::vector<double> out;
  if (text.find(':') != std::string_view::npos) {
    auto parts = split(text, ':');
    if (parts.size() < 2 || parts.size() > 3)
      throw ParseError("gamma grid: expected lo:hi or lo:hi:count");
    const double lo = parse_number(parts[0]);
    const double hi = parse_number(parts[1]);
    if (hi < lo)
      throw ParseError("gamma grid: hi < lo");
    if (parts.size() == 2) {
      for (double g : standard_gamma_grid())
        if (g >= lo - 1e-12 && g <= hi + 1e-12)
          out.push_back(g);
    } else {
      const double c = parse_number(parts[2]);
      if (c < 1 || c != std::floor(c))
        throw ParseError("gamma grid: count must be a positive integer");
      out = c == 1 ? std::vector<double>{ lo }
                   : uniform_grid(lo, hi, static_cast<std::size_t>(c));
    }
  } else {
    for (auto part : split(text, ','))
      out.push_back(parse_number(part));
  }
  if (out.empty())
    throw ParseError("gamma grid is empty");
  for (double g : out)
    if (g < 0)
      throw ParseError("gamma grid: gamma must be non-negative");
  return out;
}

std::vector<double>
cv_deviance(const Dataset& data,
            const QuasiFamily& fam,
            const CvModel& model,
            std::span<const double> h_grid,
            const CvOptions& opts)
{
  const Dataset d = sorted_copy(data);
  const std::size_t n = d.size();
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(std::max(2, opts.folds)), n);
  std::vector<double> out(h_grid.size(), kInf);
  if (n < 2)
    return out;

  struct Fold
  {
    Dataset train;
    std::vector<double> test_x, test_y;
    GuideFit guide = GuideFit::unit();
  };
  std::vector<Fold> folds(k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t f = 0; f < k; ++f) {
      if (i % k == f) {
        folds[f].test_x.push_back(d.x[i]);
        folds[f].test_y.push_back(d.y[i]);
      } else {
        folds[f].train.x.push_back(d.x[i]);
        folds[f].train.y.push_back(d.y[i]);
      }
    }
  }
  if (model.mode == FitMode::Unified) {
    try {
      for (auto& f : folds)
        f.guide = fit_guide(f.train, fam, model.guide, opts.guide);
    } catch (const Error&) {
      return out;
    }
  }

  parallel_for(h_grid.size(), opts.threads, [&](std::size_t m) {
    const LocalFitSpec spec{ model.p, h_grid[m], model.gamma, model.mode };
    double total = 0.0;
    try {
      for (const auto& f : folds)
        for (std::size_t t = 0; t < f.test_x.size(); ++t) {
          auto fit = fit_local(f.train, fam, f.guide, spec, f.test_x[t], opts.fit);
          total += fam.unit_deviance(fit.eta_hat, f.test_y[t]);
        }
    } catch (const Error&) {
      total = kInf;
    }
    out[m] = std::isfinite(total) ? total : kInf;
  });
  return out;
}

double
pilot_bandwidth(const Dataset& data,
                const QuasiFamily& fam,
                const CvModel& model,
                std::span<const double> h_grid,
                const CvOptions& opts)
{
  if (data.size() < static_cast<std::size_t>(model.p) + 2)
    throw SelectionError("pilot bandwidth: need at least p + 2 = " +
                         std::to_string(model.p + 2) + " observations");
  std::vector<double> grid(h_grid.begin(), h_grid.end());
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  if (grid.empty())
    throw SelectionError("pilot bandwidth: empty h grid");
  auto cv = cv_deviance(data, fam, model, grid, opts);
  auto best = argmin_finite(cv);
  if (best == cv.size())
    throw SelectionError("pilot bandwidth: every candidate bandwidth failed");
  return grid[best];
}

PilotCurve
pilot_curve(const Dataset& data,
            const QuasiFamily& fam,
            std::span<const double> grid,
            double h,
            unsigned threads)
{
  CurveOptions co;
  co.threads = threads;
  auto pts = estimate_curve(data, fam, GuideFit::unit(), LocalFitSpec::vanilla(1, h), grid, co);
  PilotCurve pc;
  for (const auto& pt : pts)
    if (pt.ok()) {
      pc.x.push_back(pt.x);
      pc.eta.push_back(pt.fit->eta_hat);
    }
  return pc;
}

double
trapezoid(std::span<const double> x, std::span<const double> f)
{
  if (x.size() != f.size())
    throw std::invalid_argument("trapezoid: size mismatch");
  double s = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i)
    s += 0.5 * (x[i] - x[i - 1]) * (f[i] + f[i - 1]);
  return s;
}

double
theta_gamma_hat(const GuideFit& guide,
                double gamma,
                const PilotCurve& pilot,
                double smooth_h,
                const LocalFitOptions& opts)
{
  const std::size_t m = pilot.x.size();
  if (m < 4 || pilot.eta.size() != m)
    throw EstimationError("theta_gamma_hat: pilot curve needs at least 4 points");

  std::vector<double> g(m), gp(m);
  double max_abs = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    g[k] = guide.eval(pilot.x[k]);
    max_abs = std::max(max_abs, std::abs(g[k]));
  }
  const double eps = 1e-6 * (1.0 + max_abs);
  Dataset c;
  c.x = pilot.x;
  c.y.resize(m);
  for (std::size_t k = 0; k < m; ++k) {
    if (gamma != 0.0 && !(std::abs(g[k]) > eps))
      throw GuideZeroError("theta_gamma_hat: guide vanishes at x = " +
                           std::to_string(pilot.x[k]));
    gp[k] = guide_ratio_power(g[k], gamma);
    c.y[k] = (pilot.eta[k] - g[k]) / gp[k];
  }

  const QuasiFamily gauss(FamilyKind::GaussianIdentity);
  const auto spec = LocalFitSpec::vanilla(3, smooth_h);
  std::vector<double> integrand(m);
  try {
    for (std::size_t k = 0; k < m; ++k) {
      auto fit = fit_local(c, gauss, GuideFit::unit(), spec, pilot.x[k], opts);
      const double c2 = 2.0 * fit.beta[2];
      const double v = gp[k] * c2;
      integrand[k] = v * v;
    }
  } catch (const Error& e) {
    throw EstimationError(std::string("theta_gamma_hat: derivative smoothing failed: ") +
                          e.what());
  }
  return trapezoid(pilot.x, integrand);
}

GammaSelection
select_gamma(std::span<const Dataset> samples,
             const QuasiFamily& fam,
             std::span<const GuideSpec> guides,
             std::span<const double> grid,
             const GammaSelectionOptions& opts)
{
  if (samples.empty())
    throw SelectionError("select_gamma: no auxiliary samples");
  if (grid.empty() || guides.empty())
    throw SelectionError("select_gamma: empty gamma grid or guide list");

  GammaSelection sel;
  sel.method = opts.method;
  sel.grid.assign(grid.begin(), grid.end());
  sel.guides.assign(guides.begin(), guides.end());
  const std::size_t ng = guides.size(), nj = grid.size(), ns = samples.size();

  // per_sample[s][g * nj + j]; the trailing slot holds the vanilla score.
  std::vector<std::vector<double>> per_sample(ns, std::vector<double>(ng * nj + 1, kInf));

  auto h_grid_for = [&](const Dataset& d) {
    if (!opts.h_grid.empty())
      return opts.h_grid;
    auto [lo, hi] = std::minmax_element(d.x.begin(), d.x.end());
    return default_h_grid(*lo, *hi);
  };

  if (opts.method == GammaMethod::ThetaPlugin) {
    CvOptions cv = opts.cv;
    cv.threads = 1;
    parallel_for(ns, opts.threads, [&](std::size_t s) {
      auto& row = per_sample[s];
      const Dataset d = sorted_copy(samples[s]);
      PilotCurve pc;
      double h = 0.0;
      try {
        const CvModel vanilla{ FitMode::Vanilla, GuideSpec::constant(), 0.0, opts.p };
        h = pilot_bandwidth(d, fam, vanilla, h_grid_for(d), cv);
        pc = pilot_curve(d, fam, uniform_over(d, opts.grid_points), h);
      } catch (const Error&) {
        return;
      }
      for (std::size_t g = 0; g < ng; ++g) {
        GuideFit gf;
        try {
          gf = fit_guide(d, fam, guides[g], cv.guide);
        } catch (const Error&) {
          continue;
        }
        for (std::size_t j = 0; j < nj; ++j) {
          try {
            row[g * nj + j] = theta_gamma_hat(gf, grid[j], pc, opts.smooth_factor * h, cv.fit);
          } catch (const Error&) {
          }
        }
      }
    });
  } else {
    // One task per (sample, configuration); configuration ng * nj is vanilla.
    const std::size_t nc = ng * nj + (opts.include_vanilla ? 1 : 0);
    std::vector<Dataset> sorted(ns);
    std::vector<std::vector<double>> hg(ns);
    for (std::size_t s = 0; s < ns; ++s) {
      sorted[s] = sorted_copy(samples[s]);
      hg[s] = h_grid_for(sorted[s]);
    }
    CvOptions cv = opts.cv;
    cv.threads = 1;
    parallel_for(ns * nc, opts.threads, [&](std::size_t task) {
      const std::size_t s = task / nc, c = task % nc;
      CvModel model;
      model.p = opts.p;
      if (c < ng * nj) {
        model.mode = FitMode::Unified;
        model.guide = guides[c / nj];
        model.gamma = grid[c % nj];
      }
      auto dev = cv_deviance(sorted[s], fam, model, hg[s], cv);
      auto best = argmin_finite(dev);
      per_sample[s][c] = best == dev.size() ? kInf : dev[best];
    });
  }

  sel.score.assign(ng, std::vector<double>(nj, 0.0));
  for (std::size_t g = 0; g < ng; ++g)
    for (std::size_t j = 0; j < nj; ++j)
      for (std::size_t s = 0; s < ns; ++s)
        sel.score[g][j] += per_sample[s][g * nj + j];
  if (opts.method == GammaMethod::Cv && opts.include_vanilla) {
    sel.vanilla_score = 0.0;
    for (std::size_t s = 0; s < ns; ++s)
      sel.vanilla_score += per_sample[s][ng * nj];
  }

  sel.chosen_per_guide.assign(ng, std::numeric_limits<double>::quiet_NaN());
  double best_score = kInf;
  bool any = false;
  for (std::size_t g = 0; g < ng; ++g) {
    auto j = argmin_finite(sel.score[g]);
    if (j == nj)
      continue;
    sel.chosen_per_guide[g] = grid[j];
    if (!any || sel.score[g][j] < best_score) {
      any = true;
      best_score = sel.score[g][j];
      sel.chosen_guide = g;
      sel.chosen_gamma = grid[j];
    }
  }
  if (std::isfinite(sel.vanilla_score) && (!any || sel.vanilla_score <= best_score)) {
    any = true;
    sel.vanilla_chosen = true;
    sel.chosen_gamma = 0.0;
  }
  if (!any)
    throw SelectionError("select_gamma: every configuration failed");
  return sel;
}

BiasVariance
estimate_bias_variance(const LocalDesign& design,
                       const QuasiFamily& fam,
                       const LocalFitResult& fit,
                       std::span<const double> pilot_beta,
                       int a)
{
  const int p = design.p;
  if (a < 1 || pilot_beta.size() < static_cast<std::size_t>(p + a) + 1)
    throw std::invalid_argument("estimate_bias_variance: pilot has too few coefficients");
  if (fit.beta.size() != static_cast<std::size_t>(p) + 1)
    throw std::invalid_argument("estimate_bias_variance: fit degree differs from design");

  // Scaled coordinates t = (X - x0) / h keep the matrices well conditioned;
  // the (0, 0) entries are unchanged by the rescaling.
  const Eigen::Index q = p + 1;
  Eigen::VectorXd grad_star = Eigen::VectorXd::Zero(q);
  Eigen::MatrixXd neg_hess_star = Eigen::MatrixXd::Zero(q, q);
  Eigen::MatrixXd neg_hess = Eigen::MatrixXd::Zero(q, q);
  Eigen::MatrixXd sn = Eigen::MatrixXd::Zero(q, q);
  Eigen::VectorXd xt(q);
  for (std::size_t i = 0; i < design.dx.size(); ++i) {
    const double dx = design.dx[i], t = dx / design.h;
    double lin = 0.0, pw = 1.0, tp = 1.0;
    for (int j = 0; j <= p; ++j) {
      lin += fit.beta[static_cast<std::size_t>(j)] * pw;
      xt(j) = tp;
      pw *= dx;
      tp *= t;
    }
    double r = 0.0;
    for (int k = p + 1; k <= p + a; ++k) {
      r += pilot_beta[static_cast<std::size_t>(k)] * pw;
      pw *= dx;
    }
    const double s = design.scale[i], w = design.weight[i];
    const double eta = design.offset[i] + s * lin;
    r *= s;
    const double y = design.y[i];
    const double dq1 = fam.score_q1(eta + r, y) - fam.score_q1(eta, y);
    grad_star += (dq1 * s * w) * xt;
    neg_hess_star.noalias() -= (fam.curvature_q2(eta + r, y) * s * s * w) * xt * xt.transpose();
    neg_hess.noalias() -= (fam.curvature_q2(eta, y) * s * s * w) * xt * xt.transpose();
    sn.noalias() += (w * w * s * s) * xt * xt.transpose();
  }

  Eigen::LLT<Eigen::MatrixXd> llt_star(neg_hess_star), llt(neg_hess);
  if (llt_star.info() != Eigen::Success || llt.info() != Eigen::Success)
    throw SingularHessianError("bias/variance: local Hessian is not negative definite at x0 = " +
                               std::to_string(design.x0));
  BiasVariance bv;
  // (Q*'')^{-1} Q*' with Q*'' = -neg_hess_star.
  bv.bias = -llt_star.solve(grad_star)(0);
  Eigen::VectorXd e0 = Eigen::VectorXd::Zero(q);
  e0(0) = 1.0;
  Eigen::VectorXd u = llt.solve(e0);
  const double eta0 = fit.beta[0];
  const double dmu = fam.inverse_link_derivative(eta0);
  const double xi = dmu * dmu / fam.variance(fam.inverse_link(eta0));
  bv.variance = xi * u.dot(sn * u);
  if (!std::isfinite(bv.bias) || !std::isfinite(bv.variance))
    throw SingularHessianError("bias/variance: non-finite estimate at x0 = " +
                               std::to_string(design.x0));
  return bv;
}

BandwidthSelection
select_bandwidth(const Dataset& data,
                 const QuasiFamily& fam,
                 const GuideFit& guide,
                 const LocalFitSpec& spec,
                 std::span<const double> x_grid,
                 std::span<const double> h_grid,
                 const BandwidthOptions& opts)
{
  if (h_grid.empty())
    throw SelectionError("select_bandwidth: empty h grid");
  if (x_grid.size() < 2)
    throw SelectionError("select_bandwidth: need at least two x points");
  const Dataset d = sorted_copy(data);
  std::vector<double> xs(x_grid.begin(), x_grid.end());
  std::sort(xs.begin(), xs.end());

  BandwidthSelection sel;
  sel.h_grid.assign(h_grid.begin(), h_grid.end());
  sel.a = opts.a;
  const int pilot_degree = spec.p + opts.a + 1;

  CvOptions cv = opts.cv;
  cv.threads = opts.threads;
  cv.fit = opts.fit;
  if (opts.pilot_h > 0) {
    sel.pilot_h = opts.pilot_h;
  } else {
    std::vector<double> pg = opts.pilot_h_grid;
    if (pg.empty())
      pg = default_h_grid(d.x.front(), d.x.back());
    const CvModel model{ FitMode::Vanilla, GuideSpec::constant(), 0.0, pilot_degree };
    sel.pilot_h = pilot_bandwidth(d, fam, model, pg, cv);
  }

  // Pilot coefficients at every x; points where the pilot fails are dropped.
  const LocalFitSpec pilot_spec{ pilot_degree, sel.pilot_h, spec.gamma, spec.mode };
  std::vector<std::vector<double>> pilot(xs.size());
  std::vector<char> pilot_ok(xs.size(), 0);
  parallel_for(xs.size(), opts.threads, [&](std::size_t k) {
    try {
      pilot[k] = fit_local(d, fam, guide, pilot_spec, xs[k], opts.fit).beta;
      pilot_ok[k] = 1;
    } catch (const Error&) {
    }
  });
  std::vector<double> used_x;
  std::vector<std::size_t> used;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    if (pilot_ok[k]) {
      used.push_back(k);
      used_x.push_back(xs[k]);
    } else {
      sel.skipped_x.push_back(xs[k]);
    }
  }
  if (used.size() < 2)
    throw SelectionError("select_bandwidth: pilot fit failed almost everywhere");

  std::vector<std::vector<double>> mse(h_grid.size(), std::vector<double>(used.size(), kInf));
  parallel_for(h_grid.size() * used.size(), opts.threads, [&](std::size_t task) {
    const std::size_t m = task / used.size(), u = task % used.size();
    LocalFitSpec s = spec;
    s.h = h_grid[m];
    try {
      auto design = build_local_design(d, guide, s, xs[used[u]]);
      auto fit = fit_local_design(design, fam, s.mode, opts.fit);
      auto bv = estimate_bias_variance(design, fam, fit, pilot[used[u]], opts.a);
      const double v = bv.bias * bv.bias + bv.variance;
      if (std::isfinite(v) && v >= 0)
        mse[m][u] = v;
    } catch (const Error&) {
    }
  });

  sel.imse_hat.assign(h_grid.size(), kInf);
  for (std::size_t m = 0; m < h_grid.size(); ++m) {
    double worst = -1.0;
    for (double v : mse[m])
      if (std::isfinite(v))
        worst = std::max(worst, v);
    if (worst < 0)
      continue;
    for (double& v : mse[m])
      if (!std::isfinite(v)) {
        v = worst;
        ++sel.penalized_points;
      }
    sel.imse_hat[m] = trapezoid(used_x, mse[m]);
  }
  auto best = argmin_finite(sel.imse_hat);
  if (best == sel.imse_hat.size())
    throw SelectionError("select_bandwidth: no bandwidth gives a finite MSE estimate");
  sel.chosen_h = h_grid[best];
  return sel;
}

} // namespace guidedql
