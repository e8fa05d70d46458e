#include "guidedql/local_fit.hpp"

#include "guidedql/errors.hpp"
#include "guidedql/jet.hpp"
#include "guidedql/parallel.hpp"

#include <algorithm>
#include <cmath>

namespace guidedql {

namespace {

struct ScaledEval
{
  double value = 0.0;
  Eigen::VectorXd grad;
  Eigen::MatrixXd neg_hess;
};

// Objective in theta_j = beta_j h^j, where the design uses u = (X - x0) / h.
ScaledEval
eval_scaled(const LocalDesign& d,
            const QuasiFamily& fam,
            const Eigen::VectorXd& theta,
            bool derivatives)
{
  const auto m = theta.size();
  ScaledEval out;
  if (derivatives) {
    out.grad = Eigen::VectorXd::Zero(m);
    out.neg_hess = Eigen::MatrixXd::Zero(m, m);
  }
  Eigen::VectorXd z(m);
  for (std::size_t i = 0; i < d.dx.size(); ++i) {
    const double u = d.dx[i] / d.h;
    double pw = 1.0;
    for (Eigen::Index j = 0; j < m; ++j) {
      z(j) = pw;
      pw *= u;
    }
    const double eta = d.offset[i] + d.scale[i] * z.dot(theta);
    const double mu = fam.inverse_link(eta);
    out.value += d.weight[i] * fam.quasi_loglik(mu, d.y[i]);
    if (derivatives) {
      const double q1 = fam.score_q1(eta, d.y[i]);
      const double q2 = fam.curvature_q2(eta, d.y[i]);
      out.grad.noalias() += (d.weight[i] * q1 * d.scale[i]) * z;
      out.neg_hess.noalias() +=
        (-d.weight[i] * q2 * d.scale[i] * d.scale[i]) * z * z.transpose();
    }
  }
  return out;
}

double
eval_value(const LocalDesign& d, const QuasiFamily& fam, const Eigen::VectorXd& theta)
{
  return eval_scaled(d, fam, theta, false).value;
}

Eigen::VectorXd
power_scale(double h, int p)
{
  Eigen::VectorXd s(p + 1);
  double pw = 1.0;
  for (int j = 0; j <= p; ++j) {
    s(j) = pw;
    pw *= h;
  }
  return s;
}

Eigen::VectorXd
solve_ascent(const Eigen::MatrixXd& neg_hess, const Eigen::VectorXd& grad, double jitter)
{
  Eigen::LLT<Eigen::MatrixXd> llt(neg_hess);
  if (llt.info() == Eigen::Success)
    return llt.solve(grad);
  const double bump = jitter * (1.0 + neg_hess.diagonal().cwiseAbs().maxCoeff());
  Eigen::MatrixXd reg =
    neg_hess + bump * Eigen::MatrixXd::Identity(neg_hess.rows(), neg_hess.cols());
  Eigen::LLT<Eigen::MatrixXd> llt2(reg);
  if (llt2.info() != Eigen::Success)
    throw SingularHessianError("local fit: Hessian is not negative definite");
  return llt2.solve(grad);
}

double
binomial(int n, int k)
{
  double r = 1.0;
  for (int i = 1; i <= k; ++i)
    r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
  return r;
}

double
factorial(int n)
{
  double r = 1.0;
  for (int i = 2; i <= n; ++i)
    r *= i;
  return r;
}

} // namespace

void
LocalFitSpec::validate() const
{
  if (p < 0 || p > 10)
    throw std::invalid_argument("local fit: degree p must be in [0, 10]");
  if (!(h > 0) || !std::isfinite(h))
    throw std::invalid_argument("local fit: bandwidth must be positive");
  if (!(gamma >= 0) || !std::isfinite(gamma))
    throw std::invalid_argument("local fit: gamma must be non-negative");
}

std::vector<double>
design_vector(double x, double x0, int p)
{
  std::vector<double> v(static_cast<std::size_t>(p) + 1);
  double pw = 1.0;
  for (auto& e : v) {
    e = pw;
    pw *= (x - x0);
  }
  return v;
}

double
guide_ratio_power(double ratio, double gamma)
{
  if (gamma == 0.0)
    return 1.0;
  if (ratio < 0.0 && gamma != std::round(gamma))
    return std::pow(-ratio, gamma);
  return std::pow(ratio, gamma);
}

LocalDesign
build_local_design(const Dataset& data,
                   const GuideFit& guide,
                   const LocalFitSpec& spec,
                   double x0)
{
  spec.validate();
  if (data.x.size() != data.y.size())
    throw DomainError("local fit: x and y have different lengths");

  LocalDesign d;
  d.x0 = x0;
  d.h = spec.h;
  d.p = spec.p;
  const bool guided = spec.mode == FitMode::Unified;
  const double g0 = guided ? guide.eval(x0) : 1.0;
  d.guide_at_x0 = g0;

  if (guided && spec.gamma > 0) {
    double max_abs = 0.0;
    for (double xi : data.x)
      max_abs = std::max(max_abs, std::abs(guide.eval(xi)));
    const double eps = 1e-6 * (1.0 + max_abs);
    if (!(std::abs(g0) > eps))
      throw GuideZeroError("local fit: guide vanishes at x0 = " +
                           std::to_string(x0));
  }

  for (std::size_t i = 0; i < data.x.size(); ++i) {
    const double dx = data.x[i] - x0;
    const double w = epanechnikov(dx / spec.h) / spec.h;
    if (!(w > 0))
      continue;
    d.index.push_back(i);
    d.dx.push_back(dx);
    d.weight.push_back(w);
    d.y.push_back(data.y[i]);
    if (guided) {
      const double gi = guide.eval(data.x[i]);
      const double s = guide_ratio_power(gi / g0, spec.gamma);
      d.scale.push_back(s);
      d.offset.push_back(gi - g0 * s);
    } else {
      d.scale.push_back(1.0);
      d.offset.push_back(0.0);
    }
  }

  std::vector<double> distinct = d.dx;
  std::sort(distinct.begin(), distinct.end());
  const auto n_distinct = static_cast<std::size_t>(
    std::unique(distinct.begin(), distinct.end()) - distinct.begin());
  if (n_distinct < static_cast<std::size_t>(spec.p) + 1)
    throw SparseRegionError("local fit: " + std::to_string(n_distinct) +
                            " distinct points within h of x0 = " +
                            std::to_string(x0) + ", need " +
                            std::to_string(spec.p + 1));
  return d;
}

LocalObjective
evaluate_local(const LocalDesign& design,
               const QuasiFamily& fam,
               std::span<const double> beta)
{
  const int p = design.p;
  if (beta.size() != static_cast<std::size_t>(p) + 1)
    throw std::invalid_argument("evaluate_local: beta has wrong length");
  const Eigen::VectorXd s = power_scale(design.h, p);
  Eigen::VectorXd theta(p + 1);
  for (int j = 0; j <= p; ++j)
    theta(j) = beta[static_cast<std::size_t>(j)] * s(j);
  auto e = eval_scaled(design, fam, theta, true);
  LocalObjective out;
  out.value = e.value;
  out.gradient = s.cwiseProduct(e.grad);
  out.hessian = -(s.asDiagonal() * e.neg_hess * s.asDiagonal());
  return out;
}

LocalFitResult
fit_local_design(const LocalDesign& design,
                 const QuasiFamily& fam,
                 FitMode mode,
                 const LocalFitOptions& opts)
{
  const int p = design.p;
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(p + 1);
  if (mode == FitMode::Unified) {
    theta(0) = design.guide_at_x0;
  } else {
    double sw = 0.0, swy = 0.0;
    for (std::size_t i = 0; i < design.y.size(); ++i) {
      sw += design.weight[i];
      swy += design.weight[i] * design.y[i];
    }
    theta(0) = fam.link(fam.clamp_mean(swy / sw));
  }

  auto to_vec = [](const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
  };

  LocalFitResult res;
  res.x0 = design.x0;
  res.effective_n = design.dx.size();

  ScaledEval cur = eval_scaled(design, fam, theta, true);
  bool converged = false;
  int it = 0;
  for (; it < opts.max_iterations; ++it) {
    const double gnorm = cur.grad.lpNorm<Eigen::Infinity>();
    if (gnorm <= opts.abs_tol || gnorm <= opts.rel_tol * (1.0 + std::abs(cur.value))) {
      converged = true;
      break;
    }
    Eigen::VectorXd step = solve_ascent(cur.neg_hess, cur.grad, opts.jitter);
    // Near the optimum the predicted gain is below the rounding noise of the
    // objective, so value comparisons are meaningless: take the full step.
    const double decrement = step.dot(cur.grad);
    if (step.allFinite() && decrement <= 1e-10 * (1.0 + std::abs(cur.value))) {
      theta += step;
      cur = eval_scaled(design, fam, theta, true);
      continue;
    }
    double t = 1.0;
    Eigen::VectorXd trial = theta + step;
    double trial_value = eval_value(design, fam, trial);
    for (int k = 0; k < opts.max_halvings && !(trial_value >= cur.value); ++k) {
      t *= 0.5;
      trial = theta + t * step;
      trial_value = eval_value(design, fam, trial);
    }
    if (!(trial_value >= cur.value)) {
      // Line search exhausted: accept only if we are at round-off level.
      if (gnorm <= 1e-6 * (1.0 + std::abs(cur.value))) {
        converged = true;
        break;
      }
      throw ConvergenceError("local fit: line search failed at x0 = " +
                               std::to_string(design.x0),
                             to_vec(theta));
    }
    theta = trial;
    cur = eval_scaled(design, fam, theta, true);
  }
  if (!converged)
    throw ConvergenceError("local fit: no convergence after " +
                             std::to_string(opts.max_iterations) +
                             " iterations at x0 = " + std::to_string(design.x0),
                           to_vec(theta));

  // One polishing Newton step once the tolerance is met.
  {
    Eigen::LLT<Eigen::MatrixXd> llt(cur.neg_hess);
    if (llt.info() == Eigen::Success) {
      Eigen::VectorXd step = llt.solve(cur.grad);
      Eigen::VectorXd trial = theta + step;
      ScaledEval next = eval_scaled(design, fam, trial, true);
      if (step.allFinite() && next.value >= cur.value - 1e-12 * (1.0 + std::abs(cur.value)) &&
          next.grad.lpNorm<Eigen::Infinity>() <= cur.grad.lpNorm<Eigen::Infinity>()) {
        theta = trial;
        cur = std::move(next);
      }
    }
  }

  const Eigen::VectorXd s = power_scale(design.h, p);
  res.beta.resize(static_cast<std::size_t>(p) + 1);
  for (int j = 0; j <= p; ++j)
    res.beta[static_cast<std::size_t>(j)] = theta(j) / s(j);
  res.eta_hat = res.beta[0];
  res.iterations = it;
  res.converged = true;
  res.objective = cur.value;
  Eigen::VectorXd inv = s.cwiseInverse();
  res.hessian = -(inv.asDiagonal() * cur.neg_hess * inv.asDiagonal());
  return res;
}

LocalFitResult
fit_local(const Dataset& data,
          const QuasiFamily& fam,
          const GuideFit& guide,
          const LocalFitSpec& spec,
          double x0,
          const LocalFitOptions& opts)
{
  LocalDesign d = build_local_design(data, guide, spec, x0);
  return fit_local_design(d, fam, spec.mode, opts);
}

std::vector<CurvePoint>
estimate_curve(const Dataset& data,
               const QuasiFamily& fam,
               const GuideFit& guide,
               const LocalFitSpec& spec,
               std::span<const double> grid,
               const CurveOptions& opts)
{
  if (grid.empty())
    throw EstimationError("estimate_curve: empty grid");
  spec.validate();
  std::vector<CurvePoint> out(grid.size());
  parallel_for(grid.size(), opts.threads, [&](std::size_t k) {
    CurvePoint& pt = out[k];
    pt.x = grid[k];
    try {
      pt.fit = fit_local(data, fam, guide, spec, pt.x, opts.fit);
      pt.status = PointStatus::Ok;
    } catch (const GuideZeroError& e) {
      pt.status = PointStatus::GuideZero;
      pt.message = e.what();
      if (opts.retry_gamma_zero) {
        LocalFitSpec s0 = spec;
        s0.gamma = 0.0;
        try {
          pt.fit = fit_local(data, fam, guide, s0, pt.x, opts.fit);
          pt.status = PointStatus::RetriedWithGammaZero;
          pt.message = "guide zero at x0; refitted with gamma = 0";
        } catch (const Error& e2) {
          pt.message = e2.what();
        }
      }
    } catch (const SparseRegionError& e) {
      pt.status = PointStatus::SparseRegion;
      pt.message = e.what();
    } catch (const ConvergenceError& e) {
      pt.status = PointStatus::NoConvergence;
      pt.message = e.what();
    } catch (const Error& e) {
      pt.status = PointStatus::Failed;
      pt.message = e.what();
    }
  });
  if (std::none_of(out.begin(), out.end(), [](const CurvePoint& c) { return c.ok(); }))
    throw EstimationError("estimate_curve: every grid point failed (first: " +
                          out.front().message + ")");
  return out;
}

Eigen::MatrixXd
derivative_transform(const GuideFit& guide, double x0, double gamma, int p)
{
  if (p > GuideSpec::kMaxOrder)
    throw CapabilityError("derivative_transform: guide derivatives of order " +
                          std::to_string(p) + " unavailable");
  auto derivs = guide.derivatives(x0, p);
  Jet g = Jet::from_derivatives(derivs);
  Jet inv = pow(g, -gamma);
  const double g_pow = pow(g, gamma).value();
  // A w = v with A_{j,i} = omega_{i,j} (i < j), unit diagonal.
  Eigen::MatrixXd A = Eigen::MatrixXd::Identity(p + 1, p + 1);
  for (int j = 1; j <= p; ++j)
    for (int i = 0; i < j; ++i)
      A(j, i) = binomial(j, i) * inv.derivative(static_cast<std::size_t>(j - i)) * g_pow;
  Eigen::MatrixXd L = Eigen::MatrixXd::Identity(p + 1, p + 1);
  // Forward substitution column by column.
  for (int c = 0; c <= p; ++c)
    for (int r = c + 1; r <= p; ++r) {
      double s = 0.0;
      for (int k = c; k < r; ++k)
        s += A(r, k) * L(k, c);
      L(r, c) = -s;
    }
  return L;
}

DerivativeEstimates
derivative_estimates(const LocalFitResult& res, const GuideFit& guide, double gamma)
{
  if (!res.converged)
    throw EstimationError("derivative_estimates: local fit did not converge");
  const int p = static_cast<int>(res.beta.size()) - 1;
  if (p > GuideSpec::kMaxOrder)
    throw CapabilityError("derivative_estimates: guide derivatives of order " +
                          std::to_string(p) + " unavailable");
  auto derivs = guide.derivatives(res.x0, p);
  Jet g = Jet::from_derivatives(derivs);
  Jet inv = pow(g, -gamma);
  // eta^{1-gamma} as eta * eta^{-gamma} keeps the identity exact for
  // negative guides.
  Jet pw = g * inv;
  const double g_pow = pow(g, gamma).value();

  DerivativeEstimates out;
  out.values.resize(static_cast<std::size_t>(p) + 1);
  out.values[0] = res.beta[0];
  for (int j = 1; j <= p; ++j) {
    double s = 0.0;
    for (int i = 0; i < j; ++i)
      s += out.values[static_cast<std::size_t>(i)] *
           inv.derivative(static_cast<std::size_t>(j - i)) * binomial(j, i);
    out.values[static_cast<std::size_t>(j)] =
      factorial(j) * res.beta[static_cast<std::size_t>(j)] - g_pow * s +
      g_pow * pw.derivative(static_cast<std::size_t>(j));
  }
  return out;
}

std::vector<double>
uniform_grid(double lo, double hi, std::size_t n)
{
  std::vector<double> g(n);
  if (n == 1) {
    g[0] = lo;
    return g;
  }
  for (std::size_t k = 0; k < n; ++k)
    g[k] = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(n - 1);
  return g;
}

} // namespace guidedql
