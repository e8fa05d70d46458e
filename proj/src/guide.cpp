#include "guidedql/guide.hpp"

#include "guidedql/errors.hpp"

#include <Eigen/Dense>

#include <charconv>
#include <cmath>
#include <numbers>
#include <sstream>

namespace guidedql {

namespace {

double parse_double(std::string_view s, std::string_view what)
{
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v))
    throw ParseError("guide: cannot parse " + std::string(what) + " from '" +
                     std::string(s) + "'");
  return v;
}

double falling_factorial(int m, int k)
{
  double r = 1.0;
  for (int i = 0; i < k; ++i)
    r *= static_cast<double>(m - i);
  return r;
}

} // namespace

GuideSpec
GuideSpec::polynomial(int degree)
{
  if (degree < 0)
    throw ParseError("guide: polynomial degree must be non-negative");
  GuideSpec s;
  s.kind = degree == 0 ? GuideKind::Constant : GuideKind::Polynomial;
  s.degree = degree;
  return s;
}

GuideSpec
GuideSpec::sinusoid(double omega, double phase)
{
  GuideSpec s;
  s.kind = GuideKind::Sinusoid;
  s.omega = omega;
  s.phase = phase;
  return s;
}

GuideSpec
GuideSpec::parse(std::string_view text)
{
  if (text == "const" || text == "constant")
    return constant();
  if (text.starts_with("poly:")) {
    auto rest = text.substr(5);
    int d = -1;
    auto [ptr, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), d);
    if (ec != std::errc{} || ptr != rest.data() + rest.size() || d < 0 || d > 10)
      throw ParseError("guide: bad polynomial degree in '" + std::string(text) +
                       "'");
    return polynomial(d);
  }
  if (text.starts_with("sin:")) {
    auto rest = text.substr(4);
    double omega = std::numeric_limits<double>::quiet_NaN();
    double phase = 0.0;
    while (!rest.empty()) {
      auto comma = rest.find(',');
      auto item = rest.substr(0, comma);
      rest = comma == std::string_view::npos ? std::string_view{}
                                             : rest.substr(comma + 1);
      auto eq = item.find('=');
      if (eq == std::string_view::npos)
        throw ParseError("guide: expected key=value in '" + std::string(text) +
                         "'");
      auto key = item.substr(0, eq);
      auto val = item.substr(eq + 1);
      if (key == "omega")
        omega = parse_double(val, "omega");
      else if (key == "phase")
        phase = parse_double(val, "phase");
      else
        throw ParseError("guide: unknown sinusoid key '" + std::string(key) +
                         "'");
    }
    if (std::isnan(omega) || omega == 0.0)
      throw ParseError("guide: sinusoid needs a non-zero omega");
    return sinusoid(omega, phase);
  }
  throw ParseError("guide: unrecognised spec '" + std::string(text) +
                   "' (expected const, poly:<d> or sin:omega=..,phase=..)");
}

std::string
GuideSpec::to_string() const
{
  std::ostringstream os;
  os.precision(17);
  switch (kind) {
    case GuideKind::Constant:
      return "const";
    case GuideKind::Polynomial:
      os << "poly:" << degree;
      break;
    case GuideKind::Sinusoid:
      os << "sin:omega=" << omega << ",phase=" << phase;
      break;
  }
  return os.str();
}

std::size_t
GuideSpec::num_coefficients() const
{
  switch (kind) {
    case GuideKind::Constant:
      return 1;
    case GuideKind::Polynomial:
      return static_cast<std::size_t>(degree) + 1;
    case GuideKind::Sinusoid:
      return 2;
  }
  return 1;
}

std::vector<double>
GuideSpec::basis(double x, int order) const
{
  if (order < 0 || order > kMaxOrder)
    throw CapabilityError("guide: derivative order " + std::to_string(order) +
                          " not available (max " + std::to_string(kMaxOrder) +
                          ")");
  std::vector<double> b(num_coefficients(), 0.0);
  switch (kind) {
    case GuideKind::Constant:
      b[0] = order == 0 ? 1.0 : 0.0;
      break;
    case GuideKind::Polynomial:
      for (int m = order; m <= degree; ++m)
        b[static_cast<std::size_t>(m)] =
          falling_factorial(m, order) * std::pow(x, m - order);
      break;
    case GuideKind::Sinusoid:
      b[0] = order == 0 ? 1.0 : 0.0;
      b[1] = std::pow(omega, order) *
             std::sin(omega * x + phase + order * std::numbers::pi / 2);
      break;
  }
  return b;
}

GuideFit
GuideFit::fixed(GuideSpec spec, std::vector<double> alpha)
{
  if (alpha.size() != spec.num_coefficients())
    throw std::invalid_argument("GuideFit::fixed: coefficient count mismatch");
  GuideFit f;
  f.spec = spec;
  f.alpha = std::move(alpha);
  return f;
}

GuideFit
GuideFit::unit()
{
  return fixed(GuideSpec::constant(), { 1.0 });
}

double
GuideFit::eval(double x, int order) const
{
  auto b = spec.basis(x, order);
  double s = 0.0;
  for (std::size_t k = 0; k < b.size(); ++k)
    s += alpha[k] * b[k];
  return s;
}

std::vector<double>
GuideFit::derivatives(double x, int max_order) const
{
  std::vector<double> d(static_cast<std::size_t>(max_order) + 1);
  for (int k = 0; k <= max_order; ++k)
    d[static_cast<std::size_t>(k)] = eval(x, k);
  return d;
}

double
eval_guide(const GuideFit& fit, double x, int order)
{
  return fit.eval(x, order);
}

GuideFit
fit_guide(const Dataset& data,
          const QuasiFamily& fam,
          const GuideSpec& spec,
          const GuideFitOptions& opts)
{
  data.validate(fam);
  const auto n = static_cast<Eigen::Index>(data.size());
  const auto q = static_cast<Eigen::Index>(spec.num_coefficients());
  if (n < q)
    throw SingularDesignError("guide: fewer observations than coefficients");

  Eigen::MatrixXd B(n, q);
  for (Eigen::Index i = 0; i < n; ++i) {
    auto b = spec.basis(data.x[static_cast<std::size_t>(i)]);
    for (Eigen::Index k = 0; k < q; ++k)
      B(i, k) = b[static_cast<std::size_t>(k)];
  }
  Eigen::Map<const Eigen::VectorXd> y(data.y.data(), n);

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(B);
  qr.setThreshold(1e-10);
  if (qr.rank() < q)
    throw SingularDesignError("guide: basis matrix is rank deficient");

  GuideFit fit;
  fit.spec = spec;

  if (fam.kind() == FamilyKind::GaussianIdentity) {
    Eigen::VectorXd a = qr.solve(y);
    fit.alpha.assign(a.data(), a.data() + q);
    double dev = 0.0;
    Eigen::VectorXd eta = B * a;
    for (Eigen::Index i = 0; i < n; ++i)
      dev += fam.unit_deviance(eta(i), y(i));
    fit.deviance = dev;
    return fit;
  }

  auto objective = [&](const Eigen::VectorXd& a) {
    Eigen::VectorXd eta = B * a;
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      s += fam.quasi_loglik(fam.inverse_link(eta(i)), y(i));
    return s;
  };

  // Fitted predictors pinned at the clamp mean the maximiser is at infinity.
  auto check_separation = [&](const Eigen::VectorXd& a) {
    if ((B * a).cwiseAbs().maxCoeff() >= kEtaClamp)
      throw ConvergenceError("guide: coefficients diverge (separation)",
                             std::vector<double>(a.data(), a.data() + a.size()));
  };

  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(q);
  double obj = objective(alpha);
  auto to_vec = [](const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
  };

  for (int it = 1; it <= opts.max_iterations; ++it) {
    Eigen::VectorXd eta = B * alpha;
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(q);
    Eigen::MatrixXd negH = Eigen::MatrixXd::Zero(q, q);
    for (Eigen::Index i = 0; i < n; ++i) {
      double q1 = fam.score_q1(eta(i), y(i));
      double w = -fam.curvature_q2(eta(i), y(i));
      grad.noalias() += q1 * B.row(i).transpose();
      negH.noalias() += w * B.row(i).transpose() * B.row(i);
    }
    fit.iterations = it;
    if (grad.lpNorm<Eigen::Infinity>() <= opts.gradient_tol * (1.0 + std::abs(obj))) {
      check_separation(alpha);
      fit.alpha = to_vec(alpha);
      fit.converged = true;
      double dev = 0.0;
      for (Eigen::Index i = 0; i < n; ++i)
        dev += fam.unit_deviance(eta(i), y(i));
      fit.deviance = dev;
      return fit;
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(negH);
    Eigen::VectorXd step = ldlt.solve(grad);
    if (!step.allFinite())
      throw ConvergenceError("guide: Newton step not finite", to_vec(alpha));
    // Predicted gain below the objective's rounding noise: take the full step.
    if (step.dot(grad) <= 1e-10 * (1.0 + std::abs(obj))) {
      alpha += step;
      obj = objective(alpha);
      continue;
    }

    double t = 1.0;
    Eigen::VectorXd trial = alpha + step;
    double trial_obj = objective(trial);
    for (int k = 0; k < opts.max_halvings && !(trial_obj >= obj); ++k) {
      t *= 0.5;
      trial = alpha + t * step;
      trial_obj = objective(trial);
    }
    if (!(trial_obj >= obj)) {
      // No ascent along the Newton direction: we are at numerical precision.
      check_separation(alpha);
      fit.alpha = to_vec(alpha);
      fit.converged = true;
      fit.deviance = -2.0 * obj;
      return fit;
    }
    alpha = trial;
    obj = trial_obj;
    if (alpha.norm() > opts.separation_norm)
      throw ConvergenceError("guide: coefficients diverge (separation)",
                             to_vec(alpha));
  }
  throw ConvergenceError("guide: no convergence after " +
                           std::to_string(opts.max_iterations) + " iterations",
                         to_vec(alpha));
}

} // namespace guidedql
