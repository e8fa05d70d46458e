#include "guidedql/quasi_family.hpp"

#include "guidedql/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace guidedql {

namespace {

double clamp_eta(double eta)
{
  return std::clamp(eta, -kEtaClamp, kEtaClamp);
}

double logistic(double eta)
{
  eta = clamp_eta(eta);
  double p = eta >= 0 ? 1.0 / (1.0 + std::exp(-eta))
                      : std::exp(eta) / (1.0 + std::exp(eta));
  return std::clamp(p, kProbClamp, 1.0 - kProbClamp);
}

// t * log(t) with the 0 * log(0) = 0 convention.
double xlogx(double t)
{
  return t > 0 ? t * std::log(t) : 0.0;
}

} // namespace

QuasiFamily::QuasiFamily(FamilyKind kind)
  : kind_(kind)
{}

QuasiFamily
QuasiFamily::from_string(std::string_view id)
{
  if (id == "gaussian")
    return QuasiFamily(FamilyKind::GaussianIdentity);
  if (id == "poisson")
    return QuasiFamily(FamilyKind::PoissonLog);
  if (id == "bernoulli")
    return QuasiFamily(FamilyKind::BernoulliLogit);
  throw ParseError("unknown family '" + std::string(id) +
                   "' (expected gaussian, poisson or bernoulli)");
}

std::string
QuasiFamily::name() const
{
  switch (kind_) {
    case FamilyKind::GaussianIdentity:
      return "gaussian-identity";
    case FamilyKind::PoissonLog:
      return "poisson-log";
    case FamilyKind::BernoulliLogit:
      return "bernoulli-logit";
  }
  return {};
}

std::string
QuasiFamily::id() const
{
  switch (kind_) {
    case FamilyKind::GaussianIdentity:
      return "gaussian";
    case FamilyKind::PoissonLog:
      return "poisson";
    case FamilyKind::BernoulliLogit:
      return "bernoulli";
  }
  return {};
}

bool
QuasiFamily::in_mean_domain(double mu) const noexcept
{
  if (!std::isfinite(mu))
    return false;
  switch (kind_) {
    case FamilyKind::GaussianIdentity:
      return true;
    case FamilyKind::PoissonLog:
      return mu > 0;
    case FamilyKind::BernoulliLogit:
      return mu > 0 && mu < 1;
  }
  return false;
}

bool
QuasiFamily::valid_response(double y) const noexcept
{
  if (!std::isfinite(y))
    return false;
  switch (kind_) {
    case FamilyKind::GaussianIdentity:
      return true;
    case FamilyKind::PoissonLog:
      return y >= 0;
    case FamilyKind::BernoulliLogit:
      return y >= 0 && y <= 1;
  }
  return false;
}

double
QuasiFamily::clamp_mean(double mu) const noexcept
{
  switch (kind_) {
    case FamilyKind::GaussianIdentity:
      return mu;
    case FamilyKind::PoissonLog:
      return std::max(mu, 0.1);
    case FamilyKind::BernoulliLogit:
      return std::clamp(mu, 0.01, 0.99);
  }
  return mu;
}

double
QuasiFamily::variance(double mu) const
{
  if (!in_mean_domain(mu))
    throw DomainError(name() + ": mean " + std::to_string(mu) +
                      " outside the mean domain");
  switch (kind_) {
    case FamilyKind::GaussianIdentity:
      return 1.0;
    case FamilyKind::PoissonLog:
      return mu;
    case FamilyKind::BernoulliLogit:
      return mu * (1.0 - mu);
  }
  return 1.0;
}

double
QuasiFamily::link(double mu) const
{
  if (!in_mean_domain(mu))
    throw DomainError(name() + ": mean " + std::to_string(mu) +
                      " outside the mean domain");
  switch (kind_) {
    case FamilyKind::GaussianIdentity:
      return mu;
    case FamilyKind::PoissonLog:
      return std::log(mu);
    case FamilyKind::BernoulliLogit:
      return std::log(mu / (1.0 - mu));
  }
  return mu;
}

double
QuasiFamily::link_derivative(double mu) const
{
  if (!in_mean_domain(mu))
    throw DomainError(name() + ": mean " + std::to_string(mu) +
                      " outside the mean domain");
  switch (kind_) {
    case FamilyKind::GaussianIdentity:
      return 1.0;
    case FamilyKind::PoissonLog:
      return 1.0 / mu;
    case FamilyKind::BernoulliLogit:
      return 1.0 / (mu * (1.0 - mu));
  }
  return 1.0;
}

double
QuasiFamily::inverse_link(double eta) const
{
  switch (kind_) {
    case FamilyKind::GaussianIdentity:
      return eta;
    case FamilyKind::PoissonLog:
      return std::exp(clamp_eta(eta));
    case FamilyKind::BernoulliLogit:
      return logistic(eta);
  }
  return eta;
}

double
QuasiFamily::inverse_link_derivative(double eta) const
{
  switch (kind_) {
    case FamilyKind::GaussianIdentity:
      return 1.0;
    case FamilyKind::PoissonLog:
      return std::exp(clamp_eta(eta));
    case FamilyKind::BernoulliLogit: {
      double p = logistic(eta);
      return p * (1.0 - p);
    }
  }
  return 1.0;
}

double
QuasiFamily::quasi_loglik(double mu, double y) const
{
  if (!in_mean_domain(mu))
    throw DomainError(name() + ": mean " + std::to_string(mu) +
                      " outside the mean domain");
  if (!valid_response(y))
    throw DomainError(name() + ": response " + std::to_string(y) +
                      " outside the response range");
  switch (kind_) {
    case FamilyKind::GaussianIdentity:
      return -0.5 * (y - mu) * (y - mu);
    case FamilyKind::PoissonLog:
      return (y > 0 ? y * std::log(mu / y) : 0.0) - (mu - y);
    case FamilyKind::BernoulliLogit:
      return y * std::log(mu) + (1.0 - y) * std::log1p(-mu) - xlogx(y) -
             xlogx(1.0 - y);
  }
  return 0.0;
}

double
QuasiFamily::score_q1(double eta, double y) const
{
  if (!std::isfinite(eta))
    throw DomainError(name() + ": non-finite linear predictor");
  return y - inverse_link(eta);
}

double
QuasiFamily::curvature_q2(double eta, double /*y*/) const
{
  if (!std::isfinite(eta))
    throw DomainError(name() + ": non-finite linear predictor");
  switch (kind_) {
    case FamilyKind::GaussianIdentity:
      return -1.0;
    case FamilyKind::PoissonLog:
      return -std::exp(clamp_eta(eta));
    case FamilyKind::BernoulliLogit: {
      double p = logistic(eta);
      return -p * (1.0 - p);
    }
  }
  return -1.0;
}

double
QuasiFamily::rho(double eta0) const
{
  if (!std::isfinite(eta0))
    throw DomainError(name() + ": non-finite linear predictor");
  double mu = inverse_link(eta0);
  double gp = link_derivative(mu);
  return 1.0 / (gp * gp * variance(mu));
}

double
QuasiFamily::unit_deviance(double eta, double y) const
{
  return -2.0 * quasi_loglik(inverse_link(eta), y);
}

void
Dataset::validate(const QuasiFamily& fam) const
{
  if (x.size() != y.size())
    throw DomainError("dataset: x and y have different lengths");
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]))
      throw DomainError("dataset: non-finite covariate at row " +
                        std::to_string(i));
    if (!fam.valid_response(y[i]))
      throw DomainError("dataset: response " + std::to_string(y[i]) +
                        " at row " + std::to_string(i) + " invalid for " +
                        fam.name());
  }
}

void
Dataset::sort_by_x()
{
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{ 0 });
  std::stable_sort(order.begin(), order.end(), [this](auto a, auto b) {
    return x[a] < x[b];
  });
  std::vector<double> xs(x.size()), ys(y.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    xs[i] = x[order[i]];
    ys[i] = y[order[i]];
  }
  x = std::move(xs);
  y = std::move(ys);
}

double
quasi_loglik(const QuasiFamily& fam, double mu, double y)
{
  return fam.quasi_loglik(mu, y);
}

double
score_q1(const QuasiFamily& fam, double eta, double y)
{
  return fam.score_q1(eta, y);
}

double
curvature_q2(const QuasiFamily& fam, double eta, double y)
{
  return fam.curvature_q2(eta, y);
}

double
rho(const QuasiFamily& fam, double eta0)
{
  return fam.rho(eta0);
}

} // namespace guidedql
