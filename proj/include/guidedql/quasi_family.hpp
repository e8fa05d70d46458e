#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace guidedql {

//! Bounds applied before exponentiation / logistic transforms.
inline constexpr double kEtaClamp = 35.0;
inline constexpr double kProbClamp = 1e-12;

enum class FamilyKind
{
  GaussianIdentity,
  PoissonLog,
  BernoulliLogit,
};

//! A response model given by its variance function V and link g.
//!
//! Q(mu, y) is the quasi-likelihood integral of (y - w) / V(w) from y to mu,
//! normalised so that Q(y, y) = 0. q1 and q2 are the first two derivatives
//! of Q(g^{-1}(eta), y) with respect to eta.
class QuasiFamily
{
public:
  explicit QuasiFamily(FamilyKind kind = FamilyKind::GaussianIdentity);

  //! Accepts "gaussian", "poisson" or "bernoulli" (case sensitive).
  static QuasiFamily from_string(std::string_view id);

  FamilyKind kind() const noexcept { return kind_; }
  std::string name() const;
  std::string id() const;
  bool canonical() const noexcept { return true; }

  double variance(double mu) const;
  double link(double mu) const;
  double link_derivative(double mu) const;
  double inverse_link(double eta) const;
  //! d mu / d eta.
  double inverse_link_derivative(double eta) const;

  bool in_mean_domain(double mu) const noexcept;
  bool valid_response(double y) const noexcept;
  //! A point of the mean domain close to mu, used for starting values.
  double clamp_mean(double mu) const noexcept;

  double quasi_loglik(double mu, double y) const;
  double score_q1(double eta, double y) const;
  double curvature_q2(double eta, double y) const;
  //! rho = 1 / (g'(mu)^2 V(mu)) at mu = g^{-1}(eta0).
  double rho(double eta0) const;

  //! Deviance contribution -2 Q(g^{-1}(eta), y).
  double unit_deviance(double eta, double y) const;

private:
  FamilyKind kind_;
};

//! Paired covariate / response observations.
struct Dataset
{
  std::vector<double> x;
  std::vector<double> y;

  std::size_t size() const noexcept { return x.size(); }
  //! Throws DomainError on unequal lengths or invalid responses.
  void validate(const QuasiFamily& fam) const;
  //! Reorders rows so that x is ascending (stable).
  void sort_by_x();
};

// Free-function spellings of the family operations.
double quasi_loglik(const QuasiFamily& fam, double mu, double y);
double score_q1(const QuasiFamily& fam, double eta, double y);
double curvature_q2(const QuasiFamily& fam, double eta, double y);
double rho(const QuasiFamily& fam, double eta0);

} // namespace guidedql
