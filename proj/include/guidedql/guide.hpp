#pragma once

#include "guidedql/quasi_family.hpp"

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace guidedql {

enum class GuideKind
{
  Constant,
  Polynomial,
  Sinusoid,
};

//! A guide family linear in its coefficients: eta(x, alpha) = sum_k alpha_k b_k(x).
//!
//! Polynomial(d) uses the monomials 1, x, ..., x^d. Sinusoid uses
//! 1 and sin(omega x + phase) with omega and phase fixed, so that the global
//! fit stays concave in alpha.
struct GuideSpec
{
  GuideKind kind = GuideKind::Constant;
  int degree = 0;
  double omega = 0.0;
  double phase = 0.0;

  //! Highest x-derivative order the basis is willing to report.
  static constexpr int kMaxOrder = 16;

  static GuideSpec constant() { return {}; }
  static GuideSpec polynomial(int degree);
  static GuideSpec sinusoid(double omega, double phase);

  //! Parses "const", "poly:<d>" or "sin:omega=<w>,phase=<p>".
  static GuideSpec parse(std::string_view text);
  std::string to_string() const;

  std::size_t num_coefficients() const;

  //! order-th x-derivative of every basis function at x.
  std::vector<double> basis(double x, int order = 0) const;
};

//! A guide family together with its coefficients.
struct GuideFit
{
  GuideSpec spec;
  std::vector<double> alpha;
  bool converged = true;
  double deviance = 0.0;
  int iterations = 0;

  //! Wraps known coefficients without fitting.
  static GuideFit fixed(GuideSpec spec, std::vector<double> alpha);
  //! The constant guide eta(x) = 1.
  static GuideFit unit();

  //! order-th x-derivative of eta(x, alpha_hat).
  double eval(double x, int order = 0) const;
  //! Derivatives 0..max_order at x.
  std::vector<double> derivatives(double x, int max_order) const;
};

double eval_guide(const GuideFit& fit, double x, int order = 0);

struct GuideFitOptions
{
  int max_iterations = 100;
  int max_halvings = 30;
  double gradient_tol = 1e-10;
  double separation_norm = 1e4;
};

//! Maximises sum_i Q(g^{-1}(eta(X_i, alpha)), Y_i) over alpha by damped Newton.
//!
//! Throws SingularDesignError if the basis matrix is rank deficient and
//! ConvergenceError (with the last iterate) on separation or iteration
//! exhaustion.
GuideFit fit_guide(const Dataset& data,
                   const QuasiFamily& fam,
                   const GuideSpec& spec,
                   const GuideFitOptions& opts = {});

} // namespace guidedql
