#pragma once

#include "guidedql/guide.hpp"
#include "guidedql/quasi_family.hpp"

#include <Eigen/Dense>

#include <array>
#include <vector>

namespace guidedql {

//! Integration region [lo, hi] within the kernel support [-1, 1].
struct KernelRegion
{
  double lo = -1.0;
  double hi = 1.0;

  static KernelRegion interior() { return {}; }
  //! Throws std::invalid_argument unless -1 <= lo < hi <= 1.
  static KernelRegion make(double lo, double hi);
  //! Region of z = (x - x0) / h for x in [support_lo, support_hi].
  static KernelRegion at(double x0, double h, double support_lo, double support_hi);

  bool is_interior() const noexcept { return lo == -1.0 && hi == 1.0; }
};

//! 64-point Gauss-Legendre rule on [-1, 1].
struct GaussLegendre64
{
  std::array<double, 64> nodes;
  std::array<double, 64> weights;

  static const GaussLegendre64& instance();

  //! Integral of f over [lo, hi].
  template<class F>
  double integrate(F&& f, double lo, double hi) const
  {
    const double half = 0.5 * (hi - lo), mid = 0.5 * (hi + lo);
    double s = 0.0;
    for (std::size_t k = 0; k < nodes.size(); ++k)
      s += weights[k] * f(mid + half * nodes[k]);
    return half * s;
  }
};

//! nu_l(A) = integral over A of z^l K(z).
double nu_moment(int l, const KernelRegion& region);

//! (p+1) x (p+1) matrix with entries nu_{i+j}(A).
Eigen::MatrixXd moment_matrix(int p, const KernelRegion& region);

//! Equivalent kernel r! |M_{r,p}(z; A)| / |N_p(A)| K(z).
//!
//! Throws SingularMomentError when N_p(A) is singular.
double equivalent_kernel(int r, int p, double z, const KernelRegion& region);

//! Integral over A of z^q K_{r,p}(z; A).
double equivalent_kernel_moment(int q, int r, int p, const KernelRegion& region);

//! Integral over A of K_{r,p}(z; A) K_{s,p}(z; A).
double equivalent_kernel_product(int r, int s, int p, const KernelRegion& region);

//! Integral over A of K(z)^2.
double kernel_square_integral(const KernelRegion& region);

//! sigma^2_{r,s,p}(x0) = var(Y|x0) g'(mu)^2 f_X(x0)^{-1} int K_{r,p} K_{s,p},
//! with var(Y|x0) g'(mu)^2 = 1 / rho for a correctly specified variance.
double asymptotic_sigma2(int r,
                         int s,
                         int p,
                         const QuasiFamily& fam,
                         double eta0_x0,
                         double fx_x0,
                         const KernelRegion& region = {});

enum class BiasBranch
{
  Odd,
  Even,
};

//! Odd when p - j is odd.
BiasBranch bias_branch(int p, int j);

//! Everything the leading-order bias needs at one point.
struct BiasInputs
{
  QuasiFamily fam;
  GuideFit guide = GuideFit::unit();
  double gamma = 0.0;
  int p = 1;
  int j = 0;
  double h = 0.1;
  double x0 = 0.0;
  //! eta_0^{(k)}(x0) for k = 0..p+1 (odd branch) or 0..p+2 (even branch).
  std::vector<double> eta0_derivs;
  //! Design density and its derivative at x0 (even branch only).
  double fx = 1.0;
  double fx_prime = 0.0;
  KernelRegion region;
};

//! Derivatives 0..order of phi = (eta_0 - eta(., alpha)) / eta(., alpha)^gamma at x0.
std::vector<double> correction_derivatives(const BiasInputs& in, int order);

//! Leading-order bias of the j-th derivative estimate (the {1 + O(h)}
//! factor is dropped). Throws CapabilityError if eta0_derivs is too short.
double theoretical_bias(const BiasInputs& in);

struct AsymptoticReport
{
  std::vector<double> nu; // l = 0..2p+2
  double sigma2 = 0.0;    // sigma^2_{j,j,p}
  double bias = 0.0;
  BiasBranch branch = BiasBranch::Odd;
};

AsymptoticReport asymptotic_report(const BiasInputs& in);

} // namespace guidedql
