#include "guidedql/kernel_theory.hpp"

#include "guidedql/errors.hpp"
#include "guidedql/jet.hpp"
#include "guidedql/local_fit.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace guidedql {

namespace {

double factorial(int n)
{
  double r = 1.0;
  for (int i = 2; i <= n; ++i)
    r *= i;
  return r;
}

void check_degree(int p)
{
  if (p < 0 || p > 5)
    throw std::invalid_argument("kernel theory: degree p must be in [0, 5]");
}

// Determinant of N_p with column r replaced by (1, z, ..., z^p).
double replaced_determinant(const Eigen::MatrixXd& N, int r, double z)
{
  Eigen::MatrixXd M = N;
  double pw = 1.0;
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    M(i, r) = pw;
    pw *= z;
  }
  return M.partialPivLu().determinant();
}

double checked_determinant(const Eigen::MatrixXd& N)
{
  Eigen::FullPivLU<Eigen::MatrixXd> lu(N);
  if (lu.rank() < N.rows())
    throw SingularMomentError("kernel theory: moment matrix is singular");
  return lu.determinant();
}

// K_{r,p} evaluated through cofactor expansion, reusing N_p and |N_p|.
struct EquivalentKernel
{
  int r;
  Eigen::MatrixXd N;
  double detN;
  double scale;

  EquivalentKernel(int r_, int p, const KernelRegion& region)
    : r(r_)
    , N(moment_matrix(p, region))
    , detN(checked_determinant(N))
    , scale(factorial(r_))
  {
    if (r_ < 0 || r_ > p)
      throw std::invalid_argument("equivalent kernel: need 0 <= r <= p");
  }

  double operator()(double z) const
  {
    return scale * replaced_determinant(N, r, z) / detN * epanechnikov(z);
  }
};

} // namespace

KernelRegion
KernelRegion::make(double lo, double hi)
{
  if (!(lo >= -1.0 && lo < hi && hi <= 1.0))
    throw std::invalid_argument("KernelRegion: need -1 <= lo < hi <= 1");
  return { lo, hi };
}

KernelRegion
KernelRegion::at(double x0, double h, double support_lo, double support_hi)
{
  const double lo = std::max(-1.0, (support_lo - x0) / h);
  const double hi = std::min(1.0, (support_hi - x0) / h);
  return make(lo, hi);
}

const GaussLegendre64&
GaussLegendre64::instance()
{
  static const GaussLegendre64 rule = [] {
    GaussLegendre64 g{};
    constexpr int n = 64;
    for (int i = 0; i < n / 2; ++i) {
      double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
      double dp = 0.0;
      for (int it = 0; it < 100; ++it) {
        double p0 = 1.0, p1 = x;
        for (int k = 2; k <= n; ++k) {
          double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
          p0 = p1;
          p1 = pk;
        }
        dp = n * (x * p1 - p0) / (x * x - 1.0);
        double dx = p1 / dp;
        x -= dx;
        if (std::abs(dx) < 1e-16)
          break;
      }
      // Recompute the derivative at the converged node.
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = pk;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      double w = 2.0 / ((1.0 - x * x) * dp * dp);
      g.nodes[static_cast<std::size_t>(i)] = -x;
      g.nodes[static_cast<std::size_t>(n - 1 - i)] = x;
      g.weights[static_cast<std::size_t>(i)] = w;
      g.weights[static_cast<std::size_t>(n - 1 - i)] = w;
    }
    return g;
  }();
  return rule;
}

double
nu_moment(int l, const KernelRegion& region)
{
  if (l < 0)
    throw std::invalid_argument("nu_moment: l must be non-negative");
  return GaussLegendre64::instance().integrate(
    [l](double z) { return std::pow(z, l) * epanechnikov(z); }, region.lo, region.hi);
}

Eigen::MatrixXd
moment_matrix(int p, const KernelRegion& region)
{
  check_degree(p);
  std::vector<double> nu(static_cast<std::size_t>(2 * p) + 1);
  for (int l = 0; l <= 2 * p; ++l)
    nu[static_cast<std::size_t>(l)] = nu_moment(l, region);
  Eigen::MatrixXd N(p + 1, p + 1);
  for (int i = 0; i <= p; ++i)
    for (int j = 0; j <= p; ++j)
      N(i, j) = nu[static_cast<std::size_t>(i + j)];
  return N;
}

double
equivalent_kernel(int r, int p, double z, const KernelRegion& region)
{
  check_degree(p);
  return EquivalentKernel(r, p, region)(z);
}

double
equivalent_kernel_moment(int q, int r, int p, const KernelRegion& region)
{
  check_degree(p);
  EquivalentKernel k(r, p, region);
  return GaussLegendre64::instance().integrate(
    [&](double z) { return std::pow(z, q) * k(z); }, region.lo, region.hi);
}

double
equivalent_kernel_product(int r, int s, int p, const KernelRegion& region)
{
  check_degree(p);
  EquivalentKernel kr(r, p, region), ks(s, p, region);
  return GaussLegendre64::instance().integrate(
    [&](double z) { return kr(z) * ks(z); }, region.lo, region.hi);
}

double
kernel_square_integral(const KernelRegion& region)
{
  return GaussLegendre64::instance().integrate(
    [](double z) {
      double k = epanechnikov(z);
      return k * k;
    },
    region.lo,
    region.hi);
}

double
asymptotic_sigma2(int r,
                  int s,
                  int p,
                  const QuasiFamily& fam,
                  double eta0_x0,
                  double fx_x0,
                  const KernelRegion& region)
{
  if (!(fx_x0 > 0))
    throw std::invalid_argument("asymptotic_sigma2: density must be positive");
  return equivalent_kernel_product(r, s, p, region) / (fam.rho(eta0_x0) * fx_x0);
}

BiasBranch
bias_branch(int p, int j)
{
  if (p - j <= 0)
    throw std::invalid_argument("bias: need p - j > 0");
  return (p - j) % 2 == 1 ? BiasBranch::Odd : BiasBranch::Even;
}

std::vector<double>
correction_derivatives(const BiasInputs& in, int order)
{
  if (in.eta0_derivs.size() < static_cast<std::size_t>(order) + 1)
    throw CapabilityError("bias: need eta_0 derivatives up to order " +
                          std::to_string(order));
  if (order > GuideSpec::kMaxOrder)
    throw CapabilityError("bias: guide derivatives of order " +
                          std::to_string(order) + " unavailable");
  std::vector<double> e0(in.eta0_derivs.begin(),
                         in.eta0_derivs.begin() + order + 1);
  Jet eta0 = Jet::from_derivatives(e0);
  Jet g = Jet::from_derivatives(in.guide.derivatives(in.x0, order));
  Jet phi = (eta0 - g) * pow(g, -in.gamma);
  std::vector<double> out(static_cast<std::size_t>(order) + 1);
  for (int k = 0; k <= order; ++k)
    out[static_cast<std::size_t>(k)] = phi.derivative(static_cast<std::size_t>(k));
  return out;
}

double
theoretical_bias(const BiasInputs& in)
{
  const int p = in.p, j = in.j;
  check_degree(p);
  if (j < 0)
    throw std::invalid_argument("bias: j must be non-negative");
  const BiasBranch branch = bias_branch(p, j);
  const double g0 = in.guide.eval(in.x0);
  if (in.gamma > 0 && g0 == 0.0)
    throw GuideZeroError("bias: guide vanishes at x0");
  const double g_pow = guide_ratio_power(g0, in.gamma);

  if (branch == BiasBranch::Odd) {
    auto phi = correction_derivatives(in, p + 1);
    return std::pow(in.h, p - j + 1) / factorial(p + 1) *
           phi[static_cast<std::size_t>(p + 1)] * g_pow *
           equivalent_kernel_moment(p + 1, j, p, in.region);
  }

  auto phi = correction_derivatives(in, p + 2);
  // (rho eta^{2 gamma} f_X)' / (rho eta^gamma f_X) at x0, with rho(x) = rho(eta_0(x)).
  const double eta0 = in.eta0_derivs[0];
  const double mu = in.fam.inverse_link(eta0);
  const double rho0 = in.fam.rho(eta0);
  // Canonical links: rho = V(mu(eta)), so d rho / d eta = V'(mu) V(mu).
  double dvdmu = 0.0;
  switch (in.fam.kind()) {
    case FamilyKind::GaussianIdentity:
      dvdmu = 0.0;
      break;
    case FamilyKind::PoissonLog:
      dvdmu = 1.0;
      break;
    case FamilyKind::BernoulliLogit:
      dvdmu = 1.0 - 2.0 * mu;
      break;
  }
  const double rho_prime = dvdmu * in.fam.variance(mu) * in.eta0_derivs[1];
  const double rho_vals[] = { rho0, rho_prime };
  const double f_vals[] = { in.fx, in.fx_prime };
  Jet rho_j = Jet::from_derivatives(rho_vals);
  Jet f_j = Jet::from_derivatives(f_vals);
  Jet g1 = Jet::from_derivatives(in.guide.derivatives(in.x0, 1));
  Jet num = rho_j * pow(g1, 2.0 * in.gamma) * f_j;
  Jet den = rho_j * pow(g1, in.gamma) * f_j;
  const double ratio = num.derivative(1) / den.value();

  const double m_p2 = equivalent_kernel_moment(p + 2, j, p, in.region);
  const double m_p1_prev =
    j > 0 ? equivalent_kernel_moment(p + 1, j - 1, p, in.region) : 0.0;
  const double first = m_p2 * g_pow / factorial(p + 2) * phi[static_cast<std::size_t>(p + 2)];
  const double second = (m_p2 - j * m_p1_prev) / factorial(p + 1) *
                        phi[static_cast<std::size_t>(p + 1)] * ratio;
  return (first + second) * std::pow(in.h, p - j + 2);
}

AsymptoticReport
asymptotic_report(const BiasInputs& in)
{
  AsymptoticReport rep;
  rep.nu.resize(static_cast<std::size_t>(2 * in.p) + 3);
  for (int l = 0; l <= 2 * in.p + 2; ++l)
    rep.nu[static_cast<std::size_t>(l)] = nu_moment(l, in.region);
  rep.sigma2 = asymptotic_sigma2(in.j, in.j, in.p, in.fam, in.eta0_derivs.at(0), in.fx,
                                 in.region);
  rep.branch = bias_branch(in.p, in.j);
  rep.bias = theoretical_bias(in);
  return rep;
}

} // namespace guidedql
