#include "doctest.h"
#include "oracles.hpp"

#include "guidedql/errors.hpp"
#include "guidedql/local_fit.hpp"

#include <cmath>
#include <numbers>
#include <random>

using namespace guidedql;

namespace {

Dataset
poisson_sample(std::size_t n, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ud(-2.0, 2.0);
  Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = ud(rng);
    std::poisson_distribution<int> pd(
      std::exp(3.0 * std::sin(std::numbers::pi * x / 4 - std::numbers::pi / 2) + 6.0));
    d.x.push_back(x);
    d.y.push_back(pd(rng));
  }
  d.sort_by_x();
  return d;
}

const GuideFit kSinGuide =
  GuideFit::fixed(GuideSpec::sinusoid(std::numbers::pi / 4, -std::numbers::pi / 2),
                  { 5.8, 2.7 });

} // namespace

TEST_SUITE("local_fit")
{
  TEST_CASE("spec validation")
  {
    CHECK_THROWS_AS(LocalFitSpec::vanilla(-1, 1.0).validate(), std::invalid_argument);
    CHECK_THROWS_AS(LocalFitSpec::vanilla(1, 0.0).validate(), std::invalid_argument);
    CHECK_THROWS_AS(LocalFitSpec::unified(1, 1.0, -0.5).validate(), std::invalid_argument);
    CHECK_NOTHROW(LocalFitSpec::unified(2, 0.3, 1.7).validate());
  }

  TEST_CASE("guide ratio power")
  {
    CHECK(guide_ratio_power(2.0, 0.0) == 1.0);
    CHECK(guide_ratio_power(2.0, 1.5) == doctest::Approx(std::pow(2.0, 1.5)));
    CHECK(guide_ratio_power(-2.0, 2.0) == doctest::Approx(4.0));
    CHECK(guide_ratio_power(-2.0, 1.0) == doctest::Approx(-2.0));
    CHECK(guide_ratio_power(-2.0, 0.5) == doctest::Approx(std::sqrt(2.0)));
  }

  TEST_CASE("gaussian vanilla fit is kernel weighted least squares")
  {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> nd(0.0, 0.3);
    Dataset d;
    for (int i = 0; i < 200; ++i) {
      d.x.push_back(i / 199.0);
      d.y.push_back(std::sin(6.0 * d.x.back()) + nd(rng));
    }
    for (int p : { 0, 1, 2, 3 }) {
      for (double x0 : { 0.0, 0.37, 0.9 }) {
        auto fit = fit_local(d, QuasiFamily(), GuideFit::unit(), LocalFitSpec::vanilla(p, 0.2), x0);
        auto ref = oracle::local_wls(d.x, d.y, x0, 0.2, p);
        CHECK(fit.converged);
        for (int k = 0; k <= p; ++k)
          CHECK(fit.beta[k] == doctest::Approx(ref[k]).epsilon(1e-9));
      }
    }
  }

  TEST_CASE("poisson vanilla fit matches IRLS")
  {
    auto d = poisson_sample(100, 2);
    QuasiFamily fam(FamilyKind::PoissonLog);
    for (double x0 : { -2.0, -0.4, 1.1, 2.0 }) {
      auto fit = fit_local(d, fam, GuideFit::unit(), LocalFitSpec::vanilla(1, 0.6), x0);
      auto ref = oracle::additive_fit(oracle::Fam::Poisson, d.x, d.y,
                                      [](double) { return 0.0; }, x0, 0.6, 1);
      CHECK(fit.eta_hat == doctest::Approx(ref).epsilon(1e-9));
    }
  }

  TEST_CASE("gamma = 0 is the additive correction")
  {
    auto d = poisson_sample(100, 8);
    QuasiFamily fam(FamilyKind::PoissonLog);
    auto g = [](double x) { return kSinGuide.eval(x); };
    for (double x0 : { -1.9, -0.5, 0.3, 1.7 }) {
      auto fit = fit_local(d, fam, kSinGuide, LocalFitSpec::unified(1, 0.8, 0.0), x0);
      CHECK(fit.eta_hat ==
            doctest::Approx(oracle::additive_fit(oracle::Fam::Poisson, d.x, d.y, g, x0, 0.8, 1))
              .epsilon(1e-9));
    }
  }

  TEST_CASE("gamma = 1 is the multiplicative correction")
  {
    auto d = poisson_sample(100, 9);
    QuasiFamily fam(FamilyKind::PoissonLog);
    auto g = [](double x) { return kSinGuide.eval(x); };
    for (double x0 : { -1.9, -0.5, 0.3, 1.7 }) {
      auto fit = fit_local(d, fam, kSinGuide, LocalFitSpec::unified(2, 0.8, 1.0), x0);
      CHECK(fit.eta_hat ==
            doctest::Approx(
              oracle::multiplicative_fit(oracle::Fam::Poisson, d.x, d.y, g, x0, 0.8, 2))
              .epsilon(1e-9));
    }
  }

  TEST_CASE("constant guide reduces to the vanilla fit for every gamma")
  {
    auto d = poisson_sample(100, 4);
    QuasiFamily fam(FamilyKind::PoissonLog);
    auto c = GuideFit::fixed(GuideSpec::constant(), { 6.5 });
    for (double gamma : { 0.0, 0.7, 1.0, 3.0 }) {
      auto v = fit_local(d, fam, GuideFit::unit(), LocalFitSpec::vanilla(1, 0.5), 0.2);
      auto u = fit_local(d, fam, c, LocalFitSpec::unified(1, 0.5, gamma), 0.2);
      CHECK(u.eta_hat == doctest::Approx(v.eta_hat).epsilon(1e-10));
      CHECK(u.beta[1] == doctest::Approx(v.beta[1]).epsilon(1e-8));
    }
  }

  TEST_CASE("local objective derivatives")
  {
    auto d = poisson_sample(100, 6);
    QuasiFamily fam(FamilyKind::PoissonLog);
    auto design = build_local_design(d, kSinGuide, LocalFitSpec::unified(2, 0.9, 1.4), 0.1);
    const std::vector<double> beta{ 3.2, 0.6, -0.2 };
    auto obj = evaluate_local(design, fam, beta);
    for (int k = 0; k < 3; ++k) {
      auto f = [&](double t) {
        auto b = beta;
        b[k] = t;
        return evaluate_local(design, fam, b).value;
      };
      CHECK(obj.gradient(k) == doctest::Approx(oracle::diff(f, beta[k], 1e-6)).epsilon(1e-5));
      for (int l = 0; l < 3; ++l) {
        auto g = [&](double t) {
          auto b = beta;
          b[l] = t;
          return evaluate_local(design, fam, b).gradient(k);
        };
        CHECK(obj.hessian(k, l) ==
              doctest::Approx(oracle::diff(g, beta[l], 1e-6)).epsilon(1e-5));
      }
    }
  }

  TEST_CASE("noiseless data in the guided model class are recovered exactly")
  {
    // eta0 = eta + eta^gamma phi with phi a polynomial of degree p.
    const auto guide = GuideFit::fixed(GuideSpec::polynomial(1), { 2.0, 0.5 });
    const double gamma = 1.5;
    auto phi = [](double x) { return 0.3 - 0.2 * x + 0.1 * x * x; };
    auto eta0 = [&](double x) {
      const double e = guide.eval(x);
      return e + std::pow(e, gamma) * phi(x);
    };
    Dataset d;
    for (int i = 0; i <= 100; ++i) {
      d.x.push_back(0.02 * i);
      d.y.push_back(eta0(d.x.back()));
    }
    for (double x0 : { 0.0, 0.8, 1.5 }) {
      auto fit = fit_local(d, QuasiFamily(), guide, LocalFitSpec::unified(2, 0.5, gamma), x0);
      auto est = derivative_estimates(fit, guide, gamma);
      CHECK(est.values[0] == doctest::Approx(eta0(x0)).epsilon(1e-10));
      CHECK(est.values[1] == doctest::Approx(oracle::diff(eta0, x0, 1e-5)).epsilon(1e-8));
      CHECK(est.values[2] == doctest::Approx(oracle::diff(eta0, x0, 1e-4, 2)).epsilon(1e-6));
    }
  }

  TEST_CASE("derivative transform inverts the chain-sum matrix")
  {
    const double gamma = 1.3, x0 = 0.4;
    const int p = 3;
    auto L = derivative_transform(kSinGuide, x0, gamma, p);
    // A_{j,i} = C(j,i) (eta^{-gamma})^{(j-i)}(x0) eta(x0)^gamma, unit diagonal.
    auto inv_pow = [&](double x) { return std::pow(kSinGuide.eval(x), -gamma); };
    const double eg = std::pow(kSinGuide.eval(x0), gamma);
    std::vector<double> dinv{ inv_pow(x0), oracle::diff(inv_pow, x0, 1e-4),
                              oracle::diff(inv_pow, x0, 1e-4, 2) };
    {
      auto d2 = [&](double x) { return oracle::diff(inv_pow, x, 1e-3, 2); };
      dinv.push_back(oracle::diff(d2, x0, 1e-3));
    }
    const double binom[4][4] = { { 1, 0, 0, 0 }, { 1, 1, 0, 0 }, { 1, 2, 1, 0 }, { 1, 3, 3, 1 } };
    Eigen::MatrixXd A = Eigen::MatrixXd::Identity(p + 1, p + 1);
    for (int j = 1; j <= p; ++j)
      for (int i = 0; i < j; ++i)
        A(j, i) = binom[j][i] * dinv[j - i] * eg;
    Eigen::MatrixXd prod = L * A;
    CHECK((prod - Eigen::MatrixXd::Identity(p + 1, p + 1)).cwiseAbs().maxCoeff() < 1e-5);
    for (int r = 0; r <= p; ++r) {
      CHECK(L(r, r) == 1.0);
      for (int c = r + 1; c <= p; ++c)
        CHECK(L(r, c) == 0.0);
    }
  }

  TEST_CASE("derivative estimates move with L times the scaled coefficients")
  {
    const double gamma = 0.6;
    LocalFitResult res;
    res.x0 = -0.3;
    res.converged = true;
    res.beta = { 4.0, 0.2, -0.1, 0.05 };
    auto base = derivative_estimates(res, kSinGuide, gamma);
    auto L = derivative_transform(kSinGuide, res.x0, gamma, 3);
    const double fact[4] = { 1, 1, 2, 6 };
    for (int k = 0; k < 4; ++k) {
      auto r2 = res;
      r2.beta[k] += 0.01;
      auto moved = derivative_estimates(r2, kSinGuide, gamma);
      for (int j = 0; j < 4; ++j)
        CHECK(moved.values[j] - base.values[j] ==
              doctest::Approx(L(j, k) * fact[k] * 0.01).epsilon(1e-8).scale(1e-12));
    }
  }

  TEST_CASE("vanilla derivative estimates are factorial-scaled coefficients")
  {
    LocalFitResult res;
    res.converged = true;
    res.beta = { 1.0, 2.0, 3.0 };
    auto est = derivative_estimates(res, GuideFit::unit(), 0.0);
    CHECK(est.values == std::vector<double>{ 1.0, 2.0, 6.0 });
  }

  TEST_CASE("sparse and guide-zero points")
  {
    Dataset d{ { 0.0, 0.1, 0.2, 3.0 }, { 1.0, 2.0, 1.0, 4.0 } };
    QuasiFamily fam;
    CHECK_THROWS_AS(fit_local(d, fam, GuideFit::unit(), LocalFitSpec::vanilla(1, 0.5), 3.0),
                    SparseRegionError);
    auto lin = GuideFit::fixed(GuideSpec::polynomial(1), { 0.0, 1.0 });
    CHECK_THROWS_AS(fit_local(d, fam, lin, LocalFitSpec::unified(1, 0.5, 1.0), 0.0),
                    GuideZeroError);
    // additive fits never divide by the guide
    CHECK_NOTHROW(fit_local(d, fam, lin, LocalFitSpec::unified(1, 0.5, 0.0), 0.0));

    const std::vector<double> grid{ 0.0, 0.1, 1.5 };
    auto curve = estimate_curve(d, fam, lin, LocalFitSpec::unified(1, 0.5, 1.0), grid);
    CHECK(curve[0].status == PointStatus::RetriedWithGammaZero);
    CHECK(curve[0].ok());
    CHECK(curve[1].status == PointStatus::Ok);
    CHECK(curve[2].status == PointStatus::SparseRegion);
    CHECK_FALSE(curve[2].ok());

    CurveOptions no_retry;
    no_retry.retry_gamma_zero = false;
    auto c2 = estimate_curve(d, fam, lin, LocalFitSpec::unified(1, 0.5, 1.0), grid, no_retry);
    CHECK(c2[0].status == PointStatus::GuideZero);
    CHECK_FALSE(c2[0].ok());

    const std::vector<double> far{ 10.0, 11.0 };
    CHECK_THROWS_AS(estimate_curve(d, fam, GuideFit::unit(), LocalFitSpec::vanilla(1, 0.5), far),
                    EstimationError);
  }

  TEST_CASE("curve estimates do not depend on the thread count")
  {
    auto d = poisson_sample(100, 12);
    QuasiFamily fam(FamilyKind::PoissonLog);
    auto grid = uniform_grid(-2.0, 2.0, 41);
    CurveOptions one, many;
    many.threads = 4;
    auto a = estimate_curve(d, fam, kSinGuide, LocalFitSpec::unified(1, 0.7, 0.5), grid, one);
    auto b = estimate_curve(d, fam, kSinGuide, LocalFitSpec::unified(1, 0.7, 0.5), grid, many);
    REQUIRE(a.size() == b.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
      REQUIRE(a[k].ok() == b[k].ok());
      if (a[k].ok())
        CHECK(a[k].fit->eta_hat == b[k].fit->eta_hat);
    }
  }

  TEST_CASE("uniform grid")
  {
    auto g = uniform_grid(-1.0, 1.0, 5);
    CHECK(g == std::vector<double>{ -1.0, -0.5, 0.0, 0.5, 1.0 });
    CHECK(uniform_grid(2.0, 3.0, 1) == std::vector<double>{ 2.0 });
  }
}
