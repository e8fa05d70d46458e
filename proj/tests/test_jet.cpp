#include "doctest.h"

#include "guidedql/jet.hpp"

#include <cmath>
#include <vector>

using guidedql::Jet;

TEST_SUITE("jet")
{
  TEST_CASE("derivative round trip")
  {
    const std::vector<double> d{ 2.0, -1.0, 3.0, 0.5, -4.0 };
    Jet j = Jet::from_derivatives(d);
    for (std::size_t k = 0; k < d.size(); ++k)
      CHECK(j.derivative(k) == doctest::Approx(d[k]));
  }

  TEST_CASE("product follows the Leibniz rule")
  {
    // f = exp(x), g = sin(x) at x = 0.7
    const double x = 0.7;
    const std::vector<double> f{ std::exp(x), std::exp(x), std::exp(x), std::exp(x) };
    const std::vector<double> g{ std::sin(x), std::cos(x), -std::sin(x), -std::cos(x) };
    Jet p = Jet::from_derivatives(f) * Jet::from_derivatives(g);
    // (e^x sin x)''' = 2 e^x (cos x - sin x)
    CHECK(p.derivative(0) == doctest::Approx(std::exp(x) * std::sin(x)));
    CHECK(p.derivative(1) == doctest::Approx(std::exp(x) * (std::sin(x) + std::cos(x))));
    CHECK(p.derivative(2) == doctest::Approx(2.0 * std::exp(x) * std::cos(x)));
    CHECK(p.derivative(3) ==
          doctest::Approx(2.0 * std::exp(x) * (std::cos(x) - std::sin(x))));
  }

  TEST_CASE("real powers match closed forms")
  {
    // (1 + 2x)^a at x = 0.3: k-th derivative is a(a-1)...(a-k+1) 2^k (1.6)^(a-k)
    for (double a : { -1.5, -1.0, 0.5, 1.0, 2.7 }) {
      Jet f = Jet::from_derivatives(std::vector<double>{ 1.6, 2.0, 0.0, 0.0, 0.0 });
      Jet r = pow(f, a);
      double ff = 1.0;
      for (int k = 0; k <= 4; ++k) {
        CHECK(r.derivative(static_cast<std::size_t>(k)) ==
              doctest::Approx(ff * std::pow(2.0, k) * std::pow(1.6, a - k)).epsilon(1e-12));
        ff *= a - k;
      }
    }
  }

  TEST_CASE("power of a negative base")
  {
    Jet f = Jet::from_derivatives(std::vector<double>{ -2.0, 1.0, 0.0 });
    // integer exponent keeps the sign
    Jet sq = pow(f, 2.0);
    CHECK(sq.derivative(0) == doctest::Approx(4.0));
    CHECK(sq.derivative(1) == doctest::Approx(-4.0));
    CHECK(sq.derivative(2) == doctest::Approx(2.0));
    // non-integer exponent acts on |f|
    Jet h = pow(f, 0.5);
    CHECK(h.derivative(0) == doctest::Approx(std::sqrt(2.0)));
    CHECK(h.derivative(1) == doctest::Approx(-0.5 / std::sqrt(2.0)));
    CHECK_THROWS(pow(Jet::from_derivatives(std::vector<double>{ 0.0, 1.0 }), 0.5));
  }

  TEST_CASE("pow composes with product")
  {
    Jet f = Jet::from_derivatives(std::vector<double>{ 1.3, -0.4, 0.9, 0.2, -0.1 });
    Jet a = pow(f, 0.7) * pow(f, 0.3);
    for (std::size_t k = 0; k <= 4; ++k)
      CHECK(a.coeff(k) == doctest::Approx(f.coeff(k)).epsilon(1e-12));
  }

  TEST_CASE("order mismatch is rejected")
  {
    CHECK_THROWS_AS(Jet(2) + Jet(3), std::invalid_argument);
  }
}
