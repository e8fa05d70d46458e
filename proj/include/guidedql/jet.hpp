#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace guidedql {

//! Truncated Taylor expansion of a function around a point.
//!
//! Stores normalised coefficients c_k = f^{(k)}(x0) / k! for k = 0..order.
//! Arithmetic is exact up to the truncation order, which makes it a small
//! forward-mode tool for derivatives of products and real powers.
class Jet
{
public:
  Jet() = default;

  explicit Jet(std::size_t order, double value = 0.0)
    : c_(order + 1, 0.0)
  {
    c_[0] = value;
  }

  //! Builds a jet from plain derivatives f, f', f'', ...
  static Jet from_derivatives(std::span<const double> derivs)
  {
    if (derivs.empty())
      throw std::invalid_argument("Jet: need at least the function value");
    Jet j(derivs.size() - 1);
    double fact = 1.0;
    for (std::size_t k = 0; k < derivs.size(); ++k) {
      if (k > 0)
        fact *= static_cast<double>(k);
      j.c_[k] = derivs[k] / fact;
    }
    return j;
  }

  static Jet constant(std::size_t order, double value)
  {
    return Jet(order, value);
  }

  std::size_t order() const noexcept { return c_.size() - 1; }
  double value() const noexcept { return c_[0]; }
  double coeff(std::size_t k) const { return c_.at(k); }

  //! k-th derivative at the expansion point.
  double derivative(std::size_t k) const
  {
    double fact = 1.0;
    for (std::size_t i = 2; i <= k; ++i)
      fact *= static_cast<double>(i);
    return c_.at(k) * fact;
  }

  Jet& operator+=(const Jet& o)
  {
    check(o);
    for (std::size_t k = 0; k < c_.size(); ++k)
      c_[k] += o.c_[k];
    return *this;
  }

  Jet& operator-=(const Jet& o)
  {
    check(o);
    for (std::size_t k = 0; k < c_.size(); ++k)
      c_[k] -= o.c_[k];
    return *this;
  }

  Jet& operator*=(double s)
  {
    for (auto& v : c_)
      v *= s;
    return *this;
  }

  friend Jet operator+(Jet a, const Jet& b) { return a += b; }
  friend Jet operator-(Jet a, const Jet& b) { return a -= b; }
  friend Jet operator*(Jet a, double s) { return a *= s; }
  friend Jet operator*(double s, Jet a) { return a *= s; }

  friend Jet operator*(const Jet& a, const Jet& b)
  {
    a.check(b);
    Jet r(a.order());
    for (std::size_t n = 0; n <= a.order(); ++n) {
      double s = 0.0;
      for (std::size_t k = 0; k <= n; ++k)
        s += a.c_[k] * b.c_[n - k];
      r.c_[n] = s;
    }
    return r;
  }

  //! f^a for real a. Requires f(x0) != 0; a negative base with a
  //! non-integer exponent is treated as |f|^a.
  friend Jet pow(const Jet& f, double a)
  {
    const double f0 = f.c_[0];
    if (f0 == 0.0)
      throw std::domain_error("Jet::pow: base vanishes at expansion point");
    Jet base = f;
    if (f0 < 0.0 && a != std::round(a))
      base *= -1.0;
    const double g0 = base.c_[0];
    Jet r(f.order());
    r.c_[0] = std::pow(g0, a);
    // J.C.P. Miller recurrence for powers of a power series.
    for (std::size_t n = 1; n <= f.order(); ++n) {
      double s = 0.0;
      for (std::size_t k = 1; k <= n; ++k)
        s += (a * static_cast<double>(k) - static_cast<double>(n - k)) *
             base.c_[k] * r.c_[n - k];
      r.c_[n] = s / (static_cast<double>(n) * g0);
    }
    return r;
  }

private:
  void check(const Jet& o) const
  {
    if (o.c_.size() != c_.size())
      throw std::invalid_argument("Jet: order mismatch");
  }

  std::vector<double> c_{ 0.0 };
};

} // namespace guidedql
