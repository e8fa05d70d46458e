#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace guidedql {

//! Base class for every failure raised by the library.
class Error : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

//! A mean or response lies outside the family's domain.
class DomainError : public Error
{
public:
  using Error::Error;
};

//! A derivative order (or other capability) the object cannot provide.
class CapabilityError : public Error
{
public:
  using Error::Error;
};

class SingularDesignError : public Error
{
public:
  using Error::Error;
};

//! Newton iteration did not converge; carries the last iterate.
class ConvergenceError : public Error
{
public:
  ConvergenceError(const std::string& what, std::vector<double> last_iterate)
    : Error(what)
    , last_iterate_(std::move(last_iterate))
  {}

  const std::vector<double>& last_iterate() const noexcept
  {
    return last_iterate_;
  }

private:
  std::vector<double> last_iterate_;
};

//! Too few distinct points inside the kernel window.
class SparseRegionError : public Error
{
public:
  using Error::Error;
};

//! The guide is (numerically) zero at the evaluation point.
class GuideZeroError : public Error
{
public:
  using Error::Error;
};

class EstimationError : public Error
{
public:
  using Error::Error;
};

class SingularMomentError : public Error
{
public:
  using Error::Error;
};

class SingularHessianError : public Error
{
public:
  using Error::Error;
};

class SelectionError : public Error
{
public:
  using Error::Error;
};

//! Malformed user input (CSV, option strings).
class ParseError : public Error
{
public:
  using Error::Error;
};

} // namespace guidedql
