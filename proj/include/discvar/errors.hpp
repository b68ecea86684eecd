#pragma once

#include <stdexcept>
#include <string>

namespace discvar {

/// Base class for every error raised by the library.
class Error : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// A group element or algebra vector lies outside the chart of the retraction.
class OutOfChart : public Error
{
public:
  using Error::Error;
};

/// The implicit solve of a forward integrator step failed.
class StepSolveFailed : public Error
{
public:
  StepSolveFailed(int step, const std::string & what)
      : Error("step " + std::to_string(step) + ": " + what), step_(step)
  {}

  int step() const noexcept { return step_; }

private:
  int step_;
};

/// A force map that must be inverted is not invertible.
class NotInvertible : public Error
{
public:
  using Error::Error;
};

/// Control basis violates the rank (embedding) condition.
class RankDeficient : public Error
{
public:
  using Error::Error;
};

class SingularJacobian : public Error
{
public:
  SingularJacobian(int iteration)
      : Error("singular Jacobian at iteration " + std::to_string(iteration)), iteration_(iteration)
  {}

  int iteration() const noexcept { return iteration_; }

private:
  int iteration_;
};

class ConfigError : public Error
{
public:
  using Error::Error;
};

class DimensionMismatch : public Error
{
public:
  using Error::Error;
};

}  // namespace discvar
