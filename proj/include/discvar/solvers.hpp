#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "discvar/errors.hpp"

namespace discvar::solvers {

/// Square nonlinear system F : R^dim -> R^dim.
struct ResidualSystem
{
  int dim = 0;
  std::function<Eigen::VectorXd(const Eigen::VectorXd &)> eval;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd &)> jacobian;  // optional
};

enum class Method { Newton, LevenbergMarquardt };

struct SolveReport
{
  bool converged       = false;
  int iterations       = 0;
  double residual_norm = std::numeric_limits<double>::infinity();
  std::vector<double> step_norm_history;
  std::vector<double> residual_history;
  /// Set when Newton contracts linearly instead of quadratically.
  bool slow_convergence = false;
  Method method         = Method::Newton;
};

struct SolverOptions
{
  double tol            = 1e-9;
  /// Non-positive selects the method default: 100 for Newton, 500 for LM.
  int max_iter          = 0;
  int max_backtracks    = 30;
  double lm_lambda0     = 1e-3;
  double lm_up          = 10.0;
  double lm_down        = 10.0;
  double rcond_min      = 1e-14;
};

class NoConvergence : public Error
{
public:
  NoConvergence(SolveReport report, Eigen::VectorXd best)
      : Error("no convergence after " + std::to_string(report.iterations) + " iterations, |F| = "
              + std::to_string(report.residual_norm)),
        report_(std::move(report)), best_(std::move(best))
  {}

  const SolveReport & report() const noexcept { return report_; }
  const Eigen::VectorXd & best() const noexcept { return best_; }

private:
  SolveReport report_;
  Eigen::VectorXd best_;
};

inline double inf_norm(const Eigen::VectorXd & v) { return v.size() ? v.lpNorm<Eigen::Infinity>() : 0.0; }

/// Forward differences, column step 1e-7 (1 + |x_j|).
inline Eigen::MatrixXd fd_jacobian(const ResidualSystem & sys, const Eigen::VectorXd & x, const Eigen::VectorXd * fx = nullptr)
{
  const Eigen::VectorXd f0 = fx ? *fx : sys.eval(x);
  Eigen::MatrixXd J(f0.size(), x.size());
  Eigen::VectorXd xp = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double eps = 1e-7 * (1.0 + std::abs(x(j)));
    xp(j)            = x(j) + eps;
    J.col(j)         = (sys.eval(xp) - f0) / eps;
    xp(j)            = x(j);
  }
  return J;
}

namespace detail {

inline Eigen::MatrixXd jacobian(const ResidualSystem & sys, const Eigen::VectorXd & x, const Eigen::VectorXd & fx)
{
  return sys.jacobian ? sys.jacobian(x) : fd_jacobian(sys, x, &fx);
}

inline void check(const ResidualSystem & sys, const Eigen::VectorXd & x0)
{
  if (x0.size() != sys.dim) { throw DimensionMismatch("initial guess has wrong dimension"); }
}

/// Flags linear contraction over the last few residuals.
inline bool looks_linear(const std::vector<double> & r)
{
  if (r.size() < 5) { return false; }
  const auto n = r.size();
  int linear   = 0;
  for (std::size_t i = n - 4; i < n; ++i) {
    if (r[i - 1] <= 0.0) { return false; }
    const double ratio = r[i] / r[i - 1];
    if (ratio > 0.1 && ratio < 0.95) { ++linear; }
  }
  return linear >= 3;
}

}  // namespace detail

/// Newton's method with backtracking on |F|_inf.
inline Eigen::VectorXd newton(const ResidualSystem & sys, Eigen::VectorXd x, SolveReport & report, const SolverOptions & opt = {})
{
  detail::check(sys, x);
  report        = {};
  report.method = Method::Newton;
  const int max_iter = opt.max_iter > 0 ? opt.max_iter : 100;

  Eigen::VectorXd f = sys.eval(x);
  double fn         = inf_norm(f);
  report.residual_history.push_back(fn);
  report.residual_norm = fn;

  Eigen::VectorXd best = x;
  double best_norm     = fn;

  while (fn > opt.tol && report.iterations < max_iter) {
    ++report.iterations;
    const Eigen::MatrixXd J = detail::jacobian(sys, x, f);
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(J);
    const double rc = lu.rcond();
    if (!(rc > opt.rcond_min)) { throw SingularJacobian(report.iterations); }
    const Eigen::VectorXd dx = lu.solve(-f);
    if (!dx.allFinite()) { throw SingularJacobian(report.iterations); }

    double t = 1.0;
    Eigen::VectorXd xn;
    Eigen::VectorXd fnew;
    double fnn     = std::numeric_limits<double>::infinity();
    bool decreased = false;
    for (int b = 0; b <= opt.max_backtracks && !decreased; ++b) {
      xn        = x + t * dx;
      fnew      = sys.eval(xn);
      fnn       = inf_norm(fnew);
      decreased = std::isfinite(fnn) && fnn < fn;
      if (!decreased) { t *= 0.5; }
    }
    if (!decreased) { break; }  // stagnation
    report.step_norm_history.push_back(t * inf_norm(dx));
    x  = xn;
    f  = fnew;
    fn = fnn;
    report.residual_history.push_back(fn);
    if (fn < best_norm) {
      best_norm = fn;
      best      = x;
    }
  }

  report.residual_norm    = best_norm;
  report.converged        = best_norm <= opt.tol;
  report.slow_convergence = detail::looks_linear(report.residual_history);
  if (!report.converged) { throw NoConvergence(report, best); }
  return best;
}

/// Levenberg-Marquardt on 1/2 |F|^2 with damping lambda I.
inline Eigen::VectorXd levenberg_marquardt(const ResidualSystem & sys, Eigen::VectorXd x, SolveReport & report,
                                           SolverOptions opt = {})
{
  detail::check(sys, x);
  report        = {};
  report.method = Method::LevenbergMarquardt;
  const int max_iter = opt.max_iter > 0 ? opt.max_iter : 500;

  Eigen::VectorXd f = sys.eval(x);
  double cost       = 0.5 * f.squaredNorm();
  double fn         = inf_norm(f);
  report.residual_history.push_back(fn);
  double lambda = opt.lm_lambda0;

  while (fn > opt.tol && report.iterations < max_iter) {
    ++report.iterations;
    const Eigen::MatrixXd J  = detail::jacobian(sys, x, f);
    const Eigen::MatrixXd JtJ = J.transpose() * J;
    const Eigen::VectorXd g  = J.transpose() * f;
    bool accepted            = false;
    for (int attempt = 0; attempt < 40 && !accepted; ++attempt) {
      Eigen::MatrixXd A = JtJ;
      A.diagonal().array() += lambda;
      const Eigen::VectorXd dx = A.ldlt().solve(-g);
      const Eigen::VectorXd xn = x + dx;
      const Eigen::VectorXd fnew = sys.eval(xn);
      const double cnew          = 0.5 * fnew.squaredNorm();
      if (std::isfinite(cnew) && cnew < cost) {
        report.step_norm_history.push_back(inf_norm(dx));
        x      = xn;
        f      = fnew;
        cost   = cnew;
        fn     = inf_norm(f);
        lambda = std::max(lambda / opt.lm_down, 1e-15);
        accepted = true;
      } else {
        lambda *= opt.lm_up;
      }
    }
    report.residual_history.push_back(fn);
    if (!accepted) { break; }
  }

  report.residual_norm = fn;
  report.converged     = fn <= opt.tol;
  if (!report.converged) { throw NoConvergence(report, x); }
  return x;
}

/// Newton first. On failure Levenberg-Marquardt restarts from x0, then from the
/// best Newton iterate if that also fails.
inline Eigen::VectorXd solve(const ResidualSystem & sys, const Eigen::VectorXd & x0, SolveReport & report,
                             const SolverOptions & opt = {})
{
  std::vector<Eigen::VectorXd> starts{x0};
  int used = 0;
  try {
    return newton(sys, x0, report, opt);
  } catch (const NoConvergence & e) {
    starts.push_back(e.best());
    used = e.report().iterations;
  } catch (const SingularJacobian & e) {
    used = e.iteration();
  }
  SolveReport best_report;
  Eigen::VectorXd best;
  for (const auto & start : starts) {
    try {
      Eigen::VectorXd x = levenberg_marquardt(sys, start, report, opt);
      report.iterations += used;
      return x;
    } catch (const NoConvergence & e) {
      used += e.report().iterations;
      if (best.size() == 0 || e.report().residual_norm < best_report.residual_norm) {
        best_report = e.report();
        best        = e.best();
      }
    }
  }
  best_report.iterations = used;
  throw NoConvergence(best_report, best);
}

}  // namespace discvar::solvers
