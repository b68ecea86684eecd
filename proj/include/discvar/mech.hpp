#pragma once

/**
 * @file
 * @brief Discrete mechanics on Q x Q for Q = R^n.
 *
 * Conventions: controls are stored per interval as a pair (u_k^-, u_k^+);
 * f_k^- acts at q_k and f_k^+ at q_{k+1}.
 */

#include <Eigen/Dense>

#include <cmath>
#include <concepts>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "discvar/errors.hpp"
#include "discvar/solvers.hpp"

namespace discvar::mech {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// L(q, qdot) = 1/2 qdot^T M qdot - V(q) with time step h.
struct RnLagrangian
{
  Mat M;
  std::function<double(const Vec &)> V;
  std::function<Vec(const Vec &)> V_x;
  std::function<Mat(const Vec &)> V_xx;
  double h = 0.1;

  int dim() const { return static_cast<int>(M.rows()); }

  static RnLagrangian free(const Mat & M, double h)
  {
    const auto n = M.rows();
    return make(
        M, [](const Vec &) { return 0.0; }, [n](const Vec &) { return Vec::Zero(n); },
        [n](const Vec &) { return Mat::Zero(n, n); }, h);
  }

  static RnLagrangian make(Mat M, std::function<double(const Vec &)> V, std::function<Vec(const Vec &)> V_x,
                           std::function<Mat(const Vec &)> V_xx, double h)
  {
    if (M.rows() != M.cols() || M.rows() == 0) { throw DimensionMismatch("mass matrix must be square"); }
    if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-12) { throw std::invalid_argument("mass matrix is not symmetric"); }
    if (Eigen::FullPivLU<Mat>(M).rank() < M.rows()) { throw NotInvertible("mass matrix is singular"); }
    if (!(h > 0.0)) { throw std::invalid_argument("time step must be positive"); }
    return RnLagrangian{std::move(M), std::move(V), std::move(V_x), std::move(V_xx), h};
  }
};

/// Any discrete Lagrangian usable by the generic code paths.
template<typename L>
concept DiscreteLagrangian = requires(const L & l, const Vec & a, const Vec & b) {
  { l(a, b) } -> std::convertible_to<double>;
};

inline double trapezoidal_ld(const RnLagrangian & L, const Vec & qk, const Vec & qk1)
{
  const Vec dq = qk1 - qk;
  return 0.5 / L.h * dq.dot(L.M * dq) - 0.5 * L.h * (L.V(qk) + L.V(qk1));
}

inline Vec d1_ld(const RnLagrangian & L, const Vec & qk, const Vec & qk1)
{
  return -L.M * (qk1 - qk) / L.h - 0.5 * L.h * L.V_x(qk);
}

inline Vec d2_ld(const RnLagrangian & L, const Vec & qk, const Vec & qk1)
{
  return L.M * (qk1 - qk) / L.h - 0.5 * L.h * L.V_x(qk1);
}

/// Central-difference slot derivatives for an arbitrary discrete Lagrangian.
template<DiscreteLagrangian Ld>
struct GenericDiscreteLagrangian
{
  Ld ld;

  double operator()(const Vec & a, const Vec & b) const { return ld(a, b); }

  Vec d1(const Vec & a, const Vec & b) const { return slot(a, [&](const Vec & x) { return ld(x, b); }); }
  Vec d2(const Vec & a, const Vec & b) const { return slot(b, [&](const Vec & x) { return ld(a, x); }); }

private:
  template<typename F>
  static Vec slot(const Vec & q, F && f)
  {
    Vec g(q.size());
    Vec x = q;
    for (Eigen::Index i = 0; i < q.size(); ++i) {
      const double e = 1e-6 * (1.0 + std::abs(q(i)));
      x(i)           = q(i) + e;
      const double p = f(x);
      x(i)           = q(i) - e;
      const double m = f(x);
      x(i)           = q(i);
      g(i)           = (p - m) / (2.0 * e);
    }
    return g;
  }
};

template<DiscreteLagrangian Ld>
GenericDiscreteLagrangian<Ld> generic(Ld ld)
{
  return {std::move(ld)};
}

/// Discrete force pair. When `affine` is set the maps are f^± = A^± + B^± u^±
/// with constant A, B, which is what the optimal control layer needs.
struct DiscreteForcePairRn
{
  using Fn = std::function<Vec(const Vec & qk, const Vec & qk1, const Vec & u)>;

  struct Affine
  {
    Vec A_minus, A_plus;
    Mat B_minus, B_plus;
  };

  Fn f_minus;
  Fn f_plus;
  int control_dim = 0;
  std::optional<Affine> affine;

  static DiscreteForcePairRn make_affine(Vec A_minus, Mat B_minus, Vec A_plus, Mat B_plus)
  {
    if (B_minus.rows() != B_plus.rows() || B_minus.cols() != B_plus.cols() || A_minus.size() != B_minus.rows()
        || A_plus.size() != B_plus.rows()) {
      throw DimensionMismatch("inconsistent affine force blocks");
    }
    DiscreteForcePairRn F;
    F.control_dim = static_cast<int>(B_minus.cols());
    F.affine      = Affine{A_minus, A_plus, B_minus, B_plus};
    F.f_minus     = [A = A_minus, B = B_minus](const Vec &, const Vec &, const Vec & u) -> Vec { return A + B * u; };
    F.f_plus      = [A = A_plus, B = B_plus](const Vec &, const Vec &, const Vec & u) -> Vec { return A + B * u; };
    return F;
  }

  /// f^± = u^±.
  static DiscreteForcePairRn identity(int n)
  {
    return make_affine(Vec::Zero(n), Mat::Identity(n, n), Vec::Zero(n), Mat::Identity(n, n));
  }

  /// f^± = (h/2) u^±, the trapezoidal discretization of a continuous force u.
  static DiscreteForcePairRn trapezoidal(int n, double h)
  {
    const Mat B = 0.5 * h * Mat::Identity(n, n);
    return make_affine(Vec::Zero(n), B, Vec::Zero(n), B);
  }

  /// f^± = (h/2) B u^± for a constant input matrix B.
  static DiscreteForcePairRn trapezoidal(const Mat & B, double h)
  {
    const Mat Bh = 0.5 * h * B;
    return make_affine(Vec::Zero(B.rows()), Bh, Vec::Zero(B.rows()), Bh);
  }

  static DiscreteForcePairRn zero(int n) { return make_affine(Vec::Zero(n), Mat::Zero(n, 0), Vec::Zero(n), Mat::Zero(n, 0)); }
};

struct ControlPair
{
  Vec minus;
  Vec plus;
};

using Controls = std::vector<ControlPair>;

inline Controls zero_controls(int N, int m)
{
  return Controls(static_cast<std::size_t>(N), ControlPair{Vec::Zero(m), Vec::Zero(m)});
}

/// D2 L_d(q_{k-1}, q_k) + D1 L_d(q_k, q_{k+1}) + f^+_{k-1} + f^-_k.
inline Vec forced_del_residual(const RnLagrangian & L, const DiscreteForcePairRn & F, const Vec & qkm1, const Vec & qk,
                               const Vec & qkp1, const Vec & u_km1_plus, const Vec & u_k_minus)
{
  return d2_ld(L, qkm1, qk) + d1_ld(L, qk, qkp1) + F.f_plus(qkm1, qk, u_km1_plus) + F.f_minus(qk, qkp1, u_k_minus);
}

/// Forced discrete Legendre transforms: p_k = -D1 L_d - f^-, p_{k+1} = D2 L_d + f^+.
inline std::pair<Vec, Vec> legendre_pair(const RnLagrangian & L, const DiscreteForcePairRn & F, const Vec & qk,
                                         const Vec & qk1, const Vec & u_minus, const Vec & u_plus)
{
  return {-d1_ld(L, qk, qk1) - F.f_minus(qk, qk1, u_minus), d2_ld(L, qk, qk1) + F.f_plus(qk, qk1, u_plus)};
}

struct IntegrateOptions
{
  double tol   = 1e-12;
  int max_iter = 50;
};

/// Forward variational integrator. Returns q_0..q_N given q_0, q_1.
inline std::vector<Vec> integrate(const RnLagrangian & L, const DiscreteForcePairRn & F, const Vec & q0, const Vec & q1,
                                  const Controls & controls, int N, const IntegrateOptions & opt = {})
{
  const int n = L.dim();
  if (q0.size() != n || q1.size() != n) { throw DimensionMismatch("initial data has wrong dimension"); }
  if (N < 1) { throw std::invalid_argument("N must be >= 1"); }
  if (static_cast<int>(controls.size()) < N) { throw DimensionMismatch("need one control pair per interval"); }

  std::vector<Vec> q;
  q.reserve(static_cast<std::size_t>(N) + 1);
  q.push_back(q0);
  q.push_back(q1);

  solvers::SolverOptions so;
  so.tol      = opt.tol;
  so.max_iter = opt.max_iter;

  for (int k = 1; k < N; ++k) {
    const Vec & qm = q[static_cast<std::size_t>(k) - 1];
    const Vec & qc = q[static_cast<std::size_t>(k)];
    const auto & up = controls[static_cast<std::size_t>(k) - 1].plus;
    const auto & um = controls[static_cast<std::size_t>(k)].minus;

    solvers::ResidualSystem sys;
    sys.dim  = n;
    sys.eval = [&](const Vec & x) { return forced_del_residual(L, F, qm, qc, x, up, um); };
    // D1 L_d depends on q_{k+1} only through -M(q_{k+1} - q_k)/h; general forces use differences.
    if (F.affine) {
      sys.jacobian = [&](const Vec &) -> Mat { return -L.M / L.h; };
    }

    solvers::SolveReport rep;
    try {
      q.push_back(solvers::newton(sys, 2.0 * qc - qm, rep, so));
    } catch (const Error & e) {
      throw StepSolveFailed(k, e.what());
    }
  }
  return q;
}

}  // namespace discvar::mech
