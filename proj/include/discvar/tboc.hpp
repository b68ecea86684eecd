#pragma once

/**
 * @file
 * @brief Optimal control on T*Q x T*Q for Q = R^n.
 *
 * The cost is rewritten as a Lagrangian of (x_k, p_k, x_{k+1}, p_{k+1}) by
 * solving the forced Legendre transforms for the controls, and the optimality
 * conditions are the discrete Euler-Lagrange equations of that Lagrangian.
 *
 * Unknowns: (x_1, p_1, ..., x_{N-1}, p_{N-1}) followed, when underactuated,
 * by (lambda^-_k, lambda^+_k) for every interval k = 0..N-1. Boundary states
 * are pinned. Residual rows follow the same order, constraint rows last.
 */

#include <Eigen/Dense>

#include <string>
#include <utility>
#include <vector>

#include "discvar/autodiff.hpp"
#include "discvar/costs.hpp"
#include "discvar/errors.hpp"
#include "discvar/mech.hpp"
#include "discvar/solvers.hpp"

namespace discvar::tboc {

using mech::Mat;
using mech::Vec;

enum class Actuation { Full, Underactuated };

struct BoundaryRn
{
  Vec x0, p0, xT, pT;
};

struct OcProblemRn
{
  mech::RnLagrangian lagrangian;
  mech::DiscreteForcePairRn forces;
  systems::CostSpec cost = systems::L2{};
  BoundaryRn boundary;
  int N = 16;

  int dim() const { return lagrangian.dim(); }
  int control_dim() const { return forces.control_dim; }
  double h() const { return lagrangian.h; }
  Actuation actuation() const { return control_dim() == dim() ? Actuation::Full : Actuation::Underactuated; }
};

struct StateRn
{
  Vec q;
  Vec p;
};

namespace detail {

/// Precomputed linear algebra of the affine force maps.
struct ForceInverse
{
  Vec A_minus, A_plus;
  Mat Bpinv_minus, Bpinv_plus;  // m x n
  Mat Qperp_minus, Qperp_plus;  // n x (n - m)
};

inline Mat complement_basis(const Mat & B)
{
  const auto n = B.rows();
  const auto m = B.cols();
  Eigen::HouseholderQR<Mat> qr(B);
  const Mat Q = qr.householderQ() * Mat::Identity(n, n);
  return Q.rightCols(n - m);
}

inline ForceInverse invert_forces(const OcProblemRn & prob)
{
  if (!prob.forces.affine) { throw NotInvertible("optimal control requires affine force maps"); }
  const auto & af = *prob.forces.affine;
  const int n     = prob.dim();
  const int m     = prob.control_dim();
  if (af.B_minus.rows() != n || af.B_plus.rows() != n) { throw DimensionMismatch("force map has wrong output dimension"); }
  if (m > n) { throw RankDeficient("more controls than degrees of freedom"); }

  auto rank = [](const Mat & B) { return static_cast<int>(Eigen::FullPivLU<Mat>(B).rank()); };
  if (m == n) {
    if (rank(af.B_minus) < n || rank(af.B_plus) < n) { throw NotInvertible("force map is not invertible"); }
  } else if (m == 0 || rank(af.B_minus) != m || rank(af.B_plus) != m) {
    throw RankDeficient("force maps must have rank equal to the control dimension");
  }

  ForceInverse fi;
  fi.A_minus     = af.A_minus;
  fi.A_plus      = af.A_plus;
  fi.Bpinv_minus = af.B_minus.completeOrthogonalDecomposition().pseudoInverse();
  fi.Bpinv_plus  = af.B_plus.completeOrthogonalDecomposition().pseudoInverse();
  fi.Qperp_minus = complement_basis(af.B_minus);
  fi.Qperp_plus  = complement_basis(af.B_plus);
  return fi;
}

/// Variables of one interval: x_k, p_k, x_{k+1}, p_{k+1}, Ga = V_x(x_k), Gb = V_x(x_{k+1}),
/// lambda^-, lambda^+.
struct IntervalLayout
{
  int n, c;
  int xk() const { return 0; }
  int pk() const { return n; }
  int xk1() const { return 2 * n; }
  int pk1() const { return 3 * n; }
  int ga() const { return 4 * n; }
  int gb() const { return 5 * n; }
  int lm() const { return 6 * n; }
  int lp() const { return 6 * n + c; }
  int size() const { return 6 * n + 2 * c; }
};

template<typename T>
struct IntervalTerms
{
  Eigen::Matrix<T, Eigen::Dynamic, 1> f_minus, f_plus;
};

template<typename T>
IntervalTerms<T> discrete_forces(const OcProblemRn & prob, const Eigen::Matrix<T, Eigen::Dynamic, 1> & z, const IntervalLayout & lay)
{
  using V     = Eigen::Matrix<T, Eigen::Dynamic, 1>;
  const int n = lay.n;
  const T h(prob.h());
  const Mat & M = prob.lagrangian.M;
  const V dx    = z.segment(lay.xk1(), n) - z.segment(lay.xk(), n);
  const V Mdx   = M.cast<T>() * dx / h;
  IntervalTerms<T> t;
  t.f_minus = Mdx + T(0.5) * h * z.segment(lay.ga(), n) - z.segment(lay.pk(), n);
  t.f_plus  = z.segment(lay.pk1(), n) - Mdx + T(0.5) * h * z.segment(lay.gb(), n);
  return t;
}

template<typename T>
T augmented_value(const OcProblemRn & prob, const ForceInverse & fi, const Eigen::Matrix<T, Eigen::Dynamic, 1> & z,
                  const IntervalLayout & lay)
{
  using V                = Eigen::Matrix<T, Eigen::Dynamic, 1>;
  const auto t           = discrete_forces<T>(prob, z, lay);
  const V rm             = t.f_minus - fi.A_minus.cast<T>();
  const V rp             = t.f_plus - fi.A_plus.cast<T>();
  const V um             = fi.Bpinv_minus.cast<T>() * rm;
  const V up             = fi.Bpinv_plus.cast<T>() * rp;
  T value                = T(0.5 * prob.h()) * (systems::evaluate<T>(prob.cost, um) + systems::evaluate<T>(prob.cost, up));
  if (lay.c > 0) {
    value += z.segment(lay.lm(), lay.c).dot(fi.Qperp_minus.transpose().cast<T>() * rm);
    value += z.segment(lay.lp(), lay.c).dot(fi.Qperp_plus.transpose().cast<T>() * rp);
  }
  return value;
}

}  // namespace detail

/// The augmented Lagrangian (x_k, p_k, x_{k+1}, p_{k+1}) -> C_d(u^-, u^+) for full actuation.
class AugmentedLagrangianRn
{
public:
  explicit AugmentedLagrangianRn(const OcProblemRn & prob) : prob_(prob), fi_(detail::invert_forces(prob))
  {
    if (prob.actuation() != Actuation::Full) { throw NotInvertible("augmented Lagrangian needs full actuation"); }
  }

  double operator()(const Vec & qk, const Vec & pk, const Vec & qk1, const Vec & pk1) const
  {
    const int n = prob_.dim();
    const detail::IntervalLayout lay{n, 0};
    Vec z(lay.size());
    z << qk, pk, qk1, pk1, prob_.lagrangian.V_x(qk), prob_.lagrangian.V_x(qk1);
    return detail::augmented_value<double>(prob_, fi_, z, lay);
  }

private:
  OcProblemRn prob_;
  detail::ForceInverse fi_;
};

inline AugmentedLagrangianRn build_augmented(const OcProblemRn & prob) { return AugmentedLagrangianRn(prob); }

/// Residual and packing for one problem.
class OptimalitySystem
{
public:
  explicit OptimalitySystem(OcProblemRn prob) : prob_(std::move(prob)), fi_(detail::invert_forces(prob_))
  {
    if (prob_.N < 2) { throw std::invalid_argument("N must be >= 2"); }
    const int n = prob_.dim();
    for (const Vec * v : {&prob_.boundary.x0, &prob_.boundary.p0, &prob_.boundary.xT, &prob_.boundary.pT}) {
      if (v->size() != n) { throw DimensionMismatch("boundary vector has wrong length"); }
    }
    systems::validate(prob_.cost, prob_.control_dim());
    c_ = n - prob_.control_dim();
  }

  const OcProblemRn & problem() const { return prob_; }
  int constraint_dim() const { return c_; }
  int state_unknowns() const { return 2 * (prob_.N - 1) * prob_.dim(); }
  int dim() const { return state_unknowns() + 2 * prob_.N * c_; }

  std::vector<StateRn> unpack_states(const Vec & z) const
  {
    const int n = prob_.dim();
    const int N = prob_.N;
    std::vector<StateRn> s(static_cast<std::size_t>(N) + 1);
    s.front() = {prob_.boundary.x0, prob_.boundary.p0};
    s.back()  = {prob_.boundary.xT, prob_.boundary.pT};
    for (int k = 1; k < N; ++k) {
      const int o                       = 2 * n * (k - 1);
      s[static_cast<std::size_t>(k)] = {z.segment(o, n), z.segment(o + n, n)};
    }
    return s;
  }

  /// lambda^-_k, lambda^+_k for every interval.
  std::vector<std::pair<Vec, Vec>> unpack_multipliers(const Vec & z) const
  {
    std::vector<std::pair<Vec, Vec>> l(static_cast<std::size_t>(prob_.N));
    for (int k = 0; k < prob_.N; ++k) {
      const int o                        = state_unknowns() + 2 * c_ * k;
      l[static_cast<std::size_t>(k)] = {z.segment(o, c_), z.segment(o + c_, c_)};
    }
    return l;
  }

  Vec pack(const std::vector<StateRn> & states, const std::vector<std::pair<Vec, Vec>> & mult = {}) const
  {
    const int n = prob_.dim();
    if (static_cast<int>(states.size()) != prob_.N + 1) { throw DimensionMismatch("need N+1 states"); }
    Vec z = Vec::Zero(dim());
    for (int k = 1; k < prob_.N; ++k) {
      const int o           = 2 * n * (k - 1);
      z.segment(o, n)     = states[static_cast<std::size_t>(k)].q;
      z.segment(o + n, n) = states[static_cast<std::size_t>(k)].p;
    }
    if (!mult.empty()) {
      for (int k = 0; k < prob_.N; ++k) {
        const int o              = state_unknowns() + 2 * c_ * k;
        z.segment(o, c_)       = mult[static_cast<std::size_t>(k)].first;
        z.segment(o + c_, c_)  = mult[static_cast<std::size_t>(k)].second;
      }
    }
    return z;
  }

  /// Gradient of the interval Lagrangian in (x_k, p_k, x_{k+1}, p_{k+1}, lambda^-, lambda^+), plus its value.
  double interval_gradient(const StateRn & a, const StateRn & b, const Vec & lm, const Vec & lp, Vec & grad) const
  {
    const int n = prob_.dim();
    const detail::IntervalLayout lay{n, c_};
    Vec z(lay.size());
    z << a.q, a.p, b.q, b.p, prob_.lagrangian.V_x(a.q), prob_.lagrangian.V_x(b.q), lm, lp;
    Vec g;
    const double v = ad::value_and_gradient(
        [&](const ad::VecAD & x) { return detail::augmented_value<ad::Scalar>(prob_, fi_, x, lay); }, z, g);
    grad.resize(4 * n + 2 * c_);
    grad.segment(0, n)     = g.segment(lay.xk(), n) + prob_.lagrangian.V_xx(a.q).transpose() * g.segment(lay.ga(), n);
    grad.segment(n, n)     = g.segment(lay.pk(), n);
    grad.segment(2 * n, n) = g.segment(lay.xk1(), n) + prob_.lagrangian.V_xx(b.q).transpose() * g.segment(lay.gb(), n);
    grad.segment(3 * n, n) = g.segment(lay.pk1(), n);
    grad.tail(2 * c_)      = g.tail(2 * c_);
    return v;
  }

  Vec residual(const Vec & z) const
  {
    if (z.size() != dim()) { throw DimensionMismatch("unknown vector has wrong length"); }
    const int n       = prob_.dim();
    const int N       = prob_.N;
    const auto states = unpack_states(z);
    const auto mult   = unpack_multipliers(z);
    Vec r             = Vec::Zero(dim());
    Vec g;
    for (int k = 0; k < N; ++k) {
      const auto & [lm, lp] = mult[static_cast<std::size_t>(k)];
      interval_gradient(states[static_cast<std::size_t>(k)], states[static_cast<std::size_t>(k) + 1], lm, lp, g);
      if (k >= 1) { r.segment(2 * n * (k - 1), 2 * n) += g.head(2 * n); }
      if (k + 1 <= N - 1) { r.segment(2 * n * k, 2 * n) += g.segment(2 * n, 2 * n); }
      if (c_ > 0) { r.segment(state_unknowns() + 2 * c_ * k, 2 * c_) = g.tail(2 * c_); }
    }
    return r;
  }

  /// Sum of interval Lagrangians including multiplier terms.
  double action(const Vec & z) const
  {
    const auto states = unpack_states(z);
    const auto mult   = unpack_multipliers(z);
    double s          = 0.0;
    Vec g;
    for (int k = 0; k < prob_.N; ++k) {
      const auto & [lm, lp] = mult[static_cast<std::size_t>(k)];
      s += interval_gradient(states[static_cast<std::size_t>(k)], states[static_cast<std::size_t>(k) + 1], lm, lp, g);
    }
    return s;
  }

  /// u^± recovered from the forced Legendre transforms on every interval.
  mech::Controls controls(const std::vector<StateRn> & s) const
  {
    const int n = prob_.dim();
    const detail::IntervalLayout lay{n, 0};
    mech::Controls u(static_cast<std::size_t>(prob_.N));
    for (int k = 0; k < prob_.N; ++k) {
      const auto & a = s[static_cast<std::size_t>(k)];
      const auto & b = s[static_cast<std::size_t>(k) + 1];
      Vec z(lay.size());
      z << a.q, a.p, b.q, b.p, prob_.lagrangian.V_x(a.q), prob_.lagrangian.V_x(b.q);
      const auto t                    = detail::discrete_forces<double>(prob_, z, lay);
      u[static_cast<std::size_t>(k)] = {fi_.Bpinv_minus * (t.f_minus - fi_.A_minus), fi_.Bpinv_plus * (t.f_plus - fi_.A_plus)};
    }
    return u;
  }

  double cost(const mech::Controls & u) const
  {
    double c = 0.0;
    for (const auto & pr : u) {
      c += 0.5 * prob_.h() * (systems::evaluate<double>(prob_.cost, pr.minus) + systems::evaluate<double>(prob_.cost, pr.plus));
    }
    return c;
  }

  /// Linear interpolation of x; p from the unforced Legendre transform of that path.
  Vec initial_guess() const
  {
    const int N = prob_.N;
    std::vector<Vec> x(static_cast<std::size_t>(N) + 1);
    for (int k = 0; k <= N; ++k) {
      const double s              = static_cast<double>(k) / N;
      x[static_cast<std::size_t>(k)] = (1.0 - s) * prob_.boundary.x0 + s * prob_.boundary.xT;
    }
    std::vector<StateRn> st(static_cast<std::size_t>(N) + 1);
    for (int k = 0; k <= N; ++k) {
      st[static_cast<std::size_t>(k)].q = x[static_cast<std::size_t>(k)];
      if (k > 0 && k < N) {
        const auto & xm = x[static_cast<std::size_t>(k) - 1];
        const auto & xp = x[static_cast<std::size_t>(k) + 1];
        st[static_cast<std::size_t>(k)].p = prob_.lagrangian.M * (xp - xm) / (2.0 * prob_.h());
      }
    }
    return pack(st);
  }

  solvers::ResidualSystem system() const
  {
    solvers::ResidualSystem sys;
    sys.dim  = dim();
    sys.eval = [this](const Vec & z) { return residual(z); };
    return sys;
  }

private:
  OcProblemRn prob_;
  detail::ForceInverse fi_;
  int c_ = 0;
};

inline Vec optimality_residual(const OcProblemRn & prob, const std::vector<StateRn> & states)
{
  const OptimalitySystem os(prob);
  if (os.constraint_dim() != 0) { throw std::invalid_argument("use underactuated_residual for underactuated problems"); }
  return os.residual(os.pack(states));
}

inline Vec underactuated_residual(const OcProblemRn & prob, const std::vector<StateRn> & states,
                                  const std::vector<std::pair<Vec, Vec>> & multipliers)
{
  const OptimalitySystem os(prob);
  return os.residual(os.pack(states, multipliers));
}

struct SolutionRn
{
  std::vector<StateRn> states;
  mech::Controls controls;
  std::vector<std::pair<Vec, Vec>> multipliers;
  double cost = 0.0;
  solvers::SolveReport report;
  Vec unknowns;
};

/// Newton with LM fallback from the interpolating initial guess.
inline SolutionRn solve(const OcProblemRn & prob, const solvers::SolverOptions & opt = {}, const Vec * guess = nullptr)
{
  const OptimalitySystem os(prob);
  const auto sys = os.system();
  SolutionRn sol;
  sol.unknowns    = solvers::solve(sys, guess ? *guess : os.initial_guess(), sol.report, opt);
  sol.states      = os.unpack_states(sol.unknowns);
  sol.multipliers = os.unpack_multipliers(sol.unknowns);
  sol.controls    = os.controls(sol.states);
  sol.cost        = os.cost(sol.controls);
  return sol;
}

}  // namespace discvar::tboc
