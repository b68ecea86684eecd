#pragma once

/**
 * @file
 * @brief Discrete Euler-Poincare mechanics and optimal control on Lie groups.
 *
 * Reduced Lagrangian l(xi) = 1/2 <I xi, xi>, optional potential V(g), and
 * affine forces f(xi, u) = a(xi) + sum_s (B u)_s e^s where a(xi) = Hd tau^{-1}(W),
 * W = tau(h xi). Discrete forces and cost are trapezoidal: (h/2) f and
 * (h/2)(C(u^-) + C(u^+)).
 *
 * Per interval k the momenta are
 *   mu_k  = (dtau^{-1}_{h xi_k})^* I xi_k,   mu'_k = Ad^*_{W_k} mu_k = (dtau^{-1}_{-h xi_k})^* I xi_k,
 *   nu_k  = mu_k + (h/2) G(g_k) - (h/2) f(xi_k, u_k^-),
 *   nu_{k+1} = mu'_k - (h/2) G(g_{k+1}) + (h/2) f(xi_k, u_k^+),
 * with G the left-trivialized gradient of V.
 *
 * Optimal control unknowns: xi_0..xi_{N-1}, nu_1..nu_{N-1}, then
 * (lambda^-_k, lambda^+_k) for k = 0..N-1. Residual rows: group stationarity
 * for k = 1..N-1, nu matching for k = 1..N-1, constraints (Phi^-_k, Phi^+_k),
 * and the reconstruction gap last.
 */

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "discvar/autodiff.hpp"
#include "discvar/costs.hpp"
#include "discvar/errors.hpp"
#include "discvar/lie.hpp"
#include "discvar/solvers.hpp"

namespace discvar::lgoc {

using lie::AlgebraVector;
using lie::CoAlgebraVector;
using lie::GroupElement;
using lie::GroupSpec;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// V(g) with left-trivialized gradient G and Hessian H:
/// d/de V(g tau(e eta)) = <G(g), eta>,  d/de G(g tau(e eta)) = H(g) eta.
struct Potential
{
  std::function<double(const GroupElement &)> value;
  std::function<Vec(const GroupElement &)> gradient;
  std::function<Mat(const GroupElement &)> hessian;
};

class ReducedSystem
{
public:
  ReducedSystem(GroupSpec group, Mat inertia, std::vector<int> actuated, Mat control_map, Mat drift = {},
                std::optional<Potential> potential = std::nullopt)
      : group_(std::move(group)), inertia_(std::move(inertia)), actuated_(std::move(actuated)), B_(std::move(control_map)),
        drift_(std::move(drift)), potential_(std::move(potential))
  {
    const int n = group_.algebra_dim();
    if (inertia_.rows() != n || inertia_.cols() != n) { throw DimensionMismatch("inertia has wrong size"); }
    if ((inertia_ - inertia_.transpose()).cwiseAbs().maxCoeff() > 1e-12) { throw std::invalid_argument("inertia is not symmetric"); }
    if (Eigen::LLT<Mat>(inertia_).info() != Eigen::Success) { throw std::invalid_argument("inertia is not positive definite"); }

    std::set<int> seen;
    for (int i : actuated_) {
      if (i < 0 || i >= n || !seen.insert(i).second) { throw std::invalid_argument("invalid actuated index set"); }
    }
    for (int i = 0; i < n; ++i) {
      if (!seen.count(i)) { unactuated_.push_back(i); }
    }
    const auto m = static_cast<Eigen::Index>(actuated_.size());
    if (B_.rows() != m || B_.cols() != m) { throw DimensionMismatch("control map must be square on the actuated subspace"); }
    if (m > 0 && Eigen::FullPivLU<Mat>(B_).rank() < m) { throw RankDeficient("control map does not have full rank"); }
    if (m > 0) { Binv_ = B_.inverse(); }
    if (drift_.size() == 0) { drift_ = Mat::Zero(n, n); }
    if (drift_.rows() != n || drift_.cols() != n) { throw DimensionMismatch("drift matrix has wrong size"); }

    E_act_ = Mat::Zero(n, m);
    for (Eigen::Index s = 0; s < m; ++s) { E_act_(actuated_[static_cast<std::size_t>(s)], s) = 1.0; }
    E_un_ = Mat::Zero(n, static_cast<Eigen::Index>(unactuated_.size()));
    for (std::size_t s = 0; s < unactuated_.size(); ++s) { E_un_(unactuated_[s], static_cast<Eigen::Index>(s)) = 1.0; }
  }

  /// Fully actuated system with f = u.
  static ReducedSystem fully_actuated(GroupSpec group, Mat inertia, std::optional<Potential> potential = std::nullopt)
  {
    const int n = group.algebra_dim();
    std::vector<int> all(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) { all[static_cast<std::size_t>(i)] = i; }
    return ReducedSystem(std::move(group), std::move(inertia), std::move(all), Mat::Identity(n, n), Mat{}, std::move(potential));
  }

  const GroupSpec & group() const { return group_; }
  int dim() const { return group_.algebra_dim(); }
  int control_dim() const { return static_cast<int>(actuated_.size()); }
  int unactuated_dim() const { return static_cast<int>(unactuated_.size()); }
  const Mat & inertia() const { return inertia_; }
  const Mat & control_map() const { return B_; }
  const Mat & control_map_inverse() const { return Binv_; }
  const Mat & drift() const { return drift_; }
  const Mat & actuated_basis() const { return E_act_; }
  const Mat & unactuated_basis() const { return E_un_; }
  const std::vector<int> & actuated() const { return actuated_; }
  const std::vector<int> & unactuated() const { return unactuated_; }
  const std::optional<Potential> & potential() const { return potential_; }
  bool has_potential() const { return potential_.has_value(); }

  ReducedSystem with_group(GroupSpec g) const
  {
    ReducedSystem s = *this;
    if (g.kind() != group_.kind() || g.algebra_dim() != group_.algebra_dim()) { throw DimensionMismatch("group change must keep the group"); }
    s.group_ = std::move(g);
    return s;
  }

  /// Continuous force a(xi) + E_act B u.
  Vec force(const AlgebraVector & xi, const Vec & u, double h) const { return drift_ * (h * xi) + E_act_ * (B_ * u); }

  Vec gradient_of_potential(const GroupElement & g) const { return potential_ ? potential_->gradient(g) : Vec::Zero(dim()); }

  double potential_energy(const GroupElement & g) const { return potential_ ? potential_->value(g) : 0.0; }

  double kinetic_energy(const AlgebraVector & xi) const { return 0.5 * xi.dot(inertia_ * xi); }

private:
  GroupSpec group_;
  Mat inertia_;
  std::vector<int> actuated_;
  std::vector<int> unactuated_;
  Mat B_;
  Mat Binv_;
  Mat drift_;
  Mat E_act_;
  Mat E_un_;
  std::optional<Potential> potential_;
};

// ---------------------------------------------------------------------------
// Forward dynamics
// ---------------------------------------------------------------------------

/// mu = (dtau^{-1}_{h xi})^* I xi
inline CoAlgebraVector discrete_momentum(const ReducedSystem & sys, const AlgebraVector & xi, double h)
{
  return lie::dtau_inv_dual(sys.group(), h * xi, sys.inertia() * xi);
}

/// nu_k and nu_{k+1} of one interval.
inline std::pair<CoAlgebraVector, CoAlgebraVector> nu_momenta(const ReducedSystem & sys, const AlgebraVector & xi,
                                                              const Vec & u_minus, const Vec & u_plus, double h,
                                                              const GroupElement * gk = nullptr, const GroupElement * gk1 = nullptr)
{
  const Vec mu  = discrete_momentum(sys, xi, h);
  const Vec mup = lie::coAd(lie::tau(sys.group(), h * xi), mu);
  Vec nu        = mu - 0.5 * h * sys.force(xi, u_minus, h);
  Vec nup       = mup + 0.5 * h * sys.force(xi, u_plus, h);
  if (sys.has_potential()) {
    if (!gk || !gk1) { throw std::invalid_argument("configuration needed when a potential is present"); }
    nu += 0.5 * h * sys.gradient_of_potential(*gk);
    nup -= 0.5 * h * sys.gradient_of_potential(*gk1);
  }
  return {nu, nup};
}

struct DepState
{
  GroupElement g;
  CoAlgebraVector nu;
};

struct DepStepResult
{
  AlgebraVector xi;
  DepState next;
};

/// One step of the forced discrete Euler-Poincare flow: solves
/// mu(xi) + (h/2) G(g_k) - (h/2) f(xi, u^-) = nu_k for xi, then transports.
inline DepStepResult dep_step(const ReducedSystem & sys, const DepState & s, const Vec & u_minus, const Vec & u_plus, double h,
                              const AlgebraVector & guess, int step = 0)
{
  const Vec Gk = sys.gradient_of_potential(s.g);
  solvers::ResidualSystem rs;
  rs.dim  = sys.dim();
  rs.eval = [&](const Vec & xi) -> Vec {
    return discrete_momentum(sys, xi, h) + 0.5 * h * Gk - 0.5 * h * sys.force(xi, u_minus, h) - s.nu;
  };
  solvers::SolverOptions opt;
  opt.tol      = 1e-15 * std::max(1.0, s.nu.lpNorm<Eigen::Infinity>());
  opt.max_iter = 50;
  Vec xi;
  solvers::SolveReport rep;
  try {
    xi = solvers::newton(rs, guess, rep, opt);
  } catch (const solvers::NoConvergence & e) {
    if (e.report().residual_norm > 1e-11 * std::max(1.0, s.nu.lpNorm<Eigen::Infinity>())) {
      throw StepSolveFailed(step, e.what());
    }
    xi = e.best();
  } catch (const Error & e) {
    throw StepSolveFailed(step, e.what());
  }
  GroupElement g1 = s.g * lie::tau(sys.group(), h * xi);
  const Vec mu    = discrete_momentum(sys, xi, h);
  Vec nu1         = lie::coAd(lie::tau(sys.group(), h * xi), mu) + 0.5 * h * sys.force(xi, u_plus, h);
  if (sys.has_potential()) { nu1 -= 0.5 * h * sys.gradient_of_potential(g1); }
  return {xi, DepState{std::move(g1), std::move(nu1)}};
}

struct Flow
{
  std::vector<GroupElement> g;   // g_0..g_N
  std::vector<AlgebraVector> xi; // xi_0..xi_{N-1}
  std::vector<CoAlgebraVector> nu; // nu_0..nu_N
};

/// Forward simulation from g_0 and the boundary momentum nu_0 = I xi(0).
inline Flow simulate(const ReducedSystem & sys, const GroupElement & g0, const AlgebraVector & xi0, const std::vector<std::pair<Vec, Vec>> & controls,
                     int N, double h)
{
  if (static_cast<int>(controls.size()) < N) { throw DimensionMismatch("need one control pair per interval"); }
  Flow f;
  f.g.reserve(static_cast<std::size_t>(N) + 1);
  f.g.push_back(g0);
  f.nu.push_back(sys.inertia() * xi0);
  DepState s{g0, f.nu.back()};
  AlgebraVector guess = xi0;
  for (int k = 0; k < N; ++k) {
    const auto & [um, up] = controls[static_cast<std::size_t>(k)];
    auto r                = dep_step(sys, s, um, up, h, guess, k);
    guess                 = r.xi;
    f.xi.push_back(r.xi);
    s = std::move(r.next);
    f.g.push_back(s.g);
    f.nu.push_back(s.nu);
  }
  return f;
}

inline std::vector<std::pair<Vec, Vec>> zero_controls(const ReducedSystem & sys, int N)
{
  return std::vector<std::pair<Vec, Vec>>(static_cast<std::size_t>(N), {Vec::Zero(sys.control_dim()), Vec::Zero(sys.control_dim())});
}

/// Momentum transported to the spatial frame, Ad^*_{g^{-1}} mu.
inline CoAlgebraVector spatial_momentum(const GroupElement & g, const CoAlgebraVector & mu) { return lie::coAd(g.inverse(), mu); }

// ---------------------------------------------------------------------------
// Optimal control
// ---------------------------------------------------------------------------

struct BoundaryLie
{
  GroupElement g0;
  AlgebraVector xi0;
  GroupElement gT;
  AlgebraVector xiT;
};

enum class Formulation {
  General,
  /// Minimum effort with full actuation: nu eliminated in closed form, N n unknowns.
  Eliminated
};

struct OcProblemLie
{
  ReducedSystem system;
  BoundaryLie boundary;
  int N    = 16;
  double h = 0.1;
  systems::CostSpec cost = systems::L2{};
  Formulation formulation = Formulation::General;
};

struct LieTrajectory
{
  std::vector<AlgebraVector> xi;                       // 0..N-1
  std::vector<CoAlgebraVector> nu;                     // 0..N, ends pinned
  std::vector<std::pair<Vec, Vec>> multipliers;        // per interval
  std::vector<GroupElement> g;                         // 0..N
  std::vector<CoAlgebraVector> mu;                     // 0..N-1
};

namespace detail {

struct Layout
{
  int n, c;
  bool pot;
  int xi() const { return 0; }
  int nu() const { return n; }
  int nup() const { return 2 * n; }
  int lm() const { return 3 * n; }
  int lp() const { return 3 * n + c; }
  int ga() const { return 3 * n + 2 * c; }
  int gb() const { return 4 * n + 2 * c; }
  int size() const { return 3 * n + 2 * c + (pot ? 2 * n : 0); }
};

template<typename T>
struct ForceTerms
{
  Eigen::Matrix<T, Eigen::Dynamic, 1> fb_minus, fb_plus;
};

/// Actuated-plus-unactuated part of the continuous force, f - a, on both sides of the interval.
template<typename T>
ForceTerms<T> force_terms(const ReducedSystem & sys, double h, const Eigen::Matrix<T, Eigen::Dynamic, 1> & z, const Layout & lay)
{
  using V       = Eigen::Matrix<T, Eigen::Dynamic, 1>;
  const int n   = lay.n;
  const V xi    = z.segment(lay.xi(), n);
  const V hxi   = T(h) * xi;
  const V Ixi   = sys.inertia().cast<T>() * xi;
  const V mu    = lie::dtau_inv_matrix<T>(sys.group(), hxi).transpose() * Ixi;
  const V mup   = lie::dtau_inv_matrix<T>(sys.group(), V(-hxi)).transpose() * Ixi;
  const V a     = sys.drift().cast<T>() * hxi;
  ForceTerms<T> f;
  f.fb_minus = T(2.0 / h) * (mu - z.segment(lay.nu(), n)) - a;
  f.fb_plus  = T(2.0 / h) * (z.segment(lay.nup(), n) - mup) - a;
  if (lay.pot) {
    f.fb_minus += z.segment(lay.ga(), n);
    f.fb_plus += z.segment(lay.gb(), n);
  }
  return f;
}

template<typename T>
T interval_value(const ReducedSystem & sys, double h, const systems::CostSpec & cost, const Eigen::Matrix<T, Eigen::Dynamic, 1> & z,
                 const Layout & lay)
{
  using V             = Eigen::Matrix<T, Eigen::Dynamic, 1>;
  const auto f        = force_terms<T>(sys, h, z, lay);
  const Mat ctrl      = sys.control_map_inverse() * sys.actuated_basis().transpose();
  const V um          = ctrl.cast<T>() * f.fb_minus;
  const V up          = ctrl.cast<T>() * f.fb_plus;
  T value             = T(0.5 * h) * (systems::evaluate<T>(cost, um) + systems::evaluate<T>(cost, up));
  if (lay.c > 0) {
    const Mat Et = sys.unactuated_basis().transpose();
    value += T(0.5 * h) * z.segment(lay.lm(), lay.c).dot(Et.cast<T>() * f.fb_minus);
    value += T(0.5 * h) * z.segment(lay.lp(), lay.c).dot(Et.cast<T>() * f.fb_plus);
  }
  return value;
}

}  // namespace detail

/// Residual, packing and recovery for a Lie group optimal control problem.
class LieOcSystem
{
public:
  explicit LieOcSystem(OcProblemLie prob) : prob_(std::move(prob))
  {
    const auto & s = prob_.system;
    if (prob_.N < 2) { throw std::invalid_argument("N must be >= 2"); }
    if (!(prob_.h > 0.0)) { throw std::invalid_argument("h must be positive"); }
    lie::detail::check_element(s.group(), prob_.boundary.g0);
    lie::detail::check_element(s.group(), prob_.boundary.gT);
    if (!prob_.boundary.g0.is_valid() || !prob_.boundary.gT.is_valid()) { throw std::invalid_argument("boundary configuration is not a valid group element"); }
    if (prob_.boundary.xi0.size() != s.dim() || prob_.boundary.xiT.size() != s.dim()) { throw DimensionMismatch("boundary velocity has wrong length"); }
    systems::validate(prob_.cost, s.control_dim());
    n_ = s.dim();
    c_ = s.unactuated_dim();
    if (prob_.formulation == Formulation::Eliminated
        && (c_ != 0 || !std::holds_alternative<systems::L2>(prob_.cost))) {
      throw std::invalid_argument("the eliminated formulation needs full actuation and an L2 cost");
    }
    nu0_ = s.inertia() * prob_.boundary.xi0;
    nuN_ = s.inertia() * prob_.boundary.xiT;
    lay_ = {n_, c_, s.has_potential()};
  }

  const OcProblemLie & problem() const { return prob_; }
  bool eliminated() const { return prob_.formulation == Formulation::Eliminated; }
  int constraint_dim() const { return c_; }

  int dim() const
  {
    const int N = prob_.N;
    return eliminated() ? N * n_ : N * n_ + (N - 1) * n_ + 2 * N * c_;
  }

  // unknown offsets
  int nu_offset() const { return prob_.N * n_; }
  int lambda_offset() const { return nu_offset() + (prob_.N - 1) * n_; }
  // residual row offsets
  int nu_row() const { return (prob_.N - 1) * n_; }
  int constraint_row() const { return 2 * (prob_.N - 1) * n_; }

  // -- packing --------------------------------------------------------------

  std::vector<AlgebraVector> unpack_xi(const Vec & z) const
  {
    std::vector<AlgebraVector> xi(static_cast<std::size_t>(prob_.N));
    for (int k = 0; k < prob_.N; ++k) { xi[static_cast<std::size_t>(k)] = z.segment(k * n_, n_); }
    return xi;
  }

  /// nu_0..nu_N, ends pinned by the boundary velocities.
  std::vector<CoAlgebraVector> unpack_nu(const Vec & z) const
  {
    const int N = prob_.N;
    std::vector<CoAlgebraVector> nu(static_cast<std::size_t>(N) + 1);
    nu.front() = nu0_;
    nu.back()  = nuN_;
    if (eliminated()) {
      const auto xi = unpack_xi(z);
      std::vector<Vec> mu, mup, a;
      for (const auto & x : xi) {
        mu.push_back(lie::dtau_inv_matrix(prob_.system.group(), Vec(prob_.h * x)).transpose() * (prob_.system.inertia() * x));
        mup.push_back(lie::dtau_inv_matrix(prob_.system.group(), Vec(-prob_.h * x)).transpose() * (prob_.system.inertia() * x));
        a.push_back(prob_.system.drift() * (prob_.h * x));
      }
      for (int k = 1; k < N; ++k) {
        const auto K = static_cast<std::size_t>(k);
        nu[K]        = 0.5 * (mu[K] + mup[K - 1]) + 0.25 * prob_.h * (a[K - 1] - a[K]);
      }
    } else {
      for (int k = 1; k < N; ++k) { nu[static_cast<std::size_t>(k)] = z.segment(nu_offset() + (k - 1) * n_, n_); }
    }
    return nu;
  }

  std::vector<std::pair<Vec, Vec>> unpack_multipliers(const Vec & z) const
  {
    std::vector<std::pair<Vec, Vec>> l(static_cast<std::size_t>(prob_.N), {Vec::Zero(c_), Vec::Zero(c_)});
    if (eliminated()) { return l; }
    for (int k = 0; k < prob_.N; ++k) {
      const int o                        = lambda_offset() + 2 * c_ * k;
      l[static_cast<std::size_t>(k)] = {z.segment(o, c_), z.segment(o + c_, c_)};
    }
    return l;
  }

  Vec pack(const std::vector<AlgebraVector> & xi, const std::vector<CoAlgebraVector> & nu = {},
           const std::vector<std::pair<Vec, Vec>> & mult = {}) const
  {
    const int N = prob_.N;
    if (static_cast<int>(xi.size()) != N) { throw DimensionMismatch("need N velocities"); }
    Vec z = Vec::Zero(dim());
    for (int k = 0; k < N; ++k) { z.segment(k * n_, n_) = xi[static_cast<std::size_t>(k)]; }
    if (eliminated()) { return z; }
    if (!nu.empty()) {
      if (static_cast<int>(nu.size()) != N + 1) { throw DimensionMismatch("need N+1 momenta"); }
      for (int k = 1; k < N; ++k) { z.segment(nu_offset() + (k - 1) * n_, n_) = nu[static_cast<std::size_t>(k)]; }
    }
    if (!mult.empty()) {
      for (int k = 0; k < N; ++k) {
        const int o             = lambda_offset() + 2 * c_ * k;
        z.segment(o, c_)      = mult[static_cast<std::size_t>(k)].first;
        z.segment(o + c_, c_) = mult[static_cast<std::size_t>(k)].second;
      }
    }
    return z;
  }

  /// g_0..g_N by g_{k+1} = g_k tau(h xi_k).
  std::vector<GroupElement> reconstruct(const std::vector<AlgebraVector> & xi) const
  {
    std::vector<GroupElement> g;
    g.reserve(xi.size() + 1);
    g.push_back(prob_.boundary.g0);
    for (const auto & x : xi) { g.push_back(g.back() * lie::tau(prob_.system.group(), prob_.h * x)); }
    return g;
  }

  // -- per-interval evaluation ----------------------------------------------

  struct IntervalEval
  {
    double value = 0.0;
    Vec grad;      // in the interval layout
    Mat Dplus_t;   // (dtau^{-1}_{h xi})^T
    Mat Dminus_t;  // (dtau^{-1}_{-h xi})^T
  };

  IntervalEval eval_interval(const AlgebraVector & xi, const Vec & nu, const Vec & nup, const Vec & lm, const Vec & lp,
                             const Vec & ga, const Vec & gb) const
  {
    Vec z(lay_.size());
    z.segment(lay_.xi(), n_)  = xi;
    z.segment(lay_.nu(), n_)  = nu;
    z.segment(lay_.nup(), n_) = nup;
    z.segment(lay_.lm(), c_)  = lm;
    z.segment(lay_.lp(), c_)  = lp;
    if (lay_.pot) {
      z.segment(lay_.ga(), n_) = ga;
      z.segment(lay_.gb(), n_) = gb;
    }
    IntervalEval e;
    const auto & sys = prob_.system;
    const double h   = prob_.h;
    const auto & cost = prob_.cost;
    const auto lay    = lay_;
    e.value = ad::value_and_gradient(
        [&](const ad::VecAD & x) { return detail::interval_value<ad::Scalar>(sys, h, cost, x, lay); }, z, e.grad);
    e.Dplus_t  = lie::dtau_inv_matrix(sys.group(), Vec(h * xi)).transpose();
    e.Dminus_t = lie::dtau_inv_matrix(sys.group(), Vec(-h * xi)).transpose();
    return e;
  }

  struct Unpacked
  {
    std::vector<AlgebraVector> xi;
    std::vector<CoAlgebraVector> nu;
    std::vector<std::pair<Vec, Vec>> mult;
    std::vector<GroupElement> g;
    std::vector<Vec> G;  // potential gradients at g_k
  };

  Unpacked unpack(const Vec & z) const
  {
    if (z.size() != dim()) { throw DimensionMismatch("unknown vector has wrong length"); }
    Unpacked u;
    u.xi   = unpack_xi(z);
    u.nu   = unpack_nu(z);
    u.mult = unpack_multipliers(z);
    if (lay_.pot) {
      u.g = reconstruct(u.xi);
      for (const auto & g : u.g) { u.G.push_back(prob_.system.gradient_of_potential(g)); }
    }
    return u;
  }

  IntervalEval eval_interval(const Unpacked & u, int k) const
  {
    const auto K    = static_cast<std::size_t>(k);
    static const Vec empty;
    return eval_interval(u.xi[K], u.nu[K], u.nu[K + 1], u.mult[K].first, u.mult[K].second, lay_.pot ? u.G[K] : empty,
                         lay_.pot ? u.G[K + 1] : empty);
  }

  /// tau^{-1}(g_N^{-1} g(T)) with g_N reconstructed from xi.
  Vec reconstruction_gap(const std::vector<AlgebraVector> & xi) const
  {
    GroupElement gN = prob_.boundary.g0;
    for (const auto & x : xi) { gN = gN * lie::tau(prob_.system.group(), prob_.h * x); }
    return lie::tau_inv(prob_.system.group(), gN.inverse() * prob_.boundary.gT);
  }

  Vec assemble(const Unpacked & u, const std::vector<IntervalEval> & ev) const
  {
    const int N = prob_.N;
    const int n = n_;
    Vec r       = Vec::Zero(dim());
    std::vector<Mat> H;
    if (lay_.pot) {
      for (const auto & g : u.g) { H.push_back(prob_.system.potential()->hessian(g)); }
    }
    for (int k = 1; k < N; ++k) {
      const auto & a = ev[static_cast<std::size_t>(k) - 1];
      const auto & b = ev[static_cast<std::size_t>(k)];
      Vec blk        = a.Dminus_t * a.grad.segment(lay_.xi(), n) - b.Dplus_t * b.grad.segment(lay_.xi(), n);
      if (lay_.pot) {
        blk += prob_.h * H[static_cast<std::size_t>(k)].transpose() * (a.grad.segment(lay_.gb(), n) + b.grad.segment(lay_.ga(), n));
      }
      r.segment((k - 1) * n, n) = blk;
      if (!eliminated()) {
        r.segment(nu_row() + (k - 1) * n, n) = a.grad.segment(lay_.nup(), n) + b.grad.segment(lay_.nu(), n);
      }
    }
    if (!eliminated()) {
      for (int k = 0; k < N; ++k) {
        const auto & e = ev[static_cast<std::size_t>(k)];
        r.segment(constraint_row() + 2 * c_ * k, c_)      = e.grad.segment(lay_.lm(), c_);
        r.segment(constraint_row() + 2 * c_ * k + c_, c_) = e.grad.segment(lay_.lp(), c_);
      }
    }
    r.tail(n) = reconstruction_gap(u.xi);
    return r;
  }

  Vec residual(const Vec & z) const
  {
    const auto u = unpack(z);
    std::vector<IntervalEval> ev;
    ev.reserve(static_cast<std::size_t>(prob_.N));
    for (int k = 0; k < prob_.N; ++k) { ev.push_back(eval_interval(u, k)); }
    return assemble(u, ev);
  }

  /// Sum of the multiplier-extended interval Lagrangians.
  double action(const Vec & z) const
  {
    const auto u = unpack(z);
    double s     = 0.0;
    for (int k = 0; k < prob_.N; ++k) { s += eval_interval(u, k).value; }
    return s;
  }

  /// Forward-difference Jacobian that re-evaluates only the intervals a column touches.
  /// Falls back to the plain version when a potential couples all intervals.
  Mat jacobian(const Vec & z) const
  {
    const auto sys = plain_system();
    if (lay_.pot || eliminated()) { return solvers::fd_jacobian(sys, z); }
    const int N  = prob_.N;
    const auto u = unpack(z);
    std::vector<IntervalEval> ev;
    for (int k = 0; k < N; ++k) { ev.push_back(eval_interval(u, k)); }
    const Vec r0 = assemble(u, ev);

    Mat J(dim(), dim());
    Unpacked up = u;
    auto ev2    = ev;
    for (int j = 0; j < dim(); ++j) {
      const double eps = 1e-7 * (1.0 + std::abs(z(j)));
      std::vector<int> touched;
      int block = 0;
      int comp  = 0;
      if (j < nu_offset()) {
        block = j / n_;
        comp  = j % n_;
        up.xi[static_cast<std::size_t>(block)](comp) += eps;
        touched = {block};
      } else if (j < lambda_offset()) {
        block = (j - nu_offset()) / n_ + 1;
        comp  = (j - nu_offset()) % n_;
        up.nu[static_cast<std::size_t>(block)](comp) += eps;
        touched = {block - 1, block};
      } else {
        block    = (j - lambda_offset()) / (2 * c_);
        comp     = (j - lambda_offset()) % (2 * c_);
        auto & m = up.mult[static_cast<std::size_t>(block)];
        (comp < c_ ? m.first(comp) : m.second(comp - c_)) += eps;
        touched = {block};
      }
      for (int k : touched) { ev2[static_cast<std::size_t>(k)] = eval_interval(up, k); }
      J.col(j) = (assemble(up, ev2) - r0) / eps;
      for (int k : touched) { ev2[static_cast<std::size_t>(k)] = ev[static_cast<std::size_t>(k)]; }
      up.xi   = u.xi;
      up.nu   = u.nu;
      up.mult = u.mult;
    }
    return J;
  }

  solvers::ResidualSystem system() const
  {
    auto s     = plain_system();
    s.jacobian = [this](const Vec & z) { return jacobian(z); };
    return s;
  }

  solvers::ResidualSystem plain_system() const
  {
    solvers::ResidualSystem s;
    s.dim  = dim();
    s.eval = [this](const Vec & z) { return residual(z); };
    return s;
  }

  /// Constant velocity tau^{-1}(g0^{-1} gT)/(N h); nu from the averaged unforced momentum; lambda = 0.
  Vec initial_guess() const
  {
    const Vec xbar = lie::tau_inv(prob_.system.group(), prob_.boundary.g0.inverse() * prob_.boundary.gT) / (prob_.N * prob_.h);
    std::vector<AlgebraVector> xi(static_cast<std::size_t>(prob_.N), xbar);
    if (eliminated()) { return pack(xi); }
    LieOcSystem elim = *this;
    elim.prob_.formulation = Formulation::Eliminated;
    return pack(xi, elim.unpack_nu(elim.pack(xi)));
  }

  /// Controls u^-_k, u^+_k of every interval from the nu relations.
  std::vector<std::pair<Vec, Vec>> controls(const Vec & z) const
  {
    const auto u = unpack(z);
    const Mat ctrl = prob_.system.control_map_inverse() * prob_.system.actuated_basis().transpose();
    std::vector<std::pair<Vec, Vec>> out;
    for (int k = 0; k < prob_.N; ++k) {
      const auto f = force_terms_at(u, k);
      out.emplace_back(ctrl * f.fb_minus, ctrl * f.fb_plus);
    }
    return out;
  }

  /// Phi^-_k, Phi^+_k of every interval.
  std::vector<std::pair<Vec, Vec>> constraints(const Vec & z) const
  {
    const auto u = unpack(z);
    const Mat Et = prob_.system.unactuated_basis().transpose();
    std::vector<std::pair<Vec, Vec>> out;
    for (int k = 0; k < prob_.N; ++k) {
      const auto f = force_terms_at(u, k);
      out.emplace_back(0.5 * prob_.h * Et * f.fb_minus, 0.5 * prob_.h * Et * f.fb_plus);
    }
    return out;
  }

  double cost(const std::vector<std::pair<Vec, Vec>> & u) const
  {
    double c = 0.0;
    for (const auto & [um, up] : u) {
      c += 0.5 * prob_.h * (systems::evaluate<double>(prob_.cost, um) + systems::evaluate<double>(prob_.cost, up));
    }
    return c;
  }

  LieTrajectory trajectory(const Vec & z) const
  {
    LieTrajectory t;
    t.xi          = unpack_xi(z);
    t.nu          = unpack_nu(z);
    t.multipliers = unpack_multipliers(z);
    t.g           = reconstruct(t.xi);
    for (const auto & x : t.xi) { t.mu.push_back(discrete_momentum(prob_.system, x, prob_.h)); }
    return t;
  }

private:
  detail::ForceTerms<double> force_terms_at(const Unpacked & u, int k) const
  {
    const auto K = static_cast<std::size_t>(k);
    Vec z        = Vec::Zero(lay_.size());
    z.segment(lay_.xi(), n_)  = u.xi[K];
    z.segment(lay_.nu(), n_)  = u.nu[K];
    z.segment(lay_.nup(), n_) = u.nu[K + 1];
    if (lay_.pot) {
      z.segment(lay_.ga(), n_) = u.G[K];
      z.segment(lay_.gb(), n_) = u.G[K + 1];
    }
    return detail::force_terms<double>(prob_.system, prob_.h, z, lay_);
  }

  OcProblemLie prob_;
  int n_ = 0;
  int c_ = 0;
  Vec nu0_, nuN_;
  detail::Layout lay_{0, 0, false};
};

inline Vec fully_actuated_residual(const OcProblemLie & prob, const Vec & z)
{
  const LieOcSystem s(prob);
  if (s.constraint_dim() != 0) { throw std::invalid_argument("system is underactuated"); }
  return s.residual(z);
}

inline Vec underactuated_residual(const OcProblemLie & prob, const Vec & z) { return LieOcSystem(prob).residual(z); }

struct LieSolution
{
  LieTrajectory trajectory;
  std::vector<std::pair<Vec, Vec>> controls;
  double cost = 0.0;
  solvers::SolveReport report;
  Vec unknowns;
};

enum class SolverChoice { NewtonThenLm, LevenbergMarquardt };

inline LieSolution finish(const LieOcSystem & s, Vec z, solvers::SolveReport rep)
{
  LieSolution sol;
  sol.unknowns   = std::move(z);
  sol.report     = std::move(rep);
  sol.trajectory = s.trajectory(sol.unknowns);
  sol.controls   = s.controls(sol.unknowns);
  sol.cost       = s.cost(sol.controls);
  return sol;
}

inline LieSolution solve(const OcProblemLie & prob, const solvers::SolverOptions & opt = {},
                         SolverChoice choice = SolverChoice::NewtonThenLm, const Vec * guess = nullptr)
{
  const LieOcSystem s(prob);
  const auto sys = s.system();
  const Vec z0   = guess ? *guess : s.initial_guess();
  solvers::SolveReport rep;
  Vec z = choice == SolverChoice::LevenbergMarquardt ? solvers::levenberg_marquardt(sys, z0, rep, opt)
                                                     : solvers::solve(sys, z0, rep, opt);
  return finish(s, std::move(z), std::move(rep));
}

/// Smoothed-L1 problems by continuation in eps: an L2 warm start, then eps
/// multiplied by `factor` from `eps_start` down to the problem's own value.
/// Intermediate stages that stall still pass on their best iterate. Other costs
/// fall through to solve().
inline LieSolution solve_continuation(const OcProblemLie & prob, const solvers::SolverOptions & opt = {}, double eps_start = 1.0,
                                      double factor = 0.5)
{
  const auto * l1 = std::get_if<systems::SmoothedL1>(&prob.cost);
  if (!l1) { return solve(prob, opt); }
  if (!(factor > 0.0 && factor < 1.0)) { throw std::invalid_argument("continuation factor must lie in (0, 1)"); }
  const LieOcSystem s(prob);
  OcProblemLie stage = prob;
  stage.cost         = systems::L2{};
  int iterations     = 0;
  Vec z              = s.initial_guess();
  // intermediate stages only need to land near the next root
  solvers::SolverOptions loose = opt;
  loose.max_iter               = opt.max_iter > 0 ? std::min(opt.max_iter, 60) : 60;
  auto advance                 = [&](SolverChoice choice) {
    try {
      auto sol = solve(stage, loose, choice, &z);
      iterations += sol.report.iterations;
      z = std::move(sol.unknowns);
    } catch (const solvers::NoConvergence & e) {
      iterations += e.report().iterations;
      z = e.best();
    }
  };
  advance(SolverChoice::LevenbergMarquardt);
  for (double eps = eps_start; eps > l1->eps * (1.0 + 1e-9); eps *= factor) {
    auto c     = *l1;
    c.eps      = eps;
    stage.cost = c;
    advance(SolverChoice::NewtonThenLm);
  }
  solvers::SolveReport rep;
  try {
    Vec x = solvers::solve(s.system(), z, rep, opt);
    rep.iterations += iterations;
    return finish(s, std::move(x), std::move(rep));
  } catch (const solvers::NoConvergence & e) {
    auto r = e.report();
    r.iterations += iterations;
    throw solvers::NoConvergence(r, e.best());
  }
}

}  // namespace discvar::lgoc
