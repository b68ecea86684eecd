#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <vector>

#include "discvar/costs.hpp"
#include "discvar/lgoc.hpp"
#include "discvar/lie.hpp"
#include "discvar/mech.hpp"
#include "discvar/tboc.hpp"

namespace discvar::systems {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// ---------------------------------------------------------------------------
// Underwater vehicle on SE(3)
// ---------------------------------------------------------------------------

/// Five-thruster vehicle. The body axis of the cylinder is body x.
struct UuvParams
{
  double mass   = 3.0;
  double radius = 0.1;
  double length = 0.6;
  double c      = 0.3;
  double d      = 0.3;
  Mat H         = -0.1 * Vec((Vec(6) << 1, 1, 1, 2, 2, 2).finished()).asDiagonal().toDenseMatrix();

  /// diag(Ix, Iy, Iz, m, m, m) of a solid cylinder.
  Mat inertia() const
  {
    const double ix = 0.5 * mass * radius * radius;
    const double iy = mass * (3.0 * radius * radius + length * length) / 12.0;
    Vec d(6);
    d << ix, iy, iy, mass, mass, mass;
    return d.asDiagonal();
  }

  void validate() const
  {
    if (!(mass > 0.0 && radius > 0.0 && length > 0.0 && c > 0.0 && d > 0.0)) {
      throw std::invalid_argument("vehicle constants must be positive");
    }
    if (H.rows() != 6 || H.cols() != 6) { throw DimensionMismatch("drag matrix must be 6x6"); }
    const Mat S = H + H.transpose();
    if (Eigen::SelfAdjointEigenSolver<Mat>(S).eigenvalues().maxCoeff() >= 0.0) {
      throw std::invalid_argument("drag matrix must be negative definite");
    }
  }
};

/// b(u) = B u on the actuated directions e1..e5.
inline Mat uuv_control_matrix(const UuvParams & p)
{
  const double s = std::sin(std::numbers::pi / 3.0);
  Mat B(5, 5);
  // clang-format off
  B << 0,           0,         0,    -p.d, p.d,
       p.c / 2,     p.c / 2,  -p.c,   0,   0,
      -p.c * s,     p.c * s,   0,     0,   0,
       1,           1,         1,     0,   0,
       0,           0,         0,     1,   1;
  // clang-format on
  return B;
}

inline lgoc::ReducedSystem make_uuv(const UuvParams & p = {}, lie::Retraction r = lie::Retraction::cayley())
{
  p.validate();
  return lgoc::ReducedSystem(lie::GroupSpec::se3(r), p.inertia(), {0, 1, 2, 3, 4}, uuv_control_matrix(p), p.H);
}

/// a(W) + sum_s b_s(u) e^s with a(W) = H tau^{-1}(W).
inline Vec uuv_control_force(const UuvParams & p, const lie::GroupElement & W, const Vec & u,
                             lie::Retraction r = lie::Retraction::cayley())
{
  if (u.size() != 5) { throw DimensionMismatch("vehicle has five thrusters"); }
  Vec f = p.H * lie::tau_inv(lie::GroupSpec::se3(r), W);
  f.head(5) += uuv_control_matrix(p) * u;
  return f;
}

// ---------------------------------------------------------------------------
// Rigid body on SO(3)
// ---------------------------------------------------------------------------

/// Torques on the listed body axes (0-based), B = I.
inline lgoc::ReducedSystem make_rigid_body_so3(const Eigen::Vector3d & inertia_diag, std::vector<int> actuated = {0, 1},
                                               lie::Retraction r = lie::Retraction::cayley())
{
  if ((inertia_diag.array() <= 0.0).any()) { throw std::invalid_argument("inertia entries must be positive"); }
  const auto m = static_cast<Eigen::Index>(actuated.size());
  return lgoc::ReducedSystem(lie::GroupSpec::so3(r), Mat(inertia_diag.asDiagonal()), std::move(actuated), Mat::Identity(m, m));
}

/// V(R) = c <R e3, e3>.
inline lgoc::Potential heavy_top_potential(double c)
{
  const Eigen::Vector3d e3 = Eigen::Vector3d::UnitZ();
  lgoc::Potential p;
  p.value    = [=](const lie::GroupElement & g) { return c * e3.dot(g.rotation_block() * e3); };
  p.gradient = [=](const lie::GroupElement & g) -> Vec { return c * e3.cross(g.rotation_block().transpose() * e3); };
  p.hessian  = [=](const lie::GroupElement & g) -> Mat {
    return c * lie::hat(e3) * lie::hat(Eigen::Vector3d(g.rotation_block().transpose() * e3));
  };
  return p;
}

// ---------------------------------------------------------------------------
// Point mass in R^n
// ---------------------------------------------------------------------------

enum class ForceDiscretization {
  /// f^± = u^±
  Identity,
  /// f^± = (h/2) u^±
  Trapezoidal
};

struct PointMass
{
  mech::RnLagrangian lagrangian;
  ForceDiscretization forces = ForceDiscretization::Trapezoidal;

  mech::DiscreteForcePairRn force_pair() const
  {
    const int n = lagrangian.dim();
    return forces == ForceDiscretization::Identity ? mech::DiscreteForcePairRn::identity(n)
                                                   : mech::DiscreteForcePairRn::trapezoidal(n, lagrangian.h);
  }

  tboc::OcProblemRn problem(const tboc::BoundaryRn & b, int N, CostSpec cost = L2{}) const
  {
    return tboc::OcProblemRn{lagrangian, force_pair(), std::move(cost), b, N};
  }

  /// The same mass as an abelian group system, for the Lie group solver.
  lgoc::ReducedSystem as_group_system() const
  {
    return lgoc::ReducedSystem::fully_actuated(lie::GroupSpec::real_n(lagrangian.dim()), lagrangian.M);
  }
};

/// Free point mass (V = 0).
inline PointMass make_point_mass(int n, const Mat & M, double h, ForceDiscretization f = ForceDiscretization::Trapezoidal)
{
  if (M.rows() != n) { throw DimensionMismatch("mass matrix does not match n"); }
  return PointMass{mech::RnLagrangian::free(M, h), f};
}

inline PointMass make_point_mass(int n, const Mat & M, double h, std::function<double(const Vec &)> V,
                                 std::function<Vec(const Vec &)> V_x, std::function<Mat(const Vec &)> V_xx,
                                 ForceDiscretization f = ForceDiscretization::Trapezoidal)
{
  if (M.rows() != n) { throw DimensionMismatch("mass matrix does not match n"); }
  return PointMass{mech::RnLagrangian::make(M, std::move(V), std::move(V_x), std::move(V_xx), h), f};
}

/// V(x) = k/2 |x|^2
inline PointMass make_harmonic(int n, const Mat & M, double k, double h)
{
  return make_point_mass(
      n, M, h, [k](const Vec & x) { return 0.5 * k * x.squaredNorm(); }, [k](const Vec & x) -> Vec { return k * x; },
      [k, n](const Vec &) -> Mat { return k * Mat::Identity(n, n); });
}

}  // namespace discvar::systems
