#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "discvar/systems.hpp"
#include "oracles.hpp"

using namespace discvar;
using namespace discvar::systems;

namespace {

// thruster map written out component by component
Vec thrusters_by_hand(const UuvParams & p, const Vec & u)
{
  Vec b = Vec::Zero(6);
  b(0)  = p.d * (u(4) - u(3));
  b(1)  = p.c * ((u(0) + u(1)) / 2 - u(2));
  b(2)  = p.c * std::sin(std::numbers::pi / 3) * (u(1) - u(0));
  b(3)  = u(0) + u(1) + u(2);
  b(4)  = u(3) + u(4);
  return b;
}

lie::GroupElement e6() { return lie::GroupElement::identity(lie::GroupSpec::se3()); }

}  // namespace

TEST(Uuv, ControlForceExamples)
{
  const UuvParams p;
  EXPECT_LT(uuv_control_force(p, e6(), Vec::Zero(5)).norm(), 1e-15);

  Vec u(5), want(6);
  u << 1, 1, 1, 0, 0;
  want << 0, 0, 0, 3, 0, 0;
  EXPECT_LT((uuv_control_force(p, e6(), u) - want).norm(), 1e-15);

  u << 0, 0, 0, 1, 0;
  want << -0.3, 0, 0, 0, 1, 0;
  EXPECT_LT((uuv_control_force(p, e6(), u) - want).norm(), 1e-15);
}

TEST(Uuv, ControlForceMatchesHandFormulas)
{
  std::mt19937 rng(21);
  UuvParams p;
  p.c = 0.45;
  p.d = 0.2;
  for (int i = 0; i < 50; ++i) {
    const Vec u = oracle::random_vec(rng, 5);
    EXPECT_LT((uuv_control_force(p, e6(), u) - thrusters_by_hand(p, u)).norm(), 1e-14);
  }
}

TEST(Uuv, ControlMapIsRankFiveAndSkipsSixthAxis)
{
  const UuvParams p;
  const Mat B = uuv_control_matrix(p);
  EXPECT_EQ(Eigen::FullPivLU<Mat>(B).rank(), 5);
  std::mt19937 rng(22);
  const auto W = lie::tau(lie::GroupSpec::se3(), 0.3 * oracle::random_vec(rng, 6));
  const Vec drift = uuv_control_force(p, W, Vec::Zero(5));
  for (int i = 0; i < 10; ++i) {
    const Vec u = oracle::random_vec(rng, 5);
    const Vec f = uuv_control_force(p, W, u);
    // affine in u, sixth component is drift only
    EXPECT_NEAR(f(5), drift(5), 1e-15);
    EXPECT_LT((f - drift - thrusters_by_hand(p, u)).norm(), 1e-14);
  }
}

TEST(Uuv, DriftIsLinearNearIdentity)
{
  const UuvParams p;
  Vec xi(6);
  xi << 0.2, -0.1, 0.4, 1.0, -0.5, 0.3;
  for (double e : {1e-2, 1e-4}) {
    const auto W  = lie::tau(lie::GroupSpec::se3(), e * xi);
    const Vec a   = uuv_control_force(p, W, Vec::Zero(5));
    EXPECT_LT((a / e - p.H * xi).norm(), 1e-12);
  }
}

TEST(Uuv, CylinderInertia)
{
  const Mat I = UuvParams{}.inertia();
  // m r^2 / 2 and m (3 r^2 + L^2) / 12 with m = 3, r = 0.1, L = 0.6
  EXPECT_DOUBLE_EQ(I(0, 0), 0.015);
  EXPECT_NEAR(I(1, 1), 0.0975, 1e-15);
  EXPECT_NEAR(I(2, 2), 0.0975, 1e-15);
  for (int i = 3; i < 6; ++i) { EXPECT_DOUBLE_EQ(I(i, i), 3.0); }
  EXPECT_DOUBLE_EQ((I - Mat(I.diagonal().asDiagonal())).norm(), 0.0);
}

TEST(Uuv, ParameterValidation)
{
  UuvParams p;
  p.mass = 0.0;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p   = UuvParams{};
  p.H = -p.H;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p   = UuvParams{};
  p.H = Mat::Identity(5, 5);
  EXPECT_THROW(p.validate(), DimensionMismatch);
  EXPECT_THROW(uuv_control_force(UuvParams{}, e6(), Vec::Zero(4)), DimensionMismatch);
  EXPECT_THROW(make_uuv(p), DimensionMismatch);
}

TEST(Uuv, SystemStructure)
{
  const auto s = make_uuv();
  EXPECT_EQ(s.dim(), 6);
  EXPECT_EQ(s.control_dim(), 5);
  ASSERT_EQ(s.unactuated().size(), 1u);
  EXPECT_EQ(s.unactuated()[0], 5);
  EXPECT_LT((s.drift() - UuvParams{}.H).norm(), 1e-15);
}

TEST(RigidBody, TorqueBasis)
{
  const auto s = make_rigid_body_so3({1.0, 2.0, 3.0}, {0, 1});
  EXPECT_LT((s.force(Vec::Zero(3), Vec((Vec(2) << 1, 0).finished()), 0.1) - Vec((Vec(3) << 1, 0, 0).finished())).norm(),
            1e-15);
  std::mt19937 rng(23);
  for (int i = 0; i < 10; ++i) {
    const Vec f = s.force(oracle::random_vec(rng, 3), oracle::random_vec(rng, 2), 0.1);
    EXPECT_EQ(f(2), 0.0);
  }
  EXPECT_EQ(s.unactuated(), std::vector<int>{2});
  EXPECT_THROW(make_rigid_body_so3({1.0, 0.0, 3.0}), std::invalid_argument);
}

TEST(RigidBody, UnderactuatedReorientationSatisfiesConstraints)
{
  const auto sys = make_rigid_body_so3({1.0, 2.0, 3.0}, {0, 1});
  const auto g0  = lie::GroupElement::identity(lie::GroupSpec::so3());
  const auto gT  = lie::GroupElement::rotation(oracle::axis_angle({0.4, -0.3, 0.2}));
  const lgoc::OcProblemLie prob{sys, {g0, Vec::Zero(3), gT, Vec::Zero(3)}, 10, 0.25, L2{}, lgoc::Formulation::General};
  const auto sol = lgoc::solve(prob, {.tol = 1e-11});
  EXPECT_TRUE(sol.report.converged);
  const lgoc::LieOcSystem s(prob);
  for (const auto & [pm, pp] : s.constraints(sol.unknowns)) {
    EXPECT_LE(pm.lpNorm<Eigen::Infinity>(), 1e-9);
    EXPECT_LE(pp.lpNorm<Eigen::Infinity>(), 1e-9);
  }
}

TEST(HeavyTop, PotentialValue)
{
  const auto V = heavy_top_potential(0.7);
  EXPECT_DOUBLE_EQ(V.value(lie::GroupElement::identity(lie::GroupSpec::so3())), 0.7);
  // upside down about x
  const auto flip = lie::GroupElement::rotation(oracle::axis_angle({std::numbers::pi, 0, 0}));
  EXPECT_NEAR(V.value(flip), -0.7, 1e-12);
  EXPECT_LT(V.gradient(flip).norm(), 1e-12);
}

TEST(PointMass, DoubleIntegratorFactory)
{
  const auto pm = make_point_mass(1, Mat::Identity(1, 1), 0.1);
  EXPECT_EQ(pm.lagrangian.dim(), 1);
  EXPECT_EQ(pm.force_pair().control_dim, 1);
  const auto prob = pm.problem({Vec::Zero(1), Vec::Zero(1), Vec::Ones(1), Vec::Zero(1)}, 10);
  EXPECT_EQ(prob.N, 10);
  EXPECT_EQ(pm.as_group_system().group().kind(), lie::GroupKind::RealN);
}

TEST(PointMass, MassMatrixChecks)
{
  Mat asym(2, 2);
  asym << 1, 0.3, 0, 1;
  EXPECT_THROW(make_point_mass(2, asym, 0.1), std::invalid_argument);
  EXPECT_THROW(make_point_mass(3, Mat::Identity(2, 2), 0.1), DimensionMismatch);
}

TEST(PointMass, HarmonicFollowsCosine)
{
  const double h = 0.01;
  const auto pm  = make_harmonic(1, Mat::Identity(1, 1), 4.0, h);
  const int N    = 300;
  const auto q   = mech::integrate(pm.lagrangian, mech::DiscreteForcePairRn::zero(1), Vec::Ones(1),
                                   Vec::Constant(1, std::cos(2.0 * h)), mech::zero_controls(N, 0), N);
  double err = 0.0;
  for (int k = 0; k <= N; ++k) { err = std::max(err, std::abs(q[k](0) - std::cos(2.0 * k * h))); }
  EXPECT_LT(err, 1e-3);
}

TEST(Costs, L2AndSmoothedL1Values)
{
  Vec u(3);
  u << 0.5, -2.0, 0.0;
  EXPECT_DOUBLE_EQ(evaluate<double>(L2{}, u), 0.5 * 4.25);
  EXPECT_DOUBLE_EQ(evaluate<double>(L2{2.0}, u), 4.25);
  const SmoothedL1 c{1e-4, {}, {}, 1e3};
  EXPECT_NEAR(evaluate<double>(c, u), 2.5, 3e-4);
  EXPECT_EQ(name(L2{}), "l2");
  EXPECT_EQ(name(c), "smoothed_l1");
}

TEST(Costs, SmoothedL1ApproachesL1)
{
  std::mt19937 rng(24);
  for (double eps : {1e-1, 1e-3, 1e-6}) {
    const SmoothedL1 c{eps, {}, {}, 1e3};
    for (int i = 0; i < 20; ++i) {
      const Vec u = oracle::random_vec(rng, 4);
      const double gap = evaluate<double>(c, u) - u.lpNorm<1>();
      EXPECT_GE(gap, 0.0);
      EXPECT_LE(gap, 4 * eps);
    }
  }
}

TEST(Costs, BoundPenalty)
{
  const auto c = smoothed_l1(2, -1.0, 1.0, 1e-4, 1e3);
  Vec inside(2), outside(2);
  inside << 0.9, -0.9;
  outside << 1.1, -0.9;
  const double base = std::sqrt(1.1 * 1.1 + 1e-8) + std::sqrt(0.81 + 1e-8);
  EXPECT_NEAR(evaluate<double>(c, outside), base + 1e3 * 0.01, 1e-12);
  EXPECT_NEAR(evaluate<double>(c, inside), 2 * std::sqrt(0.81 + 1e-8), 1e-12);
}

TEST(Costs, Validation)
{
  EXPECT_NO_THROW(validate(L2{}, 2));
  EXPECT_THROW(validate(L2{0.0}, 2), std::invalid_argument);
  EXPECT_THROW(validate(SmoothedL1{0.0, {}, {}, 1e3}, 2), std::invalid_argument);
  EXPECT_THROW(validate(smoothed_l1(3, -1, 1), 2), std::invalid_argument);
  EXPECT_THROW(validate(smoothed_l1(2, 1, -1), 2), std::invalid_argument);
  SmoothedL1 lopsided{1e-4, Vec::Zero(2), Vec::Ones(1), 1e3};
  EXPECT_THROW(validate(lopsided, 2), std::invalid_argument);
}
