#include <gtest/gtest.h>

#include <random>

#include "discvar/mech.hpp"
#include "discvar/systems.hpp"
#include "oracles.hpp"

using namespace discvar;
using namespace discvar::mech;

namespace {

RnLagrangian quartic(int n, double h)
{
  // V = |q|^4 / 4, rotation invariant
  return RnLagrangian::make(
      Mat::Identity(n, n), [](const Vec & q) { return 0.25 * q.squaredNorm() * q.squaredNorm(); },
      [](const Vec & q) -> Vec { return q.squaredNorm() * q; },
      [n](const Vec & q) -> Mat { return q.squaredNorm() * Mat::Identity(n, n) + 2.0 * q * q.transpose(); }, h);
}

}  // namespace

TEST(DiscreteLagrangian, TrapezoidalValue)
{
  const auto L = systems::make_harmonic(1, Mat::Identity(1, 1), 2.0, 0.5).lagrangian;
  const Vec a  = Vec::Constant(1, 1.0);
  const Vec b  = Vec::Constant(1, 2.0);
  // (1/2)(1/0.5)(1)^2 - (0.5/2)(1 + 4)
  EXPECT_DOUBLE_EQ(trapezoidal_ld(L, a, b), 1.0 - 1.25);
}

TEST(DiscreteLagrangian, SlotDerivativesMatchFiniteDifferences)
{
  std::mt19937 rng(1);
  const auto L = quartic(3, 0.1);
  for (int i = 0; i < 20; ++i) {
    const Vec a = oracle::random_vec(rng, 3);
    const Vec b = oracle::random_vec(rng, 3);
    const Vec g1 = oracle::central_gradient([&](const Vec & x) { return trapezoidal_ld(L, x, b); }, a);
    const Vec g2 = oracle::central_gradient([&](const Vec & x) { return trapezoidal_ld(L, a, x); }, b);
    EXPECT_LT((d1_ld(L, a, b) - g1).norm(), 1e-6);
    EXPECT_LT((d2_ld(L, a, b) - g2).norm(), 1e-6);
  }
}

TEST(DiscreteLagrangian, GenericMatchesAnalytic)
{
  const auto L  = quartic(2, 0.2);
  const auto G  = generic([&](const Vec & a, const Vec & b) { return trapezoidal_ld(L, a, b); });
  const Vec a   = Vec::LinSpaced(2, 0.3, -0.4);
  const Vec b   = Vec::LinSpaced(2, 1.1, 0.2);
  EXPECT_LT((G.d1(a, b) - d1_ld(L, a, b)).norm(), 1e-8);
  EXPECT_LT((G.d2(a, b) - d2_ld(L, a, b)).norm(), 1e-8);
  EXPECT_DOUBLE_EQ(G(a, b), trapezoidal_ld(L, a, b));
}

TEST(RnLagrangian, Validation)
{
  Mat asym(2, 2);
  asym << 1, 0.5, 0, 1;
  EXPECT_THROW(RnLagrangian::free(asym, 0.1), std::invalid_argument);
  EXPECT_THROW(RnLagrangian::free(Mat::Zero(2, 2), 0.1), NotInvertible);
  EXPECT_THROW(RnLagrangian::free(Mat::Identity(2, 2), 0.0), std::invalid_argument);
  EXPECT_THROW(RnLagrangian::free(Mat::Identity(2, 3), 0.1), DimensionMismatch);
}

TEST(Forces, AffineBlocks)
{
  const auto F = DiscreteForcePairRn::trapezoidal(2, 0.4);
  const Vec u  = Vec::LinSpaced(2, 1.0, 2.0);
  EXPECT_LT((F.f_minus(Vec(), Vec(), u) - 0.2 * u).norm(), 1e-15);
  EXPECT_LT((F.f_plus(Vec(), Vec(), u) - 0.2 * u).norm(), 1e-15);
  EXPECT_EQ(F.control_dim, 2);
  EXPECT_EQ(DiscreteForcePairRn::zero(3).control_dim, 0);
  EXPECT_THROW(DiscreteForcePairRn::make_affine(Vec::Zero(2), Mat::Identity(2, 2), Vec::Zero(3), Mat::Identity(2, 2)),
               DimensionMismatch);
}

TEST(Integrate, FreeParticleMovesLinearly)
{
  const auto L = RnLagrangian::free(2.0 * Mat::Identity(2, 2), 0.1);
  Vec q0(2), q1(2);
  q0 << 0, 1;
  q1 << 0.1, 0.9;
  const auto q = integrate(L, DiscreteForcePairRn::zero(2), q0, q1, zero_controls(50, 0), 50);
  ASSERT_EQ(q.size(), 51u);
  for (int k = 0; k <= 50; ++k) { EXPECT_LT((q[k] - (q0 + k * (q1 - q0))).norm(), 1e-12); }
}

TEST(Integrate, HarmonicMatchesStormerVerlet)
{
  const double h = 0.05, k = 3.0, m = 2.0;
  const auto L   = systems::make_harmonic(1, Mat::Constant(1, 1, m), k, h).lagrangian;
  const Vec q0   = Vec::Constant(1, 1.0);
  const Vec q1   = Vec::Constant(1, 0.99);
  const int N    = 400;
  const auto q   = integrate(L, DiscreteForcePairRn::zero(1), q0, q1, zero_controls(N, 0), N);
  // explicit recursion q_{k+1} = 2 q_k - q_{k-1} - h^2 (k/m) q_k
  double a = 1.0, b = 0.99;
  for (int i = 2; i <= N; ++i) {
    const double c = 2 * b - a - h * h * k / m * b;
    a              = b;
    b              = c;
    ASSERT_NEAR(q[i](0), c, 1e-10) << i;
  }
}

TEST(Integrate, HarmonicEnergyStaysBounded)
{
  const double h = 0.1;
  const auto L   = systems::make_harmonic(1, Mat::Identity(1, 1), 1.0, h).lagrangian;
  const int N    = 20000;
  const auto q   = integrate(L, DiscreteForcePairRn::zero(1), Vec::Constant(1, 1.0), Vec::Constant(1, std::cos(h)),
                             zero_controls(N, 0), N);
  double emin = 1e9, emax = -1e9;
  for (int i = 0; i < N; ++i) {
    const double v = (q[i + 1](0) - q[i](0)) / h;
    const double x = 0.5 * (q[i + 1](0) + q[i](0));
    const double e = 0.5 * v * v + 0.5 * x * x;
    emin           = std::min(emin, e);
    emax           = std::max(emax, e);
  }
  // no drift over 2000 time units, only O(h^2) oscillation
  EXPECT_LT(emax - emin, 0.02);
}

TEST(Integrate, ConstantForceIsExactForQuadratics)
{
  const double h = 0.1;
  const auto L   = RnLagrangian::free(Mat::Identity(1, 1), h);
  const auto F   = DiscreteForcePairRn::trapezoidal(1, h);
  const double a = 2.0, v = -1.0;
  Controls u(30, ControlPair{Vec::Constant(1, a), Vec::Constant(1, a)});
  const auto q = integrate(L, F, Vec::Zero(1), Vec::Constant(1, v * h + 0.5 * a * h * h), u, 30);
  for (int k = 0; k <= 30; ++k) {
    const double t = k * h;
    EXPECT_NEAR(q[k](0), v * t + 0.5 * a * t * t, 1e-12);
  }
}

TEST(Integrate, LegendreMomentaMatchAcrossNodes)
{
  std::mt19937 rng(3);
  const auto L = quartic(2, 0.05);
  const auto F = DiscreteForcePairRn::trapezoidal(2, 0.05);
  Controls u;
  for (int k = 0; k < 40; ++k) { u.push_back({oracle::random_vec(rng, 2), oracle::random_vec(rng, 2)}); }
  const auto q = integrate(L, F, Vec::Zero(2), Vec::Constant(2, 0.02), u, 40);
  for (int k = 1; k < 40; ++k) {
    const auto [pm_prev, pp_prev] = legendre_pair(L, F, q[k - 1], q[k], u[k - 1].minus, u[k - 1].plus);
    const auto [pm_next, pp_next] = legendre_pair(L, F, q[k], q[k + 1], u[k].minus, u[k].plus);
    EXPECT_LT((pp_prev - pm_next).norm(), 1e-10) << k;
    EXPECT_LT(forced_del_residual(L, F, q[k - 1], q[k], q[k + 1], u[k - 1].plus, u[k].minus).norm(), 1e-10);
  }
}

TEST(Integrate, DiscreteNoetherAngularMomentum)
{
  const auto L = quartic(2, 0.05);
  const auto F = DiscreteForcePairRn::zero(2);
  Vec q0(2), q1(2);
  q0 << 1.0, 0.0;
  q1 << 1.0, 0.05;
  const int N  = 2000;
  const auto q = integrate(L, F, q0, q1, zero_controls(N, 0), N);
  auto ang     = [&](int k) {
    const auto [pm, pp] = legendre_pair(L, F, q[k], q[k + 1], Vec(), Vec());
    return q[k](0) * pm(1) - q[k](1) * pm(0);
  };
  const double J0 = ang(0);
  for (int k = 1; k < N; k += 97) { EXPECT_NEAR(ang(k), J0, 1e-11); }
}

TEST(Integrate, StepFailureReportsStep)
{
  const auto L = RnLagrangian::free(Mat::Identity(1, 1), 1.0);
  DiscreteForcePairRn F;
  F.control_dim = 0;
  // residual -(x - q) + x^2 + 10 + ... has no real root in x
  F.f_minus = [](const Vec &, const Vec & qk1, const Vec &) -> Vec { return qk1.cwiseProduct(qk1).array() + 10.0; };
  F.f_plus  = [](const Vec &, const Vec &, const Vec &) -> Vec { return Vec::Zero(1); };
  try {
    integrate(L, F, Vec::Zero(1), Vec::Zero(1), zero_controls(5, 0), 5);
    FAIL() << "expected StepSolveFailed";
  } catch (const StepSolveFailed & e) {
    EXPECT_EQ(e.step(), 1);
  }
}

TEST(Integrate, ArgumentChecks)
{
  const auto L = RnLagrangian::free(Mat::Identity(2, 2), 0.1);
  EXPECT_THROW(integrate(L, DiscreteForcePairRn::zero(2), Vec::Zero(3), Vec::Zero(2), zero_controls(4, 0), 4),
               DimensionMismatch);
  EXPECT_THROW(integrate(L, DiscreteForcePairRn::zero(2), Vec::Zero(2), Vec::Zero(2), zero_controls(2, 0), 4),
               DimensionMismatch);
}
