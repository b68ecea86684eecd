#pragma once

/**
 * @file
 * @brief Lie group kernel for R^n, SO(3) and SE(3).
 *
 * Algebra coordinates
 * -------------------
 * R^n:    (x1 ... xn)
 * SO(3):  (w1 w2 w3)
 * SE(3):  (w1 w2 w3 v1 v2 v3), angular block first
 *
 * Group representation
 * --------------------
 * R^n:    translation vector (n x 1)
 * SO(3):  rotation matrix (3 x 3)
 * SE(3):  homogeneous matrix [R x; 0 1] (4 x 4)
 *
 * Dual vectors use the same coordinates; the pairing <mu, xi> is the dot product.
 * All tangent maps are right-trivialized: d/de tau(xi + e eta) = (dtau_xi eta)^ tau(xi).
 */

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "discvar/errors.hpp"

namespace discvar::lie {

template<typename T>
using VecX = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template<typename T>
using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template<typename T>
using Vec3 = Eigen::Matrix<T, 3, 1>;
template<typename T>
using Mat3 = Eigen::Matrix<T, 3, 3>;

using AlgebraVector   = Eigen::VectorXd;
using CoAlgebraVector = Eigen::VectorXd;

enum class GroupKind { RealN, SO3, SE3 };
enum class RetractionKind { Cayley, Exponential };

/// Rotation angles closer than this to pi are outside every chart used here.
inline constexpr double kChartMargin = 1e-8;

struct Retraction
{
  RetractionKind kind = RetractionKind::Cayley;
  /// Highest power of ad kept in the dexp / dexp^{-1} series.
  int series_order = 12;

  static Retraction cayley() { return {RetractionKind::Cayley, 12}; }
  static Retraction exponential(int order = 12)
  {
    if (order < 1) { throw std::invalid_argument("exponential series order must be >= 1"); }
    return {RetractionKind::Exponential, order};
  }

  bool operator==(const Retraction &) const = default;
};

class GroupSpec
{
public:
  static GroupSpec real_n(int n, Retraction r = Retraction::cayley())
  {
    if (n < 1) { throw std::invalid_argument("R^n requires n >= 1"); }
    return GroupSpec(GroupKind::RealN, n, r);
  }
  static GroupSpec so3(Retraction r = Retraction::cayley()) { return GroupSpec(GroupKind::SO3, 3, r); }
  static GroupSpec se3(Retraction r = Retraction::cayley()) { return GroupSpec(GroupKind::SE3, 6, r); }

  GroupKind kind() const { return kind_; }
  int algebra_dim() const { return dim_; }
  const Retraction & retraction() const { return retraction_; }
  bool is_abelian() const { return kind_ == GroupKind::RealN; }

  GroupSpec with_retraction(Retraction r) const { return GroupSpec(kind_, dim_, r); }

  std::string name() const
  {
    switch (kind_) {
    case GroupKind::RealN: return "R" + std::to_string(dim_);
    case GroupKind::SO3: return "SO3";
    case GroupKind::SE3: return "SE3";
    }
    return "?";
  }

  bool operator==(const GroupSpec &) const = default;

private:
  GroupSpec(GroupKind k, int n, Retraction r) : kind_(k), dim_(n), retraction_(r) {}

  GroupKind kind_;
  int dim_;
  Retraction retraction_;
};

// ---------------------------------------------------------------------------
// so(3) hat / vee
// ---------------------------------------------------------------------------

template<typename Derived>
Mat3<typename Derived::Scalar> hat(const Eigen::MatrixBase<Derived> & w)
{
  using T = typename Derived::Scalar;
  Mat3<T> m;
  // clang-format off
  m << T(0),  -w(2),  w(1),
       w(2),  T(0),  -w(0),
      -w(1),  w(0),  T(0);
  // clang-format on
  return m;
}

template<typename Derived>
Vec3<typename Derived::Scalar> vee(const Eigen::MatrixBase<Derived> & m)
{
  return Vec3<typename Derived::Scalar>(m(2, 1), m(0, 2), m(1, 0));
}

// ---------------------------------------------------------------------------
// Group elements
// ---------------------------------------------------------------------------

class GroupElement
{
public:
  static GroupElement identity(const GroupSpec & spec)
  {
    switch (spec.kind()) {
    case GroupKind::RealN: return GroupElement(spec.kind(), Eigen::VectorXd::Zero(spec.algebra_dim()));
    case GroupKind::SO3: return GroupElement(spec.kind(), Eigen::Matrix3d::Identity());
    case GroupKind::SE3: return GroupElement(spec.kind(), Eigen::Matrix4d::Identity());
    }
    throw std::logic_error("unknown group");
  }

  static GroupElement translation(const Eigen::VectorXd & x) { return GroupElement(GroupKind::RealN, x); }

  static GroupElement rotation(const Eigen::Matrix3d & R, double tol = 1e-10)
  {
    GroupElement g(GroupKind::SO3, R);
    if (!g.is_valid(tol)) { throw std::invalid_argument("matrix is not a rotation"); }
    return g;
  }

  static GroupElement rigid(const Eigen::Matrix3d & R, const Eigen::Vector3d & x, double tol = 1e-10)
  {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>()  = R;
    m.topRightCorner<3, 1>() = x;
    GroupElement g(GroupKind::SE3, m);
    if (!g.is_valid(tol)) { throw std::invalid_argument("matrix is not a rigid transform"); }
    return g;
  }

  /// Wraps a raw representation without validation; callers own the invariant.
  static GroupElement unchecked(GroupKind kind, Eigen::MatrixXd data) { return GroupElement(kind, std::move(data)); }

  GroupKind kind() const { return kind_; }
  const Eigen::MatrixXd & data() const { return data_; }
  int algebra_dim() const
  {
    switch (kind_) {
    case GroupKind::RealN: return static_cast<int>(data_.rows());
    case GroupKind::SO3: return 3;
    case GroupKind::SE3: return 6;
    }
    return 0;
  }

  /// Homogeneous matrix form; R^n is embedded as [I x; 0 1].
  Eigen::MatrixXd matrix() const
  {
    if (kind_ != GroupKind::RealN) { return data_; }
    const auto n      = data_.rows();
    Eigen::MatrixXd m = Eigen::MatrixXd::Identity(n + 1, n + 1);
    m.topRightCorner(n, 1) = data_;
    return m;
  }

  Eigen::Matrix3d rotation_block() const
  {
    if (kind_ == GroupKind::RealN) { throw std::logic_error("R^n has no rotation block"); }
    return data_.topLeftCorner<3, 3>();
  }

  Eigen::Vector3d translation_block() const
  {
    if (kind_ != GroupKind::SE3) { throw std::logic_error("only SE(3) has a translation block"); }
    return data_.topRightCorner<3, 1>();
  }

  GroupElement operator*(const GroupElement & o) const
  {
    if (o.kind_ != kind_ || o.data_.rows() != data_.rows()) { throw DimensionMismatch("group product of mismatched elements"); }
    if (kind_ == GroupKind::RealN) { return GroupElement(kind_, data_ + o.data_); }
    return GroupElement(kind_, data_ * o.data_);
  }

  GroupElement inverse() const
  {
    switch (kind_) {
    case GroupKind::RealN: return GroupElement(kind_, -data_);
    case GroupKind::SO3: return GroupElement(kind_, data_.transpose());
    case GroupKind::SE3: {
      Eigen::Matrix4d m          = Eigen::Matrix4d::Identity();
      const Eigen::Matrix3d Rt   = data_.topLeftCorner<3, 3>().transpose();
      m.topLeftCorner<3, 3>()    = Rt;
      m.topRightCorner<3, 1>()   = -Rt * data_.topRightCorner<3, 1>();
      return GroupElement(kind_, m);
    }
    }
    throw std::logic_error("unknown group");
  }

  bool is_valid(double tol = 1e-10) const
  {
    auto rotation_ok = [tol](const Eigen::Matrix3d & R) {
      return (R.transpose() * R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() <= tol
          && std::abs(R.determinant() - 1.0) <= tol;
    };
    switch (kind_) {
    case GroupKind::RealN: return data_.cols() == 1 && data_.allFinite();
    case GroupKind::SO3: return data_.rows() == 3 && data_.cols() == 3 && rotation_ok(data_);
    case GroupKind::SE3:
      return data_.rows() == 4 && data_.cols() == 4 && rotation_ok(data_.topLeftCorner<3, 3>())
          && data_(3, 0) == 0.0 && data_(3, 1) == 0.0 && data_(3, 2) == 0.0 && data_(3, 3) == 1.0;
    }
    return false;
  }

private:
  GroupElement(GroupKind k, Eigen::MatrixXd d) : kind_(k), data_(std::move(d)) {}

  GroupKind kind_;
  Eigen::MatrixXd data_;
};

// ---------------------------------------------------------------------------
// Algebra matrices, ad and Ad
// ---------------------------------------------------------------------------

/// Matrix form of an algebra element, matching GroupElement::matrix().
inline Eigen::MatrixXd algebra_matrix(const GroupSpec & spec, const AlgebraVector & xi)
{
  switch (spec.kind()) {
  case GroupKind::RealN: {
    const auto n      = spec.algebra_dim();
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n + 1, n + 1);
    m.topRightCorner(n, 1) = xi;
    return m;
  }
  case GroupKind::SO3: return hat(xi.head<3>());
  case GroupKind::SE3: {
    Eigen::MatrixXd m         = Eigen::MatrixXd::Zero(4, 4);
    m.topLeftCorner<3, 3>()   = hat(xi.head<3>());
    m.topRightCorner<3, 1>()  = xi.tail<3>();
    return m;
  }
  }
  throw std::logic_error("unknown group");
}

inline AlgebraVector algebra_vector(const GroupSpec & spec, const Eigen::MatrixXd & m)
{
  switch (spec.kind()) {
  case GroupKind::RealN: return m.topRightCorner(spec.algebra_dim(), 1);
  case GroupKind::SO3: return vee(m.topLeftCorner<3, 3>());
  case GroupKind::SE3: {
    AlgebraVector xi(6);
    xi.head<3>() = vee(m.topLeftCorner<3, 3>());
    xi.tail<3>() = m.topRightCorner<3, 1>();
    return xi;
  }
  }
  throw std::logic_error("unknown group");
}

/// Matrix of ad_xi = [xi, .] in algebra coordinates.
template<typename T>
MatX<T> ad_matrix(GroupKind kind, const VecX<T> & xi)
{
  const auto n = xi.size();
  MatX<T> A    = MatX<T>::Zero(n, n);
  if (kind == GroupKind::SO3) {
    A = hat(xi.template head<3>());
  } else if (kind == GroupKind::SE3) {
    const Mat3<T> w           = hat(xi.template head<3>());
    A.template topLeftCorner<3, 3>()     = w;
    A.template bottomRightCorner<3, 3>() = w;
    A.template bottomLeftCorner<3, 3>()  = hat(xi.template tail<3>());
  }
  return A;
}

inline Eigen::MatrixXd Ad_matrix(const GroupElement & g)
{
  switch (g.kind()) {
  case GroupKind::RealN: return Eigen::MatrixXd::Identity(g.algebra_dim(), g.algebra_dim());
  case GroupKind::SO3: return g.data();
  case GroupKind::SE3: {
    const Eigen::Matrix3d R = g.rotation_block();
    Eigen::MatrixXd A       = Eigen::MatrixXd::Zero(6, 6);
    A.topLeftCorner<3, 3>()     = R;
    A.bottomRightCorner<3, 3>() = R;
    A.bottomLeftCorner<3, 3>()  = hat(g.translation_block()) * R;
    return A;
  }
  }
  throw std::logic_error("unknown group");
}

inline AlgebraVector Ad(const GroupElement & g, const AlgebraVector & eta) { return Ad_matrix(g) * eta; }

/// Coadjoint action defined by <coAd(g, mu), eta> = <mu, Ad(g, eta)>.
inline CoAlgebraVector coAd(const GroupElement & g, const CoAlgebraVector & mu) { return Ad_matrix(g).transpose() * mu; }

inline double pairing(const CoAlgebraVector & mu, const AlgebraVector & xi) { return mu.dot(xi); }

// ---------------------------------------------------------------------------
// Retractions
// ---------------------------------------------------------------------------

namespace detail {

inline void check_dim(const GroupSpec & spec, Eigen::Index n)
{
  if (n != spec.algebra_dim()) {
    throw DimensionMismatch("algebra vector of length " + std::to_string(n) + " for " + spec.name());
  }
}

inline void check_element(const GroupSpec & spec, const GroupElement & g)
{
  if (g.kind() != spec.kind() || g.algebra_dim() != spec.algebra_dim()) {
    throw DimensionMismatch("group element does not belong to " + spec.name());
  }
}

/// Rotation angle in [0, pi] from a rotation matrix, stable near 0 and pi.
inline double rotation_angle(const Eigen::Matrix3d & R)
{
  const double s = 0.5 * vee(R - R.transpose()).norm();
  const double c = 0.5 * (R.trace() - 1.0);
  return std::atan2(s, c);
}

inline Eigen::Matrix3d so3_cay(const Eigen::Vector3d & w)
{
  const Eigen::Matrix3d W = hat(w);
  return Eigen::Matrix3d::Identity() + 4.0 / (4.0 + w.squaredNorm()) * (W + 0.5 * W * W);
}

inline Eigen::Vector3d so3_cay_inv(const Eigen::Matrix3d & R)
{
  if (std::numbers::pi - rotation_angle(R) < kChartMargin) {
    throw OutOfChart("rotation angle at pi is outside the Cayley chart");
  }
  return 2.0 / (1.0 + R.trace()) * vee(R - R.transpose());
}

/// (I - w^/2)^{-1}
inline Eigen::Matrix3d so3_cay_half_inv(const Eigen::Vector3d & w)
{
  const Eigen::Matrix3d W = hat(w);
  return Eigen::Matrix3d::Identity() + (2.0 * W + W * W) / (4.0 + w.squaredNorm());
}

inline Eigen::Matrix3d so3_exp(const Eigen::Vector3d & w)
{
  const double th         = w.norm();
  const Eigen::Matrix3d W = hat(w);
  double a, b;
  if (th < 1e-4) {
    const double t2 = th * th;
    a               = 1.0 - t2 / 6.0 + t2 * t2 / 120.0;
    b               = 0.5 - t2 / 24.0 + t2 * t2 / 720.0;
  } else {
    a = std::sin(th) / th;
    b = (1.0 - std::cos(th)) / (th * th);
  }
  return Eigen::Matrix3d::Identity() + a * W + b * W * W;
}

inline Eigen::Vector3d so3_log(const Eigen::Matrix3d & R)
{
  const double th = rotation_angle(R);
  if (std::numbers::pi - th < kChartMargin) { throw OutOfChart("rotation angle at pi is outside the exponential chart"); }
  const Eigen::Vector3d s = vee(R - R.transpose());
  double f;
  if (th < 1e-4) {
    f = 0.5 * (1.0 + th * th / 6.0);
  } else {
    f = 0.5 * th / std::sin(th);
  }
  return f * s;
}

/// Left Jacobian V(w) of SO(3), translation part of exp on SE(3).
inline Eigen::Matrix3d so3_exp_v(const Eigen::Vector3d & w)
{
  const double th         = w.norm();
  const Eigen::Matrix3d W = hat(w);
  double a, b;
  if (th < 1e-4) {
    const double t2 = th * th;
    a               = 0.5 - t2 / 24.0;
    b               = 1.0 / 6.0 - t2 / 120.0;
  } else {
    a = (1.0 - std::cos(th)) / (th * th);
    b = (th - std::sin(th)) / (th * th * th);
  }
  return Eigen::Matrix3d::Identity() + a * W + b * W * W;
}

inline Eigen::Matrix3d so3_exp_v_inv(const Eigen::Vector3d & w)
{
  const double th         = w.norm();
  const Eigen::Matrix3d W = hat(w);
  double c;
  if (th < 1e-4) {
    c = 1.0 / 12.0 + th * th / 720.0;
  } else {
    c = (1.0 - th * std::sin(th) / (2.0 * (1.0 - std::cos(th)))) / (th * th);
  }
  return Eigen::Matrix3d::Identity() - 0.5 * W + c * W * W;
}

/// Bernoulli numbers B_0..B_n with B_1 = -1/2.
inline std::vector<double> bernoulli_numbers(int n)
{
  std::vector<double> B(static_cast<std::size_t>(n) + 1, 0.0);
  B[0] = 1.0;
  for (int m = 1; m <= n; ++m) {
    double acc   = 0.0;
    double binom = 1.0;  // C(m+1, k)
    for (int k = 0; k < m; ++k) {
      acc += binom * B[static_cast<std::size_t>(k)];
      binom = binom * (m + 1 - k) / (k + 1);
    }
    B[static_cast<std::size_t>(m)] = -acc / (m + 1);
  }
  return B;
}

template<typename T>
T value_of(const T & x)
  requires std::is_arithmetic_v<T>
{
  return x;
}

template<typename T>
double value_of(const T & x)
  requires(!std::is_arithmetic_v<T>)
{
  return x.value();
}

template<typename T>
void check_exp_chart(const GroupSpec & spec, const VecX<T> & xi)
{
  if (spec.kind() == GroupKind::RealN) { return; }
  double w2 = 0.0;
  for (int i = 0; i < 3; ++i) { w2 += value_of(xi(i)) * value_of(xi(i)); }
  if (std::sqrt(w2) >= std::numbers::pi - kChartMargin) {
    throw OutOfChart("|w| >= pi is outside the exponential chart");
  }
}

}  // namespace detail

/// Retraction tau : g -> G.
inline GroupElement tau(const GroupSpec & spec, const AlgebraVector & xi)
{
  detail::check_dim(spec, xi.size());
  const bool cay = spec.retraction().kind == RetractionKind::Cayley;
  switch (spec.kind()) {
  case GroupKind::RealN: return GroupElement::unchecked(GroupKind::RealN, xi);
  case GroupKind::SO3:
    return GroupElement::unchecked(GroupKind::SO3, cay ? detail::so3_cay(xi) : detail::so3_exp(xi));
  case GroupKind::SE3: {
    const Eigen::Vector3d w = xi.head<3>();
    const Eigen::Vector3d v = xi.tail<3>();
    Eigen::Matrix4d m       = Eigen::Matrix4d::Identity();
    if (cay) {
      m.topLeftCorner<3, 3>()  = detail::so3_cay(w);
      m.topRightCorner<3, 1>() = detail::so3_cay_half_inv(w) * v;
    } else {
      m.topLeftCorner<3, 3>()  = detail::so3_exp(w);
      m.topRightCorner<3, 1>() = detail::so3_exp_v(w) * v;
    }
    return GroupElement::unchecked(GroupKind::SE3, m);
  }
  }
  throw std::logic_error("unknown group");
}

/// Inverse retraction; throws OutOfChart outside the chart.
inline AlgebraVector tau_inv(const GroupSpec & spec, const GroupElement & g)
{
  detail::check_element(spec, g);
  const bool cay = spec.retraction().kind == RetractionKind::Cayley;
  switch (spec.kind()) {
  case GroupKind::RealN: return g.data();
  case GroupKind::SO3: return cay ? detail::so3_cay_inv(g.data()) : detail::so3_log(g.data());
  case GroupKind::SE3: {
    AlgebraVector xi(6);
    const Eigen::Vector3d w = cay ? detail::so3_cay_inv(g.rotation_block()) : detail::so3_log(g.rotation_block());
    xi.head<3>()            = w;
    if (cay) {
      xi.tail<3>() = (Eigen::Matrix3d::Identity() - 0.5 * hat(w)) * g.translation_block();
    } else {
      xi.tail<3>() = detail::so3_exp_v_inv(w) * g.translation_block();
    }
    return xi;
  }
  }
  throw std::logic_error("unknown group");
}

/// Matrix of the right-trivialized tangent dtau_xi.
inline Eigen::MatrixXd dtau_matrix(const GroupSpec & spec, const AlgebraVector & xi)
{
  detail::check_dim(spec, xi.size());
  const auto n = spec.algebra_dim();
  if (spec.is_abelian()) { return Eigen::MatrixXd::Identity(n, n); }

  if (spec.retraction().kind == RetractionKind::Cayley) {
    // dcay_x y = (e - x/2)^{-1} y (e + x/2)^{-1}
    const Eigen::MatrixXd X  = algebra_matrix(spec, xi);
    const Eigen::MatrixXd I  = Eigen::MatrixXd::Identity(X.rows(), X.cols());
    const Eigen::MatrixXd Lm = (I - 0.5 * X).inverse();
    const Eigen::MatrixXd Rm = (I + 0.5 * X).inverse();
    Eigen::MatrixXd D(n, n);
    for (int j = 0; j < n; ++j) {
      D.col(j) = algebra_vector(spec, Lm * algebra_matrix(spec, Eigen::VectorXd::Unit(n, j)) * Rm);
    }
    return D;
  }

  detail::check_exp_chart<double>(spec, xi);
  const Eigen::MatrixXd A = ad_matrix<double>(spec.kind(), xi);
  Eigen::MatrixXd D       = Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd P       = Eigen::MatrixXd::Identity(n, n);
  double fact             = 1.0;
  for (int j = 1; j <= spec.retraction().series_order; ++j) {
    P = P * A;
    fact *= (j + 1);
    D += P / fact;
  }
  return D;
}

/// Matrix of dtau^{-1}_xi; templated so it can be differentiated.
template<typename T>
MatX<T> dtau_inv_matrix(const GroupSpec & spec, const VecX<T> & xi)
{
  detail::check_dim(spec, xi.size());
  const auto n = spec.algebra_dim();
  if (spec.is_abelian()) { return MatX<T>::Identity(n, n); }

  if (spec.retraction().kind == RetractionKind::Cayley) {
    const Vec3<T> w  = xi.template head<3>();
    const Mat3<T> W  = hat(w);
    const Mat3<T> I3 = Mat3<T>::Identity();
    const Mat3<T> Aw = I3 - T(0.5) * W + T(0.25) * w * w.transpose();
    if (spec.kind() == GroupKind::SO3) { return Aw; }
    MatX<T> D                             = MatX<T>::Zero(6, 6);
    D.template topLeftCorner<3, 3>()     = Aw;
    D.template bottomRightCorner<3, 3>() = I3 - T(0.5) * W;
    D.template bottomLeftCorner<3, 3>()  = T(-0.5) * (I3 - T(0.5) * W) * hat(xi.template tail<3>());
    return D;
  }

  detail::check_exp_chart<T>(spec, xi);
  static thread_local std::vector<double> B;
  const int order = spec.retraction().series_order;
  if (static_cast<int>(B.size()) < order + 1) { B = detail::bernoulli_numbers(std::max(order, 24)); }
  const MatX<T> A = ad_matrix<T>(spec.kind(), xi);
  MatX<T> D       = MatX<T>::Identity(n, n);
  MatX<T> P       = MatX<T>::Identity(n, n);
  double fact     = 1.0;
  for (int j = 1; j <= order; ++j) {
    P = P * A;
    fact *= j;
    const double c = B[static_cast<std::size_t>(j)] / fact;
    if (c != 0.0) { D += T(c) * P; }
  }
  return D;
}

inline Eigen::MatrixXd dtau_inv_matrix(const GroupSpec & spec, const AlgebraVector & xi)
{
  return dtau_inv_matrix<double>(spec, xi);
}

inline AlgebraVector dtau(const GroupSpec & spec, const AlgebraVector & xi, const AlgebraVector & eta)
{
  return dtau_matrix(spec, xi) * eta;
}

inline AlgebraVector dtau_inv(const GroupSpec & spec, const AlgebraVector & xi, const AlgebraVector & eta)
{
  return dtau_inv_matrix(spec, xi) * eta;
}

/// (dtau^{-1}_xi)^* mu, defined by <dtau_inv_dual(xi, mu), eta> = <mu, dtau_inv(xi, eta)>.
inline CoAlgebraVector dtau_inv_dual(const GroupSpec & spec, const AlgebraVector & xi, const CoAlgebraVector & mu)
{
  return dtau_inv_matrix(spec, xi).transpose() * mu;
}

}  // namespace discvar::lie
