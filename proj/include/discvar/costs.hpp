#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <variant>

namespace discvar::systems {

/// C(u) = weight/2 |u|^2
struct L2
{
  double weight = 1.0;
};

/// C(u) = sum_i sqrt(u_i^2 + eps^2) + penalty * sum_i (bound violation)^2.
/// Empty bound vectors mean unbounded.
struct SmoothedL1
{
  double eps = 1e-4;
  Eigen::VectorXd u_min;
  Eigen::VectorXd u_max;
  double penalty = 1e3;
};

using CostSpec = std::variant<L2, SmoothedL1>;

inline void validate(const CostSpec & c, int m)
{
  if (const auto * l1 = std::get_if<SmoothedL1>(&c)) {
    if (!(l1->eps > 0.0)) { throw std::invalid_argument("smoothing eps must be positive"); }
    if (l1->u_min.size() != l1->u_max.size()) { throw std::invalid_argument("u_min and u_max must have equal length"); }
    if (l1->u_min.size() != 0) {
      if (l1->u_min.size() != m) { throw std::invalid_argument("bounds must have one entry per control"); }
      if ((l1->u_min.array() >= l1->u_max.array()).any()) { throw std::invalid_argument("u_min must be < u_max"); }
    }
  } else if (!(std::get<L2>(c).weight > 0.0)) {
    throw std::invalid_argument("L2 weight must be positive");
  }
}

/// Uniform bounds [lo, hi] on m controls.
inline SmoothedL1 smoothed_l1(int m, double lo, double hi, double eps = 1e-4, double penalty = 1e3)
{
  return SmoothedL1{eps, Eigen::VectorXd::Constant(m, lo), Eigen::VectorXd::Constant(m, hi), penalty};
}

template<typename T>
T evaluate(const CostSpec & c, const Eigen::Matrix<T, Eigen::Dynamic, 1> & u)
{
  using std::sqrt;
  if (const auto * l2 = std::get_if<L2>(&c)) { return T(0.5 * l2->weight) * u.squaredNorm(); }
  const auto & l1 = std::get<SmoothedL1>(c);
  T total(0.0);
  const double e2 = l1.eps * l1.eps;
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    total += sqrt(u(i) * u(i) + T(e2));
    if (l1.u_min.size() != 0) {
      if (u(i) > T(l1.u_max(i))) {
        const T v = u(i) - T(l1.u_max(i));
        total += T(l1.penalty) * v * v;
      } else if (u(i) < T(l1.u_min(i))) {
        const T v = T(l1.u_min(i)) - u(i);
        total += T(l1.penalty) * v * v;
      }
    }
  }
  return total;
}

inline std::string name(const CostSpec & c) { return std::holds_alternative<L2>(c) ? "l2" : "smoothed_l1"; }

}  // namespace discvar::systems
