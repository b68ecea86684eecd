#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/AutoDiff>

#include <algorithm>

namespace discvar::ad {

inline constexpr int kChunk = 6;

using Deriv  = Eigen::Matrix<double, kChunk, 1>;
using Scalar = Eigen::AutoDiffScalar<Deriv>;
using VecAD  = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Value and gradient of a scalar function templated on its scalar type.
/// Forward mode, `kChunk` directions per sweep.
template<typename F>
double value_and_gradient(F && f, const Eigen::VectorXd & x, Eigen::VectorXd & grad)
{
  const auto n = x.size();
  grad.resize(n);
  double value = 0.0;
  if (n == 0) { return f(VecAD(0)).value(); }
  VecAD xa(n);
  for (Eigen::Index start = 0; start < n; start += kChunk) {
    for (Eigen::Index i = 0; i < n; ++i) {
      xa(i) = Scalar(x(i), Deriv::Zero());
      if (i >= start && i < start + kChunk) { xa(i).derivatives()(i - start) = 1.0; }
    }
    const Scalar y = f(xa);
    value          = y.value();
    const auto m   = std::min<Eigen::Index>(kChunk, n - start);
    grad.segment(start, m) = y.derivatives().head(m);
  }
  return value;
}

template<typename F>
Eigen::VectorXd gradient(F && f, const Eigen::VectorXd & x)
{
  Eigen::VectorXd g;
  value_and_gradient(std::forward<F>(f), x, g);
  return g;
}

}  // namespace discvar::ad
