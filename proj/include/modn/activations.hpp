#pragma once

#include <cmath>
#include <limits>

#include <Eigen/Dense>

namespace modn {

inline double stable_sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// Sigmoid clamped to the open interval (0, 1). Double-precision sigmoid
/// rounds to exactly 0 or 1 for |z| beyond ~37, which would break the
/// probability codomain.
inline double probability_from_logit(double z) {
  constexpr double lo = std::numeric_limits<double>::min();
  const double hi = std::nextafter(1.0, 0.0);
  const double p = stable_sigmoid(z);
  return p < lo ? lo : (p > hi ? hi : p);
}

/// log(1 + exp(-|z|)) + max(z, 0) - z * y
inline double bce_from_logit(double z, double y) {
  return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
}

template <typename Derived>
auto sigmoid(const Eigen::MatrixBase<Derived>& x) {
  return x.unaryExpr([](double v) { return stable_sigmoid(v); });
}

template <typename Derived>
auto relu(const Eigen::MatrixBase<Derived>& x) {
  return x.cwiseMax(0.0);
}

}  // namespace modn
