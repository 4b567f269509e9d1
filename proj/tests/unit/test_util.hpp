#pragma once

// Shared helpers for the unit tests: seeded random poses and vectors.

#include "smoothlo/geometry.hpp"

#include <Eigen/Core>

#include <functional>
#include <random>

namespace smoothlo::testing {

inline Vector3 random_vector(std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  return {u(rng), u(rng), u(rng)};
}

inline Vector3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vector3 v(n(rng), n(rng), n(rng));
  return v.normalized();
}

/// Rotation angle uniform in [0, max_angle], uniform axis.
inline Pose random_pose(std::mt19937_64& rng, double max_angle = 3.0, double translation = 5.0) {
  std::uniform_real_distribution<double> u(0.0, max_angle);
  const Matrix3 r = Eigen::AngleAxisd(u(rng), random_unit(rng)).toRotationMatrix();
  return {r, random_vector(rng, translation)};
}

inline double pose_distance(const Pose& a, const Pose& b) {
  return (a.rotation - b.rotation).norm() + (a.translation - b.translation).norm();
}

/// Central-difference Jacobian of f(x * exp(delta)) at delta = 0.
template <int Rows>
Eigen::Matrix<double, Rows, 6> numeric_jacobian(const std::function<Eigen::Matrix<double, Rows, 1>(const Pose&)>& f,
                                                const Pose& x, double h = 1e-6) {
  Eigen::Matrix<double, Rows, 6> j;
  for (int c = 0; c < 6; ++c) {
    Vector6 d = Vector6::Zero();
    d(c) = h;
    const Pose plus = x * se3::exp(d);
    d(c) = -h;
    const Pose minus = x * se3::exp(d);
    j.col(c) = (f(plus) - f(minus)) / (2.0 * h);
  }
  return j;
}

template <typename A, typename B>
double relative_error(const A& analytic, const B& numeric) {
  return (analytic - numeric).norm() / std::max(numeric.norm(), 1e-12);
}

}  // namespace smoothlo::testing
