#pragma once

// Rigid-body algebra on SE(3). Rotations are stored as matrices; quaternions
// only appear when reading or writing files.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace smoothlo {

using Vector3 = Eigen::Vector3d;
using Matrix3 = Eigen::Matrix3d;
using Vector6 = Eigen::Matrix<double, 6, 1>;
using Matrix6 = Eigen::Matrix<double, 6, 6>;

class DegenerateRotationError : public std::runtime_error {
 public:
  explicit DegenerateRotationError(double angle)
      : std::runtime_error("rotation angle " + std::to_string(angle) +
                           " rad is too close to pi for a unique logarithm"),
        angle_(angle) {}
  double angle() const noexcept { return angle_; }

 private:
  double angle_;
};

/// Tangent-space element. The rotational part comes first, matching the
/// 6-vector layout used by all Jacobians: (omega, rho).
struct Twist {
  Vector3 rotation = Vector3::Zero();
  Vector3 translation = Vector3::Zero();

  Twist() = default;
  Twist(const Vector3& omega, const Vector3& rho) : rotation(omega), translation(rho) {}
  explicit Twist(const Vector6& v) : rotation(v.head<3>()), translation(v.tail<3>()) {}

  Vector6 vector() const {
    Vector6 v;
    v << rotation, translation;
    return v;
  }
  double norm() const { return vector().norm(); }
};

inline Matrix3 skew(const Vector3& v) {
  Matrix3 s;
  // clang-format off
  s <<    0.0, -v.z(),  v.y(),
        v.z(),    0.0, -v.x(),
       -v.y(),  v.x(),    0.0;
  // clang-format on
  return s;
}

inline Vector3 vee(const Matrix3& m) {
  return Vector3(m(2, 1) - m(1, 2), m(0, 2) - m(2, 0), m(1, 0) - m(0, 1)) * 0.5;
}

/// Rigid transform x -> R x + t.
struct Pose {
  Matrix3 rotation = Matrix3::Identity();
  Vector3 translation = Vector3::Zero();

  Pose() = default;
  Pose(const Matrix3& r, const Vector3& t) : rotation(r), translation(t) {}

  static Pose identity() { return {}; }
  static Pose from_translation(const Vector3& t) { return {Matrix3::Identity(), t}; }
  static Pose from_rotation(const Matrix3& r) { return {r, Vector3::Zero()}; }
  static Pose from_quaternion(const Eigen::Quaterniond& q, const Vector3& t) {
    return {q.normalized().toRotationMatrix(), t};
  }

  Eigen::Quaterniond quaternion() const { return Eigen::Quaterniond(rotation).normalized(); }

  Pose inverse() const {
    const Matrix3 rt = rotation.transpose();
    return {rt, -(rt * translation)};
  }

  Vector3 operator*(const Vector3& p) const { return rotation * p + translation; }
  Pose operator*(const Pose& b) const {
    return {rotation * b.rotation, rotation * b.translation + translation};
  }

  /// Same pose with the rotation projected back onto SO(3).
  Pose normalized() const { return {quaternion().toRotationMatrix(), translation}; }

  Eigen::Matrix4d matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = rotation;
    m.topRightCorner<3, 1>() = translation;
    return m;
  }

  bool operator==(const Pose&) const = default;
};

/// Result applies b first, then a.
inline Pose compose(const Pose& a, const Pose& b) { return a * b; }
inline Pose inverse(const Pose& a) { return a.inverse(); }
inline Vector3 transform_point(const Pose& x, const Vector3& p) { return x * p; }

inline Matrix3 rotation_z(double angle) {
  return Eigen::AngleAxisd(angle, Vector3::UnitZ()).toRotationMatrix();
}

// Exponential/logarithm maps with series fallbacks near zero rotation.
namespace se3 {

namespace detail {

struct RodriguesCoefficients {
  double a;  // sin(t)/t
  double b;  // (1 - cos(t))/t^2
  double c;  // (t - sin(t))/t^3
};

inline RodriguesCoefficients rodrigues(double theta) {
  const double t2 = theta * theta;
  if (theta < 1e-2) {
    const double t4 = t2 * t2, t6 = t4 * t2;
    return {1.0 - t2 / 6.0 + t4 / 120.0 - t6 / 5040.0, 0.5 - t2 / 24.0 + t4 / 720.0 - t6 / 40320.0,
            1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0 - t6 / 362880.0};
  }
  const double s = std::sin(theta);
  const double h = std::sin(0.5 * theta);
  // 1 - cos(t) = 2 sin^2(t/2) avoids cancellation
  return {s / theta, 2.0 * h * h / t2, (theta - s) / (t2 * theta)};
}

}  // namespace detail

inline Matrix3 exp_so3(const Vector3& omega) {
  const double theta = omega.norm();
  const auto k = detail::rodrigues(theta);
  const Matrix3 w = skew(omega);
  return Matrix3::Identity() + k.a * w + k.b * w * w;
}

inline Vector3 log_so3(const Matrix3& r) {
  const Vector3 v = 0.5 * vee(r - r.transpose());  // sin(theta) * axis
  const double cos_theta = std::clamp((r.trace() - 1.0) * 0.5, -1.0, 1.0);
  const double sin_theta = v.norm();
  const double theta = std::atan2(sin_theta, cos_theta);
  if (std::numbers::pi - theta < 1e-6) throw DegenerateRotationError(theta);
  if (theta < 1e-3) {
    const double t2 = theta * theta;
    return v * (1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0);
  }
  return v * (theta / sin_theta);
}

/// V(omega): maps rho to the translation of exp((omega, rho)).
inline Matrix3 left_jacobian_so3(const Vector3& omega) {
  const auto k = detail::rodrigues(omega.norm());
  const Matrix3 w = skew(omega);
  return Matrix3::Identity() + k.b * w + k.c * w * w;
}

inline Matrix3 left_jacobian_inverse_so3(const Vector3& omega) {
  const double theta = omega.norm();
  const Matrix3 w = skew(omega);
  double d;
  if (theta < 1e-2) {
    const double t2 = theta * theta;
    d = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0 + t2 * t2 * t2 / 1209600.0;
  } else {
    const auto k = detail::rodrigues(theta);
    d = (1.0 - k.a / (2.0 * k.b)) / (theta * theta);
  }
  return Matrix3::Identity() - 0.5 * w + d * w * w;
}

inline Pose exp(const Twist& xi) {
  return {exp_so3(xi.rotation), left_jacobian_so3(xi.rotation) * xi.translation};
}

inline Pose exp(const Vector6& xi) { return exp(Twist(xi)); }

/// Throws DegenerateRotationError when the rotation angle is within 1e-6 of pi.
inline Twist log(const Pose& x) {
  const Vector3 omega = log_so3(x.rotation);
  return {omega, left_jacobian_inverse_so3(omega) * x.translation};
}

}  // namespace se3

/// Right (local) update used by the optimizer: x * exp(delta).
/// x * exp(delta), renormalized so long update chains stay on SO(3).
inline Pose retract(const Pose& x, const Vector6& delta) { return (x * se3::exp(delta)).normalized(); }

/// Local coordinates of x relative to base: log(base^-1 * x).
inline Vector6 local_coordinates(const Pose& base, const Pose& x) {
  return se3::log(base.inverse() * x).vector();
}

inline double rotation_angle(const Matrix3& r) {
  const double cos_theta = std::clamp((r.trace() - 1.0) * 0.5, -1.0, 1.0);
  return std::atan2(0.5 * vee(r - r.transpose()).norm(), cos_theta);
}

}  // namespace smoothlo
