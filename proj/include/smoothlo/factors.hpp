#pragma once

// Residuals linking two scan poses through a matched point pair, and the
// linear (Gaussian) factor forms produced by linearization and marginalization.

#include "smoothlo/geometry.hpp"
#include "smoothlo/scan.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <map>
#include <stdexcept>
#include <vector>

namespace smoothlo {

using PoseId = ScanId;
using Values = std::map<PoseId, Pose>;
using RowJacobian = Eigen::Matrix<double, 1, 6>;
using PointJacobian = Eigen::Matrix<double, 3, 6>;

/// One matched pair: feature p_source in scan `source` against map point
/// p_target (with normal, for planar) stored in scan `target`.
struct MatchFactor {
  FeatureKind kind = FeatureKind::planar;
  PoseId target = 0;
  PoseId source = 0;
  Vector3 target_point = Vector3::Zero();
  Vector3 source_point = Vector3::Zero();
  Vector3 target_normal = Vector3::UnitZ();

  int dimension() const { return kind == FeatureKind::planar ? 1 : 3; }
  bool touches(PoseId id) const { return id == target || id == source; }
};

struct PlanarEvaluation {
  double residual;
  RowJacobian d_target;
  RowJacobian d_source;
};

struct PointEvaluation {
  Vector3 residual;
  PointJacobian d_target;
  PointJacobian d_source;
};

/// (R_k n_k)^T (X_i p_i - X_k p_k), Jacobians under right perturbation.
inline PlanarEvaluation planar_residual(const Pose& target, const Pose& source, const MatchFactor& f) {
  const Vector3 world_normal = target.rotation * f.target_normal;
  const Vector3 d = source * f.source_point - target * f.target_point;
  PlanarEvaluation e;
  e.residual = world_normal.dot(d);
  // d/d(omega_k) = n_k x (R_k^T d + p_k)
  const Vector3 dk = target.rotation.transpose() * d;
  e.d_target.head<3>() = f.target_normal.cross(dk + f.target_point).transpose();
  e.d_target.tail<3>() = -f.target_normal.transpose();
  const Vector3 ni = source.rotation.transpose() * world_normal;
  e.d_source.head<3>() = f.source_point.cross(ni).transpose();
  e.d_source.tail<3>() = ni.transpose();
  return e;
}

/// X_i p_i - X_k p_k, Jacobians under right perturbation.
inline PointEvaluation point_residual(const Pose& target, const Pose& source, const MatchFactor& f) {
  PointEvaluation e;
  e.residual = source * f.source_point - target * f.target_point;
  e.d_target.leftCols<3>() = target.rotation * skew(f.target_point);
  e.d_target.rightCols<3>() = -target.rotation;
  e.d_source.leftCols<3>() = -source.rotation * skew(f.source_point);
  e.d_source.rightCols<3>() = source.rotation;
  return e;
}

inline double squared_error(const Pose& target, const Pose& source, const MatchFactor& f) {
  if (f.kind == FeatureKind::planar) {
    const double r = (target.rotation * f.target_normal).dot(source * f.source_point - target * f.target_point);
    return r * r;
  }
  return (source * f.source_point - target * f.target_point).squaredNorm();
}

/// Quadratic 0.5 * (c + 2 g^T d + d^T H d) in the stacked local coordinates
/// d_j = log(lin_j^-1 X_j) of the listed poses.
struct GaussianTerm {
  std::vector<PoseId> ids;
  std::vector<Pose> linearization;
  Eigen::MatrixXd information;
  Eigen::VectorXd gradient;
  double constant = 0.0;

  int dimension() const { return 6 * static_cast<int>(ids.size()); }

  Eigen::VectorXd delta(const Values& values) const {
    Eigen::VectorXd d(dimension());
    for (std::size_t j = 0; j < ids.size(); ++j) {
      d.segment<6>(6 * j) = local_coordinates(linearization[j], values.at(ids[j]));
    }
    return d;
  }

  double cost(const Values& values) const {
    const Eigen::VectorXd d = delta(values);
    return 0.5 * (constant + 2.0 * gradient.dot(d) + d.dot(information * d));
  }

  /// Re-expresses the same quadratic around new linearization points, using
  /// log(new^-1 X) ~ log(old^-1 X) - log(old^-1 new).
  void relocate(const std::vector<Pose>& new_linearization) {
    Eigen::VectorXd shift(dimension());
    for (std::size_t j = 0; j < ids.size(); ++j) {
      shift.segment<6>(6 * j) = local_coordinates(linearization[j], new_linearization[j]);
    }
    const Eigen::VectorXd hs = information * shift;
    constant += 2.0 * gradient.dot(shift) + shift.dot(hs);
    gradient += hs;
    linearization = new_linearization;
  }
};

/// Jacobian-form linearization: r(d) = b + sum_j A_j d_j.
struct LinearFactor {
  std::vector<PoseId> ids;
  std::vector<Eigen::MatrixXd> jacobians;  // one residual_dim x 6 block per pose
  Eigen::VectorXd residual;
  std::vector<Pose> linearization;

  int residual_dimension() const { return static_cast<int>(residual.size()); }

  Eigen::VectorXd evaluate(const Values& values) const {
    Eigen::VectorXd r = residual;
    for (std::size_t j = 0; j < ids.size(); ++j) {
      r += jacobians[j] * local_coordinates(linearization[j], values.at(ids[j]));
    }
    return r;
  }

  Eigen::MatrixXd stacked_jacobian() const {
    Eigen::MatrixXd a(residual.size(), 6 * ids.size());
    for (std::size_t j = 0; j < ids.size(); ++j) a.middleCols<6>(6 * j) = jacobians[j];
    return a;
  }

  GaussianTerm gaussian() const {
    const Eigen::MatrixXd a = stacked_jacobian();
    GaussianTerm t;
    t.ids = ids;
    t.linearization = linearization;
    t.information = a.transpose() * a;
    t.gradient = a.transpose() * residual;
    t.constant = residual.squaredNorm();
    return t;
  }
};

/// Square-root information prior: r(d) = R d + b, R upper triangular with a
/// non-negative diagonal.
struct PriorFactor {
  std::vector<PoseId> ids;
  Eigen::MatrixXd sqrt_information;
  Eigen::VectorXd residual;
  std::vector<Pose> linearization;

  bool involves(PoseId id) const { return std::find(ids.begin(), ids.end(), id) != ids.end(); }

  Eigen::VectorXd evaluate(const Values& values) const {
    Eigen::VectorXd d(6 * ids.size());
    for (std::size_t j = 0; j < ids.size(); ++j) {
      d.segment<6>(6 * j) = local_coordinates(linearization[j], values.at(ids[j]));
    }
    return sqrt_information * d + residual;
  }

  GaussianTerm gaussian() const {
    GaussianTerm t;
    t.ids = ids;
    t.linearization = linearization;
    t.information = sqrt_information.transpose() * sqrt_information;
    t.gradient = sqrt_information.transpose() * residual;
    t.constant = residual.squaredNorm();
    return t;
  }

  /// Isotropic prior around `at` with the given per-axis standard deviation.
  static PriorFactor isotropic(PoseId id, const Pose& at, double sigma) {
    PriorFactor p;
    p.ids = {id};
    p.sqrt_information = Matrix6::Identity() / sigma;
    p.residual = Eigen::VectorXd::Zero(6);
    p.linearization = {at};
    return p;
  }
};

inline LinearFactor linearize(const MatchFactor& f, const Values& values) {
  const Pose& xk = values.at(f.target);
  const Pose& xi = values.at(f.source);
  LinearFactor lf;
  lf.ids = {f.target, f.source};
  lf.linearization = {xk, xi};
  if (f.kind == FeatureKind::planar) {
    const auto e = planar_residual(xk, xi, f);
    lf.residual = Eigen::VectorXd::Constant(1, e.residual);
    lf.jacobians = {e.d_target, e.d_source};
  } else {
    const auto e = point_residual(xk, xi, f);
    lf.residual = e.residual;
    lf.jacobians = {e.d_target, e.d_source};
  }
  return lf;
}

/// Factors H = R^T R, g = R^T b. Falls back to an eigen-decomposition plus QR
/// when H is only semi-definite.
inline PriorFactor prior_from_information(const std::vector<PoseId>& ids, const std::vector<Pose>& linearization,
                                          const Eigen::MatrixXd& information, const Eigen::VectorXd& gradient) {
  PriorFactor p;
  p.ids = ids;
  p.linearization = linearization;
  const Eigen::MatrixXd h = 0.5 * (information + information.transpose());
  Eigen::LLT<Eigen::MatrixXd> llt(h);
  if (llt.info() == Eigen::Success) {
    p.sqrt_information = llt.matrixU();
    p.residual = llt.matrixL().solve(gradient);
    return p;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h);
  const Eigen::VectorXd lambda = es.eigenvalues().cwiseMax(0.0);
  const double floor = 1e-14 * std::max(1.0, lambda.maxCoeff());
  Eigen::VectorXd root = lambda.cwiseSqrt();
  Eigen::VectorXd inv_root(root.size());
  for (Eigen::Index i = 0; i < root.size(); ++i) {
    if (lambda(i) > floor) {
      inv_root(i) = 1.0 / root(i);
    } else {
      root(i) = 0.0;
      inv_root(i) = 0.0;
    }
  }
  const Eigen::MatrixXd s = root.asDiagonal() * es.eigenvectors().transpose();
  const Eigen::VectorXd bs = inv_root.asDiagonal() * (es.eigenvectors().transpose() * gradient);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(s);
  const Eigen::MatrixXd q = qr.householderQ();
  Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  Eigen::VectorXd b = q.transpose() * bs;
  for (Eigen::Index i = 0; i < r.rows(); ++i) {
    if (r(i, i) < 0.0) {
      r.row(i) *= -1.0;
      b(i) *= -1.0;
    }
  }
  p.sqrt_information = r;
  p.residual = b;
  return p;
}

}  // namespace smoothlo
