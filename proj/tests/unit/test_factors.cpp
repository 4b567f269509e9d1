#include "smoothlo/factors.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace smoothlo;
using namespace smoothlo::testing;

namespace {

MatchFactor random_factor(std::mt19937_64& rng, FeatureKind kind) {
  MatchFactor f;
  f.kind = kind;
  f.target = 0;
  f.source = 1;
  f.target_point = random_vector(rng, 20.0);
  f.source_point = random_vector(rng, 20.0);
  f.target_normal = random_unit(rng);
  return f;
}

Values two_poses(const Pose& k, const Pose& i) { return {{0, k}, {1, i}}; }

}  // namespace

TEST(PlanarResidual, CoincidentPointsVanish) {
  MatchFactor f;
  f.target_point = f.source_point = {1, 2, 3};
  f.target_normal = Vector3(1, 1, 0).normalized();
  EXPECT_EQ(planar_residual(Pose(), Pose(), f).residual, 0.0);
}

TEST(PlanarResidual, TranslationAlongNormal) {
  MatchFactor f;
  f.target_point = f.source_point = {4, -1, 2};
  f.target_normal = Vector3(0.0, 0.6, 0.8);
  const Vector3 t(0.3, -2.0, 1.5);
  EXPECT_NEAR(planar_residual(Pose(), Pose::from_translation(t), f).residual, f.target_normal.dot(t), 1e-15);
}

TEST(PointResidual, Examples) {
  MatchFactor f;
  f.kind = FeatureKind::point;
  f.target_point = f.source_point = {1, 2, 3};
  EXPECT_TRUE(point_residual(Pose(), Pose(), f).residual.isZero(0.0));
  f.target_point = f.source_point = Vector3::Zero();
  EXPECT_EQ(point_residual(Pose(), Pose::from_translation({1, 0, 0}), f).residual, Vector3(1, 0, 0));
}

TEST(PlanarResidual, JacobiansMatchFiniteDifferences) {
  std::mt19937_64 rng(11);
  for (int k = 0; k < 300; ++k) {
    const MatchFactor f = random_factor(rng, FeatureKind::planar);
    const Pose xk = random_pose(rng), xi = random_pose(rng);
    const auto e = planar_residual(xk, xi, f);
    using R1 = Eigen::Matrix<double, 1, 1>;
    const auto jk = numeric_jacobian<1>([&](const Pose& x) { return R1(planar_residual(x, xi, f).residual); }, xk);
    const auto ji = numeric_jacobian<1>([&](const Pose& x) { return R1(planar_residual(xk, x, f).residual); }, xi);
    EXPECT_LT(relative_error(e.d_target, jk), 1e-5);
    EXPECT_LT(relative_error(e.d_source, ji), 1e-5);
  }
}

TEST(PointResidual, JacobiansMatchFiniteDifferences) {
  std::mt19937_64 rng(12);
  for (int k = 0; k < 300; ++k) {
    const MatchFactor f = random_factor(rng, FeatureKind::point);
    const Pose xk = random_pose(rng), xi = random_pose(rng);
    const auto e = point_residual(xk, xi, f);
    const auto jk = numeric_jacobian<3>([&](const Pose& x) { return point_residual(x, xi, f).residual; }, xk);
    const auto ji = numeric_jacobian<3>([&](const Pose& x) { return point_residual(xk, x, f).residual; }, xi);
    EXPECT_LT(relative_error(e.d_target, jk), 1e-5);
    EXPECT_LT(relative_error(e.d_source, ji), 1e-5);
  }
}

TEST(SquaredError, AgreesWithResiduals) {
  std::mt19937_64 rng(13);
  for (auto kind : {FeatureKind::planar, FeatureKind::point}) {
    const MatchFactor f = random_factor(rng, kind);
    const Pose xk = random_pose(rng), xi = random_pose(rng);
    const double expected = kind == FeatureKind::planar ? std::pow(planar_residual(xk, xi, f).residual, 2)
                                                        : point_residual(xk, xi, f).residual.squaredNorm();
    EXPECT_NEAR(squared_error(xk, xi, f), expected, 1e-9 * std::max(1.0, expected));
  }
}

TEST(Linearize, ReproducesResidualAtLinearizationPoint) {
  std::mt19937_64 rng(14);
  for (auto kind : {FeatureKind::planar, FeatureKind::point}) {
    for (int k = 0; k < 50; ++k) {
      const MatchFactor f = random_factor(rng, kind);
      const Values v = two_poses(random_pose(rng), random_pose(rng));
      const LinearFactor lf = linearize(f, v);
      ASSERT_EQ(lf.jacobians.size(), lf.ids.size());
      const Eigen::VectorXd r = lf.evaluate(v);
      const double nonlinear = std::sqrt(squared_error(v.at(0), v.at(1), f));
      EXPECT_NEAR(r.norm(), nonlinear, 1e-12 * std::max(1.0, nonlinear));
    }
  }
}

TEST(Linearize, TaylorRemainderIsQuadratic) {
  std::mt19937_64 rng(15);
  for (auto kind : {FeatureKind::planar, FeatureKind::point}) {
    for (int k = 0; k < 50; ++k) {
      MatchFactor f = random_factor(rng, kind);
      f.target_point = random_vector(rng, 1.0);
      f.source_point = random_vector(rng, 1.0);
      const Values v = two_poses(random_pose(rng, 3.0, 1.0), random_pose(rng, 3.0, 1.0));
      const LinearFactor lf = linearize(f, v);
      for (double size : {1e-3, 3e-4, 1e-4}) {
        Vector6 dk, di;
        dk << random_vector(rng), random_vector(rng);
        di << random_vector(rng), random_vector(rng);
        dk *= size / std::sqrt(2.0) / dk.norm();
        di *= size / std::sqrt(2.0) / di.norm();
        const Values moved = two_poses(retract(v.at(0), dk), retract(v.at(1), di));
        Eigen::VectorXd exact;
        if (kind == FeatureKind::planar) {
          exact = Eigen::VectorXd::Constant(1, planar_residual(moved.at(0), moved.at(1), f).residual);
        } else {
          exact = point_residual(moved.at(0), moved.at(1), f).residual;
        }
        EXPECT_LT((lf.evaluate(moved) - exact).norm(), 10.0 * size * size);
      }
    }
  }
}

TEST(Linearize, ZeroResidualFactor) {
  MatchFactor f;
  f.target_point = f.source_point = {2, 0, 1};
  const Pose x(rotation_z(0.4), {1, 2, 3});
  const LinearFactor lf = linearize(f, two_poses(x, x));
  EXPECT_NEAR(lf.residual.norm(), 0.0, 1e-15);
}

TEST(GaussianTerm, CostEqualsHalfSquaredLinearResidual) {
  std::mt19937_64 rng(16);
  const MatchFactor f = random_factor(rng, FeatureKind::point);
  const Values v = two_poses(random_pose(rng), random_pose(rng));
  const LinearFactor lf = linearize(f, v);
  const GaussianTerm t = lf.gaussian();
  for (int k = 0; k < 20; ++k) {
    Vector6 dk, di;
    dk << random_vector(rng, 0.2), random_vector(rng, 0.5);
    di << random_vector(rng, 0.2), random_vector(rng, 0.5);
    const Values moved = two_poses(retract(v.at(0), dk), retract(v.at(1), di));
    const double expected = 0.5 * lf.evaluate(moved).squaredNorm();
    EXPECT_NEAR(t.cost(moved), expected, 1e-9 * std::max(1.0, expected));
  }
}

TEST(GaussianTerm, RelocateIsExactForTranslations) {
  std::mt19937_64 rng(17);
  LinearFactor lf;
  lf.ids = {0, 1};
  lf.linearization = {Pose::from_translation(random_vector(rng)), Pose::from_translation(random_vector(rng))};
  lf.jacobians = {Eigen::MatrixXd::Random(4, 6), Eigen::MatrixXd::Random(4, 6)};
  lf.residual = Eigen::VectorXd::Random(4);
  GaussianTerm t = lf.gaussian();
  const GaussianTerm original = t;
  t.relocate(t.linearization);
  EXPECT_NEAR((t.gradient - original.gradient).norm(), 0.0, 1e-15);
  EXPECT_NEAR(t.constant, original.constant, 1e-15);

  t.relocate({Pose::from_translation(random_vector(rng)), Pose::from_translation(random_vector(rng))});
  for (int k = 0; k < 10; ++k) {
    const Values x = two_poses(Pose::from_translation(random_vector(rng)), Pose::from_translation(random_vector(rng)));
    EXPECT_NEAR(t.cost(x), original.cost(x), 1e-9);
  }
}

TEST(PriorFromInformation, PositiveDefinite) {
  std::mt19937_64 rng(18);
  const Eigen::MatrixXd a = Eigen::MatrixXd::Random(18, 12);
  const Eigen::MatrixXd h = a.transpose() * a;
  const Eigen::VectorXd g = Eigen::VectorXd::Random(12);
  const PriorFactor p = prior_from_information({3, 4}, {Pose(), Pose()}, h, g);
  const Eigen::MatrixXd& r = p.sqrt_information;
  EXPECT_TRUE(r.isUpperTriangular(0.0));
  EXPECT_GE(r.diagonal().minCoeff(), 0.0);
  EXPECT_LT((r.transpose() * r - h).norm(), 1e-10 * h.norm());
  EXPECT_LT((r.transpose() * p.residual - g).norm(), 1e-10);
}

TEST(PriorFromInformation, SemiDefinite) {
  const Eigen::MatrixXd a = Eigen::MatrixXd::Random(4, 12);
  const Eigen::MatrixXd h = a.transpose() * a;
  const Eigen::VectorXd g = a.transpose() * Eigen::VectorXd::Random(4);
  const PriorFactor p = prior_from_information({0, 1}, {Pose(), Pose()}, h, g);
  const Eigen::MatrixXd& r = p.sqrt_information;
  EXPECT_TRUE(r.isUpperTriangular(1e-12));
  EXPECT_GE(r.diagonal().minCoeff(), 0.0);
  EXPECT_LT((r.transpose() * r - h).norm(), 1e-10 * h.norm());
  EXPECT_LT((r.transpose() * p.residual - g).norm(), 1e-10);
}

TEST(PriorFactor, Isotropic) {
  const Pose at(rotation_z(1.0), {1, 2, 3});
  const PriorFactor p = PriorFactor::isotropic(7, at, 0.01);
  EXPECT_TRUE(p.involves(7));
  EXPECT_NEAR(p.evaluate({{7, at}}).norm(), 0.0, 1e-15);
  Vector6 d;
  d << 0.001, 0, 0, 0, 0.02, 0;
  EXPECT_NEAR((p.evaluate({{7, retract(at, d)}}) - d / 0.01).norm(), 0.0, 1e-9);
}
