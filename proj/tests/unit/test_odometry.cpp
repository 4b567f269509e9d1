#include "smoothlo/odometry.hpp"
#include "smoothlo/sim.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace smoothlo;
using namespace smoothlo::testing;

namespace {

const sim::Scene& room() {
  static const sim::Scene s = sim::Scene::preset("room");
  return s;
}

WindowScan window_scan(ScanId id, std::size_t features, long last_matched) {
  WindowScan w;
  w.id = id;
  w.feature_count = features;
  w.last_matched_step = last_matched;
  return w;
}

MatchFactor factor(ScanId target, ScanId source) {
  return {FeatureKind::point, target, source, Vector3::Zero(), Vector3::Zero(), Vector3::Zero()};
}

double max_residual(const std::vector<MatchFactor>& factors, const Values& poses) {
  double worst = 0.0;
  for (const auto& f : factors) {
    const Pose& t = poses.at(f.target);
    const Pose& s = poses.at(f.source);
    const double r = f.kind == FeatureKind::planar ? std::abs(planar_residual(t, s, f).residual)
                                                   : point_residual(t, s, f).residual.norm();
    worst = std::max(worst, r);
  }
  return worst;
}

// step error ||trans((g_a^-1 g_b)^-1 (e_a^-1 e_b))||
double step_error(const Pose& ga, const Pose& gb, const Pose& ea, const Pose& eb) {
  return ((ga.inverse() * gb).inverse() * (ea.inverse() * eb)).translation.norm();
}

}  // namespace

TEST(InitializePose, Examples) {
  WindowState s;
  EXPECT_EQ(initialize_pose(s).matrix(), Pose::identity().matrix());

  std::mt19937_64 rng(61);
  const Pose t = random_pose(rng, 0.5, 2.0);
  s.history = {{0, t}};
  EXPECT_EQ(initialize_pose(s).matrix(), t.matrix());

  s.history = {{0, Pose::identity()}, {1, t}};
  EXPECT_LT(pose_distance(initialize_pose(s), t * t), 1e-12);

  s.history = {{0, t}, {1, t}};
  EXPECT_LT(pose_distance(initialize_pose(s), t), 1e-12);
}

TEST(InitializePose, UsesSmoothedValuesWhileInWindow) {
  WindowState s;
  const Pose a = Pose::from_translation({1, 0, 0});
  const Pose b = Pose::from_translation({2, 0, 0});
  s.history = {{0, Pose::identity()}, {1, a}};
  s.graph.values = {{0, Pose::identity()}, {1, b}};
  EXPECT_LT(pose_distance(initialize_pose(s), Pose::from_translation({4, 0, 0})), 1e-12);
}

TEST(InitializePose, ConstantVelocityProperty) {
  std::mt19937_64 rng(62);
  for (int k = 0; k < 200; ++k) {
    const Pose a = random_pose(rng), v = random_pose(rng, 0.3, 1.0);
    WindowState s;
    s.history = {{0, a}, {1, a * v}};
    EXPECT_LT(pose_distance(initialize_pose(s), a * v * v), 1e-9);
  }
}

TEST(Keyscan, ScoreArithmetic) {
  WindowState s;
  s.recent.push_back(window_scan(5, 500, 1));
  for (ScanId id = 6; id < 16; ++id) s.recent.push_back(window_scan(id, 400, 1));
  for (int k = 0; k < 600; ++k) s.graph.factors.push_back(factor(5, 6 + k % 10));
  // reverse direction and non-recent sources do not count
  for (int k = 0; k < 300; ++k) s.graph.factors.push_back(factor(6 + k % 10, 5));
  for (int k = 0; k < 300; ++k) s.graph.factors.push_back(factor(5, 2));
  EXPECT_DOUBLE_EQ(keyscan_score(s.graph, s.recent.front(), s.recent, 10), 0.12);
  EXPECT_EQ(keyscan_decision(s), KeyscanDecision::promote);

  s.graph.factors.clear();
  EXPECT_EQ(keyscan_score(s.graph, s.recent.front(), s.recent, 10), 0.0);
  EXPECT_EQ(keyscan_decision(s), KeyscanDecision::marginalize);

  // exactly at the threshold is not enough
  for (int k = 0; k < 500; ++k) s.graph.factors.push_back(factor(5, 6 + k % 10));
  EXPECT_DOUBLE_EQ(keyscan_score(s.graph, s.recent.front(), s.recent, 10), 0.1);
  EXPECT_EQ(keyscan_decision(s), KeyscanDecision::marginalize);
}

TEST(Keyscan, PruneExamples) {
  WindowState s;
  s.step = 20;
  s.keyscans = {window_scan(1, 10, 9), window_scan(2, 10, 10), window_scan(3, 10, 20)};
  EXPECT_EQ(prune_keyscans(s), (std::vector<ScanId>{1}));

  s.keyscans.clear();
  for (ScanId id = 0; id < 51; ++id) s.keyscans.push_back(window_scan(id, 10, s.step));
  EXPECT_EQ(prune_keyscans(s), (std::vector<ScanId>{0}));

  // idle ones count toward the cap
  s.keyscans[10].last_matched_step = 0;
  EXPECT_EQ(prune_keyscans(s), (std::vector<ScanId>{10}));
  s.keyscans.push_back(window_scan(51, 10, s.step));
  EXPECT_EQ(prune_keyscans(s), (std::vector<ScanId>{10, 0}));
}

TEST(MatchScan, PerfectGuessMatchesExactly) {
  const Config cfg;
  sim::SensorModel sensor;
  const Pose x = sim::planar_pose({3.0, -2.0, 1.5}, 0.4);
  const Scan scan = sim::simulate_scan(room(), sensor, x, 5);
  FeatureSet prev = extract_features(scan, cfg.features());
  prev.scan = 0;
  ASSERT_GT(prev.size(), 500u);
  const auto map = ScanIndexedMap::rebuild(std::vector<MapScan>{{0, prev}}, {{0, x}});

  FeatureSet cur = prev;
  cur.scan = 1;
  const auto m = match_scan(cur, x, map, cfg.match_threshold);
  ASSERT_EQ(m.distances.size(), cur.size());
  EXPECT_GT(static_cast<double>(m.factors.size()), 0.9 * static_cast<double>(cur.size()));
  EXPECT_LT(max_residual(m.factors, {{0, x}, {1, x}}), 1e-6);
  for (const auto& f : m.factors) {
    EXPECT_EQ(f.target, 0);
    EXPECT_EQ(f.source, 1);
  }
}

TEST(MatchScan, OffsetGuessInOpenSpaceFindsAlmostNothing) {
  Config cfg;
  sim::SensorModel sensor;
  const auto forest = sim::Scene::preset("forest");
  const Pose x = sim::planar_pose({15.0, 0.0, 1.5}, 0.0);
  FeatureSet prev = extract_features(sim::simulate_scan(forest, sensor, x, 6), cfg.features());
  prev.scan = 0;
  ASSERT_GT(prev.size(), 20u);
  const auto map = ScanIndexedMap::rebuild(std::vector<MapScan>{{0, prev}}, {{0, x}});
  FeatureSet cur = prev;
  cur.scan = 1;
  const Pose guess = Pose::from_translation({0.0, 1.5, 0.0}) * x;
  const auto m = match_scan(cur, guess, map, cfg.match_threshold);
  EXPECT_LT(static_cast<double>(m.factors.size()), 0.05 * static_cast<double>(cur.size()));
}

TEST(MatchScan, NeverLinksAPoseToItself) {
  const Config cfg;
  sim::SensorModel sensor;
  const Pose a = sim::planar_pose({0, 0, 1.5}, 0.0), b = sim::planar_pose({0.3, 0, 1.5}, 0.02);
  FeatureSet fa = extract_features(sim::simulate_scan(room(), sensor, a, 7), cfg.features());
  FeatureSet fb = extract_features(sim::simulate_scan(room(), sensor, b, 8), cfg.features());
  fa.scan = 0;
  fb.scan = 1;
  const auto own = ScanIndexedMap::rebuild(std::vector<MapScan>{{1, fb}}, {{1, b}});
  EXPECT_TRUE(match_scan(fb, b, own, cfg.match_threshold).factors.empty());

  const auto other = ScanIndexedMap::rebuild(std::vector<MapScan>{{0, fa}}, {{0, a}});
  const auto m = match_scan(fb, b, other, cfg.match_threshold);
  EXPECT_FALSE(m.factors.empty());
  for (const auto& f : m.factors) EXPECT_NE(f.target, f.source);

  // inside a session the current scan is never in the map it matches against
  OdometrySession session(cfg);
  for (ScanId k = 0; k < 6; ++k) {
    session.push(sim::simulate_scan(room(), sensor, sim::planar_pose({0.1 * k, 0, 1.5}, 0.0), 20 + k, k, 0.1 * k));
    for (const auto& f : session.state().graph.factors) EXPECT_NE(f.target, f.source);
  }
  EXPECT_FALSE(session.state().graph.factors.empty());
}

TEST(Session, FirstScanIsIdentityWithWholeMap) {
  const Config cfg;
  OdometrySession session(cfg);
  const Scan scan = sim::simulate_scan(room(), {}, sim::planar_pose({5, 5, 1.5}, 1.0), 9, 0, 0.0);
  const auto est = session.push(scan);
  EXPECT_EQ(est.pose.matrix(), Pose::identity().matrix());
  EXPECT_EQ(est.scan, 0);
  EXPECT_TRUE(session.state().graph.factors.empty());
  const auto features = extract_features(scan, cfg.features());
  EXPECT_EQ(session.state().map.size(), features.size());
  EXPECT_EQ(session.last_diagnostics().matches, 0u);
}

TEST(Session, StaticIdenticalScansDoNotMove) {
  const Config cfg;
  OdometrySession session(cfg);
  const Scan base = sim::simulate_scan(room(), {}, sim::planar_pose({2, 1, 1.5}, 0.2), 10);
  for (int k = 0; k < 15; ++k) {
    Scan s = base;
    s.index = k;
    s.timestamp = 0.1 * k;
    const auto est = session.push(s);
    EXPECT_LT(est.pose.translation.norm(), 1e-6) << "scan " << k;
    EXPECT_LT(rotation_angle(est.pose.rotation), 1e-6) << "scan " << k;
    EXPECT_LE(session.last_diagnostics().icp_iterations, 3) << "scan " << k;
  }
}

TEST(Session, StraightLineStepErrorBelowOneCentimeter) {
  const Config cfg;
  OdometrySession session(cfg);
  sim::SensorModel sensor;
  sim::TrajectorySpec spec;
  spec.kind = sim::TrajectoryKind::line;
  spec.speed = 1.0;
  spec.rate = 10.0;
  spec.duration = 6.0;
  spec.start = sim::planar_pose({-20, 2, 1.5}, 0.0);
  const auto gt = sim::generate_trajectory(spec);
  const auto scans = sim::simulate_sequence(room(), sensor, gt);
  for (const auto& s : scans) session.push(s);
  const auto& est = session.estimates();
  ASSERT_EQ(est.size(), gt.size());
  for (std::size_t k = 5; k < gt.size(); ++k) {
    EXPECT_LT(step_error(gt[k - 1].pose, gt[k].pose, est[k - 1].pose, est[k].pose), 0.01) << "scan " << k;
  }
}

// Same run without point features. Sparse far-range point matches dominate the
// unweighted cost in this scene; this isolates the planar registration.
TEST(Session, StraightLinePlanarOnlyStepErrorBelowOneCentimeter) {
  Config cfg;
  cfg.point_features = false;
  OdometrySession session(cfg);
  sim::SensorModel sensor;
  sim::TrajectorySpec spec;
  spec.kind = sim::TrajectoryKind::line;
  spec.duration = 6.0;
  spec.start = sim::planar_pose({-20, 2, 1.5}, 0.0);
  const auto gt = sim::generate_trajectory(spec);
  for (const auto& s : sim::simulate_sequence(room(), sensor, gt)) session.push(s);
  const auto& est = session.estimates();
  for (std::size_t k = 5; k < gt.size(); ++k) {
    EXPECT_LT(step_error(gt[k - 1].pose, gt[k].pose, est[k - 1].pose, est[k].pose), 0.01) << "scan " << k;
  }
}

TEST(Session, FilteringKeepsEarlierPosesBitIdentical) {
  Config cfg;
  cfg.smoothing = false;
  OdometrySession session(cfg);
  sim::SensorModel sensor;
  sim::TrajectorySpec spec;
  spec.kind = sim::TrajectoryKind::arc;
  spec.duration = 3.0;
  spec.start = sim::planar_pose({-10, -3, 1.5}, 0.1);
  const auto scans = sim::simulate_sequence(room(), sensor, sim::generate_trajectory(spec));
  for (const auto& s : scans) {
    const Values before = session.state().graph.values;
    session.push(s);
    for (const auto& [id, pose] : session.state().graph.values) {
      const auto it = before.find(id);
      if (it == before.end()) continue;
      EXPECT_EQ(pose.rotation, it->second.rotation) << "scan " << s.index << " pose " << id;
      EXPECT_EQ(pose.translation, it->second.translation) << "scan " << s.index << " pose " << id;
    }
    EXPECT_EQ(session.state().graph.values.at(s.index).matrix(), session.estimates().back().pose.matrix());
  }
}

TEST(Session, SmoothingMovesEarlierPoses) {
  const Config cfg;
  OdometrySession session(cfg);
  sim::SensorModel sensor;
  sim::TrajectorySpec spec;
  spec.kind = sim::TrajectoryKind::arc;
  spec.duration = 2.0;
  spec.start = sim::planar_pose({-10, -3, 1.5}, 0.1);
  const auto scans = sim::simulate_sequence(room(), sensor, sim::generate_trajectory(spec));
  for (const auto& s : scans) session.push(s);
  const auto result = session.finish();
  bool moved = false;
  for (const auto& e : result.trajectory) moved |= !(result.smoothed.at(e.scan).matrix() == e.pose.matrix());
  EXPECT_TRUE(moved);
}

TEST(Session, WindowBoundAndCadence) {
  Config cfg;
  cfg.n_recent = 3;
  cfg.n_key = 4;
  cfg.n_marg = 3;
  OdometrySession session(cfg);
  sim::SensorModel sensor;
  sensor.beams = 16;
  sim::TrajectorySpec spec;
  spec.kind = sim::TrajectoryKind::wander;
  spec.duration = 8.0;
  spec.radius = 8.0;
  spec.seed = 3;
  spec.start = sim::planar_pose({0, -2, 1.5}, 0.0);
  const auto scans = sim::simulate_sequence(room(), sensor, sim::generate_trajectory(spec));
  bool promoted = false, marginalized = false;
  for (const auto& s : scans) {
    const auto est = session.push(s);
    EXPECT_EQ(est.scan, s.index);
    EXPECT_EQ(session.estimates().size(), static_cast<std::size_t>(s.index + 1));
    const auto& st = session.state();
    EXPECT_LE(st.active_poses(), static_cast<std::size_t>(cfg.n_key + cfg.n_recent + 1));
    EXPECT_LE(st.recent.size(), static_cast<std::size_t>(cfg.n_recent));
    EXPECT_LE(st.keyscans.size(), static_cast<std::size_t>(cfg.n_key));
    for (const auto& w : st.recent) EXPECT_TRUE(st.graph.values.count(w.id));
    for (const auto& w : st.keyscans) EXPECT_TRUE(st.graph.values.count(w.id));
    EXPECT_EQ(st.graph.values.size(), st.active_poses());
    EXPECT_LE(session.last_diagnostics().icp_iterations, cfg.max_icp_iterations);
    promoted |= !session.last_diagnostics().promoted.empty();
    marginalized |= !session.last_diagnostics().marginalized.empty();
  }
  EXPECT_TRUE(promoted);
  EXPECT_TRUE(marginalized);
  EXPECT_EQ(session.finish().trajectory.size(), scans.size());
  EXPECT_EQ(session.finish().smoothed.size(), scans.size());
}

TEST(Session, RejectsOutOfOrderScans) {
  OdometrySession session(Config{});
  Scan a = sim::simulate_scan(room(), {}, sim::planar_pose({0, 0, 1.5}, 0.0), 1, 4, 1.0);
  session.push(a);
  Scan b = a;
  EXPECT_THROW(session.push(b), std::invalid_argument);
  b.index = 5;
  EXPECT_THROW(session.push(b), std::invalid_argument);
  b.timestamp = 1.1;
  EXPECT_NO_THROW(session.push(b));
  EXPECT_EQ(session.estimates().size(), 2u);
}

TEST(Session, ZeroMatchesKeepsPredictionAndWarns) {
  std::vector<std::string> warnings;
  OdometrySession session(Config{}, [&](const std::string& w) { warnings.push_back(w); });
  const Pose x = sim::planar_pose({0, 0, 1.5}, 0.0);
  session.push(sim::simulate_scan(room(), {}, x, 1, 0, 0.0));
  const Scan empty = sim::simulate_scan(sim::Scene{}, {}, x, 2, 1, 0.1);
  const auto est = session.push(empty);
  EXPECT_EQ(est.pose.matrix(), Pose::identity().matrix());
  EXPECT_TRUE(session.last_diagnostics().degenerate);
  EXPECT_FALSE(warnings.empty());
  EXPECT_EQ(session.state().active_poses(), 2u);
}

TEST(Session, InvalidConfigIsRejected) {
  Config cfg;
  cfg.n_recent = 0;
  try {
    OdometrySession session(cfg);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "n_recent");
  }
}
