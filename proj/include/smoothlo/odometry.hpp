#pragma once

// Per-scan odometry loop: feature extraction, constant-velocity prediction,
// semi-linearized ICP against the window map, full smoothing, keyscan
// management, marginalization and map regeneration.

#include "smoothlo/config.hpp"
#include "smoothlo/features.hpp"
#include "smoothlo/graph.hpp"
#include "smoothlo/map.hpp"

#include <chrono>
#include <deque>
#include <functional>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace smoothlo {

/// A scan held in the window: its map contribution and bookkeeping.
struct WindowScan {
  ScanId id = 0;
  double timestamp = 0.0;
  FeatureSet map_features;        // features kept for map insertion, scan-local
  std::size_t feature_count = 0;  // |features extracted from this scan|
  long last_matched_step = 0;     // last step in which a new factor targeted it
};

struct PoseEstimate {
  ScanId scan = 0;
  double timestamp = 0.0;
  Pose pose;
  double processing_seconds = 0.0;
};

struct StepDiagnostics {
  int icp_iterations = 0;
  std::size_t features = 0;
  std::size_t matches = 0;
  std::size_t active_poses = 0;
  std::size_t keyscans = 0;
  std::size_t map_points = 0;
  bool degenerate = false;
  std::vector<ScanId> promoted;
  std::vector<ScanId> marginalized;
  std::vector<std::string> warnings;
};

struct WindowState {
  Config config;
  std::deque<WindowScan> keyscans;
  std::deque<WindowScan> recent;
  Graph graph;
  ScanIndexedMap map;
  // last two emitted scans, oldest first, for the velocity model
  std::vector<std::pair<ScanId, Pose>> history;
  long step = 0;

  std::size_t active_poses() const { return keyscans.size() + recent.size(); }

  /// Latest estimate of a history entry: smoothed value while still in the window.
  Pose history_pose(std::size_t i) const {
    const auto& [id, pose] = history[i];
    const auto it = graph.values.find(id);
    return it != graph.values.end() ? it->second : pose;
  }
};

/// Constant-velocity prediction from the previous two poses.
inline Pose initialize_pose(const WindowState& s) {
  if (s.history.empty()) return Pose::identity();
  if (s.history.size() == 1) return s.history_pose(0);
  const Pose older = s.history_pose(s.history.size() - 2);
  const Pose last = s.history_pose(s.history.size() - 1);
  return (last * (older.inverse() * last)).normalized();
}

struct ScanMatches {
  std::vector<MatchFactor> factors;
  MatchDistances distances;  // per feature, planar first then points
};

/// Nearest compatible map point within match_threshold for every feature.
inline ScanMatches match_scan(const FeatureSet& features, const Pose& guess, const ScanIndexedMap& map,
                              double match_threshold) {
  ScanMatches m;
  m.distances.reserve(features.size());
  m.factors.reserve(features.size());
  for (const auto& f : features.planar) {
    const auto hit = map.nearest(guess * f.point, match_threshold, FeatureKind::planar);
    if (!hit || hit->point->scan == features.scan) {
      m.distances.emplace_back();
      continue;
    }
    m.distances.emplace_back(hit->distance);
    m.factors.push_back({FeatureKind::planar, hit->point->scan, features.scan, hit->point->local, f.point,
                         hit->point->normal});
  }
  for (const auto& f : features.points) {
    const auto hit = map.nearest(guess * f.point, match_threshold, FeatureKind::point);
    if (!hit || hit->point->scan == features.scan) {
      m.distances.emplace_back();
      continue;
    }
    m.distances.emplace_back(hit->distance);
    m.factors.push_back({FeatureKind::point, hit->point->scan, features.scan, hit->point->local, f.point,
                         Vector3::Zero()});
  }
  return m;
}

/// |factors targeting `candidate` from recent scans| / (n_recent * |features of candidate|).
inline double keyscan_score(const Graph& graph, const WindowScan& candidate, const std::deque<WindowScan>& recent,
                            int n_recent) {
  std::set<ScanId> sources;
  for (const auto& r : recent)
    if (r.id != candidate.id) sources.insert(r.id);
  std::size_t matches = 0;
  for (const auto& f : graph.factors) matches += f.target == candidate.id && sources.count(f.source);
  if (candidate.feature_count == 0) return 0.0;
  return static_cast<double>(matches) / (static_cast<double>(n_recent) * static_cast<double>(candidate.feature_count));
}

enum class KeyscanDecision { promote, marginalize };

/// Decision for the oldest recent scan once the recent list overflows.
inline KeyscanDecision keyscan_decision(const WindowState& s) {
  const double score = keyscan_score(s.graph, s.recent.front(), s.recent, s.config.n_recent);
  return score > s.config.keyscan_threshold ? KeyscanDecision::promote : KeyscanDecision::marginalize;
}

/// Keyscans idle for more than n_marg steps, then the oldest while over n_key.
inline std::vector<ScanId> prune_keyscans(const WindowState& s) {
  std::vector<ScanId> out;
  std::size_t remaining = s.keyscans.size();
  for (const auto& k : s.keyscans) {
    if (s.step - k.last_matched_step > s.config.n_marg) {
      out.push_back(k.id);
      --remaining;
    }
  }
  for (const auto& k : s.keyscans) {
    if (remaining <= static_cast<std::size_t>(s.config.n_key)) break;
    if (std::find(out.begin(), out.end(), k.id) != out.end()) continue;
    out.push_back(k.id);
    --remaining;
  }
  return out;
}

struct SessionResult {
  std::vector<PoseEstimate> trajectory;  // poses as emitted, one per scan
  Values smoothed;                       // final estimate of every scan
  ScanIndexedMap map;
};

class OdometrySession {
 public:
  using WarningSink = std::function<void(const std::string&)>;

  explicit OdometrySession(Config config, WarningSink warn = {}) : warn_(std::move(warn)) {
    config.validate();
    state_.config = std::move(config);
  }

  PoseEstimate push(const Scan& scan) {
    const auto t0 = std::chrono::steady_clock::now();
    if (!estimates_.empty()) {
      if (scan.index <= estimates_.back().scan) throw std::invalid_argument("scan index must increase");
      if (scan.timestamp <= estimates_.back().timestamp) throw std::invalid_argument("timestamps must increase");
    }
    diag_ = {};
    ++state_.step;
    const Config& cfg = state_.config;
    Graph& graph = state_.graph;
    const ScanId id = scan.index;

    const FeatureSet features = extract_features(scan, cfg.features());
    diag_.features = features.size();

    if (graph.values.empty()) {
      graph.values[id] = Pose::identity();
      if (cfg.smoothing) graph.prior = PriorFactor::isotropic(id, Pose::identity(), cfg.anchor_sigma);
      state_.recent.push_back({id, scan.timestamp, features, features.size(), state_.step});
    } else {
      const MatchDistances distances = register_scan(id, features);
      manage_window(id, scan.timestamp, features, distances);
    }

    state_.map = state_.map.rebuilt(window_scans(), graph.values);
    state_.history.emplace_back(id, graph.values.at(id));
    if (state_.history.size() > 2) state_.history.erase(state_.history.begin());

    diag_.active_poses = state_.active_poses();
    diag_.keyscans = state_.keyscans.size();
    diag_.map_points = state_.map.size();
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    estimates_.push_back({id, scan.timestamp, graph.values.at(id), seconds});
    return estimates_.back();
  }

  SessionResult finish() const {
    SessionResult r;
    r.trajectory = estimates_;
    r.smoothed = retired_;
    for (const auto& [id, pose] : state_.graph.values) r.smoothed[id] = pose;
    r.map = state_.map;
    return r;
  }

  /// Full nonlinear optimization of the current window followed by a map rebuild.
  OptimizeResult reoptimize() {
    prepare_constants(state_.graph.newest());
    const auto res = optimize(state_.graph, OptimizeMode::full, state_.config.solver());
    state_.graph.invalidate_stale();
    rebuild_map();
    return res;
  }

  void rebuild_map() { state_.map = state_.map.rebuilt(window_scans(), state_.graph.values); }

  /// Overwrites one window pose estimate (used to inject errors).
  void set_pose(ScanId id, const Pose& pose) {
    state_.graph.values.at(id) = pose;
    state_.graph.invalidate_stale();
  }

  const WindowState& state() const { return state_; }
  const StepDiagnostics& last_diagnostics() const { return diag_; }
  const std::vector<PoseEstimate>& estimates() const { return estimates_; }

 private:
  void warn(std::string msg) {
    if (warn_) warn_(msg);
    diag_.warnings.push_back(std::move(msg));
  }

  std::vector<MapScan> window_scans() const {
    std::vector<MapScan> scans;
    scans.reserve(state_.active_poses());
    for (const auto& k : state_.keyscans) scans.push_back({k.id, k.map_features});
    for (const auto& r : state_.recent) scans.push_back({r.id, r.map_features});
    return scans;
  }

  void prepare_constants(ScanId newest) {
    Graph& graph = state_.graph;
    graph.constants.clear();
    if (!state_.config.smoothing) {
      for (const auto& [pid, pose] : graph.values)
        if (pid != newest) graph.constants.insert(pid);
    }
  }

  // ICP loop plus the final full optimization. Returns match distances of the
  // last matching round.
  MatchDistances register_scan(ScanId id, const FeatureSet& features) {
    const Config& cfg = state_.config;
    Graph& graph = state_.graph;
    const Pose guess = initialize_pose(state_);
    graph.values[id] = guess;
    prepare_constants(id);
    graph.invalidate_stale();

    const Values smoothed = graph.values;  // previous full optimization + guess
    Pose current = guess;
    ScanMatches matches;
    bool any_match = false;
    for (int it = 0; it < cfg.max_icp_iterations; ++it) {
      ++diag_.icp_iterations;
      matches = match_scan(features, current, state_.map, cfg.match_threshold);
      std::erase_if(graph.factors, [id](const MatchFactor& f) { return f.source == id; });
      graph.factors.insert(graph.factors.end(), matches.factors.begin(), matches.factors.end());
      if (matches.factors.empty()) break;
      any_match = true;
      graph.values = smoothed;
      graph.values[id] = current;
      try {
        optimize(graph, OptimizeMode::semi_linearized, cfg.solver());
      } catch (const DegenerateGeometryError& e) {
        warn(std::string("semi-linearized solve: ") + e.what());
        graph.values = smoothed;
        graph.values[id] = current;
        diag_.degenerate = true;
        break;
      }
      const Pose updated = graph.values.at(id);
      const double change = local_coordinates(current, updated).norm();
      current = updated;
      if (change < cfg.icp_tolerance) break;
    }
    diag_.matches = matches.factors.size();
    graph.invalidate_stale();

    if (!any_match) {
      warn("scan " + std::to_string(id) + ": no matches; keeping constant-velocity pose");
      diag_.degenerate = true;
      graph.values = smoothed;
      return matches.distances;
    }
    const Values before_full = graph.values;
    try {
      optimize(graph, OptimizeMode::full, cfg.solver());
    } catch (const DegenerateGeometryError& e) {
      warn(std::string("full solve: ") + e.what());
      graph.values = before_full;
      diag_.degenerate = true;
    }
    graph.invalidate_stale();
    return matches.distances;
  }

  void manage_window(ScanId id, double timestamp, const FeatureSet& features, const MatchDistances& distances) {
    const Config& cfg = state_.config;
    Graph& graph = state_.graph;

    std::set<ScanId> targets;
    for (const auto& f : graph.factors)
      if (f.source == id) targets.insert(f.target);
    for (auto& k : state_.keyscans)
      if (targets.count(k.id)) k.last_matched_step = state_.step;

    const auto kept = select_insertions(features, distances, cfg.map_threshold);
    state_.recent.push_back({id, timestamp, subset(features, kept), features.size(), state_.step});

    std::set<ScanId> drop;
    while (state_.recent.size() > static_cast<std::size_t>(cfg.n_recent)) {
      WindowScan oldest = state_.recent.front();
      if (keyscan_decision(state_) == KeyscanDecision::promote) {
        oldest.last_matched_step = state_.step;
        state_.keyscans.push_back(std::move(oldest));
        diag_.promoted.push_back(state_.keyscans.back().id);
      } else {
        drop.insert(oldest.id);
      }
      state_.recent.pop_front();
    }
    for (ScanId k : prune_keyscans(state_)) {
      drop.insert(k);
      std::erase_if(state_.keyscans, [k](const WindowScan& w) { return w.id == k; });
    }
    if (drop.empty()) return;

    for (ScanId d : drop) retired_[d] = graph.values.at(d);
    diag_.marginalized.assign(drop.begin(), drop.end());
    if (cfg.smoothing) {
      const auto report = marginalize(graph, drop);
      if (report.regularized) warn("marginalization: eliminated block was rank deficient; regularized");
    } else {
      std::erase_if(graph.factors, [&](const MatchFactor& f) { return drop.count(f.target) || drop.count(f.source); });
      for (ScanId d : drop) {
        graph.values.erase(d);
        graph.constants.erase(d);
      }
      graph.invalidate_stale();
    }
  }

  WindowState state_;
  WarningSink warn_;
  StepDiagnostics diag_;
  std::vector<PoseEstimate> estimates_;
  Values retired_;
};

}  // namespace smoothlo
