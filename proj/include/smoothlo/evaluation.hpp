#pragma once

// Windowed relative translation error over ground-truth arc-length windows.

#include "smoothlo/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace smoothlo {

class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StampedPose {
  double timestamp = 0.0;
  Pose pose;
};

using Trajectory = std::vector<StampedPose>;

struct IndexPair {
  std::size_t gt;
  std::size_t est;
};

/// Pairs each ground-truth pose with the nearest-in-time estimate within
/// max_dt. Pairs are strictly increasing in both indices.
inline std::vector<IndexPair> associate(const Trajectory& gt, const Trajectory& est, double max_dt) {
  if (gt.empty() || est.empty()) throw EvaluationError("cannot associate an empty trajectory");
  std::vector<IndexPair> pairs;
  std::size_t j = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double t = gt[i].timestamp;
    while (j + 1 < est.size() && std::abs(est[j + 1].timestamp - t) <= std::abs(est[j].timestamp - t)) ++j;
    if (std::abs(est[j].timestamp - t) > max_dt) continue;
    if (!pairs.empty() && pairs.back().est >= j) continue;
    pairs.push_back({i, j});
  }
  if (pairs.empty()) throw EvaluationError("no poses associated within the time tolerance");
  return pairs;
}

/// Reorders both trajectories to the associated pairs.
inline std::pair<Trajectory, Trajectory> aligned(const Trajectory& gt, const Trajectory& est, double max_dt) {
  std::pair<Trajectory, Trajectory> out;
  for (const auto& p : associate(gt, est, max_dt)) {
    out.first.push_back(gt[p.gt]);
    out.second.push_back(est[p.est]);
  }
  return out;
}

struct Subsequence {
  std::size_t start;
  std::size_t end;
};

/// One subsequence per start pose, ending at the first pose whose
/// accumulated ground-truth path length reaches `length`. A subsequence that
/// ends where the previous one ended is skipped, so stationary stretches do
/// not contribute many copies of one window.
inline std::vector<Subsequence> extract_subsequences(const Trajectory& gt, double length) {
  if (!(length > 0.0)) throw std::invalid_argument("window length must be positive");
  std::vector<double> arc(gt.size(), 0.0);
  for (std::size_t i = 1; i < gt.size(); ++i) {
    arc[i] = arc[i - 1] + (gt[i].pose.translation - gt[i - 1].pose.translation).norm();
  }
  std::vector<Subsequence> out;
  std::size_t end = 0;
  for (std::size_t s = 0; s < gt.size(); ++s) {
    end = std::max(end, s + 1);
    while (end < gt.size() && arc[end] - arc[s] < length) ++end;
    if (end >= gt.size()) break;
    if (!out.empty() && out.back().end == end) continue;
    out.push_back({s, end});
  }
  return out;
}

struct SubsequencePair {
  std::size_t start;
  std::size_t end;
  Pose delta;           // ground truth X_start^-1 X_end
  Pose delta_estimate;  // same from the estimate
};

inline std::vector<SubsequencePair> subsequence_pairs(const Trajectory& gt, const Trajectory& est, double length) {
  if (gt.size() != est.size()) throw EvaluationError("trajectories must be associated first");
  std::vector<SubsequencePair> out;
  for (const auto& s : extract_subsequences(gt, length)) {
    out.push_back({s.start, s.end, gt[s.start].pose.inverse() * gt[s.end].pose,
                   est[s.start].pose.inverse() * est[s.end].pose});
  }
  return out;
}

/// RMS of ||trans(delta^-1 delta_estimate)|| over all subsequences (meters).
inline double wrte(const Trajectory& gt, const Trajectory& est, double length) {
  const auto pairs = subsequence_pairs(gt, est, length);
  if (pairs.empty()) throw EvaluationError("trajectory is shorter than the window");
  double sum = 0.0;
  for (const auto& p : pairs) sum += (p.delta.inverse() * p.delta_estimate).translation.squaredNorm();
  return std::sqrt(sum / static_cast<double>(pairs.size()));
}

/// Rotational counterpart: RMS relative rotation angle (radians).
inline double wrte_rotation(const Trajectory& gt, const Trajectory& est, double length) {
  const auto pairs = subsequence_pairs(gt, est, length);
  if (pairs.empty()) throw EvaluationError("trajectory is shorter than the window");
  double sum = 0.0;
  for (const auto& p : pairs) {
    const double a = rotation_angle((p.delta.inverse() * p.delta_estimate).rotation);
    sum += a * a;
  }
  return std::sqrt(sum / static_cast<double>(pairs.size()));
}

struct WindowResult {
  double length;
  std::optional<double> rte;  // empty when the trajectory is shorter than the window
  std::size_t subsequences;
};

inline std::vector<WindowResult> evaluate_windows(const Trajectory& gt, const Trajectory& est,
                                                  std::span<const double> lengths, double max_dt,
                                                  bool rotational = false) {
  const auto [g, e] = aligned(gt, est, max_dt);
  std::vector<WindowResult> out;
  for (double j : lengths) {
    const std::size_t n = extract_subsequences(g, j).size();
    if (n == 0) {
      out.push_back({j, std::nullopt, 0});
    } else {
      out.push_back({j, rotational ? wrte_rotation(g, e, j) : wrte(g, e, j), n});
    }
  }
  return out;
}

struct TimingStats {
  double mean_hz;
  double min_hz;
};

inline TimingStats timing_stats(std::span<const double> seconds) {
  if (seconds.empty()) throw EvaluationError("no timing samples");
  double total = 0.0, worst = 0.0;
  for (double s : seconds) {
    total += s;
    worst = std::max(worst, s);
  }
  return {static_cast<double>(seconds.size()) / total, 1.0 / worst};
}

}  // namespace smoothlo
