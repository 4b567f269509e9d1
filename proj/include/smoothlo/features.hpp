#pragma once

// Scanline feature extraction: validity marking, curvature, sector-balanced
// planar and point selection, and single-scan normal estimation.

#include "smoothlo/kdtree.hpp"
#include "smoothlo/scan.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <limits>
#include <optional>
#include <vector>

namespace smoothlo {

struct FeatureConfig {
  int n_neighbor = 5;
  int n_sectors = 6;
  int n_planar = 50;
  int n_point = 3;
  double planar_threshold = 1.0;  // curvature, meters
  double normal_radius = 1.0;     // meters
  double min_range = 0.5;
  double max_range = 100.0;
  bool point_features = true;
};

/// Per-point boolean aligned with a Scan.
struct ValidityMask {
  std::vector<std::vector<bool>> valid;

  bool operator()(int line, int index) const { return valid[line][index]; }
  bool operator()(PointRef r) const { return valid[r.line][r.index]; }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& l : valid) n += std::count(l.begin(), l.end(), true);
    return n;
  }
};

inline bool in_range(double range, double min_range, double max_range) {
  return range >= min_range && range <= max_range;
}

/// Points whose own range lies in [min_range, max_range].
inline ValidityMask mark_in_range(const Scan& scan, double min_range, double max_range) {
  ValidityMask m;
  m.valid.resize(scan.num_lines());
  for (std::size_t l = 0; l < scan.num_lines(); ++l) {
    const auto& r = scan.ranges[l];
    m.valid[l].resize(r.size());
    for (std::size_t i = 0; i < r.size(); ++i) m.valid[l][i] = in_range(r[i], min_range, max_range);
  }
  return m;
}

/// In range and at least n_neighbor slots from both scanline ends. Point
/// features use this looser mask so that short returns (thin poles) qualify.
inline ValidityMask mark_point_candidates(const Scan& scan, double min_range, double max_range, int n_neighbor) {
  ValidityMask m = mark_in_range(scan, min_range, max_range);
  for (auto& row : m.valid) {
    const int n = static_cast<int>(row.size());
    for (int i = 0; i < n; ++i)
      if (i < n_neighbor || i >= n - n_neighbor) row[i] = false;
  }
  return m;
}

/// A point is valid when it is in range, at least n_neighbor slots from both
/// scanline ends, and no out-of-range point lies within n_neighbor slots.
inline ValidityMask mark_validity(const Scan& scan, double min_range, double max_range, int n_neighbor) {
  const ValidityMask range_ok = mark_in_range(scan, min_range, max_range);
  ValidityMask m;
  m.valid.resize(scan.num_lines());
  for (std::size_t l = 0; l < scan.num_lines(); ++l) {
    const auto& ok = range_ok.valid[l];
    const int n = static_cast<int>(ok.size());
    // bad[i] = number of out-of-range points in [0, i)
    std::vector<int> bad(n + 1, 0);
    for (int i = 0; i < n; ++i) bad[i + 1] = bad[i] + (ok[i] ? 0 : 1);
    m.valid[l].assign(n, false);
    for (int i = n_neighbor; i + n_neighbor < n; ++i) {
      m.valid[l][i] = bad[i + n_neighbor + 1] - bad[i - n_neighbor] == 0;
    }
  }
  return m;
}

/// Norm of the mean second difference over n_neighbor offsets. The caller
/// guarantees i - n_neighbor >= 0 and i + n_neighbor < line.size().
inline double compute_curvature(const std::vector<Vector3>& line, int i, int n_neighbor) {
  Vector3 sum = Vector3::Zero();
  for (int j = 1; j <= n_neighbor; ++j) sum += line[i + j] - 2.0 * line[i] + line[i - j];
  return (sum / n_neighbor).norm();
}

/// Curvature for every valid point; +inf elsewhere.
inline std::vector<std::vector<double>> compute_curvatures(const Scan& scan, const ValidityMask& mask,
                                                           int n_neighbor) {
  std::vector<std::vector<double>> out(scan.num_lines());
  for (std::size_t l = 0; l < scan.num_lines(); ++l) {
    const auto& line = scan.lines[l];
    out[l].assign(line.size(), std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (mask.valid[l][i]) out[l][i] = compute_curvature(line, static_cast<int>(i), n_neighbor);
    }
  }
  return out;
}

struct Sector {
  int begin;
  int end;  // exclusive
};

/// Equal point-count partition of the span between the first and last
/// valid slot of a scanline.
inline std::vector<Sector> sector_bounds(const std::vector<bool>& valid, int n_sectors) {
  const auto first = std::find(valid.begin(), valid.end(), true);
  if (first == valid.end()) return {};
  const auto last = std::find(valid.rbegin(), valid.rend(), true);
  const int lo = static_cast<int>(first - valid.begin());
  const int hi = static_cast<int>(valid.rend() - last);  // exclusive
  const int span = hi - lo;
  std::vector<Sector> sectors;
  sectors.reserve(n_sectors);
  for (int s = 0; s < n_sectors; ++s) {
    const int b = lo + static_cast<int>(static_cast<long>(span) * s / n_sectors);
    const int e = lo + static_cast<int>(static_cast<long>(span) * (s + 1) / n_sectors);
    if (e > b) sectors.push_back({b, e});
  }
  return sectors;
}

namespace detail {

inline void block_around(std::vector<bool>& blocked, int index, int n_neighbor) {
  const int n = static_cast<int>(blocked.size());
  for (int k = std::max(0, index - n_neighbor + 1); k < std::min(n, index + n_neighbor); ++k) blocked[k] = true;
}

}  // namespace detail

/// Per scanline sector, greedily picks up to n_planar lowest-curvature points
/// below the planar threshold, keeping selections n_neighbor slots apart.
inline std::vector<PointRef> select_planar_features(const Scan& scan,
                                                    const std::vector<std::vector<double>>& curvatures,
                                                    const ValidityMask& mask, const FeatureConfig& cfg) {
  std::vector<PointRef> selected;
  std::vector<int> candidates;
  for (std::size_t l = 0; l < scan.num_lines(); ++l) {
    const auto& kappa = curvatures[l];
    std::vector<bool> blocked(kappa.size(), false);
    for (const Sector& sec : sector_bounds(mask.valid[l], cfg.n_sectors)) {
      candidates.clear();
      for (int i = sec.begin; i < sec.end; ++i) {
        if (mask.valid[l][i] && kappa[i] < cfg.planar_threshold) candidates.push_back(i);
      }
      // stable: equal curvature keeps the lower index first
      std::stable_sort(candidates.begin(), candidates.end(),
                       [&](int a, int b) { return kappa[a] < kappa[b]; });
      int taken = 0;
      for (int i : candidates) {
        if (taken >= cfg.n_planar) break;
        if (blocked[i]) continue;
        selected.push_back({static_cast<int>(l), i});
        detail::block_around(blocked, i, cfg.n_neighbor);
        ++taken;
      }
    }
  }
  return selected;
}

/// Per sector, up to n_point in-range points placed at an even stride and
/// kept n_neighbor slots away from every planar and point feature.
inline std::vector<PointRef> select_point_features(const Scan& scan, const ValidityMask& mask,
                                                   const std::vector<PointRef>& planar,
                                                   const FeatureConfig& cfg) {
  std::vector<std::vector<bool>> blocked(scan.num_lines());
  for (std::size_t l = 0; l < scan.num_lines(); ++l) blocked[l].assign(scan.lines[l].size(), false);
  for (const PointRef& r : planar) detail::block_around(blocked[r.line], r.index, cfg.n_neighbor);

  std::vector<PointRef> selected;
  for (std::size_t l = 0; l < scan.num_lines(); ++l) {
    auto& blk = blocked[l];
    for (const Sector& sec : sector_bounds(mask.valid[l], cfg.n_sectors)) {
      const int size = sec.end - sec.begin;
      for (int k = 0; k < cfg.n_point; ++k) {
        const int a = sec.begin + size * k / cfg.n_point;
        const int b = sec.begin + size * (k + 1) / cfg.n_point;
        if (b <= a) continue;
        const int target = a + (b - a) / 2;
        for (int step = 0; step < 2 * (b - a); ++step) {
          // target, target+1, target-1, target+2, ...
          const int offset = (step + 1) / 2;
          const int i = step % 2 == 1 ? target + offset : target - offset;
          if (i < a || i >= b) continue;
          if (!mask.valid[l][i] || blk[i]) continue;
          selected.push_back({static_cast<int>(l), i});
          detail::block_around(blk, i, cfg.n_neighbor);
          break;
        }
      }
    }
  }
  return selected;
}

struct NormalParams {
  double radius = 1.0;
  int n_neighbor = 5;
  double min_range = 0.5;
  double max_range = 100.0;
};

namespace detail {

// Walks outward from `center` along a scanline, collecting in-range points
// within `radius` of `anchor`. A direction ends at its first failing point.
inline void gather_along_line(const Scan& scan, int line, int center, bool include_center,
                              const Vector3& anchor, const NormalParams& p,
                              std::vector<Vector3>& out) {
  const auto& pts = scan.lines[line];
  const auto& rng = scan.ranges[line];
  const int n = static_cast<int>(pts.size());
  const double r2 = p.radius * p.radius;
  int taken = 0;
  if (include_center) {
    out.push_back(pts[center]);
    ++taken;
  }
  bool up = true, down = true;
  for (int off = 1; taken < p.n_neighbor && (up || down); ++off) {
    for (int dir : {+1, -1}) {
      bool& open = dir > 0 ? up : down;
      if (!open || taken >= p.n_neighbor) continue;
      const int i = center + dir * off;
      if (i < 0 || i >= n || !in_range(rng[i], p.min_range, p.max_range) ||
          (pts[i] - anchor).squaredNorm() > r2) {
        open = false;
        continue;
      }
      out.push_back(pts[i]);
      ++taken;
    }
  }
}

}  // namespace detail

/// Per-line kd-trees over in-range points, so the nearest adjacent-line
/// point is found without scanning the whole line.
class ScanlineIndex {
 public:
  ScanlineIndex(const Scan& scan, double min_range, double max_range) : trees_(scan.num_lines()), slots_(scan.num_lines()) {
    for (std::size_t l = 0; l < scan.num_lines(); ++l) {
      std::vector<Vector3> pts;
      for (std::size_t i = 0; i < scan.lines[l].size(); ++i) {
        if (!in_range(scan.ranges[l][i], min_range, max_range)) continue;
        pts.push_back(scan.lines[l][i]);
        slots_[l].push_back(static_cast<int>(i));
      }
      trees_[l] = KdTree(std::move(pts));
    }
  }

  /// Index of the in-range point of `line` nearest to q within `radius`,
  /// lowest index on ties, or -1.
  int nearest(std::size_t line, const Vector3& q, double radius) const {
    const auto hit = trees_[line].nearest(q, radius * radius);
    return hit ? slots_[line][hit->index] : -1;
  }

 private:
  std::vector<KdTree> trees_;
  std::vector<std::vector<int>> slots_;
};

namespace detail {

inline std::vector<Vector3> neighborhood_around(const Scan& scan, PointRef f, const NormalParams& p,
                                                const ScanlineIndex* index) {
  const Vector3& fp = scan.lines[f.line][f.index];
  std::vector<Vector3> hood;
  hood.reserve(3 * p.n_neighbor);
  for (int line : {f.line - 1, f.line + 1}) {
    if (line < 0 || line >= static_cast<int>(scan.num_lines())) continue;
    const auto& pts = scan.lines[line];
    int best = -1;
    if (index) {
      best = index->nearest(static_cast<std::size_t>(line), fp, p.radius);
    } else {
      const auto& rng = scan.ranges[line];
      double best_d2 = std::numeric_limits<double>::infinity();
      for (int i = 0; i < static_cast<int>(pts.size()); ++i) {
        if (!in_range(rng[i], p.min_range, p.max_range)) continue;
        const double d2 = (pts[i] - fp).squaredNorm();
        if (d2 < best_d2) {
          best_d2 = d2;
          best = i;
        }
      }
      if (best_d2 > p.radius * p.radius) best = -1;
    }
    if (best < 0) continue;
    gather_along_line(scan, line, best, true, pts[best], p, hood);
  }
  gather_along_line(scan, f.line, f.index, false, fp, p, hood);
  return hood;
}

}  // namespace detail

/// Neighborhood used for a feature's normal: nearest point on each adjacent
/// scanline plus points near it, and near neighbors on the feature's own line.
inline std::vector<Vector3> normal_neighborhood(const Scan& scan, PointRef f, const NormalParams& p) {
  return detail::neighborhood_around(scan, f, p, nullptr);
}

inline std::vector<Vector3> normal_neighborhood(const Scan& scan, PointRef f, const NormalParams& p,
                                                const ScanlineIndex& index) {
  return detail::neighborhood_around(scan, f, p, &index);
}

/// Smallest-eigenvalue eigenvector of sum (p - f)(p - f)^T over the
/// neighborhood, flipped to face the sensor. Requires more than 5 neighbors.
inline std::optional<Vector3> normal_from_neighborhood(const Vector3& f, const std::vector<Vector3>& hood) {
  if (hood.size() <= 5) return std::nullopt;
  Matrix3 sigma = Matrix3::Zero();
  for (const auto& p : hood) {
    const Vector3 d = p - f;
    sigma.noalias() += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Matrix3> es;
  es.computeDirect(sigma);
  const Vector3 ev = es.eigenvalues();
  // collinear neighborhoods have no defined plane
  if (!(ev(1) > 1e-12 * ev(2))) return std::nullopt;
  Vector3 n = es.eigenvectors().col(0).normalized();
  if (n.dot(f) > 0.0) n = -n;
  return n;
}

inline std::optional<Vector3> estimate_normal(const Scan& scan, PointRef f, const NormalParams& p) {
  return normal_from_neighborhood(scan.lines[f.line][f.index], normal_neighborhood(scan, f, p));
}

inline FeatureSet extract_features(const Scan& scan, const FeatureConfig& cfg) {
  FeatureSet out;
  out.scan = scan.index;
  if (scan.num_points() == 0) return out;

  const ValidityMask valid = mark_validity(scan, cfg.min_range, cfg.max_range, cfg.n_neighbor);
  const ValidityMask ranged = mark_point_candidates(scan, cfg.min_range, cfg.max_range, cfg.n_neighbor);
  const auto kappa = compute_curvatures(scan, valid, cfg.n_neighbor);
  const NormalParams np{cfg.normal_radius, cfg.n_neighbor, cfg.min_range, cfg.max_range};

  const auto planar = select_planar_features(scan, kappa, valid, cfg);
  const ScanlineIndex index(scan, cfg.min_range, cfg.max_range);
  for (const PointRef& r : planar) {
    const Vector3& fp = scan.lines[r.line][r.index];
    if (auto n = normal_from_neighborhood(fp, normal_neighborhood(scan, r, np, index))) out.planar.push_back({scan.lines[r.line][r.index], *n, r});
  }
  if (cfg.point_features) {
    // spacing is kept against every planar candidate, including those whose
    // normal was rejected
    for (const PointRef& r : select_point_features(scan, ranged, planar, cfg)) {
      out.points.push_back({scan.lines[r.line][r.index], r});
    }
  }
  return out;
}

}  // namespace smoothlo
