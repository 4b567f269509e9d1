#pragma once

// World map regenerated from scan-local feature points and the current pose
// estimates. Every point remembers the scan it came from.

#include "smoothlo/factors.hpp"
#include "smoothlo/kdtree.hpp"
#include "smoothlo/scan.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

namespace smoothlo {

struct MapPoint {
  Vector3 local;
  Vector3 world;
  ScanId scan;
  FeatureKind kind;
  Vector3 normal;  // scan-local; planar points only
};

struct MapMatch {
  const MapPoint* point;
  double distance;
};

/// Features a scan contributes to the map.
struct MapScan {
  ScanId id;
  FeatureSet features;
};

class ScanIndexedMap {
 public:
  ScanIndexedMap() = default;

  /// Transforms every retained local point with its scan's current pose and
  /// rebuilds the spatial indices from scratch.
  static ScanIndexedMap rebuild(std::span<const MapScan> scans, const Values& poses, std::uint64_t generation = 0) {
    ScanIndexedMap m;
    m.generation_ = generation;
    std::size_t total = 0;
    for (const auto& s : scans) total += s.features.size();
    m.points_.reserve(total);
    std::vector<Vector3> planar_world, point_world;
    for (const auto& s : scans) {
      const Pose& x = poses.at(s.id);
      for (const auto& f : s.features.planar) {
        m.planar_index_.push_back(m.points_.size());
        m.points_.push_back({f.point, x * f.point, s.id, FeatureKind::planar, f.normal});
        planar_world.push_back(m.points_.back().world);
      }
      for (const auto& f : s.features.points) {
        m.point_index_.push_back(m.points_.size());
        m.points_.push_back({f.point, x * f.point, s.id, FeatureKind::point, Vector3::Zero()});
        point_world.push_back(m.points_.back().world);
      }
    }
    m.planar_tree_ = KdTree(std::move(planar_world));
    m.point_tree_ = KdTree(std::move(point_world));
    return m;
  }

  ScanIndexedMap rebuilt(std::span<const MapScan> scans, const Values& poses) const {
    return rebuild(scans, poses, generation_ + 1);
  }

  /// Exact nearest map point of the given kind within max_distance.
  std::optional<MapMatch> nearest(const Vector3& q, double max_distance, FeatureKind kind) const {
    const KdTree& tree = kind == FeatureKind::planar ? planar_tree_ : point_tree_;
    const auto& index = kind == FeatureKind::planar ? planar_index_ : point_index_;
    const auto hit = tree.nearest(q, max_distance * max_distance);
    if (!hit) return std::nullopt;
    return MapMatch{&points_[index[hit->index]], std::sqrt(hit->squared_distance)};
  }

  /// Exact nearest map point of either kind within max_distance.
  std::optional<MapMatch> nearest(const Vector3& q, double max_distance) const {
    auto a = nearest(q, max_distance, FeatureKind::planar);
    auto b = nearest(q, max_distance, FeatureKind::point);
    if (!a) return b;
    if (!b) return a;
    return b->distance < a->distance ? b : a;
  }

  const std::vector<MapPoint>& points() const { return points_; }
  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  std::uint64_t generation() const { return generation_; }

  /// One "x y z scan_id kind" row per point, world frame.
  void write_ascii(std::ostream& os) const {
    const auto flags = os.flags();
    const auto prec = os.precision(9);
    for (const auto& p : points_) {
      os << p.world.x() << ' ' << p.world.y() << ' ' << p.world.z() << ' ' << p.scan << ' ' << to_string(p.kind)
         << '\n';
    }
    os.precision(prec);
    os.flags(flags);
  }

 private:
  std::vector<MapPoint> points_;
  std::vector<std::size_t> planar_index_, point_index_;
  KdTree planar_tree_, point_tree_;
  std::uint64_t generation_ = 0;
};

/// Match distance per feature, planar features first then point features;
/// nullopt means no map point within the match gate.
using MatchDistances = std::vector<std::optional<double>>;

/// Indices (same ordering as MatchDistances) of features to insert: unmatched
/// ones and those matched farther than map_threshold.
inline std::vector<std::size_t> select_insertions(const FeatureSet& features, const MatchDistances& distances,
                                                  double map_threshold) {
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto& d = i < distances.size() ? distances[i] : std::optional<double>{};
    if (!d || *d > map_threshold) kept.push_back(i);
  }
  return kept;
}

inline FeatureSet subset(const FeatureSet& features, const std::vector<std::size_t>& indices) {
  FeatureSet out;
  out.scan = features.scan;
  const std::size_t np = features.planar.size();
  for (std::size_t i : indices) {
    if (i < np) {
      out.planar.push_back(features.planar[i]);
    } else {
      out.points.push_back(features.points[i - np]);
    }
  }
  return out;
}

}  // namespace smoothlo
