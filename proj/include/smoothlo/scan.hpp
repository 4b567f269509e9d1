#pragma once

#include "smoothlo/geometry.hpp"

#include <cstdint>
#include <vector>

namespace smoothlo {

using ScanId = std::int64_t;

/// Scanline-ordered point cloud in the sensor frame. A point with range 0 is
/// a missing return; it keeps its slot so azimuth adjacency is preserved.
struct Scan {
  std::vector<std::vector<Vector3>> lines;
  std::vector<std::vector<double>> ranges;
  ScanId index = 0;
  double timestamp = 0.0;

  /// Builds ranges from point norms; the origin is treated as no return.
  static Scan from_lines(std::vector<std::vector<Vector3>> lines, ScanId index, double timestamp) {
    Scan s;
    s.ranges.resize(lines.size());
    for (std::size_t l = 0; l < lines.size(); ++l) {
      s.ranges[l].reserve(lines[l].size());
      for (const auto& p : lines[l]) s.ranges[l].push_back(p.norm());
    }
    s.lines = std::move(lines);
    s.index = index;
    s.timestamp = timestamp;
    return s;
  }

  std::size_t num_lines() const { return lines.size(); }

  std::size_t num_points() const {
    std::size_t n = 0;
    for (const auto& l : lines) n += l.size();
    return n;
  }

  std::size_t num_returns() const {
    std::size_t n = 0;
    for (const auto& l : ranges)
      for (double r : l) n += r > 0.0;
    return n;
  }

  bool empty() const { return num_returns() == 0; }
};

/// Position of a point inside a scan.
struct PointRef {
  int line = 0;
  int index = 0;
  auto operator<=>(const PointRef&) const = default;
};

enum class FeatureKind : std::uint8_t { planar = 0, point = 1 };

inline const char* to_string(FeatureKind k) { return k == FeatureKind::planar ? "planar" : "point"; }

struct PlanarFeature {
  Vector3 point;
  Vector3 normal;  // unit, oriented toward the sensor origin
  PointRef ref;
};

struct PointFeature {
  Vector3 point;
  PointRef ref;
};

/// Features of one scan, in that scan's local frame.
struct FeatureSet {
  std::vector<PlanarFeature> planar;
  std::vector<PointFeature> points;
  ScanId scan = 0;

  std::size_t size() const { return planar.size() + points.size(); }
  bool empty() const { return size() == 0; }
};

}  // namespace smoothlo
