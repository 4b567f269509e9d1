#pragma once

// Static 3-D kd-tree with exact nearest-neighbor queries.

#include "smoothlo/geometry.hpp"

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

namespace smoothlo {

class KdTree {
 public:
  struct Hit {
    std::size_t index;
    double squared_distance;
  };

  KdTree() = default;
  explicit KdTree(std::vector<Vector3> points) : points_(std::move(points)) { build(); }

  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  const Vector3& point(std::size_t i) const { return points_[i]; }

  /// Exact nearest neighbor with squared distance <= max_squared_distance.
  /// Equal distances resolve to the lower point index.
  std::optional<Hit> nearest(const Vector3& q,
                             double max_squared_distance = std::numeric_limits<double>::infinity()) const {
    if (nodes_.empty()) return std::nullopt;
    Hit best{std::numeric_limits<std::size_t>::max(), max_squared_distance};
    search(0, q, best);
    if (best.index == std::numeric_limits<std::size_t>::max()) return std::nullopt;
    return best;
  }

 private:
  static constexpr std::size_t kLeafSize = 8;

  struct Node {
    std::uint32_t begin, end;  // range in order_ for leaves
    std::int32_t left = -1, right = -1;
    int axis = 0;
    double split = 0.0;
    bool leaf() const { return left < 0; }
  };

  void build() {
    nodes_.clear();
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), 0u);
    if (points_.empty()) return;
    nodes_.reserve(2 * points_.size() / kLeafSize + 1);
    build_node(0, static_cast<std::uint32_t>(points_.size()));
  }

  std::int32_t build_node(std::uint32_t begin, std::uint32_t end) {
    const auto id = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back({begin, end});
    if (end - begin <= kLeafSize) return id;

    Vector3 lo = Vector3::Constant(std::numeric_limits<double>::infinity());
    Vector3 hi = -lo;
    for (std::uint32_t i = begin; i < end; ++i) {
      lo = lo.cwiseMin(points_[order_[i]]);
      hi = hi.cwiseMax(points_[order_[i]]);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    const std::uint32_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::uint32_t a, std::uint32_t b) {
                       const double pa = points_[a][axis], pb = points_[b][axis];
                       return pa < pb || (pa == pb && a < b);
                     });
    const double split = points_[order_[mid]][axis];
    const std::int32_t left = build_node(begin, mid);
    const std::int32_t right = build_node(mid, end);
    Node& n = nodes_[id];
    n.left = left;
    n.right = right;
    n.axis = axis;
    n.split = split;
    return id;
  }

  void search(std::int32_t id, const Vector3& q, Hit& best) const {
    const Node& n = nodes_[id];
    if (n.leaf()) {
      for (std::uint32_t i = n.begin; i < n.end; ++i) {
        const std::size_t idx = order_[i];
        const double d2 = (points_[idx] - q).squaredNorm();
        if (d2 < best.squared_distance || (d2 == best.squared_distance && idx < best.index)) {
          best = {idx, d2};
        }
      }
      return;
    }
    const double diff = q[n.axis] - n.split;
    const std::int32_t first = diff < 0.0 ? n.left : n.right;
    const std::int32_t second = diff < 0.0 ? n.right : n.left;
    search(first, q, best);
    if (diff * diff <= best.squared_distance) search(second, q, best);
  }

  std::vector<Vector3> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace smoothlo
