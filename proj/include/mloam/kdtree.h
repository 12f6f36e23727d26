#pragma once

#include <vector>

#include "mloam/se3.h"

namespace mloam {

/// Balanced 3D k-d tree over a fixed point set. Build is median-split with
/// ties broken by point index, so queries are fully deterministic.
class KdTree3 {
 public:
  KdTree3() = default;
  explicit KdTree3(std::vector<Vec3> points) { build(std::move(points)); }

  void build(std::vector<Vec3> points);

  bool empty() const { return pts_.empty(); }
  size_t size() const { return pts_.size(); }
  const Vec3& point(int i) const { return pts_[i]; }

  /// Indices of the k nearest points, ordered by (distance, index).
  std::vector<int> knn(const Vec3& q, int k) const;
  /// knn restricted to a maximum distance.
  std::vector<int> knn(const Vec3& q, int k, double max_dist) const;
  /// All indices within `radius`, ordered by index.
  std::vector<int> radius(const Vec3& q, double radius) const;

 private:
  struct Node {
    int axis = -1;       // -1 marks a leaf
    int begin = 0, end = 0;
    double split = 0.0;
    int left = -1, right = -1;
    Vec3 bb_min, bb_max;
  };

  int build_node(int begin, int end);
  template <typename Visitor>
  void traverse(int node, const Vec3& q, double& worst, Visitor&& visit) const;

  std::vector<Vec3> pts_;
  std::vector<int> order_;  // permutation of original indices
  std::vector<Node> nodes_;
  int root_ = -1;
  static constexpr int kLeafSize = 16;
};

}  // namespace mloam
