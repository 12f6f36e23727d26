#include "mloam/kdtree.h"

#include <algorithm>
#include <cmath>
#include <queue>

namespace mloam {

void KdTree3::build(std::vector<Vec3> points) {
  pts_ = std::move(points);
  order_.resize(pts_.size());
  for (size_t i = 0; i < pts_.size(); ++i) order_[i] = int(i);
  nodes_.clear();
  nodes_.reserve(pts_.empty() ? 1 : 2 * pts_.size() / kLeafSize + 2);
  root_ = pts_.empty() ? -1 : build_node(0, int(pts_.size()));
}

int KdTree3::build_node(int begin, int end) {
  Node node;
  node.begin = begin;
  node.end = end;
  node.bb_min = Vec3::Constant(std::numeric_limits<double>::infinity());
  node.bb_max = -node.bb_min;
  for (int i = begin; i < end; ++i) {
    node.bb_min = node.bb_min.cwiseMin(pts_[order_[i]]);
    node.bb_max = node.bb_max.cwiseMax(pts_[order_[i]]);
  }
  const int id = int(nodes_.size());
  nodes_.push_back(node);
  if (end - begin <= kLeafSize) return id;

  int axis = 0;
  (node.bb_max - node.bb_min).maxCoeff(&axis);
  const int mid = (begin + end) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid,
                   order_.begin() + end, [&](int a, int b) {
                     const double da = pts_[a](axis), db = pts_[b](axis);
                     return da < db || (da == db && a < b);
                   });
  nodes_[id].axis = axis;
  nodes_[id].split = pts_[order_[mid]](axis);
  const int left = build_node(begin, mid);
  const int right = build_node(mid, end);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

namespace {
double box_dist2(const Vec3& q, const Vec3& lo, const Vec3& hi) {
  double d2 = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double d = std::max({lo(a) - q(a), q(a) - hi(a), 0.0});
    d2 += d * d;
  }
  return d2;
}
}  // namespace

template <typename Visitor>
void KdTree3::traverse(int node_id, const Vec3& q, double& worst,
                       Visitor&& visit) const {
  const Node& node = nodes_[node_id];
  if (box_dist2(q, node.bb_min, node.bb_max) > worst) return;
  if (node.axis < 0) {
    for (int i = node.begin; i < node.end; ++i) {
      const int idx = order_[i];
      const double d2 = (pts_[idx] - q).squaredNorm();
      if (d2 <= worst) visit(idx, d2, worst);
    }
    return;
  }
  // Closer child first.
  if (q(node.axis) < node.split) {
    traverse(node.left, q, worst, visit);
    traverse(node.right, q, worst, visit);
  } else {
    traverse(node.right, q, worst, visit);
    traverse(node.left, q, worst, visit);
  }
}

std::vector<int> KdTree3::knn(const Vec3& q, int k) const {
  return knn(q, k, std::numeric_limits<double>::infinity());
}

std::vector<int> KdTree3::knn(const Vec3& q, int k, double max_dist) const {
  if (root_ < 0 || k <= 0) return {};
  // Max-heap of (dist2, index); equal distances resolved by smaller index.
  using Entry = std::pair<double, int>;
  std::priority_queue<Entry> heap;
  double worst =
      max_dist >= std::sqrt(std::numeric_limits<double>::max()) / 2
          ? std::numeric_limits<double>::infinity()
          : max_dist * max_dist;
  auto visit = [&](int idx, double d2, double& w) {
    if (int(heap.size()) < k) {
      heap.emplace(d2, idx);
    } else if (d2 < heap.top().first ||
               (d2 == heap.top().first && idx < heap.top().second)) {
      heap.pop();
      heap.emplace(d2, idx);
    }
    if (int(heap.size()) == k) w = std::min(w, heap.top().first);
  };
  traverse(root_, q, worst, visit);
  std::vector<int> out(heap.size());
  for (int i = int(heap.size()) - 1; i >= 0; --i) {
    out[i] = heap.top().second;
    heap.pop();
  }
  return out;
}

std::vector<int> KdTree3::radius(const Vec3& q, double r) const {
  if (root_ < 0) return {};
  std::vector<int> out;
  double worst = r * r;
  auto visit = [&](int idx, double, double&) { out.push_back(idx); };
  traverse(root_, q, worst, visit);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace mloam
