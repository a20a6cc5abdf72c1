// SPDX-License-Identifier: Apache-2.0
#include "dexforge/kdtree.hpp"

#include <algorithm>
#include <numeric>

namespace dexforge {

namespace {

// Orders (distance_sq, index) with the worst candidate first.
struct HeapLess {
  bool operator()(const Neighbor& a, const Neighbor& b) const {
    if (a.distance_sq != b.distance_sq) return a.distance_sq < b.distance_sq;
    return a.index < b.index;
  }
};

}  // namespace

KdTree::KdTree(std::vector<Vec3> points) : points_(std::move(points)) {
  std::vector<int> idx(points_.size());
  std::iota(idx.begin(), idx.end(), 0);
  nodes_.reserve(points_.size());
  root_ = build(idx, 0, (int)idx.size(), 0);
}

int KdTree::build(std::vector<int>& idx, int begin, int end, int depth) {
  if (begin >= end) return -1;
  int axis = depth % 3;
  int mid = (begin + end) / 2;
  std::nth_element(idx.begin() + begin, idx.begin() + mid, idx.begin() + end,
                   [&](int a, int b) {
                     if (points_[a][axis] != points_[b][axis])
                       return points_[a][axis] < points_[b][axis];
                     return a < b;
                   });
  Node node;
  node.point = idx[mid];
  node.axis = axis;
  int self = (int)nodes_.size();
  nodes_.push_back(node);
  int left = build(idx, begin, mid, depth + 1);
  int right = build(idx, mid + 1, end, depth + 1);
  nodes_[self].left = left;
  nodes_[self].right = right;
  return self;
}

void KdTree::knn_recurse(int node, const Vec3& query, int k,
                         std::vector<Neighbor>& heap) const {
  if (node < 0) return;
  const Node& n = nodes_[node];
  const Vec3& p = points_[n.point];
  Neighbor cand{n.point, (query - p).squaredNorm()};
  if ((int)heap.size() < k) {
    heap.push_back(cand);
    std::push_heap(heap.begin(), heap.end(), HeapLess{});
  } else if (HeapLess{}(cand, heap.front())) {
    std::pop_heap(heap.begin(), heap.end(), HeapLess{});
    heap.back() = cand;
    std::push_heap(heap.begin(), heap.end(), HeapLess{});
  }
  double delta = query[n.axis] - p[n.axis];
  int near = delta < 0 ? n.left : n.right;
  int far = delta < 0 ? n.right : n.left;
  knn_recurse(near, query, k, heap);
  // The far side can still hold a winner when the splitting plane is within
  // the current worst distance (or the heap is not yet full). Equidistant
  // points on the far side may beat the current worst by index, so descend
  // on equality too.
  if ((int)heap.size() < k || delta * delta <= heap.front().distance_sq)
    knn_recurse(far, query, k, heap);
}

std::vector<Neighbor> KdTree::knn(const Vec3& query, int k) const {
  std::vector<Neighbor> heap;
  if (k <= 0 || points_.empty()) return heap;
  k = std::min<int>(k, (int)points_.size());
  heap.reserve(k);
  knn_recurse(root_, query, k, heap);
  std::sort_heap(heap.begin(), heap.end(), HeapLess{});
  return heap;
}

Neighbor KdTree::nearest(const Vec3& query) const {
  auto res = knn(query, 1);
  return res.empty() ? Neighbor{} : res[0];
}

void KdTree::radius_recurse(int node, const Vec3& query, double r_sq,
                            std::vector<int>& out) const {
  if (node < 0) return;
  const Node& n = nodes_[node];
  const Vec3& p = points_[n.point];
  if ((query - p).squaredNorm() <= r_sq) out.push_back(n.point);
  double delta = query[n.axis] - p[n.axis];
  int near = delta < 0 ? n.left : n.right;
  int far = delta < 0 ? n.right : n.left;
  radius_recurse(near, query, r_sq, out);
  if (delta * delta <= r_sq) radius_recurse(far, query, r_sq, out);
}

std::vector<int> KdTree::radius(const Vec3& query, double r) const {
  std::vector<int> out;
  if (r < 0 || points_.empty()) return out;
  radius_recurse(root_, query, r * r, out);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace dexforge
