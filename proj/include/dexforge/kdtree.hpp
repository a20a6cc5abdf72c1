// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "dexforge/transform.hpp"

namespace dexforge {

struct Neighbor {
  int index = -1;
  double distance_sq = 0.0;
};

// Static 3-d tree over a point set. Queries are exact; equidistant points
// resolve to the lower index so results are order-independent.
class KdTree {
 public:
  explicit KdTree(std::vector<Vec3> points);

  const std::vector<Vec3>& points() const { return points_; }

  // k nearest neighbors, sorted by (distance, index).
  std::vector<Neighbor> knn(const Vec3& query, int k) const;

  Neighbor nearest(const Vec3& query) const;

  // All points with |p - query| <= radius, sorted by index.
  std::vector<int> radius(const Vec3& query, double r) const;

 private:
  struct Node {
    int point = -1;       // index into points_
    int left = -1;
    int right = -1;
    int axis = 0;
  };

  int build(std::vector<int>& idx, int begin, int end, int depth);
  void knn_recurse(int node, const Vec3& query, int k,
                   std::vector<Neighbor>& heap) const;
  void radius_recurse(int node, const Vec3& query, double r_sq,
                      std::vector<int>& out) const;

  std::vector<Vec3> points_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

}  // namespace dexforge
