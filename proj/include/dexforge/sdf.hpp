// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <vector>

#include "dexforge/bvh.hpp"
#include "dexforge/trimesh.hpp"

namespace dexforge {

// Regular-grid signed distance field (negative inside). Values live on grid
// nodes spaced `cell` apart; queries interpolate trilinearly. Built once from
// a watertight mesh, then immutable and safe to share across threads.
class SdfGrid {
 public:
  SdfGrid(const TriMesh& mesh, double cell = 0.002, double margin = 0.02);

  double cell() const { return cell_; }
  const Vec3& origin() const { return origin_; }
  const std::array<int, 3>& dims() const { return dims_; }

  // Trilinear signed distance. Points outside the grid clamp to the border
  // and add the Euclidean offset; `approximate` is set when that happens.
  double signed_distance(const Vec3& p, bool* approximate = nullptr) const;

  float at(int i, int j, int k) const {
    return values_[(size_t)(k * dims_[1] + j) * dims_[0] + i];
  }

 private:
  Vec3 origin_ = Vec3::Zero();
  double cell_ = 0.0;
  std::array<int, 3> dims_{0, 0, 0};
  std::vector<float> values_;
};

// Volume of the intersection of two posed watertight meshes, from counting
// grid cells whose centers fall inside both (ray-parity inside test).
// Returns mm³; `cell` is in meters.
double voxel_intersection_volume(const TriMesh& a, const Iso3& pose_a, const TriMesh& b,
                                 const Iso3& pose_b, double cell = 0.0005);

}  // namespace dexforge
