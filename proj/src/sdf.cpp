// SPDX-License-Identifier: Apache-2.0
#include "dexforge/sdf.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dexforge {

namespace {

// Lateral nudge applied to parity rays so they cannot run exactly through
// mesh edges or vertices, which would double-count crossings.
constexpr double kRayJitter = 1.37e-7;

// Sorted ray parameters where a +x ray crosses the mesh, for a ray through
// (y, z) in the frame `inverse` maps world coordinates into.
std::vector<double> row_crossings(const Bvh& bvh, const Iso3& inverse, double x_start,
                                  double y, double z) {
  Ray world{Vec3(x_start, y + kRayJitter, z + kRayJitter), Vec3::UnitX()};
  Ray local{inverse * world.origin, inverse.linear() * world.dir};
  std::vector<RayHit> hits;
  bvh.raycast_all(local, hits);
  std::vector<double> ts;
  ts.reserve(hits.size());
  for (const auto& h : hits) ts.push_back(h.t);
  std::sort(ts.begin(), ts.end());
  return ts;
}

inline bool parity_inside(const std::vector<double>& crossings, double t) {
  size_t n = std::upper_bound(crossings.begin(), crossings.end(), t) -
             crossings.begin();
  return (n & 1) != 0;
}

}  // namespace

SdfGrid::SdfGrid(const TriMesh& mesh, double cell, double margin) : cell_(cell) {
  if (cell <= 0) throw std::invalid_argument("SdfGrid: cell size must be > 0");
  if (margin < 0) throw std::invalid_argument("SdfGrid: margin must be >= 0");
  if (!mesh.watertight())
    throw std::invalid_argument("SdfGrid: mesh must be watertight");
  Aabb box = mesh.bounds();
  origin_ = box.lo - Vec3::Constant(margin);
  Vec3 top = box.hi + Vec3::Constant(margin);
  for (int k = 0; k < 3; ++k)
    dims_[k] = (int)std::ceil((top[k] - origin_[k]) / cell) + 1;
  values_.assign((size_t)dims_[0] * dims_[1] * dims_[2], 0.0f);

  Bvh bvh(mesh);
  const double x_start = origin_.x() - 1.0;
  for (int k = 0; k < dims_[2]; ++k) {
    for (int j = 0; j < dims_[1]; ++j) {
      auto crossings = row_crossings(bvh, Iso3::Identity(), x_start,
                                     origin_.y() + j * cell, origin_.z() + k * cell);
      for (int i = 0; i < dims_[0]; ++i) {
        Vec3 p = origin_ + Vec3(i, j, k) * cell;
        double d = std::sqrt(bvh.closest_point_sq(p));
        bool inside = parity_inside(crossings, p.x() - x_start);
        values_[(size_t)(k * dims_[1] + j) * dims_[0] + i] =
            (float)(inside ? -d : d);
      }
    }
  }
}

double SdfGrid::signed_distance(const Vec3& p, bool* approximate) const {
  Vec3 u = (p - origin_) / cell_;
  Vec3 clamped = u;
  bool off_grid = false;
  for (int k = 0; k < 3; ++k) {
    double hi = dims_[k] - 1;
    if (u[k] < 0 || u[k] > hi) {
      clamped[k] = std::clamp(u[k], 0.0, hi);
      off_grid = true;
    }
  }
  if (approximate) *approximate = off_grid;

  int i0 = std::min((int)clamped.x(), dims_[0] - 2);
  int j0 = std::min((int)clamped.y(), dims_[1] - 2);
  int k0 = std::min((int)clamped.z(), dims_[2] - 2);
  i0 = std::max(i0, 0);
  j0 = std::max(j0, 0);
  k0 = std::max(k0, 0);
  double fx = clamped.x() - i0, fy = clamped.y() - j0, fz = clamped.z() - k0;
  double c00 = at(i0, j0, k0) * (1 - fx) + at(i0 + 1, j0, k0) * fx;
  double c10 = at(i0, j0 + 1, k0) * (1 - fx) + at(i0 + 1, j0 + 1, k0) * fx;
  double c01 = at(i0, j0, k0 + 1) * (1 - fx) + at(i0 + 1, j0, k0 + 1) * fx;
  double c11 = at(i0, j0 + 1, k0 + 1) * (1 - fx) + at(i0 + 1, j0 + 1, k0 + 1) * fx;
  double sd = (c00 * (1 - fy) + c10 * fy) * (1 - fz) +
              (c01 * (1 - fy) + c11 * fy) * fz;
  if (off_grid) sd += (u - clamped).norm() * cell_;
  return sd;
}

double voxel_intersection_volume(const TriMesh& a, const Iso3& pose_a, const TriMesh& b,
                                 const Iso3& pose_b, double cell) {
  if (cell <= 0)
    throw std::invalid_argument("voxel_intersection_volume: cell must be > 0");
  if (!a.watertight() || !b.watertight())
    throw std::invalid_argument(
        "voxel_intersection_volume: both meshes must be watertight");

  auto world_bounds = [](const TriMesh& m, const Iso3& pose) {
    Aabb local = m.bounds(), out;
    for (int i = 0; i < 8; ++i) {
      Vec3 c((i & 1) ? local.hi.x() : local.lo.x(),
             (i & 2) ? local.hi.y() : local.lo.y(),
             (i & 4) ? local.hi.z() : local.lo.z());
      out.expand(pose * c);
    }
    return out;
  };
  Aabb wa = world_bounds(a, pose_a);
  Aabb wb = world_bounds(b, pose_b);
  Aabb common;
  common.lo = wa.lo.cwiseMax(wb.lo);
  common.hi = wa.hi.cwiseMin(wb.hi);
  if ((common.hi - common.lo).minCoeff() <= 0) return 0.0;

  Bvh bvh_a(a), bvh_b(b);
  Iso3 inv_a = pose_a.inverse(), inv_b = pose_b.inverse();
  Vec3 ext = common.hi - common.lo;
  int nx = std::max(1, (int)std::ceil(ext.x() / cell));
  int ny = std::max(1, (int)std::ceil(ext.y() / cell));
  int nz = std::max(1, (int)std::ceil(ext.z() / cell));
  const double x_start = common.lo.x() - 1.0;

  long long count = 0;
  for (int k = 0; k < nz; ++k) {
    double z = common.lo.z() + (k + 0.5) * cell;
    for (int j = 0; j < ny; ++j) {
      double y = common.lo.y() + (j + 0.5) * cell;
      auto cross_a = row_crossings(bvh_a, inv_a, x_start, y, z);
      if (cross_a.empty()) continue;
      auto cross_b = row_crossings(bvh_b, inv_b, x_start, y, z);
      if (cross_b.empty()) continue;
      for (int i = 0; i < nx; ++i) {
        double t = common.lo.x() + (i + 0.5) * cell - x_start;
        if (parity_inside(cross_a, t) && parity_inside(cross_b, t)) ++count;
      }
    }
  }
  return (double)count * cell * cell * cell * 1e9;
}

}  // namespace dexforge
