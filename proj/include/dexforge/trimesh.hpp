// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "dexforge/transform.hpp"

namespace dexforge {

struct Aabb {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::max());
  Vec3 hi = Vec3::Constant(std::numeric_limits<double>::lowest());

  void expand(const Vec3& p) { lo = lo.cwiseMin(p); hi = hi.cwiseMax(p); }
  void expand(const Aabb& b) { lo = lo.cwiseMin(b.lo); hi = hi.cwiseMax(b.hi); }
  Vec3 center() const { return 0.5 * (lo + hi); }
  Vec3 extents() const { return hi - lo; }
  bool valid() const { return (lo.array() <= hi.array()).all(); }
  double distance_sq(const Vec3& p) const {
    Vec3 d = (lo - p).cwiseMax(p - hi).cwiseMax(0.0);
    return d.squaredNorm();
  }
  double distance(const Aabb& b) const {
    Vec3 d = (lo - b.hi).cwiseMax(b.lo - hi).cwiseMax(0.0);
    return d.norm();
  }
  bool contains(const Vec3& p) const {
    return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
  }
};

class TriMesh {
 public:
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;
  int object_id = -1;

  bool watertight() const { return watertight_; }
  const Aabb& bounds() const { return bounds_; }

  Vec3 tri_vertex(int tri, int corner) const { return vertices[triangles[tri][corner]]; }
  Vec3 tri_normal(int tri) const;
  double tri_area(int tri) const;
  double surface_area() const;
  // Signed volume via the divergence theorem; meaningful for watertight meshes.
  double volume() const;

  void transform(const Iso3& t);
  TriMesh transformed(const Iso3& t) const;

  // Recomputes bounds, drops degenerate triangles (area <= 1e-12 m^2),
  // validates indices and determines watertightness. Call after edits.
  void finalize();

  size_t dropped_degenerate() const { return dropped_degenerate_; }

 private:
  Aabb bounds_;
  bool watertight_ = false;
  size_t dropped_degenerate_ = 0;
};

// Loads OBJ or STL (ASCII or binary, by extension + content sniffing) and
// scales vertices. Throws std::runtime_error on parse failure, empty or
// degenerate-only meshes, or scale <= 0.
TriMesh load_mesh(const std::filesystem::path& path, double scale = 1.0);

void save_obj(const TriMesh& mesh, const std::filesystem::path& path);

// Area-weighted surface samples, deterministic per seed.
std::vector<Vec3> sample_surface(const TriMesh& mesh, int count, uint64_t seed);

}  // namespace dexforge
