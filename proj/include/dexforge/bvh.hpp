// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <vector>

#include "dexforge/trimesh.hpp"

namespace dexforge {

struct Ray {
  Vec3 origin;
  Vec3 dir;  // need not be unit length; t is in units of |dir|
};

struct RayHit {
  double t = std::numeric_limits<double>::infinity();
  Vec3 point = Vec3::Zero();
  int triangle = -1;
  int object_id = -1;
};

// Moller-Trumbore; hits with t > t_min only. Returns false for parallel rays.
bool intersect_triangle(const Ray& ray, const Vec3& a, const Vec3& b, const Vec3& c,
                        double& t, double t_min = 1e-12);

double point_triangle_distance_sq(const Vec3& p, const Vec3& a, const Vec3& b,
                                  const Vec3& c, Vec3* closest = nullptr);

// Exact distance between two triangles (0 if they intersect).
double triangle_triangle_distance(const Vec3& a0, const Vec3& a1, const Vec3& a2,
                                  const Vec3& b0, const Vec3& b1, const Vec3& b2);

class Bvh {
 public:
  Bvh() = default;
  explicit Bvh(const TriMesh& mesh);

  const TriMesh& mesh() const { return *mesh_; }
  const Aabb& bounds() const { return nodes_.empty() ? empty_ : nodes_[0].box; }

  // Closest hit with t > t_min; ties broken by lower triangle index.
  std::optional<RayHit> raycast(const Ray& ray, double t_min = 1e-12) const;

  // All hits along the ray (unsorted).
  void raycast_all(const Ray& ray, std::vector<RayHit>& hits, double t_min = 1e-12) const;

  // Closest surface point; returns squared distance.
  double closest_point_sq(const Vec3& p, Vec3* closest = nullptr, int* tri = nullptr) const;

  // True iff some triangle pair of a and b is within `clearance`. Poses map
  // each mesh into a common frame. clearance = 0 is an exact overlap test.
  static bool collides(const Bvh& a, const Iso3& pose_a, const Bvh& b,
                       const Iso3& pose_b, double clearance = 0.0);

 private:
  struct Node {
    Aabb box;
    int left = -1;    // internal: child index; leaf: first triangle
    int count = 0;    // leaf triangle count (0 for internal nodes)
    int right = -1;
  };

  int build(std::vector<int>& tris, int begin, int end);

  const TriMesh* mesh_ = nullptr;
  std::vector<Node> nodes_;
  std::vector<int> order_;  // triangle indices, leaf-contiguous
  Aabb empty_;
};

// A set of posed BVHs treated as one scene for ray queries.
struct BvhInstance {
  const Bvh* bvh = nullptr;
  Iso3 pose = Iso3::Identity();
  Iso3 inverse = Iso3::Identity();
  int object_id = -1;

  BvhInstance() = default;
  BvhInstance(const Bvh* b, const Iso3& p, int id)
      : bvh(b), pose(p), inverse(p.inverse()), object_id(id) {}
};

// Closest hit across instances; ties broken by (object_id, triangle).
std::optional<RayHit> raycast_scene(const std::vector<BvhInstance>& scene, const Ray& ray,
                                    double t_min = 1e-12);

}  // namespace dexforge
