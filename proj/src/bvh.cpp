// SPDX-License-Identifier: Apache-2.0
#include "dexforge/bvh.hpp"

#include <algorithm>
#include <numeric>

namespace dexforge {

bool intersect_triangle(const Ray& ray, const Vec3& a, const Vec3& b, const Vec3& c,
                        double& t, double t_min) {
  Vec3 e1 = b - a, e2 = c - a;
  Vec3 pv = ray.dir.cross(e2);
  double det = e1.dot(pv);
  if (std::abs(det) < 1e-14) return false;
  double inv = 1.0 / det;
  Vec3 tv = ray.origin - a;
  double u = tv.dot(pv) * inv;
  if (u < 0.0 || u > 1.0) return false;
  Vec3 qv = tv.cross(e1);
  double v = ray.dir.dot(qv) * inv;
  if (v < 0.0 || u + v > 1.0) return false;
  double tt = e2.dot(qv) * inv;
  if (tt <= t_min) return false;
  t = tt;
  return true;
}

double point_triangle_distance_sq(const Vec3& p, const Vec3& a, const Vec3& b,
                                  const Vec3& c, Vec3* closest) {
  // Ericson, Real-Time Collision Detection, 5.1.5
  Vec3 ab = b - a, ac = c - a, ap = p - a;
  double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) {
    if (closest) *closest = a;
    return (p - a).squaredNorm();
  }
  Vec3 bp = p - b;
  double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) {
    if (closest) *closest = b;
    return (p - b).squaredNorm();
  }
  double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) {
    double v = d1 / (d1 - d3);
    Vec3 q = a + v * ab;
    if (closest) *closest = q;
    return (p - q).squaredNorm();
  }
  Vec3 cp = p - c;
  double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) {
    if (closest) *closest = c;
    return (p - c).squaredNorm();
  }
  double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) {
    double w = d2 / (d2 - d6);
    Vec3 q = a + w * ac;
    if (closest) *closest = q;
    return (p - q).squaredNorm();
  }
  double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
    double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    Vec3 q = b + w * (c - b);
    if (closest) *closest = q;
    return (p - q).squaredNorm();
  }
  double denom = 1.0 / (va + vb + vc);
  double v = vb * denom, w = vc * denom;
  Vec3 q = a + ab * v + ac * w;
  if (closest) *closest = q;
  return (p - q).squaredNorm();
}

namespace {

double segment_segment_distance_sq(const Vec3& p1, const Vec3& q1, const Vec3& p2,
                                   const Vec3& q2) {
  // Ericson 5.1.9
  Vec3 d1 = q1 - p1, d2 = q2 - p2, r = p1 - p2;
  double a = d1.squaredNorm(), e = d2.squaredNorm(), f = d2.dot(r);
  double s, t;
  const double eps = 1e-16;
  if (a <= eps && e <= eps) {
    return (p1 - p2).squaredNorm();
  }
  if (a <= eps) {
    s = 0;
    t = std::clamp(f / e, 0.0, 1.0);
  } else {
    double c = d1.dot(r);
    if (e <= eps) {
      t = 0;
      s = std::clamp(-c / a, 0.0, 1.0);
    } else {
      double b = d1.dot(d2);
      double denom = a * e - b * b;
      s = denom > eps ? std::clamp((b * f - c * e) / denom, 0.0, 1.0) : 0.0;
      t = (b * s + f) / e;
      if (t < 0) {
        t = 0;
        s = std::clamp(-c / a, 0.0, 1.0);
      } else if (t > 1) {
        t = 1;
        s = std::clamp((b - c) / a, 0.0, 1.0);
      }
    }
  }
  Vec3 c1 = p1 + d1 * s, c2 = p2 + d2 * t;
  return (c1 - c2).squaredNorm();
}

bool segment_hits_triangle(const Vec3& p, const Vec3& q, const Vec3& a, const Vec3& b,
                           const Vec3& c) {
  Ray ray{p, q - p};
  double t;
  if (!intersect_triangle(ray, a, b, c, t, 0.0)) return false;
  return t <= 1.0;
}

}  // namespace

double triangle_triangle_distance(const Vec3& a0, const Vec3& a1, const Vec3& a2,
                                  const Vec3& b0, const Vec3& b1, const Vec3& b2) {
  // Intersecting triangles have distance 0; detect via edge-triangle tests.
  const Vec3* A[3] = {&a0, &a1, &a2};
  const Vec3* B[3] = {&b0, &b1, &b2};
  for (int i = 0; i < 3; ++i) {
    int j = (i + 1) % 3;
    if (segment_hits_triangle(*A[i], *A[j], b0, b1, b2)) return 0.0;
    if (segment_hits_triangle(*B[i], *B[j], a0, a1, a2)) return 0.0;
  }
  double best = std::numeric_limits<double>::max();
  for (int i = 0; i < 3; ++i) {
    int j = (i + 1) % 3;
    for (int k = 0; k < 3; ++k) {
      int l = (k + 1) % 3;
      best = std::min(best, segment_segment_distance_sq(*A[i], *A[j], *B[k], *B[l]));
    }
  }
  for (int i = 0; i < 3; ++i) {
    best = std::min(best, point_triangle_distance_sq(*A[i], b0, b1, b2));
    best = std::min(best, point_triangle_distance_sq(*B[i], a0, a1, a2));
  }
  return std::sqrt(best);
}

Bvh::Bvh(const TriMesh& mesh) : mesh_(&mesh) {
  order_.resize(mesh.triangles.size());
  std::iota(order_.begin(), order_.end(), 0);
  nodes_.reserve(mesh.triangles.size() * 2);
  build(order_, 0, (int)order_.size());
}

int Bvh::build(std::vector<int>& tris, int begin, int end) {
  Node node;
  for (int i = begin; i < end; ++i) {
    for (int k = 0; k < 3; ++k) node.box.expand(mesh_->tri_vertex(tris[i], k));
  }
  int idx = (int)nodes_.size();
  nodes_.push_back(node);
  const int count = end - begin;
  if (count <= 4) {
    nodes_[idx].left = begin;
    nodes_[idx].count = count;
    return idx;
  }
  Vec3 ext = node.box.extents();
  int axis = 0;
  if (ext.y() > ext.x()) axis = 1;
  if (ext.z() > ext[axis]) axis = 2;
  int mid = (begin + end) / 2;
  std::nth_element(tris.begin() + begin, tris.begin() + mid, tris.begin() + end,
                   [&](int ta, int tb) {
                     double ca = 0, cb = 0;
                     for (int k = 0; k < 3; ++k) {
                       ca += mesh_->tri_vertex(ta, k)[axis];
                       cb += mesh_->tri_vertex(tb, k)[axis];
                     }
                     if (ca != cb) return ca < cb;
                     return ta < tb;
                   });
  int left = build(tris, begin, mid);
  int right = build(tris, mid, end);
  nodes_[idx].left = left;
  nodes_[idx].right = right;
  return idx;
}

namespace {

// Slab test; returns entry distance or infinity on miss.
inline double box_ray_entry(const Aabb& box, const Vec3& origin, const Vec3& inv_dir,
                            double t_max) {
  double t0 = 0.0, t1 = t_max;
  for (int k = 0; k < 3; ++k) {
    double ta = (box.lo[k] - origin[k]) * inv_dir[k];
    double tb = (box.hi[k] - origin[k]) * inv_dir[k];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return std::numeric_limits<double>::infinity();
  }
  return t0;
}

}  // namespace

std::optional<RayHit> Bvh::raycast(const Ray& ray, double t_min) const {
  if (nodes_.empty()) return std::nullopt;
  Vec3 inv_dir;
  for (int k = 0; k < 3; ++k)
    inv_dir[k] = ray.dir[k] != 0 ? 1.0 / ray.dir[k]
                                 : std::numeric_limits<double>::infinity();
  RayHit best;
  int stack[64];
  int sp = 0;
  stack[sp++] = 0;
  while (sp > 0) {
    const Node& node = nodes_[stack[--sp]];
    if (box_ray_entry(node.box, ray.origin, inv_dir, best.t) > best.t) continue;
    if (node.count > 0) {
      for (int i = node.left; i < node.left + node.count; ++i) {
        int tri = order_[i];
        double t;
        if (intersect_triangle(ray, mesh_->tri_vertex(tri, 0), mesh_->tri_vertex(tri, 1),
                               mesh_->tri_vertex(tri, 2), t, t_min)) {
          if (t < best.t || (t == best.t && tri < best.triangle)) {
            best.t = t;
            best.triangle = tri;
          }
        }
      }
    } else {
      stack[sp++] = node.left;
      stack[sp++] = node.right;
    }
  }
  if (best.triangle < 0) return std::nullopt;
  best.point = ray.origin + best.t * ray.dir;
  best.object_id = mesh_->object_id;
  return best;
}

void Bvh::raycast_all(const Ray& ray, std::vector<RayHit>& hits, double t_min) const {
  if (nodes_.empty()) return;
  Vec3 inv_dir;
  for (int k = 0; k < 3; ++k)
    inv_dir[k] = ray.dir[k] != 0 ? 1.0 / ray.dir[k]
                                 : std::numeric_limits<double>::infinity();
  const double inf = std::numeric_limits<double>::infinity();
  int stack[64];
  int sp = 0;
  stack[sp++] = 0;
  while (sp > 0) {
    const Node& node = nodes_[stack[--sp]];
    if (box_ray_entry(node.box, ray.origin, inv_dir, inf) == inf) continue;
    if (node.count > 0) {
      for (int i = node.left; i < node.left + node.count; ++i) {
        int tri = order_[i];
        double t;
        if (intersect_triangle(ray, mesh_->tri_vertex(tri, 0), mesh_->tri_vertex(tri, 1),
                               mesh_->tri_vertex(tri, 2), t, t_min)) {
          RayHit h;
          h.t = t;
          h.triangle = tri;
          h.point = ray.origin + t * ray.dir;
          h.object_id = mesh_->object_id;
          hits.push_back(h);
        }
      }
    } else {
      stack[sp++] = node.left;
      stack[sp++] = node.right;
    }
  }
}

double Bvh::closest_point_sq(const Vec3& p, Vec3* closest, int* tri) const {
  double best = std::numeric_limits<double>::max();
  if (nodes_.empty()) return best;
  int stack[64];
  int sp = 0;
  stack[sp++] = 0;
  while (sp > 0) {
    const Node& node = nodes_[stack[--sp]];
    if (node.box.distance_sq(p) >= best) continue;
    if (node.count > 0) {
      for (int i = node.left; i < node.left + node.count; ++i) {
        int t = order_[i];
        Vec3 q;
        double d = point_triangle_distance_sq(p, mesh_->tri_vertex(t, 0),
                                              mesh_->tri_vertex(t, 1),
                                              mesh_->tri_vertex(t, 2), &q);
        if (d < best) {
          best = d;
          if (closest) *closest = q;
          if (tri) *tri = t;
        }
      }
    } else {
      // Visit the nearer child first.
      double dl = nodes_[node.left].box.distance_sq(p);
      double dr = nodes_[node.right].box.distance_sq(p);
      if (dl < dr) {
        stack[sp++] = node.right;
        stack[sp++] = node.left;
      } else {
        stack[sp++] = node.left;
        stack[sp++] = node.right;
      }
    }
  }
  return best;
}

namespace {

Aabb transform_box(const Aabb& box, const Iso3& pose) {
  Aabb out;
  for (int i = 0; i < 8; ++i) {
    Vec3 corner((i & 1) ? box.hi.x() : box.lo.x(), (i & 2) ? box.hi.y() : box.lo.y(),
                (i & 4) ? box.hi.z() : box.lo.z());
    out.expand(pose * corner);
  }
  return out;
}

}  // namespace

bool Bvh::collides(const Bvh& a, const Iso3& pose_a, const Bvh& b, const Iso3& pose_b,
                   double clearance) {
  if (a.nodes_.empty() || b.nodes_.empty()) return false;
  struct Pair {
    int na, nb;
  };
  std::vector<Pair> stack;
  stack.push_back({0, 0});
  while (!stack.empty()) {
    auto [na, nb] = stack.back();
    stack.pop_back();
    const Node& A = a.nodes_[na];
    const Node& B = b.nodes_[nb];
    Aabb wa = transform_box(A.box, pose_a);
    Aabb wb = transform_box(B.box, pose_b);
    if (wa.distance(wb) > clearance) continue;
    if (A.count > 0 && B.count > 0) {
      for (int i = A.left; i < A.left + A.count; ++i) {
        int ta = a.order_[i];
        Vec3 a0 = pose_a * a.mesh_->tri_vertex(ta, 0);
        Vec3 a1 = pose_a * a.mesh_->tri_vertex(ta, 1);
        Vec3 a2 = pose_a * a.mesh_->tri_vertex(ta, 2);
        for (int j = B.left; j < B.left + B.count; ++j) {
          int tb = b.order_[j];
          Vec3 b0 = pose_b * b.mesh_->tri_vertex(tb, 0);
          Vec3 b1 = pose_b * b.mesh_->tri_vertex(tb, 1);
          Vec3 b2 = pose_b * b.mesh_->tri_vertex(tb, 2);
          if (triangle_triangle_distance(a0, a1, a2, b0, b1, b2) <= clearance)
            return true;
        }
      }
    } else if (B.count > 0 || (A.count == 0 && A.box.extents().squaredNorm() >=
                                                   B.box.extents().squaredNorm())) {
      stack.push_back({a.nodes_[na].left, nb});
      stack.push_back({a.nodes_[na].right, nb});
    } else {
      stack.push_back({na, b.nodes_[nb].left});
      stack.push_back({na, b.nodes_[nb].right});
    }
  }
  return false;
}

std::optional<RayHit> raycast_scene(const std::vector<BvhInstance>& scene, const Ray& ray,
                                    double t_min) {
  std::optional<RayHit> best;
  for (const auto& inst : scene) {
    Ray local{inst.inverse * ray.origin, inst.inverse.linear() * ray.dir};
    auto hit = inst.bvh->raycast(local, t_min);
    if (!hit) continue;
    hit->object_id = inst.object_id;
    hit->point = inst.pose * hit->point;
    bool better = !best || hit->t < best->t ||
                  (hit->t == best->t && (hit->object_id < best->object_id ||
                                         (hit->object_id == best->object_id &&
                                          hit->triangle < best->triangle)));
    if (better) best = hit;
  }
  return best;
}

}  // namespace dexforge
