// SPDX-License-Identifier: Apache-2.0
#include "dexforge/primitives.hpp"

#include <cmath>
#include <map>

namespace dexforge {

TriMesh make_box(double sx, double sy, double sz) {
  TriMesh m;
  double x = sx / 2, y = sy / 2, z = sz / 2;
  m.vertices = {{-x, -y, -z}, {x, -y, -z}, {x, y, -z}, {-x, y, -z},
                {-x, -y, z},  {x, -y, z},  {x, y, z},  {-x, y, z}};
  m.triangles = {{0, 2, 1}, {0, 3, 2},   // bottom
                 {4, 5, 6}, {4, 6, 7},   // top
                 {0, 1, 5}, {0, 5, 4},   // -y
                 {2, 3, 7}, {2, 7, 6},   // +y
                 {1, 2, 6}, {1, 6, 5},   // +x
                 {3, 0, 4}, {3, 4, 7}};  // -x
  m.finalize();
  return m;
}

namespace {

int midpoint(std::map<std::pair<int, int>, int>& cache, std::vector<Vec3>& verts,
             int a, int b) {
  auto key = std::minmax(a, b);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  Vec3 mid = (verts[a] + verts[b]).normalized();
  verts.push_back(mid);
  int idx = (int)verts.size() - 1;
  cache.emplace(key, idx);
  return idx;
}

}  // namespace

TriMesh make_icosphere(double radius, int subdivisions) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {{-1, t, 0}, {1, t, 0},  {-1, -t, 0}, {1, -t, 0},
                         {0, -1, t}, {0, 1, t},  {0, -1, -t}, {0, 1, -t},
                         {t, 0, -1}, {t, 0, 1},  {-t, 0, -1}, {-t, 0, 1}};
  for (auto& p : v) p.normalize();
  std::vector<std::array<int, 3>> f = {
      {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
      {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
      {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
      {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> cache;
    std::vector<std::array<int, 3>> next;
    next.reserve(f.size() * 4);
    for (const auto& tri : f) {
      int ab = midpoint(cache, v, tri[0], tri[1]);
      int bc = midpoint(cache, v, tri[1], tri[2]);
      int ca = midpoint(cache, v, tri[2], tri[0]);
      next.push_back({tri[0], ab, ca});
      next.push_back({tri[1], bc, ab});
      next.push_back({tri[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    f = std::move(next);
  }
  TriMesh m;
  m.vertices.reserve(v.size());
  for (const auto& p : v) m.vertices.push_back(p * radius);
  m.triangles = std::move(f);
  m.finalize();
  return m;
}

TriMesh make_cylinder(double radius, double height, int segments) {
  TriMesh m;
  double h = height / 2;
  for (int i = 0; i < segments; ++i) {
    double a = 2.0 * M_PI * i / segments;
    m.vertices.emplace_back(radius * std::cos(a), radius * std::sin(a), -h);
    m.vertices.emplace_back(radius * std::cos(a), radius * std::sin(a), h);
  }
  int bot_c = (int)m.vertices.size();
  m.vertices.emplace_back(0, 0, -h);
  int top_c = (int)m.vertices.size();
  m.vertices.emplace_back(0, 0, h);
  for (int i = 0; i < segments; ++i) {
    int j = (i + 1) % segments;
    int b0 = 2 * i, t0 = 2 * i + 1, b1 = 2 * j, t1 = 2 * j + 1;
    m.triangles.push_back({b0, b1, t1});
    m.triangles.push_back({b0, t1, t0});
    m.triangles.push_back({bot_c, b1, b0});
    m.triangles.push_back({top_c, t0, t1});
  }
  m.finalize();
  return m;
}

TriMesh make_stick(double radius, double length, int segments) {
  return make_cylinder(radius, length, segments);
}

TriMesh make_bowl(double outer_radius, double thickness, int segments, int rings) {
  TriMesh m;
  const double inner_radius = outer_radius - thickness;
  // Two hemispherical shells (rim at z = 0, pole at -radius) joined by a
  // flat rim annulus. Ring r = 0 is the rim; ring rings-1 sits just above
  // the pole vertex.
  auto add_rings = [&](double radius) {
    int first = (int)m.vertices.size();
    for (int r = 0; r < rings; ++r) {
      double el = (M_PI / 2) * r / rings;
      double cz = -radius * std::sin(el);
      double cr = radius * std::cos(el);
      for (int i = 0; i < segments; ++i) {
        double a = 2.0 * M_PI * i / segments;
        m.vertices.emplace_back(cr * std::cos(a), cr * std::sin(a), cz);
      }
    }
    int pole = (int)m.vertices.size();
    m.vertices.emplace_back(0, 0, -radius);
    return std::pair{first, pole};
  };
  auto [outer0, outer_pole] = add_rings(outer_radius);
  auto [inner0, inner_pole] = add_rings(inner_radius);

  for (int r = 0; r + 1 < rings; ++r) {
    int o0 = outer0 + r * segments, o1 = o0 + segments;
    int n0 = inner0 + r * segments, n1 = n0 + segments;
    for (int i = 0; i < segments; ++i) {
      int j = (i + 1) % segments;
      m.triangles.push_back({o0 + i, o0 + j, o1 + j});
      m.triangles.push_back({o0 + i, o1 + j, o1 + i});
      m.triangles.push_back({n0 + i, n1 + j, n0 + j});
      m.triangles.push_back({n0 + i, n1 + i, n1 + j});
    }
  }
  int o_last = outer0 + (rings - 1) * segments;
  int n_last = inner0 + (rings - 1) * segments;
  for (int i = 0; i < segments; ++i) {
    int j = (i + 1) % segments;
    m.triangles.push_back({o_last + i, o_last + j, outer_pole});
    m.triangles.push_back({n_last + j, n_last + i, inner_pole});
    // rim annulus
    m.triangles.push_back({outer0 + j, outer0 + i, inner0 + i});
    m.triangles.push_back({outer0 + j, inner0 + i, inner0 + j});
  }
  m.finalize();
  return m;
}

}  // namespace dexforge
