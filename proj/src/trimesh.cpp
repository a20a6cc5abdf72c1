// SPDX-License-Identifier: Apache-2.0
#include "dexforge/trimesh.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "dexforge/rng.hpp"

namespace dexforge {

Vec3 TriMesh::tri_normal(int tri) const {
  Vec3 a = tri_vertex(tri, 0), b = tri_vertex(tri, 1), c = tri_vertex(tri, 2);
  Vec3 n = (b - a).cross(c - a);
  double len = n.norm();
  return len > 0 ? Vec3(n / len) : Vec3::UnitZ();
}

double TriMesh::tri_area(int tri) const {
  Vec3 a = tri_vertex(tri, 0), b = tri_vertex(tri, 1), c = tri_vertex(tri, 2);
  return 0.5 * (b - a).cross(c - a).norm();
}

double TriMesh::surface_area() const {
  double s = 0;
  for (int t = 0; t < (int)triangles.size(); ++t) s += tri_area(t);
  return s;
}

double TriMesh::volume() const {
  double v = 0;
  for (const auto& t : triangles) {
    const Vec3& a = vertices[t[0]];
    const Vec3& b = vertices[t[1]];
    const Vec3& c = vertices[t[2]];
    v += a.dot(b.cross(c)) / 6.0;
  }
  return std::abs(v);
}

void TriMesh::transform(const Iso3& t) {
  for (auto& v : vertices) v = t * v;
  bounds_ = Aabb{};
  for (const auto& v : vertices) bounds_.expand(v);
}

TriMesh TriMesh::transformed(const Iso3& t) const {
  TriMesh m = *this;
  m.transform(t);
  return m;
}

void TriMesh::finalize() {
  const int nv = (int)vertices.size();
  std::vector<std::array<int, 3>> kept;
  kept.reserve(triangles.size());
  dropped_degenerate_ = 0;
  for (const auto& t : triangles) {
    for (int k = 0; k < 3; ++k) {
      if (t[k] < 0 || t[k] >= nv) throw std::runtime_error("triangle index out of range");
    }
    const Vec3& a = vertices[t[0]];
    const Vec3& b = vertices[t[1]];
    const Vec3& c = vertices[t[2]];
    double area = 0.5 * (b - a).cross(c - a).norm();
    if (area > 1e-12) {
      kept.push_back(t);
    } else {
      ++dropped_degenerate_;
    }
  }
  triangles = std::move(kept);
  if (triangles.empty()) throw std::runtime_error("mesh has no non-degenerate triangles");

  bounds_ = Aabb{};
  for (const auto& v : vertices) bounds_.expand(v);

  // Watertight iff every undirected edge is shared by exactly two triangles
  // with opposite orientation.
  std::map<std::pair<int, int>, int> edge_count;
  bool ok = true;
  for (const auto& t : triangles) {
    for (int k = 0; k < 3; ++k) {
      int u = t[k], v = t[(k + 1) % 3];
      if (u == v) { ok = false; continue; }
      edge_count[{std::min(u, v), std::max(u, v)}] += (u < v) ? 1 : -1;
    }
  }
  if (ok) {
    for (const auto& [e, c] : edge_count) {
      if (c != 0) { ok = false; break; }
    }
    // Balanced orientation alone admits 4-fold edges; require exactly 2 uses.
    if (ok) {
      std::map<std::pair<int, int>, int> uses;
      for (const auto& t : triangles)
        for (int k = 0; k < 3; ++k) {
          int u = t[k], v = t[(k + 1) % 3];
          uses[{std::min(u, v), std::max(u, v)}]++;
        }
      for (const auto& [e, c] : uses)
        if (c != 2) { ok = false; break; }
    }
  }
  watertight_ = ok;
}

namespace {

TriMesh parse_obj(std::istream& in) {
  TriMesh mesh;
  std::string line;
  while (std::getline(in, line)) {
    if (line.size() < 2) continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "v") {
      double x, y, z;
      if (!(ls >> x >> y >> z)) throw std::runtime_error("OBJ: bad vertex line");
      mesh.vertices.emplace_back(x, y, z);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ls >> tok) {
        size_t slash = tok.find('/');
        std::string head = slash == std::string::npos ? tok : tok.substr(0, slash);
        int i = std::stoi(head);
        if (i < 0) i = (int)mesh.vertices.size() + 1 + i;
        if (i <= 0) throw std::runtime_error("OBJ: bad face index");
        idx.push_back(i - 1);
      }
      if (idx.size() < 3) throw std::runtime_error("OBJ: face with fewer than 3 vertices");
      for (size_t k = 2; k < idx.size(); ++k)
        mesh.triangles.push_back({idx[0], idx[k - 1], idx[k]});
    }
  }
  return mesh;
}

// Welds exactly-equal vertices so watertightness can be detected on STL soup.
void weld_vertices(TriMesh& mesh) {
  std::map<std::array<double, 3>, int> seen;
  std::vector<int> remap(mesh.vertices.size());
  std::vector<Vec3> unique;
  for (size_t i = 0; i < mesh.vertices.size(); ++i) {
    std::array<double, 3> key = {mesh.vertices[i].x(), mesh.vertices[i].y(),
                                 mesh.vertices[i].z()};
    auto it = seen.find(key);
    if (it == seen.end()) {
      seen.emplace(key, (int)unique.size());
      remap[i] = (int)unique.size();
      unique.push_back(mesh.vertices[i]);
    } else {
      remap[i] = it->second;
    }
  }
  for (auto& t : mesh.triangles)
    for (int k = 0; k < 3; ++k) t[k] = remap[t[k]];
  mesh.vertices = std::move(unique);
}

TriMesh parse_stl_binary(std::istream& in) {
  char header[80];
  in.read(header, 80);
  uint32_t count = 0;
  in.read(reinterpret_cast<char*>(&count), 4);
  if (!in) throw std::runtime_error("STL: truncated header");
  TriMesh mesh;
  mesh.vertices.reserve(count * 3);
  mesh.triangles.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    float buf[12];
    in.read(reinterpret_cast<char*>(buf), 48);
    uint16_t attr;
    in.read(reinterpret_cast<char*>(&attr), 2);
    if (!in) throw std::runtime_error("STL: truncated facet data");
    int base = (int)mesh.vertices.size();
    for (int k = 0; k < 3; ++k)
      mesh.vertices.emplace_back(buf[3 + 3 * k], buf[4 + 3 * k], buf[5 + 3 * k]);
    mesh.triangles.push_back({base, base + 1, base + 2});
  }
  weld_vertices(mesh);
  return mesh;
}

TriMesh parse_stl_ascii(std::istream& in) {
  TriMesh mesh;
  std::string tok;
  std::vector<Vec3> facet;
  while (in >> tok) {
    if (tok == "vertex") {
      double x, y, z;
      if (!(in >> x >> y >> z)) throw std::runtime_error("STL: bad vertex");
      facet.emplace_back(x, y, z);
    } else if (tok == "endfacet") {
      if (facet.size() != 3) throw std::runtime_error("STL: facet without 3 vertices");
      int base = (int)mesh.vertices.size();
      for (const auto& v : facet) mesh.vertices.push_back(v);
      mesh.triangles.push_back({base, base + 1, base + 2});
      facet.clear();
    }
  }
  weld_vertices(mesh);
  return mesh;
}

}  // namespace

TriMesh load_mesh(const std::filesystem::path& path, double scale) {
  if (scale <= 0) throw std::runtime_error("load_mesh: scale must be > 0");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_mesh: cannot open " + path.string());

  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);

  TriMesh mesh;
  if (ext == ".obj") {
    mesh = parse_obj(in);
  } else if (ext == ".stl") {
    char probe[6] = {0};
    in.read(probe, 5);
    in.seekg(0);
    if (std::strncmp(probe, "solid", 5) == 0) {
      // "solid" can also start a binary file; verify it parses as ASCII.
      try {
        mesh = parse_stl_ascii(in);
      } catch (const std::exception&) {
        in.clear();
        in.seekg(0);
        mesh = parse_stl_binary(in);
      }
      if (mesh.triangles.empty()) {
        in.clear();
        in.seekg(0);
        mesh = parse_stl_binary(in);
      }
    } else {
      mesh = parse_stl_binary(in);
    }
  } else {
    throw std::runtime_error("load_mesh: unsupported format " + ext);
  }

  if (mesh.vertices.empty() || mesh.triangles.empty())
    throw std::runtime_error("load_mesh: empty mesh " + path.string());

  for (auto& v : mesh.vertices) v *= scale;
  mesh.finalize();
  return mesh;
}

void save_obj(const TriMesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_obj: cannot open " + path.string());
  out.precision(17);
  for (const auto& v : mesh.vertices)
    out << "v " << v.x() << " " << v.y() << " " << v.z() << "\n";
  for (const auto& t : mesh.triangles)
    out << "f " << t[0] + 1 << " " << t[1] + 1 << " " << t[2] + 1 << "\n";
}

std::vector<Vec3> sample_surface(const TriMesh& mesh, int count, uint64_t seed) {
  std::vector<double> cum(mesh.triangles.size());
  double acc = 0;
  for (size_t t = 0; t < mesh.triangles.size(); ++t) {
    acc += mesh.tri_area((int)t);
    cum[t] = acc;
  }
  Rng rng(seed);
  std::vector<Vec3> pts;
  pts.reserve(count);
  for (int i = 0; i < count; ++i) {
    double u = rng.uniform() * acc;
    size_t t = std::lower_bound(cum.begin(), cum.end(), u) - cum.begin();
    if (t >= mesh.triangles.size()) t = mesh.triangles.size() - 1;
    double r1 = std::sqrt(rng.uniform());
    double r2 = rng.uniform();
    Vec3 a = mesh.tri_vertex((int)t, 0), b = mesh.tri_vertex((int)t, 1),
         c = mesh.tri_vertex((int)t, 2);
    pts.push_back((1 - r1) * a + r1 * (1 - r2) * b + r1 * r2 * c);
  }
  return pts;
}

}  // namespace dexforge
