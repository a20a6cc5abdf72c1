// SPDX-License-Identifier: Apache-2.0
#include "dexforge/scene.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <thread>
#include <unordered_map>

#include "dexforge/io.hpp"
#include "dexforge/rng.hpp"

namespace dexforge {

// ---------------------------------------------------------------------------
// Incremental convex hull

namespace {

struct HullFace {
  std::array<int, 3> v;
  Vec3 n = Vec3::Zero();  // outward unit normal
  double d = 0.0;         // plane offset: n . x = d
};

HullFace make_face(const std::vector<Vec3>& pts, int a, int b, int c) {
  HullFace f{{a, b, c}};
  Vec3 n = (pts[b] - pts[a]).cross(pts[c] - pts[a]);
  double len = n.norm();
  if (len > 0) n /= len;
  f.n = n;
  f.d = n.dot(pts[a]);
  return f;
}

}  // namespace

std::vector<std::array<int, 3>> convex_hull(const std::vector<Vec3>& pts) {
  const int n = (int)pts.size();
  if (n < 4) throw std::runtime_error("convex_hull: need at least 4 points");
  Aabb box;
  for (const auto& p : pts) box.expand(p);
  const double diag = box.extents().norm();
  const double eps = std::max(1e-8 * diag, 1e-14);

  // Initial simplex from extreme points.
  int i0 = 0;
  for (int i = 1; i < n; ++i) {
    const Vec3 &a = pts[i], &b = pts[i0];
    if (std::tie(a.x(), a.y(), a.z()) < std::tie(b.x(), b.y(), b.z())) i0 = i;
  }
  int i1 = -1;
  double best = eps;
  for (int i = 0; i < n; ++i) {
    double d = (pts[i] - pts[i0]).norm();
    if (d > best) { best = d; i1 = i; }
  }
  if (i1 < 0) throw std::runtime_error("convex_hull: degenerate (single point)");
  Vec3 dir = (pts[i1] - pts[i0]).normalized();
  int i2 = -1;
  best = eps;
  for (int i = 0; i < n; ++i) {
    double d = (pts[i] - pts[i0]).cross(dir).norm();
    if (d > best) { best = d; i2 = i; }
  }
  if (i2 < 0) throw std::runtime_error("convex_hull: degenerate (collinear)");
  Vec3 nrm = (pts[i1] - pts[i0]).cross(pts[i2] - pts[i0]).normalized();
  int i3 = -1;
  best = eps;
  for (int i = 0; i < n; ++i) {
    double d = std::abs(nrm.dot(pts[i] - pts[i0]));
    if (d > best) { best = d; i3 = i; }
  }
  if (i3 < 0) throw std::runtime_error("convex_hull: degenerate (coplanar)");

  std::vector<HullFace> faces;
  auto add_oriented = [&](int a, int b, int c, int opposite) {
    HullFace f = make_face(pts, a, b, c);
    if (f.n.dot(pts[opposite]) > f.d) f = make_face(pts, a, c, b);
    faces.push_back(f);
  };
  add_oriented(i0, i1, i2, i3);
  add_oriented(i0, i1, i3, i2);
  add_oriented(i0, i2, i3, i1);
  add_oriented(i1, i2, i3, i0);

  for (int p = 0; p < n; ++p) {
    std::vector<char> visible(faces.size(), 0);
    bool any = false;
    for (size_t f = 0; f < faces.size(); ++f) {
      if (faces[f].n.dot(pts[p]) - faces[f].d > eps) { visible[f] = 1; any = true; }
    }
    if (!any) continue;
    // Directed edges of visible faces whose twin belongs to a hidden face
    // form the horizon; each spawns one cone face toward p.
    auto edge_key = [n](int a, int b) { return (int64_t)a * n + b; };
    std::unordered_map<int64_t, char> edge_visible;
    for (size_t f = 0; f < faces.size(); ++f) {
      if (!visible[f]) continue;
      const auto& v = faces[f].v;
      for (int e = 0; e < 3; ++e) edge_visible[edge_key(v[e], v[(e + 1) % 3])] = 1;
    }
    std::vector<HullFace> next;
    for (size_t f = 0; f < faces.size(); ++f)
      if (!visible[f]) next.push_back(faces[f]);
    for (size_t f = 0; f < faces.size(); ++f) {
      if (!visible[f]) continue;
      const auto& v = faces[f].v;
      for (int e = 0; e < 3; ++e) {
        int a = v[e], b = v[(e + 1) % 3];
        if (!edge_visible.count(edge_key(b, a)))
          next.push_back(make_face(pts, a, b, p));
      }
    }
    faces = std::move(next);
  }

  std::vector<std::array<int, 3>> out;
  out.reserve(faces.size());
  for (const auto& f : faces) out.push_back(f.v);
  return out;
}

std::vector<StablePose> stable_poses(const TriMesh& mesh) {
  auto hull = convex_hull(mesh.vertices);
  std::vector<StablePose> poses;
  poses.reserve(hull.size());
  for (const auto& tri : hull) {
    const Vec3 &a = mesh.vertices[tri[0]], &b = mesh.vertices[tri[1]],
               &c = mesh.vertices[tri[2]];
    Vec3 cr = (b - a).cross(c - a);
    double area = 0.5 * cr.norm();
    if (area <= 1e-12) continue;
    StablePose sp;
    sp.rotation = rotation_between(cr.normalized(), Vec3(0, 0, -1));
    double min_z = std::numeric_limits<double>::max();
    for (const auto& v : mesh.vertices) min_z = std::min(min_z, (sp.rotation * v).z());
    sp.height = -min_z;
    sp.weight = area;
    poses.push_back(sp);
  }
  if (poses.empty()) throw std::runtime_error("stable_poses: no usable hull faces");
  return poses;
}

// ---------------------------------------------------------------------------
// Scene composition

namespace {

std::shared_ptr<TriMesh> scaled_mesh(const TriMesh& mesh, double scale) {
  auto out = std::make_shared<TriMesh>(mesh);
  for (auto& v : out->vertices) v *= scale;
  out->finalize();
  return out;
}

}  // namespace

SceneSpec compose_scene(const ObjectLibrary& library, const ComposeParams& params,
                        uint64_t seed) {
  if (library.empty()) throw std::invalid_argument("compose_scene: empty library");
  if (params.count < 5 || params.count > 15)
    throw std::invalid_argument("compose_scene: count must be in [5, 15]");
  if (params.scales.empty() || params.workspace_x <= 0 || params.workspace_y <= 0)
    throw std::invalid_argument("compose_scene: invalid scales or workspace");

  struct CacheEntry {
    std::shared_ptr<TriMesh> mesh;
    std::shared_ptr<Bvh> bvh;
    std::vector<StablePose> poses;
    double total_weight = 0.0;
  };
  std::map<ObjectKey, CacheEntry> cache;

  Rng rng(seed);
  SceneSpec scene;
  scene.workspace_x = params.workspace_x;
  scene.workspace_y = params.workspace_y;

  struct Placed {
    const Bvh* bvh;
    Iso3 pose;
  };
  std::vector<Placed> placed;

  for (int slot = 0; slot < params.count; ++slot) {
    int oi = (int)rng.uniform_index(library.size());
    int si = (int)rng.uniform_index(params.scales.size());
    const ObjectEntry& entry = library[oi];
    double scale = params.scales[si];
    ObjectKey key{entry.object_id, scale};
    auto it = cache.find(key);
    if (it == cache.end()) {
      CacheEntry ce;
      ce.mesh = scaled_mesh(*entry.mesh, scale);
      ce.mesh->object_id = entry.object_id;
      ce.bvh = std::make_shared<Bvh>(*ce.mesh);
      ce.poses = stable_poses(*ce.mesh);
      for (const auto& sp : ce.poses) ce.total_weight += sp.weight;
      it = cache.emplace(key, std::move(ce)).first;
    }
    const CacheEntry& ce = it->second;

    bool done = false;
    for (int retry = 0; retry < params.max_retries && !done; ++retry) {
      double pick = rng.uniform(0.0, ce.total_weight);
      size_t fi = 0;
      for (; fi + 1 < ce.poses.size(); ++fi) {
        pick -= ce.poses[fi].weight;
        if (pick < 0) break;
      }
      double yaw = rng.uniform(0.0, 2.0 * std::numbers::pi);
      double x = rng.uniform(-0.5 * params.workspace_x, 0.5 * params.workspace_x);
      double y = rng.uniform(-0.5 * params.workspace_y, 0.5 * params.workspace_y);
      const StablePose& sp = ce.poses[fi];
      Iso3 pose = make_pose(Vec3(x, y, sp.height), rot_z(yaw) * sp.rotation);
      bool collides = false;
      for (const auto& other : placed) {
        if (Bvh::collides(*ce.bvh, pose, *other.bvh, other.pose, params.clearance)) {
          collides = true;
          break;
        }
      }
      if (collides) continue;
      SceneInstance inst;
      inst.instance_id = (int)scene.instances.size();
      inst.object_id = entry.object_id;
      inst.name = entry.name;
      inst.scale = scale;
      inst.pose = pose;
      scene.instances.push_back(inst);
      placed.push_back({ce.bvh.get(), pose});
      done = true;
    }
    if (!done)
      scene.warnings.push_back("placement failed for slot " + std::to_string(slot) +
                               " (" + entry.name + " x" + std::to_string(scale) + ")");
  }

  if ((int)scene.instances.size() < 5)
    throw std::runtime_error("compose_scene: placement failed, only " +
                             std::to_string(scene.instances.size()) +
                             " of " + std::to_string(params.count) +
                             " instances fit");
  scene.grasps.resize(scene.instances.size());
  return scene;
}

void save_scene(const SceneSpec& scene, const std::filesystem::path& path) {
  save_json(path.string(), scene_to_json(scene));
}

SceneSpec load_scene(const std::filesystem::path& path) {
  try {
    return scene_from_json(load_json(path.string()));
  } catch (const std::exception& e) {
    throw std::runtime_error("load_scene: " + path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Shared geometry

ObjectGeometryCache::ObjectGeometryCache(const ObjectLibrary& library, double sdf_cell,
                                         double sdf_margin)
    : library_(&library), sdf_cell_(sdf_cell), sdf_margin_(sdf_margin) {}

const ObjectGeometryCache::Built& ObjectGeometryCache::get(int object_id,
                                                           double scale) {
  ObjectKey key{object_id, scale};
  auto it = cache_.find(key);
  if (it != cache_.end()) return it->second;
  const ObjectEntry* entry = nullptr;
  for (const auto& e : *library_)
    if (e.object_id == object_id) entry = &e;
  if (!entry)
    throw std::runtime_error("ObjectGeometryCache: object id " +
                             std::to_string(object_id) + " not in library");
  Built b;
  auto mesh = scaled_mesh(*entry->mesh, scale);
  mesh->object_id = object_id;
  b.mesh = mesh;
  b.bvh = std::make_shared<Bvh>(*mesh);
  b.sdf = std::make_shared<SdfGrid>(*mesh, sdf_cell_, sdf_margin_);
  return cache_.emplace(key, std::move(b)).first->second;
}

SceneGeometry ObjectGeometryCache::geometry(const SceneSpec& scene) {
  SceneGeometry geom;
  for (const auto& inst : scene.instances) {
    const Built& b = get(inst.object_id, inst.scale);
    geom.meshes_.push_back(b.mesh);
    geom.bvhs_.push_back(b.bvh);
    geom.sdfs_.push_back(b.sdf);
  }
  return geom;
}

SceneGeometry::SceneGeometry(const SceneSpec& scene, const ObjectLibrary& library,
                             double sdf_cell, double sdf_margin) {
  ObjectGeometryCache cache(library, sdf_cell, sdf_margin);
  *this = cache.geometry(scene);
}

// ---------------------------------------------------------------------------
// Transfer + filtering

std::vector<std::vector<GraspRecord>> transfer_grasps(const SceneSpec& scene,
                                                      const GraspSets& sets) {
  std::vector<std::vector<GraspRecord>> out(scene.instances.size());
  for (size_t i = 0; i < scene.instances.size(); ++i) {
    const SceneInstance& inst = scene.instances[i];
    auto it = sets.find(ObjectKey{inst.object_id, inst.scale});
    if (it == sets.end())
      throw std::runtime_error("transfer_grasps: missing grasp set for object " +
                               std::to_string(inst.object_id) + " scale " +
                               std::to_string(inst.scale));
    out[i].reserve(it->second.size());
    for (const GraspRecord& g : it->second) {
      GraspRecord w = g;
      Iso3 pose = inst.pose * g.pose();
      w.T = pose.translation();
      w.R = pose.linear();
      w.object_id = inst.object_id;
      w.scale = inst.scale;
      out[i].push_back(std::move(w));
    }
  }
  return out;
}

namespace {

Aabb transform_bounds(const Aabb& box, const Iso3& pose) {
  Aabb out;
  for (int i = 0; i < 8; ++i) {
    Vec3 c((i & 1) ? box.hi.x() : box.lo.x(), (i & 2) ? box.hi.y() : box.lo.y(),
           (i & 4) ? box.hi.z() : box.lo.z());
    out.expand(pose * c);
  }
  return out;
}

Aabb grid_bounds(const SdfGrid& sdf) {
  Aabb box;
  box.expand(sdf.origin());
  box.expand(sdf.origin() + Vec3(sdf.dims()[0] - 1, sdf.dims()[1] - 1,
                                 sdf.dims()[2] - 1) *
                                sdf.cell());
  return box;
}

// Deepest intrusion of the hand's contact sample points into one instance.
double hand_penetration(const HandDescription& hand, const FkResult& fk,
                        const SdfGrid& sdf, const Iso3& inv_pose,
                        const Aabb& grid_box) {
  double depth = 0.0;
  for_each_link(hand, fk, [&](int, int, const LinkGeom& link, const Iso3& pose) {
    Aabb obj_box = transform_bounds(transform_bounds(link.mesh->bounds(), pose),
                                    inv_pose);
    if (obj_box.distance(grid_box) > 0.0) return;
    for (const Vec3& sample : link.contact_samples) {
      double sd = sdf.signed_distance(inv_pose * (pose * sample));
      if (sd < 0.0) depth = std::max(depth, -sd);
    }
  });
  return depth;
}

double hand_min_z(const HandDescription& hand, const FkResult& fk) {
  double min_z = std::numeric_limits<double>::max();
  for_each_link(hand, fk, [&](int, int, const LinkGeom& link, const Iso3& pose) {
    for (const auto& v : link.mesh->vertices) min_z = std::min(min_z, (pose * v).z());
  });
  return min_z;
}

}  // namespace

FilterResult filter_scene_grasps(const SceneSpec& scene,
                                 const std::vector<std::vector<GraspRecord>>& candidates,
                                 const HandDescription& hand, const SceneGeometry& geom,
                                 const FilterParams& params) {
  const size_t n = scene.instances.size();
  if (candidates.size() != n)
    throw std::invalid_argument("filter_scene_grasps: candidate list size mismatch");

  ObstacleSet obstacles;
  obstacles.has_plane = true;
  obstacles.plane_z = 0.0;
  std::vector<Iso3> inv_poses(n);
  std::vector<Aabb> grid_boxes(n);
  for (size_t i = 0; i < n; ++i) {
    obstacles.meshes.push_back({&geom.bvh((int)i), scene.instances[i].pose});
    inv_poses[i] = scene.instances[i].pose.inverse();
    grid_boxes[i] = grid_bounds(geom.sdf((int)i));
  }

  std::vector<std::pair<int, int>> flat;
  for (size_t i = 0; i < n; ++i)
    for (size_t k = 0; k < candidates[i].size(); ++k)
      flat.emplace_back((int)i, (int)k);
  // Empty cause string = kept; filled in parallel, assembled in order.
  std::vector<std::string> causes(flat.size());

  auto classify = [&](size_t fi) {
    auto [i, k] = flat[fi];
    const GraspRecord& g = candidates[i][k];
    Iso3 pose = g.pose();
    FkResult fk = forward_kinematics(hand, g.j_end, hand.base_from_tcp(pose));
    if (hand_min_z(hand, fk) < -params.neighbor_pen_tol) {
      causes[fi] = "support collision";
      return;
    }
    for (size_t j = 0; j < n; ++j) {
      if ((int)j == i) continue;
      if (hand_penetration(hand, fk, geom.sdf((int)j), inv_poses[j], grid_boxes[j]) >
          params.neighbor_pen_tol) {
        causes[fi] = "neighbor collision";
        return;
      }
    }
    if (hand_penetration(hand, fk, geom.sdf(i), inv_poses[i], grid_boxes[i]) >
        params.target_pen_tol) {
      causes[fi] = "target penetration";
      return;
    }
    ApproachResult approach = check_approach(hand, pose, g.j_init, obstacles,
                                             params.approach_distance,
                                             params.approach_steps);
    if (!approach.collision_free) causes[fi] = "approach collision";
  };

  int jobs = std::max(1, params.jobs);
  if (jobs == 1 || flat.size() <= 1) {
    for (size_t fi = 0; fi < flat.size(); ++fi) classify(fi);
  } else {
    std::vector<std::thread> pool;
    std::atomic<size_t> next{0};
    for (int t = 0; t < jobs; ++t)
      pool.emplace_back([&] {
        for (size_t fi = next.fetch_add(1); fi < flat.size(); fi = next.fetch_add(1))
          classify(fi);
      });
    for (auto& th : pool) th.join();
  }

  FilterResult result;
  result.kept.resize(n);
  for (size_t fi = 0; fi < flat.size(); ++fi) {
    auto [i, k] = flat[fi];
    if (causes[fi].empty())
      result.kept[i].push_back(candidates[i][k]);
    else
      result.removed.push_back({i, k, causes[fi]});
  }
  return result;
}

// ---------------------------------------------------------------------------
// Scene I/O + validation

nlohmann::json scene_to_json(const SceneSpec& scene) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["id"] = scene.id;
  j["workspace"] = {scene.workspace_x, scene.workspace_y};
  nlohmann::json instances = nlohmann::json::array();
  for (const auto& inst : scene.instances) {
    Eigen::Quaterniond q(inst.pose.linear());
    instances.push_back({{"instance_id", inst.instance_id},
                         {"object_id", inst.object_id},
                         {"name", inst.name},
                         {"scale", inst.scale},
                         {"translation",
                          {inst.pose.translation().x(), inst.pose.translation().y(),
                           inst.pose.translation().z()}},
                         {"quaternion", {q.w(), q.x(), q.y(), q.z()}}});
  }
  j["instances"] = instances;
  j["grasp_files"] = scene.grasp_files;
  j["warnings"] = scene.warnings;
  return j;
}

SceneSpec scene_from_json(const nlohmann::json& j) {
  if (j.at("schema_version").get<int>() != 1)
    throw std::runtime_error("scene_from_json: unsupported schema version");
  SceneSpec scene;
  scene.id = j.at("id").get<std::string>();
  scene.workspace_x = j.at("workspace").at(0).get<double>();
  scene.workspace_y = j.at("workspace").at(1).get<double>();
  for (const auto& ji : j.at("instances")) {
    SceneInstance inst;
    inst.instance_id = ji.at("instance_id").get<int>();
    inst.object_id = ji.at("object_id").get<int>();
    inst.name = ji.at("name").get<std::string>();
    inst.scale = ji.at("scale").get<double>();
    Vec3 t(ji.at("translation").at(0).get<double>(),
           ji.at("translation").at(1).get<double>(),
           ji.at("translation").at(2).get<double>());
    Eigen::Quaterniond q(ji.at("quaternion").at(0).get<double>(),
                         ji.at("quaternion").at(1).get<double>(),
                         ji.at("quaternion").at(2).get<double>(),
                         ji.at("quaternion").at(3).get<double>());
    if (std::abs(q.norm() - 1.0) > 1e-6)
      throw std::runtime_error("scene_from_json: non-unit quaternion");
    inst.pose = make_pose(t, q.normalized().toRotationMatrix());
    scene.instances.push_back(inst);
  }
  if (j.contains("grasp_files"))
    scene.grasp_files = j.at("grasp_files").get<std::vector<std::string>>();
  if (j.contains("warnings"))
    scene.warnings = j.at("warnings").get<std::vector<std::string>>();
  scene.grasps.resize(scene.instances.size());
  return scene;
}

void validate_scene(const SceneSpec& scene, const SceneGeometry& geom,
                    int min_instances, int max_instances, double pen_tol) {
  const int n = (int)scene.instances.size();
  if (n < min_instances || n > max_instances)
    throw std::runtime_error("validate_scene: instance count " + std::to_string(n) +
                             " outside [" + std::to_string(min_instances) + ", " +
                             std::to_string(max_instances) + "]");
  if ((int)geom.count() != n)
    throw std::runtime_error("validate_scene: geometry/instance count mismatch");

  std::vector<std::vector<Vec3>> probes(n);
  for (int i = 0; i < n; ++i) {
    probes[i] = geom.mesh(i).vertices;
    auto extra = sample_surface(geom.mesh(i), 200, 0);
    probes[i].insert(probes[i].end(), extra.begin(), extra.end());
  }
  for (int i = 0; i < n; ++i) {
    const Iso3& pose = scene.instances[i].pose;
    for (const auto& v : geom.mesh(i).vertices)
      if ((pose * v).z() < -pen_tol)
        throw std::runtime_error("validate_scene: instance " + std::to_string(i) +
                                 " sinks below the support plane");
  }
  for (int i = 0; i < n; ++i) {
    Iso3 inv_i = scene.instances[i].pose.inverse();
    Aabb grid_box = grid_bounds(geom.sdf(i));
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      for (const auto& p : probes[j]) {
        Vec3 p_i = inv_i * (scene.instances[j].pose * p);
        if (grid_box.distance_sq(p_i) > 0.0) continue;
        if (geom.sdf(i).signed_distance(p_i) < -pen_tol)
          throw std::runtime_error("validate_scene: instances " + std::to_string(i) +
                                   " and " + std::to_string(j) +
                                   " interpenetrate beyond tolerance");
      }
    }
  }
}

}  // namespace dexforge
