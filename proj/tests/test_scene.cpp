// SPDX-License-Identifier: Apache-2.0
//
// Convex hulls, stable resting poses, scene composition, grasp transfer,
// scene-level filtering, and scene file I/O.

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "dexforge/io.hpp"
#include "dexforge/primitives.hpp"
#include "dexforge/rng.hpp"
#include "dexforge/scene.hpp"

using namespace dexforge;
namespace fs = std::filesystem;

namespace {

const HandDescription& test_hand() {
  static HandDescription hand =
      load_hand(std::string(DEXFORGE_SOURCE_DIR) + "/assets/hands/default/hand.json");
  return hand;
}

ObjectLibrary small_library() {
  ObjectLibrary lib;
  auto add = [&](const std::string& name, TriMesh mesh) {
    mesh.object_id = (int)lib.size();
    lib.push_back({(int)lib.size(), name, std::make_shared<TriMesh>(std::move(mesh))});
  };
  add("box", make_box(0.05, 0.06, 0.045));
  add("cylinder", make_cylinder(0.022, 0.06));
  add("sphere", make_icosphere(0.028, 3));
  return lib;
}

// Directed-edge matching: watertight iff every edge (a, b) pairs with (b, a).
bool hull_watertight(const std::vector<std::array<int, 3>>& tris) {
  std::map<std::pair<int, int>, int> edges;
  for (const auto& t : tris)
    for (int e = 0; e < 3; ++e) ++edges[{t[e], t[(e + 1) % 3]}];
  for (const auto& [edge, count] : edges) {
    if (count != 1) return false;
    if (!edges.count({edge.second, edge.first})) return false;
  }
  return true;
}

double hand_vertex_min_z(const HandDescription& hand, const FkResult& fk) {
  double min_z = std::numeric_limits<double>::max();
  for_each_link(hand, fk, [&](int, int, const LinkGeom& link, const Iso3& pose) {
    for (const auto& v : link.mesh->vertices) min_z = std::min(min_z, (pose * v).z());
  });
  return min_z;
}

double hand_vertex_max_z(const HandDescription& hand, const FkResult& fk) {
  double max_z = std::numeric_limits<double>::lowest();
  for_each_link(hand, fk, [&](int, int, const LinkGeom& link, const Iso3& pose) {
    for (const auto& v : link.mesh->vertices) max_z = std::max(max_z, (pose * v).z());
  });
  return max_z;
}

GraspRecord plain_grasp(const Vec3& T) {
  GraspRecord g;
  g.T = T;
  g.R = Mat3::Identity();
  g.finger_mask = {true, true, true, true, true};
  return g;
}

}  // namespace

TEST_CASE("convex hull encloses its input points with outward winding") {
  Rng rng(31);
  std::vector<Vec3> pts;
  for (int i = 0; i < 150; ++i)
    pts.emplace_back(rng.normal() * 0.03, rng.normal() * 0.02, rng.normal() * 0.04);

  auto hull = convex_hull(pts);
  REQUIRE(!hull.empty());
  CHECK(hull_watertight(hull));

  Vec3 centroid = Vec3::Zero();
  for (const auto& p : pts) centroid += p;
  centroid /= (double)pts.size();

  for (const auto& t : hull) {
    Vec3 n = (pts[t[1]] - pts[t[0]]).cross(pts[t[2]] - pts[t[0]]);
    REQUIRE(n.norm() > 0.0);
    n.normalize();
    // Outward: the centroid lies behind every face ...
    CHECK((centroid - pts[t[0]]).dot(n) < 0.0);
    // ... and no input point lies in front of any face.
    for (const auto& p : pts) CHECK((p - pts[t[0]]).dot(n) < 1e-9);
  }
}

TEST_CASE("convex hull of a cube is its 12 facets") {
  std::vector<Vec3> pts;
  for (int i = 0; i < 8; ++i)
    pts.emplace_back((i & 1) ? 1 : -1, (i & 2) ? 1 : -1, (i & 4) ? 1 : -1);
  pts.emplace_back(0, 0, 0);    // interior points must not appear
  pts.emplace_back(0.5, 0.2, -0.3);

  auto hull = convex_hull(pts);
  CHECK(hull.size() == 12);
  CHECK(hull_watertight(hull));
  std::set<int> used;
  for (const auto& t : hull) used.insert(t.begin(), t.end());
  CHECK(used.count(8) == 0);
  CHECK(used.count(9) == 0);
}

TEST_CASE("convex hull rejects degenerate input") {
  CHECK_THROWS_AS(convex_hull({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)}),
                  std::runtime_error);
  std::vector<Vec3> collinear;
  for (int i = 0; i < 10; ++i) collinear.emplace_back(i * 0.1, 0, 0);
  CHECK_THROWS_AS(convex_hull(collinear), std::runtime_error);
  std::vector<Vec3> coplanar;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) coplanar.emplace_back(i * 0.1, j * 0.1, 0.0);
  CHECK_THROWS_AS(convex_hull(coplanar), std::runtime_error);
}

TEST_CASE("stable poses rest the mesh on the plane with area weights") {
  TriMesh box = make_box(0.04, 0.05, 0.06);
  auto poses = stable_poses(box);
  REQUIRE(!poses.empty());

  double total_weight = 0.0;
  std::set<int> down_faces;  // which box face points down, encoded as axis*2+sign
  for (const StablePose& sp : poses) {
    CHECK(sp.weight > 0.0);
    total_weight += sp.weight;

    // Applying (rotation, height) rests the mesh exactly on z = 0.
    double min_z = std::numeric_limits<double>::max();
    for (const auto& v : box.vertices)
      min_z = std::min(min_z, (sp.rotation * v).z() + sp.height);
    CHECK(std::abs(min_z) < 1e-12);

    // The rotated "down" direction is one of the six face normals.
    Vec3 down = sp.rotation.transpose() * Vec3(0, 0, -1);
    int axis = -1;
    for (int k = 0; k < 3; ++k)
      if (std::abs(std::abs(down[k]) - 1.0) < 1e-9) axis = k;
    REQUIRE(axis >= 0);
    down_faces.insert(axis * 2 + (down[axis] > 0 ? 1 : 0));
  }
  // All six faces are represented and the weights sum to the surface area.
  CHECK(down_faces.size() == 6);
  CHECK(std::abs(total_weight - box.surface_area()) < 1e-9);
}

TEST_CASE("scene composition is deterministic and collision free") {
  ObjectLibrary lib = small_library();
  ComposeParams params;
  params.count = 7;

  SceneSpec a = compose_scene(lib, params, 42);
  SceneSpec b = compose_scene(lib, params, 42);
  CHECK(scene_to_json(a) == scene_to_json(b));

  REQUIRE((int)a.instances.size() >= 5);
  CHECK(a.grasps.size() == a.instances.size());

  ObjectGeometryCache cache(lib);
  for (size_t i = 0; i < a.instances.size(); ++i) {
    const SceneInstance& inst = a.instances[i];
    CHECK(inst.instance_id == (int)i);
    CHECK(std::abs(inst.pose.translation().x()) <= 0.5 * params.workspace_x + 1e-12);
    CHECK(std::abs(inst.pose.translation().y()) <= 0.5 * params.workspace_y + 1e-12);

    // Resting: the scaled mesh touches z = 0 exactly.
    const TriMesh& mesh = *cache.get(inst.object_id, inst.scale).mesh;
    double min_z = std::numeric_limits<double>::max();
    for (const auto& v : mesh.vertices)
      min_z = std::min(min_z, (inst.pose * v).z());
    CHECK(std::abs(min_z) < 1e-9);
  }

  // Pairwise clearance via exact BVH distance.
  for (size_t i = 0; i < a.instances.size(); ++i)
    for (size_t j = i + 1; j < a.instances.size(); ++j) {
      const auto& gi = cache.get(a.instances[i].object_id, a.instances[i].scale);
      const auto& gj = cache.get(a.instances[j].object_id, a.instances[j].scale);
      CHECK(!Bvh::collides(*gi.bvh, a.instances[i].pose, *gj.bvh,
                           a.instances[j].pose, params.clearance));
    }

  CHECK_THROWS_AS(compose_scene({}, params, 0), std::invalid_argument);
  ComposeParams bad = params;
  bad.count = 3;
  CHECK_THROWS_AS(compose_scene(lib, bad, 0), std::invalid_argument);
}

TEST_CASE("scene composition fails loudly when objects cannot fit") {
  ObjectLibrary lib = small_library();
  ComposeParams cramped;
  cramped.count = 5;
  cramped.workspace_x = 0.05;
  cramped.workspace_y = 0.05;
  cramped.max_retries = 5;
  CHECK_THROWS_WITH_AS(compose_scene(lib, cramped, 1),
                       doctest::Contains("placement failed"), std::runtime_error);
}

TEST_CASE("geometry cache shares built meshes across instances and scenes") {
  ObjectLibrary lib = small_library();
  ObjectGeometryCache cache(lib);

  SceneSpec scene;
  scene.id = "cache_test";
  auto add_instance = [&](int object_id, double scale, const Vec3& t) {
    SceneInstance inst;
    inst.instance_id = (int)scene.instances.size();
    inst.object_id = object_id;
    inst.name = lib[object_id].name;
    inst.scale = scale;
    inst.pose = translation(t.x(), t.y(), t.z());
    scene.instances.push_back(inst);
  };
  add_instance(0, 1.0, Vec3(0, 0, 0.0225));
  add_instance(0, 1.0, Vec3(0.2, 0, 0.0225));
  add_instance(0, 0.8, Vec3(-0.2, 0, 0.018));

  SceneGeometry geom = cache.geometry(scene);
  REQUIRE(geom.count() == 3);
  CHECK(&geom.mesh(0) == &geom.mesh(1));
  CHECK(&geom.bvh(0) == &geom.bvh(1));
  CHECK(&geom.sdf(0) == &geom.sdf(1));
  CHECK(&geom.mesh(0) != &geom.mesh(2));
  CHECK(&geom.mesh(0) == cache.get(0, 1.0).mesh.get());

  SceneGeometry geom2 = cache.geometry(scene);
  CHECK(&geom2.mesh(0) == &geom.mesh(0));

  // Scaled geometry really is scaled.
  CHECK(std::abs(geom.mesh(2).bounds().extents().x() - 0.8 * 0.05) < 1e-12);

  CHECK_THROWS_AS(cache.get(99, 1.0), std::runtime_error);
}

TEST_CASE("grasp transfer left-composes instance poses") {
  ObjectLibrary lib = small_library();
  SceneSpec scene;
  SceneInstance inst;
  inst.instance_id = 0;
  inst.object_id = 0;
  inst.name = "box";
  inst.scale = 1.1;
  inst.pose = make_pose(Vec3(0.1, -0.05, 0.02), rot_z(0.6));
  scene.instances.push_back(inst);
  inst.instance_id = 1;
  inst.pose = make_pose(Vec3(-0.15, 0.1, 0.03), rot_z(-1.1) * rot_x(0.2));
  scene.instances.push_back(inst);

  GraspRecord g = plain_grasp(Vec3(0.01, 0.02, 0.06));
  g.R = rot_y(0.4);
  for (int i = 0; i < 20; ++i) g.j_end[i] = 0.003 * i;
  GraspSets sets;
  sets[ObjectKey{0, 1.1}] = {g};

  auto transferred = transfer_grasps(scene, sets);
  REQUIRE(transferred.size() == 2);
  REQUIRE(transferred[0].size() == 1);
  REQUIRE(transferred[1].size() == 1);
  for (int i = 0; i < 2; ++i) {
    Iso3 expected = scene.instances[i].pose * g.pose();
    CHECK((transferred[i][0].T - expected.translation()).norm() < 1e-15);
    CHECK((transferred[i][0].R - expected.linear()).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((transferred[i][0].j_end - g.j_end).cwiseAbs().maxCoeff() == 0.0);
    CHECK(transferred[i][0].object_id == 0);
    CHECK(transferred[i][0].scale == 1.1);
  }

  // A scale with no synthesized set is an error, not a silent skip.
  scene.instances[1].scale = 0.8;
  CHECK_THROWS_WITH_AS(transfer_grasps(scene, sets),
                       doctest::Contains("missing grasp set"), std::runtime_error);
}

TEST_CASE("scene filter classifies removal causes and is idempotent") {
  const HandDescription& hand = test_hand();
  ObjectLibrary lib = small_library();

  FkResult fk0 = forward_kinematics(hand, JointVec::Zero(), Iso3::Identity());
  const double zmin = hand_vertex_min_z(hand, fk0);  // fingertip reach below TCP
  const double zmax = hand_vertex_max_z(hand, fk0);

  const double box_top = 0.045;
  SceneSpec scene;
  scene.id = "filter_test";
  auto add_instance = [&](double x, double z) {
    SceneInstance inst;
    inst.instance_id = (int)scene.instances.size();
    inst.object_id = 0;
    inst.name = "box";
    inst.scale = 1.0;
    inst.pose = translation(x, 0.0, z);
    scene.instances.push_back(inst);
  };
  add_instance(0.0, 0.0225);   // target, resting
  add_instance(0.2, 0.0225);   // neighbor, resting
  // Floating obstacle above the approach corridor at x = -0.2.
  const double tcp_clear = box_top + 0.0005 - zmin;  // fingertips 0.5 mm above a box top
  add_instance(-0.2, tcp_clear + zmax + 0.0425);

  ObjectGeometryCache cache(lib);
  SceneGeometry geom = cache.geometry(scene);

  std::vector<std::vector<GraspRecord>> candidates(3);
  // (0) hand descends through the support plane
  candidates[0].push_back(plain_grasp(Vec3(0, 0, 0.02)));
  // (1) hand buried in the neighbor instance
  candidates[0].push_back(plain_grasp(Vec3(0.2, 0, 0.13)));
  // (2) fingertips 8 mm into the target
  candidates[0].push_back(plain_grasp(Vec3(0, 0, box_top - 0.008 - zmin)));
  // (3) clean final pose, retraction path blocked by the floating box
  candidates[0].push_back(plain_grasp(Vec3(-0.2, 0, tcp_clear)));
  // (4) clean pose and clean approach above the neighbor
  candidates[1].push_back(plain_grasp(Vec3(0.2, 0, tcp_clear + 0.01)));

  FilterResult r = filter_scene_grasps(scene, candidates, hand, geom);
  REQUIRE(r.removed.size() == 4);
  CHECK(r.kept[0].empty());
  REQUIRE(r.kept[1].size() == 1);
  CHECK(r.kept[2].empty());

  std::map<std::pair<int, int>, std::string> causes;
  for (const auto& rec : r.removed) causes[{rec.instance, rec.grasp_index}] = rec.cause;
  CHECK(causes[{0, 0}] == "support collision");
  CHECK(causes[{0, 1}] == "neighbor collision");
  CHECK(causes[{0, 2}] == "target penetration");
  CHECK(causes[{0, 3}] == "approach collision");

  // Filtering what survived removes nothing more.
  FilterResult again = filter_scene_grasps(scene, r.kept, hand, geom);
  CHECK(again.removed.empty());
  REQUIRE(again.kept[1].size() == 1);
  CHECK(grasp_to_json(again.kept[1][0]) == grasp_to_json(r.kept[1][0]));

  // Parallel filtering classifies identically.
  FilterParams two_jobs;
  two_jobs.jobs = 2;
  FilterResult par = filter_scene_grasps(scene, candidates, hand, geom, two_jobs);
  REQUIRE(par.removed.size() == 4);
  std::map<std::pair<int, int>, std::string> par_causes;
  for (const auto& rec : par.removed)
    par_causes[{rec.instance, rec.grasp_index}] = rec.cause;
  CHECK(par_causes == causes);

  std::vector<std::vector<GraspRecord>> wrong_size(2);
  CHECK_THROWS_AS(filter_scene_grasps(scene, wrong_size, hand, geom),
                  std::invalid_argument);
}

TEST_CASE("scene files round trip") {
  SceneSpec scene;
  scene.id = "roundtrip";
  scene.workspace_x = 0.5;
  scene.workspace_y = 0.7;
  SceneInstance inst;
  inst.instance_id = 0;
  inst.object_id = 3;
  inst.name = "cylinder";
  inst.scale = 0.9;
  inst.pose = make_pose(Vec3(0.05, -0.1, 0.03), rot_z(0.4) * rot_x(0.2));
  scene.instances.push_back(inst);
  scene.grasp_files = {"scene_x_inst00.grasps.json"};
  scene.warnings = {"placement failed for slot 5 (box x1.2)"};

  fs::path dir = fs::temp_directory_path() / "dexforge_scene_io_test";
  fs::create_directories(dir);
  fs::path path = dir / "scene.json";
  save_scene(scene, path);
  SceneSpec loaded = load_scene(path);

  CHECK(loaded.id == scene.id);
  CHECK(loaded.workspace_x == scene.workspace_x);
  CHECK(loaded.workspace_y == scene.workspace_y);
  REQUIRE(loaded.instances.size() == 1);
  CHECK(loaded.instances[0].object_id == 3);
  CHECK(loaded.instances[0].name == "cylinder");
  CHECK(loaded.instances[0].scale == 0.9);
  CHECK((loaded.instances[0].pose.matrix() - inst.pose.matrix()).cwiseAbs().maxCoeff() <
        1e-12);
  CHECK(loaded.grasp_files == scene.grasp_files);
  CHECK(loaded.warnings == scene.warnings);
  CHECK(loaded.grasps.size() == 1);

  // Errors carry enough context to act on.
  CHECK_THROWS_WITH_AS(load_scene(dir / "missing.json"),
                       doctest::Contains("missing.json"), std::runtime_error);
  nlohmann::json bad = scene_to_json(scene);
  bad["instances"][0]["quaternion"] = {0.5, 0.5, 0.5, 0.6};
  CHECK_THROWS_WITH_AS(scene_from_json(bad), doctest::Contains("non-unit"),
                       std::runtime_error);
  bad = scene_to_json(scene);
  bad["schema_version"] = 9;
  CHECK_THROWS_AS(scene_from_json(bad), std::runtime_error);

  fs::remove_all(dir);
}

TEST_CASE("scene validation enforces count, resting, and separation") {
  ObjectLibrary lib = small_library();
  ObjectGeometryCache cache(lib);
  ComposeParams params;
  params.count = 6;
  SceneSpec good = compose_scene(lib, params, 7);
  SceneGeometry geom = cache.geometry(good);
  CHECK_NOTHROW(validate_scene(good, geom));

  SceneSpec few = good;
  few.instances.resize(4);
  few.grasps.resize(4);
  SceneGeometry few_geom = cache.geometry(few);
  CHECK_THROWS_WITH_AS(validate_scene(few, few_geom),
                       doctest::Contains("instance count"), std::runtime_error);

  SceneSpec sunk = good;
  sunk.instances[0].pose.translation().z() -= 0.02;
  SceneGeometry sunk_geom = cache.geometry(sunk);
  CHECK_THROWS_WITH_AS(validate_scene(sunk, sunk_geom),
                       doctest::Contains("sinks below"), std::runtime_error);

  SceneSpec overlapped = good;
  overlapped.instances[1].pose = overlapped.instances[0].pose;
  overlapped.instances[1].object_id = overlapped.instances[0].object_id;
  overlapped.instances[1].scale = overlapped.instances[0].scale;
  SceneGeometry overlap_geom = cache.geometry(overlapped);
  CHECK_THROWS_WITH_AS(validate_scene(overlapped, overlap_geom),
                       doctest::Contains("interpenetrate"), std::runtime_error);
}
