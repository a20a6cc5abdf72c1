// SPDX-License-Identifier: Apache-2.0
// Viewpoint sampling, depth rendering, occlusion rates, camera file I/O,
// voxel-stratified downsampling, label assignment, and sample serialization.
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <set>

#include "dexforge/io.hpp"
#include "dexforge/labels.hpp"
#include "dexforge/primitives.hpp"
#include "dexforge/render.hpp"
#include "dexforge/rng.hpp"

using namespace dexforge;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

ObjectLibrary box_library() {
  auto mesh = std::make_shared<TriMesh>(make_box(0.1, 0.1, 0.05));
  return {{0, "box", mesh}};
}

// 101x101 camera at (0, 0, h) looking straight down; the center pixel ray is
// exactly -z in world, +x image = +x world, +y image = -y world.
CameraModel down_camera(double h) {
  CameraModel cam;
  cam.width = 101;
  cam.height = 101;
  cam.fx = cam.fy = 100.0;
  cam.cx = cam.cy = 50.5;
  Mat3 r_wc;
  r_wc.col(0) = Vec3(1, 0, 0);
  r_wc.col(1) = Vec3(0, -1, 0);
  r_wc.col(2) = Vec3(0, 0, -1);
  cam.camera_from_world = make_pose(Vec3(0, 0, h), r_wc).inverse();
  return cam;
}

SceneInstance box_instance(int id, const Vec3& t) {
  SceneInstance inst;
  inst.instance_id = id;
  inst.object_id = 0;
  inst.name = "box";
  inst.scale = 1.0;
  inst.pose = make_pose(t, Mat3::Identity());
  return inst;
}

SceneSpec single_box_scene() {
  SceneSpec scene;
  scene.id = "render-test";
  scene.workspace_x = scene.workspace_y = 0.4;
  scene.instances.push_back(box_instance(0, Vec3(0, 0, 0.025)));  // top at 0.05
  return scene;
}

std::filesystem::path temp_dir(const std::string& leaf) {
  auto dir = std::filesystem::temp_directory_path() / "dexforge_test" / leaf;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

// ---------------------------------------------------------------------------
// Cameras and viewpoint sampling

TEST_CASE("default camera matches the stated intrinsics") {
  CameraModel cam = default_camera();
  CHECK(cam.width == 640);
  CHECK(cam.height == 480);
  CHECK(cam.fx == doctest::Approx(320.0 / std::tan(30.0 * kDeg)).epsilon(1e-12));
  CHECK(cam.fy == cam.fx);
  CHECK(cam.cx == doctest::Approx(320.0));
  CHECK(cam.cy == doctest::Approx(240.0));
  CHECK_NOTHROW(cam.validate());
}

TEST_CASE("camera validation rejects bad intrinsics") {
  CameraModel cam = default_camera();
  cam.fx = 0.0;
  CHECK_THROWS_AS(cam.validate(), std::invalid_argument);
  cam = default_camera();
  cam.width = 0;
  CHECK_THROWS_AS(cam.validate(), std::invalid_argument);
  cam = default_camera();
  cam.cx = cam.width;  // principal point must lie inside the image
  CHECK_THROWS_AS(cam.validate(), std::invalid_argument);
}

TEST_CASE("viewpoints sit on the sphere inside the elevation band and look at the center") {
  const Vec3 center(0.05, -0.1, 0.0);
  const double radius = 1.0;
  auto cams = sample_viewpoints(256, radius, kDefaultElevLo, kDefaultElevHi, center);
  REQUIRE(cams.size() == 256);

  double min_elev = 1e9, max_elev = -1e9;
  for (size_t i = 0; i < cams.size(); ++i) {
    const CameraModel& cam = cams[i];
    CHECK(cam.viewpoint_index == (int)i);
    Iso3 wfc = cam.world_from_camera();
    Vec3 pos = wfc.translation();
    CHECK((pos - center).norm() == doctest::Approx(radius).epsilon(1e-12));

    double elev = std::asin(std::clamp((pos.z() - center.z()) / radius, -1.0, 1.0));
    min_elev = std::min(min_elev, elev);
    max_elev = std::max(max_elev, elev);
    CHECK(elev >= kDefaultElevLo - 1e-12);
    CHECK(elev <= kDefaultElevHi + 1e-12);

    // Optical axis (+z camera) points at the center; +x camera is horizontal.
    Mat3 r = wfc.linear();
    Vec3 forward = (center - pos).normalized();
    CHECK((r.col(2) - forward).norm() < 1e-12);
    CHECK(std::abs(r.col(0).dot(Vec3::UnitZ())) < 1e-12);
    CHECK((r * r.transpose() - Mat3::Identity()).norm() < 1e-12);
    CHECK(r.determinant() == doctest::Approx(1.0).epsilon(1e-12));

    // Intrinsics are copied from the default camera.
    CHECK(cam.fx == default_camera().fx);
    CHECK(cam.width == 640);
  }
  // The sin-elevation strata cover the whole band.
  CHECK(min_elev < kDefaultElevLo + 2.0 * kDeg);
  CHECK(max_elev > kDefaultElevHi - 2.0 * kDeg);

  // Azimuths spread around the full circle: every 30-degree bin is hit.
  std::set<int> bins;
  for (const auto& cam : cams) {
    Vec3 d = cam.world_from_camera().translation() - center;
    double az = std::atan2(d.y(), d.x());
    bins.insert((int)std::floor((az + std::numbers::pi) / (30.0 * kDeg)));
  }
  CHECK(bins.size() == 12);

  // Deterministic: a second call reproduces identical poses.
  auto again = sample_viewpoints(256, radius, kDefaultElevLo, kDefaultElevHi, center);
  for (size_t i = 0; i < cams.size(); ++i) {
    CHECK((cams[i].camera_from_world.matrix() - again[i].camera_from_world.matrix())
              .norm() == 0.0);
  }
}

TEST_CASE("viewpoint sampling validates its arguments") {
  CHECK_THROWS_AS(sample_viewpoints(0), std::invalid_argument);
  CHECK_THROWS_AS(sample_viewpoints(8, -1.0), std::invalid_argument);
  CHECK_THROWS_AS(sample_viewpoints(8, 1.0, 0.5, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(sample_viewpoints(8, 1.0, -0.1, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(sample_viewpoints(8, 1.0, 0.1, 2.0), std::invalid_argument);
}

TEST_CASE("camera files round trip and reject corrupt input") {
  auto dir = temp_dir("camera_io");
  CameraModel cam = sample_viewpoints(16, 0.9)[5];
  save_camera(cam, dir / "cam.txt");
  CameraModel back = load_camera(dir / "cam.txt");
  CHECK(back.fx == doctest::Approx(cam.fx).epsilon(1e-15));
  CHECK(back.fy == doctest::Approx(cam.fy).epsilon(1e-15));
  CHECK(back.cx == doctest::Approx(cam.cx).epsilon(1e-15));
  CHECK(back.cy == doctest::Approx(cam.cy).epsilon(1e-15));
  CHECK(back.width == cam.width);
  CHECK(back.height == cam.height);
  CHECK(back.viewpoint_index == 5);
  CHECK((back.camera_from_world.matrix() - cam.camera_from_world.matrix()).norm() <
        1e-14);

  CHECK_THROWS_WITH_AS(load_camera(dir / "missing.txt"), doctest::Contains("cannot open"),
                       std::runtime_error);

  write_text_file((dir / "short.txt").string(), "500 500 320 240 640 480\n");
  CHECK_THROWS_WITH_AS(load_camera(dir / "short.txt"), doctest::Contains("truncated"),
                       std::runtime_error);

  std::string bad = "500 500 320 240 640 480\n";
  bad += "1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 2 1\n";  // last row not (0 0 0 1)
  bad += "3\n";
  write_text_file((dir / "bad.txt").string(), bad);
  CHECK_THROWS_WITH_AS(load_camera(dir / "bad.txt"), doctest::Contains("not rigid"),
                       std::runtime_error);
}

// ---------------------------------------------------------------------------
// Depth rendering

TEST_CASE("rendering a single resting box gives exact center depth, ids, and points") {
  ObjectLibrary lib = box_library();
  SceneSpec scene = single_box_scene();
  SceneGeometry geom(scene, lib);
  CameraModel cam = down_camera(0.5);

  RenderedView view = render_depth(scene, geom, cam);
  REQUIRE(view.width == 101);
  REQUIRE(view.height == 101);
  REQUIRE(view.depth.size() == 101 * 101);

  auto px = [&](int u, int v) { return (size_t)v * 101 + u; };

  // Center ray is straight down: hits the box top (z = 0.05) from h = 0.5.
  CHECK(view.ids[px(50, 50)] == 0);
  CHECK(view.depth[px(50, 50)] == doctest::Approx(0.45).epsilon(1e-6));

  // Pixel (60, 50): lateral offset 0.1 -> x = 0.045 at the top plane, still
  // on the box (half extent 0.05).
  CHECK(view.ids[px(60, 50)] == 0);
  CHECK(view.depth[px(60, 50)] == doctest::Approx(0.45).epsilon(1e-6));

  // Pixel (80, 50): offset 0.3 -> hits the support plane at (0.15, 0, 0),
  // inside the 0.4 m workspace; camera-z depth equals the camera height.
  CHECK(view.ids[px(80, 50)] == kIdPlane);
  CHECK(view.depth[px(80, 50)] == doctest::Approx(0.5).epsilon(1e-6));

  // Corner pixel (0, 0): plane intersection at (-0.25, 0.25) lies outside the
  // finite workspace rectangle -> background.
  CHECK(view.ids[px(0, 0)] == kIdBackground);
  CHECK(view.depth[px(0, 0)] == 0.0f);

  // Every id appears, and the plane can be disabled.
  std::set<int32_t> seen(view.ids.begin(), view.ids.end());
  CHECK(seen.count(0) == 1);
  CHECK(seen.count(kIdPlane) == 1);
  CHECK(seen.count(kIdBackground) == 1);

  RenderParams no_plane;
  no_plane.include_plane = false;
  RenderedView bare = render_depth(scene, geom, cam, no_plane);
  CHECK(bare.ids[px(80, 50)] == kIdBackground);
  CHECK(bare.depth[px(80, 50)] == 0.0f);
  CHECK(bare.ids[px(50, 50)] == 0);

  // Points: one per non-background pixel, row-major, ids matching.
  size_t hits = 0;
  for (int32_t id : view.ids)
    if (id != kIdBackground) ++hits;
  REQUIRE(view.points.size() == hits);
  REQUIRE(view.point_ids.size() == hits);
  REQUIRE(view.point_pixels.size() == hits);
  for (size_t i = 1; i < view.point_pixels.size(); ++i)
    CHECK(view.point_pixels[i] > view.point_pixels[i - 1]);
  for (size_t i = 0; i < view.points.size(); ++i) {
    CHECK(view.point_ids[i] == view.ids[view.point_pixels[i]]);
    CHECK(view.points[i].z() == doctest::Approx(view.depth[view.point_pixels[i]])
                                    .epsilon(1e-9));
  }

  // Reprojection: each camera-frame point lands back on its pixel center.
  for (size_t i = 0; i < view.points.size(); ++i) {
    const Vec3& p = view.points[i];
    int u = view.point_pixels[i] % 101, v = view.point_pixels[i] / 101;
    double up = cam.fx * p.x() / p.z() + cam.cx - 0.5;
    double vp = cam.fy * p.y() / p.z() + cam.cy - 0.5;
    CHECK(std::abs(up - u) < 1e-6);
    CHECK(std::abs(vp - v) < 1e-6);
  }

  // Multi-threaded render is pixel-identical.
  RenderParams par;
  par.jobs = 4;
  RenderedView threaded = render_depth(scene, geom, cam, par);
  CHECK(threaded.depth == view.depth);
  CHECK(threaded.ids == view.ids);

  // Geometry/instance count mismatch is rejected.
  SceneSpec extra = scene;
  extra.instances.push_back(box_instance(1, Vec3(0.1, 0, 0.025)));
  CHECK_THROWS_AS(render_depth(extra, geom, cam), std::invalid_argument);
}

TEST_CASE("depth noise is seed-deterministic and spares the background") {
  ObjectLibrary lib = box_library();
  SceneSpec scene = single_box_scene();
  SceneGeometry geom(scene, lib);
  CameraModel cam = down_camera(0.5);

  RenderedView clean = render_depth(scene, geom, cam);

  RenderParams noisy;
  noisy.noise_sigma = 0.004;
  noisy.noise_seed = 77;
  RenderedView a = render_depth(scene, geom, cam, noisy);
  RenderedView b = render_depth(scene, geom, cam, noisy);
  CHECK(a.depth == b.depth);  // bitwise reproducible

  noisy.noise_seed = 78;
  RenderedView c = render_depth(scene, geom, cam, noisy);
  CHECK(a.depth != c.depth);

  size_t perturbed = 0;
  for (size_t i = 0; i < a.depth.size(); ++i) {
    if (a.ids[i] == kIdBackground) {
      CHECK(a.depth[i] == 0.0f);
    } else {
      CHECK(a.depth[i] >= 1e-6f);
      if (a.depth[i] != clean.depth[i]) ++perturbed;
    }
  }
  CHECK(perturbed > 0);

  // sigma * d^2 scaling: observed deviations stay within 6 sigma of the model.
  for (size_t i = 0; i < a.depth.size(); ++i) {
    if (a.ids[i] == kIdBackground) continue;
    double d = clean.depth[i];
    CHECK(std::abs(a.depth[i] - d) < 6.0 * noisy.noise_sigma * d * d + 1e-6);
  }
}

TEST_CASE("occlusion rates: hidden, unobstructed, and out-of-frustum instances") {
  ObjectLibrary lib = box_library();
  CameraModel cam = down_camera(0.5);

  SceneSpec scene;
  scene.id = "occlusion-test";
  scene.workspace_x = scene.workspace_y = 0.4;
  // Instance 0 rests at the origin; instance 1 floats directly above it and,
  // being closer to the camera, projects strictly larger -> 0 is fully hidden.
  // Instance 2 sits far outside the camera frustum.
  scene.instances.push_back(box_instance(0, Vec3(0, 0, 0.025)));
  scene.instances.push_back(box_instance(1, Vec3(0, 0, 0.25)));
  scene.instances.push_back(box_instance(2, Vec3(10.0, 0, 0.025)));
  SceneGeometry geom(scene, lib);

  RenderedView view = render_depth(scene, geom, cam);
  std::vector<char> oof;
  std::vector<double> rates = occlusion_rates(scene, geom, cam, view, &oof);
  REQUIRE(rates.size() == 3);
  REQUIRE(oof.size() == 3);

  CHECK(rates[0] == doctest::Approx(1.0));  // fully occluded but in frame
  CHECK(oof[0] == 0);
  CHECK(rates[1] == doctest::Approx(0.0));  // nothing between it and the camera
  CHECK(oof[1] == 0);
  CHECK(rates[2] == doctest::Approx(1.0));  // never projects into the image
  CHECK(oof[2] == 1);

  // A lone visible instance is unoccluded, and rates are thread-invariant.
  SceneSpec solo = single_box_scene();
  SceneGeometry solo_geom(solo, lib);
  RenderedView solo_view = render_depth(solo, solo_geom, cam);
  std::vector<double> solo_rates = occlusion_rates(solo, solo_geom, cam, solo_view);
  REQUIRE(solo_rates.size() == 1);
  CHECK(solo_rates[0] == doctest::Approx(0.0));
  std::vector<double> threaded = occlusion_rates(scene, geom, cam, view, nullptr, 4);
  CHECK(threaded == rates);

  CameraModel small = cam;
  small.width = 50;
  CHECK_THROWS_AS(occlusion_rates(scene, geom, small, view), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Downsampling

TEST_CASE("downsampling returns exactly n distinct sorted indices, deterministically") {
  Rng rng(123);
  std::vector<Vec3> cloud;
  for (int i = 0; i < 500; ++i)
    cloud.emplace_back(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3),
                       rng.uniform(0.0, 0.2));

  std::vector<int> idx = downsample_cloud(cloud, 120, 9);
  REQUIRE(idx.size() == 120);
  std::set<int> uniq(idx.begin(), idx.end());
  CHECK(uniq.size() == 120);
  for (size_t i = 0; i < idx.size(); ++i) {
    CHECK(idx[i] >= 0);
    CHECK(idx[i] < 500);
    if (i > 0) CHECK(idx[i] > idx[i - 1]);  // sorted ascending
  }

  CHECK(downsample_cloud(cloud, 120, 9) == idx);          // same seed -> same pick
  CHECK(downsample_cloud(cloud, 120, 10) != idx);         // different seed differs
  CHECK(downsample_cloud(cloud, 500, 3).size() == 500);   // n == size keeps all
  std::vector<int> all = downsample_cloud(cloud, 900, 3);  // n > size keeps all
  REQUIRE(all.size() == 500);
  for (int i = 0; i < 500; ++i) CHECK(all[i] == i);

  CHECK_THROWS_AS(downsample_cloud({}, 10, 0), std::invalid_argument);
  CHECK_THROWS_AS(downsample_cloud(cloud, 0, 0), std::invalid_argument);
}

TEST_CASE("downsampling spreads picks across space (voxel stratification)") {
  // Two separated clumps with very different densities: stratification keeps
  // a healthy share of picks in the sparse clump.
  Rng rng(5);
  std::vector<Vec3> cloud;
  for (int i = 0; i < 1800; ++i)  // dense clump near the origin
    cloud.emplace_back(rng.uniform(0.0, 0.05), rng.uniform(0.0, 0.05),
                       rng.uniform(0.0, 0.05));
  for (int i = 0; i < 200; ++i)  // sparse clump offset in +x
    cloud.emplace_back(rng.uniform(0.3, 0.35), rng.uniform(0.0, 0.05),
                       rng.uniform(0.0, 0.05));

  std::vector<int> idx = downsample_cloud(cloud, 200, 1);
  int sparse = 0;
  for (int i : idx)
    if (i >= 1800) ++sparse;
  // Uniform sampling would keep ~20 of 200; stratification keeps far more.
  CHECK(sparse > 40);
}

// ---------------------------------------------------------------------------
// Label assignment

namespace {

// A line cloud in camera frame: 100 points along x with spacing 1/64 m (an
// exact float, so nearest-neighbor ties resolve by index, not rounding); the
// first 60 points belong to instance 0, the rest to instance 1.
constexpr float kSpacing = 0.015625f;

LabeledCloudSample line_sample() {
  LabeledCloudSample sample;
  for (int i = 0; i < 100; ++i) {
    sample.points.emplace_back(kSpacing * i, 0.0f, 0.5f);
    sample.instance_ids.push_back(i < 60 ? 0 : 1);
  }
  return sample;
}

GraspRecord grasp_at(const Vec3& t_world) {
  GraspRecord g;
  g.T = t_world;
  g.R = rot_z(0.4) * rot_x(-0.2);
  for (int i = 0; i < 20; ++i) {
    g.j_init[i] = 0.01 * i;
    g.j_end[i] = 0.02 * i;
  }
  g.finger_mask = {true, false, true, true, false};
  return g;
}

}  // namespace

TEST_CASE("label assignment: references, offsets, candidates, and drop causes") {
  LabeledCloudSample sample = line_sample();
  CameraModel cam = default_camera();  // identity extrinsic: camera == world

  const Vec3 delta(0.001, 0.002, -0.001);
  const auto at = [](int i) { return Vec3(kSpacing * i, 0, 0.5); };
  SceneSpec scene;
  scene.grasps.resize(2);
  scene.grasps[0].push_back(grasp_at(at(10) + delta));  // -> point 10
  scene.grasps[0].push_back(grasp_at(at(10) - delta));  // same reference point
  scene.grasps[0].push_back(grasp_at(Vec3(5, 5, 5)));   // far from every point
  scene.grasps[0].push_back(grasp_at(at(70) + delta));  // lands on instance 1
  scene.grasps[1].push_back(grasp_at(at(80) + delta));  // -> point 80

  LabelParams params;
  params.k_candidates = 3;
  std::vector<DropRecord> dropped;
  assign_labels(sample, scene, cam, params, &dropped);

  // Two grasps dropped, with the documented causes.
  REQUIRE(dropped.size() == 2);
  CHECK(dropped[0].instance == 0);
  CHECK(dropped[0].grasp_index == 2);
  CHECK(dropped[0].cause == "offset too large");
  CHECK(dropped[1].instance == 0);
  CHECK(dropped[1].grasp_index == 3);
  CHECK(dropped[1].cause == "reference on different instance");

  // Three accepted rows; the two instance-0 grasps share reference point 10.
  REQUIRE(sample.table.size() == 3);
  CHECK(sample.table[0].ref_index == 10);
  CHECK(sample.table[1].ref_index == 10);
  CHECK(sample.table[2].ref_index == 80);
  CHECK(sample.table[0].instance == 0);
  CHECK(sample.table[0].grasp_index == 0);
  CHECK(sample.table[1].grasp_index == 1);
  CHECK(sample.table[2].instance == 1);
  CHECK(sample.table[2].grasp_index == 0);

  CHECK(sample.labels[10] == kLabelReference);
  CHECK(sample.labels[80] == kLabelReference);

  // sigma reconstructs the TCP exactly: point[ref] + sigma == tcp (camera frame).
  for (const auto& row : sample.table) {
    const GraspRecord& g = scene.grasps[row.instance][row.grasp_index];
    Vec3 tcp_cam = cam.camera_from_world * g.T;
    Vec3 rebuilt = sample.points[row.ref_index].cast<double>() + row.sigma;
    CHECK((rebuilt - tcp_cam).norm() < 1e-12);
    CHECK(row.sigma.norm() < params.sigma_max);
    // Rotation is re-expressed in the camera frame via the 6D encoding.
    CHECK((rot6d_decode(row.rot6d) - cam.camera_from_world.linear() * g.R).norm() <
          1e-12);
    CHECK(row.j_init == g.j_init);
    CHECK(row.j_end == g.j_end);
    CHECK(row.finger_mask == g.finger_mask);
  }

  // The stored offset belongs to the FIRST grasp that claimed the point.
  CHECK((sample.offsets[10].cast<double>() - sample.table[0].sigma).norm() < 1e-7);

  // Candidates: the 3 nearest neighbors of each distinct reference, never
  // overwriting a reference label; everything else stays non-graspable.
  std::set<int> candidates;
  for (int i = 0; i < 100; ++i)
    if (sample.labels[i] == kLabelCandidate) candidates.insert(i);
  CHECK(candidates == std::set<int>({8, 9, 11, 78, 79, 81}));
  for (int i = 0; i < 100; ++i) {
    CHECK(sample.labels[i] <= kLabelReference);  // only 0, 1, 2 ever appear
    if (sample.labels[i] != kLabelReference)
      CHECK(sample.offsets[i].norm() == 0.0f);  // offsets only at references
  }

  CHECK_THROWS_AS(assign_labels(sample, scene, cam, {-1, 0.03}, nullptr),
                  std::invalid_argument);
  CHECK_THROWS_AS(assign_labels(sample, scene, cam, {5, 0.0}, nullptr),
                  std::invalid_argument);
}

TEST_CASE("label assignment applies the camera extrinsic to world-frame grasps") {
  LabeledCloudSample sample = line_sample();
  CameraModel cam = default_camera();
  cam.camera_from_world = make_pose(Vec3(0.1, -0.2, 0.05), rot_z(0.3) * rot_y(0.1));

  // Choose the world TCP so its camera-frame image lands next to point 20.
  Vec3 target_cam = Vec3(kSpacing * 20, 0, 0.5) + Vec3(0.002, -0.001, 0.001);
  SceneSpec scene;
  scene.grasps.resize(1);
  scene.grasps[0].push_back(grasp_at(cam.camera_from_world.inverse() * target_cam));

  assign_labels(sample, scene, cam);
  REQUIRE(sample.table.size() == 1);
  CHECK(sample.table[0].ref_index == 20);
  Vec3 rebuilt = sample.points[20].cast<double>() + sample.table[0].sigma;
  CHECK((rebuilt - target_cam).norm() < 1e-12);
  CHECK((rot6d_decode(sample.table[0].rot6d) -
         cam.camera_from_world.linear() * scene.grasps[0][0].R).norm() < 1e-12);
}

// ---------------------------------------------------------------------------
// Samples: make, write, read

TEST_CASE("samples round trip through the on-disk format") {
  ObjectLibrary lib = box_library();
  SceneSpec scene = single_box_scene();
  SceneGeometry geom(scene, lib);
  CameraModel cam = down_camera(0.5);
  RenderedView view = render_depth(scene, geom, cam);

  // One grasp whose TCP hovers just above the box top, inside sigma_max of
  // the rendered surface points.
  scene.grasps.resize(1);
  scene.grasps[0].push_back(grasp_at(Vec3(0.01, -0.005, 0.055)));

  std::vector<DropRecord> dropped;
  LabeledCloudSample sample = make_sample(view, cam, scene, 300, 11, {}, &dropped);
  CHECK(dropped.empty());
  REQUIRE(sample.size() == 300);
  REQUIRE(sample.table.size() == 1);
  CHECK(sample.requested_points == 300);

  int refs = 0, cands = 0;
  for (uint8_t l : sample.labels) {
    if (l == kLabelReference) ++refs;
    if (l == kLabelCandidate) ++cands;
  }
  CHECK(refs == 1);
  CHECK(cands == 20);  // default k_candidates around a single reference
  CHECK(sample.instance_ids[sample.table[0].ref_index] == 0);

  // Same seed reproduces the sample; a different seed picks other points.
  LabeledCloudSample again = make_sample(view, cam, scene, 300, 11);
  CHECK(again == sample);
  LabeledCloudSample other = make_sample(view, cam, scene, 300, 12);
  CHECK(!(other == sample));

  sample.occlusion = {0.125};
  sample.out_of_frustum = {0};

  auto dir = temp_dir("sample_io");
  write_sample(sample, dir / "s0", &view);
  for (const char* name :
       {"cloud.ply", "grasps.json", "camera.txt", "depth16.png", "depth.f32", "ids.png"})
    CHECK(std::filesystem::exists(dir / "s0" / name));

  LabeledCloudSample back = read_sample(dir / "s0");
  CHECK(back == sample);
  CHECK(back.occlusion == std::vector<double>{0.125});
  CHECK(back.out_of_frustum == std::vector<uint8_t>{0});
  CHECK(back.camera.viewpoint_index == cam.viewpoint_index);

  // Without a rendered view only the cloud + metadata files appear.
  write_sample(sample, dir / "s1");
  CHECK(std::filesystem::exists(dir / "s1" / "cloud.ply"));
  CHECK(!std::filesystem::exists(dir / "s1" / "depth16.png"));
  CHECK(!std::filesystem::exists(dir / "s1" / "ids.png"));
  CHECK(read_sample(dir / "s1") == sample);

  // The image sidecars reproduce the rendered view's depth and id layers.
  int w = 0, h = 0;
  std::vector<float> depth = read_float_image((dir / "s0" / "depth.f32").string(), w, h);
  REQUIRE(w == view.width);
  REQUIRE(h == view.height);
  CHECK(depth == view.depth);

  std::vector<uint16_t> d16 = read_png16((dir / "s0" / "depth16.png").string(), w, h);
  REQUIRE((int)d16.size() == w * h);
  for (size_t i = 0; i < d16.size(); ++i)
    CHECK(d16[i] == (uint16_t)std::min(65535.0, std::round(view.depth[i] / 1e-4)));

  std::vector<uint8_t> mask = read_png8((dir / "s0" / "ids.png").string(), w, h);
  for (size_t i = 0; i < mask.size(); ++i) {
    int32_t id = view.ids[i];
    uint8_t expected = id == kIdBackground ? kMaskBackground
                       : id == kIdPlane    ? kMaskPlane
                                           : (uint8_t)id;
    CHECK(mask[i] == expected);
  }

  // A schema version bump in grasps.json must be rejected on read.
  nlohmann::json j = load_json((dir / "s0" / "grasps.json").string());
  j["schema_version"] = 99;
  save_json((dir / "s0" / "grasps.json").string(), j);
  CHECK_THROWS_WITH_AS(read_sample(dir / "s0"),
                       doctest::Contains("schema version mismatch"), std::runtime_error);
}

TEST_CASE("a view with no hits yields an empty sample and no spurious drops") {
  ObjectLibrary lib = box_library();
  SceneSpec scene = single_box_scene();
  SceneGeometry geom(scene, lib);
  CameraModel cam = down_camera(0.5);
  cam.camera_from_world = make_pose(Vec3(0, 0, 5.0), Mat3::Identity()).inverse();
  // Looking along +z from z = 5 upward: nothing in view.
  RenderParams params;
  params.include_plane = false;
  RenderedView view = render_depth(scene, geom, cam, params);
  CHECK(view.points.empty());

  scene.grasps.resize(1);
  scene.grasps[0].push_back(grasp_at(Vec3(0, 0, 0.05)));
  std::vector<DropRecord> dropped;
  LabeledCloudSample sample = make_sample(view, cam, scene, 100, 0, {}, &dropped);
  CHECK(sample.size() == 0);
  CHECK(sample.table.empty());
  CHECK(dropped.empty());
  CHECK(sample.requested_points == 100);
}
