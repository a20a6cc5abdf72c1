// SPDX-License-Identifier: Apache-2.0
#include "dexforge/render.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "dexforge/io.hpp"
#include "dexforge/rng.hpp"

namespace dexforge {

void CameraModel::validate() const {
  if (fx <= 0 || fy <= 0) throw std::invalid_argument("CameraModel: fx, fy must be > 0");
  if (width <= 0 || height <= 0)
    throw std::invalid_argument("CameraModel: width, height must be > 0");
  if (cx < 0 || cx >= width || cy < 0 || cy >= height)
    throw std::invalid_argument("CameraModel: principal point outside the image");
}

CameraModel default_camera() {
  CameraModel cam;
  cam.width = 640;
  cam.height = 480;
  cam.fx = (cam.width / 2.0) / std::tan(30.0 * std::numbers::pi / 180.0);
  cam.fy = cam.fx;
  cam.cx = cam.width / 2.0;
  cam.cy = cam.height / 2.0;
  return cam;
}

std::vector<CameraModel> sample_viewpoints(int n, double radius, double elev_lo,
                                           double elev_hi, const Vec3& center,
                                           const CameraModel& intrinsics) {
  if (n < 1) throw std::invalid_argument("sample_viewpoints: n must be >= 1");
  if (radius <= 0) throw std::invalid_argument("sample_viewpoints: radius must be > 0");
  if (!(elev_lo < elev_hi) || elev_lo < 0 || elev_hi > M_PI / 2)
    throw std::invalid_argument("sample_viewpoints: invalid elevation band");

  const double golden = (std::sqrt(5.0) - 1.0) / 2.0;
  const double s_lo = std::sin(elev_lo), s_hi = std::sin(elev_hi);
  std::vector<CameraModel> cams;
  cams.reserve(n);
  for (int i = 0; i < n; ++i) {
    double az = 2.0 * std::numbers::pi * std::fmod(i * golden, 1.0);
    double s = s_lo + (i + 0.5) / n * (s_hi - s_lo);
    double elev = std::asin(s);
    Vec3 pos = center + radius * Vec3(std::cos(elev) * std::cos(az),
                                      std::cos(elev) * std::sin(az), std::sin(elev));
    Vec3 forward = (center - pos).normalized();
    Vec3 up = Vec3::UnitZ();
    if (forward.cross(up).norm() < 1e-9) up = Vec3::UnitX();
    Vec3 x_cam = forward.cross(up).normalized();
    Vec3 y_cam = forward.cross(x_cam);
    Mat3 r_wc;  // camera axes expressed in world coordinates
    r_wc.col(0) = x_cam;
    r_wc.col(1) = y_cam;
    r_wc.col(2) = forward;
    CameraModel cam = intrinsics;
    cam.camera_from_world = make_pose(pos, r_wc).inverse();
    cam.viewpoint_index = i;
    cams.push_back(cam);
  }
  return cams;
}

namespace {

struct PlaneRect {
  bool enabled = false;
  double half_x = 0.0, half_y = 0.0;
};

// Renders a pixel rectangle; `only_instance` < 0 means all instances.
void render_rect(const std::vector<BvhInstance>& instances, const PlaneRect& plane,
                 const CameraModel& cam, int u0, int v0, int u1, int v1,
                 int only_instance, float* depth, int32_t* ids, int jobs) {
  const Iso3 wfc = cam.world_from_camera();
  const Vec3 origin = wfc.translation();
  const Mat3 r_wc = wfc.linear();

  auto render_row = [&](int v) {
    for (int u = u0; u < u1; ++u) {
      Vec3 dir_cam((u + 0.5 - cam.cx) / cam.fx, (v + 0.5 - cam.cy) / cam.fy, 1.0);
      Ray ray{origin, r_wc * dir_cam};  // t is depth along camera z directly
      std::optional<RayHit> best;
      if (only_instance < 0) {
        best = raycast_scene(instances, ray);
      } else {
        best = instances[only_instance].bvh->raycast(
            {instances[only_instance].inverse * ray.origin,
             instances[only_instance].inverse.linear() * ray.dir});
        if (best) best->object_id = only_instance;
      }
      int32_t id = kIdBackground;
      double t = std::numeric_limits<double>::infinity();
      if (best) {
        id = best->object_id;
        t = best->t;
      }
      if (plane.enabled && std::abs(ray.dir.z()) > 1e-15) {
        double tp = -ray.origin.z() / ray.dir.z();
        if (tp > 1e-12 && tp < t) {
          Vec3 hit = ray.origin + tp * ray.dir;
          if (std::abs(hit.x()) <= plane.half_x && std::abs(hit.y()) <= plane.half_y) {
            id = kIdPlane;
            t = tp;
          }
        }
      }
      size_t px = (size_t)v * cam.width + u;
      depth[px] = std::isfinite(t) ? (float)t : 0.0f;
      ids[px] = id;
    }
  };

  if (jobs <= 1 || v1 - v0 <= 1) {
    for (int v = v0; v < v1; ++v) render_row(v);
  } else {
    std::atomic<int> next{v0};
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t)
      pool.emplace_back([&] {
        for (int v = next.fetch_add(1); v < v1; v = next.fetch_add(1)) render_row(v);
      });
    for (auto& th : pool) th.join();
  }
}

std::vector<BvhInstance> scene_instances(const SceneSpec& scene,
                                         const SceneGeometry& geom) {
  std::vector<BvhInstance> instances;
  instances.reserve(scene.instances.size());
  for (size_t i = 0; i < scene.instances.size(); ++i)
    instances.emplace_back(&geom.bvh((int)i), scene.instances[i].pose, (int)i);
  return instances;
}

}  // namespace

RenderedView render_depth(const SceneSpec& scene, const SceneGeometry& geom,
                          const CameraModel& cam, const RenderParams& params) {
  cam.validate();
  if ((int)scene.instances.size() != geom.count())
    throw std::invalid_argument("render_depth: geometry/instance count mismatch");

  RenderedView view;
  view.width = cam.width;
  view.height = cam.height;
  view.depth.assign((size_t)cam.width * cam.height, 0.0f);
  view.ids.assign((size_t)cam.width * cam.height, kIdBackground);

  std::vector<BvhInstance> instances = scene_instances(scene, geom);
  PlaneRect plane{params.include_plane, 0.5 * scene.workspace_x,
                  0.5 * scene.workspace_y};
  render_rect(instances, plane, cam, 0, 0, cam.width, cam.height, -1,
              view.depth.data(), view.ids.data(), params.jobs);

  if (params.noise_sigma > 0.0) {
    Rng rng(params.noise_seed);
    for (size_t px = 0; px < view.depth.size(); ++px) {
      if (view.ids[px] == kIdBackground) continue;
      double d = view.depth[px];
      view.depth[px] = (float)std::max(1e-6, d + rng.normal() * params.noise_sigma * d * d);
    }
  }

  for (int v = 0; v < cam.height; ++v) {
    for (int u = 0; u < cam.width; ++u) {
      size_t px = (size_t)v * cam.width + u;
      if (view.ids[px] == kIdBackground) continue;
      double z = view.depth[px];
      view.points.emplace_back((u + 0.5 - cam.cx) / cam.fx * z,
                               (v + 0.5 - cam.cy) / cam.fy * z, z);
      view.point_ids.push_back(view.ids[px]);
      view.point_pixels.push_back((int32_t)px);
    }
  }
  return view;
}

std::vector<double> occlusion_rates(const SceneSpec& scene, const SceneGeometry& geom,
                                    const CameraModel& cam, const RenderedView& view,
                                    std::vector<char>* out_of_frustum, int jobs) {
  const int n = (int)scene.instances.size();
  if (view.width != cam.width || view.height != cam.height)
    throw std::invalid_argument("occlusion_rates: view/camera size mismatch");

  std::vector<int64_t> visible(n, 0);
  for (int32_t id : view.ids)
    if (id >= 0 && id < n) ++visible[id];

  std::vector<double> rates(n, 1.0);
  if (out_of_frustum) out_of_frustum->assign(n, 0);

  std::vector<BvhInstance> instances = scene_instances(scene, geom);
  std::vector<float> depth((size_t)cam.width * cam.height);
  std::vector<int32_t> ids((size_t)cam.width * cam.height);
  for (int i = 0; i < n; ++i) {
    // Clip the solo render to the instance's projected bounding rectangle.
    Aabb box;
    const Aabb& local = geom.mesh(i).bounds();
    for (int c = 0; c < 8; ++c)
      box.expand(cam.camera_from_world *
                 (scene.instances[i].pose *
                  Vec3((c & 1) ? local.hi.x() : local.lo.x(),
                       (c & 2) ? local.hi.y() : local.lo.y(),
                       (c & 4) ? local.hi.z() : local.lo.z())));
    int u0 = cam.width, v0 = cam.height, u1 = 0, v1 = 0;
    if (box.hi.z() > 1e-9) {
      for (int c = 0; c < 8; ++c) {
        Vec3 p((c & 1) ? box.hi.x() : box.lo.x(), (c & 2) ? box.hi.y() : box.lo.y(),
               (c & 4) ? box.hi.z() : box.lo.z());
        double z = std::max(p.z(), 1e-6);
        double u = cam.fx * p.x() / z + cam.cx, v = cam.fy * p.y() / z + cam.cy;
        u0 = std::min(u0, (int)std::floor(u) - 1);
        v0 = std::min(v0, (int)std::floor(v) - 1);
        u1 = std::max(u1, (int)std::ceil(u) + 1);
        v1 = std::max(v1, (int)std::ceil(v) + 1);
      }
      u0 = std::clamp(u0, 0, cam.width);
      v0 = std::clamp(v0, 0, cam.height);
      u1 = std::clamp(u1, 0, cam.width);
      v1 = std::clamp(v1, 0, cam.height);
    }
    int64_t solo = 0;
    if (u0 < u1 && v0 < v1) {
      std::fill(ids.begin(), ids.end(), kIdBackground);
      render_rect(instances, PlaneRect{}, cam, u0, v0, u1, v1, i, depth.data(),
                  ids.data(), jobs);
      for (int v = v0; v < v1; ++v)
        for (int u = u0; u < u1; ++u)
          if (ids[(size_t)v * cam.width + u] == i) ++solo;
    }
    if (solo == 0) {
      rates[i] = 1.0;
      if (out_of_frustum) (*out_of_frustum)[i] = 1;
    } else {
      rates[i] = std::clamp(1.0 - (double)visible[i] / (double)solo, 0.0, 1.0);
    }
  }
  return rates;
}

void save_camera(const CameraModel& cam, const std::filesystem::path& path) {
  std::ostringstream out;
  out.precision(17);
  out << "# pinhole camera: fx fy cx cy width height\n";
  out << cam.fx << " " << cam.fy << " " << cam.cx << " " << cam.cy << " "
      << cam.width << " " << cam.height << "\n";
  out << "# extrinsic world->camera, 4x4 row-major\n";
  Eigen::Matrix4d m = cam.camera_from_world.matrix();
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) out << m(r, c) << (c == 3 ? "\n" : " ");
  }
  out << "# viewpoint index\n" << cam.viewpoint_index << "\n";
  write_text_file(path, out.str());
}

CameraModel load_camera(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_camera: cannot open " + path.string());
  auto next_data_line = [&]() {
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line[0] != '#') return line;
    }
    throw std::runtime_error("load_camera: truncated file " + path.string());
  };
  CameraModel cam;
  {
    std::istringstream ls(next_data_line());
    if (!(ls >> cam.fx >> cam.fy >> cam.cx >> cam.cy >> cam.width >> cam.height))
      throw std::runtime_error("load_camera: bad intrinsics in " + path.string());
  }
  Eigen::Matrix4d m;
  for (int r = 0; r < 4; ++r) {
    std::istringstream ls(next_data_line());
    for (int c = 0; c < 4; ++c)
      if (!(ls >> m(r, c)))
        throw std::runtime_error("load_camera: bad extrinsic in " + path.string());
  }
  if ((m.row(3) - Eigen::RowVector4d(0, 0, 0, 1)).norm() > 1e-9)
    throw std::runtime_error("load_camera: extrinsic is not rigid in " + path.string());
  cam.camera_from_world.matrix() = m;
  try {
    std::istringstream ls(next_data_line());
    ls >> cam.viewpoint_index;
  } catch (const std::runtime_error&) {
    cam.viewpoint_index = -1;
  }
  cam.validate();
  return cam;
}

}  // namespace dexforge
