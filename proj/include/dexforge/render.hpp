// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <vector>

#include "dexforge/scene.hpp"

namespace dexforge {

// Pinhole camera, OpenCV convention: +z forward, +x right, +y down; pixel
// (u, v) center projects at (fx x/z + cx - 0.5, fy y/z + cy - 0.5).
struct CameraModel {
  double fx = 0.0, fy = 0.0, cx = 0.0, cy = 0.0;
  int width = 0, height = 0;
  Iso3 camera_from_world = Iso3::Identity();  // extrinsic: p_cam = E p_world
  int viewpoint_index = -1;

  Iso3 world_from_camera() const { return camera_from_world.inverse(); }
  void validate() const;  // throws on invariant violations
};

// 640 x 480 with a 60 degree horizontal field of view.
CameraModel default_camera();

inline constexpr double kDefaultElevLo = 22.5 * M_PI / 180.0;
inline constexpr double kDefaultElevHi = 67.5 * M_PI / 180.0;

// Deterministic golden-ratio lattice over (azimuth, sin-elevation) on a
// hemisphere band; every camera looks at `center` with world +z up (+x
// fallback when viewing straight down). Intrinsics copied from `intrinsics`.
std::vector<CameraModel> sample_viewpoints(int n = 256, double radius = 1.0,
                                           double elev_lo = kDefaultElevLo,
                                           double elev_hi = kDefaultElevHi,
                                           const Vec3& center = Vec3::Zero(),
                                           const CameraModel& intrinsics = default_camera());

inline constexpr int kIdBackground = -1;
inline constexpr int kIdPlane = -2;

struct RenderedView {
  int width = 0, height = 0;
  std::vector<float> depth;      // row-major, meters along camera z, 0 = miss
  std::vector<int32_t> ids;      // instance index, kIdPlane, or kIdBackground
  std::vector<Vec3> points;      // camera frame, one per hit pixel (row-major)
  std::vector<int32_t> point_ids;
  std::vector<int32_t> point_pixels;  // flat pixel index of each point
};

struct RenderParams {
  bool include_plane = true;   // finite workspace rectangle at z = 0
  int jobs = 1;
  double noise_sigma = 0.0;    // additive depth noise: sigma * depth^2 (m)
  uint64_t noise_seed = 0;
};

// One primary ray per pixel against all instances (+ optionally the support
// plane); nearest hit wins, ids tie-break by (instance, triangle).
RenderedView render_depth(const SceneSpec& scene, const SceneGeometry& geom,
                          const CameraModel& cam, const RenderParams& params = {});

// rate_i = 1 - visible_i / solo_i where solo_i renders instance i alone with
// the same camera; an instance with no solo pixels gets rate 1.0 and is
// flagged out of frustum.
std::vector<double> occlusion_rates(const SceneSpec& scene, const SceneGeometry& geom,
                                    const CameraModel& cam, const RenderedView& view,
                                    std::vector<char>* out_of_frustum = nullptr,
                                    int jobs = 1);

// Text camera file: intrinsics line + world->camera extrinsic as a 4x4
// row-major matrix.
void save_camera(const CameraModel& cam, const std::filesystem::path& path);
CameraModel load_camera(const std::filesystem::path& path);

}  // namespace dexforge
