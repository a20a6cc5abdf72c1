// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "dexforge/grasp_math.hpp"
#include "dexforge/render.hpp"

namespace dexforge {

inline constexpr uint8_t kLabelNonGraspable = 0;
inline constexpr uint8_t kLabelCandidate = 1;
inline constexpr uint8_t kLabelReference = 2;

// Mask PNG encoding of per-pixel instance ids.
inline constexpr uint8_t kMaskBackground = 255;
inline constexpr uint8_t kMaskPlane = 254;

struct GraspTableRow {
  int32_t ref_index = -1;            // index into the sample cloud, label 2
  Vec3 sigma = Vec3::Zero();         // camera frame: TCP = point[ref] + sigma
  Vec6 rot6d = Vec6::Zero();         // camera-frame rotation, 6D encoding
  JointVec j_init = JointVec::Zero();
  JointVec j_end = JointVec::Zero();
  std::array<bool, 5> finger_mask{true, true, true, true, true};
  int32_t instance = -1;             // target scene instance
  int32_t grasp_index = -1;          // index within that instance's grasp list

  bool operator==(const GraspTableRow& o) const;
};

struct LabeledCloudSample {
  std::vector<Eigen::Vector3f> points;   // camera frame
  std::vector<uint8_t> labels;           // 0 | 1 | 2, mutually exclusive
  std::vector<int32_t> instance_ids;     // scene instance index or kIdPlane
  std::vector<Eigen::Vector3f> offsets;  // sigma at label-2 points, else zero
  std::vector<GraspTableRow> table;
  CameraModel camera;
  std::vector<double> occlusion;         // per scene instance
  std::vector<uint8_t> out_of_frustum;   // per scene instance
  int requested_points = 0;              // downsampling target n

  size_t size() const { return points.size(); }
  bool operator==(const LabeledCloudSample& o) const;
};

// Voxel-stratified random selection of exactly min(n, cloud size) distinct
// indices, deterministic per seed. Throws on an empty cloud or n < 1.
std::vector<int> downsample_cloud(const std::vector<Vec3>& points, int n,
                                  uint64_t seed);

struct LabelParams {
  int k_candidates = 20;
  double sigma_max = 0.03;  // drop rows with |sigma| above this (m)
};

struct DropRecord {
  int instance = -1;
  int grasp_index = -1;
  std::string cause;  // offset too large | reference on different instance
};

// Fills labels/offsets/table of a sample whose points and instance_ids are
// already set: each world grasp of scene.grasps maps its camera-frame TCP to
// the nearest cloud point (label 2, takes precedence); that point's
// k_candidates nearest neighbors get label 1 unless already 2.
void assign_labels(LabeledCloudSample& sample, const SceneSpec& scene,
                   const CameraModel& cam, const LabelParams& params = {},
                   std::vector<DropRecord>* dropped = nullptr);

// Downsample + label in one step from a rendered view.
LabeledCloudSample make_sample(const RenderedView& view, const CameraModel& cam,
                               const SceneSpec& scene, int n_points, uint64_t seed,
                               const LabelParams& params = {},
                               std::vector<DropRecord>* dropped = nullptr);

// One directory per sample: cloud.ply (points, labels, instance ids, offsets),
// grasps.json (table + camera + occlusion), camera.txt. When a rendered view
// is given, also depth16.png (0.1 mm units), depth.f32, and ids.png.
void write_sample(const LabeledCloudSample& sample, const std::filesystem::path& dir,
                  const RenderedView* view = nullptr);
LabeledCloudSample read_sample(const std::filesystem::path& dir);

}  // namespace dexforge
