// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "dexforge/closure.hpp"
#include "dexforge/trimesh.hpp"

namespace dexforge {

// ---------------------------------------------------------------------------
// Object library

struct ObjectEntry {
  int object_id = -1;
  std::string name;
  std::shared_ptr<const TriMesh> mesh;  // canonical frame, scale 1
};

using ObjectLibrary = std::vector<ObjectEntry>;

// ---------------------------------------------------------------------------
// Convex hull + stable resting poses

// Watertight triangulated convex hull (outward winding) of a point set.
// Throws std::runtime_error on degenerate input (< 4 points or near-coplanar).
std::vector<std::array<int, 3>> convex_hull(const std::vector<Vec3>& points);

struct StablePose {
  Mat3 rotation = Mat3::Identity();  // puts one hull face flat on z = 0
  double height = 0.0;               // translation z so min vertex z == 0
  double weight = 0.0;               // hull face area (sampling weight)
};

// One entry per hull triangle; coplanar triangles of the same physical face
// produce duplicate orientations whose weights sum to the face area.
std::vector<StablePose> stable_poses(const TriMesh& mesh);

// ---------------------------------------------------------------------------
// Scene specification

struct SceneInstance {
  int instance_id = -1;  // index within the scene
  int object_id = -1;
  std::string name;
  double scale = 1.0;
  Iso3 pose = Iso3::Identity();  // world from canonical (scaled) frame
};

struct SceneSpec {
  std::string id;
  double workspace_x = 0.6;  // support plane extent, centered on the origin
  double workspace_y = 0.6;
  std::vector<SceneInstance> instances;
  // Per-instance world-frame grasps (filled by transfer/filter stages).
  std::vector<std::vector<GraspRecord>> grasps;
  std::vector<std::string> grasp_files;  // per-instance relative paths, if saved
  std::vector<std::string> warnings;
};

struct ComposeParams {
  int count = 5;                 // requested instances, 5..15
  double workspace_x = 0.6;
  double workspace_y = 0.6;
  std::vector<double> scales{0.8, 0.9, 1.0, 1.1, 1.2};
  double clearance = 2e-3;       // min inter-instance distance (m)
  int max_retries = 50;          // pose re-draws per instance
};

// Places `count` sampled (object, scale) pairs at area-weighted stable resting
// poses with uniform planar position and yaw, rejecting placements within
// `clearance` of existing instances. Deterministic per seed. Emits fewer
// instances (with a warning) when retries run out; throws if fewer than 5
// can be placed.
SceneSpec compose_scene(const ObjectLibrary& library, const ComposeParams& params,
                        uint64_t seed);

// ---------------------------------------------------------------------------
// Shared per-scene geometry (scaled meshes, BVHs, SDFs)

class ObjectGeometryCache;

class SceneGeometry {
 public:
  SceneGeometry(const SceneSpec& scene, const ObjectLibrary& library,
                double sdf_cell = 0.002, double sdf_margin = 0.02);

  const TriMesh& mesh(int instance) const { return *meshes_[instance]; }
  const Bvh& bvh(int instance) const { return *bvhs_[instance]; }
  const SdfGrid& sdf(int instance) const { return *sdfs_[instance]; }
  int count() const { return (int)meshes_.size(); }

 private:
  friend class ObjectGeometryCache;
  SceneGeometry() = default;

  std::vector<std::shared_ptr<const TriMesh>> meshes_;
  std::vector<std::shared_ptr<const Bvh>> bvhs_;
  std::vector<std::shared_ptr<const SdfGrid>> sdfs_;
};

struct ObjectKey {
  int object_id = -1;
  double scale = 1.0;
  bool operator<(const ObjectKey& o) const {
    return object_id != o.object_id ? object_id < o.object_id : scale < o.scale;
  }
};

// Shares scaled meshes / BVHs / SDFs across scenes keyed by (object, scale).
class ObjectGeometryCache {
 public:
  ObjectGeometryCache(const ObjectLibrary& library, double sdf_cell = 0.002,
                      double sdf_margin = 0.02);

  struct Built {
    std::shared_ptr<const TriMesh> mesh;
    std::shared_ptr<const Bvh> bvh;
    std::shared_ptr<const SdfGrid> sdf;
  };

  const Built& get(int object_id, double scale);
  SceneGeometry geometry(const SceneSpec& scene);

 private:
  const ObjectLibrary* library_;
  double sdf_cell_, sdf_margin_;
  std::map<ObjectKey, Built> cache_;
};

// ---------------------------------------------------------------------------
// Grasp transfer + scene-level filtering

using GraspSets = std::map<ObjectKey, std::vector<GraspRecord>>;

// Left-composes each canonical-frame grasp pose with its instance pose;
// joint vectors are copied unchanged. Throws on a missing (object, scale) set.
std::vector<std::vector<GraspRecord>> transfer_grasps(const SceneSpec& scene,
                                                      const GraspSets& sets);

struct FilterParams {
  double approach_distance = 0.1;
  int approach_steps = 20;
  double neighbor_pen_tol = 1e-3;  // non-target instances and the plane (m)
  double target_pen_tol = 3e-3;    // closure-consistent target tolerance (m)
  int jobs = 1;
};

struct RemovalRecord {
  int instance = -1;
  int grasp_index = -1;
  std::string cause;  // approach collision | neighbor collision |
                      // support collision | target penetration
};

struct FilterResult {
  std::vector<std::vector<GraspRecord>> kept;  // per instance
  std::vector<RemovalRecord> removed;
};

// Keeps a grasp iff the hand at (pose, J_end) stays above the support plane
// and out of non-target instances (> neighbor_pen_tol removal), penetrates the
// target at most target_pen_tol, and check_approach at J_init passes against
// every scene mesh plus the plane. Filtering is idempotent.
FilterResult filter_scene_grasps(const SceneSpec& scene,
                                 const std::vector<std::vector<GraspRecord>>& candidates,
                                 const HandDescription& hand, const SceneGeometry& geom,
                                 const FilterParams& params = {});

// ---------------------------------------------------------------------------
// Scene file I/O (instances + grasp-file references; grasp payloads are
// written separately by the pipeline)

nlohmann::json scene_to_json(const SceneSpec& scene);
SceneSpec scene_from_json(const nlohmann::json& j);
void save_scene(const SceneSpec& scene, const std::filesystem::path& path);
SceneSpec load_scene(const std::filesystem::path& path);

// Validates SceneSpec invariants (instance count, pairwise clearance, resting
// above the plane) against built geometry; throws on violation.
void validate_scene(const SceneSpec& scene, const SceneGeometry& geom,
                    int min_instances = 5, int max_instances = 15,
                    double pen_tol = 1e-3);

}  // namespace dexforge
