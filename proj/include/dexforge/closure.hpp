// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "dexforge/hand.hpp"
#include "dexforge/sampler.hpp"
#include "dexforge/sdf.hpp"

namespace dexforge {

// Joint-space admittance model and contact/stability tolerances.
struct AdmittanceParams {
  double M = 1e-3;                   // virtual inertia per joint (kg m^2)
  double D = 0.06;                   // damping (N m s/rad), critical for K
  double K = 0.9;                    // spring stiffness (N m/rad)
  double dt = 1e-3;                  // integration step (s)
  int max_steps = 4000;
  double settle_velocity_eps = 1e-2; // rad/s
  double contact_stiffness = 2000.0; // N/m
  double contact_damping = 5.0;      // N s/m, along the contact normal
  double pen_tol = 3e-3;             // max accepted penetration (m)
  double moment_arm = 0.1;           // lever arm bound for the dt check (m)

  void validate() const;  // throws on invariant violations
};

struct StabilityParams {
  double mass = 0.2;                 // kg
  double gravity = 9.81;             // m/s^2
  int steps = 100;                   // per axis direction
  double dt = 1e-3;                  // s
  double disp_tol = 0.01;            // m
  double rot_tol = 15.0 * 3.14159265358979323846 / 180.0;  // rad
  double contact_stiffness = 2000.0; // N/m
  double linear_damping = 5.0;       // N s/m
  double angular_damping = 0.01;     // N m s/rad
};

enum class GraspStatus {
  valid,
  approach_collision,
  no_contact,
  unstable,
  ik_failure,
  diverged,
  penetration,
};

std::string to_string(GraspStatus status);
GraspStatus grasp_status_from_string(const std::string& s);

struct ContactInfo {
  int finger = -1;     // -1 = palm
  Vec3 point = Vec3::Zero();   // world
  Vec3 normal = Vec3::Zero();  // outward from the object surface, world
  double depth = 0.0;          // penetration (m, > 0)
  int object_id = -1;          // id of the SdfInstance that produced it
};

struct GraspRecord {
  Vec3 T = Vec3::Zero();   // TCP position, world
  Mat3 R = Mat3::Identity();
  JointVec j_init = JointVec::Zero();
  JointVec j_end = JointVec::Zero();
  std::array<bool, 5> finger_mask{true, true, true, true, true};
  ConstraintSpec constraint;
  GraspStatus status = GraspStatus::valid;
  std::vector<ContactInfo> contacts;  // per-finger deepest contact
  uint64_t seed = 0;
  int object_id = -1;
  double scale = 1.0;

  Iso3 pose() const { return make_pose(T, R); }
};

nlohmann::json grasp_to_json(const GraspRecord& g);
GraspRecord grasp_from_json(const nlohmann::json& j);

// Static obstacles for approach / collision checks.
struct MeshObstacle {
  const Bvh* bvh = nullptr;
  Iso3 pose = Iso3::Identity();
};

struct ObstacleSet {
  std::vector<MeshObstacle> meshes;
  bool has_plane = false;
  double plane_z = 0.0;
};

struct ApproachResult {
  bool collision_free = false;
  int first_collision_step = -1;
};

// Sweeps the hand at j_init from the pose retracted by `distance` along the
// TCP +z axis down to the grasp pose (the palm faces -z), checking every hand
// link against every obstacle and the support plane at each step.
ApproachResult check_approach(const HandDescription& hand, const Iso3& tcp_pose,
                              const JointVec& j_init, const ObstacleSet& obstacles,
                              double distance = 0.1, int steps = 20);

// A posed signed-distance field of one object instance.
struct SdfInstance {
  const SdfGrid* sdf = nullptr;
  Iso3 pose = Iso3::Identity();
  int object_id = -1;
};

struct ClosureResult {
  JointVec j_end = JointVec::Zero();
  std::vector<ContactInfo> contacts;        // every penetrating sample at settle
  std::array<bool, 5> finger_contact{};     // any contact per finger
  double max_penetration = 0.0;             // m
  bool settled = false;
  bool diverged = false;
  int diverged_finger = -1;
  int steps = 0;
};

// Integrates M q'' = K (q_goal - q) - D q' + tau_contact per active joint
// from j_start until settling; the hand base stays fixed at tcp_pose.
ClosureResult close_fingers(const HandDescription& hand, const Iso3& tcp_pose,
                            const JointVec& j_start, const JointVec& goals,
                            const std::vector<SdfInstance>& objects,
                            const AdmittanceParams& params);

struct StabilityResult {
  bool pass = false;
  double max_displacement = 0.0;  // m
  double max_rotation = 0.0;      // rad
  int failed_direction = -1;      // 0..5 = +x,-x,+y,-y,+z,-z
};

// Applies gravity-magnitude force along the six axis directions for `steps`
// integration steps each, with the closure contacts frozen as unilateral
// penalty springs; passes iff displacement and rotation stay under tolerance.
StabilityResult stability_test(const std::vector<ContactInfo>& contacts,
                               const TriMesh& object, const SdfGrid& sdf,
                               const Iso3& object_pose, const StabilityParams& params);

struct AttemptLog {
  int attempt = 0;
  uint64_t seed = 0;
  GraspStatus status = GraspStatus::valid;
  ConstraintKind kind = ConstraintKind::circular;
  int mask_fingers = 5;
  double elapsed_ms = 0.0;
};

struct SynthesisConfig {
  SamplerConfig sampler;
  AdmittanceParams admittance;
  StabilityParams stability;
  double approach_distance = 0.1;
  int approach_steps = 20;
  std::optional<std::string> class_hint;
};

struct SynthesisResult {
  std::vector<GraspRecord> valid;
  std::vector<AttemptLog> attempts;
};

// Full per-object loop: sample pose/constraint -> IK -> pre-grasp ->
// approach -> closure -> stability. Deterministic per (seed, attempt index).
SynthesisResult synthesize_object_grasps(const TriMesh& object, const Bvh& object_bvh,
                                         const SdfGrid& object_sdf,
                                         const HandDescription& hand,
                                         const SynthesisConfig& config, int n_attempts,
                                         uint64_t seed, int jobs = 1);

}  // namespace dexforge
