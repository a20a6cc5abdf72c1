// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>

#include "dexforge/scene.hpp"

namespace dexforge {

// Deepest intrusion of the hand's link surface samples into the object, in
// millimeters (0 when clear). The hand should carry >= 2000 samples total
// (default loading: 100 per link x 21 links).
double penetration_depth_mm(const HandDescription& hand, const Iso3& tcp_pose,
                            const JointVec& q, const SdfGrid& sdf,
                            const Iso3& object_pose);

// Total overlap volume between every hand link and the object, in mm^3,
// via parity voxelization at `cell` resolution.
double penetration_volume_mm3(const HandDescription& hand, const Iso3& tcp_pose,
                              const JointVec& q, const TriMesh& object,
                              const Iso3& object_pose, double cell = 5e-4);

// First-eigenvalue share (percent) of the covariance of 46-dim grasp vectors
// (T, axis-angle R, J_init, J_end). Throws on < 2 samples or zero covariance.
double diversity(const std::vector<Eigen::VectorXd>& vectors);
double diversity(const std::vector<GraspRecord>& grasps);
Eigen::VectorXd grasp_feature_vector(const GraspRecord& grasp);

struct ScoredGrasp {
  GraspRecord grasp;  // world frame
  int instance = -1;
  int grasp_index = -1;
  double score = 0.0;
};

// Yields scored grasps for the instances still present; called before every
// attempt so the source can re-render / re-score against the current scene.
using GraspSource =
    std::function<std::vector<ScoredGrasp>(const std::vector<int>& remaining)>;

struct ClearanceConfig {
  double approach_distance = 0.1;
  int approach_steps = 20;
  double lift_height = 0.1;
  int lift_steps = 20;
  double success_height = 0.1;  // lift displacement that counts as success
  int max_failures = 3;         // per object before it is retired uncleared
  double workspace_x = 0.6;
  double workspace_y = 0.6;
  AdmittanceParams admittance;
  StabilityParams stability;
};

struct AttemptRecord {
  int attempt = -1;
  int instance = -1;
  int grasp_index = -1;
  double score = 0.0;
  std::string outcome;  // success | approach failure | no contact |
                        // closure divergence | unstable | lift collision
  double pd_mm = 0.0;
  double pv_mm3 = 0.0;
  double elapsed_s = 0.0;
};

struct MetricReport {
  std::vector<AttemptRecord> attempts_log;
  int attempts = 0;
  int successes = 0;
  int objects_total = 0;
  int objects_cleared = 0;  // removed by grasp success
  double sr_pct = std::numeric_limits<double>::quiet_NaN();  // NaN: no attempts
  double cr_pct = 0.0;
  double pd_mean_mm = 0.0, pd_var_mm2 = 0.0;
  double pv_mean_mm3 = 0.0, pv_var_mm6 = 0.0;
  double diversity_pct = std::numeric_limits<double>::quiet_NaN();
  double mean_decision_s = 0.0;
  nlohmann::json config_echo;
};

// Sequential removal protocol: highest-scored in-workspace grasp ->
// approach -> admittance closure -> six-axis stability gate -> kinematic
// lift; objects clear on success or retire after max_failures attempts.
MetricReport run_clearance_protocol(const SceneSpec& scene, const SceneGeometry& geom,
                                    const GraspSource& source,
                                    const HandDescription& hand,
                                    const ClearanceConfig& config);

nlohmann::json report_to_json(const MetricReport& report);
std::string report_table(const MetricReport& report);
void write_report_csv(const MetricReport& report, const std::filesystem::path& path);

}  // namespace dexforge
