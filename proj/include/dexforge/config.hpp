// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dexforge/closure.hpp"
#include "dexforge/grasp_math.hpp"
#include "dexforge/sampler.hpp"

namespace dexforge {

// Every tunable of the pipeline, with the paper's constants as defaults.
// Parsed strictly: unknown keys are rejected, bounds are validated, and the
// fully resolved form is embedded in every manifest.
struct PipelineConfig {
  uint64_t seed = 0;
  std::string out_dir = "out";
  std::string hand_path = "assets/hands/default/hand.json";

  // objects
  std::vector<std::string> object_names{"box", "sphere", "cylinder", "stick", "bowl"};
  std::string object_dir;  // optional mesh directory overriding the procedural set
  std::vector<double> scales{0.8, 0.9, 1.0, 1.1, 1.2};

  SamplerConfig sampler;
  AdmittanceParams admittance;
  StabilityParams stability;

  // synthesis
  int attempts_per_object = 500;
  double approach_distance = 0.1;
  int approach_steps = 20;

  // geometry discretization
  double sdf_cell = 0.002;
  double sdf_margin = 0.02;
  double voxel_cell = 5e-4;
  int contact_samples_per_link = 100;

  // scenes
  int scene_count_min = 5;
  int scene_count_max = 15;
  int n_scenes = 5;
  double workspace_x = 0.6;
  double workspace_y = 0.6;
  double scene_clearance = 2e-3;
  int scene_max_retries = 50;
  double neighbor_pen_tol = 1e-3;

  // rendering
  int n_views = 256;
  int views_per_scene = 16;
  double view_radius = 1.0;
  double elev_lo_deg = 22.5;
  double elev_hi_deg = 67.5;
  int image_width = 640;
  int image_height = 480;
  double hfov_deg = 60.0;
  double depth_noise_sigma = 0.0;

  // labeling
  int n_points = 20000;
  int k_candidates = 20;
  double sigma_max = 0.03;

  // evaluation
  double lift_height = 0.1;
  int lift_steps = 20;
  int max_failures = 3;

  LossWeights loss_weights;

  void validate() const;             // throws on out-of-bounds values
  nlohmann::json to_json() const;    // fully resolved (all defaults expanded)
  uint64_t hash() const;             // stable digest of to_json()
};

// Strict parse: missing keys take defaults, unknown keys throw.
PipelineConfig config_from_json(const nlohmann::json& j);
PipelineConfig load_config(const std::filesystem::path& path);

}  // namespace dexforge
