// SPDX-License-Identifier: Apache-2.0
#include "dexforge/config.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

#include "dexforge/io.hpp"

namespace dexforge {

namespace {

// Tracks key consumption so leftovers can be reported as unknown keys.
class StrictObject {
 public:
  StrictObject(const nlohmann::json& j, std::string where)
      : j_(j), where_(std::move(where)) {
    if (!j_.is_object())
      throw std::runtime_error("config: '" + where_ + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    if (!j_.contains(key)) return;
    consumed_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("config: bad value for '" + where_ + "." + key +
                               "': " + e.what());
    }
  }

  bool has_section(const char* key) const { return j_.contains(key); }

  const nlohmann::json& section(const char* key) {
    consumed_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!consumed_.count(it.key()))
        throw std::runtime_error("config: unknown key '" + where_ + "." + it.key() +
                                 "'");
  }

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::set<std::string> consumed_;
};

void parse_sampler(const nlohmann::json& j, SamplerConfig& s) {
  StrictObject o(j, "sampler");
  o.get("r_min", s.r_min);
  o.get("r_max", s.r_max);
  o.get("h_min", s.h_min);
  o.get("h_max", s.h_max);
  o.get("circular_probability", s.circular_probability);
  o.get("class_hint_bias", s.class_hint_bias);
  o.get("two_finger_rectangular_only", s.two_finger_rectangular_only);
  o.finish();
}

void parse_admittance(const nlohmann::json& j, AdmittanceParams& a) {
  StrictObject o(j, "admittance");
  o.get("M", a.M);
  o.get("D", a.D);
  o.get("K", a.K);
  o.get("dt", a.dt);
  o.get("max_steps", a.max_steps);
  o.get("settle_velocity_eps", a.settle_velocity_eps);
  o.get("contact_stiffness", a.contact_stiffness);
  o.get("contact_damping", a.contact_damping);
  o.get("pen_tol", a.pen_tol);
  o.get("moment_arm", a.moment_arm);
  o.finish();
}

void parse_stability(const nlohmann::json& j, StabilityParams& s) {
  StrictObject o(j, "stability");
  o.get("mass", s.mass);
  o.get("gravity", s.gravity);
  o.get("steps", s.steps);
  o.get("dt", s.dt);
  o.get("disp_tol", s.disp_tol);
  o.get("rot_tol", s.rot_tol);
  o.get("contact_stiffness", s.contact_stiffness);
  o.get("linear_damping", s.linear_damping);
  o.get("angular_damping", s.angular_damping);
  o.finish();
}

void parse_losses(const nlohmann::json& j, LossWeights& w) {
  StrictObject o(j, "losses");
  o.get("lambda_gp", w.lambda_gp);
  o.get("lambda_T", w.lambda_T);
  o.get("lambda_R", w.lambda_R);
  o.get("lambda_j_init", w.lambda_j_init);
  o.get("lambda_j_end", w.lambda_j_end);
  o.get("lambda_geo", w.lambda_geo);
  o.get("class_weights", w.class_weights);
  o.get("epsilon", w.epsilon);
  o.get("offset_norm_ratio", w.offset_norm_ratio);
  o.finish();
}

void require(bool ok, const std::string& message) {
  if (!ok) throw std::runtime_error("config: " + message);
}

}  // namespace

void PipelineConfig::validate() const {
  require(!hand_path.empty(), "hand path is empty");
  require(!object_names.empty() || !object_dir.empty(),
          "no objects configured (object names and directory both empty)");
  require(!scales.empty(), "scale set is empty");
  const std::vector<double> allowed{0.8, 0.9, 1.0, 1.1, 1.2};
  for (double s : scales) {
    bool ok = false;
    for (double a : allowed) ok = ok || std::abs(s - a) < 1e-9;
    require(ok, "scale " + std::to_string(s) +
                    " outside the documented set {0.8, 0.9, 1.0, 1.1, 1.2}");
  }
  require(sampler.r_min > 0 && sampler.r_max >= sampler.r_min,
          "sampler radius range invalid");
  require(sampler.h_min >= 0 && sampler.h_max >= sampler.h_min,
          "sampler height range invalid");
  require(sampler.circular_probability >= 0 && sampler.circular_probability <= 1,
          "circular_probability outside [0, 1]");
  require(sampler.class_hint_bias >= 0 && sampler.class_hint_bias <= 1,
          "class_hint_bias outside [0, 1]");
  admittance.validate();
  require(stability.mass > 0 && stability.gravity > 0 && stability.steps > 0 &&
              stability.dt > 0 && stability.disp_tol > 0 && stability.rot_tol > 0 &&
              stability.contact_stiffness > 0 && stability.linear_damping >= 0 &&
              stability.angular_damping >= 0,
          "stability parameters out of bounds");
  require(attempts_per_object > 0, "attempts_per_object must be > 0");
  require(approach_distance >= 0, "approach_distance must be >= 0");
  require(approach_steps >= 2, "approach_steps must be >= 2");
  require(sdf_cell > 0 && sdf_margin >= 0, "sdf discretization out of bounds");
  require(voxel_cell > 0, "voxel_cell must be > 0");
  require(contact_samples_per_link > 0, "contact_samples_per_link must be > 0");
  require(scene_count_min >= 5 && scene_count_max <= 15 &&
              scene_count_min <= scene_count_max,
          "scene count range must lie within [5, 15]");
  require(n_scenes > 0, "n_scenes must be > 0");
  require(workspace_x > 0 && workspace_y > 0, "workspace extents must be > 0");
  require(scene_clearance >= 0, "scene_clearance must be >= 0");
  require(scene_max_retries > 0, "scene_max_retries must be > 0");
  require(neighbor_pen_tol >= 0, "neighbor_pen_tol must be >= 0");
  require(n_views >= 1, "n_views must be >= 1");
  require(views_per_scene >= 1 && views_per_scene <= n_views,
          "views_per_scene must be in [1, n_views]");
  require(view_radius > 0, "view_radius must be > 0");
  require(elev_lo_deg >= 0 && elev_hi_deg <= 90 && elev_lo_deg < elev_hi_deg,
          "elevation band must satisfy 0 <= lo < hi <= 90");
  require(image_width > 0 && image_height > 0, "image size must be positive");
  require(hfov_deg > 0 && hfov_deg < 180, "hfov_deg must be in (0, 180)");
  require(depth_noise_sigma >= 0, "depth_noise_sigma must be >= 0");
  require(n_points >= 1, "n_points must be >= 1");
  require(k_candidates >= 0, "k_candidates must be >= 0");
  require(sigma_max > 0, "sigma_max must be > 0");
  require(lift_height > 0 && lift_steps > 0, "lift parameters must be positive");
  require(max_failures > 0, "max_failures must be > 0");
  require(loss_weights.lambda_gp >= 0 && loss_weights.lambda_T >= 0 &&
              loss_weights.lambda_R >= 0 && loss_weights.lambda_j_init >= 0 &&
              loss_weights.lambda_j_end >= 0,
          "loss weights must be >= 0");
  require(loss_weights.lambda_geo >= 0 && loss_weights.lambda_geo <= 1,
          "lambda_geo outside [0, 1]");
  require(loss_weights.epsilon > 0, "loss epsilon must be > 0");
  for (double w : loss_weights.class_weights)
    require(w >= 0, "class weights must be >= 0");
}

nlohmann::json PipelineConfig::to_json() const {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["seed"] = seed;
  j["out_dir"] = out_dir;
  j["hand"] = hand_path;
  j["objects"] = {{"names", object_names},
                  {"directory", object_dir},
                  {"scales", scales}};
  j["sampler"] = {{"r_min", sampler.r_min},
                  {"r_max", sampler.r_max},
                  {"h_min", sampler.h_min},
                  {"h_max", sampler.h_max},
                  {"circular_probability", sampler.circular_probability},
                  {"class_hint_bias", sampler.class_hint_bias},
                  {"two_finger_rectangular_only", sampler.two_finger_rectangular_only}};
  j["admittance"] = {{"M", admittance.M},
                     {"D", admittance.D},
                     {"K", admittance.K},
                     {"dt", admittance.dt},
                     {"max_steps", admittance.max_steps},
                     {"settle_velocity_eps", admittance.settle_velocity_eps},
                     {"contact_stiffness", admittance.contact_stiffness},
                     {"contact_damping", admittance.contact_damping},
                     {"pen_tol", admittance.pen_tol},
                     {"moment_arm", admittance.moment_arm}};
  j["stability"] = {{"mass", stability.mass},
                    {"gravity", stability.gravity},
                    {"steps", stability.steps},
                    {"dt", stability.dt},
                    {"disp_tol", stability.disp_tol},
                    {"rot_tol", stability.rot_tol},
                    {"contact_stiffness", stability.contact_stiffness},
                    {"linear_damping", stability.linear_damping},
                    {"angular_damping", stability.angular_damping}};
  j["synthesis"] = {{"attempts_per_object", attempts_per_object},
                    {"approach_distance", approach_distance},
                    {"approach_steps", approach_steps}};
  j["geometry"] = {{"sdf_cell", sdf_cell},
                   {"sdf_margin", sdf_margin},
                   {"voxel_cell", voxel_cell},
                   {"contact_samples_per_link", contact_samples_per_link}};
  j["scene"] = {{"count_min", scene_count_min},
                {"count_max", scene_count_max},
                {"n_scenes", n_scenes},
                {"workspace", {workspace_x, workspace_y}},
                {"clearance", scene_clearance},
                {"max_retries", scene_max_retries},
                {"neighbor_pen_tol", neighbor_pen_tol}};
  j["render"] = {{"n_views", n_views},
                 {"views_per_scene", views_per_scene},
                 {"radius", view_radius},
                 {"elevation_deg", {elev_lo_deg, elev_hi_deg}},
                 {"width", image_width},
                 {"height", image_height},
                 {"hfov_deg", hfov_deg},
                 {"noise_sigma", depth_noise_sigma}};
  j["labels"] = {{"n_points", n_points},
                 {"k_candidates", k_candidates},
                 {"sigma_max", sigma_max}};
  j["eval"] = {{"lift_height", lift_height},
               {"lift_steps", lift_steps},
               {"max_failures", max_failures}};
  j["losses"] = {{"lambda_gp", loss_weights.lambda_gp},
                 {"lambda_T", loss_weights.lambda_T},
                 {"lambda_R", loss_weights.lambda_R},
                 {"lambda_j_init", loss_weights.lambda_j_init},
                 {"lambda_j_end", loss_weights.lambda_j_end},
                 {"lambda_geo", loss_weights.lambda_geo},
                 {"class_weights", loss_weights.class_weights},
                 {"epsilon", loss_weights.epsilon},
                 {"offset_norm_ratio", loss_weights.offset_norm_ratio}};
  return j;
}

uint64_t PipelineConfig::hash() const { return json_hash(to_json()); }

PipelineConfig config_from_json(const nlohmann::json& j) {
  PipelineConfig c;
  StrictObject root(j, "");
  int schema = 1;
  root.get("schema_version", schema);
  if (schema != 1) throw std::runtime_error("config: unsupported schema_version");
  root.get("seed", c.seed);
  root.get("out_dir", c.out_dir);
  root.get("hand", c.hand_path);

  if (root.has_section("objects")) {
    StrictObject o(root.section("objects"), "objects");
    o.get("names", c.object_names);
    o.get("directory", c.object_dir);
    o.get("scales", c.scales);
    o.finish();
  }
  if (root.has_section("sampler")) parse_sampler(root.section("sampler"), c.sampler);
  if (root.has_section("admittance"))
    parse_admittance(root.section("admittance"), c.admittance);
  if (root.has_section("stability"))
    parse_stability(root.section("stability"), c.stability);
  if (root.has_section("synthesis")) {
    StrictObject o(root.section("synthesis"), "synthesis");
    o.get("attempts_per_object", c.attempts_per_object);
    o.get("approach_distance", c.approach_distance);
    o.get("approach_steps", c.approach_steps);
    o.finish();
  }
  if (root.has_section("geometry")) {
    StrictObject o(root.section("geometry"), "geometry");
    o.get("sdf_cell", c.sdf_cell);
    o.get("sdf_margin", c.sdf_margin);
    o.get("voxel_cell", c.voxel_cell);
    o.get("contact_samples_per_link", c.contact_samples_per_link);
    o.finish();
  }
  if (root.has_section("scene")) {
    StrictObject o(root.section("scene"), "scene");
    o.get("count_min", c.scene_count_min);
    o.get("count_max", c.scene_count_max);
    o.get("n_scenes", c.n_scenes);
    std::vector<double> workspace{c.workspace_x, c.workspace_y};
    o.get("workspace", workspace);
    if (workspace.size() != 2)
      throw std::runtime_error("config: scene.workspace must have 2 entries");
    c.workspace_x = workspace[0];
    c.workspace_y = workspace[1];
    o.get("clearance", c.scene_clearance);
    o.get("max_retries", c.scene_max_retries);
    o.get("neighbor_pen_tol", c.neighbor_pen_tol);
    o.finish();
  }
  if (root.has_section("render")) {
    StrictObject o(root.section("render"), "render");
    o.get("n_views", c.n_views);
    o.get("views_per_scene", c.views_per_scene);
    o.get("radius", c.view_radius);
    std::vector<double> band{c.elev_lo_deg, c.elev_hi_deg};
    o.get("elevation_deg", band);
    if (band.size() != 2)
      throw std::runtime_error("config: render.elevation_deg must have 2 entries");
    c.elev_lo_deg = band[0];
    c.elev_hi_deg = band[1];
    o.get("width", c.image_width);
    o.get("height", c.image_height);
    o.get("hfov_deg", c.hfov_deg);
    o.get("noise_sigma", c.depth_noise_sigma);
    o.finish();
  }
  if (root.has_section("labels")) {
    StrictObject o(root.section("labels"), "labels");
    o.get("n_points", c.n_points);
    o.get("k_candidates", c.k_candidates);
    o.get("sigma_max", c.sigma_max);
    o.finish();
  }
  if (root.has_section("eval")) {
    StrictObject o(root.section("eval"), "eval");
    o.get("lift_height", c.lift_height);
    o.get("lift_steps", c.lift_steps);
    o.get("max_failures", c.max_failures);
    o.finish();
  }
  if (root.has_section("losses")) parse_losses(root.section("losses"), c.loss_weights);
  root.finish();
  c.validate();
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  return config_from_json(load_json(path.string()));
}

}  // namespace dexforge
