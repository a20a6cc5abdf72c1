// SPDX-License-Identifier: Apache-2.0
#include "dexforge/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "dexforge/io.hpp"
#include "dexforge/primitives.hpp"
#include "dexforge/render.hpp"

namespace dexforge {

namespace fs = std::filesystem;

namespace {

// --- structured stage logging (wall-clock data lives here, not in artifacts)

class StageLog {
 public:
  StageLog(const fs::path& out_dir, const std::string& stage, uint64_t seed)
      : stage_(stage), seed_(seed) {
    fs::create_directories(out_dir / "logs");
    file_.open((out_dir / "logs" / (stage + ".jsonl")).string(), std::ios::app);
    start_ = std::chrono::steady_clock::now();
  }

  void event(const std::string& what, nlohmann::json fields = nlohmann::json::object()) {
    if (!file_.is_open()) return;
    nlohmann::json j{{"level", "info"},
                     {"stage", stage_},
                     {"seed", seed_},
                     {"event", what},
                     {"elapsed_ms", elapsed_ms()}};
    for (auto& [k, v] : fields.items()) j[k] = v;
    file_ << j.dump() << "\n";
    file_.flush();
  }

  double elapsed_ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                     start_)
        .count();
  }

 private:
  std::string stage_;
  uint64_t seed_;
  std::ofstream file_;
  std::chrono::steady_clock::time_point start_;
};

std::string scale_tag(double scale) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%03d", (int)std::lround(scale * 100.0));
  return buf;
}

std::string grasp_file_name(const std::string& name, double scale) {
  return name + "_s" + scale_tag(scale) + ".json";
}

std::string scene_id_for(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%04d", index);
  return buf;
}

std::string sidecar_name(const std::string& scene_id, int instance) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "_inst%02d", instance);
  return scene_id + buf + ".grasps.json";
}

std::string view_name_for(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "view_%03d", index);
  return buf;
}

// An artifact is current when it exists and carries this config's hash.
bool output_is_current(const fs::path& path, const std::string& hash) {
  if (!fs::exists(path)) return false;
  try {
    return load_json(path.string()).value("config_hash", "") == hash;
  } catch (...) {
    return false;
  }
}

CameraModel intrinsics_from(const PipelineConfig& config) {
  CameraModel cam;
  cam.width = config.image_width;
  cam.height = config.image_height;
  cam.fx = (cam.width / 2.0) /
           std::tan(0.5 * config.hfov_deg * std::numbers::pi / 180.0);
  cam.fy = cam.fx;
  cam.cx = cam.width / 2.0;
  cam.cy = cam.height / 2.0;
  return cam;
}

int mask_finger_count(const std::array<bool, 5>& mask) {
  int n = 0;
  for (bool b : mask) n += b ? 1 : 0;
  return n;
}

std::string pattern_name(const std::array<bool, 5>& mask) {
  switch (mask_finger_count(mask)) {
    case 2: return "thumb+index";
    case 3: return "thumb+index+middle";
    case 5: return "all-five";
    default: return "other";
  }
}

// Loads one stage-1 grasp artifact, checking its provenance stamp.
nlohmann::json load_stamped(const fs::path& path, const std::string& hash,
                            const std::string& producer) {
  if (!fs::exists(path))
    throw std::runtime_error("missing artifact " + path.string() + "; run " +
                             producer + " first");
  nlohmann::json j = load_json(path.string());
  if (j.value("config_hash", "") != hash)
    throw std::runtime_error("artifact " + path.string() +
                             " was produced by a different config (hash " +
                             j.value("config_hash", "<none>") + ", expected " + hash +
                             "); use a fresh --out directory or delete it");
  return j;
}

// Scene + per-instance grasps as written by the scene stage.
SceneSpec load_scene_with_grasps(const fs::path& scenes_dir, const std::string& id,
                                 const std::string& hash) {
  nlohmann::json j = load_stamped(scenes_dir / (id + ".json"), hash, "gen-scenes");
  SceneSpec scene = scene_from_json(j);
  scene.grasps.assign(scene.instances.size(), {});
  for (size_t i = 0; i < scene.grasp_files.size() && i < scene.instances.size(); ++i) {
    nlohmann::json side =
        load_stamped(scenes_dir / scene.grasp_files[i], hash, "gen-scenes");
    for (const auto& jg : side.at("grasps")) scene.grasps[i].push_back(grasp_from_json(jg));
  }
  return scene;
}

MetricReport strip_timing(MetricReport r) {
  r.mean_decision_s = 0.0;
  for (auto& a : r.attempts_log) a.elapsed_s = 0.0;
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------
// Object library

std::string class_hint_for(const std::string& name) {
  if (name.empty()) return name;
  std::string out = name;
  out[0] = (char)std::toupper((unsigned char)out[0]);
  return out;
}

ObjectLibrary build_object_library(const PipelineConfig& config) {
  ObjectLibrary lib;
  if (!config.object_dir.empty()) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(config.object_dir)) {
      std::string ext = e.path().extension().string();
      if (ext == ".obj" || ext == ".stl") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      ObjectEntry entry;
      entry.object_id = (int)lib.size();
      entry.name = f.stem().string();
      entry.mesh = std::make_shared<TriMesh>(load_mesh(f));
      lib.push_back(std::move(entry));
    }
    if (lib.empty())
      throw std::runtime_error("object_dir " + config.object_dir +
                               " holds no .obj/.stl meshes");
    return lib;
  }
  for (const std::string& name : config.object_names) {
    TriMesh mesh;
    if (name == "box") mesh = make_box(0.05, 0.06, 0.045);
    else if (name == "sphere") mesh = make_icosphere(0.028, 3);
    else if (name == "cylinder") mesh = make_cylinder(0.022, 0.06);
    else if (name == "stick") mesh = make_stick(0.008, 0.1);
    else if (name == "bowl") mesh = make_bowl(0.035, 0.005);
    else
      throw std::runtime_error("unknown procedural object '" + name +
                               "' (known: box, sphere, cylinder, stick, bowl)");
    ObjectEntry entry;
    entry.object_id = (int)lib.size();
    entry.name = name;
    entry.mesh = std::make_shared<TriMesh>(std::move(mesh));
    lib.push_back(std::move(entry));
  }
  return lib;
}

// ---------------------------------------------------------------------------
// Manifest plumbing

std::string config_hash_hex(const PipelineConfig& config) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)config.hash());
  return buf;
}

void write_json_atomic(const fs::path& path, const nlohmann::json& j) {
  fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  save_json(tmp.string(), j);
  fs::rename(tmp, path);
}

nlohmann::json ensure_manifest(const PipelineConfig& config) {
  config.validate();
  const fs::path path = fs::path(config.out_dir) / "manifest.json";
  const std::string hash = config_hash_hex(config);
  if (fs::exists(path)) {
    nlohmann::json j = load_json(path.string());
    if (j.value("config_hash", "") != hash)
      throw std::runtime_error(
          "config hash mismatch: " + path.string() + " was produced with hash " +
          j.value("config_hash", "<none>") + " but the current config hashes to " +
          hash + "; refusing to mix outputs (use a fresh --out directory or rerun "
          "with the original config)");
    return j;
  }
  nlohmann::json j{{"schema_version", 1},
                   {"config_hash", hash},
                   {"config", config.to_json()},
                   {"stages", nlohmann::json::object()}};
  write_json_atomic(path, j);
  return j;
}

void update_manifest(const PipelineConfig& config, const StageSummary& summary) {
  nlohmann::json j = ensure_manifest(config);
  j["stages"][summary.stage] = {
      {"outputs", summary.outputs_written + summary.outputs_skipped},
      {"details", summary.details}};
  write_json_atomic(fs::path(config.out_dir) / "manifest.json", j);
}

// ---------------------------------------------------------------------------
// Stage 1: per-object grasp synthesis

StageSummary cmd_gen_grasps(const PipelineConfig& config, int jobs) {
  ensure_manifest(config);
  const std::string hash = config_hash_hex(config);
  const fs::path out_dir(config.out_dir);
  const fs::path grasp_dir = out_dir / "grasps";
  fs::create_directories(grasp_dir);
  StageLog log(out_dir, "gen-grasps", config.seed);

  ObjectLibrary lib = build_object_library(config);
  HandDescription hand = load_hand(config.hand_path, config.contact_samples_per_link);
  ObjectGeometryCache cache(lib, config.sdf_cell, config.sdf_margin);

  StageSummary summary;
  summary.stage = "gen-grasps";
  nlohmann::json per_object = nlohmann::json::object();
  int total_valid = 0;

  for (const ObjectEntry& entry : lib) {
    for (double scale : config.scales) {
      const fs::path path = grasp_dir / grasp_file_name(entry.name, scale);
      if (output_is_current(path, hash)) {
        ++summary.outputs_skipped;
        nlohmann::json j = load_json(path.string());
        int valid = (int)j.at("grasps").size();
        total_valid += valid;
        per_object[path.filename().string()] = valid;
        log.event("skip", {{"file", path.filename().string()}, {"valid", valid}});
        continue;
      }

      SynthesisConfig syn;
      syn.sampler = config.sampler;
      syn.admittance = config.admittance;
      syn.stability = config.stability;
      syn.approach_distance = config.approach_distance;
      syn.approach_steps = config.approach_steps;
      syn.class_hint = class_hint_for(entry.name);

      const uint64_t seed = mix_seed(
          config.seed, fnv1a("gen-grasps/" + entry.name + "/s" + scale_tag(scale)));
      const auto& built = cache.get(entry.object_id, scale);
      SynthesisResult result =
          synthesize_object_grasps(*built.mesh, *built.bvh, *built.sdf, hand, syn,
                                   config.attempts_per_object, seed, jobs);

      std::map<std::string, int> status_counts;
      for (const AttemptLog& a : result.attempts) ++status_counts[to_string(a.status)];
      for (GraspRecord& g : result.valid) {
        g.object_id = entry.object_id;
        g.scale = scale;
      }

      nlohmann::json j{{"schema_version", 1},
                       {"config_hash", hash},
                       {"object_id", entry.object_id},
                       {"name", entry.name},
                       {"class_hint", class_hint_for(entry.name)},
                       {"scale", scale},
                       {"seed", seed},
                       {"attempts", config.attempts_per_object},
                       {"status_counts", status_counts}};
      nlohmann::json grasps = nlohmann::json::array();
      for (const GraspRecord& g : result.valid) grasps.push_back(grasp_to_json(g));
      j["grasps"] = std::move(grasps);
      write_json_atomic(path, j);

      total_valid += (int)result.valid.size();
      per_object[path.filename().string()] = (int)result.valid.size();
      ++summary.outputs_written;
      log.event("object-done", {{"file", path.filename().string()},
                                {"valid", (int)result.valid.size()},
                                {"status_counts", status_counts}});
    }
  }

  summary.details = {{"valid_grasps", total_valid}, {"per_file", per_object}};
  update_manifest(config, summary);
  log.event("stage-done", {{"written", summary.outputs_written},
                           {"skipped", summary.outputs_skipped},
                           {"valid_grasps", total_valid}});
  return summary;
}

// ---------------------------------------------------------------------------
// Stage 2: scene composition + grasp transfer/filter

StageSummary cmd_gen_scenes(const PipelineConfig& config, int jobs) {
  ensure_manifest(config);
  const std::string hash = config_hash_hex(config);
  const fs::path out_dir(config.out_dir);
  const fs::path grasp_dir = out_dir / "grasps";
  const fs::path scene_dir = out_dir / "scenes";
  fs::create_directories(scene_dir);
  StageLog log(out_dir, "gen-scenes", config.seed);

  ObjectLibrary lib = build_object_library(config);
  HandDescription hand = load_hand(config.hand_path, config.contact_samples_per_link);
  ObjectGeometryCache cache(lib, config.sdf_cell, config.sdf_margin);

  GraspSets sets;
  for (const ObjectEntry& entry : lib)
    for (double scale : config.scales) {
      nlohmann::json j = load_stamped(grasp_dir / grasp_file_name(entry.name, scale),
                                      hash, "gen-grasps");
      auto& dst = sets[{entry.object_id, scale}];
      for (const auto& jg : j.at("grasps")) dst.push_back(grasp_from_json(jg));
    }

  StageSummary summary;
  summary.stage = "gen-scenes";
  nlohmann::json per_scene = nlohmann::json::object();
  std::map<std::string, int> removal_counts;
  int total_instances = 0, total_kept = 0;

  for (int s = 0; s < config.n_scenes; ++s) {
    const std::string id = scene_id_for(s);
    const fs::path path = scene_dir / (id + ".json");
    if (output_is_current(path, hash)) {
      ++summary.outputs_skipped;
      SceneSpec scene = load_scene_with_grasps(scene_dir, id, hash);
      int kept = 0;
      for (const auto& v : scene.grasps) kept += (int)v.size();
      total_instances += (int)scene.instances.size();
      total_kept += kept;
      per_scene[id] = {{"instances", (int)scene.instances.size()}, {"grasps", kept}};
      log.event("skip", {{"scene", id}});
      continue;
    }

    ComposeParams params;
    const int span = config.scene_count_max - config.scene_count_min + 1;
    Rng count_rng(mix_seed(config.seed, fnv1a("gen-scenes/count/" + id)));
    params.count = config.scene_count_min + (int)count_rng.uniform_index(span);
    params.workspace_x = config.workspace_x;
    params.workspace_y = config.workspace_y;
    params.scales = config.scales;
    params.clearance = config.scene_clearance;
    params.max_retries = config.scene_max_retries;

    SceneSpec scene = compose_scene(
        lib, params, mix_seed(config.seed, fnv1a("gen-scenes/compose/" + id)));
    scene.id = id;

    SceneGeometry geom = cache.geometry(scene);
    validate_scene(scene, geom, config.scene_count_min, config.scene_count_max,
                   config.neighbor_pen_tol);

    std::vector<std::vector<GraspRecord>> candidates = transfer_grasps(scene, sets);
    FilterParams fp;
    fp.approach_distance = config.approach_distance;
    fp.approach_steps = config.approach_steps;
    fp.neighbor_pen_tol = config.neighbor_pen_tol;
    fp.target_pen_tol = config.admittance.pen_tol;
    fp.jobs = jobs;
    FilterResult fr = filter_scene_grasps(scene, candidates, hand, geom, fp);
    scene.grasps = fr.kept;

    int transferred = 0, kept = 0;
    for (const auto& v : candidates) transferred += (int)v.size();
    for (const auto& v : fr.kept) kept += (int)v.size();
    std::map<std::string, int> causes;
    for (const auto& r : fr.removed) ++causes[r.cause];
    for (const auto& [cause, n] : causes) removal_counts[cause] += n;

    scene.grasp_files.clear();
    for (size_t i = 0; i < scene.instances.size(); ++i) {
      const std::string side_name = sidecar_name(id, (int)i);
      nlohmann::json side{{"schema_version", 1},
                          {"config_hash", hash},
                          {"scene", id},
                          {"instance", (int)i},
                          {"object_id", scene.instances[i].object_id},
                          {"name", scene.instances[i].name},
                          {"scale", scene.instances[i].scale}};
      nlohmann::json grasps = nlohmann::json::array();
      for (const GraspRecord& g : scene.grasps[i]) grasps.push_back(grasp_to_json(g));
      side["grasps"] = std::move(grasps);
      write_json_atomic(scene_dir / side_name, side);
      scene.grasp_files.push_back(side_name);
    }

    nlohmann::json j = scene_to_json(scene);
    j["config_hash"] = hash;
    write_json_atomic(path, j);  // written last: commits the sidecars

    total_instances += (int)scene.instances.size();
    total_kept += kept;
    per_scene[id] = {{"instances", (int)scene.instances.size()}, {"grasps", kept}};
    ++summary.outputs_written;
    log.event("scene-done", {{"scene", id},
                             {"instances", (int)scene.instances.size()},
                             {"transferred", transferred},
                             {"kept", kept},
                             {"removed", causes}});
  }

  summary.details = {{"scenes", config.n_scenes},
                     {"instances", total_instances},
                     {"grasps_kept", total_kept},
                     {"removals", removal_counts},
                     {"per_scene", per_scene}};
  update_manifest(config, summary);
  log.event("stage-done", {{"written", summary.outputs_written},
                           {"skipped", summary.outputs_skipped}});
  return summary;
}

// ---------------------------------------------------------------------------
// Stage 3: rendering + labeling

StageSummary cmd_render_label(const PipelineConfig& config, int jobs) {
  ensure_manifest(config);
  const std::string hash = config_hash_hex(config);
  const fs::path out_dir(config.out_dir);
  const fs::path scene_dir = out_dir / "scenes";
  const fs::path samples_dir = out_dir / "samples";
  fs::create_directories(samples_dir);
  StageLog log(out_dir, "render-label", config.seed);

  ObjectLibrary lib = build_object_library(config);
  ObjectGeometryCache cache(lib, config.sdf_cell, config.sdf_margin);
  std::vector<CameraModel> cameras = sample_viewpoints(
      config.n_views, config.view_radius,
      config.elev_lo_deg * std::numbers::pi / 180.0,
      config.elev_hi_deg * std::numbers::pi / 180.0, Vec3::Zero(),
      intrinsics_from(config));

  StageSummary summary;
  summary.stage = "render-label";
  nlohmann::json per_scene = nlohmann::json::object();
  long long label_counts[3] = {0, 0, 0};
  long long total_points = 0;
  int total_views = 0, total_dropped = 0;

  for (int s = 0; s < config.n_scenes; ++s) {
    const std::string id = scene_id_for(s);
    const fs::path scene_samples = samples_dir / id;
    const fs::path manifest_path = scene_samples / "manifest.json";
    nlohmann::json views = nlohmann::json::array();

    if (output_is_current(manifest_path, hash)) {
      ++summary.outputs_skipped;
      views = load_json(manifest_path.string()).at("views");
      log.event("skip", {{"scene", id}});
    } else {
      SceneSpec scene = load_scene_with_grasps(scene_dir, id, hash);
      SceneGeometry geom = cache.geometry(scene);
      for (int k = 0; k < config.views_per_scene; ++k) {
        const int idx =
            (int)(((long long)k * config.n_views / config.views_per_scene + s) %
                  config.n_views);
        const CameraModel& cam = cameras[idx];
        const std::string view_name = view_name_for(k);

        RenderParams rp;
        rp.include_plane = true;
        rp.jobs = jobs;
        rp.noise_sigma = config.depth_noise_sigma;
        rp.noise_seed =
            mix_seed(config.seed, fnv1a("render-noise/" + id + "/" + view_name));
        RenderedView view = render_depth(scene, geom, cam, rp);

        LabelParams lp;
        lp.k_candidates = config.k_candidates;
        lp.sigma_max = config.sigma_max;
        std::vector<DropRecord> dropped;
        LabeledCloudSample sample = make_sample(
            view, cam, scene, config.n_points,
            mix_seed(config.seed, fnv1a("render-label/" + id + "/" + view_name)), lp,
            &dropped);
        std::vector<char> oof;
        sample.occlusion = occlusion_rates(scene, geom, cam, view, &oof, jobs);
        sample.out_of_frustum.assign(oof.begin(), oof.end());
        write_sample(sample, scene_samples / view_name, &view);

        long long counts[3] = {0, 0, 0};
        for (uint8_t l : sample.labels) ++counts[l];
        nlohmann::json jv{{"name", view_name},
                          {"viewpoint_index", cam.viewpoint_index},
                          {"points", (int)sample.size()},
                          {"labels", {counts[0], counts[1], counts[2]}},
                          {"table_rows", (int)sample.table.size()},
                          {"dropped", (int)dropped.size()},
                          {"occlusion", sample.occlusion}};
        views.push_back(std::move(jv));
        log.event("view-done", {{"scene", id},
                                {"view", view_name},
                                {"points", (int)sample.size()},
                                {"dropped", (int)dropped.size()}});
      }
      write_json_atomic(manifest_path, nlohmann::json{{"schema_version", 1},
                                                      {"config_hash", hash},
                                                      {"scene", id},
                                                      {"views", views}});
      ++summary.outputs_written;
    }

    long long scene_labels[3] = {0, 0, 0};
    long long scene_points = 0;
    int scene_dropped = 0;
    for (const auto& jv : views) {
      for (int l = 0; l < 3; ++l)
        scene_labels[l] += jv.at("labels").at(l).get<long long>();
      scene_points += jv.at("points").get<long long>();
      scene_dropped += jv.at("dropped").get<int>();
    }
    for (int l = 0; l < 3; ++l) label_counts[l] += scene_labels[l];
    total_points += scene_points;
    total_views += (int)views.size();
    total_dropped += scene_dropped;
    per_scene[id] = {{"views", (int)views.size()},
                     {"points", scene_points},
                     {"labels", {scene_labels[0], scene_labels[1], scene_labels[2]}},
                     {"dropped", scene_dropped}};
  }

  summary.details = {{"views", total_views},
                     {"points", total_points},
                     {"labels", {label_counts[0], label_counts[1], label_counts[2]}},
                     {"dropped", total_dropped},
                     {"per_scene", per_scene}};
  update_manifest(config, summary);
  log.event("stage-done", {{"written", summary.outputs_written},
                           {"skipped", summary.outputs_skipped}});
  return summary;
}

// ---------------------------------------------------------------------------
// Stage 4: clearance-protocol evaluation

StageSummary cmd_eval(const PipelineConfig& config, int jobs) {
  (void)jobs;  // the protocol is inherently sequential
  ensure_manifest(config);
  const std::string hash = config_hash_hex(config);
  const fs::path out_dir(config.out_dir);
  const fs::path scene_dir = out_dir / "scenes";
  const fs::path eval_dir = out_dir / "eval";
  fs::create_directories(eval_dir);
  StageLog log(out_dir, "eval", config.seed);

  StageSummary summary;
  summary.stage = "eval";
  const fs::path report_path = eval_dir / "report.json";

  if (output_is_current(report_path, hash)) {
    ++summary.outputs_skipped;
    summary.details = load_json(report_path.string()).at("aggregate");
    update_manifest(config, summary);
    log.event("skip", {{"file", "report.json"}});
    return summary;
  }

  ObjectLibrary lib = build_object_library(config);
  HandDescription hand = load_hand(config.hand_path, config.contact_samples_per_link);
  ObjectGeometryCache cache(lib, config.sdf_cell, config.sdf_margin);

  ClearanceConfig cc;
  cc.approach_distance = config.approach_distance;
  cc.approach_steps = config.approach_steps;
  cc.lift_height = config.lift_height;
  cc.lift_steps = config.lift_steps;
  cc.success_height = config.lift_height;
  cc.max_failures = config.max_failures;
  cc.workspace_x = config.workspace_x;
  cc.workspace_y = config.workspace_y;
  cc.admittance = config.admittance;
  cc.stability = config.stability;

  MetricReport aggregate;
  aggregate.config_echo = {{"scenes", config.n_scenes}};
  nlohmann::json scene_reports = nlohmann::json::array();
  std::vector<GraspRecord> all_kept;

  for (int s = 0; s < config.n_scenes; ++s) {
    const std::string id = scene_id_for(s);
    SceneSpec scene = load_scene_with_grasps(scene_dir, id, hash);
    SceneGeometry geom = cache.geometry(scene);
    for (const auto& v : scene.grasps)
      all_kept.insert(all_kept.end(), v.begin(), v.end());

    // Synthetic per-grasp scores standing in for a ranking model: fixed per
    // (config seed, scene, instance, grasp index), drawn once up front.
    std::vector<std::vector<double>> scores(scene.grasps.size());
    Rng score_rng(mix_seed(config.seed, fnv1a("eval/scores/" + id)));
    for (size_t i = 0; i < scene.grasps.size(); ++i) {
      scores[i].resize(scene.grasps[i].size());
      for (double& v : scores[i]) v = score_rng.uniform();
    }

    GraspSource source = [&](const std::vector<int>& remaining) {
      std::vector<ScoredGrasp> offers;
      for (int i : remaining) {
        if (i < 0 || i >= (int)scene.grasps.size()) continue;
        for (size_t g = 0; g < scene.grasps[i].size(); ++g)
          offers.push_back({scene.grasps[i][g], i, (int)g, scores[i][g]});
      }
      return offers;
    };

    MetricReport r = run_clearance_protocol(scene, geom, source, hand, cc);
    r.config_echo = {{"scene", id}};

    aggregate.attempts += r.attempts;
    aggregate.successes += r.successes;
    aggregate.objects_total += r.objects_total;
    aggregate.objects_cleared += r.objects_cleared;
    for (const auto& a : r.attempts_log) {
      aggregate.attempts_log.push_back(a);
      log.event("attempt", {{"scene", id},
                            {"instance", a.instance},
                            {"grasp_index", a.grasp_index},
                            {"outcome", a.outcome},
                            {"pd_mm", a.pd_mm},
                            {"pv_mm3", a.pv_mm3},
                            {"elapsed_s", a.elapsed_s}});
    }
    aggregate.mean_decision_s += r.mean_decision_s * r.attempts;

    scene_reports.push_back(report_to_json(strip_timing(r)));
    log.event("scene-done", {{"scene", id},
                             {"attempts", r.attempts},
                             {"cleared", r.objects_cleared},
                             {"total", r.objects_total}});
  }

  if (aggregate.attempts > 0) {
    aggregate.sr_pct = 100.0 * aggregate.successes / aggregate.attempts;
    aggregate.mean_decision_s /= aggregate.attempts;
    double pd_sum = 0, pv_sum = 0;
    for (const auto& a : aggregate.attempts_log) {
      pd_sum += a.pd_mm;
      pv_sum += a.pv_mm3;
    }
    aggregate.pd_mean_mm = pd_sum / aggregate.attempts;
    aggregate.pv_mean_mm3 = pv_sum / aggregate.attempts;
    double pd_var = 0, pv_var = 0;
    for (const auto& a : aggregate.attempts_log) {
      pd_var += (a.pd_mm - aggregate.pd_mean_mm) * (a.pd_mm - aggregate.pd_mean_mm);
      pv_var += (a.pv_mm3 - aggregate.pv_mean_mm3) * (a.pv_mm3 - aggregate.pv_mean_mm3);
    }
    aggregate.pd_var_mm2 = pd_var / aggregate.attempts;
    aggregate.pv_var_mm6 = pv_var / aggregate.attempts;
  }
  if (aggregate.objects_total > 0)
    aggregate.cr_pct = 100.0 * aggregate.objects_cleared / aggregate.objects_total;
  if (all_kept.size() >= 2) {
    try {
      aggregate.diversity_pct = diversity(all_kept);
    } catch (const std::exception&) {
      // degenerate grasp set: leave NaN
    }
  }

  MetricReport clean = strip_timing(aggregate);
  nlohmann::json report{{"schema_version", 1},
                        {"config_hash", hash},
                        {"aggregate", report_to_json(clean)},
                        {"scenes", scene_reports}};
  write_json_atomic(report_path, report);

  std::ostringstream csv;
  csv.precision(17);
  csv << "scene,attempt,instance,grasp_index,score,outcome,pd_mm,pv_mm3\n";
  for (const auto& js : scene_reports)
    for (const auto& ja : js.at("attempts_log"))
      csv << js.at("config").at("scene").get<std::string>() << ","
          << ja.at("attempt").get<int>() << "," << ja.at("instance").get<int>() << ","
          << ja.at("grasp_index").get<int>() << "," << ja.at("score").get<double>()
          << "," << ja.at("outcome").get<std::string>() << ","
          << ja.at("pd_mm").get<double>() << "," << ja.at("pv_mm3").get<double>()
          << "\n";
  write_text_file((eval_dir / "report.csv").string(), csv.str());
  write_text_file((eval_dir / "report.txt").string(), report_table(clean));

  ++summary.outputs_written;
  summary.details = report_to_json(clean);
  summary.details.erase("attempts_log");
  summary.report_text = report_table(aggregate);
  update_manifest(config, summary);
  log.event("stage-done", {{"attempts", aggregate.attempts},
                           {"sr_pct", aggregate.sr_pct},
                           {"cr_pct", aggregate.cr_pct},
                           {"mean_decision_s", aggregate.mean_decision_s}});
  return summary;
}

// ---------------------------------------------------------------------------
// Stage 5: dataset statistics

StageSummary cmd_stats(const PipelineConfig& config) {
  ensure_manifest(config);
  const std::string hash = config_hash_hex(config);
  const fs::path out_dir(config.out_dir);
  const fs::path stats_dir = out_dir / "stats";
  fs::create_directories(stats_dir);
  StageLog log(out_dir, "stats", config.seed);

  ObjectLibrary lib = build_object_library(config);

  struct CategoryStat {
    int objects = 0;  // (object, scale) variants with an artifact
    int grasps = 0;
  };
  std::map<std::string, CategoryStat> categories;
  std::map<std::string, int> patterns;
  std::map<std::string, int> kinds;
  int total_grasps = 0;
  bool any_grasp_file = false;

  for (const ObjectEntry& entry : lib) {
    const std::string category = class_hint_for(entry.name);
    for (double scale : config.scales) {
      const fs::path path =
          out_dir / "grasps" / grasp_file_name(entry.name, scale);
      if (!output_is_current(path, hash)) continue;
      any_grasp_file = true;
      nlohmann::json j = load_json(path.string());
      auto& cat = categories[category];
      ++cat.objects;
      for (const auto& jg : j.at("grasps")) {
        GraspRecord g = grasp_from_json(jg);
        ++cat.grasps;
        ++total_grasps;
        ++patterns[pattern_name(g.finger_mask)];
        ++kinds[g.constraint.kind == ConstraintKind::circular ? "circular"
                                                              : "rectangular"];
      }
    }
  }
  if (!any_grasp_file)
    throw std::runtime_error("no grasp artifacts under " +
                             (out_dir / "grasps").string() +
                             "; run gen-grasps first");

  // Scene-level counts (optional: present once gen-scenes ran).
  int scenes_built = 0, scene_instances = 0, scene_grasps = 0;
  for (int s = 0; s < config.n_scenes; ++s) {
    const fs::path path = out_dir / "scenes" / (scene_id_for(s) + ".json");
    if (!output_is_current(path, hash)) continue;
    SceneSpec scene =
        load_scene_with_grasps(out_dir / "scenes", scene_id_for(s), hash);
    ++scenes_built;
    scene_instances += (int)scene.instances.size();
    for (const auto& v : scene.grasps) scene_grasps += (int)v.size();
  }

  // Label balance (optional: present once render-label ran).
  long long label_counts[3] = {0, 0, 0};
  int views = 0;
  for (int s = 0; s < config.n_scenes; ++s) {
    const fs::path path =
        out_dir / "samples" / scene_id_for(s) / "manifest.json";
    if (!output_is_current(path, hash)) continue;
    nlohmann::json j = load_json(path.string());
    for (const auto& jv : j.at("views")) {
      ++views;
      for (int l = 0; l < 3; ++l)
        label_counts[l] += jv.at("labels").at(l).get<long long>();
    }
  }
  const long long labeled_points = label_counts[0] + label_counts[1] + label_counts[2];

  nlohmann::json jcat = nlohmann::json::object();
  for (const auto& [name, c] : categories)
    jcat[name] = {{"objects", c.objects},
                  {"grasps", c.grasps},
                  {"grasp_pct", total_grasps ? 100.0 * c.grasps / total_grasps : 0.0}};
  nlohmann::json jpat = nlohmann::json::object();
  for (const auto& [name, n] : patterns)
    jpat[name] = {{"count", n},
                  {"pct", total_grasps ? 100.0 * n / total_grasps : 0.0}};
  nlohmann::json jkind = nlohmann::json::object();
  for (const auto& [name, n] : kinds)
    jkind[name] = {{"count", n},
                   {"pct", total_grasps ? 100.0 * n / total_grasps : 0.0}};

  nlohmann::json jstats{{"schema_version", 1},
                        {"config_hash", hash},
                        {"categories", jcat},
                        {"patterns", jpat},
                        {"constraint_kinds", jkind},
                        {"total_grasps", total_grasps},
                        {"scenes", {{"built", scenes_built},
                                    {"instances", scene_instances},
                                    {"grasps", scene_grasps}}}};
  nlohmann::json jbal{{"views", views}, {"points", labeled_points}};
  if (labeled_points > 0) {
    jbal["label_counts"] = {label_counts[0], label_counts[1], label_counts[2]};
    jbal["label0_fraction"] = (double)label_counts[0] / labeled_points;
    jbal["label0_above_0.9"] = (double)label_counts[0] / labeled_points > 0.9;
  }
  jstats["label_balance"] = jbal;
  write_json_atomic(stats_dir / "stats.json", jstats);

  std::ostringstream dist;
  dist.precision(17);
  dist << "category,objects,grasps,grasp_pct\n";
  for (const auto& [name, c] : categories)
    dist << name << "," << c.objects << "," << c.grasps << ","
         << (total_grasps ? 100.0 * c.grasps / total_grasps : 0.0) << "\n";
  write_text_file((stats_dir / "distribution.csv").string(), dist.str());

  std::ostringstream pat;
  pat.precision(17);
  pat << "pattern,count,pct\n";
  for (const auto& [name, n] : patterns)
    pat << name << "," << n << ","
        << (total_grasps ? 100.0 * n / total_grasps : 0.0) << "\n";
  write_text_file((stats_dir / "patterns.csv").string(), pat.str());

  std::ostringstream bal;
  bal.precision(17);
  bal << "label,points,fraction\n";
  for (int l = 0; l < 3; ++l)
    bal << l << "," << label_counts[l] << ","
        << (labeled_points ? (double)label_counts[l] / labeled_points : 0.0) << "\n";
  write_text_file((stats_dir / "label_balance.csv").string(), bal.str());

  std::ostringstream table;
  table.setf(std::ios::fixed);
  table.precision(1);
  table << "category              objects  grasps  share\n";
  for (const auto& [name, c] : categories) {
    table << name;
    for (size_t i = name.size(); i < 22; ++i) table << ' ';
    table << c.objects << "        " << c.grasps << "     "
          << (total_grasps ? 100.0 * c.grasps / total_grasps : 0.0) << "%\n";
  }
  table << "\npattern               count   share\n";
  for (const auto& [name, n] : patterns) {
    table << name;
    for (size_t i = name.size(); i < 22; ++i) table << ' ';
    table << n << "     " << (total_grasps ? 100.0 * n / total_grasps : 0.0)
          << "%\n";
  }
  table << "\nscenes built " << scenes_built << ", instances " << scene_instances
        << ", scene grasps " << scene_grasps << "\n";
  if (labeled_points > 0) {
    double l0 = (double)label_counts[0] / labeled_points;
    table << "label balance over " << views << " views, " << labeled_points
          << " points: label0 " << 100.0 * l0 << "%, label1 "
          << 100.0 * label_counts[1] / labeled_points << "%, label2 "
          << 100.0 * label_counts[2] / labeled_points << "% (label0 > 90%: "
          << (l0 > 0.9 ? "yes" : "NO") << ")\n";
  } else {
    table << "label balance: no labeled samples yet (run render-label)\n";
  }

  StageSummary summary;
  summary.stage = "stats";
  summary.outputs_written = 4;
  summary.details = jstats;
  summary.details.erase("config_hash");
  summary.report_text = table.str();
  update_manifest(config, summary);
  log.event("stage-done", {{"total_grasps", total_grasps},
                           {"views", views},
                           {"points", labeled_points}});
  return summary;
}

// ---------------------------------------------------------------------------
// Loss self-test

namespace {

Mat3 expmap(const Vec3& w) {
  const double a = w.norm();
  if (a < 1e-300) return Mat3::Identity();
  return Eigen::AngleAxisd(a, w / a).toRotationMatrix();
}

}  // namespace

LossSelfTest run_losses_selftest(const LossWeights& weights) {
  LossSelfTest t;
  auto closed_form = [&](const std::string& name, double value, double expected,
                         double tol) {
    double err = std::abs(value - expected);
    t.rows.push_back({name, value, expected, err, err <= tol});
  };
  auto gradient = [&](const std::string& name, double max_rel_err, double tol) {
    t.rows.push_back({name, max_rel_err, 0.0, max_rel_err, max_rel_err < tol});
  };

  {  // classification: exact zero at perfect prediction
    Eigen::MatrixX2d probs(3, 2);
    probs << 1, 0, 0, 1, 0, 1;
    closed_form("bce perfect prediction", loss_gp(probs, {0, 1, 2}, weights), 0.0,
                0.0);
  }
  {  // single reference point at p_hat = 0.5 -> w2 * ln 2
    Eigen::MatrixX2d probs(1, 2);
    probs << 0.5, 0.5;
    closed_form("bce reference at p=0.5", loss_gp(probs, {2}, weights),
                weights.class_weights[2] * std::numbers::ln2, 1e-9);
  }
  {  // rotation: zero at perfect for a mixed weight
    std::vector<Mat3> r{Mat3::Identity()};
    closed_form("rotation perfect prediction", loss_rotation(r, r, 0.5), 0.0, 0.0);
  }
  {  // geodesic term returns the rotation angle
    const double angle = 0.7;
    Mat3 pred =
        Eigen::AngleAxisd(angle, Vec3(1, 2, 3).normalized()).toRotationMatrix();
    closed_form("rotation geodesic angle",
                loss_rotation({pred}, {Mat3::Identity()}, 1.0), angle, 1e-9);
  }
  {  // Frobenius term at 180 degrees about z -> 8
    Mat3 pred = Eigen::AngleAxisd(std::numbers::pi, Vec3::UnitZ()).toRotationMatrix();
    closed_form("rotation frobenius 180deg",
                loss_rotation({pred}, {Mat3::Identity()}, 0.0), 8.0, 1e-9);
  }
  {  // offset: zero at perfect
    std::vector<Vec3> v{Vec3(0.1, -0.2, 0.3)};
    closed_form("offset perfect prediction", loss_offset(v, v, weights.epsilon), 0.0,
                0.0);
  }
  {  // componentwise relative L1 worked example (vanishing epsilon)
    std::vector<Vec3> pred{Vec3(1.1, 0.9, 1.0)}, gt{Vec3(1.0, 1.0, 1.0)};
    closed_form("offset relative L1 example", loss_offset(pred, gt, 1e-12),
                0.2 / 3.0, 1e-9);
  }
  {  // joints: exact zero and unit MSE
    Eigen::MatrixXd gt = Eigen::MatrixXd::Zero(4, 20);
    closed_form("joints perfect prediction", loss_joints(gt, gt), 0.0, 0.0);
    Eigen::MatrixXd pred = Eigen::MatrixXd::Ones(4, 20);
    closed_form("joints unit offset", loss_joints(pred, gt), 1.0, 1e-12);
  }

  Rng rng(20260814);
  {  // gradient of the joint MSE
    Eigen::MatrixXd pred(4, 20), gt(4, 20);
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 20; ++c) {
        pred(r, c) = rng.uniform(-1, 1);
        gt(r, c) = rng.uniform(-1, 1);
      }
    Eigen::MatrixXd g = loss_joints_grad(pred, gt);
    Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(pred.data(), pred.size());
    Eigen::VectorXd grad = Eigen::Map<const Eigen::VectorXd>(g.data(), g.size());
    auto f = [&](const Eigen::VectorXd& v) {
      Eigen::MatrixXd m = Eigen::Map<const Eigen::MatrixXd>(v.data(), 4, 20);
      return loss_joints(m, gt);
    };
    gradient("grad joints mse", finite_diff_check(f, x, grad), 1e-6);
  }
  {  // gradient of the relative-L1 offset away from zero targets
    std::vector<Vec3> pred, gt;
    for (int i = 0; i < 8; ++i) {
      pred.push_back(Vec3(rng.uniform(0.5, 1.5), rng.uniform(0.5, 1.5),
                          rng.uniform(0.5, 1.5)));
      gt.push_back(Vec3(rng.uniform(0.8, 1.2), rng.uniform(0.8, 1.2),
                        rng.uniform(0.8, 1.2)));
    }
    std::vector<Vec3> g = loss_offset_grad(pred, gt, weights.epsilon);
    Eigen::VectorXd x(3 * pred.size()), grad(3 * pred.size());
    for (size_t i = 0; i < pred.size(); ++i) {
      x.segment<3>(3 * i) = pred[i];
      grad.segment<3>(3 * i) = g[i];
    }
    auto f = [&](const Eigen::VectorXd& v) {
      std::vector<Vec3> p(pred.size());
      for (size_t i = 0; i < p.size(); ++i) p[i] = v.segment<3>(3 * i);
      return loss_offset(p, gt, weights.epsilon);
    };
    gradient("grad offset relative L1", finite_diff_check(f, x, grad), 1e-6);
  }
  {  // gradient of the geodesic rotation loss at 90 degrees
    Mat3 gt = Eigen::AngleAxisd(rng.uniform(0, 3), Vec3(1, -1, 2).normalized())
                  .toRotationMatrix();
    Mat3 pred =
        gt *
        Eigen::AngleAxisd(std::numbers::pi / 2, Vec3(0, 1, 1).normalized())
            .toRotationMatrix();
    Vec3 g = loss_rotation_grad_rotvec(pred, gt, 1.0);
    auto f = [&](const Eigen::VectorXd& v) {
      return loss_rotation({pred * expmap(Vec3(v))}, {gt}, 1.0);
    };
    gradient("grad rotation geodesic 90deg",
             finite_diff_check(f, Eigen::VectorXd::Zero(3), Eigen::VectorXd(g)),
             1e-4);
  }

  t.pass = !t.rows.empty();
  for (const auto& r : t.rows) t.pass = t.pass && r.pass;
  return t;
}

std::string selftest_table(const LossSelfTest& t) {
  std::ostringstream out;
  out << "check                            value            expected         error        result\n";
  out.setf(std::ios::scientific);
  out.precision(6);
  for (const auto& r : t.rows) {
    out << r.name;
    for (size_t i = r.name.size(); i < 33; ++i) out << ' ';
    out << r.value << "     " << r.expected << "     ";
    out.precision(1);
    out << r.error;
    out.precision(6);
    out << "      " << (r.pass ? "pass" : "FAIL") << "\n";
  }
  out << (t.pass ? "ALL CHECKS PASSED" : "CHECKS FAILED") << "\n";
  return out.str();
}

}  // namespace dexforge
