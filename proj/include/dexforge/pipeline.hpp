// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "dexforge/config.hpp"
#include "dexforge/labels.hpp"
#include "dexforge/metrics.hpp"
#include "dexforge/scene.hpp"

namespace dexforge {

// ---------------------------------------------------------------------------
// Object library construction
//
// Either loads every .obj/.stl mesh from config.object_dir or builds the
// procedural set named in config.object_names. Object ids are indices in
// name-sorted order; the capitalized name doubles as the class hint.

ObjectLibrary build_object_library(const PipelineConfig& config);

// Capitalized object name ("box" -> "Box"), the sampler's class-hint vocab.
std::string class_hint_for(const std::string& name);

// ---------------------------------------------------------------------------
// Stage entry points
//
// Every stage writes its artifacts under config.out_dir, stamps each with the
// config hash, and appends line-delimited progress records to
// out_dir/logs/<stage>.jsonl. Artifacts are deterministic per (config, seed);
// logs carry wall-clock timing and are exempt from that guarantee. On entry a
// stage refuses to run (throws std::runtime_error) when an existing manifest
// was produced by a different config hash; outputs already stamped with the
// current hash are kept and skipped.

struct StageSummary {
  std::string stage;
  int outputs_written = 0;
  int outputs_skipped = 0;   // already present with a matching config hash
  nlohmann::json details;    // stage-specific counters (deterministic)
  std::string report_text;   // human-readable table for the CLI; may carry timing
};

// Synthesizes grasps for every (object, scale) pair into
// out/grasps/<name>_s<scale tag>.json.
StageSummary cmd_gen_grasps(const PipelineConfig& config, int jobs = 1);

// Composes config.n_scenes scenes, transfers + filters the stage-1 grasps,
// and writes out/scenes/scene_NNNN.json plus per-instance grasp sidecars.
StageSummary cmd_gen_scenes(const PipelineConfig& config, int jobs = 1);

// Renders config.views_per_scene labeled single-view samples per scene into
// out/samples/<scene>/view_NNN/ with a per-scene manifest.
StageSummary cmd_render_label(const PipelineConfig& config, int jobs = 1);

// Runs the clearance protocol over every scene (scores drawn from the
// config seed) and writes out/eval/report.{json,csv,txt}.
StageSummary cmd_eval(const PipelineConfig& config, int jobs = 1);

// Aggregates grasp/category/pattern distribution and the label balance into
// out/stats/ (JSON + CSV plot data).
StageSummary cmd_stats(const PipelineConfig& config);

// ---------------------------------------------------------------------------
// Loss self-test (numeric reference of the training objective)

struct LossSelfTest {
  struct Row {
    std::string name;
    double value = 0.0;      // observed
    double expected = 0.0;   // closed form
    double error = 0.0;      // |value - expected| or max relative grad error
    bool pass = false;
  };
  std::vector<Row> rows;
  bool pass = false;
};

// Closed-form loss values plus finite-difference gradient checks.
LossSelfTest run_losses_selftest(const LossWeights& weights = {});
std::string selftest_table(const LossSelfTest& t);

// ---------------------------------------------------------------------------
// Shared manifest helpers (exposed for tests)

// Loads out/manifest.json if present and verifies its config hash matches;
// absent -> creates it. Throws on mismatch with an explanation.
nlohmann::json ensure_manifest(const PipelineConfig& config);

// Rewrites manifest with `stage` summary merged in (atomic tmp + rename).
void update_manifest(const PipelineConfig& config, const StageSummary& summary);

// Atomic JSON write: tmp file in the same directory, then rename.
void write_json_atomic(const std::filesystem::path& path, const nlohmann::json& j);

// Hex string of config.hash().
std::string config_hash_hex(const PipelineConfig& config);

}  // namespace dexforge
