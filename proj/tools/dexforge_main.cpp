// SPDX-License-Identifier: Apache-2.0
//
// dexforge CLI: staged synthesis of a dexterous-grasp dataset plus its
// evaluation tooling. Every stage is deterministic per (config, seed) and
// resumable: outputs stamped with the current config hash are skipped.

#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "dexforge/pipeline.hpp"

namespace {

void print_summary(const dexforge::StageSummary& s) {
  std::cout << "[" << s.stage << "] written=" << s.outputs_written
            << " skipped=" << s.outputs_skipped;
  for (const char* key : {"valid_grasps", "grasps_kept", "views", "attempts"})
    if (s.details.contains(key))
      std::cout << " " << key << "=" << s.details.at(key).dump();
  std::cout << "\n";
  if (!s.report_text.empty()) std::cout << s.report_text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dexforge: dexterous-grasp dataset synthesis and evaluation"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  uint64_t seed = 0;
  int jobs = 1;

  auto add_common = [&](CLI::App* sub, bool config_required) {
    auto* opt = sub->add_option("--config", config_path, "pipeline config (JSON)");
    if (config_required) opt->required();
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--jobs", jobs, "worker threads")->check(CLI::Range(1, 256));
    sub->add_option("--out", out_dir, "override the output directory");
    return sub;
  };

  CLI::App* gen_grasps =
      add_common(app.add_subcommand("gen-grasps",
                                    "synthesize grasps for every (object, scale)"),
                 true);
  CLI::App* gen_scenes =
      add_common(app.add_subcommand("gen-scenes",
                                    "compose cluttered scenes and transfer grasps"),
                 true);
  CLI::App* render_label =
      add_common(app.add_subcommand("render-label",
                                    "render labeled single-view cloud samples"),
                 true);
  CLI::App* eval = add_common(
      app.add_subcommand("eval", "run the clearance protocol and report metrics"),
      true);
  CLI::App* stats = add_common(
      app.add_subcommand("stats", "summarize dataset distribution and label balance"),
      true);
  CLI::App* selftest = add_common(
      app.add_subcommand("losses-selftest",
                         "closed-form and gradient checks of the training losses"),
      false);

  CLI11_PARSE(app, argc, argv);
  CLI::App* sub = app.get_subcommands().front();

  try {
    if (sub == selftest) {
      dexforge::LossWeights weights;
      if (!config_path.empty())
        weights = dexforge::load_config(config_path).loss_weights;
      dexforge::LossSelfTest result = dexforge::run_losses_selftest(weights);
      std::cout << dexforge::selftest_table(result);
      return result.pass ? 0 : 1;
    }

    dexforge::PipelineConfig config = dexforge::load_config(config_path);
    if (sub->count("--seed")) config.seed = seed;
    if (!out_dir.empty()) config.out_dir = out_dir;
    config.validate();

    dexforge::StageSummary summary;
    if (sub == gen_grasps) summary = dexforge::cmd_gen_grasps(config, jobs);
    else if (sub == gen_scenes) summary = dexforge::cmd_gen_scenes(config, jobs);
    else if (sub == render_label) summary = dexforge::cmd_render_label(config, jobs);
    else if (sub == eval) summary = dexforge::cmd_eval(config, jobs);
    else if (sub == stats) summary = dexforge::cmd_stats(config);
    print_summary(summary);
    return 0;
  } catch (const std::exception& e) {
    nlohmann::json err{{"error", true},
                       {"stage", sub->get_name()},
                       {"message", e.what()}};
    std::cerr << err.dump() << "\n";
    return 1;
  }
}
