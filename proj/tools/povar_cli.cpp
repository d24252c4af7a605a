#include "povar/bal_io.hpp"
#include "povar/parallel.hpp"
#include "povar/pipeline.hpp"
#include "povar/synth.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"Initialization-free bundle adjustment"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off");
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads per problem (0: automatic)");

  povar::RunSpec run;
  std::string stage = "full";
  std::string stage1_solver = "povar";
  std::string stage2_solver = "ripoba";
  auto* solve = app.add_subcommand("solve", "Run the stratified pipeline on BAL files");
  solve->add_option("inputs", run.inputs, "BAL problem files (.txt or .gz)")->required();
  solve->add_option("--seed", run.seed, "Random initialization seed");
  solve->add_option("--stage", stage, "stage1|stage2|full|metric")->capture_default_str();
  solve->add_flag_callback("--stage1", [&] { stage = "stage1"; }, "Shorthand for --stage stage1");
  solve->add_flag_callback("--stage2", [&] { stage = "stage2"; }, "Shorthand for --stage stage2");
  solve->add_option("--solver,--stage1-solver", stage1_solver, "povar|poba|iterative|direct")
      ->capture_default_str();
  solve->add_option("--stage2-solver", stage2_solver, "ripoba|ripcg")->capture_default_str();
  solve->add_option("--eta", run.config.pose.eta, "pOSE trade-off")->capture_default_str();
  solve->add_option("--lambda0", run.config.initial_lambda)->capture_default_str();
  solve->add_option("--max-iterations", run.config.max_outer_iterations)->capture_default_str();
  solve->add_option("--function-tolerance", run.config.function_tolerance)
      ->capture_default_str();
  solve->add_option("--power-order", run.config.max_power_order)->capture_default_str();
  solve->add_option("--power-threshold", run.config.power_threshold)->capture_default_str();
  solve->add_option("--inner-iterations", run.config.max_inner_iterations)
      ->capture_default_str();
  solve->add_option("--pcg-tolerance", run.config.pcg_tolerance)->capture_default_str();
  solve->add_option("-o,--output-dir", run.output_dir,
                    "Output directory (default: $POVAR_OUTPUT_DIR or ./out)");
  solve->add_option("--jobs", run.jobs, "Problems solved concurrently")->capture_default_str();
  bool no_prune = false;
  solve->add_flag("--no-prune", no_prune, "Keep landmarks with fewer than two observations");

  povar::ProfileSpec profile;
  auto* prof = app.add_subcommand("profile", "Performance profiles from trace CSV files");
  prof->add_option("inputs", profile.inputs, "Trace CSV files")->required();
  prof->add_option("--tau", profile.taus, "Accuracy tolerance(s)")->capture_default_str();
  prof->add_option("--stage", profile.stage, "Trace stage label to profile")
      ->capture_default_str();
  prof->add_option("-o,--output", profile.output, "Profile CSV path (default: stdout)");

  povar::SynthOptions synth;
  std::string synth_out;
  auto* syn = app.add_subcommand("synth", "Write a synthetic BAL problem");
  syn->add_option("--cameras", synth.cameras)->capture_default_str();
  syn->add_option("--landmarks", synth.landmarks)->capture_default_str();
  syn->add_option("--noise", synth.noise, "Pixel noise standard deviation")
      ->capture_default_str();
  syn->add_option("--seed", synth.seed)->capture_default_str();
  syn->add_option("--visibility", synth.visibility)->capture_default_str();
  syn->add_option("--ring-radius", synth.ring_radius)->capture_default_str();
  syn->add_option("--cloud-sigma", synth.cloud_sigma)->capture_default_str();
  syn->add_option("--focal", synth.focal)->capture_default_str();
  syn->add_option("--height-jitter", synth.height_jitter)->capture_default_str();
  syn->add_option("-o,--output", synth_out, "Output path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : povar::exit_code::kConfig;
  }

  try {
    spdlog::set_level(spdlog::level::from_str(log_level));
    if (threads < 0) throw povar::ConfigError("--threads must be non-negative");
    if (threads > 0) povar::set_worker_count(threads);

    if (*solve) {
      run.stage = povar::parse_run_stage(stage);
      run.stage1_solver = povar::parse_stage1_solver(stage1_solver);
      run.stage2_solver = povar::parse_stage2_solver(stage2_solver);
      run.prune = !no_prune;
      return povar::run(run);
    }
    if (*prof) return povar::run_profile(profile);
    if (*syn) {
      povar::save_bal(synth_out, povar::synthesize(synth));
      return povar::exit_code::kOk;
    }
  } catch (const povar::ConfigError& e) {
    spdlog::error("{}", e.what());
    return povar::exit_code::kConfig;
  } catch (const std::invalid_argument& e) {
    spdlog::error("{}", e.what());
    return povar::exit_code::kConfig;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return povar::exit_code::kIo;
  }
  return povar::exit_code::kOk;
}
