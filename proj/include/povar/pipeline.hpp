#pragma once

#include "povar/evaluation.hpp"
#include "povar/metric_upgrade.hpp"
#include "povar/solvers.hpp"

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace povar {

namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kIo = 1;
inline constexpr int kParse = 2;
inline constexpr int kConfig = 3;
inline constexpr int kNumeric = 4;
}  // namespace exit_code

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class RunStage { kStage1, kStage2, kFull, kMetric };
/// povar: VarPro + power series; poba: joint LM + power series;
/// iterative: VarPro + PCG; direct: VarPro + sparse factorization.
enum class Stage1Solver { kPovar, kPoba, kIterative, kDirect };
/// ripoba: Riemannian + power series; ripcg: Riemannian + PCG.
enum class Stage2Solver { kRipoba, kRipcg };

RunStage parse_run_stage(const std::string& name);
Stage1Solver parse_stage1_solver(const std::string& name);
Stage2Solver parse_stage2_solver(const std::string& name);
std::string to_string(RunStage stage);
std::string to_string(Stage1Solver solver);
std::string to_string(Stage2Solver solver);

struct RunSpec {
  std::vector<std::string> inputs;
  std::uint64_t seed = 0;
  RunStage stage = RunStage::kFull;
  Stage1Solver stage1_solver = Stage1Solver::kPovar;
  Stage2Solver stage2_solver = Stage2Solver::kRipoba;
  /// Shared numeric settings; inner solver and mode come from the solver names.
  SolverConfig config;
  /// Empty: default_output_dir().
  std::string output_dir;
  int jobs = 1;
  bool prune = true;
};

/// $POVAR_OUTPUT_DIR if set, "out" otherwise.
std::string default_output_dir();

SolverConfig stage1_config(const RunSpec& spec);
SolverConfig stage2_config(const RunSpec& spec);

/// File name without directories and without .gz / .txt suffixes.
std::string problem_id_from_path(const std::string& path);

struct ProblemOutcome {
  int exit_code = exit_code::kOk;
  std::string problem_id;
  std::string output_dir;
  std::string error;
  std::vector<ConvergenceTrace> traces;
  std::optional<LmResult> stage1;
  std::optional<LmResult> stage2;
  std::optional<MetricUpgradeResult> metric;
};

/// Solves one problem in-process. Artifacts land in <output_dir>/<problem id>/:
/// trace.csv, state.txt, summary.json and, for the metric stage, metric.txt.
ProblemOutcome solve_problem(const BaProblem& problem, const std::string& problem_id,
                             const RunSpec& spec, const std::string& input_path = "");

/// Loads and solves every input (spec.jobs at a time); returns the largest
/// exit code.
int run(const RunSpec& spec);

struct ProfileSpec {
  std::vector<std::string> inputs;  // trace CSV files
  std::vector<double> taus{0.01};
  /// Only traces with this stage label enter the profile.
  std::string stage = "stage1";
  std::string output;  // profile CSV path; empty: stdout
};

int run_profile(const ProfileSpec& spec);

}  // namespace povar
