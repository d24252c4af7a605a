#include "povar/pipeline.hpp"

#include "povar/bal_io.hpp"
#include "povar/parallel.hpp"
#include "povar/riemannian.hpp"
#include "povar/simd/kernels.hpp"

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

namespace povar {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kSchemaVersion = 1;

template <typename E>
E lookup(const std::string& name, std::initializer_list<std::pair<const char*, E>> table,
         const char* what) {
  for (const auto& [key, value] : table) {
    if (name == key) return value;
  }
  throw ConfigError(std::string("unknown ") + what + " '" + name + "'");
}

json config_json(const SolverConfig& c) {
  return {{"max_outer_iterations", c.max_outer_iterations},
          {"function_tolerance", c.function_tolerance},
          {"initial_lambda", c.initial_lambda},
          {"max_power_order", c.max_power_order},
          {"power_threshold", c.power_threshold},
          {"max_inner_iterations", c.max_inner_iterations},
          {"pcg_tolerance", c.pcg_tolerance},
          {"inner_solver", to_string(c.inner_solver)},
          {"mode", to_string(c.mode)},
          {"lambda_increase", c.lambda_increase},
          {"lambda_decrease", c.lambda_decrease},
          {"min_lambda", c.min_lambda},
          {"max_lambda", c.max_lambda},
          {"eta", c.pose.eta}};
}

json lm_json(const LmResult& r) {
  return {{"initial_cost", r.initial_cost}, {"final_cost", r.final_cost},
          {"iterations", r.iterations},     {"accepted_steps", r.accepted_steps},
          {"seconds", r.seconds},           {"converged", r.converged},
          {"termination", r.termination}};
}

void write_metric(const std::string& path, const MetricUpgradeResult& m) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out.precision(17);
  out << "cameras " << m.rotations.size() << "\n";
  for (std::size_t i = 0; i < m.rotations.size(); ++i) {
    const Mat3& r = m.rotations[i];
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) out << r(a, b) << ' ';
    }
    out << m.translations[i].x() << ' ' << m.translations[i].y() << ' '
        << m.translations[i].z() << "\n";
  }
  out << "points " << m.points.size() << "\n";
  for (const auto& p : m.points) out << p.x() << ' ' << p.y() << ' ' << p.z() << "\n";
}

/// f0 prepended at time 0; the remaining records shifted by one iteration and
/// by time_offset seconds.
ConvergenceTrace prepend_initial(const ConvergenceTrace& t, double f0, double time_offset,
                                 std::string stage) {
  ConvergenceTrace out;
  out.problem_id = t.problem_id;
  out.solver_id = t.solver_id;
  out.stage = std::move(stage);
  out.initial_cost = f0;
  out.records.push_back({0, f0, 0.0});
  for (const auto& r : t.records) {
    out.records.push_back({r.iteration + 1, r.cost, r.elapsed_seconds + time_offset});
  }
  return out;
}

}  // namespace

RunStage parse_run_stage(const std::string& name) {
  return lookup<RunStage>(name,
                          {{"stage1", RunStage::kStage1},
                           {"stage2", RunStage::kStage2},
                           {"full", RunStage::kFull},
                           {"metric", RunStage::kMetric}},
                          "stage");
}

Stage1Solver parse_stage1_solver(const std::string& name) {
  return lookup<Stage1Solver>(name,
                              {{"povar", Stage1Solver::kPovar},
                               {"poba", Stage1Solver::kPoba},
                               {"iterative", Stage1Solver::kIterative},
                               {"direct", Stage1Solver::kDirect}},
                              "stage-1 solver");
}

Stage2Solver parse_stage2_solver(const std::string& name) {
  return lookup<Stage2Solver>(
      name, {{"ripoba", Stage2Solver::kRipoba}, {"ripcg", Stage2Solver::kRipcg}},
      "stage-2 solver");
}

std::string to_string(RunStage stage) {
  switch (stage) {
    case RunStage::kStage1:
      return "stage1";
    case RunStage::kStage2:
      return "stage2";
    case RunStage::kFull:
      return "full";
    case RunStage::kMetric:
      return "metric";
  }
  return "unknown";
}

std::string to_string(Stage1Solver solver) {
  switch (solver) {
    case Stage1Solver::kPovar:
      return "povar";
    case Stage1Solver::kPoba:
      return "poba";
    case Stage1Solver::kIterative:
      return "iterative";
    case Stage1Solver::kDirect:
      return "direct";
  }
  return "unknown";
}

std::string to_string(Stage2Solver solver) {
  return solver == Stage2Solver::kRipoba ? "ripoba" : "ripcg";
}

std::string default_output_dir() {
  const char* env = std::getenv("POVAR_OUTPUT_DIR");
  return env && *env ? env : "out";
}

SolverConfig stage1_config(const RunSpec& spec) {
  SolverConfig c = spec.config;
  switch (spec.stage1_solver) {
    case Stage1Solver::kPovar:
      c.mode = LmMode::kVarPro;
      c.inner_solver = InnerSolver::kPower;
      break;
    case Stage1Solver::kPoba:
      c.mode = LmMode::kJoint;
      c.inner_solver = InnerSolver::kPower;
      break;
    case Stage1Solver::kIterative:
      c.mode = LmMode::kVarPro;
      c.inner_solver = InnerSolver::kPcg;
      break;
    case Stage1Solver::kDirect:
      c.mode = LmMode::kVarPro;
      c.inner_solver = InnerSolver::kDirect;
      break;
  }
  return c;
}

SolverConfig stage2_config(const RunSpec& spec) {
  SolverConfig c = spec.config;
  c.mode = LmMode::kJoint;
  c.inner_solver =
      spec.stage2_solver == Stage2Solver::kRipoba ? InnerSolver::kPower : InnerSolver::kPcg;
  return c;
}

std::string problem_id_from_path(const std::string& path) {
  std::string name = fs::path(path).filename().string();
  for (const char* suffix : {".gz", ".txt"}) {
    const std::string s(suffix);
    if (name.size() > s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0) {
      name.resize(name.size() - s.size());
    }
  }
  return name;
}

ProblemOutcome solve_problem(const BaProblem& problem, const std::string& problem_id,
                             const RunSpec& spec, const std::string& input_path) {
  const SolverConfig c1 = stage1_config(spec);
  const SolverConfig c2 = stage2_config(spec);
  try {
    c1.validate();
    c2.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }

  ProblemOutcome outcome;
  outcome.problem_id = problem_id;
  const fs::path dir =
      fs::path(spec.output_dir.empty() ? default_output_dir() : spec.output_dir) / problem_id;
  fs::create_directories(dir);
  outcome.output_dir = dir.string();

  const bool run1 = spec.stage != RunStage::kStage2;
  const bool run2 = spec.stage != RunStage::kStage1;
  const bool run_metric = spec.stage == RunStage::kMetric;
  const std::string s1 = to_string(spec.stage1_solver);
  const std::string s2 = to_string(spec.stage2_solver);

  json summary = {{"schema_version", kSchemaVersion},
                  {"problem", problem_id},
                  {"input", input_path},
                  {"counts",
                   {{"cameras", problem.num_cameras},
                    {"landmarks", problem.num_landmarks},
                    {"observations", problem.num_observations}}},
                  {"seed", spec.seed},
                  {"stage", to_string(spec.stage)},
                  {"solvers", {{"stage1", s1}, {"stage2", s2}}},
                  {"config", {{"stage1", config_json(c1)}, {"stage2", config_json(c2)}}},
                  {"simd", std::string(simd::to_string(simd::active().isa))},
                  {"threads", worker_count()}};

  ProjectiveState state;
  try {
    const ProjectiveState init = random_init(problem, spec.seed, c1.pose);
    state = init;
    // Stage-2 traces start from the projective cost of the lifted initial state.
    const double f0_projective = total_cost(lift_stage1_to_stage2(init), problem,
                                            Stage::kProjective, c2.pose);
    if (!std::isfinite(f0_projective) && run2) {
      spdlog::warn("{}: projective cost of the initial state is not finite", problem_id);
    }
    double stage1_seconds = 0.0;
    if (run1) {
      LmResult r = lm_minimize(problem, state, Stage::kPose, c1);
      r.trace.problem_id = problem_id;
      r.trace.solver_id = s1;
      r.trace.stage = "stage1";
      stage1_seconds = r.seconds;
      state = r.state;
      outcome.traces.push_back(r.trace);
      summary["stage1"] = lm_json(r);
      spdlog::info("{}: stage 1 ({}) cost {:.6e} -> {:.6e} in {} iterations", problem_id, s1,
                   r.initial_cost, r.final_cost, r.iterations);
      outcome.stage1 = std::move(r);
    }
    if (run2) {
      LmResult r = lm_minimize(problem, lift_stage1_to_stage2(state), Stage::kProjective, c2);
      r.trace.problem_id = problem_id;
      if (run1) {
        r.trace.solver_id = s1 + "+" + s2;
        outcome.traces.push_back(prepend_initial(r.trace, f0_projective, 0.0, "stage2"));
        outcome.traces.push_back(
            prepend_initial(r.trace, f0_projective, stage1_seconds, "stage1+2"));
      } else {
        r.trace.solver_id = s2;
        r.trace.stage = "stage2";
        outcome.traces.push_back(r.trace);
      }
      state = r.state;
      summary["stage2"] = lm_json(r);
      summary["stage2"]["initial_cost_before_stage1"] = f0_projective;
      spdlog::info("{}: stage 2 ({}) cost {:.6e} -> {:.6e} in {} iterations", problem_id, s2,
                   r.initial_cost, r.final_cost, r.iterations);
      outcome.stage2 = std::move(r);
    }
    if (run_metric) {
      MetricUpgradeResult m = upgrade(problem, state);
      summary["metric"] = {{"c", {m.ambiguity.c.x(), m.ambiguity.c.y(), m.ambiguity.c.z()}},
                           {"alphas", m.ambiguity.alphas},
                           {"cost", m.cost},
                           {"orthogonality_residual", m.orthogonality_residual},
                           {"iterations", m.iterations},
                           {"converged", m.converged},
                           {"flagged", m.flagged}};
      write_metric((dir / "metric.txt").string(), m);
      outcome.metric = std::move(m);
    }
    summary["status"] = "ok";
  } catch (const std::domain_error& e) {
    outcome.exit_code = exit_code::kNumeric;
    outcome.error = e.what();
    summary["status"] = "numeric_failure";
    summary["error"] = e.what();
    spdlog::error("{}: {}", problem_id, e.what());
  } catch (const std::invalid_argument& e) {
    // Missing intrinsics for the metric stage.
    outcome.exit_code = exit_code::kConfig;
    outcome.error = e.what();
    summary["status"] = "config_error";
    summary["error"] = e.what();
    spdlog::error("{}: {}", problem_id, e.what());
  }

  save_traces_csv((dir / "trace.csv").string(), outcome.traces);
  {
    std::ofstream out(dir / "state.txt");
    if (!out) throw std::runtime_error("cannot write " + (dir / "state.txt").string());
    write_state(out, state);
  }
  {
    std::ofstream out(dir / "summary.json");
    if (!out) throw std::runtime_error("cannot write " + (dir / "summary.json").string());
    out << summary.dump(2) << "\n";
  }
  return outcome;
}

namespace {

int run_one(const RunSpec& spec, const std::string& path) {
  BaProblem problem;
  try {
    problem = load_bal(path);
  } catch (const BalParseError& e) {
    spdlog::error("{}: line {}: {}", path, e.line(), e.what());
    return exit_code::kParse;
  } catch (const std::exception& e) {
    spdlog::error("{}: {}", path, e.what());
    return exit_code::kIo;
  }
  try {
    if (spec.prune) problem = prune(problem);
    validate(problem);
  } catch (const std::exception& e) {
    spdlog::error("{}: {}", path, e.what());
    return exit_code::kParse;
  }
  try {
    return solve_problem(problem, problem_id_from_path(path), spec, path).exit_code;
  } catch (const ConfigError& e) {
    spdlog::error("{}: {}", path, e.what());
    return exit_code::kConfig;
  } catch (const std::exception& e) {
    spdlog::error("{}: {}", path, e.what());
    return exit_code::kIo;
  }
}

}  // namespace

int run(const RunSpec& spec) {
  if (spec.inputs.empty()) {
    spdlog::error("no input files");
    return exit_code::kConfig;
  }
  if (spec.jobs < 1) {
    spdlog::error("--jobs must be at least 1");
    return exit_code::kConfig;
  }
  try {
    stage1_config(spec).validate();
    stage2_config(spec).validate();
  } catch (const std::invalid_argument& e) {
    spdlog::error("{}", e.what());
    return exit_code::kConfig;
  }

  std::vector<int> codes(spec.inputs.size(), exit_code::kOk);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < spec.inputs.size(); k = next++) {
      codes[k] = run_one(spec, spec.inputs[k]);
    }
  };
  const std::size_t n_workers =
      std::min<std::size_t>(static_cast<std::size_t>(spec.jobs), spec.inputs.size());
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_workers; ++t) pool.emplace_back(worker);
  }
  int code = exit_code::kOk;
  for (int c : codes) code = std::max(code, c);
  return code;
}

int run_profile(const ProfileSpec& spec) {
  if (spec.inputs.empty() || spec.taus.empty()) {
    spdlog::error("profile needs trace files and at least one tau");
    return exit_code::kConfig;
  }
  for (double tau : spec.taus) {
    if (!(tau > 0.0 && tau < 1.0)) {
      spdlog::error("tau must lie in (0, 1), got {}", tau);
      return exit_code::kConfig;
    }
  }
  std::vector<ConvergenceTrace> traces;
  for (const auto& path : spec.inputs) {
    try {
      for (auto& t : load_traces_csv(path)) {
        if (t.stage == spec.stage) traces.push_back(std::move(t));
      }
    } catch (const std::exception& e) {
      spdlog::error("{}", e.what());
      return exit_code::kParse;
    }
  }
  if (traces.empty()) {
    spdlog::error("no traces with stage '{}'", spec.stage);
    return exit_code::kConfig;
  }
  std::vector<ProfileResult> profiles;
  try {
    for (double tau : spec.taus) {
      for (auto& p : performance_profile(traces, tau)) profiles.push_back(std::move(p));
    }
  } catch (const std::invalid_argument& e) {
    spdlog::error("{}", e.what());
    return exit_code::kConfig;
  }
  try {
    if (spec.output.empty()) {
      write_profiles_csv(std::cout, profiles);
    } else {
      save_profiles_csv(spec.output, profiles);
    }
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return exit_code::kIo;
  }
  return exit_code::kOk;
}

}  // namespace povar
