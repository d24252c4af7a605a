#include "povar/pipeline.hpp"
#include "povar/synth.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace povar {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class PipelineTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("povar_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string write_scene(const std::string& name, std::uint64_t seed = 1) {
    SynthOptions o;
    o.cameras = 4;
    o.landmarks = 20;
    o.noise = 0.5;
    o.seed = seed;
    const std::string path = (dir_ / name).string();
    save_bal(path, synthesize(o));
    return path;
  }

  int cli(const std::string& args, const std::string& env = "") const {
    const std::string cmd = env + " \"" POVAR_CLI_PATH "\" --log-level off " + args +
                            " > \"" + (dir_ / "cli.log").string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  static std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  fs::path dir_;
};

TEST(PipelineNames, ParseAndPrint) {
  for (const char* s : {"stage1", "stage2", "full", "metric"})
    EXPECT_EQ(to_string(parse_run_stage(s)), s);
  for (const char* s : {"povar", "poba", "iterative", "direct"})
    EXPECT_EQ(to_string(parse_stage1_solver(s)), s);
  for (const char* s : {"ripoba", "ripcg"}) EXPECT_EQ(to_string(parse_stage2_solver(s)), s);
  EXPECT_THROW(parse_stage1_solver("lbfgs"), ConfigError);
  EXPECT_THROW(parse_run_stage("stage3"), ConfigError);
}

TEST(PipelineNames, SolverMapping) {
  RunSpec spec;
  spec.stage1_solver = Stage1Solver::kPoba;
  EXPECT_EQ(stage1_config(spec).mode, LmMode::kJoint);
  EXPECT_EQ(stage1_config(spec).inner_solver, InnerSolver::kPower);
  spec.stage1_solver = Stage1Solver::kIterative;
  EXPECT_EQ(stage1_config(spec).mode, LmMode::kVarPro);
  EXPECT_EQ(stage1_config(spec).inner_solver, InnerSolver::kPcg);
  spec.stage1_solver = Stage1Solver::kDirect;
  EXPECT_EQ(stage1_config(spec).inner_solver, InnerSolver::kDirect);
  spec.stage2_solver = Stage2Solver::kRipcg;
  EXPECT_EQ(stage2_config(spec).inner_solver, InnerSolver::kPcg);
  EXPECT_EQ(problem_id_from_path("/a/b/problem-49-7776-pre.txt.gz"), "problem-49-7776-pre");
  EXPECT_EQ(problem_id_from_path("scene.txt"), "scene");
}

TEST_F(PipelineTest, SolveWritesArtifacts) {
  SynthOptions o;
  o.cameras = 4;
  o.landmarks = 20;
  o.noise = 0.5;
  const BaProblem p = synthesize(o);
  RunSpec spec;
  spec.stage = RunStage::kMetric;
  spec.output_dir = dir_.string();
  const ProblemOutcome out = solve_problem(p, "scene", spec);
  EXPECT_EQ(out.exit_code, exit_code::kOk);
  for (const char* f : {"trace.csv", "state.txt", "summary.json", "metric.txt"})
    EXPECT_TRUE(fs::exists(dir_ / "scene" / f)) << f;
  const auto traces = load_traces_csv((dir_ / "scene" / "trace.csv").string());
  ASSERT_EQ(traces.size(), 3u);
  EXPECT_EQ(traces[0].stage, "stage1");
  EXPECT_EQ(traces[1].stage, "stage2");
  EXPECT_EQ(traces[2].stage, "stage1+2");
  EXPECT_EQ(traces[1].solver_id, "povar+ripoba");
  EXPECT_LE(traces[0].records.size(), 51u);
  EXPECT_EQ(traces[1].records.front().cost, traces[2].records.front().cost);

  const json summary = json::parse(slurp(dir_ / "scene" / "summary.json"));
  EXPECT_EQ(summary["schema_version"], 1);
  EXPECT_EQ(summary["status"], "ok");
  EXPECT_EQ(summary["counts"]["cameras"], 4);
  EXPECT_EQ(summary["counts"]["observations"], p.num_observations);
  const json& c1 = summary["config"]["stage1"];
  EXPECT_EQ(c1["eta"], 0.1);
  EXPECT_EQ(c1["initial_lambda"], 1e-4);
  EXPECT_EQ(c1["max_outer_iterations"], 50);
  EXPECT_EQ(c1["function_tolerance"], 1e-6);
  EXPECT_EQ(c1["max_power_order"], 20);
  EXPECT_EQ(c1["power_threshold"], 0.01);
  EXPECT_EQ(c1["max_inner_iterations"], 500);
  EXPECT_EQ(c1["pcg_tolerance"], 1e-6);
  EXPECT_TRUE(summary.contains("metric"));

  std::ifstream state_in(dir_ / "scene" / "state.txt");
  EXPECT_EQ(read_state(state_in), out.stage2->state);
}

TEST_F(PipelineTest, RepeatedRunsAreIdentical) {
  SynthOptions o;
  o.cameras = 4;
  o.landmarks = 20;
  o.noise = 0.5;
  const BaProblem p = synthesize(o);
  RunSpec spec;
  spec.seed = 7;
  spec.output_dir = dir_.string();
  const ProblemOutcome a = solve_problem(p, "a", spec);
  const ProblemOutcome b = solve_problem(p, "b", spec);
  ASSERT_EQ(a.traces.size(), b.traces.size());
  for (std::size_t t = 0; t < a.traces.size(); ++t) {
    ASSERT_EQ(a.traces[t].records.size(), b.traces[t].records.size());
    for (std::size_t k = 0; k < a.traces[t].records.size(); ++k)
      EXPECT_EQ(a.traces[t].records[k].cost, b.traces[t].records[k].cost);
  }
  EXPECT_EQ(a.stage2->state, b.stage2->state);
}

TEST_F(PipelineTest, CliSolveStage1AndExitCodes) {
  const std::string scene = write_scene("scene.txt");
  const std::string out = (dir_ / "out").string();
  EXPECT_EQ(cli("solve " + scene + " --stage stage1 -o " + out), 0);
  const auto traces = load_traces_csv(out + "/scene/trace.csv");
  ASSERT_EQ(traces.size(), 1u);
  EXPECT_LE(traces[0].records.size(), 51u);
  EXPECT_EQ(traces[0].solver_id, "povar");

  {
    std::ofstream bad(dir_ / "bad.txt");
    bad << "1 1 1\n0 5 1 1\n";
  }
  EXPECT_EQ(cli("solve " + (dir_ / "bad.txt").string() + " -o " + out), exit_code::kParse);
  EXPECT_EQ(cli("solve " + (dir_ / "missing.txt").string() + " -o " + out), exit_code::kIo);
  EXPECT_EQ(cli("solve " + scene + " --solver nope -o " + out), exit_code::kConfig);
  EXPECT_EQ(cli("solve " + scene + " --eta 2 -o " + out), exit_code::kConfig);
  EXPECT_EQ(cli("solve " + scene + " --unknown-flag"), exit_code::kConfig);
}

TEST_F(PipelineTest, CliOutputDirectoryFromEnvironment) {
  const std::string scene = write_scene("envscene.txt.gz");
  const fs::path out = dir_ / "env_out";
  EXPECT_EQ(cli("solve " + scene + " --stage stage1 --max-iterations 3",
                "POVAR_OUTPUT_DIR=\"" + out.string() + "\""),
            0);
  EXPECT_TRUE(fs::exists(out / "envscene" / "trace.csv"));
}

TEST_F(PipelineTest, CliJobsSolveEveryInput) {
  const std::string a = write_scene("a.txt", 1);
  const std::string b = write_scene("b.txt", 2);
  const std::string out = (dir_ / "out").string();
  EXPECT_EQ(cli("solve " + a + " " + b + " --stage stage1 --jobs 2 -o " + out), 0);
  EXPECT_TRUE(fs::exists(fs::path(out) / "a" / "summary.json"));
  EXPECT_TRUE(fs::exists(fs::path(out) / "b" / "summary.json"));
}

TEST_F(PipelineTest, CliSynthWritesParsableProblem) {
  const std::string path = (dir_ / "synth.txt").string();
  EXPECT_EQ(cli("synth --cameras 3 --landmarks 12 --seed 4 -o " + path), 0);
  const BaProblem p = load_bal(path);
  EXPECT_EQ(p.num_cameras, 3);
  EXPECT_EQ(p.num_landmarks, 12);
  EXPECT_EQ(cli("synth --cameras 1 -o " + path), exit_code::kConfig);
}

TEST_F(PipelineTest, CliProfileOnHandTraces) {
  std::vector<ConvergenceTrace> traces(2);
  for (int s = 0; s < 2; ++s) {
    traces[s].problem_id = "p";
    traces[s].solver_id = s == 0 ? "a" : "b";
    traces[s].stage = "stage1";
    traces[s].initial_cost = 100;
    traces[s].records = {{0, 100, 0}, {1, s == 0 ? 0.5 : 50.0, 1}, {2, 0.5, 2}};
  }
  const std::string csv = (dir_ / "traces.csv").string();
  save_traces_csv(csv, traces);
  const std::string out = (dir_ / "profile.csv").string();
  EXPECT_EQ(cli("profile " + csv + " --tau 0.01 -o " + out), 0);
  std::ifstream in(out);
  const auto profiles = read_profiles_csv(in);
  ASSERT_EQ(profiles.size(), 2u);
  EXPECT_EQ(profiles[0].at(1.0), 100.0);
  EXPECT_EQ(profiles[1].at(1.0), 0.0);
  EXPECT_EQ(profiles[1].at(2.0), 100.0);
  EXPECT_EQ(cli("profile " + csv + " --stage stage2 -o " + out), exit_code::kConfig);
  EXPECT_EQ(cli("profile " + csv + " --tau 1.5 -o " + out), exit_code::kConfig);
}

}  // namespace
}  // namespace povar
