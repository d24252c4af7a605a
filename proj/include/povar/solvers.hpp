#pragma once

#include "povar/bal_io.hpp"
#include "povar/evaluation.hpp"
#include "povar/normal_eq.hpp"
#include "povar/objective.hpp"

#include <functional>
#include <string>

namespace povar {

enum class InnerSolver { kPower, kPcg, kDirect };

/// kVarPro: landmarks eliminated in closed form, only poses damped.
/// kJoint: poses and landmarks damped and updated together.
enum class LmMode { kVarPro, kJoint };

struct SolverConfig {
  int max_outer_iterations = 50;
  double function_tolerance = 1e-6;
  double initial_lambda = 1e-4;
  int max_power_order = 20;
  /// The series stops once ||t_i|| <= power_threshold * ||partial sum||.
  double power_threshold = 0.01;
  int max_inner_iterations = 500;
  /// PCG stops at ||r|| <= pcg_tolerance * ||rhs||.
  double pcg_tolerance = 1e-6;
  InnerSolver inner_solver = InnerSolver::kPower;
  LmMode mode = LmMode::kVarPro;

  double lambda_increase = 4.0;
  double lambda_decrease = 2.0;
  double min_lambda = 1e-12;
  double max_lambda = 1e8;

  PoseConfig pose;

  /// Throws std::invalid_argument for non-positive limits or tolerances.
  void validate() const;
};

std::string to_string(InnerSolver solver);
std::string to_string(LmMode mode);

struct StepReport {
  VecX pose_update;
  VecX landmark_update;
  int inner_iterations_used = 0;
  int power_order_used = 0;
  double truncation_estimate = 0.0;
  /// False on PCG breakdown or a failed factorization; the step may still be
  /// tried by the outer loop.
  bool ok = true;
};

/// Truncated power series for the Schur complement inverse:
///   x(m) = sum_{i=0..m} (U^-1 W V^-1 W')^i U^-1 rhs,  rhs = -(b_p - W V^-1 b_l)
/// Landmarks by back-substitution.
StepReport power_schur_solve(const SchurSystem& system, const SolverConfig& config);

/// Conjugate gradients on the Schur complement with the Schur-Jacobi
/// (block-diagonal) preconditioner.
StepReport pcg_schur_solve(const SchurSystem& system, const SolverConfig& config);

/// Sparse LDL^T factorization of the explicit Schur complement.
StepReport direct_schur_solve(const SchurSystem& system, const SolverConfig& config);

StepReport inner_solve(const SchurSystem& system, const SolverConfig& config);

/// Largest eigenvalue of U^-1 W V^+ W' on the similar symmetric matrix
/// L^-1 W V^+ W' L^-T (U = L L'). Power iteration with Rayleigh-Ritz
/// acceleration (Lanczos, full reorthogonalization); stops when the Ritz
/// residual falls below tolerance * |mu| or after max_iterations products.
double spectral_check(const SchurSystem& system, int max_iterations = 20000,
                      double tolerance = 1e-14);

struct LmResult {
  ProjectiveState state;
  ConvergenceTrace trace;
  int iterations = 0;
  int accepted_steps = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  double seconds = 0.0;
  bool converged = false;
  std::string termination;
};

using TraceSink = std::function<void(const TraceRecord&)>;
/// Called with the new state after every accepted step.
using AcceptSink = std::function<void(const ProjectiveState&)>;

/// Levenberg-Marquardt outer loop. Stage kPose runs on the pOSE objective in
/// the configured mode; stage kProjective runs the Riemannian variant
/// (tangent-space steps, both-sided damping, retraction) and expects a
/// normalized state. Each iteration appends (cost, cumulative seconds) to the
/// trace; record 0 is the starting cost at time 0.
LmResult lm_minimize(const BaProblem& problem, const ProjectiveState& state, Stage stage,
                     const SolverConfig& config, const TraceSink& sink = {},
                     const AcceptSink& on_accept = {});

}  // namespace povar
