#include "povar/solvers.hpp"

#include "povar/parallel.hpp"
#include "povar/riemannian.hpp"
#include "povar/simd/kernels.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <limits>

namespace povar {

void SolverConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("invalid solver config: ") + what);
  };
  require(max_outer_iterations > 0, "max_outer_iterations must be positive");
  require(function_tolerance > 0.0, "function_tolerance must be positive");
  require(initial_lambda > 0.0, "initial_lambda must be positive");
  require(max_power_order >= 0, "max_power_order must be non-negative");
  require(power_threshold >= 0.0, "power_threshold must be non-negative");
  require(max_inner_iterations > 0, "max_inner_iterations must be positive");
  require(pcg_tolerance > 0.0, "pcg_tolerance must be positive");
  require(lambda_increase > 1.0 && lambda_decrease > 1.0, "lambda factors must exceed 1");
  require(min_lambda > 0.0 && max_lambda >= min_lambda, "invalid lambda bounds");
  pose.validate();
}

std::string to_string(InnerSolver solver) {
  switch (solver) {
    case InnerSolver::kPower:
      return "power";
    case InnerSolver::kPcg:
      return "pcg";
    case InnerSolver::kDirect:
      return "direct";
  }
  return "unknown";
}

std::string to_string(LmMode mode) { return mode == LmMode::kVarPro ? "varpro" : "joint"; }

namespace {

double norm(const VecX& x) { return std::sqrt(simd::squared_norm({x.data(), std::size_t(x.size())})); }

double dot(const VecX& a, const VecX& b) {
  return simd::dot({a.data(), std::size_t(a.size())}, {b.data(), std::size_t(b.size())});
}

void axpy(double alpha, const VecX& x, VecX& y) {
  simd::axpy(alpha, {x.data(), std::size_t(x.size())}, {y.data(), std::size_t(y.size())});
}

}  // namespace

StepReport power_schur_solve(const SchurSystem& system, const SolverConfig& config) {
  StepReport report;
  const VecX rhs = schur_rhs(system);
  VecX term = apply_u_inverse(system, rhs);
  VecX sum = term;
  double ratio = 0.0;
  for (int i = 1; i <= config.max_power_order; ++i) {
    term = apply_power_operator(system, term);
    const double term_norm = norm(term);
    const double sum_norm = norm(sum);
    ratio = sum_norm > 0.0 ? term_norm / sum_norm : 0.0;
    if (term_norm <= config.power_threshold * sum_norm) break;
    axpy(1.0, term, sum);
    report.power_order_used = i;
  }
  report.truncation_estimate = ratio;
  report.inner_iterations_used = report.power_order_used;
  report.landmark_update = back_substitute(system, sum);
  report.pose_update = std::move(sum);
  return report;
}

StepReport pcg_schur_solve(const SchurSystem& system, const SolverConfig& config) {
  StepReport report;
  const int dp = system.pose_dim;
  const VecX rhs = schur_rhs(system);
  VecX x = VecX::Zero(rhs.size());
  const double rhs_norm = norm(rhs);
  if (rhs_norm == 0.0) {
    report.landmark_update = back_substitute(system, x);
    report.pose_update = std::move(x);
    return report;
  }

  // Schur-Jacobi preconditioner: inverse of every diagonal block of S.
  const std::vector<MatX> diag = schur_block_diagonal(system);
  std::vector<MatX> precond(diag.size());
  parallel_for(diag.size(), [&](std::size_t i) {
    Eigen::LLT<MatX> llt(diag[i]);
    if (llt.info() == Eigen::Success) {
      precond[i] = llt.solve(MatX::Identity(dp, dp));
    } else {
      precond[i] = diag[i].completeOrthogonalDecomposition().pseudoInverse();
    }
  });
  auto apply_precond = [&](const VecX& r) {
    VecX z(r.size());
    parallel_for(precond.size(), [&](std::size_t i) {
      z.segment(i * dp, dp).noalias() = precond[i] * r.segment(i * dp, dp);
    });
    return z;
  };

  VecX r = rhs;
  VecX z = apply_precond(r);
  VecX p = z;
  double rz = dot(r, z);
  for (int k = 0; k < config.max_inner_iterations; ++k) {
    const VecX sp = apply_schur(system, p);
    const double curvature = dot(p, sp);
    if (!(curvature > 0.0)) {
      spdlog::debug("pcg breakdown at iteration {} (p'Sp = {})", k, curvature);
      report.ok = false;
      break;
    }
    const double alpha = rz / curvature;
    axpy(alpha, p, x);
    axpy(-alpha, sp, r);
    report.inner_iterations_used = k + 1;
    if (norm(r) <= config.pcg_tolerance * rhs_norm) break;
    z = apply_precond(r);
    const double rz_next = dot(r, z);
    const double beta = rz_next / rz;
    rz = rz_next;
    simd::xpby({z.data(), std::size_t(z.size())}, beta, {p.data(), std::size_t(p.size())});
  }
  report.truncation_estimate = norm(r) / rhs_norm;
  report.landmark_update = back_substitute(system, x);
  report.pose_update = std::move(x);
  return report;
}

StepReport direct_schur_solve(const SchurSystem& system, const SolverConfig& /*config*/) {
  StepReport report;
  const VecX rhs = schur_rhs(system);
  const Eigen::SparseMatrix<double> s = schur_sparse(system);
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(s);
  VecX x = VecX::Zero(rhs.size());
  if (ldlt.info() != Eigen::Success) {
    report.ok = false;
  } else {
    const VecX d = ldlt.vectorD();
    if ((d.array() == 0.0).any()) {
      report.ok = false;
    } else {
      if ((d.array() < 0.0).any()) {
        spdlog::debug("direct solver: Schur complement is indefinite, using LDL^T solve");
      }
      x = ldlt.solve(rhs);
      if (ldlt.info() != Eigen::Success || !x.allFinite()) {
        report.ok = false;
        x.setZero();
      }
    }
  }
  report.inner_iterations_used = 1;
  report.landmark_update = back_substitute(system, x);
  report.pose_update = std::move(x);
  return report;
}

StepReport inner_solve(const SchurSystem& system, const SolverConfig& config) {
  switch (config.inner_solver) {
    case InnerSolver::kPower:
      return power_schur_solve(system, config);
    case InnerSolver::kPcg:
      return pcg_schur_solve(system, config);
    case InnerSolver::kDirect:
      return direct_schur_solve(system, config);
  }
  throw std::logic_error("unknown inner solver");
}

double spectral_check(const SchurSystem& system, int max_iterations, double tolerance) {
  const int dp = system.pose_dim;
  const std::size_t nc = system.num_cameras();
  std::vector<MatX> chol(nc);
  for (std::size_t i = 0; i < nc; ++i) {
    Eigen::LLT<MatX> llt{MatX(system.u_block(i))};
    if (llt.info() != Eigen::Success) {
      throw std::domain_error("spectral_check: U block is not positive definite");
    }
    chol[i] = llt.matrixL();
  }
  // Symmetric form L^-1 G L^-T of U^-1 G, G = W V^+ W'.
  auto apply = [&](const VecX& x) {
    VecX y(x.size());
    for (std::size_t i = 0; i < nc; ++i) {
      y.segment(i * dp, dp) = chol[i].transpose().triangularView<Eigen::Upper>().solve(
          x.segment(i * dp, dp));
    }
    VecX g = apply_coupling(system, y);
    for (std::size_t i = 0; i < nc; ++i) {
      g.segment(i * dp, dp) =
          chol[i].triangularView<Eigen::Lower>().solve(g.segment(i * dp, dp));
    }
    return g;
  };

  // Lanczos with full reorthogonalization, restarted from the current Ritz
  // vector whenever the Krylov basis reaches kMaxBasis vectors.
  constexpr Eigen::Index kMaxBasis = 200;
  const Eigen::Index n = static_cast<Eigen::Index>(system.pose_size());
  if (n == 0) return 0.0;
  const Eigen::Index basis_limit = std::min(n, kMaxBasis);
  VecX start(n);
  for (Eigen::Index k = 0; k < n; ++k) start[k] = 1.0 + 0.01 * static_cast<double>(k % 7);
  double theta = 0.0;
  int matvecs = 0;
  while (matvecs < max_iterations) {
    MatX q(n, basis_limit);
    q.col(0) = start / start.norm();
    VecX alpha(basis_limit);
    VecX beta(basis_limit);
    Eigen::Index k = 0;
    VecX ritz_coeffs;
    bool done = false;
    for (; k < basis_limit && matvecs < max_iterations; ++k) {
      VecX w = apply(q.col(k));
      ++matvecs;
      alpha[k] = q.col(k).dot(w);
      for (int pass = 0; pass < 2; ++pass) {
        w -= q.leftCols(k + 1) * (q.leftCols(k + 1).transpose() * w);
      }
      beta[k] = w.norm();
      Eigen::SelfAdjointEigenSolver<MatX> tri;
      MatX t = MatX::Zero(k + 1, k + 1);
      t.diagonal() = alpha.head(k + 1);
      for (Eigen::Index i = 0; i < k; ++i) t(i, i + 1) = t(i + 1, i) = beta[i];
      tri.compute(t);
      theta = tri.eigenvalues()[k];
      ritz_coeffs = tri.eigenvectors().col(k);
      const double residual = beta[k] * std::abs(ritz_coeffs[k]);
      const double scale = std::max(std::abs(theta), std::numeric_limits<double>::min());
      if (residual <= tolerance * scale || beta[k] <= 1e-14 * scale || k + 1 == n) {
        done = true;
        break;
      }
      if (k + 1 < basis_limit) q.col(k + 1) = w / beta[k];
    }
    if (done) break;
    const Eigen::Index used = std::min<Eigen::Index>(k, basis_limit);
    start = q.leftCols(used) * ritz_coeffs.head(used);
  }
  return theta;
}

namespace {

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

/// One linearization of the current point, reused across rejected trials.
struct Linearization {
  LandmarkBlockStore blocks;
  TangentBases bases;  // Stage 2 only
};

}  // namespace

LmResult lm_minimize(const BaProblem& problem, const ProjectiveState& initial, Stage stage,
                     const SolverConfig& config, const TraceSink& sink,
                     const AcceptSink& on_accept) {
  config.validate();
  const auto graph = std::make_shared<const ObservationGraph>(build_graph(problem));
  const bool varpro = stage == Stage::kPose && config.mode == LmMode::kVarPro;
  const DampingMode damping = varpro ? DampingMode::kPoseOnly : DampingMode::kBoth;

  LmResult result;
  result.state = initial;
  double cost = total_cost(result.state, problem, stage, config.pose);
  if (!std::isfinite(cost)) {
    throw std::domain_error("lm_minimize: initial cost is not finite");
  }
  result.initial_cost = cost;
  result.trace.stage = to_string(stage);
  result.trace.initial_cost = cost;

  Timer timer;
  auto record = [&](int iteration) {
    const TraceRecord rec{iteration, cost, timer.seconds()};
    result.trace.records.push_back(rec);
    if (sink) sink(rec);
  };
  record(0);

  double lambda = config.initial_lambda;
  std::optional<Linearization> lin;
  result.termination = "max_iterations";

  for (int it = 1; it <= config.max_outer_iterations; ++it) {
    result.iterations = it;
    if (cost == 0.0) {
      record(it);
      result.converged = true;
      result.termination = "zero_cost";
      break;
    }

    if (!lin) {
      lin.emplace();
      if (stage == Stage::kPose) {
        lin->blocks = linearize_pose(result.state, problem, graph, config.pose);
      } else {
        RiemannianLinearization r = linearize_riemannian(result.state, problem, graph);
        lin->blocks = std::move(r.blocks);
        lin->bases = std::move(r.bases);
      }
    }

    const SchurSystem system = assemble(lin->blocks, lambda, damping);
    const StepReport step = inner_solve(system, config);

    std::optional<ProjectiveState> trial;
    if (step.pose_update.allFinite() && step.landmark_update.allFinite()) {
      if (stage == Stage::kPose) {
        trial = result.state;
        for (std::size_t i = 0; i < trial->cameras.size(); ++i) {
          vec(trial->cameras[i]) += step.pose_update.segment<12>(12 * i);
        }
        if (varpro) {
          trial->landmarks = solve_landmarks(*trial, problem, *graph, config.pose);
        } else {
          for (std::size_t j = 0; j < trial->landmarks.size(); ++j) {
            trial->landmarks[j].head<3>() += step.landmark_update.segment<3>(3 * j);
          }
        }
      } else {
        trial = apply_tangent_update(result.state, lin->bases, step);
      }
    }
    const double trial_cost = trial ? total_cost(*trial, problem, stage, config.pose)
                                    : std::numeric_limits<double>::infinity();

    if (std::isfinite(trial_cost) && trial_cost < cost) {
      const double relative_decrease = (cost - trial_cost) / cost;
      result.state = std::move(*trial);
      cost = trial_cost;
      lin.reset();
      ++result.accepted_steps;
      lambda = std::max(lambda / config.lambda_decrease, config.min_lambda);
      record(it);
      if (on_accept) on_accept(result.state);
      if (relative_decrease <= config.function_tolerance) {
        result.converged = true;
        result.termination = "function_tolerance";
        break;
      }
    } else {
      lambda *= config.lambda_increase;
      record(it);
      if (lambda > config.max_lambda) {
        result.termination = "lambda_overflow";
        break;
      }
    }
  }

  result.seconds = timer.seconds();
  result.final_cost = cost;
  return result;
}

}  // namespace povar
