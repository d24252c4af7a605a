#pragma once

#include "povar/bal_io.hpp"
#include "povar/landmark_blocks.hpp"
#include "povar/solvers.hpp"

#include <optional>

namespace povar {

/// Accepted deviation of ||v|| from 1 when building a tangent basis.
inline constexpr double kUnitNormTolerance = 1e-9;

/// Orthonormal basis of the orthogonal complement of a unit vector, built from
/// the Householder reflector that maps v to -sign(v_0) e_0: the basis is that
/// reflector's columns 1..n-1. For v = e_0 it returns e_1..e_{n-1}.
/// Throws std::invalid_argument if ||v|| is not 1 within kUnitNormTolerance.
MatX tangent_basis(const VecX& v);

using CameraBasis = Eigen::Matrix<double, 12, 11>;
using LandmarkBasis = Eigen::Matrix<double, 4, 3>;

struct TangentBases {
  std::vector<CameraBasis> cameras;
  std::vector<LandmarkBasis> landmarks;
};

TangentBases compute_bases(const ProjectiveState& state);

/// Right-multiplies every stored pose Jacobian by its camera basis and every
/// landmark Jacobian by its landmark basis: 2x12 -> 2x11 and 2x4 -> 2x3. The
/// residual column is copied unchanged.
LandmarkBlockStore project_blocks(const LandmarkBlockStore& blocks,
                                  const TangentBases& bases);

struct RiemannianLinearization {
  TangentBases bases;
  LandmarkBlockStore blocks;  // projected
};

RiemannianLinearization linearize_riemannian(const ProjectiveState& state,
                                             const BaProblem& problem,
                                             std::shared_ptr<const ObservationGraph> graph);

/// Tangent-space step at a normalized state: projected normal equations with
/// both-sided Jacobi damping, solved with config.inner_solver.
StepReport riemannian_step(const RiemannianLinearization& lin, double lambda,
                           const SolverConfig& config);
StepReport riemannian_step(const BaProblem& problem, const ProjectiveState& state,
                           double lambda, const SolverConfig& config);

/// Back-projects tangent updates (11 per camera, 3 per landmark), adds them
/// and retracts. nullopt when some vector collapses to zero norm.
std::optional<ProjectiveState> apply_tangent_update(const ProjectiveState& state,
                                                    const TangentBases& bases,
                                                    const StepReport& step);

/// Scales every camera 12-vector and landmark 4-vector to unit norm. Throws
/// std::domain_error on a zero-norm vector.
ProjectiveState retract(const ProjectiveState& state);

/// Stage-1 state to the unit-norm Stage-2 representation.
ProjectiveState lift_stage1_to_stage2(const ProjectiveState& state);

}  // namespace povar
