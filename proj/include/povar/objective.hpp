#pragma once

#include "povar/bal_io.hpp"
#include "povar/common.hpp"
#include "povar/landmark_blocks.hpp"

#include <optional>
#include <stdexcept>

namespace povar {

/// pOSE trade-off between the object-space error (eta = 0) and the affine
/// error (eta = 1).
struct PoseConfig {
  double eta = 0.1;

  /// Throws std::invalid_argument unless 0 <= eta <= 1.
  void validate() const;
};

/// |z| at or below this value makes a projective residual degenerate.
inline constexpr double kDepthEpsilon = 1e-12;

/// Relative singular-value cutoff for the per-landmark least-squares solve.
inline constexpr double kLandmarkRankTolerance = 1e-10;

class DegenerateProjection : public std::domain_error {
 public:
  DegenerateProjection() : std::domain_error("projective depth too close to zero") {}
};

using PoseJacobian = Eigen::Matrix<double, 4, 12, Eigen::RowMajor>;
using PoseLandmarkJacobian = Eigen::Matrix<double, 4, 3, Eigen::RowMajor>;
using ProjectiveJacobian = Eigen::Matrix<double, 2, 12, Eigen::RowMajor>;
using ProjectiveLandmarkJacobian = Eigen::Matrix<double, 2, 4, Eigen::RowMajor>;

/// pOSE residual of one observation. Rows 0-1 hold the object-space part
/// sqrt(1-eta) (P_{1:2} X - (P_3 X) m), rows 2-3 the affine part
/// sqrt(eta) (P_{1:2} X - m). landmark(3) is expected to be 1.
Eigen::Vector4d pose_residual(const Mat34& camera, const Vec4& landmark,
                              const Vec2& measurement, const PoseConfig& config);

struct PoseJacobians {
  PoseJacobian pose;              // w.r.t. the row-major camera 12-vector
  PoseLandmarkJacobian landmark;  // w.r.t. the 3 free landmark coordinates
};

PoseJacobians pose_jacobians(const Mat34& camera, const Vec4& landmark,
                             const Vec2& measurement, const PoseConfig& config);

/// pi(P X) - m. Throws DegenerateProjection when |(P X)_z| <= kDepthEpsilon.
Vec2 projective_residual(const Mat34& camera, const Vec4& landmark,
                         const Vec2& measurement);
std::optional<Vec2> try_projective_residual(const Mat34& camera, const Vec4& landmark,
                                            const Vec2& measurement);

struct ProjectiveJacobians {
  ProjectiveJacobian pose;
  ProjectiveLandmarkJacobian landmark;
};

ProjectiveJacobians projective_jacobians(const Mat34& camera, const Vec4& landmark,
                                         const Vec2& measurement);

struct LandmarkSolveReport {
  int degenerate = 0;
};

/// Closed-form Stage-1 landmarks for fixed cameras: each landmark minimizes
/// its pOSE terms over the 3 free coordinates (last coordinate 1). Landmarks
/// whose stacked system is rank-deficient keep their previous value.
std::vector<Vec4> solve_landmarks(const ProjectiveState& state, const BaProblem& problem,
                                  const ObservationGraph& graph, const PoseConfig& config,
                                  LandmarkSolveReport* report = nullptr);
std::vector<Vec4> solve_landmarks(const ProjectiveState& state, const BaProblem& problem,
                                  const PoseConfig& config,
                                  LandmarkSolveReport* report = nullptr);

/// Sum of squared residual norms over all observations (pairwise summation
/// over per-observation terms in observation order). The projective cost is
/// +infinity if any residual is degenerate.
double total_cost(const ProjectiveState& state, const BaProblem& problem, Stage stage,
                  const PoseConfig& config = {});

/// Stage-1 linearization: 4 rows per observation, 12 pose columns, 3 landmark
/// columns.
LandmarkBlockStore linearize_pose(const ProjectiveState& state, const BaProblem& problem,
                                  std::shared_ptr<const ObservationGraph> graph,
                                  const PoseConfig& config);

/// Stage-2 linearization in the ambient space: 2 rows per observation, 12 pose
/// columns, 4 landmark columns. Throws DegenerateProjection.
LandmarkBlockStore linearize_projective(const ProjectiveState& state,
                                        const BaProblem& problem,
                                        std::shared_ptr<const ObservationGraph> graph);

}  // namespace povar
