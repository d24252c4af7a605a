#include "povar/objective.hpp"

#include "povar/parallel.hpp"

#include <Eigen/SVD>
#include <spdlog/spdlog.h>

#include <atomic>
#include <cmath>
#include <limits>

namespace povar {

void PoseConfig::validate() const {
  if (!(eta >= 0.0 && eta <= 1.0)) {
    throw std::invalid_argument("eta must lie in [0, 1], got " + std::to_string(eta));
  }
}

Eigen::Vector4d pose_residual(const Mat34& camera, const Vec4& landmark,
                              const Vec2& measurement, const PoseConfig& config) {
  const double sa = std::sqrt(1.0 - config.eta);
  const double sb = std::sqrt(config.eta);
  const Vec3 u = camera * landmark;
  Eigen::Vector4d r;
  r[0] = sa * (u[0] - u[2] * measurement.x());
  r[1] = sa * (u[1] - u[2] * measurement.y());
  r[2] = sb * (u[0] - measurement.x());
  r[3] = sb * (u[1] - measurement.y());
  return r;
}

PoseJacobians pose_jacobians(const Mat34& camera, const Vec4& landmark,
                             const Vec2& measurement, const PoseConfig& config) {
  const double sa = std::sqrt(1.0 - config.eta);
  const double sb = std::sqrt(config.eta);
  const Eigen::RowVector4d xt = landmark.transpose();
  PoseJacobians j;
  j.pose.setZero();
  j.pose.block<1, 4>(0, 0) = sa * xt;
  j.pose.block<1, 4>(0, 8) = -sa * measurement.x() * xt;
  j.pose.block<1, 4>(1, 4) = sa * xt;
  j.pose.block<1, 4>(1, 8) = -sa * measurement.y() * xt;
  j.pose.block<1, 4>(2, 0) = sb * xt;
  j.pose.block<1, 4>(3, 4) = sb * xt;

  const auto p0 = camera.block<1, 3>(0, 0);
  const auto p1 = camera.block<1, 3>(1, 0);
  const auto p2 = camera.block<1, 3>(2, 0);
  j.landmark.row(0) = sa * (p0 - measurement.x() * p2);
  j.landmark.row(1) = sa * (p1 - measurement.y() * p2);
  j.landmark.row(2) = sb * p0;
  j.landmark.row(3) = sb * p1;
  return j;
}

std::optional<Vec2> try_projective_residual(const Mat34& camera, const Vec4& landmark,
                                            const Vec2& measurement) {
  const Vec3 u = camera * landmark;
  if (!(std::abs(u[2]) > kDepthEpsilon)) return std::nullopt;
  return Vec2(u[0] / u[2] - measurement.x(), u[1] / u[2] - measurement.y());
}

Vec2 projective_residual(const Mat34& camera, const Vec4& landmark,
                         const Vec2& measurement) {
  if (auto r = try_projective_residual(camera, landmark, measurement)) return *r;
  throw DegenerateProjection();
}

ProjectiveJacobians projective_jacobians(const Mat34& camera, const Vec4& landmark,
                                         const Vec2& /*measurement*/) {
  const Vec3 u = camera * landmark;
  if (!(std::abs(u[2]) > kDepthEpsilon)) throw DegenerateProjection();
  const double iz = 1.0 / u[2];
  const double px = u[0] * iz;
  const double py = u[1] * iz;
  const Eigen::RowVector4d xt = landmark.transpose() * iz;

  ProjectiveJacobians j;
  j.pose.setZero();
  j.pose.block<1, 4>(0, 0) = xt;
  j.pose.block<1, 4>(0, 8) = -px * xt;
  j.pose.block<1, 4>(1, 4) = xt;
  j.pose.block<1, 4>(1, 8) = -py * xt;
  j.landmark.row(0) = (camera.row(0) - px * camera.row(2)) * iz;
  j.landmark.row(1) = (camera.row(1) - py * camera.row(2)) * iz;
  return j;
}

namespace {

/// Least-squares landmark for fixed cameras. Returns false when the stacked
/// system is rank-deficient.
bool solve_one_landmark(const ProjectiveState& state, const BaProblem& problem,
                        const ObservationGraph& graph, std::size_t j,
                        const PoseConfig& config, Vec3& out) {
  const std::size_t begin = graph.landmark_offset[j];
  const std::size_t count = graph.landmark_offset[j + 1] - begin;
  Eigen::Matrix<double, Eigen::Dynamic, 3> a(4 * count, 3);
  VecX c(4 * count);
  const Vec4 origin(0, 0, 0, 1);
  for (std::size_t k = 0; k < count; ++k) {
    const Observation& obs = problem.observations[graph.slots[begin + k]];
    const Mat34& camera = state.cameras[obs.camera_index];
    const PoseJacobians jac = pose_jacobians(camera, origin, obs.measurement, config);
    a.middleRows<4>(4 * k) = jac.landmark;
    c.segment<4>(4 * k) = pose_residual(camera, origin, obs.measurement, config);
  }
  Eigen::JacobiSVD<Eigen::Matrix<double, Eigen::Dynamic, 3>> svd(
      a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  if (!(sv[0] > 0.0) || sv[2] <= kLandmarkRankTolerance * sv[0]) return false;
  out = -svd.solve(c);
  return out.allFinite();
}

}  // namespace

std::vector<Vec4> solve_landmarks(const ProjectiveState& state, const BaProblem& problem,
                                  const ObservationGraph& graph, const PoseConfig& config,
                                  LandmarkSolveReport* report) {
  std::vector<Vec4> out(state.landmarks);
  std::vector<char> degenerate(graph.num_landmarks(), 0);
  parallel_for(graph.num_landmarks(), [&](std::size_t j) {
    Vec3 x;
    if (solve_one_landmark(state, problem, graph, j, config, x)) {
      out[j] << x, 1.0;
    } else {
      degenerate[j] = 1;
    }
  });
  int n_degenerate = 0;
  for (char d : degenerate) n_degenerate += d;
  if (n_degenerate > 0) {
    spdlog::warn("{} landmarks have a rank-deficient closed-form system; left unchanged",
                 n_degenerate);
  }
  if (report) report->degenerate = n_degenerate;
  return out;
}

std::vector<Vec4> solve_landmarks(const ProjectiveState& state, const BaProblem& problem,
                                  const PoseConfig& config, LandmarkSolveReport* report) {
  return solve_landmarks(state, problem, build_graph(problem), config, report);
}

double total_cost(const ProjectiveState& state, const BaProblem& problem, Stage stage,
                  const PoseConfig& config) {
  std::vector<double> terms(problem.observations.size());
  std::atomic<bool> degenerate{false};
  parallel_for(terms.size(), [&](std::size_t k) {
    const Observation& o = problem.observations[k];
    const Mat34& camera = state.cameras[o.camera_index];
    const Vec4& landmark = state.landmarks[o.landmark_index];
    if (stage == Stage::kPose) {
      terms[k] = pose_residual(camera, landmark, o.measurement, config).squaredNorm();
    } else if (auto r = try_projective_residual(camera, landmark, o.measurement)) {
      terms[k] = r->squaredNorm();
    } else {
      degenerate = true;
    }
  });
  if (degenerate) return std::numeric_limits<double>::infinity();
  return pairwise_sum(terms);
}

LandmarkBlockStore linearize_pose(const ProjectiveState& state, const BaProblem& problem,
                                  std::shared_ptr<const ObservationGraph> graph,
                                  const PoseConfig& config) {
  LandmarkBlockStore store(std::move(graph), 4, 12, 3);
  const ObservationGraph& g = *store.graph;
  parallel_for(g.num_slots(), [&](std::size_t s) {
    const Observation& o = problem.observations[g.slots[s]];
    const Mat34& camera = state.cameras[o.camera_index];
    const Vec4& landmark = state.landmarks[o.landmark_index];
    const PoseJacobians jac = pose_jacobians(camera, landmark, o.measurement, config);
    auto block = store.slot_block(s);
    block.leftCols<12>() = jac.pose;
    block.middleCols<3>(12) = jac.landmark;
    block.col(15) = pose_residual(camera, landmark, o.measurement, config);
  });
  return store;
}

LandmarkBlockStore linearize_projective(const ProjectiveState& state,
                                        const BaProblem& problem,
                                        std::shared_ptr<const ObservationGraph> graph) {
  LandmarkBlockStore store(std::move(graph), 2, 12, 4);
  const ObservationGraph& g = *store.graph;
  std::atomic<bool> degenerate{false};
  parallel_for(g.num_slots(), [&](std::size_t s) {
    const Observation& o = problem.observations[g.slots[s]];
    const Mat34& camera = state.cameras[o.camera_index];
    const Vec4& landmark = state.landmarks[o.landmark_index];
    const auto r = try_projective_residual(camera, landmark, o.measurement);
    if (!r) {
      degenerate = true;
      return;
    }
    const ProjectiveJacobians jac = projective_jacobians(camera, landmark, o.measurement);
    auto block = store.slot_block(s);
    block.leftCols<12>() = jac.pose;
    block.middleCols<4>(12) = jac.landmark;
    block.col(16) = *r;
  });
  if (degenerate) throw DegenerateProjection();
  return store;
}

}  // namespace povar
