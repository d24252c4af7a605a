#include "povar/riemannian.hpp"

#include "povar/parallel.hpp"

#include <cmath>
#include <stdexcept>

namespace povar {

MatX tangent_basis(const VecX& v) {
  const Eigen::Index n = v.size();
  if (n < 2) throw std::invalid_argument("tangent_basis: dimension must be at least 2");
  if (!(std::abs(v.norm() - 1.0) <= kUnitNormTolerance)) {
    throw std::invalid_argument("tangent_basis: vector is not unit norm");
  }
  VecX w = v;
  w[0] += v[0] >= 0.0 ? 1.0 : -1.0;
  const double ww = w.squaredNorm();
  // Columns 1..n-1 of I - 2 w w' / (w'w).
  MatX basis = -(2.0 / ww) * w * w.tail(n - 1).transpose();
  basis.bottomRows(n - 1).diagonal().array() += 1.0;
  return basis;
}

TangentBases compute_bases(const ProjectiveState& state) {
  TangentBases bases;
  bases.cameras.resize(state.cameras.size());
  bases.landmarks.resize(state.landmarks.size());
  parallel_for(state.cameras.size(), [&](std::size_t i) {
    bases.cameras[i] = tangent_basis(VecX(vec(state.cameras[i])));
  });
  parallel_for(state.landmarks.size(), [&](std::size_t j) {
    bases.landmarks[j] = tangent_basis(VecX(state.landmarks[j]));
  });
  return bases;
}

LandmarkBlockStore project_blocks(const LandmarkBlockStore& blocks,
                                  const TangentBases& bases) {
  if (blocks.pose_dim != 12 || blocks.landmark_dim != 4) {
    throw std::invalid_argument("project_blocks: expected 12 pose and 4 landmark columns");
  }
  LandmarkBlockStore out(blocks.graph, blocks.rows_per_obs, 11, 3);
  parallel_for(blocks.num_slots(), [&](std::size_t s) {
    const ConstMapMatXR in = blocks.slot_block(s);
    MapMatXR dst = out.slot_block(s);
    const std::size_t j = blocks.graph->slot_landmark[s];
    dst.leftCols(11).noalias() = in.leftCols(12) * bases.cameras[blocks.camera_of(s)];
    dst.middleCols(11, 3).noalias() = in.middleCols(12, 4) * bases.landmarks[j];
    dst.col(14) = in.col(16);
  });
  return out;
}

RiemannianLinearization linearize_riemannian(const ProjectiveState& state,
                                             const BaProblem& problem,
                                             std::shared_ptr<const ObservationGraph> graph) {
  RiemannianLinearization lin;
  lin.bases = compute_bases(state);
  lin.blocks = project_blocks(linearize_projective(state, problem, std::move(graph)),
                              lin.bases);
  return lin;
}

StepReport riemannian_step(const RiemannianLinearization& lin, double lambda,
                           const SolverConfig& config) {
  return inner_solve(assemble(lin.blocks, lambda, DampingMode::kBoth), config);
}

StepReport riemannian_step(const BaProblem& problem, const ProjectiveState& state,
                           double lambda, const SolverConfig& config) {
  auto graph = std::make_shared<const ObservationGraph>(build_graph(problem));
  return riemannian_step(linearize_riemannian(state, problem, graph), lambda, config);
}

std::optional<ProjectiveState> apply_tangent_update(const ProjectiveState& state,
                                                    const TangentBases& bases,
                                                    const StepReport& step) {
  ProjectiveState next = state;
  for (std::size_t i = 0; i < next.cameras.size(); ++i) {
    auto c = vec(next.cameras[i]);
    c += bases.cameras[i] * step.pose_update.segment<11>(11 * i);
    const double n = c.norm();
    if (!(n > 0.0) || !std::isfinite(n)) return std::nullopt;
    c /= n;
  }
  for (std::size_t j = 0; j < next.landmarks.size(); ++j) {
    Vec4& x = next.landmarks[j];
    x += bases.landmarks[j] * step.landmark_update.segment<3>(3 * j);
    const double n = x.norm();
    if (!(n > 0.0) || !std::isfinite(n)) return std::nullopt;
    x /= n;
  }
  return next;
}

ProjectiveState retract(const ProjectiveState& state) {
  ProjectiveState out = state;
  for (auto& cam : out.cameras) {
    const double n = vec(cam).norm();
    if (!(n > 0.0)) throw std::domain_error("retract: zero-norm camera");
    cam /= n;
  }
  for (auto& x : out.landmarks) {
    const double n = x.norm();
    if (!(n > 0.0)) throw std::domain_error("retract: zero-norm landmark");
    x /= n;
  }
  return out;
}

ProjectiveState lift_stage1_to_stage2(const ProjectiveState& state) { return retract(state); }

}  // namespace povar
