#pragma once

#include "povar/common.hpp"
#include "povar/landmark_blocks.hpp"

#include <Eigen/SparseCore>

#include <memory>
#include <vector>

namespace povar {

/// kPoseOnly damps only the pose block (variable projection); kBoth damps
/// pose and landmark blocks (joint LM and the Riemannian stage).
enum class DampingMode { kPoseOnly, kBoth };

/// Jacobi damping scale bounds: D = clamp(sqrt(diag(J^T J)), lo, hi).
inline constexpr double kMinJacobiScale = 1e-6;
inline constexpr double kMaxJacobiScale = 1e6;

/// Eigenvalues of a landmark (or pose) block at or below this fraction of the
/// block trace are treated as zero by the pseudo-inverse.
inline constexpr double kBlockPinvTolerance = 1e-10;

/// Block-sparse damped normal equations
///   [U  W] [dp]     [b_p]
///   [W' V] [dl] = - [b_l]
/// with one U block per camera, one V block per landmark and one W block per
/// observation slot. Blocks are row-major and stored contiguously.
class SchurSystem {
 public:
  int pose_dim = 0;
  int landmark_dim = 0;
  double lambda = 0.0;
  DampingMode damping_mode = DampingMode::kPoseOnly;
  std::shared_ptr<const ObservationGraph> graph;

  std::vector<double> u;  // damped
  std::vector<double> v;  // damped in kBoth mode
  std::vector<double> w;
  VecX b_p;
  VecX b_l;

  /// Filled by factorize(): (pseudo-)inverses of the U and V blocks.
  std::vector<double> u_inv;
  std::vector<double> v_inv;
  std::vector<char> landmark_degenerate;

  std::size_t num_cameras() const { return graph->num_cameras(); }
  std::size_t num_landmarks() const { return graph->num_landmarks(); }
  std::size_t pose_size() const { return num_cameras() * pose_dim; }
  std::size_t landmark_size() const { return num_landmarks() * landmark_dim; }

  MapMatXR u_block(std::size_t i) { return map(u, i, pose_dim, pose_dim); }
  ConstMapMatXR u_block(std::size_t i) const { return cmap(u, i, pose_dim, pose_dim); }
  MapMatXR v_block(std::size_t j) { return map(v, j, landmark_dim, landmark_dim); }
  ConstMapMatXR v_block(std::size_t j) const {
    return cmap(v, j, landmark_dim, landmark_dim);
  }
  MapMatXR w_block(std::size_t s) { return map(w, s, pose_dim, landmark_dim); }
  ConstMapMatXR w_block(std::size_t s) const { return cmap(w, s, pose_dim, landmark_dim); }
  ConstMapMatXR u_inv_block(std::size_t i) const {
    return cmap(u_inv, i, pose_dim, pose_dim);
  }
  ConstMapMatXR v_inv_block(std::size_t j) const {
    return cmap(v_inv, j, landmark_dim, landmark_dim);
  }

  /// Computes u_inv and v_inv. Called by assemble().
  void factorize();

 private:
  static MapMatXR map(std::vector<double>& d, std::size_t k, int r, int c) {
    return MapMatXR(d.data() + k * r * c, r, c);
  }
  static ConstMapMatXR cmap(const std::vector<double>& d, std::size_t k, int r, int c) {
    return ConstMapMatXR(d.data() + k * r * c, r, c);
  }
};

/// U = Jp'Jp + lambda Dp'Dp, V = Jl'Jl (+ lambda Dl'Dl in kBoth mode),
/// W = Jp'Jl, b = J'r, with Jacobi damping D.
SchurSystem assemble(const LandmarkBlockStore& blocks, double lambda, DampingMode mode);

/// -(b_p - W V^-1 b_l).
VecX schur_rhs(const SchurSystem& system);

/// (U - W V^-1 W') x without forming the Schur complement.
VecX apply_schur(const SchurSystem& system, const VecX& x);

/// W V^-1 W' x.
VecX apply_coupling(const SchurSystem& system, const VecX& x);

/// U^-1 W V^-1 W' x, the operator whose powers make up the series expansion.
VecX apply_power_operator(const SchurSystem& system, const VecX& x);

/// U^-1 x, block by block.
VecX apply_u_inverse(const SchurSystem& system, const VecX& x);

/// dl = -V^-1 (b_l + W' dp); zero for degenerate landmarks.
VecX back_substitute(const SchurSystem& system, const VecX& pose_update);

/// Diagonal blocks of the Schur complement, U_i - sum_l W_il V_l^-1 W_il'.
std::vector<MatX> schur_block_diagonal(const SchurSystem& system);

/// Explicit sparse Schur complement (upper and lower triangles). Only the
/// direct baseline solver uses it.
Eigen::SparseMatrix<double> schur_sparse(const SchurSystem& system);

}  // namespace povar
