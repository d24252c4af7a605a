#include "povar/normal_eq.hpp"

#include "povar/parallel.hpp"
#include "povar/simd/kernels.hpp"

#include <Eigen/Eigenvalues>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <utility>

namespace povar {

LandmarkBlockStore::LandmarkBlockStore(std::shared_ptr<const ObservationGraph> g,
                                       int rows, int pose, int landmark)
    : rows_per_obs(rows), pose_dim(pose), landmark_dim(landmark), graph(std::move(g)) {
  data.assign(graph->num_slots() * slot_size(), 0.0);
}

double LandmarkBlockStore::residual_squared_norm() const {
  std::vector<double> terms(num_slots());
  for (std::size_t s = 0; s < num_slots(); ++s) {
    terms[s] = slot_block(s).col(stride() - 1).squaredNorm();
  }
  return pairwise_sum(terms);
}

namespace {

/// Symmetric pseudo-inverse through an eigendecomposition. Returns true when
/// some eigenvalue was dropped.
bool symmetric_pinv(const ConstMapMatXR& a, double* out) {
  const int n = static_cast<int>(a.rows());
  MapMatXR inv(out, n, n);
  const double trace = a.trace();
  if (!(trace > 0.0)) {
    inv.setZero();
    return true;
  }
  Eigen::SelfAdjointEigenSolver<MatX> eig(MatX(a), Eigen::ComputeEigenvectors);
  const double cutoff = kBlockPinvTolerance * trace;
  const VecX& ev = eig.eigenvalues();
  VecX inv_ev(n);
  bool dropped = false;
  for (int k = 0; k < n; ++k) {
    if (ev[k] > cutoff) {
      inv_ev[k] = 1.0 / ev[k];
    } else {
      inv_ev[k] = 0.0;
      dropped = true;
    }
  }
  const MatX& q = eig.eigenvectors();
  inv = q * inv_ev.asDiagonal() * q.transpose();
  return dropped;
}

/// Adds lambda * clamp(diag)^2 to the diagonal of a square row-major block.
void add_jacobi_damping(MapMatXR block, double lambda) {
  for (int k = 0; k < block.rows(); ++k) {
    const double d =
        std::clamp(std::sqrt(std::max(block(k, k), 0.0)), kMinJacobiScale, kMaxJacobiScale);
    block(k, k) += lambda * d * d;
  }
}

/// z_l = V_l^-1 sum_{s in l} W_s' x_cam(s), one entry per landmark.
VecX landmark_projection(const SchurSystem& sys, const VecX& x) {
  const ObservationGraph& g = *sys.graph;
  const int dp = sys.pose_dim;
  const int dl = sys.landmark_dim;
  VecX z(sys.landmark_size());
  parallel_for(g.num_landmarks(), [&](std::size_t j) {
    VecX acc = VecX::Zero(dl);
    for (std::size_t s = g.landmark_offset[j]; s < g.landmark_offset[j + 1]; ++s) {
      acc.noalias() += sys.w_block(s).transpose() * x.segment(g.slot_camera[s] * dp, dp);
    }
    z.segment(j * dl, dl).noalias() = sys.v_inv_block(j) * acc;
  });
  return z;
}

/// y_i = sum_{s in camera i} W_s z_landmark(s).
VecX camera_gather(const SchurSystem& sys, const VecX& z) {
  const ObservationGraph& g = *sys.graph;
  const int dp = sys.pose_dim;
  const int dl = sys.landmark_dim;
  VecX y(sys.pose_size());
  parallel_for(g.num_cameras(), [&](std::size_t i) {
    VecX acc = VecX::Zero(dp);
    for (std::size_t s : g.camera_slots[i]) {
      acc.noalias() += sys.w_block(s) * z.segment(g.slot_landmark[s] * dl, dl);
    }
    y.segment(i * dp, dp) = acc;
  });
  return y;
}

}  // namespace

void SchurSystem::factorize() {
  const std::size_t nc = num_cameras();
  const std::size_t nl = num_landmarks();
  u_inv.assign(nc * pose_dim * pose_dim, 0.0);
  v_inv.assign(nl * landmark_dim * landmark_dim, 0.0);
  landmark_degenerate.assign(nl, 0);
  std::vector<char> camera_degenerate(nc, 0);
  parallel_for(nc, [&](std::size_t i) {
    camera_degenerate[i] =
        symmetric_pinv(std::as_const(*this).u_block(i), u_inv.data() + i * pose_dim * pose_dim);
  });
  parallel_for(nl, [&](std::size_t j) {
    landmark_degenerate[j] =
        symmetric_pinv(std::as_const(*this).v_block(j), v_inv.data() + j * landmark_dim * landmark_dim);
  });
  const auto n_cam = std::count(camera_degenerate.begin(), camera_degenerate.end(), 1);
  const auto n_lm = std::count(landmark_degenerate.begin(), landmark_degenerate.end(), 1);
  if (n_cam > 0) spdlog::debug("{} singular pose blocks (pseudo-inverse used)", n_cam);
  if (n_lm > 0) spdlog::debug("{} singular landmark blocks (pseudo-inverse used)", n_lm);
}

SchurSystem assemble(const LandmarkBlockStore& blocks, double lambda, DampingMode mode) {
  SchurSystem sys;
  sys.pose_dim = blocks.pose_dim;
  sys.landmark_dim = blocks.landmark_dim;
  sys.lambda = lambda;
  sys.damping_mode = mode;
  sys.graph = blocks.graph;
  const ObservationGraph& g = *blocks.graph;
  const int dp = blocks.pose_dim;
  const int dl = blocks.landmark_dim;
  const int rows = blocks.rows_per_obs;
  const int lda = blocks.stride();
  const int rcol = lda - 1;
  const auto& k = simd::active();

  sys.u.assign(g.num_cameras() * dp * dp, 0.0);
  sys.v.assign(g.num_landmarks() * dl * dl, 0.0);
  sys.w.assign(g.num_slots() * dp * dl, 0.0);
  sys.b_p = VecX::Zero(g.num_cameras() * dp);
  sys.b_l = VecX::Zero(g.num_landmarks() * dl);

  // Camera-owned accumulation: U_i and b_p,i in slot order.
  parallel_for(g.num_cameras(), [&](std::size_t i) {
    double* u = sys.u.data() + i * dp * dp;
    auto bp = sys.b_p.segment(i * dp, dp);
    for (std::size_t s : g.camera_slots[i]) {
      const double* block = blocks.slot_data(s);
      k.gram_accumulate(block, rows, dp, lda, u);
      const auto b = blocks.slot_block(s);
      bp.noalias() += b.leftCols(dp).transpose() * b.col(rcol);
    }
    if (lambda > 0.0) add_jacobi_damping(sys.u_block(i), lambda);
  });

  // Landmark-owned accumulation: V_j, b_l,j and the per-slot W blocks.
  parallel_for(g.num_landmarks(), [&](std::size_t j) {
    double* v = sys.v.data() + j * dl * dl;
    auto bl = sys.b_l.segment(j * dl, dl);
    for (std::size_t s = g.landmark_offset[j]; s < g.landmark_offset[j + 1]; ++s) {
      const double* block = blocks.slot_data(s);
      k.gram_accumulate(block + dp, rows, dl, lda, v);
      const auto b = blocks.slot_block(s);
      sys.w_block(s).noalias() = b.leftCols(dp).transpose() * b.middleCols(dp, dl);
      bl.noalias() += b.middleCols(dp, dl).transpose() * b.col(rcol);
    }
    if (mode == DampingMode::kBoth && lambda > 0.0) {
      add_jacobi_damping(sys.v_block(j), lambda);
    }
  });

  sys.factorize();
  return sys;
}

VecX apply_u_inverse(const SchurSystem& sys, const VecX& x) {
  const int dp = sys.pose_dim;
  VecX y(sys.pose_size());
  parallel_for(sys.num_cameras(), [&](std::size_t i) {
    y.segment(i * dp, dp).noalias() = sys.u_inv_block(i) * x.segment(i * dp, dp);
  });
  return y;
}

VecX schur_rhs(const SchurSystem& sys) {
  const ObservationGraph& g = *sys.graph;
  const int dl = sys.landmark_dim;
  VecX z(sys.landmark_size());
  parallel_for(g.num_landmarks(), [&](std::size_t j) {
    z.segment(j * dl, dl).noalias() = sys.v_inv_block(j) * sys.b_l.segment(j * dl, dl);
  });
  return camera_gather(sys, z) - sys.b_p;
}

VecX apply_schur(const SchurSystem& sys, const VecX& x) {
  const int dp = sys.pose_dim;
  VecX y = camera_gather(sys, landmark_projection(sys, x));
  parallel_for(sys.num_cameras(), [&](std::size_t i) {
    y.segment(i * dp, dp) =
        sys.u_block(i) * x.segment(i * dp, dp) - y.segment(i * dp, dp);
  });
  return y;
}

VecX apply_coupling(const SchurSystem& sys, const VecX& x) {
  return camera_gather(sys, landmark_projection(sys, x));
}

VecX apply_power_operator(const SchurSystem& sys, const VecX& x) {
  return apply_u_inverse(sys, camera_gather(sys, landmark_projection(sys, x)));
}

VecX back_substitute(const SchurSystem& sys, const VecX& pose_update) {
  const ObservationGraph& g = *sys.graph;
  const int dp = sys.pose_dim;
  const int dl = sys.landmark_dim;
  VecX dl_out = VecX::Zero(sys.landmark_size());
  parallel_for(g.num_landmarks(), [&](std::size_t j) {
    if (sys.landmark_degenerate[j]) return;
    VecX acc = sys.b_l.segment(j * dl, dl);
    for (std::size_t s = g.landmark_offset[j]; s < g.landmark_offset[j + 1]; ++s) {
      acc.noalias() +=
          sys.w_block(s).transpose() * pose_update.segment(g.slot_camera[s] * dp, dp);
    }
    dl_out.segment(j * dl, dl).noalias() = -(sys.v_inv_block(j) * acc);
  });
  const auto n = std::count(sys.landmark_degenerate.begin(), sys.landmark_degenerate.end(), 1);
  if (n > 0) spdlog::debug("back-substitution skipped {} degenerate landmarks", n);
  return dl_out;
}

std::vector<MatX> schur_block_diagonal(const SchurSystem& sys) {
  const ObservationGraph& g = *sys.graph;
  std::vector<MatX> out(g.num_cameras());
  parallel_for(g.num_cameras(), [&](std::size_t i) {
    MatX s = sys.u_block(i);
    for (std::size_t slot : g.camera_slots[i]) {
      const auto wb = sys.w_block(slot);
      s.noalias() -= wb * sys.v_inv_block(g.slot_landmark[slot]) * wb.transpose();
    }
    out[i] = s;
  });
  return out;
}

Eigen::SparseMatrix<double> schur_sparse(const SchurSystem& sys) {
  const ObservationGraph& g = *sys.graph;
  const int dp = sys.pose_dim;
  std::vector<Eigen::Triplet<double>> triplets;
  for (std::size_t i = 0; i < g.num_cameras(); ++i) {
    const auto ub = sys.u_block(i);
    for (int r = 0; r < dp; ++r) {
      for (int c = 0; c < dp; ++c) triplets.emplace_back(i * dp + r, i * dp + c, ub(r, c));
    }
  }
  for (std::size_t j = 0; j < g.num_landmarks(); ++j) {
    const auto vinv = sys.v_inv_block(j);
    for (std::size_t a = g.landmark_offset[j]; a < g.landmark_offset[j + 1]; ++a) {
      const MatX wv = sys.w_block(a) * vinv;
      for (std::size_t b = g.landmark_offset[j]; b < g.landmark_offset[j + 1]; ++b) {
        const MatX block = -wv * sys.w_block(b).transpose();
        const std::size_t ci = g.slot_camera[a];
        const std::size_t cj = g.slot_camera[b];
        for (int r = 0; r < dp; ++r) {
          for (int c = 0; c < dp; ++c) {
            triplets.emplace_back(ci * dp + r, cj * dp + c, block(r, c));
          }
        }
      }
    }
  }
  const auto n = static_cast<Eigen::Index>(sys.pose_size());
  Eigen::SparseMatrix<double> s(n, n);
  s.setFromTriplets(triplets.begin(), triplets.end());
  return s;
}

}  // namespace povar
