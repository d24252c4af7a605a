#include "povar/metric_upgrade.hpp"

#include "povar/parallel.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <Eigen/SVD>
#include <spdlog/spdlog.h>

#include <cmath>
#include <limits>
#include <stdexcept>

namespace povar {

namespace {

const double kSqrt2 = std::sqrt(2.0);

Mat3 inverse_intrinsics(const Mat3& k) {
  const double det = k.determinant();
  if (!std::isfinite(det) || std::abs(det) <= std::numeric_limits<double>::min()) {
    throw std::invalid_argument("metric upgrade: singular intrinsics");
  }
  return k.inverse();
}

Vec6 identity_vec6() { return (Vec6() << 1, 1, 1, 0, 0, 0).finished(); }

}  // namespace

void MetricUpgradeConfig::validate() const {
  if (max_iterations <= 0 || !(initial_lambda > 0.0) || !(function_tolerance > 0.0) ||
      !(quality_threshold > 0.0)) {
    throw std::invalid_argument("invalid metric upgrade config");
  }
}

Mat43 ambiguity_leading_block(const Vec3& c) {
  Mat43 h;
  h.topRows<3>().setIdentity();
  h.row(3) = c.transpose();
  return h;
}

Mat44 ambiguity_matrix(const Vec3& c) {
  Mat44 h = Mat44::Identity();
  h.block<1, 3>(3, 0) = c.transpose();
  return h;
}

Vec6 symmetric_to_vec6(const Mat3& m) {
  Vec6 v;
  v << m(0, 0), m(1, 1), m(2, 2), kSqrt2 * m(0, 1), kSqrt2 * m(0, 2), kSqrt2 * m(1, 2);
  return v;
}

Mat3 metric_product(const Mat34& camera, const Mat3& intrinsics, const Vec3& c) {
  const Eigen::Matrix<double, 3, 3> q = inverse_intrinsics(intrinsics) * camera *
                                        ambiguity_leading_block(c);
  return q * q.transpose();
}

Vec6 metric_residual(const Mat34& camera, const Mat3& intrinsics, const Vec3& c,
                     double alpha) {
  return alpha * symmetric_to_vec6(metric_product(camera, intrinsics, c)) - identity_vec6();
}

std::vector<double> optimal_alphas(const std::vector<Mat34>& cameras,
                                   const std::vector<Mat3>& intrinsics, const Vec3& c) {
  if (cameras.size() != intrinsics.size()) {
    throw std::invalid_argument("optimal_alphas: camera/intrinsics count mismatch");
  }
  std::vector<double> alphas(cameras.size());
  for (std::size_t i = 0; i < cameras.size(); ++i) {
    const Mat3 m = metric_product(cameras[i], intrinsics[i], c);
    const double mm = m.squaredNorm();
    if (mm == 0.0) {
      spdlog::warn("optimal_alphas: camera {} has a zero metric product, using alpha = 1", i);
      alphas[i] = 1.0;
    } else {
      alphas[i] = m.trace() / mm;
    }
  }
  return alphas;
}

MatX vec_transpose_permutation(int rows, int cols) {
  MatX t = MatX::Zero(rows * cols, rows * cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      // X(r, c) sits at c * rows + r in vec(X) and at r * cols + c in vec(X').
      t(r * cols + c, c * rows + r) = 1.0;
    }
  }
  return t;
}

Eigen::Matrix<double, 16, 12> dHHt_dH(const Mat43& h) {
  const Mat44 i4 = Mat44::Identity();
  Eigen::Matrix<double, 16, 12> left;   // H~ (x) I_4
  Eigen::Matrix<double, 16, 12> right;  // I_4 (x) H~
  for (int a = 0; a < 4; ++a) {
    for (int b = 0; b < 3; ++b) {
      left.block<4, 4>(4 * a, 4 * b) = h(a, b) * i4;
    }
  }
  right.setZero();
  for (int a = 0; a < 4; ++a) right.block<4, 3>(4 * a, 3 * a) = h;
  return left + right * vec_transpose_permutation(4, 3);
}

Eigen::Matrix<double, 6, 3> metric_product_jacobian(const Mat34& camera,
                                                    const Mat3& intrinsics, const Vec3& c) {
  const Mat34 q = inverse_intrinsics(intrinsics) * camera;
  const Eigen::Matrix<double, 16, 12> d = dHHt_dH(ambiguity_leading_block(c));
  Eigen::Matrix<double, 6, 3> jac;
  for (int k = 0; k < 3; ++k) {
    // d vec(H~) / d c_k = e_{4k+3}; vec(Q dN Q') read back as a 4x4 dN.
    const Eigen::Matrix<double, 16, 1> dn_vec = d.col(4 * k + 3);
    const Mat44 dn = Eigen::Map<const Mat44>(dn_vec.data());
    jac.col(k) = symmetric_to_vec6(q * dn * q.transpose());
  }
  return jac;
}

std::vector<Mat3> problem_intrinsics(const BaProblem& problem) {
  if (!problem.metric_cameras) {
    throw std::invalid_argument("metric upgrade needs intrinsics from the problem file");
  }
  std::vector<Mat3> k;
  k.reserve(problem.metric_cameras->size());
  for (const auto& cam : *problem.metric_cameras) k.push_back(cam.intrinsics());
  return k;
}

Mat3 nearest_rotation(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  return svd.matrixU() * d * svd.matrixV().transpose();
}

namespace {

struct ReducedSystem {
  double cost = 0.0;
  double max_term = 0.0;
  Eigen::Matrix3d jtj = Eigen::Matrix3d::Zero();
  Vec3 jtr = Vec3::Zero();
};

/// Reduced residual r_i = alpha_i(c) m_i(c) - e with alpha_i eliminated.
ReducedSystem reduced_system(const std::vector<Mat34>& cameras, const std::vector<Mat3>& ks,
                             const Vec3& c, bool with_jacobian) {
  const std::size_t n = cameras.size();
  std::vector<double> costs(n);
  std::vector<Eigen::Matrix3d> jtj(n);
  std::vector<Vec3> jtr(n);
  const Vec6 e = identity_vec6();
  parallel_for(n, [&](std::size_t i) {
    const Vec6 m = symmetric_to_vec6(metric_product(cameras[i], ks[i], c));
    const double mm = m.squaredNorm();
    const double alpha = mm == 0.0 ? 1.0 : m.dot(e) / mm;
    const Vec6 r = alpha * m - e;
    costs[i] = r.squaredNorm();
    if (!with_jacobian) return;
    const Eigen::Matrix<double, 6, 3> dm = metric_product_jacobian(cameras[i], ks[i], c);
    Eigen::Matrix<double, 6, 3> j = alpha * dm;
    if (mm != 0.0) {
      const Eigen::RowVector3d dalpha = (e - 2.0 * alpha * m).transpose() * dm / mm;
      j += m * dalpha;
    }
    jtj[i] = j.transpose() * j;
    jtr[i] = j.transpose() * r;
  });
  ReducedSystem sys;
  sys.cost = pairwise_sum(costs);
  for (std::size_t i = 0; i < n; ++i) {
    sys.max_term = std::max(sys.max_term, costs[i]);
    if (with_jacobian) {
      sys.jtj += jtj[i];
      sys.jtr += jtr[i];
    }
  }
  return sys;
}

}  // namespace

MetricUpgradeResult upgrade(const std::vector<Mat34>& cameras,
                            const std::vector<Mat3>& intrinsics,
                            const std::vector<Vec4>& landmarks,
                            const MetricUpgradeConfig& config) {
  config.validate();
  if (cameras.size() != intrinsics.size() || cameras.empty()) {
    throw std::invalid_argument("upgrade: camera/intrinsics count mismatch");
  }
  for (const auto& k : intrinsics) inverse_intrinsics(k);

  MetricUpgradeResult result;
  Vec3 c = Vec3::Zero();
  double lambda = config.initial_lambda;
  ReducedSystem sys = reduced_system(cameras, intrinsics, c, true);
  for (int it = 0; it < config.max_iterations; ++it) {
    result.iterations = it + 1;
    if (sys.cost == 0.0) {
      result.converged = true;
      break;
    }
    Eigen::Matrix3d a = sys.jtj;
    a.diagonal() += lambda * sys.jtj.diagonal().cwiseMax(1e-12);
    const Vec3 step = a.ldlt().solve(-sys.jtr);
    const Vec3 trial_c = c + step;
    const double trial_cost = reduced_system(cameras, intrinsics, trial_c, false).cost;
    if (std::isfinite(trial_cost) && trial_cost < sys.cost) {
      const double decrease = (sys.cost - trial_cost) / sys.cost;
      c = trial_c;
      sys = reduced_system(cameras, intrinsics, c, true);
      lambda = std::max(lambda / 2.0, 1e-12);
      if (decrease <= config.function_tolerance) {
        result.converged = true;
        break;
      }
    } else {
      lambda *= 4.0;
      if (lambda > 1e12) {
        result.converged = true;
        break;
      }
    }
  }

  result.ambiguity.c = c;
  result.ambiguity.alphas = optimal_alphas(cameras, intrinsics, c);
  result.cost = sys.cost;
  result.orthogonality_residual = std::sqrt(sys.max_term);
  result.flagged = !(result.orthogonality_residual <= config.quality_threshold);
  if (result.flagged) {
    spdlog::warn("metric upgrade: orthogonality residual {:.3e} above {:.1e}, output is "
                 "illustrative only",
                 result.orthogonality_residual, config.quality_threshold);
  }

  const Mat44 h = ambiguity_matrix(c);
  const std::size_t n = cameras.size();
  result.rotations.resize(n);
  result.translations.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    Mat34 q = std::sqrt(std::abs(result.ambiguity.alphas[i])) * intrinsics[i].inverse() *
              cameras[i] * h;
    if (q.leftCols<3>().determinant() < 0.0) q = -q;
    result.rotations[i] = nearest_rotation(q.leftCols<3>());
    result.translations[i] = q.col(3);
  }

  Mat44 h_inv = Mat44::Identity();
  h_inv.block<1, 3>(3, 0) = -c.transpose();
  result.points.resize(landmarks.size());
  for (std::size_t j = 0; j < landmarks.size(); ++j) {
    const Vec4 y = h_inv * landmarks[j];
    const bool at_infinity = std::abs(y[3]) <= kInfinityTolerance * y.norm();
    result.points[j] = at_infinity ? Vec3::Constant(std::numeric_limits<double>::quiet_NaN())
                                   : Vec3(y.head<3>() / y[3]);
  }
  return result;
}

MetricUpgradeResult upgrade(const BaProblem& problem, const ProjectiveState& state,
                            const MetricUpgradeConfig& config) {
  return upgrade(state.cameras, problem_intrinsics(problem), state.landmarks, config);
}

}  // namespace povar
