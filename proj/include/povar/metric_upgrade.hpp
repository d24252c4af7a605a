#pragma once

#include "povar/bal_io.hpp"
#include "povar/common.hpp"

#include <vector>

namespace povar {

using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat43 = Eigen::Matrix<double, 4, 3>;
using Mat44 = Eigen::Matrix4d;

/// Upgraded points with |w| at or below this fraction of ||X|| are treated as
/// points at infinity.
inline constexpr double kInfinityTolerance = 1e-12;

/// Ambiguity H = [A 0; c' 1] with the gauge A = I, so H~ = [I; c'] is the
/// leading 4x3 block. alphas are the per-camera scales.
struct AmbiguityState {
  Vec3 c = Vec3::Zero();
  std::vector<double> alphas;
};

Mat43 ambiguity_leading_block(const Vec3& c);
Mat44 ambiguity_matrix(const Vec3& c);

/// Symmetric 3x3 matrix as (m00, m11, m22, s m01, s m02, s m12), s = sqrt(2),
/// so the Euclidean norm equals the Frobenius norm.
Vec6 symmetric_to_vec6(const Mat3& m);

/// (K^-1 P) H~ H~' (K^-1 P)'. Throws std::invalid_argument for singular K.
Mat3 metric_product(const Mat34& camera, const Mat3& intrinsics, const Vec3& c);

/// alpha M - I in the symmetric 6-vector form.
Vec6 metric_residual(const Mat34& camera, const Mat3& intrinsics, const Vec3& c,
                     double alpha);

/// Closed-form alpha_i = <M_i, I> / <M_i, M_i>; 1 (with a warning) for M_i = 0.
std::vector<double> optimal_alphas(const std::vector<Mat34>& cameras,
                                   const std::vector<Mat3>& intrinsics, const Vec3& c);

/// Permutation T (rc x rc) with T vec(X) = vec(X') for an r x c matrix X,
/// column-major vec.
MatX vec_transpose_permutation(int rows, int cols);

/// d vec(H~ H~') / d vec(H~) (16x12, column-major vec):
///   (H~ (x) I_4) + (I_4 (x) H~) T.
Eigen::Matrix<double, 16, 12> dHHt_dH(const Mat43& h);

/// Jacobian of the symmetric 6-vector of M w.r.t. c, through dHHt_dH.
Eigen::Matrix<double, 6, 3> metric_product_jacobian(const Mat34& camera,
                                                    const Mat3& intrinsics, const Vec3& c);

struct MetricUpgradeConfig {
  int max_iterations = 100;
  double initial_lambda = 1e-4;
  double function_tolerance = 1e-15;
  /// Outputs whose orthogonality residual stays above this are flagged.
  double quality_threshold = 1e-6;

  void validate() const;
};

struct MetricUpgradeResult {
  AmbiguityState ambiguity;
  std::vector<Mat3> rotations;
  std::vector<Vec3> translations;
  /// H^-1 X, dehomogenized; NaN for points at infinity (see kInfinityTolerance).
  std::vector<Vec3> points;
  double cost = 0.0;
  /// max_i ||alpha_i M_i - I||_F at the final c.
  double orthogonality_residual = 0.0;
  int iterations = 0;
  bool converged = false;
  /// True when the residual stays above quality_threshold; the output is then
  /// illustrative only.
  bool flagged = false;
};

/// Per-camera intrinsics from the problem's metric fields.
std::vector<Mat3> problem_intrinsics(const BaProblem& problem);

/// LM over c with the alphas eliminated in closed form, followed by the
/// upgrade P_i H, rescaling by sqrt(alpha_i) and nearest-rotation extraction.
MetricUpgradeResult upgrade(const std::vector<Mat34>& cameras,
                            const std::vector<Mat3>& intrinsics,
                            const std::vector<Vec4>& landmarks,
                            const MetricUpgradeConfig& config = {});
MetricUpgradeResult upgrade(const BaProblem& problem, const ProjectiveState& state,
                            const MetricUpgradeConfig& config = {});

/// Orthonormal R with det(R) = +1 closest to m in Frobenius norm.
Mat3 nearest_rotation(const Mat3& m);

}  // namespace povar
