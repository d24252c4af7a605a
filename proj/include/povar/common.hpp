#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <vector>

namespace povar {

using Mat34 = Eigen::Matrix<double, 3, 4, Eigen::RowMajor>;
using Mat3 = Eigen::Matrix3d;
using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;
using MatXR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using MapMatXR = Eigen::Map<MatXR>;
using ConstMapMatXR = Eigen::Map<const MatXR>;

/// Which objective is being optimized: the pOSE objective with landmarks in
/// affine form (last coordinate fixed to 1), or the projective reprojection
/// objective over unit-norm homogeneous parameters.
enum class Stage { kPose, kProjective };

const char* to_string(Stage stage);

/// Camera stored as a 12-vector in row-major order.
inline Eigen::Map<const Eigen::Matrix<double, 12, 1>> vec(const Mat34& camera) {
  return Eigen::Map<const Eigen::Matrix<double, 12, 1>>(camera.data());
}
inline Eigen::Map<Eigen::Matrix<double, 12, 1>> vec(Mat34& camera) {
  return Eigen::Map<Eigen::Matrix<double, 12, 1>>(camera.data());
}

}  // namespace povar
