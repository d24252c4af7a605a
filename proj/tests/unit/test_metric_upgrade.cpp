#include "povar/metric_upgrade.hpp"

#include "support/test_support.hpp"

#include <gtest/gtest.h>

#include <Eigen/Geometry>
#include <Eigen/LU>

namespace povar {
namespace {

using testing::TestRng;

Mat3 random_rotation(TestRng& rng) {
  return Eigen::Quaterniond(Eigen::Vector4d(rng.normal_vector(4).normalized()))
      .toRotationMatrix();
}

Mat3 bal_intrinsics(double f) { return Eigen::Vector3d(-f, -f, 1.0).asDiagonal(); }

struct MetricScene {
  std::vector<Mat3> rotations;
  std::vector<Vec3> translations;
  std::vector<Mat3> intrinsics;
  std::vector<Vec3> points;
  std::vector<Mat34> projective_cameras;
  std::vector<Vec4> projective_points;
};

// Projective frame P_i = s_i K_i [R_i | t_i] H^-1, X_j = t_j H [x_j; 1].
MetricScene make_scene(TestRng& rng, const Vec3& c, int nc, int np) {
  MetricScene s;
  const Mat44 h = ambiguity_matrix(c);
  const Mat44 h_inv = h.inverse();
  for (int i = 0; i < nc; ++i) {
    s.rotations.push_back(random_rotation(rng));
    s.translations.push_back(rng.normal_vector(3));
    s.intrinsics.push_back(bal_intrinsics(rng.uniform(200, 800)));
    Mat34 rt;
    rt << s.rotations.back(), s.translations.back();
    const double scale = rng.uniform(0.5, 2.0) * (i % 2 == 0 ? 1.0 : -1.0);
    s.projective_cameras.push_back(scale * s.intrinsics.back() * rt * h_inv);
  }
  for (int j = 0; j < np; ++j) {
    s.points.push_back(rng.normal_vector(3));
    s.projective_points.push_back(rng.uniform(0.5, 2.0) * h * s.points.back().homogeneous());
  }
  return s;
}

Vec6 dense_vec6(const Mat3& m) {
  const double r2 = std::sqrt(2.0);
  Vec6 v;
  v << m(0, 0), m(1, 1), m(2, 2), r2 * m(0, 1), r2 * m(0, 2), r2 * m(1, 2);
  return v;
}

TEST(MetricUpgrade, AmbiguityLayout) {
  const Vec3 c(1, 2, 3);
  const Mat44 h = ambiguity_matrix(c);
  Mat44 expected = Mat44::Identity();
  expected.row(3).head<3>() = c.transpose();
  EXPECT_EQ(h, expected);
  EXPECT_EQ(ambiguity_leading_block(c), expected.leftCols<3>());
}

TEST(MetricUpgrade, Vec6PreservesFrobeniusNorm) {
  TestRng rng(71);
  const MatX a = rng.normal_matrix(3, 3);
  const Mat3 m = a + a.transpose();
  EXPECT_LT((symmetric_to_vec6(m) - dense_vec6(m)).norm(), 1e-15);
  EXPECT_NEAR(symmetric_to_vec6(m).norm(), m.norm(), 1e-13);
}

TEST(MetricUpgrade, ResidualVanishesAtMetricCamera) {
  TestRng rng(72);
  const Vec3 c = 0.3 * rng.normal_vector(3);
  const MetricScene s = make_scene(rng, c, 4, 1);
  const auto alphas = optimal_alphas(s.projective_cameras, s.intrinsics, c);
  for (int i = 0; i < 4; ++i) {
    EXPECT_LT(metric_residual(s.projective_cameras[i], s.intrinsics[i], c, alphas[i]).norm(),
              1e-12);
  }
}

TEST(MetricUpgrade, ResidualExamples) {
  Mat34 p = Mat34::Zero();
  p.leftCols<3>().setIdentity();
  const Mat3 k = Mat3::Identity();
  EXPECT_NEAR(metric_residual(p, k, Vec3::Zero(), 0.0).squaredNorm(), 3.0, 1e-15);
  EXPECT_NEAR(metric_residual(p, k, Vec3::Zero(), 1.0).norm(), 0.0, 1e-15);
  EXPECT_EQ(optimal_alphas({p}, {k}, Vec3::Zero())[0], 1.0);
  const Mat34 q = std::sqrt(2.0) * p;
  EXPECT_NEAR(optimal_alphas({q}, {k}, Vec3::Zero())[0], 0.5, 1e-15);
  EXPECT_EQ(optimal_alphas({Mat34::Zero()}, {k}, Vec3::Zero())[0], 1.0);
}

TEST(MetricUpgrade, ResidualMatchesDenseFormula) {
  TestRng rng(73);
  for (int trial = 0; trial < 10; ++trial) {
    const Mat34 p = rng.camera();
    const Mat3 k = bal_intrinsics(rng.uniform(100, 1000));
    const Vec3 c = rng.normal_vector(3);
    const double alpha = rng.normal();
    const Eigen::Matrix<double, 3, 4> q = k.inverse() * p;
    Mat44 hht = ambiguity_matrix(c);
    const Eigen::Matrix<double, 4, 3> ht = hht.leftCols<3>();
    const Mat3 m = q * ht * ht.transpose() * q.transpose();
    const Vec6 expected = dense_vec6(alpha * m - Mat3::Identity());
    EXPECT_LT((metric_residual(p, k, c, alpha) - expected).norm(),
              1e-12 * std::max(1.0, expected.norm()));
  }
}

// The closed-form alpha minimizes ||alpha M - I|| over alpha.
TEST(MetricUpgrade, OptimalAlphaIsMinimizer) {
  TestRng rng(74);
  for (int trial = 0; trial < 10; ++trial) {
    const Mat34 p = rng.camera();
    const Mat3 k = bal_intrinsics(rng.uniform(1, 10));
    const Vec3 c = rng.normal_vector(3);
    const double a = optimal_alphas({p}, {k}, c)[0];
    const double best = metric_residual(p, k, c, a).squaredNorm();
    for (double delta : {-1e-3, 1e-3, -0.1, 0.1}) {
      const double shifted = a * (1 + delta);
      EXPECT_GE(metric_residual(p, k, c, shifted).squaredNorm(), best);
    }
    // Scaling the camera by s scales alpha by 1/s^2.
    EXPECT_NEAR(optimal_alphas({3.0 * p}, {k}, c)[0], a / 9.0, 1e-12 * std::abs(a));
  }
}

TEST(MetricUpgrade, SingularIntrinsicsThrow) {
  Mat3 k = Mat3::Identity();
  k(2, 2) = 0.0;
  EXPECT_THROW(metric_product(Mat34::Identity(), k, Vec3::Zero()), std::invalid_argument);
}

TEST(MetricUpgrade, TransposePermutation) {
  TestRng rng(75);
  for (auto [r, c] : {std::pair{4, 3}, std::pair{2, 5}, std::pair{3, 3}}) {
    const MatX t = vec_transpose_permutation(r, c);
    const MatX x = rng.normal_matrix(r, c);
    const MatX xt = x.transpose();
    const VecX vx = Eigen::Map<const VecX>(x.data(), x.size());
    const VecX vxt = Eigen::Map<const VecX>(xt.data(), xt.size());
    EXPECT_EQ(t * vx, vxt);
    EXPECT_EQ(t * t.transpose(), MatX::Identity(r * c, r * c));
  }
}

TEST(MetricUpgrade, ProductDerivativeMatchesFiniteDifferences) {
  TestRng rng(76);
  auto vec_nnt = [](const VecX& h) -> VecX {
    const Eigen::Map<const Mat43> m(h.data());
    const Mat44 n = m * m.transpose();
    return Eigen::Map<const VecX>(n.data(), 16);
  };
  for (int trial = 0; trial < 10; ++trial) {
    const Mat43 h = rng.normal_matrix(4, 3);
    const VecX hv = Eigen::Map<const VecX>(h.data(), 12);
    const MatX fd = testing::central_difference(vec_nnt, hv);
    EXPECT_LT(testing::relative_error(dHHt_dH(h), fd), 1e-8);
  }
  EXPECT_EQ(dHHt_dH(Mat43::Zero()).norm(), 0.0);
}

TEST(MetricUpgrade, MetricJacobianMatchesFiniteDifferences) {
  TestRng rng(77);
  for (int trial = 0; trial < 10; ++trial) {
    const Mat34 p = rng.camera();
    const Mat3 k = bal_intrinsics(rng.uniform(1, 5));
    const Vec3 c = rng.normal_vector(3);
    const MatX fd = testing::central_difference(
        [&](const VecX& cv) -> VecX {
          return symmetric_to_vec6(metric_product(p, k, Vec3(cv)));
        },
        c);
    EXPECT_LT(testing::relative_error(metric_product_jacobian(p, k, c), fd), 1e-8);
  }
}

TEST(MetricUpgrade, NearestRotation) {
  TestRng rng(78);
  for (int trial = 0; trial < 20; ++trial) {
    const Mat3 r = nearest_rotation(rng.normal_matrix(3, 3));
    EXPECT_LT((r * r.transpose() - Mat3::Identity()).norm(), 1e-13);
    EXPECT_NEAR(r.determinant(), 1.0, 1e-13);
    const Mat3 truth = random_rotation(rng);
    EXPECT_LT((nearest_rotation(2.5 * truth) - truth).norm(), 1e-13);
    const Mat3 noisy = truth + 1e-3 * MatX(rng.normal_matrix(3, 3));
    EXPECT_LT((nearest_rotation(noisy) - truth).norm(), 1e-2);
  }
}

TEST(MetricUpgrade, RecoversMetricFrame) {
  TestRng rng(79);
  const Vec3 c = 0.2 * rng.normal_vector(3);
  const MetricScene s = make_scene(rng, c, 6, 10);
  const MetricUpgradeResult r = upgrade(s.projective_cameras, s.intrinsics, s.projective_points);
  EXPECT_FALSE(r.flagged);
  EXPECT_LT((r.ambiguity.c - c).norm(), 1e-8);
  EXPECT_LT(r.orthogonality_residual, 1e-8);
  for (int i = 0; i < 6; ++i) {
    EXPECT_LT((r.rotations[i] - s.rotations[i]).norm(), 1e-7);
    EXPECT_LT((r.translations[i] - s.translations[i]).norm(), 1e-7);
  }
  for (int j = 0; j < 10; ++j) EXPECT_LT((r.points[j] - s.points[j]).norm(), 1e-7);
}

TEST(MetricUpgrade, FlagsNonMetricInput) {
  TestRng rng(80);
  std::vector<Mat34> cams;
  std::vector<Mat3> ks;
  for (int i = 0; i < 5; ++i) {
    cams.push_back(rng.camera());
    ks.push_back(bal_intrinsics(1.0));
  }
  const MetricUpgradeResult r = upgrade(cams, ks, {rng.unit_landmark()});
  EXPECT_TRUE(r.flagged);
  for (const auto& rot : r.rotations) {
    EXPECT_LT((rot * rot.transpose() - Mat3::Identity()).norm(), 1e-12);
    EXPECT_NEAR(rot.determinant(), 1.0, 1e-12);
  }
}

TEST(MetricUpgrade, PointsAtInfinityBecomeNaN) {
  TestRng rng(81);
  const MetricScene s = make_scene(rng, Vec3::Zero(), 4, 1);
  const MetricUpgradeResult r = upgrade(s.projective_cameras, s.intrinsics, {Vec4(1, 0, 0, 0)});
  EXPECT_TRUE(r.points[0].hasNaN());
}

TEST(MetricUpgrade, ConfigValidation) {
  MetricUpgradeConfig c;
  EXPECT_NO_THROW(c.validate());
  c.max_iterations = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

}  // namespace
}  // namespace povar
