#include "povar/normal_eq.hpp"

#include "support/test_support.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

namespace povar {
namespace {

using testing::TestRng;

struct Fixture {
  BaProblem problem;
  std::shared_ptr<const ObservationGraph> graph;
  LandmarkBlockStore store;
};

Fixture make_fixture(TestRng& rng, int nc, int nl, int rows, int pose_dim, int lm_dim) {
  Fixture f;
  f.problem = testing::random_problem(rng, nc, nl);
  f.graph = std::make_shared<const ObservationGraph>(build_graph(f.problem));
  f.store = testing::random_store(rng, f.graph, rows, pose_dim, lm_dim);
  return f;
}

MatX dense_u(const SchurSystem& s) {
  MatX u = MatX::Zero(s.pose_size(), s.pose_size());
  for (std::size_t i = 0; i < s.num_cameras(); ++i)
    u.block(i * s.pose_dim, i * s.pose_dim, s.pose_dim, s.pose_dim) = s.u_block(i);
  return u;
}

MatX dense_v(const SchurSystem& s) {
  MatX v = MatX::Zero(s.landmark_size(), s.landmark_size());
  for (std::size_t j = 0; j < s.num_landmarks(); ++j)
    v.block(j * s.landmark_dim, j * s.landmark_dim, s.landmark_dim, s.landmark_dim) =
        s.v_block(j);
  return v;
}

MatX dense_w(const SchurSystem& s) {
  MatX w = MatX::Zero(s.pose_size(), s.landmark_size());
  for (std::size_t slot = 0; slot < s.graph->num_slots(); ++slot) {
    w.block(s.graph->slot_camera[slot] * s.pose_dim, s.graph->slot_landmark[slot] * s.landmark_dim,
            s.pose_dim, s.landmark_dim) = s.w_block(slot);
  }
  return w;
}

double rel(const MatX& a, const MatX& b) { return testing::relative_error(a, b, 1.0); }

class NormalEqModes : public ::testing::TestWithParam<DampingMode> {};

TEST_P(NormalEqModes, AssemblyMatchesDenseOracle) {
  TestRng rng(31);
  for (const auto& [rows, pd, ld] : {std::tuple{4, 12, 3}, std::tuple{2, 11, 3}}) {
    for (int trial = 0; trial < 5; ++trial) {
      const Fixture f = make_fixture(rng, rng.integer(2, 5), rng.integer(3, 12), rows, pd, ld);
      const double lambda = std::pow(10.0, rng.uniform(-4, 2));
      const SchurSystem s = assemble(f.store, lambda, GetParam());
      const auto n = testing::dense_normal_equations(f.store, lambda, GetParam());
      EXPECT_LT(rel(dense_u(s), n.u()), 1e-12);
      EXPECT_LT(rel(dense_v(s), n.v()), 1e-12);
      EXPECT_LT(rel(dense_w(s), n.w()), 1e-12);
      EXPECT_LT(rel(s.b_p, n.b_p()), 1e-12);
      EXPECT_LT(rel(s.b_l, n.b_l()), 1e-12);
      EXPECT_LT(rel(schur_rhs(s), testing::dense_schur_rhs(n)), 1e-10);
      const VecX x = rng.normal_vector(s.pose_size());
      EXPECT_LT(rel(apply_schur(s, x), testing::dense_schur(n) * x), 1e-10);
      EXPECT_LT(rel(apply_power_operator(s, x), testing::dense_power_operator(n) * x), 1e-7);
      EXPECT_LT(rel(apply_u_inverse(s, x), n.u().inverse() * x), 1e-7);
    }
  }
}

TEST_P(NormalEqModes, SchurBlocksMatchDenseSchurComplement) {
  TestRng rng(32);
  const Fixture f = make_fixture(rng, 4, 10, 4, 12, 3);
  const SchurSystem s = assemble(f.store, 1e-2, GetParam());
  const MatX dense = testing::dense_schur(testing::dense_normal_equations(f.store, 1e-2, GetParam()));
  const auto blocks = schur_block_diagonal(s);
  for (std::size_t i = 0; i < s.num_cameras(); ++i)
    EXPECT_LT(rel(blocks[i], dense.block(i * 12, i * 12, 12, 12)), 1e-10);
  EXPECT_LT(rel(MatX(schur_sparse(s)), dense), 1e-10);
}

INSTANTIATE_TEST_SUITE_P(Damping, NormalEqModes,
                         ::testing::Values(DampingMode::kPoseOnly, DampingMode::kBoth));

TEST(NormalEq, SingleObservationBlocks) {
  BaProblem p;
  p.num_cameras = 1;
  p.num_landmarks = 1;
  p.num_observations = 1;
  p.observations = {{0, 0, Vec2::Zero()}};
  auto graph = std::make_shared<const ObservationGraph>(build_graph(p));
  LandmarkBlockStore store(graph, 1, 2, 1);
  store.slot_block(0) << 1.0, 2.0, 3.0, 0.5;
  const SchurSystem s = assemble(store, 0.0, DampingMode::kPoseOnly);
  MatX u(2, 2);
  u << 1, 2, 2, 4;
  EXPECT_EQ(MatX(s.u_block(0)), u);
  EXPECT_EQ(s.w_block(0)(0, 0), 3.0);
  EXPECT_EQ(s.w_block(0)(1, 0), 6.0);
  EXPECT_EQ(s.v_block(0)(0, 0), 9.0);
  EXPECT_EQ(s.b_p, Vec2(0.5, 1.0));
  EXPECT_EQ(s.b_l[0], 1.5);
}

// Doubling lambda moves only the damped diagonals, by exactly lambda D^2.
TEST(NormalEq, DampingOnlyChangesDiagonal) {
  TestRng rng(33);
  const Fixture f = make_fixture(rng, 3, 6, 4, 12, 3);
  for (DampingMode mode : {DampingMode::kPoseOnly, DampingMode::kBoth}) {
    const SchurSystem a = assemble(f.store, 1e-3, mode);
    const SchurSystem b = assemble(f.store, 2e-3, mode);
    const SchurSystem z = assemble(f.store, 0.0, mode);
    const MatX du = dense_u(b) - dense_u(a);
    const MatX dv = dense_v(b) - dense_v(a);
    EXPECT_LT((du - MatX(du.diagonal().asDiagonal())).norm(), 1e-14);
    EXPECT_LT((dv - MatX(dv.diagonal().asDiagonal())).norm(), 1e-14);
    const VecX diag = dense_u(z).diagonal();
    for (Eigen::Index k = 0; k < diag.size(); ++k) {
      const double d = std::clamp(std::sqrt(diag[k]), kMinJacobiScale, kMaxJacobiScale);
      EXPECT_NEAR(du(k, k), 1e-3 * d * d, 1e-12 * (1 + d * d));
    }
    if (mode == DampingMode::kPoseOnly) EXPECT_EQ(dv.norm(), 0.0);
    else EXPECT_GT(dv.diagonal().minCoeff(), 0.0);
    EXPECT_EQ(dense_w(a), dense_w(b));
  }
}

TEST(NormalEq, ZeroDiagonalUsesMinimumScale) {
  BaProblem p;
  p.num_cameras = 1;
  p.num_landmarks = 1;
  p.num_observations = 1;
  p.observations = {{0, 0, Vec2::Zero()}};
  auto graph = std::make_shared<const ObservationGraph>(build_graph(p));
  LandmarkBlockStore store(graph, 1, 2, 1);
  store.slot_block(0) << 0.0, 1.0, 1.0, 0.0;
  const SchurSystem s = assemble(store, 1.0, DampingMode::kPoseOnly);
  EXPECT_NEAR(s.u_block(0)(0, 0), kMinJacobiScale * kMinJacobiScale, 1e-24);
}

TEST(NormalEq, LandmarkBlocksArePositiveSemidefinite) {
  TestRng rng(34);
  const Fixture f = make_fixture(rng, 4, 12, 4, 12, 3);
  const SchurSystem s = assemble(f.store, 0.0, DampingMode::kPoseOnly);
  for (std::size_t j = 0; j < s.num_landmarks(); ++j) {
    const Eigen::SelfAdjointEigenSolver<MatX> es{MatX(s.v_block(j))};
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-12 * es.eigenvalues().maxCoeff());
  }
}

TEST(NormalEq, ApplySchurIsLinear) {
  TestRng rng(35);
  const Fixture f = make_fixture(rng, 3, 8, 4, 12, 3);
  const SchurSystem s = assemble(f.store, 1e-2, DampingMode::kPoseOnly);
  for (int trial = 0; trial < 10; ++trial) {
    const VecX x = rng.normal_vector(s.pose_size());
    const VecX y = rng.normal_vector(s.pose_size());
    const double a = rng.normal();
    const VecX lhs = apply_schur(s, a * x + y);
    const VecX rhs = a * apply_schur(s, x) + apply_schur(s, y);
    EXPECT_LT((lhs - rhs).norm(), 1e-10 * rhs.norm());
  }
}

TEST(NormalEq, ZeroCouplingReducesToPoseBlocks) {
  TestRng rng(36);
  Fixture f = make_fixture(rng, 3, 5, 4, 12, 3);
  for (std::size_t slot = 0; slot < f.store.num_slots(); ++slot)
    f.store.slot_block(slot).middleCols(12, 3).setZero();
  const SchurSystem s = assemble(f.store, 1e-3, DampingMode::kPoseOnly);
  EXPECT_EQ(dense_w(s).norm(), 0.0);
  const VecX x = rng.normal_vector(s.pose_size());
  EXPECT_LT((apply_schur(s, x) - dense_u(s) * x).norm(), 1e-12 * x.norm());
  EXPECT_EQ(apply_power_operator(s, x).norm(), 0.0);
  EXPECT_LT((schur_rhs(s) + s.b_p).norm(), 1e-14);
  for (char d : s.landmark_degenerate) EXPECT_TRUE(d);
}

// The back-substituted landmark step together with the exact Schur pose step
// solves the full damped system.
TEST(NormalEq, BackSubstitutionSolvesFullSystem) {
  TestRng rng(37);
  for (DampingMode mode : {DampingMode::kPoseOnly, DampingMode::kBoth}) {
    const Fixture f = make_fixture(rng, 3, 7, 4, 12, 3);
    const SchurSystem s = assemble(f.store, 1e-2, mode);
    const auto n = testing::dense_normal_equations(f.store, 1e-2, mode);
    const VecX dp = testing::dense_schur_step(n);
    const VecX dl = back_substitute(s, dp);
    VecX full(dp.size() + dl.size());
    full << dp, dl;
    const VecX residual = n.h * full + n.b;
    EXPECT_LT(residual.norm(), 1e-9 * n.b.norm());
  }
}

}  // namespace
}  // namespace povar
