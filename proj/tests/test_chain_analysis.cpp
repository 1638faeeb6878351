#include <gtest/gtest.h>

#include "dcdr/chain_analysis.hpp"
#include "test_oracles.hpp"

using namespace dcdr;

TEST(DoublyStochastic, Examples) {
  const auto id = check_doubly_stochastic(Eigen::MatrixXd::Identity(5, 5));
  EXPECT_TRUE(id.ok);
  EXPECT_EQ(id.max_row_deviation, 0.0);
  EXPECT_EQ(id.max_col_deviation, 0.0);

  PermTransitionModel tm(3, NoiseSchedule(0.3, 1));
  EXPECT_TRUE(check_doubly_stochastic(tm.step_matrix()).ok);
  EXPECT_TRUE(check_doubly_stochastic(tm.dense_step_matrix()).ok);

  Eigen::MatrixXd bad = tm.dense_step_matrix();
  bad.row(2) *= 1.1;
  const auto r = check_doubly_stochastic(bad);
  EXPECT_FALSE(r.ok);
  EXPECT_NEAR(r.max_row_deviation, 0.1, 1e-12);

  EXPECT_THROW(check_doubly_stochastic(Eigen::MatrixXd::Ones(2, 3)), InvalidMatrix);
  Eigen::MatrixXd neg = Eigen::MatrixXd::Identity(2, 2);
  neg(0, 1) = -0.1;
  EXPECT_THROW(check_doubly_stochastic(neg), InvalidMatrix);
}

TEST(Ergodic, Examples) {
  PermTransitionModel q(3, NoiseSchedule(0.3, 1));
  EXPECT_TRUE(check_ergodic(q.step_matrix()));
  EXPECT_TRUE(check_ergodic(q.dense_step_matrix()));
  TokenTransitionModel o(4, NoiseSchedule(0.3, 1));
  EXPECT_TRUE(check_ergodic(o.step_matrix()));

  Eigen::MatrixXd flip(2, 2);
  flip << 0, 1, 1, 0;
  EXPECT_FALSE(check_ergodic(flip));
  // Reducible: two closed classes, each with self-loops.
  Eigen::MatrixXd split = Eigen::MatrixXd::Identity(4, 4);
  EXPECT_FALSE(check_ergodic(split));
}

TEST(TvCurve, StartsAtPointMassDistance) {
  TokenTransitionModel o(5, NoiseSchedule(0.2, 1));
  const auto curve = tv_curve(o.step_matrix(), 3);
  EXPECT_NEAR(curve[0].tv, 1.0 - 1.0 / 5.0, 1e-15);
}

TEST(TvCurve, TwoStateHalfBetaMixesInOneStep) {
  TokenTransitionModel o(2, NoiseSchedule(0.5, 1));
  const auto report = stationary_gap(o, 4);
  EXPECT_NEAR(report.tv_curve[0].tv, 0.5, 1e-15);
  for (std::size_t t = 1; t <= 4; ++t) EXPECT_EQ(report.tv_curve[t].tv, 0.0);
  EXPECT_EQ(report.mixing_step.value(), 1u);
}

// Mixing step for Q(l_o=3, beta=0.3) taken from dense matrix powers of the oracle kernel.
TEST(TvCurve, PermutationKernelMatchesDensePowers) {
  PermTransitionModel tm(3, NoiseSchedule(0.3, 2));
  const auto report = stationary_gap(tm, 60);
  const Eigen::MatrixXd q = oracle::dense_perm_kernel(3, 0.3);
  std::optional<std::size_t> oracle_t;
  for (std::size_t t = 0; t <= 60; ++t) {
    const Eigen::MatrixXd p = oracle::power(q, t);
    double worst = 0.0;
    for (Eigen::Index i = 0; i < p.rows(); ++i)
      worst = std::max(worst, 0.5 * (p.row(i).array() - 1.0 / 6.0).abs().sum());
    EXPECT_NEAR(report.tv_curve[t].tv, worst, 1e-14);
    if (!oracle_t && worst < 1e-3) oracle_t = t;
    if (t > 0) EXPECT_LT(report.tv_curve[t].tv, report.tv_curve[t - 1].tv);
  }
  ASSERT_TRUE(oracle_t.has_value());
  EXPECT_EQ(report.mixing_step, oracle_t);
  EXPECT_EQ(*report.mixing_step, 19u);
  EXPECT_TRUE(report.ergodic);
  EXPECT_TRUE(report.doubly_stochastic.ok);
}

TEST(TvCurve, GroupShortcutAgreesWithAllStarts) {
  PermTransitionModel tm(4, NoiseSchedule(0.2, 3));
  const auto fast = stationary_gap(tm, 40);
  const auto full = stationary_gap(tm.dense_step_matrix(), 40);
  for (std::size_t t = 0; t <= 40; ++t) EXPECT_NEAR(fast.tv_curve[t].tv, full.tv_curve[t].tv, 1e-13);
}

TEST(Stationary, UniformIsFixedPoint) {
  for (std::size_t lo : {3u, 4u, 5u}) {
    PermTransitionModel tm(lo, NoiseSchedule(0.3, 1));
    EXPECT_LT(uniform_residual(tm.step_matrix()), 1e-12);
  }
  TokenTransitionModel o(6, NoiseSchedule(0.45, 1));
  EXPECT_LT(uniform_residual(o.step_matrix()), 1e-12);
}
