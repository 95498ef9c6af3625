#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <random>

#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "tango/errors.hpp"
#include "tango/ot.hpp"

using namespace tango;
using ad::Tensor;

namespace {

ot::CostMatrix random_cost(std::mt19937_64& rng, std::size_t n, std::size_t m) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(n * m);
  for (auto& x : v) x = u(rng);
  return ot::cost_matrix_from_values(n, m, v);
}

double row_col_residual(const ot::TransportPlan& p) {
  double worst = 0.0;
  for (std::size_t i = 0; i < p.rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < p.cols; ++j) s += p.at(i, j);
    worst = std::max(worst, std::abs(s - 1.0 / p.rows));
  }
  for (std::size_t j = 0; j < p.cols; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < p.rows; ++i) s += p.at(i, j);
    worst = std::max(worst, std::abs(s - 1.0 / p.cols));
  }
  return worst;
}

}  // namespace

TEST(Sinkhorn, RandomCostMeetsMarginals) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    const auto m = random_cost(rng, 16, 16);
    ot::SinkhornConfig cfg;
    cfg.max_iterations = 500;
    const auto p = ot::sinkhorn(m, cfg);
    EXPECT_TRUE(p.converged);
    EXPECT_LE(p.residual, 1e-6);
    EXPECT_LE(row_col_residual(p), 1e-6);
    double mass = 0.0;
    for (double x : p.gamma) {
      EXPECT_GE(x, 0.0);
      mass += x;
    }
    EXPECT_NEAR(mass, 1.0, 1e-9);
  }
}

TEST(Sinkhorn, RectangularPlan) {
  std::mt19937_64 rng(5);
  const auto m = random_cost(rng, 3, 7);
  const auto p = ot::sinkhorn(m, {});
  EXPECT_TRUE(p.converged);
  EXPECT_LE(row_col_residual(p), 1e-6);
}

TEST(Sinkhorn, MatchesScalingOracle) {
  const std::vector<std::vector<double>> costs{
      {0.0, 1.0, 0.5, 1.0, 0.0, 0.25, 0.5, 0.25, 0.0},
      {0.1, 0.9, 0.7, 0.3},
      {0.3, 0.2, 0.9, 0.4, 0.0, 0.6, 1.0, 0.8, 0.1}};
  for (const auto& c : costs) {
    const std::size_t n = c.size() == 4 ? 2 : 3;
    ot::SinkhornConfig cfg;
    cfg.epsilon = 1.0;
    cfg.max_iterations = 10000;
    cfg.tolerance = 1e-15;
    const auto p = ot::sinkhorn(ot::cost_matrix_from_values(n, n, c), cfg);
    const auto ref = check::scaling_plan(c, n, n, 1.0);
    for (std::size_t k = 0; k < ref.size(); ++k) {
      EXPECT_NEAR(p.gamma[k], ref[k], 1e-8);
    }
  }
}

TEST(Sinkhorn, SmallEpsilonApproachesExactTransport) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const auto m = random_cost(rng, 4, 4);
    ot::SinkhornConfig cfg;
    cfg.epsilon = 0.001;
    cfg.max_iterations = 20000;
    const auto p = ot::sinkhorn(m, cfg);
    const double exact = check::exact_ot_by_permutations(m.values, 4);
    EXPECT_NEAR(ot::ot_distance(p, m), exact, 0.02 * exact) << "trial " << trial;
  }
}

TEST(Sinkhorn, EntropyGrowsWithEpsilon) {
  std::mt19937_64 rng(9);
  const auto m = random_cost(rng, 5, 5);
  double prev = -1.0;
  for (double eps : {0.01, 0.05, 0.1, 0.5, 1.0, 5.0}) {
    ot::SinkhornConfig cfg;
    cfg.epsilon = eps;
    cfg.max_iterations = 5000;
    cfg.tolerance = 1e-12;
    const double h = check::plan_entropy(ot::sinkhorn(m, cfg).gamma);
    EXPECT_GT(h, prev) << "eps " << eps;
    prev = h;
  }
  EXPECT_LE(prev, std::log(25.0) + 1e-12);
}

TEST(Sinkhorn, ConstantCostGivesUniformPlan) {
  const auto m = ot::cost_matrix_from_values(2, 3, std::vector<double>(6, 0.4));
  const auto p = ot::sinkhorn(m, {});
  for (double x : p.gamma) EXPECT_NEAR(x, 1.0 / 6.0, 1e-12);
}

TEST(Sinkhorn, ReportsNonConvergence) {
  std::mt19937_64 rng(1);
  const auto m = random_cost(rng, 8, 8);
  ot::SinkhornConfig cfg;
  cfg.epsilon = 0.001;
  cfg.max_iterations = 2;
  const auto p = ot::sinkhorn(m, cfg);
  EXPECT_FALSE(p.converged);
  EXPECT_EQ(p.iterations_used, 2);
  EXPECT_GT(p.residual, cfg.tolerance);
}

TEST(Sinkhorn, NonFiniteCostIsNumericError) {
  auto m = ot::cost_matrix_from_values(2, 2, {0.0, 1.0, 1.0, 0.0});
  m.values[1] = std::nan("");
  EXPECT_THROW(ot::sinkhorn(m, {}), NumericError);
}

TEST(Sinkhorn, ConfigValidation) {
  ot::SinkhornConfig cfg;
  cfg.epsilon = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.max_iterations = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.tolerance = -1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(CostMatrix, MatchesBruteForceAndIsNormalized) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + trial % 4, m = 3 + trial % 3, d = 1 + trial % 5;
    const Tensor a = check::random_tensor(rng, {n, d});
    const Tensor b = check::random_tensor(rng, {m, d});
    const auto c = ot::cost_matrix(a, b);
    const auto raw = check::pairwise_distances(a.data, b.data, n, m, d);
    const double mx = *std::max_element(raw.begin(), raw.end());
    double top = 0.0;
    for (std::size_t k = 0; k < raw.size(); ++k) {
      EXPECT_NEAR(c.values[k], raw[k] / mx, 1e-12);
      top = std::max(top, c.values[k]);
    }
    EXPECT_NEAR(top, 1.0, 1e-15);
    EXPECT_NEAR(c.max_raw, mx, 1e-12);
  }
}

TEST(CostMatrix, ScaleInvariant) {
  std::mt19937_64 rng(22);
  for (double s : {1e-3, 0.5, 3.0, 1e4}) {
    const Tensor a = check::random_tensor(rng, {4, 3});
    const Tensor b = check::random_tensor(rng, {5, 3});
    Tensor as = a, bs = b;
    for (auto& v : as.data) v *= s;
    for (auto& v : bs.data) v *= s;
    const auto c1 = ot::cost_matrix(a, b);
    const auto c2 = ot::cost_matrix(as, bs);
    for (std::size_t k = 0; k < c1.values.size(); ++k) {
      EXPECT_NEAR(c1.values[k], c2.values[k], 1e-12);
    }
  }
}

TEST(CostMatrix, IdenticalPointsHitZeroGuard) {
  const Tensor a({2, 2}, std::vector<double>{1, 2, 1, 2});
  const auto c = ot::cost_matrix(a, a);
  EXPECT_TRUE(c.zero_guarded);
  for (double v : c.values) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(ot::cost_matrix(a, Tensor({2, 3})), ShapeError);
}

TEST(CostMatrix, GraphVersionAgreesWithValueVersion) {
  std::mt19937_64 rng(4);
  const Tensor a = check::random_tensor(rng, {2, 3, 4});
  const Tensor b = check::random_tensor(rng, {2, 5, 4});
  ad::Graph g;
  const auto& c = g.value(ot::cost_matrix(g, g.constant(a), g.constant(b), 1e-12));
  for (std::size_t bi = 0; bi < 2; ++bi) {
    Tensor ab({3, 4}, std::vector<double>(a.data.begin() + bi * 12, a.data.begin() + bi * 12 + 12));
    Tensor bb({5, 4}, std::vector<double>(b.data.begin() + bi * 20, b.data.begin() + bi * 20 + 20));
    const auto ref = ot::cost_matrix(ab, bb);
    for (std::size_t k = 0; k < 15; ++k) EXPECT_DOUBLE_EQ(c[bi * 15 + k], ref.values[k]);
  }
}

TEST(SinkhornPlan, StopGradientByDefault) {
  std::mt19937_64 rng(8);
  Tensor cost = check::positive_tensor(rng, {1, 3, 3});
  cost.requires_grad = true;
  cost.zero_grad();
  ad::Graph g;
  std::vector<ot::TransportPlan> plans;
  auto plan = ot::sinkhorn_plan(g, g.parameter(cost), {}, false, &plans);
  ASSERT_EQ(plans.size(), 1u);
  EXPECT_FALSE(g.needs_grad(plan));
  for (std::size_t k = 0; k < 9; ++k) EXPECT_DOUBLE_EQ(g.value(plan)[k], plans[0].gamma[k]);
}

TEST(Transport, ScalesByTokenCount) {
  const auto m = ot::cost_matrix_from_values(2, 2, {0.0, 1.0, 1.0, 0.0});
  ot::SinkhornConfig cfg;
  cfg.epsilon = 0.01;
  const auto p = ot::sinkhorn(m, cfg);
  const Tensor x1({2, 1}, std::vector<double>{1.0, 2.0});
  const Tensor x2({2, 1}, std::vector<double>{10.0, 20.0});
  const auto t = ot::transport(p, x1, x2, ot::Direction::kBoth);
  ASSERT_TRUE(t.into_view1 && t.into_view2);
  // The near-identity plan moves each token onto its partner.
  EXPECT_NEAR((*t.into_view1)[0], 10.0, 1e-6);
  EXPECT_NEAR((*t.into_view1)[1], 20.0, 1e-6);
  EXPECT_NEAR((*t.into_view2)[0], 1.0, 1e-6);
  EXPECT_NEAR((*t.into_view2)[1], 2.0, 1e-6);

  const auto one = ot::transport(p, x1, x2, ot::Direction::kX2ToX1);
  EXPECT_TRUE(one.into_view1.has_value());
  EXPECT_FALSE(one.into_view2.has_value());
  const auto other = ot::transport(p, x1, x2, ot::Direction::kX1ToX2);
  EXPECT_FALSE(other.into_view1.has_value());
  EXPECT_TRUE(other.into_view2.has_value());
}

TEST(Transport, UniformPlanAveragesTokens) {
  const auto m = ot::cost_matrix_from_values(2, 3, std::vector<double>(6, 0.0));
  const auto p = ot::sinkhorn(m, {});
  const Tensor x1({2, 1}, std::vector<double>{1.0, 3.0});
  const Tensor x2({3, 1}, std::vector<double>{3.0, 6.0, 9.0});
  const auto t = ot::transport(p, x1, x2, ot::Direction::kBoth);
  EXPECT_NEAR((*t.into_view1)[0], 6.0, 1e-12);
  EXPECT_NEAR((*t.into_view2)[2], 2.0, 1e-12);
}

TEST(Direction, ParsesBothSpellings) {
  EXPECT_EQ(ot::parse_direction("x1-to-x2"), ot::Direction::kX1ToX2);
  EXPECT_EQ(ot::parse_direction("x2_to_x1"), ot::Direction::kX2ToX1);
  EXPECT_EQ(ot::parse_direction("both"), ot::Direction::kBoth);
  EXPECT_THROW(ot::parse_direction("sideways"), ConfigError);
}

TEST(Gate, KnownValues) {
  const auto y = ot::gate(Tensor({3}, std::vector<double>{0.0, 10.0, -10.0}));
  EXPECT_EQ(y[0], 0.0);
  EXPECT_NEAR(y[1], 9.99954602, 1e-8);
  EXPECT_NEAR(y[2], -4.5398e-4, 1e-8);
}
