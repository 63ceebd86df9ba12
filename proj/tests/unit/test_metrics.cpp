#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "oracles/oracles.hpp"
#include "recall/metrics/metrics.hpp"

namespace {

using namespace recall;
using metrics::EvalLog;

// Evenly spaced log: `p[k]` is the success vector at step k * interval.
EvalLog log_from(const std::vector<std::vector<double>>& p, std::int64_t delta, std::int64_t interval) {
  EvalLog log;
  log.steps_per_task = delta;
  log.tasks = static_cast<int>(p.front().size());
  for (std::size_t k = 0; k < p.size(); ++k)
    log.checkpoints.push_back({static_cast<std::int64_t>(k) * interval, p[k]});
  return log;
}

TEST(AveragePerformance, HandValues) {
  const auto log = log_from({{0.0, 0.0}, {0.9, 0.3}}, 10, 10);
  EXPECT_DOUBLE_EQ(metrics::average_performance(log, 10), 0.6);
  const auto ones = log_from({{1.0, 1.0, 1.0}}, 10, 10);
  EXPECT_DOUBLE_EQ(metrics::average_performance(ones, 0), 1.0);
  const auto single = log_from({{0.2}, {0.7}}, 5, 5);
  EXPECT_DOUBLE_EQ(metrics::average_performance(single, 5), 0.7);
}

TEST(AveragePerformance, UnloggedStepIsRefused) {
  const auto log = log_from({{0.0}, {1.0}}, 10, 10);
  EXPECT_THROW(metrics::average_performance(log, 5), ContractError);
}

TEST(Forgetting, HandValues) {
  const auto f = log_from({{0.0, 0.0}, {0.9, 0.0}, {0.8, 0.95}}, 100, 100);
  EXPECT_NEAR(metrics::forgetting(f), 0.05, 1e-15);
  const auto b = log_from({{0.0, 0.0}, {0.5, 0.1}, {0.7, 0.1}}, 100, 100);
  EXPECT_NEAR(metrics::forgetting(b), -0.1, 1e-15);
  const auto flat = log_from({{0.4, 0.4}, {0.4, 0.4}, {0.4, 0.4}}, 100, 100);
  EXPECT_EQ(metrics::forgetting(flat), 0.0);
}

TEST(Forgetting, MissingBoundaryIsError) {
  auto log = log_from({{0.0, 0.0}, {0.9, 0.0}, {0.8, 0.95}}, 100, 100);
  log.checkpoints.erase(log.checkpoints.begin() + 1);
  EXPECT_THROW(metrics::forgetting(log), ContractError);
}

// Ten random logs: P and F agree with the brute-force oracles exactly and
// satisfy P(N delta) = mean_i p_i(i delta) - F.
TEST(Forgetting, MatchesBruteForceAndIdentity) {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<int> pick(0, 20);
  for (int trial = 0; trial < 10; ++trial) {
    const int tasks = 2 + trial % 4;
    const int per_task = 3;
    std::vector<std::vector<double>> p(static_cast<std::size_t>(tasks * per_task + 1), std::vector<double>(tasks));
    for (auto& row : p)
      for (auto& v : row) v = pick(rng) / 20.0;
    const auto log = log_from(p, 300, 100);
    const double f = metrics::forgetting(log);
    EXPECT_EQ(f, oracles::brute_force_forgetting(p, tasks, per_task));
    const double perf = metrics::average_performance(log, static_cast<std::int64_t>(tasks) * 300);
    double own = 0.0;
    for (int i = 0; i < tasks; ++i) own += p[static_cast<std::size_t>((i + 1) * per_task)][static_cast<std::size_t>(i)];
    EXPECT_NEAR(perf, own / tasks - f, 1e-12);
  }
}

TEST(Auc, TrapezoidMatchesOracle) {
  metrics::Curve ramp{{0, 50, 100}, {0.0, 0.5, 1.0}};
  EXPECT_DOUBLE_EQ(metrics::normalized_auc(ramp, 100), 0.5);
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  metrics::Curve c;
  for (int k = 0; k <= 30; ++k) {
    c.steps.push_back(k * 10);
    c.values.push_back(u(rng));
  }
  EXPECT_NEAR(metrics::normalized_auc(c, 300), oracles::brute_force_auc(c.values), 1e-15);
  EXPECT_THROW(metrics::normalized_auc(metrics::Curve{{0, 50}, {0.0, 1.0}}, 100), ContractError);
}

metrics::ReferenceCurves refs_of(std::vector<std::vector<double>> values, std::int64_t delta) {
  metrics::ReferenceCurves r;
  r.window = delta;
  for (auto& v : values) {
    metrics::Curve c;
    for (std::size_t k = 0; k < v.size(); ++k) c.steps.push_back(static_cast<std::int64_t>(k) * delta / (v.size() - 1));
    c.values = v;
    r.curves.push_back(c);
  }
  return r;
}

TEST(ForwardTransfer, HandValues) {
  // Task 0 ramps 0 to 1 (AUC 0.5) against a reference with AUC 0.25.
  // Task 1 is always solved (AUC 1) against a reference with AUC 0.5.
  const auto log = log_from({{0.0, 0.0}, {0.5, 1.0}, {1.0, 1.0}, {1.0, 1.0}, {1.0, 1.0}}, 200, 100);
  const auto ft = metrics::forward_transfer(log, refs_of({{0.0, 0.0, 1.0}, {0.5, 0.5, 0.5}}, 200));
  ASSERT_TRUE(ft.per_task[0] && ft.per_task[1]);
  EXPECT_NEAR(*ft.per_task[0], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(*ft.per_task[1], 1.0, 1e-15);
  EXPECT_NEAR(*ft.mean, 2.0 / 3.0, 1e-15);
}

TEST(ForwardTransfer, EqualCurvesGiveZeroAndSolvedReferenceIsMissing) {
  const auto log = log_from({{0.0, 0.3}, {0.4, 0.3}, {0.4, 0.8}}, 100, 100);
  const auto ft = metrics::forward_transfer(log, refs_of({{0.0, 0.4}, {1.0, 1.0}}, 100));
  ASSERT_TRUE(ft.per_task[0]);
  EXPECT_EQ(*ft.per_task[0], 0.0);
  EXPECT_FALSE(ft.per_task[1]);
  EXPECT_EQ(*ft.mean, 0.0);
}

TEST(ForwardTransfer, IgnoresCheckpointsOutsideTheWindow) {
  auto log = log_from({{0.0, 0.0}, {0.5, 0.2}, {0.5, 0.6}}, 100, 100);
  const auto refs = refs_of({{0.0, 0.2}, {0.0, 0.2}}, 100);
  const auto base = metrics::forward_transfer(log, refs);
  log.checkpoints.push_back({300, {0.9, 0.9}});
  log.checkpoints.push_back({400, {0.9, 0.9}});
  const auto extended = metrics::forward_transfer(log, refs);
  EXPECT_EQ(*base.per_task[0], *extended.per_task[0]);
  EXPECT_EQ(*base.per_task[1], *extended.per_task[1]);
}

TEST(Bootstrap, ConstantSamplesGiveDegenerateInterval) {
  std::mt19937_64 rng(14);
  const std::vector<double> s{0.7, 0.7, 0.7};
  const auto ci = metrics::bootstrap_ci<std::mt19937_64>(s, 0.95, 1000, rng);
  EXPECT_DOUBLE_EQ(ci.low, 0.7);
  EXPECT_DOUBLE_EQ(ci.high, 0.7);
}

TEST(Bootstrap, SeededIntervalCoversSampleMean) {
  std::mt19937_64 rng(15);
  const std::vector<double> s{0.0, 0.0, 1.0, 1.0, 1.0};
  const auto ci = metrics::bootstrap_ci<std::mt19937_64>(s, 0.95, 10000, rng);
  EXPECT_LE(ci.low, 0.6);
  EXPECT_GE(ci.high, 0.6);
  EXPECT_GT(ci.high - ci.low, 0.0);
  std::mt19937_64 again(15);
  const auto ci2 = metrics::bootstrap_ci<std::mt19937_64>(s, 0.95, 10000, again);
  EXPECT_EQ(ci.low, ci2.low);
  EXPECT_EQ(ci.high, ci2.high);
}

TEST(Bootstrap, ZeroLevelCollapsesToMedianOfMeans) {
  std::mt19937_64 rng(16);
  const std::vector<double> s{0.0, 1.0, 0.5, 0.25};
  const auto ci = metrics::bootstrap_ci<std::mt19937_64>(s, 0.0, 999, rng);
  EXPECT_EQ(ci.low, ci.high);
}

TEST(Bootstrap, BadArgumentsAreContractErrors) {
  std::mt19937_64 rng(17);
  const std::vector<double> none;
  const std::vector<double> one{1.0};
  EXPECT_THROW(metrics::bootstrap_ci<std::mt19937_64>(none, 0.9, 10, rng), ContractError);
  EXPECT_THROW(metrics::bootstrap_ci<std::mt19937_64>(one, 0.9, 0, rng), ContractError);
  EXPECT_THROW(metrics::bootstrap_ci<std::mt19937_64>(one, 1.0, 10, rng), ContractError);
}

TEST(Pairwise, EntriesHolesAndMeans) {
  std::vector<std::optional<EvalLog>> logs(4);
  logs[0] = log_from({{0.0, 0.0}, {0.9, 0.1}, {0.9, 0.8}}, 10, 10);  // diagonal: same task twice
  logs[1] = log_from({{0.0, 0.0}, {1.0, 0.0}, {0.6, 0.2}}, 10, 10);
  logs[3] = log_from({{0.0, 0.0}, {0.5, 0.5}, {0.5, 1.0}}, 10, 10);
  const auto m = metrics::pairwise_matrices(2, logs);
  EXPECT_DOUBLE_EQ(*m.first_perf_at(0, 1), 0.6);
  EXPECT_DOUBLE_EQ(*m.second_perf_at(0, 1), 0.2);
  EXPECT_NEAR(*m.forgetting_at(0, 1), 0.4, 1e-15);
  EXPECT_EQ(*m.forgetting_at(0, 0), 0.0);
  EXPECT_EQ(*m.forgetting_at(1, 1), 0.0);
  ASSERT_EQ(m.holes().size(), 1u);
  EXPECT_EQ(m.holes()[0], std::make_pair(1, 0));
  EXPECT_FALSE(m.second_perf_at(1, 0));
  EXPECT_NEAR(*metrics::PairwiseMatrices::mean_of(m.first_perf), (0.9 + 0.6 + 0.5) / 3.0, 1e-15);
}

TEST(Pairwise, WrongShapeIsContractError) {
  EXPECT_THROW(metrics::pairwise_matrices(2, std::vector<std::optional<EvalLog>>(3)), ContractError);
  std::vector<std::optional<EvalLog>> logs(1);
  logs[0] = log_from({{0.0}, {1.0}, {1.0}}, 10, 10);
  EXPECT_THROW(metrics::pairwise_matrices(1, logs), ContractError);
}

TEST(EvalLogValidate, RejectsMalformedLogs) {
  auto log = log_from({{0.0, 0.0}, {0.5, 0.5}}, 10, 10);
  EXPECT_NO_THROW(log.validate());
  log.checkpoints[1].step = 0;
  EXPECT_THROW(log.validate(), StructuralError);
  log = log_from({{0.0, 0.0}, {1.5, 0.5}}, 10, 10);
  EXPECT_THROW(log.validate(), StructuralError);
  log = log_from({{0.0, 0.0}, {0.5, 0.5}}, 10, 10);
  log.checkpoints[1].success.pop_back();
  EXPECT_THROW(log.validate(), StructuralError);
}

}  // namespace
