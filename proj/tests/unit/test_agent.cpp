#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include "recall/agent/agent.hpp"

namespace {

using namespace recall;
using agent::Agent;
using agent::AgentConfig;
using agent::TaskSequence;
using agent::Variant;
using Mat = numkit::Matrix<double>;

// Small, fast configuration: real training code paths at toy sizes.
AgentConfig small_config(Variant v) {
  AgentConfig c;
  c.variant = v;
  c.exploration_steps = 50;
  c.best_return_episodes = 1;
  c.actor_trunk = {16};
  c.critic_trunk = {16};
  c.critic_head = {8};
  c.sac.batch = 16;
  return c;
}

TaskSequence small_sequence(int tasks, std::int64_t steps) {
  envs::SuiteConfig sc;
  for (int k = 0; k < tasks; ++k) {
    envs::TaskConfig t;
    t.id = k;
    t.goal_angle_deg = 72.0 * k;
    t.rotation_deg = 36.0 * k;
    t.reward_scale = k % 2 == 0 ? 10.0 : 1.0;
    t.horizon = 20;
    sc.tasks.push_back(t);
  }
  TaskSequence seq;
  seq.tasks = envs::make_task_suite(sc);
  seq.steps_per_task = steps;
  seq.eval_interval = 50;
  seq.eval_episodes = 3;
  return seq;
}

void finish_task(Agent<double>& a) {
  while (a.task_steps() < a.sequence().steps_per_task) a.train_step();
}

template <typename Net>
bool same_head(const Net& net, std::size_t x, std::size_t y) {
  const auto& a = net.head(x);
  const auto& b = net.head(y);
  for (std::size_t k = 0; k < a.layers.size(); ++k)
    if (!(a.layers[k].weight.array() == b.layers[k].weight.array()).all() ||
        !(a.layers[k].bias.array() == b.layers[k].bias.array()).all())
      return false;
  return true;
}

template <typename Net>
bool same_params(const Net& x, const Net& y) {
  for (std::size_t h = 0; h < x.heads(); ++h) {
    const auto& a = x.head(h);
    const auto& b = y.head(h);
    for (std::size_t k = 0; k < a.layers.size(); ++k)
      if (!(a.layers[k].weight.array() == b.layers[k].weight.array()).all()) return false;
  }
  return true;
}

TEST(SelectBestHead, ArgmaxWithLowestIndexTies) {
  EXPECT_EQ(agent::select_best_head(std::vector<double>{5.0, 10.0}), 1u);
  EXPECT_EQ(agent::select_best_head(std::vector<double>{3.0, 3.0, 1.0}), 0u);
  EXPECT_THROW(agent::select_best_head(std::vector<double>{}), ContractError);
}

TEST(SelectBestHead, InvariantToPositiveRescaling) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 5.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> r(1 + trial % 6);
    for (auto& v : r) v = std::round(n(rng));
    const double k = std::exp(n(rng) / 5.0);
    std::vector<double> scaled = r;
    for (auto& v : scaled) v *= k;
    EXPECT_EQ(agent::select_best_head(r), agent::select_best_head(scaled));
  }
}

TEST(BestReturn, OnForTheRecallFamilyOffForBaselines) {
  EXPECT_TRUE(small_config(Variant::tn_pd).uses_best_return());
  EXPECT_TRUE(small_config(Variant::tn).uses_best_return());
  EXPECT_TRUE(small_config(Variant::pd).uses_best_return());
  EXPECT_FALSE(small_config(Variant::perfect_memory).uses_best_return());
  EXPECT_FALSE(small_config(Variant::finetune).uses_best_return());
  auto none = small_config(Variant::perfect_memory);
  none.best_return_exploration = true;
  EXPECT_TRUE(none.uses_best_return());
}

TEST(BeginTask, BaselineKeepsItsFreshHead) {
  Agent<double> a(small_config(Variant::perfect_memory), small_sequence(2, 60), 6);
  a.begin_task(0);
  finish_task(a);
  a.begin_task(1);
  EXPECT_FALSE(a.last_best_head());
  EXPECT_FALSE(same_head(a.actor(), 0, 1));
  EXPECT_EQ(a.task_steps(), 0);
}

TEST(BeginTask, StubReturnsPickTheBetterHeadForActorAndCritic) {
  Agent<double> a(small_config(Variant::tn_pd), small_sequence(3, 60), 7);
  a.set_head_scorer([](std::size_t h, std::size_t) { return h == 0 ? 5.0 : 10.0; });
  a.begin_task(0);
  finish_task(a);
  a.begin_task(1);
  finish_task(a);
  a.begin_task(2);
  EXPECT_EQ(a.last_best_head(), 1u);
  EXPECT_TRUE(same_head(a.actor(), 1, 2));
  for (const auto& c : a.critics()) EXPECT_TRUE(same_head(c, 1, 2));
  for (const auto& c : a.target_critics()) EXPECT_TRUE(same_head(c, 1, 2));
  EXPECT_FALSE(same_head(a.actor(), 0, 2));
}

TEST(BeginTask, NewHeadGetsFreshStatsAndTemperature) {
  Agent<double> a(small_config(Variant::tn_pd), small_sequence(2, 150), 8);
  a.begin_task(0);
  finish_task(a);
  EXPECT_NE(a.stats().head(0).update_count, 0);
  EXPECT_NE(a.temperature().alpha(0), 0.1);
  a.begin_task(1);
  EXPECT_EQ(a.stats().head(1).update_count, 0);
  EXPECT_EQ(a.stats().head(1).mu, 0.0);
  EXPECT_EQ(a.stats().head(1).sigma, 1.0);
  EXPECT_NEAR(a.temperature().alpha(1), 0.1, 1e-12);
}

TEST(BeginTask, UnsharedNetworksAreNotCopied) {
  auto cfg = small_config(Variant::perfect_memory);
  cfg.best_return_exploration = true;
  cfg.shared_critic = false;
  Agent<double> a(cfg, small_sequence(2, 60), 9);
  a.begin_task(0);
  finish_task(a);
  a.begin_task(1);
  EXPECT_EQ(a.last_best_head(), 0u);
  EXPECT_TRUE(same_head(a.actor(), 0, 1));
  for (const auto& c : a.critics()) EXPECT_FALSE(same_head(c, 0, 1));
}

TEST(BeginTask, ScoringEpisodesAreChargedToTheBudget) {
  Agent<double> a(small_config(Variant::tn), small_sequence(2, 60), 10);
  a.begin_task(0);
  finish_task(a);
  const auto before = a.store().new_size();
  a.begin_task(1);
  EXPECT_GT(a.task_steps(), 0);
  EXPECT_EQ(static_cast<std::int64_t>(a.store().new_size()), a.task_steps());
  EXPECT_GT(before, 0u);
}

TEST(BeginTask, ContractErrors) {
  Agent<double> a(small_config(Variant::tn_pd), small_sequence(2, 60), 11);
  EXPECT_THROW(a.begin_task(1), ContractError);
  EXPECT_THROW(a.train_step(), ContractError);
  a.begin_task(0);
  a.train_step();
  EXPECT_THROW(a.begin_task(1), ContractError);
  finish_task(a);
  EXPECT_THROW(a.begin_task(0), ContractError);
  a.begin_task(1);
  finish_task(a);
  EXPECT_THROW(a.begin_task(2), ContractError);
}

TEST(Config, InvalidValuesAreRejected) {
  auto cfg = small_config(Variant::tn_pd);
  cfg.lambda = -1.0;
  EXPECT_THROW(Agent<double>(cfg, small_sequence(1, 10), 1), ConfigError);
  cfg = small_config(Variant::tn_pd);
  cfg.replay_ratio = 2.0;
  EXPECT_THROW(Agent<double>(cfg, small_sequence(1, 10), 1), ConfigError);
  auto seq = small_sequence(1, 10);
  seq.eval_interval = 0;
  EXPECT_THROW(Agent<double>(small_config(Variant::tn_pd), seq, 1), ConfigError);
}

// Without target normalization the statistics never move, and the targets
// the agent trains on reduce to the plain soft Bellman target.
TEST(PerfectMemory, TargetsEqualPlainSoftBellmanTargets) {
  Agent<double> a(small_config(Variant::perfect_memory), small_sequence(2, 120), 12);
  a.begin_task(0);
  finish_task(a);
  a.begin_task(1);
  finish_task(a);
  for (std::size_t h = 0; h < 2; ++h) {
    EXPECT_EQ(a.stats().head(h).mu, 0.0);
    EXPECT_EQ(a.stats().head(h).sigma, 1.0);
    EXPECT_EQ(a.stats().head(h).update_count, 0);
  }

  std::vector<envs::Transition> four;
  for (int k = 0; k < 4; ++k) {
    envs::Transition t;
    t.task_id = k % 2;
    t.state = {0.1 * k, -0.2, 1.0, 0.0};
    t.next_state = {0.1 * k + 0.05, -0.15, 1.0, 0.0};
    t.action = {0.5, -0.5};
    t.reward = k == 3 ? 11.0 : 0.3 * k - 0.1;
    t.done = k == 3;
    t.success = t.done;
    four.push_back(t);
  }
  const auto batch = sac::make_batch<double>(std::span<const envs::Transition>(four));
  Mat noise(2, 4);
  noise << 0.3, -1.2, 0.0, 2.0, -0.7, 0.4, 1.1, -0.1;
  const auto q = sac::compute_normalized_q_target<double>(batch, a.actor(), std::span(a.target_critics()), a.stats(),
                                                          a.temperature(), a.config().sac, noise);

  const auto policy = sac::decode_policy<double>(a.actor().forward(batch.next_state, batch.heads));
  const auto next = numkit::squashed_sample<double>(policy.mean, policy.log_std, noise);
  Mat sa(6, 4);
  sa.topRows(4) = batch.next_state;
  sa.bottomRows(2) = next.action;
  const Mat q0 = a.target_critics()[0].forward(sa, batch.heads);
  const Mat q1 = a.target_critics()[1].forward(sa, batch.heads);
  for (int j = 0; j < 4; ++j) {
    const double alpha = a.temperature().alpha(static_cast<std::size_t>(batch.heads[static_cast<std::size_t>(j)]));
    const double not_done = four[static_cast<std::size_t>(j)].done ? 0.0 : 1.0;
    const double y = four[static_cast<std::size_t>(j)].reward +
                     0.99 * not_done * (std::min(q0(0, j), q1(0, j)) - alpha * next.log_prob(0, j));
    EXPECT_EQ(q.raw(0, j), y) << "sample " << j;
    EXPECT_EQ(q.normalized(0, j), y) << "sample " << j;
  }
  EXPECT_EQ(q.raw(0, 3), 11.0);
}

TEST(Distillation, ZeroLambdaMatchesTargetNormalizationOnly) {
  auto with_pd = small_config(Variant::tn_pd);
  with_pd.lambda = 0.0;
  Agent<double> a(with_pd, small_sequence(2, 100), 13);
  Agent<double> b(small_config(Variant::tn), small_sequence(2, 100), 13);
  for (std::size_t slot = 0; slot < 2; ++slot) {
    a.begin_task(slot);
    b.begin_task(slot);
    finish_task(a);
    finish_task(b);
  }
  EXPECT_TRUE(same_params(a.actor(), b.actor()));
  EXPECT_TRUE(same_params(a.critics()[0], b.critics()[0]));
}

TEST(Distillation, GradientNeverTouchesTheCurrentHead) {
  Agent<double> a(small_config(Variant::tn_pd), small_sequence(2, 80), 14);
  a.begin_task(0);
  finish_task(a);
  a.begin_task(1);
  std::mt19937_64 rng(15);
  const auto old = a.store().sample_old_for_distill(32, rng);
  const auto g = a.distill_gradient(old);
  EXPECT_TRUE(g.grad.heads.size() < 2 || !g.grad.heads[1].has_value());
}

TEST(Determinism, SameSeedSameLog) {
  auto run = [] {
    Agent<double> a(small_config(Variant::tn_pd), small_sequence(2, 100), 21);
    return agent::run_sequence(a);
  };
  const auto x = run();
  const auto y = run();
  ASSERT_EQ(x.checkpoints.size(), y.checkpoints.size());
  for (std::size_t k = 0; k < x.checkpoints.size(); ++k) {
    EXPECT_EQ(x.checkpoints[k].step, y.checkpoints[k].step);
    EXPECT_EQ(x.checkpoints[k].success, y.checkpoints[k].success);
  }
}

// Stop mid-task, save, load into a fresh agent and continue: the result
// matches an uninterrupted run exactly.
TEST(Checkpoint, ResumeIsBitIdentical) {
  for (auto mode : {agent::ReplayMode::offline, agent::ReplayMode::online}) {
    auto cfg = small_config(Variant::tn_pd);
    cfg.replay_mode = mode;
    const auto seq = small_sequence(2, 120);
    Agent<double> whole(cfg, seq, 31);
    Agent<double> first(cfg, seq, 31);
    whole.begin_task(0);
    finish_task(whole);
    whole.begin_task(1);
    first.begin_task(0);
    finish_task(first);
    first.begin_task(1);
    for (int k = 0; k < 70; ++k) {
      whole.train_step();
      first.train_step();
    }
    std::stringstream buf;
    first.save(buf);
    Agent<double> resumed(cfg, seq, 31);
    resumed.load(buf);
    finish_task(whole);
    finish_task(resumed);
    EXPECT_TRUE(same_params(whole.actor(), resumed.actor()));
    EXPECT_TRUE(same_params(whole.critics()[1], resumed.critics()[1]));
    EXPECT_EQ(whole.stats().head(1).mu, resumed.stats().head(1).mu);
    EXPECT_EQ(whole.temperature().log_alpha(1), resumed.temperature().log_alpha(1));
    EXPECT_EQ(whole.evaluate(0, 5), resumed.evaluate(0, 5));
  }
}

TEST(Checkpoint, RejectsMismatchedOrForeignFiles) {
  const auto seq = small_sequence(2, 60);
  Agent<double> a(small_config(Variant::tn_pd), seq, 32);
  a.begin_task(0);
  std::stringstream buf;
  a.save(buf);
  const std::string bytes = buf.str();
  {
    Agent<double> other_seed(small_config(Variant::tn_pd), seq, 33);
    std::stringstream in(bytes);
    EXPECT_THROW(other_seed.load(in), StructuralError);
  }
  {
    auto wider = small_config(Variant::tn_pd);
    wider.actor_trunk = {17};
    Agent<double> b(wider, seq, 32);
    std::stringstream in(bytes);
    EXPECT_THROW(b.load(in), StructuralError);
  }
  {
    Agent<float> f(small_config(Variant::tn_pd), seq, 32);
    std::stringstream in(bytes);
    EXPECT_THROW(f.load(in), StructuralError);
  }
  {
    Agent<double> b(small_config(Variant::tn_pd), seq, 32);
    std::stringstream in(bytes.substr(0, bytes.size() - 9));
    EXPECT_THROW(b.load(in), StructuralError);
    std::stringstream junk("XXXX and more");
    EXPECT_THROW(b.load(junk), StructuralError);
  }
}

TEST(RunSequence, LogsBoundariesAndIntervals) {
  Agent<double> a(small_config(Variant::finetune), small_sequence(2, 120), 22);
  const auto log = agent::run_sequence(a);
  EXPECT_NO_THROW(log.validate());
  EXPECT_TRUE(log.at(0) && log.at(120) && log.at(240));
  EXPECT_TRUE(log.at(50) && log.at(100) && log.at(150) && log.at(200));
  EXPECT_NO_THROW(metrics::forgetting(log));
}

}  // namespace
