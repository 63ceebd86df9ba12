#include <gtest/gtest.h>

#include <map>
#include <random>
#include <sstream>

#include "recall/replay/replay_store.hpp"

namespace {

using namespace recall;
using replay::ReplayStore;

envs::Transition make_transition(int task, int index) {
  envs::Transition t;
  t.task_id = task;
  t.state = {static_cast<double>(index), static_cast<double>(task), 0.5, -0.5};
  t.next_state = {static_cast<double>(index) + 1.0, static_cast<double>(task), 0.5, -0.5};
  t.action = {0.1 * index, -0.1};
  t.reward = 0.25 * index;
  t.done = index % 7 == 0;
  t.success = t.done;
  t.timeout = index % 11 == 0;
  return t;
}

// Frozen policy stand-in: mean = (state[0], task), log_std = (-1, -2).
replay::PolicyAnnotator fake_annotator() {
  return [](int task, const std::vector<envs::Observation>& states) {
    std::vector<replay::OldPolicyRecord> out;
    for (const auto& s : states) {
      replay::OldPolicyRecord r;
      r.mean = {s[0], static_cast<double>(task)};
      r.log_std = {-1.0, -2.0};
      out.push_back(r);
    }
    return out;
  };
}

ReplayStore store_with(std::vector<int> sizes) {
  ReplayStore store;
  for (std::size_t task = 0; task < sizes.size(); ++task) {
    store.set_current_task(static_cast<int>(task));
    for (int i = 0; i < sizes[task]; ++i) store.push_new(make_transition(static_cast<int>(task), i));
    if (task + 1 < sizes.size()) store.migrate_to_old(fake_annotator());
  }
  return store;
}

TEST(Migrate, ConservesCountsAndEmptiesCurrentBuffer) {
  ReplayStore store;
  for (int i = 0; i < 100; ++i) store.push_new(make_transition(0, i));
  store.migrate_to_old(fake_annotator());
  EXPECT_EQ(store.new_size(), 0u);
  EXPECT_EQ(store.old_size(), 100u);
  const auto& entries = store.old_entries(0);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(entries[static_cast<std::size_t>(i)].transition.state[0], i);
    EXPECT_EQ(entries[static_cast<std::size_t>(i)].record.mean[0], i);
    EXPECT_EQ(entries[static_cast<std::size_t>(i)].record.task_id, 0);
  }
}

TEST(Migrate, AnnotatorSizeMismatchIsContractError) {
  ReplayStore store;
  store.push_new(make_transition(0, 1));
  EXPECT_THROW(store.migrate_to_old([](int, const std::vector<envs::Observation>&) {
    return std::vector<replay::OldPolicyRecord>{};
  }),
               ContractError);
}

TEST(PushNew, WrongTaskIsContractError) {
  ReplayStore store;
  store.set_current_task(2);
  EXPECT_THROW(store.push_new(make_transition(1, 0)), ContractError);
}

TEST(SampleMixed, AllNewWhenNoOldData) {
  auto store = store_with({50});
  std::mt19937_64 rng(1);
  const auto batch = store.sample_mixed(128, 0.5, rng);
  ASSERT_EQ(batch.size(), 128u);
  for (const auto& t : batch) EXPECT_EQ(t.task_id, 0);
}

TEST(SampleMixed, ExactHalfAndHalf) {
  auto store = store_with({40, 30, 20});
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const auto batch = store.sample_mixed(128, 0.5, rng);
    int fresh = 0;
    for (const auto& t : batch) fresh += t.task_id == 2;
    EXPECT_EQ(fresh, 64);
  }
  const auto batch = store.sample_mixed(7, 0.3, rng);
  int fresh = 0;
  for (const auto& t : batch) fresh += t.task_id == 2;
  EXPECT_EQ(fresh, 2);
}

TEST(SampleMixed, InvalidArgumentsAreConfigErrors) {
  auto store = store_with({5});
  std::mt19937_64 rng(3);
  EXPECT_THROW(store.sample_mixed(0, 0.5, rng), ConfigError);
  EXPECT_THROW(store.sample_mixed(4, 1.5, rng), ConfigError);
}

// Pooled old sampling is uniform over entries, so the bucket counts follow
// a flat distribution; Pearson chi-square at 99.9% for 59 dof is 98.3.
TEST(SampleMixed, OldDrawsAreUniformOverPooledEntries) {
  auto store = store_with({20, 40, 10});
  std::mt19937_64 rng(4);
  std::map<std::pair<int, int>, int> counts;
  int draws = 0;
  for (int k = 0; k < 2000; ++k)
    for (const auto& t : store.sample_mixed(64, 0.5, rng))
      if (t.task_id != 2) {
        ++counts[{t.task_id, static_cast<int>(t.state[0])}];
        ++draws;
      }
  ASSERT_EQ(counts.size(), 60u);
  const double expected = static_cast<double>(draws) / 60.0;
  double chi2 = 0.0;
  for (const auto& [key, c] : counts) chi2 += (c - expected) * (c - expected) / expected;
  EXPECT_LT(chi2, 98.3);
}

TEST(SampleOldForDistill, EmptyBeforeAnyMigration) {
  auto store = store_with({10});
  std::mt19937_64 rng(5);
  EXPECT_TRUE(store.sample_old_for_distill(32, rng).empty());
}

TEST(SampleOldForDistill, CarriesMatchingRecords) {
  auto store = store_with({10, 10, 3});
  std::mt19937_64 rng(6);
  const auto batch = store.sample_old_for_distill(200, rng);
  ASSERT_EQ(batch.size(), 200u);
  for (const auto& e : batch) {
    EXPECT_EQ(e.record.task_id, e.transition.task_id);
    EXPECT_EQ(e.record.state, e.transition.state);
    EXPECT_EQ(e.record.mean[1], e.transition.task_id);
  }
}

TEST(OldMemory, SamplingAndNewPushesNeverMutateIt) {
  auto store = store_with({15, 15});
  const auto before = store.old_entries(0);
  std::mt19937_64 rng(7);
  for (int k = 0; k < 20; ++k) {
    store.sample_mixed(32, 0.5, rng);
    store.sample_old_for_distill(32, rng);
    store.push_new(make_transition(1, 100 + k));
  }
  const auto& after = store.old_entries(0);
  ASSERT_EQ(after.size(), before.size());
  for (std::size_t i = 0; i < before.size(); ++i) {
    EXPECT_EQ(after[i].transition.state, before[i].transition.state);
    EXPECT_EQ(after[i].record.mean, before[i].record.mean);
  }
}

TEST(OnlineMode, LiveStreamsReplaceStoredData) {
  replay::ReplayConfig cfg;
  cfg.online_capacity_per_task = 4;
  ReplayStore store(cfg);
  for (int i = 0; i < 10; ++i) store.push_new(make_transition(0, i));
  store.migrate_to_old(fake_annotator());
  store.set_current_task(1);
  store.push_new(make_transition(1, 0));
  for (int i = 0; i < 4; ++i) store.push_live(make_transition(0, 500 + i));
  std::mt19937_64 rng(8);
  for (const auto& t : store.sample_mixed(64, 0.5, rng, true))
    if (t.task_id == 0) EXPECT_GE(t.state[0], 500.0);
  EXPECT_EQ(store.old_entries(0).size(), 10u);
  EXPECT_THROW(store.push_live(make_transition(3, 0)), ContractError);
}

TEST(Ring, OverwritesOldestWhenFull) {
  replay::TransitionRing ring(3);
  for (int i = 0; i < 5; ++i) ring.push(make_transition(0, i));
  ASSERT_EQ(ring.size(), 3u);
  EXPECT_EQ(ring[0].state[0], 2.0);
  EXPECT_EQ(ring[2].state[0], 4.0);
}

TEST(Checkpoint, RoundTripPreservesContentsAndSampling) {
  auto store = store_with({12, 9, 5});
  std::stringstream buf;
  store.dump(buf);
  const auto back = ReplayStore::restore(buf);
  EXPECT_EQ(back.new_size(), store.new_size());
  EXPECT_EQ(back.old_size(), store.old_size());
  EXPECT_EQ(back.current_task(), 2);
  std::mt19937_64 r1(9), r2(9);
  const auto a = store.sample_mixed(50, 0.5, r1);
  const auto b = back.sample_mixed(50, 0.5, r2);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].state, b[i].state);
    EXPECT_EQ(a[i].action, b[i].action);
    EXPECT_EQ(a[i].reward, b[i].reward);
    EXPECT_EQ(a[i].done, b[i].done);
    EXPECT_EQ(a[i].timeout, b[i].timeout);
  }
  EXPECT_EQ(back.old_entries(1)[3].record.log_std, store.old_entries(1)[3].record.log_std);
}

TEST(Checkpoint, RejectsForeignOrNewerFiles) {
  std::stringstream junk("not a checkpoint at all");
  EXPECT_THROW(ReplayStore::restore(junk), StructuralError);
  std::string bytes = "RCLR";
  bytes += std::string("\x09\x00\x00\x00", 4);
  std::stringstream newer(bytes);
  EXPECT_THROW(ReplayStore::restore(newer), StructuralError);
}

TEST(Checkpoint, TruncatedFileIsStructuralError) {
  auto store = store_with({12, 9});
  std::stringstream buf;
  store.dump(buf);
  std::string bytes = buf.str();
  std::stringstream cut(bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(ReplayStore::restore(cut), StructuralError);
}

}  // namespace
