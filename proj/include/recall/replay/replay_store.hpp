#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "recall/envs/point_mass.hpp"
#include "recall/errors.hpp"

namespace recall::replay {

using envs::Action;
using envs::Observation;
using envs::Transition;

/// Frozen end-of-task policy on one replayed state.
struct OldPolicyRecord {
  int task_id = 0;
  Observation state{};
  Action mean{};
  Action log_std{};
};

struct OldEntry {
  Transition transition;
  OldPolicyRecord record;
};

struct ReplayConfig {
  std::size_t new_capacity = 1'000'000;
  // 0 keeps every migrated transition.
  std::size_t old_capacity_per_task = 0;
  // Ring size of the live stream kept per old task in online replay mode.
  std::size_t online_capacity_per_task = 10'000;
};

/// Maps a task and a list of states to the frozen policy on those states.
using PolicyAnnotator = std::function<std::vector<OldPolicyRecord>(int task_id, const std::vector<Observation>&)>;

/// Fixed-capacity FIFO ring over transitions; index 0 is the oldest.
class TransitionRing {
 public:
  explicit TransitionRing(std::size_t capacity = 1) : capacity_(std::max<std::size_t>(capacity, 1)) {}

  void push(const Transition& t) {
    if (data_.size() < capacity_) {
      data_.push_back(t);
    } else {
      data_[head_] = t;
      head_ = (head_ + 1) % capacity_;
    }
  }
  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return data_.empty(); }
  const Transition& operator[](std::size_t i) const { return data_[(head_ + i) % data_.size()]; }
  void clear() {
    data_.clear();
    head_ = 0;
  }

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;
  std::vector<Transition> data_;
};

/// Current-task buffer plus frozen per-task memories of finished tasks.
class ReplayStore {
 public:
  explicit ReplayStore(ReplayConfig config = {}) : config_(config), new_(config.new_capacity) {
    if (config.new_capacity == 0) throw ConfigError("replay: new_capacity must be positive");
  }

  const ReplayConfig& config() const { return config_; }

  int current_task() const { return current_task_; }
  void set_current_task(int task_id) {
    if (!new_.empty() && task_id != current_task_)
      throw ContractError("replay: switching task with a non-empty current buffer; migrate first");
    current_task_ = task_id;
  }

  void push_new(const Transition& t) {
    if (t.task_id != current_task_)
      throw ContractError("replay: push_new with task " + std::to_string(t.task_id) + " while current task is " +
                          std::to_string(current_task_));
    new_.push(t);
  }

  std::size_t new_size() const { return new_.size(); }
  const Transition& new_at(std::size_t i) const { return new_[i]; }

  std::size_t old_size() const { return old_total_; }
  std::vector<int> old_tasks() const { return old_order_; }
  const std::vector<OldEntry>& old_entries(int task_id) const {
    auto it = old_.find(task_id);
    if (it == old_.end()) throw ContractError("replay: no old memory for task " + std::to_string(task_id));
    return it->second;
  }

  /// Annotates every current-task transition with the frozen policy and
  /// moves it to old memory. The current buffer is left empty.
  void migrate_to_old(const PolicyAnnotator& annotate) {
    if (new_.empty()) return;
    std::vector<Observation> states;
    states.reserve(new_.size());
    for (std::size_t i = 0; i < new_.size(); ++i) states.push_back(new_[i].state);
    std::vector<OldPolicyRecord> records = annotate(current_task_, states);
    if (records.size() != states.size())
      throw ContractError("replay: annotator returned " + std::to_string(records.size()) + " records for " +
                          std::to_string(states.size()) + " states");
    std::size_t first = 0;
    if (config_.old_capacity_per_task > 0 && new_.size() > config_.old_capacity_per_task)
      first = new_.size() - config_.old_capacity_per_task;
    auto& bucket = old_[current_task_];
    if (bucket.empty()) old_order_.push_back(current_task_);
    for (std::size_t i = first; i < new_.size(); ++i) {
      records[i].task_id = current_task_;
      records[i].state = new_[i].state;
      bucket.push_back(OldEntry{new_[i], records[i]});
    }
    TransitionRing live(std::min(config_.online_capacity_per_task == 0 ? bucket.size()
                                                                        : config_.online_capacity_per_task,
                                 bucket.size()));
    for (const auto& e : bucket) live.push(e.transition);
    live_[current_task_] = std::move(live);
    rebuild_index();
    new_.clear();
  }

  /// Appends a freshly collected transition to an old task's live stream
  /// (online replay mode). Stored old memory is not modified.
  void push_live(const Transition& t) {
    auto it = live_.find(t.task_id);
    if (it == live_.end()) throw ContractError("replay: no live stream for task " + std::to_string(t.task_id));
    it->second.push(t);
  }

  /// round(ratio * batch) draws from the current buffer, the rest uniformly
  /// over pooled old memory (or the live streams when `online`).
  template <typename Rng>
  std::vector<Transition> sample_mixed(int batch, double ratio, Rng& rng, bool online = false) const {
    if (batch <= 0) throw ConfigError("replay: batch must be positive");
    if (!(ratio >= 0.0 && ratio <= 1.0)) throw ConfigError("replay: ratio must lie in [0, 1]");
    if (new_.empty()) throw ContractError("replay: sample_mixed with an empty current buffer");
    std::size_t n_new = static_cast<std::size_t>(std::lround(ratio * batch));
    if (old_total_ == 0) n_new = static_cast<std::size_t>(batch);
    std::vector<Transition> out;
    out.reserve(static_cast<std::size_t>(batch));
    std::uniform_int_distribution<std::size_t> pick_new(0, new_.size() - 1);
    for (std::size_t i = 0; i < n_new; ++i) out.push_back(new_[pick_new(rng)]);
    const std::size_t n_old = static_cast<std::size_t>(batch) - n_new;
    if (n_old == 0) return out;
    if (online) {
      std::vector<std::size_t> prefix;
      std::size_t total = 0;
      for (int task : old_order_) {
        total += live_.at(task).size();
        prefix.push_back(total);
      }
      std::uniform_int_distribution<std::size_t> pick(0, total - 1);
      for (std::size_t i = 0; i < n_old; ++i) {
        const std::size_t k = pick(rng);
        const std::size_t slot = static_cast<std::size_t>(std::upper_bound(prefix.begin(), prefix.end(), k) - prefix.begin());
        const std::size_t base = slot == 0 ? 0 : prefix[slot - 1];
        out.push_back(live_.at(old_order_[slot])[k - base]);
      }
    } else {
      for (std::size_t i = 0; i < n_old; ++i) out.push_back(pick_old(rng).transition);
    }
    return out;
  }

  /// Uniform draw over all stored old entries; empty when nothing is stored.
  template <typename Rng>
  std::vector<OldEntry> sample_old_for_distill(int batch, Rng& rng) const {
    if (batch <= 0) throw ConfigError("replay: batch must be positive");
    std::vector<OldEntry> out;
    if (old_total_ == 0) return out;
    out.reserve(static_cast<std::size_t>(batch));
    for (int i = 0; i < batch; ++i) out.push_back(pick_old(rng));
    return out;
  }

  void dump(std::ostream& os) const;
  static ReplayStore restore(std::istream& is);

 private:
  template <typename Rng>
  const OldEntry& pick_old(Rng& rng) const {
    std::uniform_int_distribution<std::size_t> pick(0, old_total_ - 1);
    const std::size_t k = pick(rng);
    const std::size_t slot =
        static_cast<std::size_t>(std::upper_bound(old_prefix_.begin(), old_prefix_.end(), k) - old_prefix_.begin());
    const std::size_t base = slot == 0 ? 0 : old_prefix_[slot - 1];
    return old_.at(old_order_[slot])[k - base];
  }

  void rebuild_index() {
    old_prefix_.clear();
    old_total_ = 0;
    for (int task : old_order_) {
      old_total_ += old_.at(task).size();
      old_prefix_.push_back(old_total_);
    }
  }

  ReplayConfig config_;
  int current_task_ = 0;
  TransitionRing new_;
  std::map<int, std::vector<OldEntry>> old_;
  std::map<int, TransitionRing> live_;
  std::vector<int> old_order_;
  std::vector<std::size_t> old_prefix_;
  std::size_t old_total_ = 0;
};

// Checkpoint format: magic "RCLR", u32 version, then length-prefixed
// records. Integers are little-endian fixed width, reals IEEE-754 doubles.
namespace detail {

inline constexpr char kMagic[4] = {'R', 'C', 'L', 'R'};
inline constexpr std::uint32_t kVersion = 1;

template <typename V>
void put(std::ostream& os, V v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V get(std::istream& is) {
  V v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!is) throw StructuralError("replay restore: truncated stream");
  return v;
}

template <std::size_t N>
void put_array(std::ostream& os, const std::array<double, N>& a) {
  for (double v : a) put(os, v);
}

template <std::size_t N>
std::array<double, N> get_array(std::istream& is) {
  std::array<double, N> a{};
  for (auto& v : a) v = get<double>(is);
  return a;
}

inline constexpr std::uint32_t kTransitionBytes = 4 + 8 * (4 + 2 + 1 + 4) + 3;
inline constexpr std::uint32_t kRecordBytes = 4 + 8 * (4 + 2 + 2);

inline void put_transition(std::ostream& os, const Transition& t) {
  put<std::uint32_t>(os, kTransitionBytes);
  put<std::int32_t>(os, t.task_id);
  put_array(os, t.state);
  put_array(os, t.action);
  put(os, t.reward);
  put_array(os, t.next_state);
  put<std::uint8_t>(os, t.done);
  put<std::uint8_t>(os, t.success);
  put<std::uint8_t>(os, t.timeout);
}

inline Transition get_transition(std::istream& is) {
  if (get<std::uint32_t>(is) != kTransitionBytes) throw StructuralError("replay restore: bad transition record length");
  Transition t;
  t.task_id = get<std::int32_t>(is);
  t.state = get_array<4>(is);
  t.action = get_array<2>(is);
  t.reward = get<double>(is);
  t.next_state = get_array<4>(is);
  t.done = get<std::uint8_t>(is) != 0;
  t.success = get<std::uint8_t>(is) != 0;
  t.timeout = get<std::uint8_t>(is) != 0;
  return t;
}

inline void put_record(std::ostream& os, const OldPolicyRecord& r) {
  put<std::uint32_t>(os, kRecordBytes);
  put<std::int32_t>(os, r.task_id);
  put_array(os, r.state);
  put_array(os, r.mean);
  put_array(os, r.log_std);
}

inline OldPolicyRecord get_record(std::istream& is) {
  if (get<std::uint32_t>(is) != kRecordBytes) throw StructuralError("replay restore: bad policy record length");
  OldPolicyRecord r;
  r.task_id = get<std::int32_t>(is);
  r.state = get_array<4>(is);
  r.mean = get_array<2>(is);
  r.log_std = get_array<2>(is);
  return r;
}

}  // namespace detail

inline void ReplayStore::dump(std::ostream& os) const {
  using namespace detail;
  os.write(kMagic, 4);
  put<std::uint32_t>(os, kVersion);
  put<std::uint64_t>(os, config_.new_capacity);
  put<std::uint64_t>(os, config_.old_capacity_per_task);
  put<std::uint64_t>(os, config_.online_capacity_per_task);
  put<std::int32_t>(os, current_task_);
  put<std::uint64_t>(os, new_.size());
  for (std::size_t i = 0; i < new_.size(); ++i) put_transition(os, new_[i]);
  put<std::uint64_t>(os, old_order_.size());
  for (int task : old_order_) {
    const auto& bucket = old_.at(task);
    put<std::int32_t>(os, task);
    put<std::uint64_t>(os, bucket.size());
    for (const auto& e : bucket) {
      put_transition(os, e.transition);
      put_record(os, e.record);
    }
    const auto& live = live_.at(task);
    put<std::uint64_t>(os, live.capacity());
    put<std::uint64_t>(os, live.size());
    for (std::size_t i = 0; i < live.size(); ++i) put_transition(os, live[i]);
  }
}

inline ReplayStore ReplayStore::restore(std::istream& is) {
  using namespace detail;
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) throw StructuralError("replay restore: not a replay checkpoint");
  const auto version = get<std::uint32_t>(is);
  if (version != kVersion) throw StructuralError("replay restore: unsupported version " + std::to_string(version));
  ReplayConfig cfg;
  cfg.new_capacity = get<std::uint64_t>(is);
  cfg.old_capacity_per_task = get<std::uint64_t>(is);
  cfg.online_capacity_per_task = get<std::uint64_t>(is);
  ReplayStore store(cfg);
  store.current_task_ = get<std::int32_t>(is);
  const auto n_new = get<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < n_new; ++i) store.new_.push(get_transition(is));
  const auto n_tasks = get<std::uint64_t>(is);
  for (std::uint64_t k = 0; k < n_tasks; ++k) {
    const int task = get<std::int32_t>(is);
    const auto n = get<std::uint64_t>(is);
    auto& bucket = store.old_[task];
    store.old_order_.push_back(task);
    for (std::uint64_t i = 0; i < n; ++i) {
      Transition t = get_transition(is);
      OldPolicyRecord r = get_record(is);
      bucket.push_back(OldEntry{t, r});
    }
    TransitionRing live(get<std::uint64_t>(is));
    const auto n_live = get<std::uint64_t>(is);
    for (std::uint64_t i = 0; i < n_live; ++i) live.push(get_transition(is));
    store.live_[task] = std::move(live);
  }
  store.rebuild_index();
  return store;
}

}  // namespace recall::replay
