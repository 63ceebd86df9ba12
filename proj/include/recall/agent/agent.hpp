#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "recall/envs/point_mass.hpp"
#include "recall/errors.hpp"
#include "recall/io/binary.hpp"
#include "recall/metrics/metrics.hpp"
#include "recall/popart/popart.hpp"
#include "recall/replay/replay_store.hpp"
#include "recall/sac/sac.hpp"

namespace recall::agent {

using numkit::Matrix;
using sac::MultiHeadNet;

/// finetune: no replay. perfect_memory: replay only. tn: replay with target
/// normalization. pd: replay with policy distillation. tn_pd: both.
enum class Variant { finetune, perfect_memory, tn, pd, tn_pd };
enum class ReplayMode { offline, online };

inline bool uses_replay(Variant v) { return v != Variant::finetune; }
inline bool uses_normalization(Variant v) { return v == Variant::tn || v == Variant::tn_pd; }
inline bool uses_distillation(Variant v) { return v == Variant::pd || v == Variant::tn_pd; }

struct AgentConfig {
  Variant variant = Variant::tn_pd;
  double lambda = 10.0;
  int exploration_steps = 1000;
  // Unset: on for the RECALL family (tn, pd, tn_pd), off for the plain
  // baselines. Perfect Memory with it switched on is the "None" ablation.
  std::optional<bool> best_return_exploration;
  int best_return_episodes = 5;
  ReplayMode replay_mode = ReplayMode::offline;
  bool shared_actor = true;
  bool shared_critic = true;
  double replay_ratio = 0.5;
  int distill_batch = 0;  // 0: the old-task share of the main batch
  std::vector<int> actor_trunk{64, 64};
  std::vector<int> critic_trunk{64, 64};
  std::vector<int> critic_head{32, 32};
  sac::SacHyper sac;
  popart::PopArtConfig popart;
  replay::ReplayConfig replay;

  void validate() const {
    if (lambda < 0.0) throw ConfigError("agent: lambda must be non-negative");
    if (exploration_steps < 0) throw ConfigError("agent: exploration_steps must be non-negative");
    if (best_return_episodes <= 0) throw ConfigError("agent: best_return_episodes must be positive");
    if (!(replay_ratio >= 0.0 && replay_ratio <= 1.0)) throw ConfigError("agent: replay_ratio must lie in [0, 1]");
    if (distill_batch < 0) throw ConfigError("agent: distill_batch must be non-negative");
    if (actor_trunk.empty() || critic_trunk.empty()) throw ConfigError("agent: trunks need at least one layer");
    for (int w : actor_trunk)
      if (w <= 0) throw ConfigError("agent: layer widths must be positive");
    for (int w : critic_trunk)
      if (w <= 0) throw ConfigError("agent: layer widths must be positive");
    for (int w : critic_head)
      if (w <= 0) throw ConfigError("agent: layer widths must be positive");
    sac.validate();
  }

  bool uses_best_return() const {
    return best_return_exploration.value_or(uses_normalization(variant) || uses_distillation(variant));
  }

  int effective_distill_batch() const {
    if (distill_batch > 0) return distill_batch;
    const int fresh = static_cast<int>(std::lround(replay_ratio * sac.batch));
    return std::max(1, sac.batch - fresh);
  }
};

/// Ordered tasks of one continual run, as positions into a task suite.
struct TaskSequence {
  std::vector<envs::TaskSpec> tasks;
  std::int64_t steps_per_task = 30'000;
  std::int64_t eval_interval = 1'000;
  int eval_episodes = 20;

  void validate() const {
    if (steps_per_task < 0) throw ConfigError("sequence: steps_per_task must be non-negative");
    if (eval_interval <= 0) throw ConfigError("sequence: eval_interval must be positive");
    if (eval_episodes <= 0) throw ConfigError("sequence: eval_episodes must be positive");
  }
};

/// Maps a batch of observations (kObsDim x n) to actions (kActDim x n).
using BatchPolicy = std::function<Matrix<double>(const Matrix<double>&)>;

/// Runs `episodes` deterministic episodes in lockstep. Episode k starts
/// from reset(task, seed_base + k). Returns (success rate, mean return).
inline std::pair<double, double> rollout(const envs::TaskSpec& task, int episodes, std::uint64_t seed_base,
                                         const BatchPolicy& policy) {
  if (episodes <= 0) throw ConfigError("evaluate: episodes must be positive");
  std::vector<envs::EnvState> states;
  for (int k = 0; k < episodes; ++k) states.push_back(envs::reset(task, seed_base + static_cast<std::uint64_t>(k)));
  std::vector<bool> live(static_cast<std::size_t>(episodes), true);
  std::vector<double> returns(static_cast<std::size_t>(episodes), 0.0);
  int successes = 0;
  int alive = episodes;
  while (alive > 0) {
    Matrix<double> obs(envs::kObsDim, alive);
    std::vector<std::size_t> idx;
    for (std::size_t k = 0; k < states.size(); ++k) {
      if (!live[k]) continue;
      const auto o = envs::observe(task, states[k]);
      for (int i = 0; i < envs::kObsDim; ++i) obs(i, static_cast<Eigen::Index>(idx.size())) = o[static_cast<std::size_t>(i)];
      idx.push_back(k);
    }
    const Matrix<double> act = policy(obs);
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const std::size_t k = idx[j];
      const auto r = envs::step(task, states[k], {act(0, static_cast<Eigen::Index>(j)), act(1, static_cast<Eigen::Index>(j))});
      states[k] = r.next;
      returns[k] += r.reward;
      if (r.done) {
        live[k] = false;
        --alive;
        if (r.success) ++successes;
      }
    }
  }
  double mean_return = 0.0;
  for (double r : returns) mean_return += r;
  return {static_cast<double>(successes) / episodes, mean_return / episodes};
}

/// Index of the largest return; ties resolve to the lowest index.
inline std::size_t select_best_head(std::span<const double> returns) {
  if (returns.empty()) throw ContractError("best-return: no candidate heads");
  std::size_t best = 0;
  for (std::size_t k = 1; k < returns.size(); ++k)
    if (returns[k] > returns[best]) best = k;
  return best;
}

struct StepDiagnostics {
  bool updated = false;
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double distill_loss = 0.0;
  double alpha = 0.0;
  double mean_raw_target = 0.0;
  double current_raw_target = 0.0;  // current task's samples only
  double current_log_prob = 0.0;
  std::string diagnostic;
};

/// The continual learner: one actor, one or two critics, per-position heads.
/// Head k belongs to the k-th task of the sequence.
template <typename T>
class Agent {
 public:
  /// Scores prior head `h` on the task at position `slot` (higher is better).
  using HeadScorer = std::function<double(std::size_t prior_head, std::size_t slot)>;

  Agent(AgentConfig config, TaskSequence sequence, std::uint64_t seed)
      : config_(std::move(config)),
        sequence_(std::move(sequence)),
        seed_(seed),
        rng_(seed),
        distill_rng_(seed ^ 0x9e3779b97f4a7c15ULL),
        stats_(config_.popart),
        temp_(config_.sac, envs::kActDim),
        store_(config_.replay) {
    config_.validate();
    sequence_.validate();
    numkit::AdamHyper adam;
    adam.lr = config_.sac.lr;
    actor_ = MultiHeadNet<T>(sac::NetShape{envs::kObsDim, config_.actor_trunk, {}, 2 * envs::kActDim},
                             config_.shared_actor);
    actor_opt_ = sac::NetOptimizer<T>(adam);
    const int n_critics = config_.sac.twin_critics ? 2 : 1;
    for (int k = 0; k < n_critics; ++k) {
      critics_.emplace_back(sac::NetShape{envs::kObsDim + envs::kActDim, config_.critic_trunk, config_.critic_head, 1},
                            config_.shared_critic);
      critic_opt_.emplace_back(adam);
    }
    for (std::size_t h = 0; h < sequence_.tasks.size(); ++h) {
      actor_.add_head(rng_);
      for (auto& c : critics_) c.add_head(rng_);
      stats_.add_head();
      temp_.add_head();
    }
    target_critics_ = critics_;
    actor_opt_.sync(actor_);
    for (std::size_t k = 0; k < critics_.size(); ++k) critic_opt_[k].sync(critics_[k]);
  }

  const AgentConfig& config() const { return config_; }
  const TaskSequence& sequence() const { return sequence_; }
  const MultiHeadNet<T>& actor() const { return actor_; }
  MultiHeadNet<T>& actor() { return actor_; }
  const std::vector<MultiHeadNet<T>>& critics() const { return critics_; }
  std::vector<MultiHeadNet<T>>& critics() { return critics_; }
  const std::vector<MultiHeadNet<T>>& target_critics() const { return target_critics_; }
  const popart::PopArtStats& stats() const { return stats_; }
  popart::PopArtStats& stats() { return stats_; }
  const sac::EntropyTemp& temperature() const { return temp_; }
  const replay::ReplayStore& store() const { return store_; }
  std::optional<std::size_t> current_task() const { return current_; }
  std::int64_t task_steps() const { return task_steps_; }
  std::optional<std::size_t> last_best_head() const { return last_best_head_; }

  void set_head_scorer(HeadScorer scorer) { scorer_ = std::move(scorer); }

  /// Task boundary: migrates the finished task's data with its frozen
  /// policy, optionally seeds the new heads from the best prior head, resets
  /// the new head's target statistics and starts the exploration phase.
  void begin_task(std::size_t slot) {
    const std::size_t expected = current_ ? *current_ + 1 : 0;
    if (slot != expected)
      throw ContractError("begin_task: expected task position " + std::to_string(expected) + ", got " +
                          std::to_string(slot));
    if (slot >= sequence_.tasks.size()) throw ContractError("begin_task: position beyond the sequence");
    if (current_ && task_steps_ < sequence_.steps_per_task)
      throw ContractError("begin_task: previous task has not finished its step budget");

    if (current_) {
      if (uses_replay(config_.variant)) {
        store_.migrate_to_old([this](int task, const std::vector<envs::Observation>& states) {
          return annotate(static_cast<std::size_t>(task), states);
        });
      } else {
        store_ = replay::ReplayStore(config_.replay);
      }
    }
    current_ = slot;
    store_.set_current_task(static_cast<int>(slot));
    task_steps_ = 0;
    episode_active_ = false;
    last_best_head_.reset();

    std::int64_t scoring_steps = 0;
    if (config_.uses_best_return() && slot > 0) {
      std::vector<double> returns;
      for (std::size_t h = 0; h < slot; ++h) {
        if (scorer_) {
          returns.push_back(scorer_(h, slot));
        } else {
          const auto [ret, steps] = score_head(h, slot);
          returns.push_back(ret);
          scoring_steps += steps;
        }
      }
      const std::size_t best = select_best_head(returns);
      last_best_head_ = best;
      // Unshared networks give each task its own fresh network, so only a
      // shared network inherits the winning head. The temperature always
      // restarts at its initial value.
      if (actor_.shared_trunk()) actor_.copy_head(best, slot);
      actor_opt_.reset_head(actor_, slot);
      if (critics_[0].shared_trunk())
        for (std::size_t k = 0; k < critics_.size(); ++k) {
          critics_[k].copy_head(best, slot);
          target_critics_[k].copy_head(best, slot);
          critic_opt_[k].reset_head(critics_[k], slot);
        }
    }
    stats_.set_head(slot, popart::HeadStats{});
    exploration_left_ = std::max<std::int64_t>(0, config_.exploration_steps - scoring_steps);
    task_steps_ = std::min<std::int64_t>(scoring_steps, sequence_.steps_per_task);
  }

  /// One environment step on the current task (plus one old-task step in
  /// online replay mode), then one gradient update once exploration is over.
  StepDiagnostics train_step() {
    if (!current_) throw ContractError("train_step: no active task");
    interact();
    if (config_.replay_mode == ReplayMode::online && uses_replay(config_.variant)) interact_old();
    ++task_steps_;
    if (exploration_left_ > 0) {
      --exploration_left_;
      return {};
    }
    return update();
  }

  /// Gradient of the distillation term over an old-task batch (unscaled by
  /// lambda).
  sac::LossGrad<T> distill_gradient(std::span<const replay::OldEntry> old_batch) const {
    const auto n = static_cast<Eigen::Index>(old_batch.size());
    Matrix<T> states(envs::kObsDim, n), mean(envs::kActDim, n), log_std(envs::kActDim, n);
    std::vector<int> heads;
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto& e = old_batch[static_cast<std::size_t>(j)];
      for (int i = 0; i < envs::kObsDim; ++i) states(i, j) = static_cast<T>(e.record.state[static_cast<std::size_t>(i)]);
      for (int i = 0; i < envs::kActDim; ++i) {
        mean(i, j) = static_cast<T>(e.record.mean[static_cast<std::size_t>(i)]);
        log_std(i, j) = static_cast<T>(e.record.log_std[static_cast<std::size_t>(i)]);
      }
      heads.push_back(e.record.task_id);
    }
    return sac::distill_loss_and_grad<T>(actor_, states, heads, mean, log_std);
  }

  /// Deterministic success rate of head `slot` on the task at `slot`.
  double evaluate(std::size_t slot, int episodes) const {
    if (slot >= sequence_.tasks.size()) throw ContractError("evaluate: unknown task position");
    return rollout(sequence_.tasks[slot], episodes, eval_seed(slot), deterministic_policy(slot)).first;
  }

  BatchPolicy deterministic_policy(std::size_t head) const {
    return [this, head](const Matrix<double>& obs) -> Matrix<double> {
      std::vector<int> heads(static_cast<std::size_t>(obs.cols()), static_cast<int>(head));
      const auto policy = sac::decode_policy<T>(actor_.forward(obs.cast<T>(), heads));
      return policy.mean.array().tanh().matrix().template cast<double>();
    };
  }

  /// Frozen policy records of head `task` on `states`.
  std::vector<replay::OldPolicyRecord> annotate(std::size_t task, const std::vector<envs::Observation>& states) const {
    if (task >= actor_.heads()) throw ContractError("annotate: actor snapshot lacks head " + std::to_string(task));
    std::vector<replay::OldPolicyRecord> out(states.size());
    constexpr std::size_t kChunk = 4096;
    for (std::size_t first = 0; first < states.size(); first += kChunk) {
      const std::size_t n = std::min(kChunk, states.size() - first);
      Matrix<T> x(envs::kObsDim, static_cast<Eigen::Index>(n));
      for (std::size_t j = 0; j < n; ++j)
        for (int i = 0; i < envs::kObsDim; ++i)
          x(i, static_cast<Eigen::Index>(j)) = static_cast<T>(states[first + j][static_cast<std::size_t>(i)]);
      std::vector<int> heads(n, static_cast<int>(task));
      const auto p = sac::decode_policy<T>(actor_.forward(x, heads));
      for (std::size_t j = 0; j < n; ++j) {
        auto& r = out[first + j];
        r.task_id = static_cast<int>(task);
        r.state = states[first + j];
        for (int i = 0; i < envs::kActDim; ++i) {
          r.mean[static_cast<std::size_t>(i)] = static_cast<double>(p.mean(i, static_cast<Eigen::Index>(j)));
          r.log_std[static_cast<std::size_t>(i)] = static_cast<double>(p.log_std(i, static_cast<Eigen::Index>(j)));
        }
      }
    }
    return out;
  }

  /// Runs one gradient update on a freshly sampled batch.
  StepDiagnostics update() {
    StepDiagnostics d;
    d.updated = true;
    const bool online = config_.replay_mode == ReplayMode::online;
    const auto transitions = store_.sample_mixed(config_.sac.batch, config_.replay_ratio, rng_, online);
    const auto batch = sac::make_batch<T>(std::span<const envs::Transition>(transitions));

    const Matrix<T> target_noise = sac::standard_normal<T>(envs::kActDim, batch.size(), rng_);
    const auto targets = sac::compute_normalized_q_target<T>(batch, actor_, std::span<const MultiHeadNet<T>>(target_critics_),
                                                          stats_, temp_, config_.sac, target_noise);
    d.mean_raw_target = static_cast<double>(targets.raw.mean());
    const int cur = static_cast<int>(*current_);
    int n_cur = 0;
    for (std::size_t j = 0; j < batch.heads.size(); ++j)
      if (batch.heads[j] == cur) {
        d.current_raw_target += static_cast<double>(targets.raw(0, static_cast<Eigen::Index>(j)));
        ++n_cur;
      }
    if (n_cur > 0) d.current_raw_target /= n_cur;

    const auto critic_report = sac::critic_step<T>(batch, std::span<MultiHeadNet<T>>(critics_),
                                                   std::span<sac::NetOptimizer<T>>(critic_opt_), targets.normalized);
    d.critic_loss = critic_report.loss;
    if (!critic_report.applied) d.diagnostic = critic_report.diagnostic;

    const Matrix<T> actor_noise = sac::standard_normal<T>(envs::kActDim, batch.size(), rng_);
    auto actor_part = sac::actor_loss_and_grad<T>(actor_, std::span<const MultiHeadNet<T>>(critics_), batch.state,
                                                  batch.heads, temp_, actor_noise);
    d.actor_loss = actor_part.loss;
    double total_actor_loss = actor_part.loss;
    if (uses_distillation(config_.variant) && config_.lambda > 0.0 && store_.old_size() > 0) {
      const auto old_batch = store_.sample_old_for_distill(config_.effective_distill_batch(), distill_rng_);
      auto distill = distill_gradient(old_batch);
      d.distill_loss = distill.loss;
      distill.grad *= static_cast<T>(config_.lambda);
      actor_part.grad += distill.grad;
      total_actor_loss += config_.lambda * distill.loss;
    }
    const auto actor_report = sac::apply_actor_gradient<T>(actor_, actor_opt_, total_actor_loss, actor_part.grad);
    if (!actor_report.applied) d.diagnostic += actor_report.diagnostic;

    if (actor_report.applied) {
      std::vector<double> lp(static_cast<std::size_t>(actor_part.log_prob.cols()));
      int n_cur_lp = 0;
      for (std::size_t j = 0; j < lp.size(); ++j) {
        lp[j] = static_cast<double>(actor_part.log_prob(0, static_cast<Eigen::Index>(j)));
        if (batch.heads[j] == cur) {
          d.current_log_prob += lp[j];
          ++n_cur_lp;
        }
      }
      if (n_cur_lp > 0) d.current_log_prob /= n_cur_lp;
      temp_.step(lp, batch.heads);
    }
    d.alpha = temp_.alpha(*current_);

    ++updates_;
    if (updates_ % config_.sac.target_update_interval == 0)
      for (std::size_t k = 0; k < critics_.size(); ++k) sac::polyak_update(target_critics_[k], critics_[k], config_.sac.tau);

    if (uses_normalization(config_.variant)) update_normalization(batch.heads, targets.raw);
    return d;
  }

  /// Folds each head's raw targets into its statistics (in batch order) and
  /// rescales that head's last critic layer in online and target critics.
  void update_normalization(std::span<const int> heads, const Matrix<T>& raw_targets) {
    std::vector<std::vector<double>> per_head(stats_.heads());
    for (std::size_t j = 0; j < heads.size(); ++j)
      per_head[static_cast<std::size_t>(heads[j])].push_back(static_cast<double>(raw_targets(0, static_cast<Eigen::Index>(j))));
    for (std::size_t h = 0; h < per_head.size(); ++h) {
      if (per_head[h].empty()) continue;
      const auto before = stats_.head(h);
      stats_.update_stats(h, per_head[h]);
      const auto after = stats_.head(h);
      auto rescale = [&](MultiHeadNet<T>& net) {
        popart::rescale_head(net.head(h).layers.back(), before.mu, before.sigma, after.mu, after.sigma);
      };
      for (auto& c : critics_) rescale(c);
      for (auto& c : target_critics_) rescale(c);
    }
  }

  /// Writes the complete training state; loading it into an agent built
  /// from the same configuration resumes the run bit for bit.
  void save(std::ostream& os) const {
    io::Writer w(os);
    os.write(kCheckpointMagic, 4);
    w.put<std::uint32_t>(kCheckpointVersion);
    w.put<std::uint8_t>(sizeof(T));
    w.put<std::uint64_t>(seed_);
    w.put<std::uint64_t>(sequence_.tasks.size());
    actor_.save(w);
    actor_opt_.save(w);
    w.put<std::uint64_t>(critics_.size());
    for (std::size_t k = 0; k < critics_.size(); ++k) {
      critics_[k].save(w);
      target_critics_[k].save(w);
      critic_opt_[k].save(w);
    }
    for (std::size_t h = 0; h < stats_.heads(); ++h) {
      const auto& st = stats_.head(h);
      w.put(st.mu);
      w.put(st.nu);
      w.put(st.sigma);
      w.put<std::int64_t>(st.update_count);
    }
    temp_.save(w);
    store_.dump(os);
    w.put_engine(rng_);
    w.put_engine(distill_rng_);
    w.put<std::int64_t>(current_ ? static_cast<std::int64_t>(*current_) : -1);
    w.put<std::int64_t>(last_best_head_ ? static_cast<std::int64_t>(*last_best_head_) : -1);
    w.put<std::int64_t>(task_steps_);
    w.put<std::int64_t>(exploration_left_);
    w.put<std::int64_t>(updates_);
    w.put<std::uint64_t>(episodes_started_);
    w.put_bool(episode_active_);
    put_env(w, env_);
    w.put<std::uint64_t>(old_envs_.size());
    for (const auto& e : old_envs_) {
      w.put_bool(e.has_value());
      if (e) put_env(w, *e);
    }
    w.put<std::uint64_t>(online_cursor_);
  }

  void load(std::istream& is) {
    io::Reader r(is);
    char magic[4] = {};
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != std::string(kCheckpointMagic, 4))
      throw StructuralError("checkpoint: not an agent checkpoint");
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion)
      throw StructuralError("checkpoint: unsupported version " + std::to_string(version));
    if (r.get<std::uint8_t>() != sizeof(T)) throw StructuralError("checkpoint: written with a different precision");
    if (r.get<std::uint64_t>() != seed_) throw StructuralError("checkpoint: written for a different seed");
    if (r.get<std::uint64_t>() != sequence_.tasks.size()) throw StructuralError("checkpoint: sequence length differs");
    actor_.load(r);
    actor_opt_.load(actor_, r);
    if (r.get<std::uint64_t>() != critics_.size()) throw StructuralError("checkpoint: critic count differs");
    for (std::size_t k = 0; k < critics_.size(); ++k) {
      critics_[k].load(r);
      target_critics_[k].load(r);
      critic_opt_[k].load(critics_[k], r);
    }
    for (std::size_t h = 0; h < stats_.heads(); ++h) {
      popart::HeadStats st;
      st.mu = r.get<double>();
      st.nu = r.get<double>();
      st.sigma = r.get<double>();
      st.update_count = r.get<std::int64_t>();
      stats_.set_head(h, st);
    }
    temp_.load(r);
    store_ = replay::ReplayStore::restore(is);
    r.get_engine(rng_);
    r.get_engine(distill_rng_);
    const auto cur = r.get<std::int64_t>();
    current_ = cur < 0 ? std::nullopt : std::optional<std::size_t>(static_cast<std::size_t>(cur));
    const auto best = r.get<std::int64_t>();
    last_best_head_ = best < 0 ? std::nullopt : std::optional<std::size_t>(static_cast<std::size_t>(best));
    task_steps_ = r.get<std::int64_t>();
    exploration_left_ = r.get<std::int64_t>();
    updates_ = r.get<std::int64_t>();
    episodes_started_ = r.get<std::uint64_t>();
    episode_active_ = r.get_bool();
    env_ = get_env(r);
    const auto n_old = r.get<std::uint64_t>();
    if (n_old > sequence_.tasks.size()) throw StructuralError("checkpoint: too many old-task environments");
    old_envs_.assign(n_old, std::nullopt);
    for (auto& e : old_envs_)
      if (r.get_bool()) e = get_env(r);
    online_cursor_ = r.get<std::uint64_t>();
  }

  std::uint64_t eval_seed(std::size_t slot) const {
    return (seed_ + 1) * 1'000'003ULL + static_cast<std::uint64_t>(slot) * 7'919ULL + 0xe7a1ULL;
  }

 private:
  /// Mean deterministic return of prior head `h` on the task at `slot`.
  std::pair<double, std::int64_t> score_head(std::size_t h, std::size_t slot) {
    const auto& task = sequence_.tasks[slot];
    const std::uint64_t base = seed_ * 31ULL + slot * 1'009ULL + h * 101ULL;
    double total = 0.0;
    std::int64_t steps = 0;
    for (int k = 0; k < config_.best_return_episodes; ++k) {
      envs::EnvState s = envs::reset(task, base + static_cast<std::uint64_t>(k));
      bool done = false;
      while (!done) {
        const auto obs = envs::observe(task, s);
        const auto a = sac::act<T>(actor_, h, obs, sac::ActMode::deterministic, rng_);
        const auto r = envs::step(task, s, a);
        total += r.reward;
        store_.push_new(envs::Transition{static_cast<int>(slot), obs, a, r.reward, envs::observe(task, r.next), r.done,
                                         r.success, r.done && !r.success});
        s = r.next;
        done = r.done;
        ++steps;
      }
    }
    return {total / config_.best_return_episodes, steps};
  }

  void interact() {
    const std::size_t slot = *current_;
    const auto& task = sequence_.tasks[slot];
    if (!episode_active_) {
      env_ = envs::reset(task, next_episode_seed());
      episode_active_ = true;
    }
    const auto obs = envs::observe(task, env_);
    const auto a = sac::act<T>(actor_, slot, obs, sac::ActMode::stochastic, rng_);
    const auto r = envs::step(task, env_, a);
    store_.push_new(envs::Transition{static_cast<int>(slot), obs, a, r.reward, envs::observe(task, r.next), r.done,
                                     r.success, r.done && !r.success});
    env_ = r.next;
    if (r.done) episode_active_ = false;
  }

  void interact_old() {
    const std::size_t slot = *current_;
    if (slot == 0) return;
    const std::size_t old = online_cursor_ % slot;
    ++online_cursor_;
    if (old_envs_.size() < slot) old_envs_.resize(slot);
    const auto& task = sequence_.tasks[old];
    auto& st = old_envs_[old];
    if (!st) st = envs::reset(task, next_episode_seed());
    const auto obs = envs::observe(task, *st);
    const auto a = sac::act<T>(actor_, old, obs, sac::ActMode::stochastic, rng_);
    const auto r = envs::step(task, *st, a);
    store_.push_live(envs::Transition{static_cast<int>(old), obs, a, r.reward, envs::observe(task, r.next), r.done,
                                      r.success, r.done && !r.success});
    if (r.done)
      st.reset();
    else
      st = r.next;
  }

  static constexpr char kCheckpointMagic[4] = {'R', 'C', 'L', 'A'};
  static constexpr std::uint32_t kCheckpointVersion = 1;

  static void put_env(io::Writer& w, const envs::EnvState& e) {
    w.put(e.position.x());
    w.put(e.position.y());
    w.put<std::int32_t>(e.steps_elapsed);
  }

  static envs::EnvState get_env(io::Reader& r) {
    envs::EnvState e;
    e.position.x() = r.get<double>();
    e.position.y() = r.get<double>();
    e.steps_elapsed = r.get<std::int32_t>();
    return e;
  }

  std::uint64_t next_episode_seed() { return seed_ * 0x100000001b3ULL + (++episodes_started_); }

  AgentConfig config_;
  TaskSequence sequence_;
  std::uint64_t seed_;
  std::mt19937_64 rng_;
  std::mt19937_64 distill_rng_;
  MultiHeadNet<T> actor_;
  sac::NetOptimizer<T> actor_opt_;
  std::vector<MultiHeadNet<T>> critics_;
  std::vector<MultiHeadNet<T>> target_critics_;
  std::vector<sac::NetOptimizer<T>> critic_opt_;
  popart::PopArtStats stats_;
  sac::EntropyTemp temp_;
  replay::ReplayStore store_;
  HeadScorer scorer_;

  std::optional<std::size_t> current_;
  std::optional<std::size_t> last_best_head_;
  std::int64_t task_steps_ = 0;
  std::int64_t exploration_left_ = 0;
  std::int64_t updates_ = 0;
  std::uint64_t episodes_started_ = 0;
  bool episode_active_ = false;
  envs::EnvState env_;
  std::vector<std::optional<envs::EnvState>> old_envs_;
  std::size_t online_cursor_ = 0;
};

/// Evaluates every task of the sequence on the agent's current parameters.
template <typename T>
metrics::Checkpoint evaluate_all(const Agent<T>& agent, std::int64_t step) {
  metrics::Checkpoint c;
  c.step = step;
  for (std::size_t k = 0; k < agent.sequence().tasks.size(); ++k)
    c.success.push_back(agent.evaluate(k, agent.sequence().eval_episodes));
  return c;
}

/// Trains through the whole sequence, evaluating all tasks at step 0, every
/// eval_interval global steps, and at every task boundary.
template <typename T>
metrics::EvalLog run_sequence(Agent<T>& agent, const std::function<void(const metrics::Checkpoint&)>& on_checkpoint = {}) {
  const auto& seq = agent.sequence();
  metrics::EvalLog log;
  log.steps_per_task = seq.steps_per_task;
  log.tasks = static_cast<int>(seq.tasks.size());
  auto record = [&](std::int64_t step) {
    log.checkpoints.push_back(evaluate_all(agent, step));
    if (on_checkpoint) on_checkpoint(log.checkpoints.back());
  };
  record(0);
  for (std::size_t slot = 0; slot < seq.tasks.size(); ++slot) {
    if (seq.steps_per_task == 0) break;
    const std::int64_t start = static_cast<std::int64_t>(slot) * seq.steps_per_task;
    const std::int64_t end = start + seq.steps_per_task;
    auto advance = [&](std::int64_t before) {
      const std::int64_t now = start + agent.task_steps();
      if (now == end || (now != before && now / seq.eval_interval != before / seq.eval_interval)) record(now);
    };
    agent.begin_task(slot);
    advance(start);
    while (agent.task_steps() < seq.steps_per_task) {
      const std::int64_t before = start + agent.task_steps();
      agent.train_step();
      advance(before);
    }
  }
  return log;
}

}  // namespace recall::agent
