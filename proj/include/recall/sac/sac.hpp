#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "recall/envs/point_mass.hpp"
#include "recall/errors.hpp"
#include "recall/numkit/adam.hpp"
#include "recall/numkit/gaussian.hpp"
#include "recall/popart/popart.hpp"
#include "recall/sac/multi_head_net.hpp"

namespace recall::sac {

struct SacHyper {
  double gamma = 0.99;
  double tau = 0.005;
  double lr = 1e-3;
  int batch = 128;
  int target_update_interval = 1;
  double target_output_std = 0.089;
  bool twin_critics = true;
  std::optional<double> target_entropy;  // overrides the value derived from target_output_std
  double initial_log_alpha = -2.302585092994046;  // alpha = 0.1
  double alpha_lr = 1e-3;
  bool learn_alpha = true;
  bool per_task_alpha = true;

  void validate() const {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("sac: gamma must lie in [0, 1]");
    if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("sac: tau must lie in (0, 1]");
    if (!(lr > 0.0)) throw ConfigError("sac: lr must be positive");
    if (batch <= 0) throw ConfigError("sac: batch must be positive");
    if (target_update_interval <= 0) throw ConfigError("sac: target_update_interval must be positive");
    if (!(target_output_std > 0.0)) throw ConfigError("sac: target_output_std must be positive");
  }
};

/// Entropy of a Gaussian with standard deviation sigma_t per dimension.
inline double target_entropy_from_std(int act_dim, double sigma_t) {
  return act_dim * std::log(sigma_t * std::sqrt(2.0 * std::numbers::pi * std::numbers::e));
}

/// Learned entropy temperature, either one per head or one shared.
class EntropyTemp {
 public:
  EntropyTemp() = default;
  EntropyTemp(const SacHyper& hyper, int act_dim)
      : per_head_(hyper.per_task_alpha),
        learn_(hyper.learn_alpha),
        initial_(hyper.initial_log_alpha),
        lr_(hyper.alpha_lr),
        target_entropy_(hyper.target_entropy.value_or(target_entropy_from_std(act_dim, hyper.target_output_std))) {}

  void add_head() {
    if (per_head_ || log_alpha_.empty()) {
      log_alpha_.push_back(initial_);
      numkit::ScalarAdam opt;
      opt.hyper.lr = lr_;
      opt_.push_back(opt);
    }
    ++heads_;
  }

  std::size_t heads() const { return heads_; }
  bool per_head() const { return per_head_; }
  bool learned() const { return learn_; }
  double target_entropy() const { return target_entropy_; }
  double log_alpha(std::size_t h) const { return log_alpha_.at(slot(h)); }
  double alpha(std::size_t h) const { return std::exp(log_alpha(h)); }
  void set_log_alpha(std::size_t h, double v) { log_alpha_.at(slot(h)) = v; }
  void copy_head(std::size_t src, std::size_t dst) {
    if (per_head_) log_alpha_.at(dst) = log_alpha_.at(src);
  }

  void save(io::Writer& w) const {
    w.put<std::uint64_t>(log_alpha_.size());
    for (std::size_t k = 0; k < log_alpha_.size(); ++k) {
      w.put(log_alpha_[k]);
      w.put_scalar_adam(opt_[k]);
    }
  }

  void load(io::Reader& r) {
    if (r.get<std::uint64_t>() != log_alpha_.size())
      throw StructuralError("checkpoint: temperature count differs from the configuration");
    for (std::size_t k = 0; k < log_alpha_.size(); ++k) {
      log_alpha_[k] = r.get<double>();
      r.get_scalar_adam(opt_[k]);
    }
  }

  /// Temperature loss: sum over temperatures of -log_alpha * (mean log_prob
  /// + target_entropy), each mean taken over the samples routed to it.
  double loss(std::span<const double> log_probs, std::span<const int> heads) const {
    const auto m = routed_means(log_probs, heads);
    double total = 0.0;
    for (std::size_t s = 0; s < log_alpha_.size(); ++s)
      if (m[s]) total += -log_alpha_[s] * (*m[s] + target_entropy_);
    return total;
  }

  /// d loss / d log_alpha per temperature; empty where no sample routes.
  std::vector<std::optional<double>> gradient(std::span<const double> log_probs, std::span<const int> heads) const {
    auto g = routed_means(log_probs, heads);
    for (auto& v : g)
      if (v) v = -(*v + target_entropy_);
    return g;
  }

  /// One Adam step on the temperature loss.
  void step(std::span<const double> log_probs, std::span<const int> heads) {
    if (!learn_) return;
    const auto g = gradient(log_probs, heads);
    for (std::size_t s = 0; s < log_alpha_.size(); ++s)
      if (g[s]) log_alpha_[s] = opt_[s].update(log_alpha_[s], *g[s]);
  }

 private:
  std::vector<std::optional<double>> routed_means(std::span<const double> log_probs, std::span<const int> heads) const {
    if (log_probs.size() != heads.size()) throw StructuralError("entropy temperature: one head per sample");
    std::vector<double> sum(log_alpha_.size(), 0.0);
    std::vector<int> count(log_alpha_.size(), 0);
    for (std::size_t j = 0; j < log_probs.size(); ++j) {
      const std::size_t s = slot(static_cast<std::size_t>(heads[j]));
      sum[s] += log_probs[j];
      ++count[s];
    }
    std::vector<std::optional<double>> out(log_alpha_.size());
    for (std::size_t s = 0; s < out.size(); ++s)
      if (count[s]) out[s] = sum[s] / count[s];
    return out;
  }

  std::size_t slot(std::size_t h) const {
    if (h >= heads_) throw ContractError("entropy temperature: unknown head " + std::to_string(h));
    return per_head_ ? h : 0;
  }

  bool per_head_ = true;
  bool learn_ = true;
  double initial_ = 0.0;
  double lr_ = 1e-3;
  double target_entropy_ = 0.0;
  std::size_t heads_ = 0;
  std::vector<double> log_alpha_;
  std::vector<numkit::ScalarAdam> opt_;
};

/// A mini-batch laid out column-per-sample.
template <typename T>
struct Batch {
  Matrix<T> state;
  Matrix<T> action;
  Matrix<T> next_state;
  Matrix<T> reward;    // 1 x B
  Matrix<T> not_done;  // 1 x B
  std::vector<int> heads;

  Eigen::Index size() const { return state.cols(); }

  Matrix<T> state_action() const {
    Matrix<T> sa(state.rows() + action.rows(), state.cols());
    sa.topRows(state.rows()) = state;
    sa.bottomRows(action.rows()) = action;
    return sa;
  }
};

template <typename T>
Batch<T> make_batch(std::span<const envs::Transition> transitions) {
  const auto n = static_cast<Eigen::Index>(transitions.size());
  Batch<T> b;
  b.state.resize(envs::kObsDim, n);
  b.next_state.resize(envs::kObsDim, n);
  b.action.resize(envs::kActDim, n);
  b.reward.resize(1, n);
  b.not_done.resize(1, n);
  b.heads.reserve(transitions.size());
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& t = transitions[static_cast<std::size_t>(j)];
    for (int i = 0; i < envs::kObsDim; ++i) {
      b.state(i, j) = static_cast<T>(t.state[static_cast<std::size_t>(i)]);
      b.next_state(i, j) = static_cast<T>(t.next_state[static_cast<std::size_t>(i)]);
    }
    for (int i = 0; i < envs::kActDim; ++i) b.action(i, j) = static_cast<T>(t.action[static_cast<std::size_t>(i)]);
    b.reward(0, j) = static_cast<T>(t.reward);
    b.not_done(0, j) = t.done ? T(0) : T(1);
    b.heads.push_back(t.task_id);
  }
  return b;
}

/// Actor head output split into mean and clamped log-std rows.
template <typename T>
struct PolicyParams {
  Matrix<T> mean;
  Matrix<T> log_std;
  Matrix<T> raw_log_std;
};

template <typename T>
PolicyParams<T> decode_policy(const Matrix<T>& head_out) {
  const Eigen::Index d = head_out.rows() / 2;
  PolicyParams<T> p;
  p.mean = head_out.topRows(d);
  p.raw_log_std = head_out.bottomRows(d);
  p.log_std = p.raw_log_std.unaryExpr([](T v) { return numkit::clamp_log_std(v); });
  return p;
}

/// Stacks (mean, log_std) gradients back into head-output rows, zeroing the
/// log-std gradient wherever the clamp was active.
template <typename T>
Matrix<T> encode_policy_grad(const PolicyParams<T>& p, const Matrix<T>& d_mean, const Matrix<T>& d_log_std) {
  const Eigen::Index d = p.mean.rows();
  Matrix<T> g(2 * d, p.mean.cols());
  g.topRows(d) = d_mean;
  const T lo = static_cast<T>(numkit::kLogStdMin);
  const T hi = static_cast<T>(numkit::kLogStdMax);
  g.bottomRows(d) = ((p.raw_log_std.array() >= lo) && (p.raw_log_std.array() <= hi)).select(d_log_std, T(0));
  return g;
}

template <typename T>
Matrix<T> standard_normal(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Matrix<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(n01(rng));
  return m;
}

/// Per-head shift and scale gathered into 1 x B rows.
template <typename T>
std::pair<Matrix<T>, Matrix<T>> gather_stats(const popart::PopArtStats& stats, std::span<const int> heads) {
  Matrix<T> mu(1, static_cast<Eigen::Index>(heads.size()));
  Matrix<T> sigma(1, static_cast<Eigen::Index>(heads.size()));
  for (std::size_t j = 0; j < heads.size(); ++j) {
    const auto& s = stats.head(static_cast<std::size_t>(heads[j]));
    mu(0, static_cast<Eigen::Index>(j)) = static_cast<T>(s.mu);
    sigma(0, static_cast<Eigen::Index>(j)) = static_cast<T>(s.sigma);
  }
  return {mu, sigma};
}

template <typename T>
Matrix<T> gather_alpha(const EntropyTemp& temp, std::span<const int> heads) {
  Matrix<T> a(1, static_cast<Eigen::Index>(heads.size()));
  for (std::size_t j = 0; j < heads.size(); ++j)
    a(0, static_cast<Eigen::Index>(j)) = static_cast<T>(temp.alpha(static_cast<std::size_t>(heads[j])));
  return a;
}

template <typename T>
struct QTargets {
  Matrix<T> raw;         // 1 x B, unnormalized bootstrapped targets
  Matrix<T> normalized;  // 1 x B
};

/// raw = r + gamma * (1 - done) * (sigma * Qbar_norm(s', a') + mu - alpha * log pi(a'|s')),
/// with a' drawn from the current actor and Qbar the (min over twin) target
/// critic; normalized = (raw - mu) / sigma.
template <typename T>
QTargets<T> compute_normalized_q_target(const Batch<T>& batch, const MultiHeadNet<T>& actor,
                                        std::span<const MultiHeadNet<T>> target_critics,
                                        const popart::PopArtStats& stats, const EntropyTemp& temp,
                                        const SacHyper& hyper, const Matrix<T>& noise) {
  if (target_critics.empty()) throw ContractError("q target: no target critics");
  const Routing routing = Routing::build(batch.heads, actor.heads());
  const auto policy = decode_policy<T>(actor.forward(batch.next_state, routing));
  const auto next = numkit::squashed_sample<T>(policy.mean, policy.log_std, noise);
  Matrix<T> next_sa(batch.next_state.rows() + next.action.rows(), batch.size());
  next_sa.topRows(batch.next_state.rows()) = batch.next_state;
  next_sa.bottomRows(next.action.rows()) = next.action;
  const Routing critic_routing = Routing::build(batch.heads, target_critics[0].heads());
  Matrix<T> q_bar = target_critics[0].forward(next_sa, critic_routing);
  for (std::size_t k = 1; k < target_critics.size(); ++k)
    q_bar = q_bar.cwiseMin(target_critics[k].forward(next_sa, critic_routing));
  const auto [mu, sigma] = gather_stats<T>(stats, batch.heads);
  const Matrix<T> alpha = gather_alpha<T>(temp, batch.heads);
  QTargets<T> out;
  const auto soft_value = sigma.array() * q_bar.array() + mu.array() - alpha.array() * next.log_prob.array();
  out.raw = (batch.reward.array() + static_cast<T>(hyper.gamma) * batch.not_done.array() * soft_value).matrix();
  out.normalized = ((out.raw.array() - mu.array()) / sigma.array()).matrix();
  return out;
}

template <typename T>
struct LossGrad {
  double loss = 0.0;
  NetGrad<T> grad;
  Matrix<T> log_prob;  // actor loss only
};

/// Mean over the batch of 1/2 (Q_norm(s, a) - target)^2; targets are
/// constants.
template <typename T>
LossGrad<T> critic_loss_and_grad(const MultiHeadNet<T>& critic, const Batch<T>& batch,
                                 const Matrix<T>& normalized_target) {
  if (normalized_target.cols() != batch.size()) throw StructuralError("critic loss: target length mismatch");
  NetCache<T> cache;
  const Matrix<T> q = critic.forward(batch.state_action(), Routing::build(batch.heads, critic.heads()), &cache);
  const Matrix<T> err = q - normalized_target;
  const T inv_b = T(1) / static_cast<T>(batch.size());
  LossGrad<T> out;
  out.loss = 0.5 * static_cast<double>(err.squaredNorm()) / static_cast<double>(batch.size());
  out.grad = critic.backward(cache, err * inv_b).first;
  return out;
}

/// Mean over the batch of alpha * log pi(a|s) - min_k Q_norm,k(s, a) with a
/// reparameterized from the actor using `noise`.
template <typename T>
LossGrad<T> actor_loss_and_grad(const MultiHeadNet<T>& actor, std::span<const MultiHeadNet<T>> critics,
                                const Matrix<T>& states, std::span<const int> heads, const EntropyTemp& temp,
                                const Matrix<T>& noise) {
  if (critics.empty()) throw ContractError("actor loss: no critics");
  const Eigen::Index n = states.cols();
  NetCache<T> actor_cache;
  const Routing routing = Routing::build(heads, actor.heads());
  const auto policy = decode_policy<T>(actor.forward(states, routing, &actor_cache));
  const auto sample = numkit::squashed_sample<T>(policy.mean, policy.log_std, noise);
  Matrix<T> sa(states.rows() + sample.action.rows(), n);
  sa.topRows(states.rows()) = states;
  sa.bottomRows(sample.action.rows()) = sample.action;

  const Routing critic_routing = Routing::build(heads, critics[0].heads());
  std::vector<NetCache<T>> caches(critics.size());
  std::vector<Matrix<T>> qs;
  for (std::size_t k = 0; k < critics.size(); ++k) qs.push_back(critics[k].forward(sa, critic_routing, &caches[k]));
  Matrix<T> q_min = qs[0];
  std::vector<int> argmin(static_cast<std::size_t>(n), 0);
  for (std::size_t k = 1; k < critics.size(); ++k)
    for (Eigen::Index j = 0; j < n; ++j)
      if (qs[k](0, j) < q_min(0, j)) {
        q_min(0, j) = qs[k](0, j);
        argmin[static_cast<std::size_t>(j)] = static_cast<int>(k);
      }

  const Matrix<T> alpha = gather_alpha<T>(temp, heads);
  const T inv_n = T(1) / static_cast<T>(n);
  LossGrad<T> out;
  out.loss = static_cast<double>((alpha.array() * sample.log_prob.array() - q_min.array()).sum()) /
             static_cast<double>(n);

  Matrix<T> d_action = Matrix<T>::Zero(sample.action.rows(), n);
  for (std::size_t k = 0; k < critics.size(); ++k) {
    Matrix<T> dq = Matrix<T>::Zero(1, n);
    bool any = false;
    for (Eigen::Index j = 0; j < n; ++j)
      if (argmin[static_cast<std::size_t>(j)] == static_cast<int>(k)) {
        dq(0, j) = -inv_n;
        any = true;
      }
    if (!any) continue;
    const Matrix<T> d_sa = critics[k].backward(caches[k], dq, false).second;
    d_action += d_sa.bottomRows(sample.action.rows());
  }
  const Matrix<T> d_log_prob = alpha * inv_n;
  const auto g = numkit::squashed_sample_backward<T>(policy.log_std, noise, sample, d_action, d_log_prob);
  out.grad = actor.backward(actor_cache, encode_policy_grad(policy, g.mean, g.log_std)).first;
  out.log_prob = sample.log_prob;
  return out;
}

/// Mean over old states of KL(pi(.|s) || pi_old(.|s)) on pre-squash
/// Gaussians.
template <typename T>
LossGrad<T> distill_loss_and_grad(const MultiHeadNet<T>& actor, const Matrix<T>& states, std::span<const int> heads,
                                  const Matrix<T>& old_mean, const Matrix<T>& old_log_std) {
  const Eigen::Index n = states.cols();
  LossGrad<T> out;
  if (n == 0) return out;
  NetCache<T> cache;
  const auto policy = decode_policy<T>(actor.forward(states, Routing::build(heads, actor.heads()), &cache));
  const Matrix<T> kl = numkit::diag_gaussian_kl<T>(policy.mean, policy.log_std, old_mean, old_log_std);
  out.loss = static_cast<double>(kl.sum()) / static_cast<double>(n);
  const Matrix<T> w = Matrix<T>::Constant(1, n, T(1) / static_cast<T>(n));
  const auto g = numkit::diag_gaussian_kl_grad<T>(policy.mean, policy.log_std, old_mean, old_log_std, w);
  out.grad = actor.backward(cache, encode_policy_grad(policy, g.mean, g.log_std)).first;
  return out;
}

struct StepReport {
  double loss = 0.0;
  bool applied = true;
  std::string diagnostic;
};

/// One Adam step per critic on its normalized Bellman loss.
template <typename T>
StepReport critic_step(const Batch<T>& batch, std::span<MultiHeadNet<T>> critics,
                       std::span<NetOptimizer<T>> optimizers, const Matrix<T>& normalized_target) {
  StepReport report;
  std::vector<LossGrad<T>> parts;
  for (auto& c : critics) {
    parts.push_back(critic_loss_and_grad(c, batch, normalized_target));
    report.loss += parts.back().loss / static_cast<double>(critics.size());
  }
  if (!std::isfinite(report.loss)) return {report.loss, false, "critic step: non-finite loss, step rejected"};
  for (const auto& p : parts)
    if (!p.grad.all_finite()) return {report.loss, false, "critic step: non-finite gradient, step rejected"};
  for (std::size_t k = 0; k < critics.size(); ++k) optimizers[k].apply(critics[k], parts[k].grad);
  return report;
}

/// Applies an already-assembled actor gradient after the finiteness check.
template <typename T>
StepReport apply_actor_gradient(MultiHeadNet<T>& actor, NetOptimizer<T>& optimizer, double loss,
                                const NetGrad<T>& grad) {
  if (!std::isfinite(loss)) return {loss, false, "actor step: non-finite loss, step rejected"};
  if (!grad.all_finite()) return {loss, false, "actor step: non-finite gradient, step rejected"};
  optimizer.apply(actor, grad);
  return {loss, true, {}};
}

template <typename T>
void polyak_update(MultiHeadNet<T>& target, const MultiHeadNet<T>& online, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("polyak: tau must lie in [0, 1]");
  const T keep = static_cast<T>(1.0 - tau);
  const T take = static_cast<T>(tau);
  target.zip_blocks(online, [&](Mlp<T>& t, const Mlp<T>& o) {
    if (!t.same_shape(o)) throw StructuralError("polyak: block shape mismatch");
    for (std::size_t k = 0; k < t.layers.size(); ++k) {
      t.layers[k].weight = keep * t.layers[k].weight + take * o.layers[k].weight;
      t.layers[k].bias = keep * t.layers[k].bias + take * o.layers[k].bias;
    }
  });
}

enum class ActMode { stochastic, deterministic };

/// Actions for a batch of observations on one head.
template <typename T>
Matrix<T> act_batch(const MultiHeadNet<T>& actor, std::size_t head, const Matrix<T>& obs, ActMode mode,
                    std::mt19937_64& rng) {
  if (head >= actor.heads()) throw ContractError("act: unknown task head " + std::to_string(head));
  std::vector<int> heads(static_cast<std::size_t>(obs.cols()), static_cast<int>(head));
  const auto policy = decode_policy<T>(actor.forward(obs, heads));
  if (mode == ActMode::deterministic) return policy.mean.array().tanh().matrix();
  const Matrix<T> noise = standard_normal<T>(policy.mean.rows(), policy.mean.cols(), rng);
  return numkit::squashed_sample<T>(policy.mean, policy.log_std, noise).action;
}

template <typename T>
envs::Action act(const MultiHeadNet<T>& actor, std::size_t head, const envs::Observation& obs, ActMode mode,
                 std::mt19937_64& rng) {
  Matrix<T> x(envs::kObsDim, 1);
  for (int i = 0; i < envs::kObsDim; ++i) x(i, 0) = static_cast<T>(obs[static_cast<std::size_t>(i)]);
  const Matrix<T> a = act_batch(actor, head, x, mode, rng);
  return {static_cast<double>(a(0, 0)), static_cast<double>(a(1, 0))};
}

}  // namespace recall::sac
