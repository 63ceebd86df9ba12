#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "recall/errors.hpp"
#include "recall/numkit/mlp.hpp"

namespace recall::popart {

struct PopArtConfig {
  double beta = 3e-4;
  double sigma_min = 1e-4;
  double sigma_max = 1e6;
};

/// Running shift/scale of one head's value targets.
struct HeadStats {
  double mu = 0.0;
  double nu = 1.0;
  double sigma = 1.0;
  std::int64_t update_count = 0;
};

/// Per-head target statistics, updated by a debiased exponential moving
/// average: beta_t = beta / (1 - (1 - beta)^t).
class PopArtStats {
 public:
  explicit PopArtStats(PopArtConfig config = {}) : config_(config) {
    if (!(config.beta > 0.0 && config.beta <= 1.0)) throw ConfigError("popart: beta must lie in (0, 1]");
    if (!(config.sigma_min > 0.0 && config.sigma_min <= config.sigma_max))
      throw ConfigError("popart: need 0 < sigma_min <= sigma_max");
  }

  const PopArtConfig& config() const { return config_; }
  std::size_t heads() const { return heads_.size(); }

  /// Registers a fresh head with identity normalization; returns its index.
  std::size_t add_head() {
    heads_.push_back(HeadStats{});
    return heads_.size() - 1;
  }

  const HeadStats& head(std::size_t h) const {
    check(h);
    return heads_[h];
  }

  /// Overwrites a head's statistics (checkpoint restore, tests).
  void set_head(std::size_t h, HeadStats s) {
    check(h);
    heads_[h] = s;
  }

  double clamp_sigma(double mu, double nu) const {
    return std::clamp(std::sqrt(std::max(nu - mu * mu, 0.0)), config_.sigma_min, config_.sigma_max);
  }

  /// Folds targets into head `h` one at a time, in order. Rejects the whole
  /// list (stats untouched) if any target is non-finite.
  void update_stats(std::size_t h, std::span<const double> targets) {
    check(h);
    for (double g : targets)
      if (!std::isfinite(g)) throw NumericError("popart: non-finite target, update rejected");
    HeadStats s = heads_[h];
    for (double g : targets) {
      ++s.update_count;
      // expm1/log1p keeps the first step at exactly 1 instead of 1 - 1e-13.
      const double step = std::min(
          1.0, config_.beta / -std::expm1(static_cast<double>(s.update_count) * std::log1p(-config_.beta)));
      s.mu += step * (g - s.mu);
      s.nu += step * (g * g - s.nu);
    }
    s.sigma = clamp_sigma(s.mu, s.nu);
    heads_[h] = s;
  }

  /// One raw step with an explicit step size, without debiasing.
  void update_with_step(std::size_t h, double g, double step) {
    check(h);
    if (!std::isfinite(g)) throw NumericError("popart: non-finite target, update rejected");
    HeadStats& s = heads_[h];
    s.mu += step * (g - s.mu);
    s.nu += step * (g * g - s.nu);
    s.sigma = clamp_sigma(s.mu, s.nu);
    ++s.update_count;
  }

  double normalize_target(std::size_t h, double q_target) const {
    check(h);
    return (q_target - heads_[h].mu) / heads_[h].sigma;
  }

  double unnormalize(std::size_t h, double q_norm) const {
    check(h);
    return heads_[h].sigma * q_norm + heads_[h].mu;
  }

 private:
  void check(std::size_t h) const {
    if (h >= heads_.size()) throw ContractError("popart: unknown head " + std::to_string(h));
  }

  PopArtConfig config_;
  std::vector<HeadStats> heads_;
};

/// Rescales the last affine layer of a head so that sigma * out + mu is
/// unchanged after the statistics move from (mu, sigma) to (mu2, sigma2).
template <typename T>
void rescale_head(numkit::Layer<T>& last, double mu, double sigma, double mu2, double sigma2) {
  const double ratio = sigma / sigma2;
  last.weight *= static_cast<T>(ratio);
  for (Eigen::Index i = 0; i < last.bias.size(); ++i)
    last.bias[i] = static_cast<T>((sigma * static_cast<double>(last.bias[i]) + mu - mu2) / sigma2);
}

}  // namespace recall::popart
