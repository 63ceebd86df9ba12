#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "recall/errors.hpp"

namespace recall::metrics {

struct Checkpoint {
  std::int64_t step = 0;
  std::vector<double> success;  // one entry per task in the sequence
};

/// Success-rate time series of one continual run.
struct EvalLog {
  std::vector<Checkpoint> checkpoints;
  std::int64_t steps_per_task = 0;
  int tasks = 0;

  void validate() const {
    std::optional<std::int64_t> last;
    for (const auto& c : checkpoints) {
      if (last && c.step <= *last) throw StructuralError("eval log: checkpoint steps must strictly increase");
      last = c.step;
      if (static_cast<int>(c.success.size()) != tasks)
        throw StructuralError("eval log: checkpoint at step " + std::to_string(c.step) + " has " +
                              std::to_string(c.success.size()) + " tasks, expected " + std::to_string(tasks));
      for (double p : c.success)
        if (!(p >= 0.0 && p <= 1.0)) throw StructuralError("eval log: success rate outside [0, 1]");
    }
  }

  const Checkpoint* at(std::int64_t step) const {
    for (const auto& c : checkpoints)
      if (c.step == step) return &c;
    return nullptr;
  }

  const Checkpoint& require(std::int64_t step) const {
    const Checkpoint* c = at(step);
    if (!c) throw ContractError("eval log: no checkpoint at step " + std::to_string(step));
    return *c;
  }
};

/// Mean success over all tasks at a logged step; no interpolation.
inline double average_performance(const EvalLog& log, std::int64_t step) {
  const auto& c = log.require(step);
  if (c.success.empty()) throw ContractError("eval log: no tasks");
  double sum = 0.0;
  for (double p : c.success) sum += p;
  return sum / static_cast<double>(c.success.size());
}

/// Mean over tasks of p_i(i * delta) - p_i(N * delta).
inline double forgetting(const EvalLog& log) {
  const int n = log.tasks;
  if (n <= 0) throw ContractError("eval log: no tasks");
  const auto& end = log.require(static_cast<std::int64_t>(n) * log.steps_per_task);
  double sum = 0.0;
  for (int i = 1; i <= n; ++i) {
    const auto& own = log.require(static_cast<std::int64_t>(i) * log.steps_per_task);
    sum += own.success[static_cast<std::size_t>(i - 1)] - end.success[static_cast<std::size_t>(i - 1)];
  }
  return sum / static_cast<double>(n);
}

/// A (step, value) curve on [0, window].
struct Curve {
  std::vector<std::int64_t> steps;
  std::vector<double> values;
};

/// Trapezoidal area under the curve over [0, window], divided by window.
inline double normalized_auc(const Curve& c, std::int64_t window) {
  if (window <= 0) throw ContractError("auc: window must be positive");
  if (c.steps.size() != c.values.size() || c.steps.size() < 2)
    throw ContractError("auc: need at least two points");
  if (c.steps.front() != 0 || c.steps.back() != window)
    throw ContractError("auc: curve must cover [0, window] exactly");
  double area = 0.0;
  for (std::size_t k = 1; k < c.steps.size(); ++k)
    area += 0.5 * (c.values[k] + c.values[k - 1]) * static_cast<double>(c.steps[k] - c.steps[k - 1]);
  return area / static_cast<double>(window);
}

/// Task `task`'s curve during its own training window, re-based to start
/// at 0.
inline Curve training_curve(const EvalLog& log, int task) {
  const std::int64_t begin = static_cast<std::int64_t>(task) * log.steps_per_task;
  const std::int64_t end = begin + log.steps_per_task;
  Curve c;
  for (const auto& cp : log.checkpoints)
    if (cp.step >= begin && cp.step <= end) {
      c.steps.push_back(cp.step - begin);
      c.values.push_back(cp.success[static_cast<std::size_t>(task)]);
    }
  return c;
}

/// From-scratch single-task curves, one per task in the sequence.
struct ReferenceCurves {
  std::vector<Curve> curves;
  std::int64_t window = 0;
};

struct ForwardTransfer {
  std::vector<std::optional<double>> per_task;  // empty where the reference AUC is 1
  std::optional<double> mean;
};

/// FT_i = (AUC_i - AUC_ref_i) / (1 - AUC_ref_i).
inline ForwardTransfer forward_transfer(const EvalLog& log, const ReferenceCurves& refs) {
  if (static_cast<int>(refs.curves.size()) != log.tasks)
    throw ContractError("forward transfer: need one reference curve per task");
  if (refs.window != log.steps_per_task) throw ContractError("forward transfer: reference window differs");
  ForwardTransfer ft;
  double sum = 0.0;
  int count = 0;
  for (int i = 0; i < log.tasks; ++i) {
    const double auc = normalized_auc(training_curve(log, i), log.steps_per_task);
    const double auc_ref = normalized_auc(refs.curves[static_cast<std::size_t>(i)], refs.window);
    if (auc_ref >= 1.0) {
      ft.per_task.push_back(std::nullopt);
      continue;
    }
    const double v = (auc - auc_ref) / (1.0 - auc_ref);
    ft.per_task.push_back(v);
    sum += v;
    ++count;
  }
  if (count > 0) ft.mean = sum / count;
  return ft;
}

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

/// Percentile bootstrap interval of the mean.
template <typename Rng>
Interval bootstrap_ci(std::span<const double> samples, double level, int resamples, Rng& rng) {
  if (samples.empty()) throw ContractError("bootstrap: no samples");
  if (resamples <= 0) throw ContractError("bootstrap: resamples must be positive");
  if (!(level >= 0.0 && level < 1.0)) throw ContractError("bootstrap: level must lie in [0, 1)");
  std::uniform_int_distribution<std::size_t> pick(0, samples.size() - 1);
  std::vector<double> means(static_cast<std::size_t>(resamples));
  for (auto& m : means) {
    double s = 0.0;
    for (std::size_t k = 0; k < samples.size(); ++k) s += samples[pick(rng)];
    m = s / static_cast<double>(samples.size());
  }
  std::sort(means.begin(), means.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(means.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = static_cast<std::size_t>(std::ceil(pos));
    const double frac = pos - static_cast<double>(lo);
    return means[lo] + frac * (means[hi] - means[lo]);
  };
  const double tail = (1.0 - level) / 2.0;
  return {quantile(tail), quantile(1.0 - tail)};
}

/// Row = first task, column = second task. Missing pairs stay empty.
struct PairwiseMatrices {
  int size = 0;
  std::vector<std::optional<double>> first_perf;
  std::vector<std::optional<double>> second_perf;
  std::vector<std::optional<double>> first_forgetting;

  std::optional<double> first_perf_at(int r, int c) const { return first_perf[index(r, c)]; }
  std::optional<double> second_perf_at(int r, int c) const { return second_perf[index(r, c)]; }
  std::optional<double> forgetting_at(int r, int c) const { return first_forgetting[index(r, c)]; }

  std::size_t index(int r, int c) const { return static_cast<std::size_t>(r * size + c); }

  std::vector<std::pair<int, int>> holes() const {
    std::vector<std::pair<int, int>> out;
    for (int r = 0; r < size; ++r)
      for (int c = 0; c < size; ++c)
        if (!first_perf[index(r, c)]) out.emplace_back(r, c);
    return out;
  }

  static std::optional<double> mean_of(const std::vector<std::optional<double>>& m) {
    double s = 0.0;
    int n = 0;
    for (const auto& v : m)
      if (v) {
        s += *v;
        ++n;
      }
    if (n == 0) return std::nullopt;
    return s / n;
  }
};

/// `logs[r * size + c]` is the two-task run (task r, then task c), or empty.
inline PairwiseMatrices pairwise_matrices(int size, const std::vector<std::optional<EvalLog>>& logs) {
  if (size < 0 || logs.size() != static_cast<std::size_t>(size) * static_cast<std::size_t>(size))
    throw ContractError("pairwise: need size*size log slots");
  PairwiseMatrices m;
  m.size = size;
  const std::size_t cells = logs.size();
  m.first_perf.assign(cells, std::nullopt);
  m.second_perf.assign(cells, std::nullopt);
  m.first_forgetting.assign(cells, std::nullopt);
  for (std::size_t k = 0; k < cells; ++k) {
    if (!logs[k]) continue;
    const EvalLog& log = *logs[k];
    if (log.tasks != 2) throw ContractError("pairwise: logs must be two-task runs");
    const auto& end = log.require(2 * log.steps_per_task);
    const auto& mid = log.require(log.steps_per_task);
    m.first_perf[k] = end.success[0];
    m.second_perf[k] = end.success[1];
    m.first_forgetting[k] = mid.success[0] - end.success[0];
  }
  return m;
}

}  // namespace recall::metrics
