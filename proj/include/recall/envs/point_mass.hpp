#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "recall/errors.hpp"

namespace recall::envs {

inline constexpr int kObsDim = 4;
inline constexpr int kActDim = 2;

using Observation = std::array<double, kObsDim>;
using Action = std::array<double, kActDim>;

/// A 2-D point-mass reaching task. The commanded action is rotated before
/// it moves the point, so tasks with different rotations want different
/// policies for the same geometry.
struct TaskSpec {
  int id = 0;
  Eigen::Vector2d goal = Eigen::Vector2d::UnitX();
  Eigen::Matrix2d action_rotation = Eigen::Matrix2d::Identity();
  double reward_scale = 1.0;
  double success_radius = 0.05;
  int horizon = 100;
  double action_bound = 0.05;
  double start_radius = 0.1;
};

struct EnvState {
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
  int steps_elapsed = 0;
};

/// `done` ends bootstrapping and is set on success or at the horizon;
/// `timeout` tells the two apart.
struct Transition {
  int task_id = 0;
  Observation state{};
  Action action{};
  double reward = 0.0;
  Observation next_state{};
  bool done = false;
  bool success = false;
  bool timeout = false;
};

struct StepResult {
  EnvState next;
  double reward = 0.0;
  bool done = false;
  bool success = false;
};

inline Eigen::Matrix2d rotation_matrix(double degrees) {
  const double a = degrees * std::numbers::pi / 180.0;
  Eigen::Matrix2d r;
  r << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
  return r;
}

inline Observation observe(const TaskSpec& task, const EnvState& state) {
  return {state.position.x(), state.position.y(), task.goal.x(), task.goal.y()};
}

/// Uniform start position in the start disc.
inline EnvState reset(const TaskSpec& task, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double r = task.start_radius * std::sqrt(unit(rng));
  const double theta = 2.0 * std::numbers::pi * unit(rng);
  return EnvState{Eigen::Vector2d(r * std::cos(theta), r * std::sin(theta)), 0};
}

/// Potential-based shaping c*(d_before - d_after) plus a success bonus of c.
/// Actions are clipped to [-1, 1] before scaling.
inline StepResult step(const TaskSpec& task, const EnvState& state, const Action& action) {
  if (state.steps_elapsed >= task.horizon)
    throw ContractError("step: episode already reached its horizon");
  if ((state.position - task.goal).norm() <= task.success_radius && state.steps_elapsed > 0)
    throw ContractError("step: episode already terminated at the goal");
  const Eigen::Vector2d a(std::clamp(action[0], -1.0, 1.0), std::clamp(action[1], -1.0, 1.0));
  StepResult out;
  out.next.position = state.position + task.action_bound * (task.action_rotation * a);
  out.next.steps_elapsed = state.steps_elapsed + 1;
  const double d_before = (state.position - task.goal).norm();
  const double d_after = (out.next.position - task.goal).norm();
  out.success = d_after <= task.success_radius;
  out.reward = task.reward_scale * (d_before - d_after) + (out.success ? task.reward_scale : 0.0);
  out.done = out.success || out.next.steps_elapsed >= task.horizon;
  return out;
}

struct TaskConfig {
  int id = 0;
  double goal_angle_deg = 0.0;
  double goal_radius = 1.0;
  double rotation_deg = 0.0;
  double reward_scale = 1.0;
  double success_radius = 0.05;
  int horizon = 100;
  double action_bound = 0.05;
  double start_radius = 0.1;
};

struct SuiteConfig {
  std::vector<TaskConfig> tasks;
};

/// Ten tasks, rotations at multiples of 36 degrees, reward scales cycling
/// through 1, 10, 100.
inline SuiteConfig default_suite_config() {
  SuiteConfig cfg;
  constexpr std::array<double, 3> scales{1.0, 10.0, 100.0};
  for (int k = 0; k < 10; ++k) {
    TaskConfig t;
    t.id = k;
    t.goal_angle_deg = 36.0 * k;
    t.rotation_deg = 36.0 * ((3 * k) % 10);
    t.reward_scale = scales[static_cast<std::size_t>(k) % scales.size()];
    cfg.tasks.push_back(t);
  }
  return cfg;
}

inline std::vector<TaskSpec> make_task_suite(const SuiteConfig& config) {
  std::vector<TaskSpec> suite;
  std::set<int> ids;
  for (const auto& t : config.tasks) {
    const std::string where = "task " + std::to_string(t.id);
    if (!ids.insert(t.id).second) throw ConfigError(where + ": duplicate task id");
    if (!(t.reward_scale > 0.0)) throw ConfigError(where + ": reward_scale must be positive");
    if (!(t.success_radius > 0.0)) throw ConfigError(where + ": success_radius must be positive");
    if (t.horizon < 1) throw ConfigError(where + ": horizon must be at least 1");
    if (!(t.action_bound > 0.0)) throw ConfigError(where + ": action_bound must be positive");
    if (t.start_radius < 0.0) throw ConfigError(where + ": start_radius must be non-negative");
    if (!(t.success_radius < t.goal_radius - t.start_radius))
      throw ConfigError(where + ": success_radius must be smaller than the initial goal distance");
    TaskSpec spec;
    spec.id = t.id;
    const double a = t.goal_angle_deg * std::numbers::pi / 180.0;
    spec.goal = Eigen::Vector2d(t.goal_radius * std::cos(a), t.goal_radius * std::sin(a));
    spec.action_rotation = rotation_matrix(t.rotation_deg);
    spec.reward_scale = t.reward_scale;
    spec.success_radius = t.success_radius;
    spec.horizon = t.horizon;
    spec.action_bound = t.action_bound;
    spec.start_radius = t.start_radius;
    suite.push_back(spec);
  }
  return suite;
}

}  // namespace recall::envs
