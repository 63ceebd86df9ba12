#pragma once

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "recall/agent/agent.hpp"
#include "recall/envs/point_mass.hpp"
#include "recall/errors.hpp"

namespace recall::runner {

/// One problem found while parsing a config file. `line` is 1-based, 0 when
/// unknown.
struct ConfigIssue {
  std::string key;
  int line = 0;
  std::string reason;

  std::string describe() const {
    std::string s = line > 0 ? "line " + std::to_string(line) + ": " : "";
    return s + (key.empty() ? "" : "'" + key + "': ") + reason;
  }
};

class ConfigParseError : public ConfigError {
 public:
  explicit ConfigParseError(std::vector<ConfigIssue> issues)
      : ConfigError(join(issues)), issues_(std::move(issues)) {}
  const std::vector<ConfigIssue>& issues() const { return issues_; }

 private:
  static std::string join(const std::vector<ConfigIssue>& issues) {
    std::string s = "invalid config:";
    for (const auto& i : issues) s += "\n  " + i.describe();
    return s;
  }
  std::vector<ConfigIssue> issues_;
};

enum class Precision { f32, f64 };

/// A named agent configuration to run. `none` is Perfect Memory with
/// best-return exploration, the bare replay ablation.
struct VariantSpec {
  std::string name;
  agent::AgentConfig agent;
};

struct RunSection {
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::string output_dir = "results";
  int parallelism = 1;
  Precision precision = Precision::f32;
  bool save_checkpoints = true;
  int bootstrap_resamples = 10'000;
  double ci_level = 0.9;
};

struct SequenceSection {
  std::vector<int> task_ids;
  std::int64_t steps_per_task = 30'000;
  std::int64_t eval_interval = 1'000;
  int eval_episodes = 20;
};

struct ExperimentConfig {
  envs::SuiteConfig suite;
  SequenceSection sequence;
  agent::AgentConfig agent;  // base that every variant starts from
  std::vector<VariantSpec> variants;
  RunSection run;

  /// The suite entries named by `ids`, in that order.
  std::vector<envs::TaskSpec> tasks_for(const std::vector<int>& ids) const {
    const auto all = envs::make_task_suite(suite);
    std::vector<envs::TaskSpec> out;
    for (int id : ids) {
      const auto it = std::find_if(all.begin(), all.end(), [&](const envs::TaskSpec& t) { return t.id == id; });
      if (it == all.end()) throw ConfigError("sequence: unknown task id " + std::to_string(id));
      out.push_back(*it);
    }
    return out;
  }

  agent::TaskSequence make_sequence(const std::vector<int>& ids) const {
    agent::TaskSequence s;
    s.tasks = tasks_for(ids);
    s.steps_per_task = sequence.steps_per_task;
    s.eval_interval = sequence.eval_interval;
    s.eval_episodes = sequence.eval_episodes;
    return s;
  }

  agent::TaskSequence make_sequence() const { return make_sequence(sequence.task_ids); }

  const VariantSpec& variant(const std::string& name) const {
    for (const auto& v : variants)
      if (v.name == name) return v;
    throw ConfigError("no variant named '" + name + "'");
  }
};

namespace detail {

inline std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

inline std::optional<std::string> closest(const std::string& key, const std::vector<std::string>& known) {
  std::optional<std::string> best;
  std::size_t best_d = std::max<std::size_t>(2, key.size() / 3) + 1;
  for (const auto& k : known) {
    const std::size_t d = edit_distance(key, k);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

inline int line_of(const YAML::Node& n) { return n.Mark().is_null() ? 0 : n.Mark().line + 1; }

inline std::string type_name(YAML::NodeType::value t) {
  switch (t) {
    case YAML::NodeType::Map: return "a mapping";
    case YAML::NodeType::Sequence: return "a list";
    case YAML::NodeType::Scalar: return "a scalar";
    default: return "nothing";
  }
}

/// Walks a mapping node, dispatching each key to a handler and recording
/// unknown keys and bad values instead of stopping at the first one.
class Fields {
 public:
  using Handler = std::function<void(const YAML::Node&, const std::string& path)>;

  Fields(std::vector<ConfigIssue>& issues, std::string prefix) : issues_(issues), prefix_(std::move(prefix)) {}

  Fields& on(const std::string& key, Handler h) {
    handlers_.emplace(key, std::move(h));
    order_.push_back(key);
    return *this;
  }

  template <typename V>
  Fields& value(const std::string& key, V& out) {
    return on(key, [this, &out](const YAML::Node& n, const std::string& path) { read(n, path, out); });
  }

  template <typename V>
  Fields& list(const std::string& key, std::vector<V>& out) {
    return on(key, [this, &out](const YAML::Node& n, const std::string& path) {
      if (!n.IsSequence()) return fail(n, path, "expected a list, got " + type_name(n.Type()));
      std::vector<V> items;
      for (std::size_t k = 0; k < n.size(); ++k) {
        V v{};
        if (!read(n[k], path + "[" + std::to_string(k) + "]", v)) return;
        items.push_back(v);
      }
      out = std::move(items);
    });
  }

  void apply(const YAML::Node& node) {
    if (!node || node.IsNull()) return;
    if (!node.IsMap()) return fail(node, prefix_.empty() ? "<root>" : prefix_, "expected a mapping, got " + type_name(node.Type()));
    for (const auto& kv : node) {
      const auto key = kv.first.as<std::string>();
      const std::string path = prefix_.empty() ? key : prefix_ + "." + key;
      const auto it = handlers_.find(key);
      if (it == handlers_.end()) {
        std::string reason = "unknown key";
        if (const auto s = closest(key, order_)) reason += "; did you mean '" + *s + "'?";
        issues_.push_back({path, line_of(kv.first), reason});
        continue;
      }
      it->second(kv.second, path);
    }
  }

  void fail(const YAML::Node& n, const std::string& path, const std::string& reason) {
    issues_.push_back({path, line_of(n), reason});
  }

  template <typename V>
  bool read(const YAML::Node& n, const std::string& path, V& out) {
    if (!n.IsScalar()) {
      fail(n, path, "expected a value, got " + type_name(n.Type()));
      return false;
    }
    try {
      if constexpr (std::is_same_v<V, bool>) {
        out = n.as<bool>();
      } else if constexpr (std::is_integral_v<V>) {
        // Reject 1.5 and 1e3 for integer fields instead of truncating.
        const auto text = n.Scalar();
        if (text.find_first_of(".eE") != std::string::npos) throw YAML::BadConversion(n.Mark());
        if constexpr (std::is_unsigned_v<V>) {
          if (!text.empty() && text[0] == '-') throw YAML::BadConversion(n.Mark());
        }
        out = n.as<V>();
      } else {
        out = n.as<V>();
      }
      return true;
    } catch (const YAML::BadConversion&) {
      std::string want = std::is_same_v<V, bool> ? "true or false"
                         : std::is_integral_v<V> ? "an integer"
                         : std::is_floating_point_v<V> ? "a number"
                                                       : "a string";
      fail(n, path, "expected " + want + ", got '" + n.Scalar() + "'");
      return false;
    }
  }

 private:
  std::vector<ConfigIssue>& issues_;
  std::string prefix_;
  std::map<std::string, Handler> handlers_;
  std::vector<std::string> order_;
};

inline std::optional<agent::Variant> variant_from(const std::string& s) {
  if (s == "finetune") return agent::Variant::finetune;
  if (s == "perfect_memory") return agent::Variant::perfect_memory;
  if (s == "tn") return agent::Variant::tn;
  if (s == "pd") return agent::Variant::pd;
  if (s == "tn_pd") return agent::Variant::tn_pd;
  return std::nullopt;
}

inline std::string variant_name(agent::Variant v) {
  switch (v) {
    case agent::Variant::finetune: return "finetune";
    case agent::Variant::perfect_memory: return "perfect_memory";
    case agent::Variant::tn: return "tn";
    case agent::Variant::pd: return "pd";
    case agent::Variant::tn_pd: return "tn_pd";
  }
  return "?";
}

inline const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> names{"finetune", "perfect_memory", "none", "tn", "pd", "tn_pd"};
  return names;
}

/// Sets the variant and the switches implied by a preset name.
inline bool apply_preset(const std::string& name, agent::AgentConfig& a) {
  if (name == "none") {
    a.variant = agent::Variant::perfect_memory;
    a.best_return_exploration = true;
    return true;
  }
  const auto v = variant_from(name);
  if (!v) return false;
  a.variant = *v;
  return true;
}

inline void agent_fields(Fields& f, agent::AgentConfig& a, std::vector<ConfigIssue>& issues, const std::string& prefix) {
  f.on("variant", [&a, &f](const YAML::Node& n, const std::string& path) {
    std::string s;
    if (!f.read(n, path, s)) return;
    if (!apply_preset(s, a)) {
      std::string reason = "unknown variant '" + s + "'";
      if (const auto c = closest(s, variant_names())) reason += "; did you mean '" + *c + "'?";
      f.fail(n, path, reason);
    }
  });
  f.value("lambda", a.lambda);
  f.value("exploration_steps", a.exploration_steps);
  f.on("best_return_exploration", [&a, &f](const YAML::Node& n, const std::string& path) {
    if (n.IsScalar() && n.Scalar() == "auto") {
      a.best_return_exploration.reset();
      return;
    }
    bool b = false;
    if (f.read(n, path, b)) a.best_return_exploration = b;
  });
  f.value("best_return_episodes", a.best_return_episodes);
  f.on("replay_mode", [&a, &f](const YAML::Node& n, const std::string& path) {
    std::string s;
    if (!f.read(n, path, s)) return;
    if (s == "offline")
      a.replay_mode = agent::ReplayMode::offline;
    else if (s == "online")
      a.replay_mode = agent::ReplayMode::online;
    else
      f.fail(n, path, "expected offline or online, got '" + s + "'");
  });
  f.value("shared_actor", a.shared_actor);
  f.value("shared_critic", a.shared_critic);
  f.value("replay_ratio", a.replay_ratio);
  f.value("distill_batch", a.distill_batch);
  f.list("actor_trunk", a.actor_trunk);
  f.list("critic_trunk", a.critic_trunk);
  f.list("critic_head", a.critic_head);
  f.on("sac", [&a, &issues, prefix](const YAML::Node& n, const std::string&) {
    Fields s(issues, prefix + "sac");
    auto& h = a.sac;
    s.value("gamma", h.gamma).value("tau", h.tau).value("lr", h.lr).value("batch", h.batch);
    s.value("target_update_interval", h.target_update_interval).value("target_output_std", h.target_output_std);
    s.value("twin_critics", h.twin_critics).value("initial_log_alpha", h.initial_log_alpha);
    s.value("alpha_lr", h.alpha_lr).value("learn_alpha", h.learn_alpha).value("per_task_alpha", h.per_task_alpha);
    s.on("target_entropy", [&h, &s](const YAML::Node& v, const std::string& path) {
      if (v.IsScalar() && v.Scalar() == "auto") {
        h.target_entropy.reset();
        return;
      }
      double d = 0.0;
      if (s.read(v, path, d)) h.target_entropy = d;
    });
    s.apply(n);
  });
  f.on("popart", [&a, &issues, prefix](const YAML::Node& n, const std::string&) {
    Fields p(issues, prefix + "popart");
    p.value("beta", a.popart.beta).value("sigma_min", a.popart.sigma_min).value("sigma_max", a.popart.sigma_max);
    p.apply(n);
  });
  f.on("replay", [&a, &issues, prefix](const YAML::Node& n, const std::string&) {
    Fields r(issues, prefix + "replay");
    r.value("new_capacity", a.replay.new_capacity);
    r.value("old_capacity_per_task", a.replay.old_capacity_per_task);
    r.value("online_capacity_per_task", a.replay.online_capacity_per_task);
    r.apply(n);
  });
}

inline void task_fields(Fields& f, envs::TaskConfig& t) {
  f.value("id", t.id).value("goal_angle_deg", t.goal_angle_deg).value("goal_radius", t.goal_radius);
  f.value("rotation_deg", t.rotation_deg).value("reward_scale", t.reward_scale);
  f.value("success_radius", t.success_radius).value("horizon", t.horizon);
  f.value("action_bound", t.action_bound).value("start_radius", t.start_radius);
}

inline std::string number(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, r.ptr);
  // Keep floats recognizable as floats after a round trip.
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

}  // namespace detail

/// Parses and validates an experiment config. Throws ConfigParseError with
/// every problem found, each with its key path and line.
inline ExperimentConfig parse_config(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigParseError({{"", e.mark.line + 1, "YAML syntax error: " + e.msg}});
  }
  ExperimentConfig cfg;
  std::vector<ConfigIssue> issues;
  std::vector<YAML::Node> variant_nodes;
  YAML::Node suite_node, variants_node, seq_node;

  detail::Fields top(issues, "");
  top.on("suite", [&](const YAML::Node& n, const std::string&) { suite_node = n; });
  top.on("sequence", [&](const YAML::Node& n, const std::string&) { seq_node = n; });
  top.on("agent", [&](const YAML::Node& n, const std::string&) {
    detail::Fields f(issues, "agent");
    detail::agent_fields(f, cfg.agent, issues, "agent.");
    f.apply(n);
  });
  top.on("variants", [&](const YAML::Node& n, const std::string&) { variants_node = n; });
  top.on("run", [&](const YAML::Node& n, const std::string&) {
    detail::Fields f(issues, "run");
    auto& r = cfg.run;
    f.list("seeds", r.seeds).value("output_dir", r.output_dir).value("parallelism", r.parallelism);
    f.value("save_checkpoints", r.save_checkpoints).value("bootstrap_resamples", r.bootstrap_resamples);
    f.value("ci_level", r.ci_level);
    f.on("precision", [&](const YAML::Node& v, const std::string& path) {
      std::string s;
      if (!f.read(v, path, s)) return;
      if (s == "float")
        r.precision = Precision::f32;
      else if (s == "double")
        r.precision = Precision::f64;
      else
        f.fail(v, path, "expected float or double, got '" + s + "'");
    });
    f.apply(n);
  });
  top.apply(root);

  // Suite: either the literal `default` or a list of task mappings, with
  // optional shared defaults applied underneath each task.
  bool suite_ok = true;
  if (!suite_node || suite_node.IsNull() || (suite_node.IsScalar() && suite_node.Scalar() == "default")) {
    cfg.suite = envs::default_suite_config();
  } else {
    YAML::Node defaults, tasks;
    detail::Fields f(issues, "suite");
    f.on("defaults", [&](const YAML::Node& n, const std::string&) { defaults = n; });
    f.on("tasks", [&](const YAML::Node& n, const std::string&) { tasks = n; });
    f.apply(suite_node);
    envs::TaskConfig base;
    {
      detail::Fields d(issues, "suite.defaults");
      detail::task_fields(d, base);
      d.apply(defaults);
    }
    if (!tasks || !tasks.IsSequence()) {
      issues.push_back({"suite.tasks", detail::line_of(suite_node), "expected a list of tasks"});
      suite_ok = false;
    } else {
      for (std::size_t k = 0; k < tasks.size(); ++k) {
        envs::TaskConfig t = base;
        t.id = static_cast<int>(k);
        detail::Fields tf(issues, "suite.tasks[" + std::to_string(k) + "]");
        detail::task_fields(tf, t);
        tf.apply(tasks[k]);
        cfg.suite.tasks.push_back(t);
      }
    }
  }
  if (suite_ok) try {
      envs::make_task_suite(cfg.suite);
    } catch (const ConfigError& e) {
      issues.push_back({"suite", detail::line_of(suite_node), e.what()});
      suite_ok = false;
    }

  {
    detail::Fields f(issues, "sequence");
    auto& s = cfg.sequence;
    f.list("tasks", s.task_ids).value("steps_per_task", s.steps_per_task);
    f.value("eval_interval", s.eval_interval).value("eval_episodes", s.eval_episodes);
    f.apply(seq_node);
    if (!seq_node || !seq_node["tasks"])
      issues.push_back({"sequence.tasks", detail::line_of(seq_node), "required: the ordered task ids to train on"});
    std::set<int> known;
    for (const auto& t : cfg.suite.tasks) known.insert(t.id);
    if (suite_ok)
      for (int id : s.task_ids)
        if (!known.count(id))
          issues.push_back({"sequence.tasks", detail::line_of(seq_node["tasks"]), "task id " + std::to_string(id) + " is not in the suite"});
    try {
      agent::TaskSequence probe;
      probe.steps_per_task = s.steps_per_task;
      probe.eval_interval = s.eval_interval;
      probe.eval_episodes = s.eval_episodes;
      probe.validate();
    } catch (const ConfigError& e) {
      issues.push_back({"sequence", detail::line_of(seq_node), e.what()});
    }
  }

  // Variants: names, or mappings with a name plus agent overrides.
  if (!variants_node || variants_node.IsNull()) {
    cfg.variants.push_back({detail::variant_name(cfg.agent.variant), cfg.agent});
  } else if (!variants_node.IsSequence()) {
    issues.push_back({"variants", detail::line_of(variants_node), "expected a list of variant names or mappings"});
  } else {
    for (std::size_t k = 0; k < variants_node.size(); ++k) {
      const YAML::Node v = variants_node[k];
      const std::string path = "variants[" + std::to_string(k) + "]";
      VariantSpec spec{"", cfg.agent};
      if (v.IsScalar()) {
        spec.name = v.Scalar();
        if (!detail::apply_preset(spec.name, spec.agent)) {
          std::string reason = "unknown variant '" + spec.name + "'";
          if (const auto c = detail::closest(spec.name, detail::variant_names())) reason += "; did you mean '" + *c + "'?";
          issues.push_back({path, detail::line_of(v), reason});
          continue;
        }
      } else if (v.IsMap()) {
        if (!v["name"]) {
          issues.push_back({path + ".name", detail::line_of(v), "required"});
          continue;
        }
        spec.name = v["name"].as<std::string>();
        // A preset name sets the variant first; explicit keys override it.
        detail::apply_preset(spec.name, spec.agent);
        detail::Fields f(issues, path);
        f.on("name", [](const YAML::Node&, const std::string&) {});
        detail::agent_fields(f, spec.agent, issues, path + ".");
        f.apply(v);
      } else {
        issues.push_back({path, detail::line_of(v), "expected a name or a mapping"});
        continue;
      }
      for (const auto& other : cfg.variants)
        if (other.name == spec.name) issues.push_back({path, detail::line_of(v), "duplicate variant name '" + spec.name + "'"});
      if (spec.name.empty() || spec.name.find_first_of("/\\ ") != std::string::npos || spec.name == "." || spec.name == "..")
        issues.push_back({path + ".name", detail::line_of(v), "names must be non-empty and contain no slashes or spaces"});
      cfg.variants.push_back(std::move(spec));
    }
    if (variants_node.size() == 0) issues.push_back({"variants", detail::line_of(variants_node), "list is empty"});
  }
  for (std::size_t k = 0; k < cfg.variants.size(); ++k) try {
      cfg.variants[k].agent.validate();
    } catch (const ConfigError& e) {
      issues.push_back({"variants[" + std::to_string(k) + "]", detail::line_of(variants_node), e.what()});
    }

  const auto& r = cfg.run;
  if (r.seeds.empty()) issues.push_back({"run.seeds", 0, "need at least one seed"});
  if (std::set<std::uint64_t>(r.seeds.begin(), r.seeds.end()).size() != r.seeds.size())
    issues.push_back({"run.seeds", 0, "seeds must be distinct"});
  if (r.parallelism < 1) issues.push_back({"run.parallelism", 0, "must be at least 1"});
  if (r.bootstrap_resamples < 1) issues.push_back({"run.bootstrap_resamples", 0, "must be positive"});
  if (!(r.ci_level > 0.0 && r.ci_level < 1.0)) issues.push_back({"run.ci_level", 0, "must lie in (0, 1)"});

  if (!issues.empty()) throw ConfigParseError(std::move(issues));
  return cfg;
}

namespace detail {

inline void emit_agent(YAML::Emitter& e, const agent::AgentConfig& a) {
  auto ints = [&](const char* key, const std::vector<int>& v) {
    e << YAML::Key << key << YAML::Value << YAML::Flow << YAML::BeginSeq;
    for (int x : v) e << x;
    e << YAML::EndSeq;
  };
  e << YAML::Key << "variant" << YAML::Value << variant_name(a.variant);
  e << YAML::Key << "lambda" << YAML::Value << number(a.lambda);
  e << YAML::Key << "exploration_steps" << YAML::Value << a.exploration_steps;
  // Echo the effective value so nothing depends on a hidden default.
  e << YAML::Key << "best_return_exploration" << YAML::Value << a.uses_best_return();
  e << YAML::Key << "best_return_episodes" << YAML::Value << a.best_return_episodes;
  e << YAML::Key << "replay_mode" << YAML::Value << (a.replay_mode == agent::ReplayMode::online ? "online" : "offline");
  e << YAML::Key << "shared_actor" << YAML::Value << a.shared_actor;
  e << YAML::Key << "shared_critic" << YAML::Value << a.shared_critic;
  e << YAML::Key << "replay_ratio" << YAML::Value << number(a.replay_ratio);
  e << YAML::Key << "distill_batch" << YAML::Value << a.effective_distill_batch();
  ints("actor_trunk", a.actor_trunk);
  ints("critic_trunk", a.critic_trunk);
  ints("critic_head", a.critic_head);
  const auto& h = a.sac;
  e << YAML::Key << "sac" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "gamma" << YAML::Value << number(h.gamma);
  e << YAML::Key << "tau" << YAML::Value << number(h.tau);
  e << YAML::Key << "lr" << YAML::Value << number(h.lr);
  e << YAML::Key << "batch" << YAML::Value << h.batch;
  e << YAML::Key << "target_update_interval" << YAML::Value << h.target_update_interval;
  e << YAML::Key << "target_output_std" << YAML::Value << number(h.target_output_std);
  e << YAML::Key << "target_entropy" << YAML::Value
    << number(h.target_entropy.value_or(sac::target_entropy_from_std(envs::kActDim, h.target_output_std)));
  e << YAML::Key << "twin_critics" << YAML::Value << h.twin_critics;
  e << YAML::Key << "initial_log_alpha" << YAML::Value << number(h.initial_log_alpha);
  e << YAML::Key << "alpha_lr" << YAML::Value << number(h.alpha_lr);
  e << YAML::Key << "learn_alpha" << YAML::Value << h.learn_alpha;
  e << YAML::Key << "per_task_alpha" << YAML::Value << h.per_task_alpha;
  e << YAML::EndMap;
  e << YAML::Key << "popart" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "beta" << YAML::Value << number(a.popart.beta);
  e << YAML::Key << "sigma_min" << YAML::Value << number(a.popart.sigma_min);
  e << YAML::Key << "sigma_max" << YAML::Value << number(a.popart.sigma_max);
  e << YAML::EndMap;
  e << YAML::Key << "replay" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "new_capacity" << YAML::Value << a.replay.new_capacity;
  e << YAML::Key << "old_capacity_per_task" << YAML::Value << a.replay.old_capacity_per_task;
  e << YAML::Key << "online_capacity_per_task" << YAML::Value << a.replay.online_capacity_per_task;
  e << YAML::EndMap;
}

}  // namespace detail

/// Canonical YAML echo of every effective setting. Parsing the echo gives
/// back an equivalent config whose echo is the same text.
inline std::string normalize(const ExperimentConfig& cfg) {
  YAML::Emitter e;
  e << YAML::BeginMap;
  e << YAML::Key << "suite" << YAML::Value << YAML::BeginMap << YAML::Key << "tasks" << YAML::Value << YAML::BeginSeq;
  for (const auto& t : cfg.suite.tasks) {
    e << YAML::BeginMap;
    e << YAML::Key << "id" << YAML::Value << t.id;
    e << YAML::Key << "goal_angle_deg" << YAML::Value << detail::number(t.goal_angle_deg);
    e << YAML::Key << "goal_radius" << YAML::Value << detail::number(t.goal_radius);
    e << YAML::Key << "rotation_deg" << YAML::Value << detail::number(t.rotation_deg);
    e << YAML::Key << "reward_scale" << YAML::Value << detail::number(t.reward_scale);
    e << YAML::Key << "success_radius" << YAML::Value << detail::number(t.success_radius);
    e << YAML::Key << "horizon" << YAML::Value << t.horizon;
    e << YAML::Key << "action_bound" << YAML::Value << detail::number(t.action_bound);
    e << YAML::Key << "start_radius" << YAML::Value << detail::number(t.start_radius);
    e << YAML::EndMap;
  }
  e << YAML::EndSeq << YAML::EndMap;

  const auto& s = cfg.sequence;
  e << YAML::Key << "sequence" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "tasks" << YAML::Value << YAML::Flow << s.task_ids;
  e << YAML::Key << "steps_per_task" << YAML::Value << s.steps_per_task;
  e << YAML::Key << "eval_interval" << YAML::Value << s.eval_interval;
  e << YAML::Key << "eval_episodes" << YAML::Value << s.eval_episodes;
  e << YAML::EndMap;

  // Variants are fully expanded, so the base agent section is redundant.
  e << YAML::Key << "variants" << YAML::Value << YAML::BeginSeq;
  for (const auto& v : cfg.variants) {
    e << YAML::BeginMap << YAML::Key << "name" << YAML::Value << v.name;
    detail::emit_agent(e, v.agent);
    e << YAML::EndMap;
  }
  e << YAML::EndSeq;

  const auto& r = cfg.run;
  e << YAML::Key << "run" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "seeds" << YAML::Value << YAML::Flow << r.seeds;
  e << YAML::Key << "output_dir" << YAML::Value << r.output_dir;
  e << YAML::Key << "parallelism" << YAML::Value << r.parallelism;
  e << YAML::Key << "precision" << YAML::Value << (r.precision == Precision::f32 ? "float" : "double");
  e << YAML::Key << "save_checkpoints" << YAML::Value << r.save_checkpoints;
  e << YAML::Key << "bootstrap_resamples" << YAML::Value << r.bootstrap_resamples;
  e << YAML::Key << "ci_level" << YAML::Value << detail::number(r.ci_level);
  e << YAML::EndMap;
  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

}  // namespace recall::runner
