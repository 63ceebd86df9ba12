#pragma once

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <random>
#include <set>
#include <thread>

#include "json.hpp"
#include "recall/agent/agent.hpp"
#include "recall/runner/config.hpp"
#include "recall/runner/files.hpp"

#ifndef RECALL_VERSION
#define RECALL_VERSION "unknown"
#endif

namespace recall::runner {

using json = nlohmann::json;

inline constexpr const char* kOutputRootEnv = "RECALL_OUTPUT_ROOT";

/// Command-line adjustments applied on top of a parsed config.
struct RunOptions {
  std::uint64_t seed_offset = 0;
  std::vector<std::string> variants;  // empty: all
  std::optional<std::string> out;
  bool quiet = false;
};

class RunnerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// `--out` wins; otherwise the config's output_dir, placed under the
/// output-root environment variable when that is set and the path is
/// relative.
inline fs::path resolve_output_dir(const ExperimentConfig& cfg, const RunOptions& opt) {
  if (opt.out) return fs::path(*opt.out);
  fs::path p(cfg.run.output_dir);
  if (p.is_relative())
    if (const char* root = std::getenv(kOutputRootEnv); root && *root) return fs::path(root) / p;
  return p;
}

inline std::vector<const VariantSpec*> selected_variants(const ExperimentConfig& cfg, const RunOptions& opt) {
  std::vector<const VariantSpec*> out;
  if (opt.variants.empty()) {
    for (const auto& v : cfg.variants) out.push_back(&v);
    return out;
  }
  for (const auto& name : opt.variants) out.push_back(&cfg.variant(name));
  return out;
}

struct Job {
  std::string variant;
  agent::AgentConfig agent;
  std::vector<int> task_ids;
  std::uint64_t seed = 0;
  fs::path dir;
};

struct JobResult {
  Job job;
  bool ok = false;
  std::string error;
  std::optional<metrics::EvalLog> log;
};

/// Runs `fn` over all jobs with at most `parallelism` worker threads. Each
/// job's exceptions are caught and reported in its own result.
inline std::vector<JobResult> run_jobs(const std::vector<Job>& jobs, int parallelism,
                                       const std::function<metrics::EvalLog(const Job&)>& fn, bool quiet) {
  std::vector<JobResult> results(jobs.size());
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> done{0};
  std::mutex print;
  auto worker = [&] {
    for (std::size_t k = next++; k < jobs.size(); k = next++) {
      auto& r = results[k];
      r.job = jobs[k];
      try {
        r.log = fn(jobs[k]);
        r.ok = true;
      } catch (const std::exception& e) {
        r.error = e.what();
      }
      const std::size_t n = ++done;
      if (!quiet) {
        std::lock_guard lock(print);
        std::cerr << "[" << n << "/" << jobs.size() << "] " << jobs[k].dir.string() << ": "
                  << (r.ok ? "ok" : "FAILED: " + r.error) << "\n";
      }
    }
  };
  const int threads = std::max(1, std::min<int>(parallelism, static_cast<int>(jobs.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return results;
}

inline std::string seq_label(const std::vector<int>& ids) {
  std::string s;
  for (std::size_t k = 0; k < ids.size(); ++k) s += (k ? "-" : "") + std::to_string(ids[k]);
  return s;
}

inline fs::path reference_file(const fs::path& out, const std::string& variant, std::uint64_t seed, int task_id) {
  return out / "reference" / variant / ("seed_" + std::to_string(seed)) / ("task_" + std::to_string(task_id) + ".csv");
}

/// From-scratch curves for every task of the sequence, if all exist.
inline std::optional<metrics::ReferenceCurves> load_reference(const fs::path& out, const std::string& variant,
                                                              std::uint64_t seed, const std::vector<int>& ids,
                                                              std::int64_t window) {
  metrics::ReferenceCurves refs;
  refs.window = window;
  for (int id : ids) {
    const auto p = reference_file(out, variant, seed, id);
    if (!fs::exists(p)) return std::nullopt;
    const auto log = parse_eval_log_csv(read_file(p), {id}, window);
    refs.curves.push_back(metrics::training_curve(log, 0));
  }
  return refs;
}

struct RunMetrics {
  double average_performance = 0.0;
  double forgetting = 0.0;
  std::optional<double> forward_transfer;
  std::vector<std::optional<double>> forward_transfer_per_task;
};

inline RunMetrics compute_metrics(const metrics::EvalLog& log, const std::optional<metrics::ReferenceCurves>& refs) {
  RunMetrics m;
  m.average_performance = metrics::average_performance(log, static_cast<std::int64_t>(log.tasks) * log.steps_per_task);
  m.forgetting = log.steps_per_task > 0 ? metrics::forgetting(log) : 0.0;
  if (refs && log.steps_per_task > 0) {
    const auto ft = metrics::forward_transfer(log, *refs);
    m.forward_transfer = ft.mean;
    m.forward_transfer_per_task = ft.per_task;
  }
  return m;
}

inline std::string metrics_csv(const metrics::EvalLog& log, const RunMetrics& m, const std::vector<int>& ids) {
  std::string out = "metric,task_id,value\n";
  out += "average_performance,," + fmt(m.average_performance) + "\n";
  out += "forgetting,," + fmt(m.forgetting) + "\n";
  out += "forward_transfer,," + fmt(m.forward_transfer) + "\n";
  const auto& last = log.checkpoints.back();
  for (std::size_t k = 0; k < ids.size(); ++k) out += "final_success," + std::to_string(ids[k]) + "," + fmt(last.success[k]) + "\n";
  for (std::size_t k = 0; k < m.forward_transfer_per_task.size(); ++k)
    out += "forward_transfer," + std::to_string(ids[k]) + "," + fmt(m.forward_transfer_per_task[k]) + "\n";
  return out;
}

inline std::string run_chart(const metrics::EvalLog& log, const std::vector<int>& ids, const std::string& title) {
  std::vector<Series> series;
  for (std::size_t k = 0; k < ids.size(); ++k) {
    Series s{"task " + std::to_string(ids[k]), {}, {}};
    for (const auto& c : log.checkpoints) {
      s.steps.push_back(c.step);
      s.values.push_back(c.success[k]);
    }
    series.push_back(s);
  }
  Series avg{"average", {}, {}};
  for (const auto& c : log.checkpoints) {
    double sum = 0.0;
    for (double p : c.success) sum += p;
    avg.steps.push_back(c.step);
    avg.values.push_back(sum / static_cast<double>(c.success.size()));
  }
  series.push_back(avg);
  return svg_chart(title, series, log.tasks * log.steps_per_task, log.steps_per_task);
}

/// Trains one (variant, sequence, seed) and writes its files into job.dir.
template <typename T>
metrics::EvalLog execute(const ExperimentConfig& cfg, const Job& job, const fs::path& out_root, bool checkpoint) {
  const auto seq = cfg.make_sequence(job.task_ids);
  agent::Agent<T> a(job.agent, seq, job.seed);
  const auto log = agent::run_sequence(a);
  write_file(job.dir / "eval_log.csv", eval_log_csv(log, job.task_ids));
  if (checkpoint) {
    std::ostringstream bin(std::ios::binary);
    a.save(bin);
    write_file(job.dir / "checkpoint.bin", bin.str());
  }
  if (seq.steps_per_task > 0) {
    const auto m = compute_metrics(log, load_reference(out_root, job.variant, job.seed, job.task_ids, seq.steps_per_task));
    write_file(job.dir / "metrics.csv", metrics_csv(log, m, job.task_ids));
    write_file(job.dir / "success.svg",
               run_chart(log, job.task_ids, job.variant + ", seed " + std::to_string(job.seed) + ", tasks " + seq_label(job.task_ids)));
  }
  return log;
}

inline json run_entry(const JobResult& r, const fs::path& out, const std::string& hash, const ExperimentConfig& cfg) {
  json j;
  j["variant"] = r.job.variant;
  j["seed"] = r.job.seed;
  j["tasks"] = r.job.task_ids;
  j["steps_per_task"] = cfg.sequence.steps_per_task;
  j["dir"] = fs::relative(r.job.dir, out).generic_string();
  j["config_hash"] = hash;
  j["version"] = RECALL_VERSION;
  j["precision"] = cfg.run.precision == Precision::f32 ? "float" : "double";
  j["status"] = r.ok ? "ok" : "failed";
  if (!r.ok) j["error"] = r.error;
  return j;
}

/// Executes the jobs, writing per-run manifests plus the top-level
/// manifest. Returns the results in job order.
inline std::vector<JobResult> execute_all(const ExperimentConfig& cfg, const std::vector<Job>& jobs, const fs::path& out,
                                          const std::string& kind, const RunOptions& opt) {
  const std::string normalized = normalize(cfg);
  const std::string hash = sha256_hex(normalized);
  fs::create_directories(out);
  write_file(out / "config.yaml", normalized);
  auto fn = [&](const Job& job) {
    const bool ckpt = cfg.run.save_checkpoints && kind != "reference";
    if (cfg.run.precision == Precision::f32) return execute<float>(cfg, job, out, ckpt);
    return execute<double>(cfg, job, out, ckpt);
  };
  auto results = run_jobs(jobs, cfg.run.parallelism, fn, opt.quiet);
  json manifest;
  manifest["kind"] = kind;
  manifest["version"] = RECALL_VERSION;
  manifest["config_hash"] = hash;
  manifest["config"] = "config.yaml";
  manifest["sequence"] = cfg.sequence.task_ids;
  manifest["steps_per_task"] = cfg.sequence.steps_per_task;
  manifest["bootstrap_resamples"] = cfg.run.bootstrap_resamples;
  manifest["ci_level"] = cfg.run.ci_level;
  manifest["runs"] = json::array();
  int failed = 0;
  for (const auto& r : results) {
    auto e = run_entry(r, out, hash, cfg);
    write_file(r.job.dir / "run.json", e.dump(2) + "\n");
    manifest["runs"].push_back(e);
    failed += !r.ok;
  }
  manifest["failed"] = failed;
  const std::string name = kind == "run" ? "manifest.json" : kind + "_manifest.json";
  write_file(out / name, manifest.dump(2) + "\n");
  return results;
}

inline std::vector<std::uint64_t> effective_seeds(const ExperimentConfig& cfg, const RunOptions& opt) {
  std::vector<std::uint64_t> s;
  for (auto x : cfg.run.seeds) s.push_back(x + opt.seed_offset);
  return s;
}

inline fs::path run_dir(const fs::path& out, const std::string& variant, std::uint64_t seed) {
  return out / "runs" / variant / ("seed_" + std::to_string(seed));
}

struct ReportRow {
  std::string variant;
  std::string sequence;
  int seeds = 0;
  double p_mean = 0.0, f_mean = 0.0;
  std::optional<double> ft_mean;
  std::optional<metrics::Interval> p_ci, f_ci, ft_ci;
  int ft_seeds = 0;
};

struct Report {
  std::vector<ReportRow> rows;
  std::vector<std::string> notes;
  std::string csv;
  std::string text;
};

/// Per-variant mean and bootstrap CI of P(N delta), F and FT over seeds,
/// from the run manifests found under `dir`. Writes summary.csv,
/// summary.txt and curves.svg there.
inline Report report(const fs::path& dir) {
  if (!fs::exists(dir / "runs")) throw RunnerError("no runs found in " + dir.string());
  int resamples = 10'000;
  double level = 0.9;
  if (fs::exists(dir / "manifest.json")) {
    const auto m = json::parse(read_file(dir / "manifest.json"));
    resamples = m.value("bootstrap_resamples", resamples);
    level = m.value("ci_level", level);
  }
  std::vector<fs::path> manifests;
  for (const auto& e : fs::recursive_directory_iterator(dir / "runs"))
    if (e.is_regular_file() && e.path().filename() == "run.json") manifests.push_back(e.path());
  std::sort(manifests.begin(), manifests.end());

  struct Sample {
    std::uint64_t seed;
    RunMetrics m;
    metrics::EvalLog log;
  };
  std::map<std::pair<std::string, std::string>, std::vector<Sample>> groups;
  Report rep;
  for (const auto& p : manifests) {
    const auto j = json::parse(read_file(p));
    if (j.value("status", "") != "ok") {
      rep.notes.push_back("skipped failed run " + j.value("dir", p.parent_path().string()) + ": " + j.value("error", ""));
      continue;
    }
    const auto ids = j.at("tasks").get<std::vector<int>>();
    const auto delta = j.at("steps_per_task").get<std::int64_t>();
    const auto variant = j.at("variant").get<std::string>();
    const auto seed = j.at("seed").get<std::uint64_t>();
    auto log = parse_eval_log_csv(read_file(p.parent_path() / "eval_log.csv"), ids, delta);
    if (delta == 0) continue;
    Sample s{seed, compute_metrics(log, load_reference(dir, variant, seed, ids, delta)), std::move(log)};
    const auto key = std::make_pair(variant, seq_label(ids));
    groups[key].push_back(std::move(s));
  }
  if (groups.empty()) throw RunnerError("no runs found in " + dir.string());

  std::mt19937_64 rng(0x5eed);
  auto ci = [&](const std::vector<double>& v) -> std::optional<metrics::Interval> {
    if (v.size() < 2) return std::nullopt;
    return metrics::bootstrap_ci<std::mt19937_64>(v, level, resamples, rng);
  };
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  std::vector<Series> curves;
  std::int64_t x_max = 0, delta = 0;
  bool small = false;
  for (const auto& [key, samples] : groups) {
    ReportRow row;
    row.variant = key.first;
    row.sequence = key.second;
    row.seeds = static_cast<int>(samples.size());
    std::vector<double> p, f, ft;
    for (const auto& s : samples) {
      p.push_back(s.m.average_performance);
      f.push_back(s.m.forgetting);
      if (s.m.forward_transfer) ft.push_back(*s.m.forward_transfer);
    }
    row.p_mean = mean(p);
    row.f_mean = mean(f);
    row.p_ci = ci(p);
    row.f_ci = ci(f);
    row.ft_seeds = static_cast<int>(ft.size());
    if (!ft.empty()) {
      row.ft_mean = mean(ft);
      row.ft_ci = ci(ft);
    }
    small = small || samples.size() < 2;
    rep.rows.push_back(row);

    // Mean over seeds of the across-task average, on checkpoints all seeds share.
    Series s{key.first, {}, {}};
    const auto& first = samples.front().log;
    delta = first.steps_per_task;
    x_max = std::max<std::int64_t>(x_max, first.tasks * first.steps_per_task);
    for (const auto& c : first.checkpoints) {
      double sum = 0.0;
      int n = 0;
      for (const auto& smp : samples)
        if (const auto* cp = smp.log.at(c.step)) {
          double a = 0.0;
          for (double v : cp->success) a += v;
          sum += a / static_cast<double>(cp->success.size());
          ++n;
        }
      if (n == static_cast<int>(samples.size())) {
        s.steps.push_back(c.step);
        s.values.push_back(sum / n);
      }
    }
    curves.push_back(s);
  }
  if (small) rep.notes.push_back("fewer than 2 seeds for some rows: confidence intervals omitted there");
  bool any_ft = false;
  for (const auto& r : rep.rows) any_ft = any_ft || r.ft_mean;
  if (!any_ft) rep.notes.push_back("forward transfer needs reference curves: run the 'reference' command first");

  const std::string lvl = std::to_string(static_cast<int>(std::lround(level * 100)));
  rep.csv = "variant,sequence,seeds,P_mean,P_ci_low,P_ci_high,F_mean,F_ci_low,F_ci_high,FT_mean,FT_ci_low,FT_ci_high\n";
  auto lo = [](const std::optional<metrics::Interval>& i) { return i ? fmt(i->low) : std::string(); };
  auto hi = [](const std::optional<metrics::Interval>& i) { return i ? fmt(i->high) : std::string(); };
  std::vector<std::vector<std::string>> table{{"variant", "sequence", "seeds", "P", "P " + lvl + "% CI", "F",
                                               "F " + lvl + "% CI", "FT", "FT " + lvl + "% CI"}};
  auto short_num = [](double v) {
    std::ostringstream o;
    o << std::fixed << std::setprecision(3) << v;
    return o.str();
  };
  auto short_ci = [&](const std::optional<metrics::Interval>& i) {
    return i ? "[" + short_num(i->low) + ", " + short_num(i->high) + "]" : std::string("-");
  };
  for (const auto& r : rep.rows) {
    rep.csv += r.variant + "," + r.sequence + "," + std::to_string(r.seeds) + "," + fmt(r.p_mean) + "," + lo(r.p_ci) +
               "," + hi(r.p_ci) + "," + fmt(r.f_mean) + "," + lo(r.f_ci) + "," + hi(r.f_ci) + "," + fmt(r.ft_mean) + "," +
               lo(r.ft_ci) + "," + hi(r.ft_ci) + "\n";
    table.push_back({r.variant, r.sequence, std::to_string(r.seeds), short_num(r.p_mean), short_ci(r.p_ci),
                     short_num(r.f_mean), short_ci(r.f_ci), r.ft_mean ? short_num(*r.ft_mean) : "-", short_ci(r.ft_ci)});
  }
  rep.text = aligned(table);
  for (const auto& n : rep.notes) rep.text += "note: " + n + "\n";
  write_file(dir / "summary.csv", rep.csv);
  write_file(dir / "summary.txt", rep.text);
  write_file(dir / "curves.svg", svg_chart("average success over tasks", curves, x_max, delta));
  return rep;
}

struct ExperimentResult {
  fs::path out;
  std::vector<JobResult> runs;
  std::optional<Report> summary;
  int failed() const {
    int n = 0;
    for (const auto& r : runs) n += !r.ok;
    return n;
  }
};

/// One continual run per (variant, seed) on the configured sequence.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opt = {}) {
  ExperimentResult res;
  res.out = resolve_output_dir(cfg, opt);
  std::vector<Job> jobs;
  for (const auto* v : selected_variants(cfg, opt))
    for (auto seed : effective_seeds(cfg, opt))
      jobs.push_back({v->name, v->agent, cfg.sequence.task_ids, seed, run_dir(res.out, v->name, seed)});
  res.runs = execute_all(cfg, jobs, res.out, "run", opt);
  if (res.failed() < static_cast<int>(res.runs.size()) && cfg.sequence.steps_per_task > 0) res.summary = report(res.out);
  return res;
}

/// Single-task from-scratch runs of every task in the sequence, used as
/// forward-transfer references by later `run` and `report` calls.
inline ExperimentResult run_reference(const ExperimentConfig& cfg, const RunOptions& opt = {}) {
  ExperimentResult res;
  res.out = resolve_output_dir(cfg, opt);
  std::vector<Job> jobs;
  std::set<int> seen;
  std::vector<int> ids;
  for (int id : cfg.sequence.task_ids)
    if (seen.insert(id).second) ids.push_back(id);
  for (const auto* v : selected_variants(cfg, opt))
    for (auto seed : effective_seeds(cfg, opt))
      for (int id : ids)
        jobs.push_back({v->name, v->agent, {id}, seed,
                        res.out / "reference_runs" / v->name / ("seed_" + std::to_string(seed)) / ("task_" + std::to_string(id))});
  res.runs = execute_all(cfg, jobs, res.out, "reference", opt);
  for (const auto& r : res.runs)
    if (r.ok)
      write_file(reference_file(res.out, r.job.variant, r.job.seed, r.job.task_ids[0]),
                 eval_log_csv(*r.log, r.job.task_ids));
  return res;
}

struct PairwiseResult {
  ExperimentResult runs;
  std::map<std::string, metrics::PairwiseMatrices> matrices;  // per variant, mean over seeds
};

/// Every ordered pair (i, j) of the sequence's tasks, diagonal included,
/// as a two-task run; then first-task, second-task and forgetting
/// matrices per variant.
inline PairwiseResult run_pairwise(const ExperimentConfig& cfg, const RunOptions& opt = {}) {
  PairwiseResult res;
  auto& ex = res.runs;
  ex.out = resolve_output_dir(cfg, opt);
  const auto& ids = cfg.sequence.task_ids;
  const int n = static_cast<int>(ids.size());
  std::vector<Job> jobs;
  const auto variants = selected_variants(cfg, opt);
  const auto seeds = effective_seeds(cfg, opt);
  for (const auto* v : variants)
    for (auto seed : seeds)
      for (int a : ids)
        for (int b : ids)
          jobs.push_back({v->name, v->agent, {a, b}, seed,
                          ex.out / "pairwise" / v->name / ("seed_" + std::to_string(seed)) /
                              ("pair_" + std::to_string(a) + "_" + std::to_string(b))});
  ex.runs = execute_all(cfg, jobs, ex.out, "pairwise", opt);
  std::size_t k = 0;
  for (const auto* v : variants) {
    std::vector<metrics::PairwiseMatrices> per_seed;
    for (std::size_t s = 0; s < seeds.size(); ++s) {
      std::vector<std::optional<metrics::EvalLog>> logs;
      for (int c = 0; c < n * n; ++c, ++k) logs.push_back(ex.runs[k].ok ? ex.runs[k].log : std::nullopt);
      per_seed.push_back(metrics::pairwise_matrices(n, logs));
    }
    metrics::PairwiseMatrices mean;
    mean.size = n;
    auto average = [&](auto member) {
      std::vector<std::optional<double>> out(static_cast<std::size_t>(n * n));
      for (std::size_t c = 0; c < out.size(); ++c) {
        double sum = 0.0;
        int cnt = 0;
        for (const auto& m : per_seed)
          if (const auto& x = (m.*member)[c]) {
            sum += *x;
            ++cnt;
          }
        if (cnt) out[c] = sum / cnt;
      }
      return out;
    };
    mean.first_perf = average(&metrics::PairwiseMatrices::first_perf);
    mean.second_perf = average(&metrics::PairwiseMatrices::second_perf);
    mean.first_forgetting = average(&metrics::PairwiseMatrices::first_forgetting);
    const fs::path dir = ex.out / "pairwise" / v->name;
    write_file(dir / "first_perf.csv", matrix_csv(mean.first_perf, ids));
    write_file(dir / "second_perf.csv", matrix_csv(mean.second_perf, ids));
    write_file(dir / "first_forgetting.csv", matrix_csv(mean.first_forgetting, ids));
    std::string means = "matrix,mean,holes\n";
    const auto holes = std::to_string(mean.holes().size());
    means += "first_perf," + fmt(metrics::PairwiseMatrices::mean_of(mean.first_perf)) + "," + holes + "\n";
    means += "second_perf," + fmt(metrics::PairwiseMatrices::mean_of(mean.second_perf)) + "," + holes + "\n";
    means += "first_forgetting," + fmt(metrics::PairwiseMatrices::mean_of(mean.first_forgetting)) + "," + holes + "\n";
    write_file(dir / "matrix_means.csv", means);
    res.matrices[v->name] = mean;
  }
  return res;
}

}  // namespace recall::runner
