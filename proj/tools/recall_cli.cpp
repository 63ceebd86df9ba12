#include <CLI11.hpp>

#include <iostream>

#include "recall/runner/experiment.hpp"

namespace {

using namespace recall;

runner::ExperimentConfig load(const std::string& path) { return runner::parse_config(runner::read_file(path)); }

void print_summary(const runner::ExperimentResult& r) {
  std::cout << "output: " << r.out.string() << "\n";
  if (r.summary) std::cout << r.summary->text;
  if (const int f = r.failed()) std::cout << f << " of " << r.runs.size() << " runs failed; see manifest\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual RL experiments with replay, target normalization and policy distillation"};
  app.set_version_flag("--version", RECALL_VERSION);
  app.require_subcommand(1);

  runner::RunOptions opt;
  std::string variants_csv;
  std::string out;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--seed-offset", opt.seed_offset, "Added to every configured seed");
    sub->add_option("--variants", variants_csv, "Comma-separated subset of variant names to run");
    sub->add_option("--out", out, std::string("Output directory (default: run.output_dir, under $") +
                                      runner::kOutputRootEnv + " when set)");
    sub->add_flag("-q,--quiet", opt.quiet, "No per-run progress lines");
  };

  std::string config_path, report_dir;
  auto* run = app.add_subcommand("run", "Train every (variant, seed) on the configured sequence");
  run->add_option("config", config_path, "Experiment YAML")->required()->check(CLI::ExistingFile);
  common(run);
  auto* pairwise = app.add_subcommand("pairwise", "Train every ordered task pair and write interference matrices");
  pairwise->add_option("config", config_path, "Experiment YAML")->required()->check(CLI::ExistingFile);
  common(pairwise);
  auto* reference = app.add_subcommand("reference", "Train each task from scratch for forward transfer");
  reference->add_option("config", config_path, "Experiment YAML")->required()->check(CLI::ExistingFile);
  common(reference);
  auto* rep = app.add_subcommand("report", "Summarize finished runs: mean and bootstrap CI per variant");
  rep->add_option("dir", report_dir, "Output directory of a previous run")->required();
  auto* check = app.add_subcommand("check", "Validate a config and print its normalized form");
  check->add_option("config", config_path, "Experiment YAML")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);
  if (!out.empty()) opt.out = out;
  if (!variants_csv.empty())
    for (const auto& v : runner::split(variants_csv))
      if (!v.empty()) opt.variants.push_back(v);

  try {
    if (*check) {
      std::cout << runner::normalize(load(config_path));
      return 0;
    }
    if (*rep) {
      std::cout << runner::report(report_dir).text;
      return 0;
    }
    const auto cfg = load(config_path);
    if (*run) {
      const auto r = runner::run_experiment(cfg, opt);
      print_summary(r);
      return r.failed() ? 2 : 0;
    }
    if (*reference) {
      const auto r = runner::run_reference(cfg, opt);
      print_summary(r);
      return r.failed() ? 2 : 0;
    }
    if (*pairwise) {
      const auto r = runner::run_pairwise(cfg, opt);
      print_summary(r.runs);
      for (const auto& [name, m] : r.matrices)
        std::cout << name << ": mean first " << runner::fmt(metrics::PairwiseMatrices::mean_of(m.first_perf)) << ", second "
                  << runner::fmt(metrics::PairwiseMatrices::mean_of(m.second_perf)) << ", forgetting "
                  << runner::fmt(metrics::PairwiseMatrices::mean_of(m.first_forgetting)) << "\n";
      return r.runs.failed() ? 2 : 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
