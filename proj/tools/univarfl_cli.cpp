// Command-line front end: run, gradcheck, sweep, partition-report.
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "univarfl/config.hpp"
#include "univarfl/experiment.hpp"
#include "univarfl/gradcheck.hpp"
#include "univarfl/metrics.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;
constexpr int kExitGradcheck = 4;

struct Common {
  std::string config;
  std::string out;
  std::vector<std::uint64_t> seeds;
  bool force = false;
  std::size_t threads = 1;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "experiment config file")->required();
  cmd->add_option("--out", c.out, "output directory (overrides out_dir)");
  cmd->add_option("--seed", c.seeds, "comma separated seeds replacing the configured list")->delimiter(',');
  cmd->add_flag("--force", c.force, "allow writing into an existing output directory");
  cmd->add_option("--threads", c.threads, "client worker threads")->check(CLI::PositiveNumber);
}

univarfl::ExperimentConfig load(const Common& c) {
  auto cfg = univarfl::parse_config_file(c.config);
  if (!c.out.empty()) cfg.out_dir = c.out;
  if (!c.seeds.empty()) cfg.seeds = c.seeds;
  return cfg;
}

int report_gradcheck(const univarfl::GradcheckOptions& options) {
  bool ok = true;
  for (const auto& term : univarfl::run_gradcheck(options)) {
    std::printf("%-10s %s  max_rel=%.3e max_abs=%.3e entries=%zu\n", term.name.c_str(),
                term.passed ? "PASS" : "FAIL", term.comparison.max_rel_error, term.comparison.max_abs_error,
                term.comparison.entries);
    ok = ok && term.passed;
  }
  return ok ? kExitOk : kExitGradcheck;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"univarfl: federated learning simulator"};
  app.require_subcommand(1);

  Common run_opts;
  auto* run = app.add_subcommand("run", "train every configured seed");
  add_common(run, run_opts);

  univarfl::GradcheckOptions grad_opts;
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every loss term");
  grad->add_option("--seed", grad_opts.seed, "seed for the random probe model");
  grad->add_option("--inject-fault", grad_opts.fault, "negate one term's analytic gradient")
      ->check(CLI::IsMember({"ce", "he", "var", "prox", "composite"}));

  Common sweep_opts;
  std::string axis;
  std::vector<std::string> values;
  auto* sweep = app.add_subcommand("sweep", "repeat the run over values of one axis");
  add_common(sweep, sweep_opts);
  sweep->add_option("--axis", axis, "alpha, rho or algorithm")->required();
  sweep->add_option("--values", values, "axis values")->required()->delimiter(',');

  Common part_opts;
  auto* part = app.add_subcommand("partition-report", "print per-client class histograms");
  add_common(part, part_opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run) {
      const auto summary = univarfl::cmd_run(load(run_opts), {run_opts.threads, run_opts.force});
      for (const auto& s : summary.seeds)
        std::printf("seed %llu  final accuracy %.4f\n", static_cast<unsigned long long>(s.seed), s.final_accuracy);
      std::printf("mean %.4f  std %.4f\n", summary.mean, summary.std);
      return kExitOk;
    }
    if (*grad) return report_gradcheck(grad_opts);
    if (*sweep) {
      const auto rows = univarfl::cmd_sweep(load(sweep_opts), univarfl::parse_sweep_axis(axis), values,
                                            {sweep_opts.threads, sweep_opts.force});
      for (const auto& r : rows)
        std::printf("%s=%s seed %llu  final accuracy %.4f\n", axis.c_str(), r.value.c_str(),
                    static_cast<unsigned long long>(r.seed), r.final_accuracy);
      return kExitOk;
    }
    if (*part) {
      const auto cfg = load(part_opts);
      std::cout << univarfl::partition_report(cfg, cfg.seeds.front());
      return kExitOk;
    }
  } catch (const univarfl::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitConfig;
}
