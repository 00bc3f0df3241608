#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "univarfl/config.hpp"
#include "univarfl/data.hpp"
#include "univarfl/federation.hpp"
#include "univarfl/metrics.hpp"

namespace univarfl {

struct PreparedData {
  std::vector<Dataset> clients;
  Partition partition;
  Dataset validation;
  Dataset test;
};

// Builds the task, the stratified train/validation split, the client
// partition and the test set for one run seed.
PreparedData prepare_data(const ExperimentConfig& cfg, std::uint64_t seed);

struct RunOutcome {
  std::uint64_t seed = 0;
  TrainingResult training;
  std::vector<LabeledSpectrum> spectra;
  double final_accuracy = 0.0;
};

RunOutcome run_seed(const ExperimentConfig& cfg, std::uint64_t seed, std::size_t threads = 1);

// metrics.csv, spectrum.csv, checkpoint.bin, config.resolved, manifest.json.
void write_run_artifacts(const ExperimentConfig& cfg, const RunOutcome& outcome,
                         const std::filesystem::path& dir);

struct RunOptions {
  std::size_t threads = 1;
  bool force = false;
};

struct SeedSummary {
  std::uint64_t seed = 0;
  double final_accuracy = 0.0;
};

struct Summary {
  std::vector<SeedSummary> seeds;
  double mean = 0.0;
  // Population standard deviation.
  double std = 0.0;
};

Summary summarize(std::vector<SeedSummary> seeds);

// Raises ConfigError if `dir` holds files and force is false.
void prepare_output_dir(const std::filesystem::path& dir, bool force);

// One seed_<s>/ directory per seed plus summary.csv and manifest.json.
Summary cmd_run(const ExperimentConfig& cfg, const RunOptions& options);

enum class SweepAxis { alpha, rho, algorithm };
SweepAxis parse_sweep_axis(const std::string& name);

struct SweepRow {
  std::string value;
  std::uint64_t seed = 0;
  double final_accuracy = 0.0;
};

// Config with one axis value applied.
ExperimentConfig apply_axis(const ExperimentConfig& cfg, SweepAxis axis, const std::string& value);

// sweep.csv (axis,value,seed,final_accuracy) and sweep_summary.csv (axis,value,mean,std).
std::vector<SweepRow> cmd_sweep(const ExperimentConfig& cfg, SweepAxis axis, const std::vector<std::string>& values,
                                const RunOptions& options);

// Per-client class histograms, one CSV line per client.
std::string partition_report(const ExperimentConfig& cfg, std::uint64_t seed);

void write_checkpoint(const std::filesystem::path& path, const ParamVector& params, std::uint64_t digest);
ParamVector read_checkpoint(const std::filesystem::path& path, const ModelSpec& spec, std::uint64_t* digest = nullptr);

}  // namespace univarfl
