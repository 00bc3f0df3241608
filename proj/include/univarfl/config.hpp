#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "univarfl/data.hpp"
#include "univarfl/federation.hpp"
#include "univarfl/model.hpp"

namespace univarfl {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& message)
      : std::runtime_error(key.empty() ? message : key + ": " + message), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

enum class DataSource { synthetic, idx };
enum class PartitionKind { dirichlet, feature_shift };

struct DataConfig {
  DataSource source = DataSource::synthetic;
  SyntheticTaskSpec synthetic;
  std::size_t test_per_class = 100;
  // Seed of the synthetic task itself; shared by all run seeds.
  std::uint64_t task_seed = 1;
  std::string train_images, train_labels, test_images, test_labels;
  PartitionKind partition = PartitionKind::dirichlet;
  double alpha = 1.0;
  ShiftSpec shift;
  double train_fraction = 0.9;
};

struct AlgorithmSettings {
  AlgorithmKind kind = AlgorithmKind::univarfl;
  std::optional<double> mu;
  std::optional<double> lambda;
  double mu_prox = 0.01;
  double epsilon = kDefaultEnergyEpsilon;
};

struct ExperimentConfig {
  // input_dim and classes are filled in from the data source.
  ModelSpec model{0, {32}, 32, 16, 0, Normalization::batch_standardize, false, FeatureSource::post_projector};
  AlgorithmSettings algo;
  DataConfig data;
  FederationConfig fed;
  std::vector<std::uint64_t> seeds{1};
  std::string out_dir = "runs";
  // Capture the classifier spectrum every N rounds (0: final only).
  std::size_t spectrum_every = 0;
};

// Flat "key = value" text; '#' starts a comment; lists are [a, b, c].
// Unknown keys, type errors and missing required keys raise ConfigError.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig parse_config_file(const std::filesystem::path& path);

// Class count and input width implied by the data source.
std::size_t config_classes(const ExperimentConfig& cfg);

// Algorithm with defaults filled in: mu = 0.5, lambda = D / 4.
Algorithm resolve_algorithm(const ExperimentConfig& cfg);

// Every key with its resolved value, one per line in sorted order. Parsing
// it back yields the same configuration.
std::string canonical_text(const ExperimentConfig& cfg);

// FNV-1a over the canonical text, excluding out_dir.
std::uint64_t config_digest(const ExperimentConfig& cfg);
std::string digest_hex(std::uint64_t digest);

}  // namespace univarfl
