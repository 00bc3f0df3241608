#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "univarfl/data.hpp"
#include "univarfl/model.hpp"
#include "univarfl/objectives.hpp"
#include "univarfl/rng.hpp"

namespace univarfl {

enum class AlgorithmKind { fedavg, fedprox, freeze, univarfl };

std::string_view to_string(AlgorithmKind kind);
AlgorithmKind parse_algorithm_kind(std::string_view name);

// Exactly one algorithm per run, with resolved coefficients.
struct Algorithm {
  AlgorithmKind kind = AlgorithmKind::fedavg;
  Coefficients coefficients;

  static Algorithm fedavg();
  static Algorithm fedprox(double mu_prox);
  static Algorithm freeze();
  static Algorithm univarfl(double mu, double lambda, double epsilon = kDefaultEnergyEpsilon);

  bool freezes_classifier() const { return kind == AlgorithmKind::freeze; }
  void validate() const;
};

// The base spec with the classifier freeze flag set for the algorithm.
ModelSpec model_spec_for(ModelSpec base, const Algorithm& algo);

enum class Weighting { uniform, by_samples };

struct FederationConfig {
  std::size_t clients = 10;
  std::size_t rounds = 100;
  std::size_t epochs = 10;
  double rho = 1.0;
  std::size_t batch_size = 32;
  Weighting weighting = Weighting::by_samples;
  OptimizerSettings optimizer;
  std::uint64_t seed = 0;
  // Worker threads for client training; never changes results.
  std::size_t threads = 1;

  void validate() const;
};

struct ClientUpdate {
  std::size_t client = 0;
  ParamVector params;
  std::size_t samples = 0;
  LossBreakdown mean_loss;
  std::size_t steps = 0;
};

struct RoundRecord {
  std::size_t round = 0;
  std::vector<std::size_t> participants;
  double accuracy = 0.0;
  LossBreakdown mean_loss;
  double grad_sq_norm = 0.0;
  double wall_seconds = 0.0;
};

// E epochs of mini-batch SGD from the broadcast parameters; momentum starts
// at zero. Epoch e shuffles with derive_stream(rng, {e}).
ClientUpdate local_train(const ParamVector& global, const Dataset& data, std::size_t client,
                         const FederationConfig& cfg, const Algorithm& algo, const RngStream& rng);

// Sorted ids; max(1, round(rho * K)) clients without replacement.
std::vector<std::size_t> sample_participants(std::size_t clients, double rho, RngStream rng);

// Weighted mean, clamped per coordinate to the inputs' [min, max].
ParamVector aggregate(const std::vector<ClientUpdate>& updates, Weighting weighting);

// Full-batch gradient of one client's objective (eval-mode normalization, no proximal term).
std::vector<double> full_batch_gradient(const ParamVector& params, const Dataset& data, const Algorithm& algo);

// |sum_k (n_k / N) g_k|^2 over the clients' full-batch gradients.
double global_gradient_norm(const ParamVector& params, const std::vector<Dataset>& clients,
                            const Algorithm& algo);

struct TrainingResult {
  std::vector<RoundRecord> records;
  ParamVector final_params;
};

using RoundObserver = std::function<void(const RoundRecord&, const ParamVector&)>;

// Stream tags: init {kInit}; participation {kParticipation, round};
// client training {kBatches, round, client}.
TrainingResult run_training(const ModelSpec& spec, const FederationConfig& cfg, const Algorithm& algo,
                            const std::vector<Dataset>& clients, const Dataset& test,
                            const RoundObserver& observer = {});

// Runs fn(i) for i in [0, n) on up to `threads` workers; rethrows the first failure.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace univarfl
