#include "univarfl/federation.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <stdexcept>
#include <thread>

#include "univarfl/metrics.hpp"

namespace univarfl {

std::string_view to_string(AlgorithmKind kind) {
  switch (kind) {
    case AlgorithmKind::fedavg: return "fedavg";
    case AlgorithmKind::fedprox: return "fedprox";
    case AlgorithmKind::freeze: return "freeze";
    case AlgorithmKind::univarfl: return "univarfl";
  }
  return "unknown";
}

AlgorithmKind parse_algorithm_kind(std::string_view name) {
  for (auto k : {AlgorithmKind::fedavg, AlgorithmKind::fedprox, AlgorithmKind::freeze, AlgorithmKind::univarfl})
    if (to_string(k) == name) return k;
  throw std::invalid_argument("unknown algorithm '" + std::string(name) + "'");
}

Algorithm Algorithm::fedavg() { return {AlgorithmKind::fedavg, {}}; }

Algorithm Algorithm::fedprox(double mu_prox) {
  Algorithm a{AlgorithmKind::fedprox, {}};
  a.coefficients.mu_prox = mu_prox;
  return a;
}

Algorithm Algorithm::freeze() { return {AlgorithmKind::freeze, {}}; }

Algorithm Algorithm::univarfl(double mu, double lambda, double epsilon) {
  Algorithm a{AlgorithmKind::univarfl, {}};
  a.coefficients.mu = mu;
  a.coefficients.lambda = lambda;
  a.coefficients.epsilon = epsilon;
  return a;
}

void Algorithm::validate() const {
  const auto& c = coefficients;
  if (c.mu < 0.0 || c.lambda < 0.0 || c.mu_prox < 0.0)
    throw std::invalid_argument("algorithm coefficients must be >= 0");
  if (!(c.epsilon > 0.0)) throw std::invalid_argument("energy epsilon must be positive");
}

ModelSpec model_spec_for(ModelSpec base, const Algorithm& algo) {
  base.classifier_frozen = algo.freezes_classifier();
  return base;
}

void FederationConfig::validate() const {
  if (clients == 0) throw std::invalid_argument("federation: need at least one client");
  if (epochs == 0) throw std::invalid_argument("federation: epochs must be >= 1");
  if (!(rho > 0.0 && rho <= 1.0)) throw std::invalid_argument("participation out of range");
  if (batch_size < 2) throw std::invalid_argument("federation: batch size must be >= 2");
}

ClientUpdate local_train(const ParamVector& global, const Dataset& data, std::size_t client,
                         const FederationConfig& cfg, const Algorithm& algo, const RngStream& rng) {
  if (data.size() == 0) throw std::invalid_argument("local_train: client " + std::to_string(client) + " has no data");
  if (cfg.epochs == 0) throw std::invalid_argument("local_train: epochs must be >= 1");
  const ModelSpec& spec = global.spec();
  if (data.input_dim() != spec.input_dim) throw std::invalid_argument("local_train: data width != model input");

  ClientUpdate update;
  update.client = client;
  update.samples = data.size();
  update.params = global;
  ParamVector& params = update.params;
  OptimizerState opt = make_optimizer(params, cfg.optimizer);
  const VarianceFloor floor = variance_threshold(spec.classes);
  const Coefficients& coeffs = algo.coefficients;

  LossBreakdown sum;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    RngStream stream = derive_stream(rng, {epoch});
    for (const auto& idx : batches(data.size(), cfg.batch_size, stream)) {
      const auto [X, y] = gather(data, idx);
      const ForwardTrace trace = forward(params, X, Mode::train);
      const CompositeResult res = composite_loss(trace, y, coeffs, floor, spec.he_source, params, &global);
      ParamVector grads = backward(params, trace, res.heads);
      if (!res.direct.empty())
        for (std::size_t i = 0; i < grads.size(); ++i) grads.values[i] += res.direct[i];
      sgd_step(params, grads, opt);
      update_running_stats(params, trace);

      sum.ce += res.breakdown.ce;
      sum.he += res.breakdown.he;
      sum.var += res.breakdown.var;
      sum.prox += res.breakdown.prox;
      sum.total += res.breakdown.total;
      ++update.steps;
    }
  }
  update.mean_loss = sum;
  update.mean_loss.mu = coeffs.mu;
  update.mean_loss.lambda = coeffs.lambda;
  update.mean_loss.mu_prox = coeffs.mu_prox;
  if (update.steps > 0) {
    const double s = static_cast<double>(update.steps);
    update.mean_loss.ce /= s;
    update.mean_loss.he /= s;
    update.mean_loss.var /= s;
    update.mean_loss.prox /= s;
    update.mean_loss.total /= s;
  }
  return update;
}

std::vector<std::size_t> sample_participants(std::size_t clients, double rho, RngStream rng) {
  if (!(rho > 0.0 && rho <= 1.0)) throw std::invalid_argument("participation out of range");
  const auto want = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(rho * static_cast<double>(clients))), 1, clients);
  std::vector<std::size_t> ids(clients);
  for (std::size_t i = 0; i < clients; ++i) ids[i] = i;
  for (std::size_t i = 0; i < want; ++i) {
    const std::size_t j = i + rng.below(clients - i);
    std::swap(ids[i], ids[j]);
  }
  ids.resize(want);
  std::sort(ids.begin(), ids.end());
  return ids;
}

ParamVector aggregate(const std::vector<ClientUpdate>& updates, Weighting weighting) {
  if (updates.empty()) throw std::invalid_argument("aggregate: no updates");
  const std::size_t len = updates.front().params.size();
  double total = 0.0;
  for (const auto& u : updates) {
    if (u.params.size() != len) throw std::invalid_argument("aggregate: parameter length mismatch");
    total += static_cast<double>(u.samples);
  }
  std::vector<double> weights;
  for (const auto& u : updates) {
    weights.push_back(weighting == Weighting::uniform ? 1.0 / static_cast<double>(updates.size())
                                                      : static_cast<double>(u.samples) / total);
  }

  ParamVector out = updates.front().params;
  for (std::size_t i = 0; i < len; ++i) {
    double acc = weights[0] * updates[0].params.values[i];
    double lo = updates[0].params.values[i];
    double hi = lo;
    for (std::size_t k = 1; k < updates.size(); ++k) {
      const double v = updates[k].params.values[i];
      acc += weights[k] * v;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    out.values[i] = lo == hi ? lo : std::clamp(acc, lo, hi);
  }
  return out;
}

std::vector<double> full_batch_gradient(const ParamVector& params, const Dataset& data, const Algorithm& algo) {
  const ModelSpec& spec = params.spec();
  const ForwardTrace trace = forward(params, data.X, Mode::eval);
  Coefficients coeffs = algo.coefficients;
  coeffs.mu_prox = 0.0;
  const CompositeResult res =
      composite_loss(trace, data.y, coeffs, variance_threshold(spec.classes), spec.he_source, params, nullptr);
  return backward(params, trace, res.heads).values;
}

double global_gradient_norm(const ParamVector& params, const std::vector<Dataset>& clients,
                            const Algorithm& algo) {
  double total = 0.0;
  for (const auto& c : clients) total += static_cast<double>(c.size());
  if (total == 0.0) throw std::invalid_argument("global_gradient_norm: no data");
  std::vector<double> g(params.size(), 0.0);
  for (const auto& c : clients) {
    if (c.size() == 0) continue;
    const auto gk = full_batch_gradient(params, c, algo);
    const double w = static_cast<double>(c.size()) / total;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += w * gk[i];
  }
  return dot(g, g);
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(std::max<std::size_t>(threads, 1), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 1; t < workers; ++t) pool.emplace_back(work);
    work();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

TrainingResult run_training(const ModelSpec& spec, const FederationConfig& cfg, const Algorithm& algo,
                            const std::vector<Dataset>& clients, const Dataset& test,
                            const RoundObserver& observer) {
  cfg.validate();
  algo.validate();
  if (clients.size() != cfg.clients) throw std::invalid_argument("run_training: client data count != K");
  for (std::size_t k = 0; k < clients.size(); ++k)
    if (clients[k].size() == 0) throw std::invalid_argument("run_training: client " + std::to_string(k) + " is empty");

  const RngStream root(cfg.seed);
  TrainingResult result;
  result.final_params = init_model(model_spec_for(spec, algo), derive_stream(root, {stream_tag::kInit}));

  for (std::size_t round = 1; round <= cfg.rounds; ++round) {
    const auto start = std::chrono::steady_clock::now();
    const ParamVector& global = result.final_params;
    RoundRecord rec;
    rec.round = round;
    rec.participants = sample_participants(cfg.clients, cfg.rho, derive_stream(root, {stream_tag::kParticipation, round}));

    std::vector<ClientUpdate> updates(rec.participants.size());
    parallel_for(updates.size(), cfg.threads, [&](std::size_t i) {
      const std::size_t k = rec.participants[i];
      updates[i] = local_train(global, clients[k], k, cfg, algo, derive_stream(root, {stream_tag::kBatches, round, k}));
    });

    for (const auto& u : updates) {
      rec.mean_loss.ce += u.mean_loss.ce;
      rec.mean_loss.he += u.mean_loss.he;
      rec.mean_loss.var += u.mean_loss.var;
      rec.mean_loss.prox += u.mean_loss.prox;
      rec.mean_loss.total += u.mean_loss.total;
    }
    const double m = static_cast<double>(updates.size());
    rec.mean_loss.ce /= m;
    rec.mean_loss.he /= m;
    rec.mean_loss.var /= m;
    rec.mean_loss.prox /= m;
    rec.mean_loss.total /= m;
    rec.mean_loss.mu = algo.coefficients.mu;
    rec.mean_loss.lambda = algo.coefficients.lambda;
    rec.mean_loss.mu_prox = algo.coefficients.mu_prox;

    result.final_params = aggregate(updates, cfg.weighting);
    rec.accuracy = evaluate_accuracy(result.final_params, test);
    rec.grad_sq_norm = global_gradient_norm(result.final_params, clients, algo);
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (observer) observer(rec, result.final_params);
    result.records.push_back(std::move(rec));
  }
  return result;
}

}  // namespace univarfl
