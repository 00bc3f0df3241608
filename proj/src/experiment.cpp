#include "univarfl/experiment.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace univarfl {

namespace {

constexpr char kCheckpointMagic[8] = {'U', 'V', 'F', 'L', 'C', 'K', 'P', '1'};

std::string axis_name(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::alpha: return "alpha";
    case SweepAxis::rho: return "rho";
    case SweepAxis::algorithm: return "algorithm";
  }
  return "unknown";
}

std::string sanitize(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-') ? c : '_';
  return out;
}

}  // namespace

PreparedData prepare_data(const ExperimentConfig& cfg, std::uint64_t seed) {
  const RngStream root(seed);
  const auto& d = cfg.data;
  Dataset source;
  PreparedData out;
  if (d.source == DataSource::synthetic) {
    const RngStream task(d.task_seed);
    source = generate_synthetic(d.synthetic, derive_stream(task, {stream_tag::kData}), 0);
    SyntheticTaskSpec test_spec = d.synthetic;
    test_spec.per_class = d.test_per_class;
    out.test = generate_synthetic(test_spec, derive_stream(task, {stream_tag::kData}), 1);
  } else {
    source = load_idx(d.train_images, d.train_labels);
    out.test = load_idx(d.test_images, d.test_labels);
    const std::size_t classes = std::max(source.classes, out.test.classes);
    source.classes = classes;
    out.test.classes = classes;
  }
  auto [train, val] = train_val_split(source, d.train_fraction, derive_stream(root, {stream_tag::kSplit}));
  out.validation = std::move(val);

  if (d.partition == PartitionKind::dirichlet) {
    out.partition = dirichlet_partition(train, cfg.fed.clients, d.alpha, derive_stream(root, {stream_tag::kPartition}));
    for (const auto& idx : out.partition.assignment) out.clients.push_back(subset(train, idx));
  } else {
    auto shifted = feature_shift_partition(train, cfg.fed.clients, d.shift, derive_stream(root, {stream_tag::kShift}));
    out.partition = std::move(shifted.partition);
    out.clients = std::move(shifted.views);
    out.test = apply_domains(out.test, shifted.transforms);
    out.validation = apply_domains(out.validation, shifted.transforms);
  }
  return out;
}

RunOutcome run_seed(const ExperimentConfig& cfg, std::uint64_t seed, std::size_t threads) {
  const PreparedData data = prepare_data(cfg, seed);
  FederationConfig fed = cfg.fed;
  fed.seed = seed;
  fed.threads = threads;
  const Algorithm algo = resolve_algorithm(cfg);

  RunOutcome out;
  out.seed = seed;
  RoundObserver observer;
  if (cfg.spectrum_every > 0) {
    observer = [&](const RoundRecord& rec, const ParamVector& params) {
      if (rec.round % cfg.spectrum_every == 0)
        out.spectra.push_back({"round_" + std::to_string(rec.round), classifier_spectrum(params)});
    };
  }
  out.training = run_training(cfg.model, fed, algo, data.clients, data.test, observer);
  out.spectra.push_back({"final", classifier_spectrum(out.training.final_params)});
  out.final_accuracy = out.training.records.empty() ? evaluate_accuracy(out.training.final_params, data.test)
                                                    : out.training.records.back().accuracy;
  return out;
}

void write_checkpoint(const std::filesystem::path& path, const ParamVector& params, std::uint64_t digest) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  for (int i = 0; i < 8; ++i) out.put(static_cast<char>((digest >> (8 * i)) & 0xFF));
  write_params(out, params);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

ParamVector read_checkpoint(const std::filesystem::path& path, const ModelSpec& spec, std::uint64_t* digest) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || !std::equal(magic, magic + 8, kCheckpointMagic))
    throw std::runtime_error(path.string() + ": not a checkpoint");
  std::uint64_t d = 0;
  for (int i = 0; i < 8; ++i) d |= static_cast<std::uint64_t>(static_cast<unsigned char>(in.get())) << (8 * i);
  if (digest != nullptr) *digest = d;
  return read_params(in, spec);
}

void write_run_artifacts(const ExperimentConfig& cfg, const RunOutcome& outcome, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  ExperimentConfig single = cfg;
  single.seeds = {outcome.seed};
  const std::uint64_t digest = config_digest(single);

  MetricsTable table;
  table.records = outcome.training.records;
  write_metrics_csv(table, dir / "metrics.csv");
  write_spectrum_csv(outcome.spectra, dir / "spectrum.csv");
  write_checkpoint(dir / "checkpoint.bin", outcome.training.final_params, digest);
  write_text_file(dir / "config.resolved", canonical_text(single));

  nlohmann::ordered_json m;
  m["config_digest"] = digest_hex(digest);
  m["seed"] = outcome.seed;
  m["algorithm"] = std::string(to_string(cfg.algo.kind));
  m["alpha"] = cfg.data.alpha;
  m["rho"] = cfg.fed.rho;
  m["provenance"] = cfg.data.source == DataSource::synthetic ? "synthetic" : "idx:" + cfg.data.train_images;
  m["final_accuracy"] = outcome.final_accuracy;
  m["artifacts"] = {"metrics.csv", "spectrum.csv", "checkpoint.bin", "config.resolved"};
  m["resolved_config"] = canonical_text(single);
  m["status"] = "complete";
  write_text_file(dir / "manifest.json", m.dump(2) + "\n");
}

Summary summarize(std::vector<SeedSummary> seeds) {
  Summary s;
  s.seeds = std::move(seeds);
  if (s.seeds.empty()) return s;
  double total = 0.0;
  for (const auto& r : s.seeds) total += r.final_accuracy;
  s.mean = total / static_cast<double>(s.seeds.size());
  double sq = 0.0;
  for (const auto& r : s.seeds) sq += (r.final_accuracy - s.mean) * (r.final_accuracy - s.mean);
  s.std = std::sqrt(sq / static_cast<double>(s.seeds.size()));
  return s;
}

void prepare_output_dir(const std::filesystem::path& dir, bool force) {
  if (std::filesystem::exists(dir) && !std::filesystem::is_empty(dir) && !force)
    throw ConfigError("out_dir", "output directory " + dir.string() + " already exists (use --force)");
  std::filesystem::create_directories(dir);
}

Summary cmd_run(const ExperimentConfig& cfg, const RunOptions& options) {
  const std::filesystem::path out_dir(cfg.out_dir);
  prepare_output_dir(out_dir, options.force);

  nlohmann::ordered_json manifest;
  manifest["config_digest"] = digest_hex(config_digest(cfg));
  manifest["resolved_config"] = canonical_text(cfg);
  manifest["runs"] = nlohmann::ordered_json::array();

  std::vector<SeedSummary> finals;
  for (const auto seed : cfg.seeds) {
    const auto dir = out_dir / ("seed_" + std::to_string(seed));
    nlohmann::ordered_json entry{{"seed", seed}, {"dir", dir.filename().string()}, {"status", "failed"}};
    try {
      const RunOutcome outcome = run_seed(cfg, seed, options.threads);
      write_run_artifacts(cfg, outcome, dir);
      finals.push_back({seed, outcome.final_accuracy});
      entry["status"] = "complete";
    } catch (...) {
      manifest["runs"].push_back(entry);
      write_text_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
      throw;
    }
    manifest["runs"].push_back(entry);
  }

  const Summary summary = summarize(finals);
  std::ostringstream os;
  os << "seed,final_accuracy\n";
  for (const auto& s : summary.seeds) os << s.seed << ',' << format_real(s.final_accuracy) << '\n';
  os << "mean," << format_real(summary.mean) << '\n';
  os << "std," << format_real(summary.std) << '\n';
  write_text_file(out_dir / "summary.csv", os.str());
  manifest["summary"] = {{"mean", summary.mean}, {"std", summary.std}};
  write_text_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
  return summary;
}

SweepAxis parse_sweep_axis(const std::string& name) {
  if (name == "alpha") return SweepAxis::alpha;
  if (name == "rho") return SweepAxis::rho;
  if (name == "algorithm") return SweepAxis::algorithm;
  throw ConfigError("axis", "expected one of {alpha, rho, algorithm}, got '" + name + "'");
}

ExperimentConfig apply_axis(const ExperimentConfig& cfg, SweepAxis axis, const std::string& value) {
  ExperimentConfig out = cfg;
  std::string text = canonical_text(cfg);
  auto set_key = [&](const std::string& key, const std::string& v) {
    std::istringstream in(text);
    std::string line, rebuilt;
    while (std::getline(in, line)) rebuilt += (line.starts_with(key + " = ") ? key + " = " + v : line) + "\n";
    text = rebuilt;
  };
  switch (axis) {
    case SweepAxis::alpha: set_key("data.alpha", value); break;
    case SweepAxis::rho: set_key("fed.rho", value); break;
    case SweepAxis::algorithm:
      try {
        out.algo.kind = parse_algorithm_kind(value);
      } catch (const std::invalid_argument& e) {
        throw ConfigError("algorithm", e.what());
      }
      return out;
  }
  out = parse_config_text(text);
  return out;
}

std::vector<SweepRow> cmd_sweep(const ExperimentConfig& cfg, SweepAxis axis, const std::vector<std::string>& values,
                                const RunOptions& options) {
  if (values.empty()) throw ConfigError("values", "sweep needs at least one value");
  const std::filesystem::path out_dir(cfg.out_dir);
  std::vector<ExperimentConfig> configs;
  for (const auto& v : values) configs.push_back(apply_axis(cfg, axis, v));
  prepare_output_dir(out_dir, options.force);

  const std::string name = axis_name(axis);
  std::vector<SweepRow> rows;
  std::ostringstream table, summary;
  table << "axis,value,seed,final_accuracy\n";
  summary << "axis,value,mean,std\n";
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::vector<SeedSummary> finals;
    for (const auto seed : configs[i].seeds) {
      const RunOutcome outcome = run_seed(configs[i], seed, options.threads);
      write_run_artifacts(configs[i], outcome,
                          out_dir / (name + "_" + sanitize(values[i])) / ("seed_" + std::to_string(seed)));
      rows.push_back({values[i], seed, outcome.final_accuracy});
      finals.push_back({seed, outcome.final_accuracy});
      table << name << ',' << values[i] << ',' << seed << ',' << format_real(outcome.final_accuracy) << '\n';
    }
    const Summary s = summarize(finals);
    summary << name << ',' << values[i] << ',' << format_real(s.mean) << ',' << format_real(s.std) << '\n';
  }
  write_text_file(out_dir / "sweep.csv", table.str());
  write_text_file(out_dir / "sweep_summary.csv", summary.str());
  return rows;
}

std::string partition_report(const ExperimentConfig& cfg, std::uint64_t seed) {
  const PreparedData data = prepare_data(cfg, seed);
  std::ostringstream os;
  os << "client,samples";
  for (std::size_t c = 0; c < cfg.model.classes; ++c) os << ",class_" << c;
  os << '\n';
  for (std::size_t k = 0; k < data.partition.clients; ++k) {
    os << k << ',' << data.partition.assignment[k].size();
    for (auto h : data.partition.histograms[k]) os << ',' << h;
    os << '\n';
  }
  return os.str();
}

}  // namespace univarfl
