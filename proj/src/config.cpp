#include "univarfl/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "univarfl/metrics.hpp"

namespace univarfl {

namespace {

struct RawValue {
  std::vector<std::string> items;
  bool is_list = false;
  int line = 0;
};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string unquote(const std::string& s) {
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
  return s;
}

std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

std::map<std::string, RawValue> tokenize(const std::string& text) {
  std::map<std::string, RawValue> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("", "line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("", "line " + std::to_string(lineno) + ": empty key");
    if (out.count(key)) throw ConfigError(key, "duplicate key");
    RawValue raw;
    raw.line = lineno;
    if (!value.empty() && value.front() == '[') {
      if (value.back() != ']') throw ConfigError(key, "unterminated list");
      raw.is_list = true;
      std::stringstream items(value.substr(1, value.size() - 2));
      std::string item;
      while (std::getline(items, item, ',')) {
        item = trim(item);
        if (!item.empty()) raw.items.push_back(unquote(item));
      }
    } else {
      if (value.empty()) throw ConfigError(key, "missing value");
      raw.items.push_back(unquote(value));
    }
    out.emplace(key, std::move(raw));
  }
  return out;
}

class Reader {
 public:
  explicit Reader(std::map<std::string, RawValue> raw) : raw_(std::move(raw)) {}

  bool has(const std::string& key) const { return raw_.count(key) != 0; }

  std::string scalar(const std::string& key) {
    const auto& v = take(key);
    if (v.is_list) throw ConfigError(key, "expected a single value, got a list");
    return v.items.front();
  }

  double real(const std::string& key, std::optional<double> fallback = std::nullopt) {
    if (!has(key)) return required(key, fallback);
    return to_real(key, scalar(key));
  }

  std::size_t count(const std::string& key, std::optional<std::size_t> fallback = std::nullopt) {
    if (!has(key)) return required(key, fallback);
    return to_count(key, scalar(key));
  }

  std::string text(const std::string& key, std::optional<std::string> fallback = std::nullopt) {
    if (!has(key)) return required(key, fallback);
    return scalar(key);
  }

  std::vector<std::size_t> counts(const std::string& key, std::vector<std::size_t> fallback) {
    if (!has(key)) return fallback;
    const auto& v = take(key);
    std::vector<std::size_t> out;
    for (const auto& item : v.items) out.push_back(to_count(key, item));
    return out;
  }

  void reject_leftovers() const {
    for (const auto& [key, v] : raw_)
      if (!used_.count(key)) throw ConfigError(key, "unknown key (line " + std::to_string(v.line) + ")");
  }

  static double to_real(const std::string& key, const std::string& s) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
      throw ConfigError(key, "expected a number, got '" + s + "'");
    return v;
  }

  static std::size_t to_count(const std::string& key, const std::string& s) {
    unsigned long long v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
      throw ConfigError(key, "expected a non-negative integer, got '" + s + "'");
    return static_cast<std::size_t>(v);
  }

 private:
  const RawValue& take(const std::string& key) {
    used_.insert(key);
    return raw_.at(key);
  }

  template <typename T>
  static T required(const std::string& key, const std::optional<T>& fallback) {
    if (!fallback) throw ConfigError(key, "missing required key");
    return *fallback;
  }

  std::map<std::string, RawValue> raw_;
  std::set<std::string> used_;
};

template <typename Enum>
Enum choose(const std::string& key, const std::string& value,
            std::initializer_list<std::pair<const char*, Enum>> options) {
  std::string names;
  for (const auto& [name, e] : options) {
    if (value == name) return e;
    names += names.empty() ? name : std::string(", ") + name;
  }
  throw ConfigError(key, "expected one of {" + names + "}, got '" + value + "'");
}

void validate(const ExperimentConfig& cfg) {
  const auto& d = cfg.data;
  if (d.source == DataSource::synthetic) {
    if (d.synthetic.classes < 2) throw ConfigError("data.classes", "need at least 2 classes");
    if (d.synthetic.input_dim < 1) throw ConfigError("data.input_dim", "must be >= 1");
    if (d.synthetic.per_class < 2) throw ConfigError("data.per_class", "must be >= 2");
    if (d.test_per_class < 1) throw ConfigError("data.test_per_class", "must be >= 1");
    if (!(d.synthetic.noise_sigma > 0.0)) throw ConfigError("data.sigma", "must be positive");
    if (d.synthetic.confusability < 0.0 || d.synthetic.confusability >= 1.0)
      throw ConfigError("data.confusability", "must be in [0, 1)");
  } else {
    for (const auto& [key, path] : {std::pair{"data.train_images", d.train_images},
                                    std::pair{"data.train_labels", d.train_labels},
                                    std::pair{"data.test_images", d.test_images},
                                    std::pair{"data.test_labels", d.test_labels}}) {
      if (path.empty()) throw ConfigError(key, "missing required key");
      if (!std::filesystem::exists(path)) throw ConfigError(key, "file does not exist: " + path);
    }
  }
  if (!(d.alpha > 0.0)) throw ConfigError("data.alpha", "must be positive");
  if (!(d.train_fraction > 0.0 && d.train_fraction < 1.0)) throw ConfigError("data.train_fraction", "must be in (0, 1)");
  const auto& f = cfg.fed;
  if (f.clients < 1) throw ConfigError("fed.clients", "must be >= 1");
  if (f.rounds < 1) throw ConfigError("fed.rounds", "must be >= 1");
  if (f.epochs < 1) throw ConfigError("fed.epochs", "must be >= 1");
  if (!(f.rho > 0.0 && f.rho <= 1.0)) throw ConfigError("fed.rho", "participation out of range");
  if (f.batch_size < 2) throw ConfigError("fed.batch", "must be >= 2");
  if (f.optimizer.learning_rate < 0.0) throw ConfigError("opt.lr", "must be >= 0");
  if (f.optimizer.momentum < 0.0 || f.optimizer.momentum >= 1.0) throw ConfigError("opt.momentum", "must be in [0, 1)");
  if (f.optimizer.weight_decay < 0.0) throw ConfigError("opt.weight_decay", "must be >= 0");
  const auto& a = cfg.algo;
  if (a.mu && *a.mu < 0.0) throw ConfigError("algo.mu", "must be >= 0");
  if (a.lambda && *a.lambda < 0.0) throw ConfigError("algo.lambda", "must be >= 0");
  if (a.mu_prox < 0.0) throw ConfigError("algo.mu_prox", "must be >= 0");
  if (!(a.epsilon > 0.0)) throw ConfigError("algo.epsilon", "must be positive");
  if (cfg.seeds.empty()) throw ConfigError("seeds", "need at least one seed");
  if (cfg.model.projector_width < 1) throw ConfigError("model.projector", "must be >= 1");
  if (cfg.model.feature_dim < 1) throw ConfigError("model.feature_dim", "must be >= 1");
  for (auto w : cfg.model.encoder_widths)
    if (w < 1) throw ConfigError("model.encoder", "widths must be >= 1");
}

std::string quoted(const std::string& s) { return "\"" + s + "\""; }

std::string join_counts(const std::vector<std::size_t>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + std::to_string(v[i]);
  return s + "]";
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
  Reader r(tokenize(text));
  ExperimentConfig cfg;

  cfg.model.encoder_widths = r.counts("model.encoder", cfg.model.encoder_widths);
  cfg.model.projector_width = r.count("model.projector", cfg.model.projector_width);
  cfg.model.feature_dim = r.count("model.feature_dim", cfg.model.feature_dim);
  cfg.model.normalization = choose<Normalization>("model.norm", r.text("model.norm", "batch"),
                                                  {{"batch", Normalization::batch_standardize},
                                                   {"none", Normalization::none}});
  cfg.model.he_source = choose<FeatureSource>("model.he_features", r.text("model.he_features", "post"),
                                              {{"post", FeatureSource::post_projector},
                                               {"pre", FeatureSource::pre_projector}});

  const std::string kind = r.text("algo.kind", "univarfl");
  try {
    cfg.algo.kind = parse_algorithm_kind(kind);
  } catch (const std::invalid_argument&) {
    throw ConfigError("algo.kind", "expected one of {fedavg, fedprox, freeze, univarfl}, got '" + kind + "'");
  }
  if (r.has("algo.mu")) cfg.algo.mu = r.real("algo.mu");
  if (r.has("algo.lambda")) cfg.algo.lambda = r.real("algo.lambda");
  cfg.algo.mu_prox = r.real("algo.mu_prox", 0.01);
  cfg.algo.epsilon = r.real("algo.epsilon", kDefaultEnergyEpsilon);

  auto& d = cfg.data;
  d.source = choose<DataSource>("data.source", r.text("data.source", "synthetic"),
                                {{"synthetic", DataSource::synthetic}, {"idx", DataSource::idx}});
  if (d.source == DataSource::synthetic) {
    d.synthetic.classes = r.count("data.classes");
    d.synthetic.input_dim = r.count("data.input_dim");
    d.synthetic.per_class = r.count("data.per_class", 200);
    d.synthetic.center_scale = r.real("data.scale", 2.0);
    d.synthetic.noise_sigma = r.real("data.sigma", d.synthetic.noise_sigma);
    d.synthetic.confusability = r.real("data.confusability", 0.0);
    d.test_per_class = r.count("data.test_per_class", 100);
    d.task_seed = r.count("data.seed", 1);
  } else {
    d.train_images = r.text("data.train_images");
    d.train_labels = r.text("data.train_labels");
    d.test_images = r.text("data.test_images");
    d.test_labels = r.text("data.test_labels");
  }
  d.partition = choose<PartitionKind>("data.partition", r.text("data.partition", "dirichlet"),
                                      {{"dirichlet", PartitionKind::dirichlet},
                                       {"feature_shift", PartitionKind::feature_shift}});
  d.alpha = r.real("data.alpha", 1.0);
  d.shift.rotation_strength = r.real("data.shift_strength", 1.0);
  d.shift.bias_scale = r.real("data.shift_bias", 0.5);
  d.shift.noise_scale = r.real("data.shift_noise", 0.0);
  d.train_fraction = r.real("data.train_fraction", 0.9);

  auto& f = cfg.fed;
  f.clients = r.count("fed.clients");
  f.rounds = r.count("fed.rounds", 100);
  f.epochs = r.count("fed.epochs", 10);
  f.rho = r.real("fed.rho", 1.0);
  f.batch_size = r.count("fed.batch", 32);
  f.weighting = choose<Weighting>("fed.weighting", r.text("fed.weighting", "samples"),
                                  {{"samples", Weighting::by_samples}, {"uniform", Weighting::uniform}});
  cfg.spectrum_every = r.count("fed.spectrum_every", 0);
  f.optimizer.learning_rate = r.real("opt.lr", 0.01);
  f.optimizer.momentum = r.real("opt.momentum", 0.9);
  f.optimizer.weight_decay = r.real("opt.weight_decay", 1e-5);

  std::vector<std::size_t> seeds = r.counts("seeds", {1});
  cfg.seeds.assign(seeds.begin(), seeds.end());
  cfg.out_dir = r.text("out_dir", "runs");
  r.reject_leftovers();

  validate(cfg);
  const auto classes = config_classes(cfg);
  if (cfg.algo.kind == AlgorithmKind::univarfl || cfg.algo.lambda) {
    // Materialize defaults so the resolved config is explicit.
    const auto coeffs = univarfl_coefficients(classes, cfg.algo.mu, cfg.algo.lambda, cfg.algo.epsilon);
    cfg.algo.mu = coeffs.mu;
    cfg.algo.lambda = coeffs.lambda;
  }
  cfg.model.classes = classes;
  if (d.source == DataSource::synthetic) {
    cfg.model.input_dim = d.synthetic.input_dim;
  } else {
    cfg.model.input_dim = probe_idx(d.train_images, d.train_labels).input_dim;
  }
  return cfg;
}

ExperimentConfig parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("", "cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::size_t config_classes(const ExperimentConfig& cfg) {
  if (cfg.data.source == DataSource::synthetic) return cfg.data.synthetic.classes;
  const auto train = probe_idx(cfg.data.train_images, cfg.data.train_labels);
  const auto test = probe_idx(cfg.data.test_images, cfg.data.test_labels);
  return std::max(train.classes, test.classes);
}

Algorithm resolve_algorithm(const ExperimentConfig& cfg) {
  const auto& a = cfg.algo;
  switch (a.kind) {
    case AlgorithmKind::fedavg: return Algorithm::fedavg();
    case AlgorithmKind::fedprox: return Algorithm::fedprox(a.mu_prox);
    case AlgorithmKind::freeze: return Algorithm::freeze();
    case AlgorithmKind::univarfl: {
      const auto c = univarfl_coefficients(config_classes(cfg), a.mu, a.lambda, a.epsilon);
      return Algorithm::univarfl(c.mu, c.lambda, c.epsilon);
    }
  }
  throw std::logic_error("resolve_algorithm: unhandled kind");
}

std::string canonical_text(const ExperimentConfig& cfg) {
  std::map<std::string, std::string> kv;
  const auto& m = cfg.model;
  kv["model.encoder"] = join_counts(m.encoder_widths);
  kv["model.projector"] = std::to_string(m.projector_width);
  kv["model.feature_dim"] = std::to_string(m.feature_dim);
  kv["model.norm"] = m.normalization == Normalization::batch_standardize ? "batch" : "none";
  kv["model.he_features"] = m.he_source == FeatureSource::post_projector ? "post" : "pre";

  const auto& a = cfg.algo;
  kv["algo.kind"] = std::string(to_string(a.kind));
  const auto coeffs = univarfl_coefficients(config_classes(cfg), a.mu, a.lambda, a.epsilon);
  kv["algo.mu"] = format_real(coeffs.mu);
  kv["algo.lambda"] = format_real(coeffs.lambda);
  kv["algo.mu_prox"] = format_real(a.mu_prox);
  kv["algo.epsilon"] = format_real(a.epsilon);

  const auto& d = cfg.data;
  if (d.source == DataSource::synthetic) {
    kv["data.source"] = "synthetic";
    kv["data.classes"] = std::to_string(d.synthetic.classes);
    kv["data.input_dim"] = std::to_string(d.synthetic.input_dim);
    kv["data.per_class"] = std::to_string(d.synthetic.per_class);
    kv["data.scale"] = format_real(d.synthetic.center_scale);
    kv["data.sigma"] = format_real(d.synthetic.noise_sigma);
    kv["data.confusability"] = format_real(d.synthetic.confusability);
    kv["data.test_per_class"] = std::to_string(d.test_per_class);
    kv["data.seed"] = std::to_string(d.task_seed);
  } else {
    kv["data.source"] = "idx";
    kv["data.train_images"] = quoted(d.train_images);
    kv["data.train_labels"] = quoted(d.train_labels);
    kv["data.test_images"] = quoted(d.test_images);
    kv["data.test_labels"] = quoted(d.test_labels);
  }
  kv["data.partition"] = d.partition == PartitionKind::dirichlet ? "dirichlet" : "feature_shift";
  kv["data.alpha"] = format_real(d.alpha);
  kv["data.shift_strength"] = format_real(d.shift.rotation_strength);
  kv["data.shift_bias"] = format_real(d.shift.bias_scale);
  kv["data.shift_noise"] = format_real(d.shift.noise_scale);
  kv["data.train_fraction"] = format_real(d.train_fraction);

  const auto& f = cfg.fed;
  kv["fed.clients"] = std::to_string(f.clients);
  kv["fed.rounds"] = std::to_string(f.rounds);
  kv["fed.epochs"] = std::to_string(f.epochs);
  kv["fed.rho"] = format_real(f.rho);
  kv["fed.batch"] = std::to_string(f.batch_size);
  kv["fed.weighting"] = f.weighting == Weighting::by_samples ? "samples" : "uniform";
  kv["fed.spectrum_every"] = std::to_string(cfg.spectrum_every);
  kv["opt.lr"] = format_real(f.optimizer.learning_rate);
  kv["opt.momentum"] = format_real(f.optimizer.momentum);
  kv["opt.weight_decay"] = format_real(f.optimizer.weight_decay);

  std::vector<std::size_t> seeds(cfg.seeds.begin(), cfg.seeds.end());
  kv["seeds"] = join_counts(seeds);
  kv["out_dir"] = quoted(cfg.out_dir);

  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

std::uint64_t config_digest(const ExperimentConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  std::istringstream in(canonical_text(cfg));
  std::string line;
  while (std::getline(in, line)) {
    if (line.starts_with("out_dir ")) continue;
    for (unsigned char ch : line + "\n") {
      h ^= ch;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

std::string digest_hex(std::uint64_t digest) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(digest));
  return buf;
}

}  // namespace univarfl
