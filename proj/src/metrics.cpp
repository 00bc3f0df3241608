#include "univarfl/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace univarfl {

double evaluate_accuracy(const ParamVector& params, const Dataset& test) {
  if (test.size() == 0) throw std::invalid_argument("evaluate_accuracy: empty test set");
  const ForwardTrace trace = forward(params, test.X, Mode::eval);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto row = trace.P.row(i);
    std::size_t best = 0;
    for (std::size_t k = 1; k < row.size(); ++k)
      if (row[k] > row[best]) best = k;
    if (static_cast<int>(best) == test.y[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

double spectral_entropy(const std::vector<double>& sigma) {
  double total = 0.0;
  for (double s : sigma) total += s * s;
  if (total == 0.0) return 0.0;
  double h = 0.0;
  for (double s : sigma) {
    const double p = s * s / total;
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

SpectrumReport classifier_spectrum(const ParamVector& params) {
  SpectrumReport r;
  r.sigma = singular_values(params.tensor_matrix("classifier.weight"));
  const double top = r.sigma.front();
  r.normalized.reserve(r.sigma.size());
  for (double s : r.sigma) r.normalized.push_back(top > 0.0 ? s / top : 0.0);
  r.entropy = spectral_entropy(r.sigma);
  return r;
}

void MetricsTable::validate() const {
  for (std::size_t i = 1; i < records.size(); ++i)
    if (records[i].round != records[i - 1].round + 1)
      throw std::invalid_argument("MetricsTable: round indices must be contiguous and increasing");
}

std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  out.close();
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

void write_metrics_csv(const MetricsTable& table, const std::filesystem::path& path) {
  table.validate();
  std::ostringstream os;
  os << kMetricsHeader << '\n';
  for (const auto& r : table.records) {
    os << r.round << ',';
    for (std::size_t i = 0; i < r.participants.size(); ++i) os << (i ? ";" : "") << r.participants[i];
    os << ',' << format_real(r.accuracy) << ',' << format_real(r.mean_loss.ce) << ','
       << format_real(r.mean_loss.he) << ',' << format_real(r.mean_loss.var) << ','
       << format_real(r.mean_loss.total) << ',' << format_real(r.grad_sq_norm) << '\n';
  }
  write_text_file(path, os.str());
}

std::vector<RoundRecord> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != kMetricsHeader) throw std::runtime_error(path.string() + ": unexpected metrics header");
  std::vector<RoundRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() != 8) throw std::runtime_error(path.string() + ": malformed row");
    RoundRecord r;
    r.round = std::stoul(fields[0]);
    std::stringstream ps(fields[1]);
    while (std::getline(ps, f, ';'))
      if (!f.empty()) r.participants.push_back(std::stoul(f));
    r.accuracy = std::strtod(fields[2].c_str(), nullptr);
    r.mean_loss.ce = std::strtod(fields[3].c_str(), nullptr);
    r.mean_loss.he = std::strtod(fields[4].c_str(), nullptr);
    r.mean_loss.var = std::strtod(fields[5].c_str(), nullptr);
    r.mean_loss.total = std::strtod(fields[6].c_str(), nullptr);
    r.grad_sq_norm = std::strtod(fields[7].c_str(), nullptr);
    out.push_back(std::move(r));
  }
  return out;
}

void write_spectrum_csv(const std::vector<LabeledSpectrum>& spectra, const std::filesystem::path& path) {
  std::ostringstream os;
  os << kSpectrumHeader << '\n';
  for (const auto& s : spectra)
    for (std::size_t i = 0; i < s.report.sigma.size(); ++i)
      os << s.label << ',' << (i + 1) << ',' << format_real(s.report.sigma[i]) << ','
         << format_real(s.report.normalized[i]) << '\n';
  write_text_file(path, os.str());
}

}  // namespace univarfl
