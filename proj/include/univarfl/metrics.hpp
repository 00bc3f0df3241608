#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "univarfl/data.hpp"
#include "univarfl/federation.hpp"
#include "univarfl/model.hpp"

namespace univarfl {

// Argmax accuracy in eval mode; ties go to the lowest class index.
double evaluate_accuracy(const ParamVector& params, const Dataset& test);

struct SpectrumReport {
  std::vector<double> sigma;
  std::vector<double> normalized;
  double entropy = 0.0;
};

// Entropy of p_i = sigma_i^2 / sum sigma_j^2.
double spectral_entropy(const std::vector<double>& sigma);

// Spectrum of the classifier weight matrix (bias excluded).
SpectrumReport classifier_spectrum(const ParamVector& params);

struct MetricsTable {
  std::vector<RoundRecord> records;
  // Free-form run metadata (config digest, seed, algorithm, alpha, rho).
  std::map<std::string, std::string> metadata;

  void validate() const;
};

inline constexpr const char* kMetricsHeader =
    "round,participants,accuracy,loss_ce,loss_he,loss_var,loss_total,grad_sq_norm";
inline constexpr const char* kSpectrumHeader = "run_label,rank,sigma,sigma_normalized";

// Round-trip safe decimal form of a double.
std::string format_real(double v);

void write_metrics_csv(const MetricsTable& table, const std::filesystem::path& path);
// Parses a file written by write_metrics_csv.
std::vector<RoundRecord> read_metrics_csv(const std::filesystem::path& path);

struct LabeledSpectrum {
  std::string label;
  SpectrumReport report;
};

void write_spectrum_csv(const std::vector<LabeledSpectrum>& spectra, const std::filesystem::path& path);

// Writes text with '\n' line endings; throws with the path on failure.
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace univarfl
