#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "univarfl/numeric.hpp"
#include "univarfl/rng.hpp"

namespace univarfl {

struct Dataset {
  Matrix X;
  std::vector<int> y;
  std::size_t classes = 0;
  std::string provenance;

  std::size_t size() const { return y.size(); }
  std::size_t input_dim() const { return X.cols; }
  void validate() const;
};

Dataset subset(const Dataset& ds, std::span<const std::size_t> indices);
// Copies the selected rows into a batch matrix and label vector.
std::pair<Matrix, std::vector<int>> gather(const Dataset& ds, std::span<const std::size_t> indices);
std::vector<std::size_t> class_histogram(const Dataset& ds);

struct SyntheticTaskSpec {
  std::size_t classes = 10;
  std::size_t input_dim = 32;
  std::size_t per_class = 200;
  double center_scale = 2.0;
  double noise_sigma = 0.7;
  // In [0, 1): pulls each odd class center toward its even neighbour.
  double confusability = 0.0;

  void validate() const;
};

// Class centers: random unit directions times the scale. Depends only on
// the stream's (seed, stream id), so train and test splits share centers.
Matrix synthetic_centers(const SyntheticTaskSpec& spec, const RngStream& rng);

// Gaussian mixture with exactly per_class samples per class, rows ordered
// by class. `split` selects an independent sample set with the same centers.
Dataset generate_synthetic(const SyntheticTaskSpec& spec, const RngStream& rng,
                           std::uint64_t split = 0);

struct Partition {
  std::size_t clients = 0;
  std::vector<std::vector<std::size_t>> assignment;
  std::vector<std::vector<std::size_t>> histograms;

  std::size_t total() const;
};

Partition make_partition(const Dataset& ds, std::vector<std::vector<std::size_t>> assignment);

// Per class, proportions over clients from Dir(alpha), largest-remainder
// rounding; empty clients then take one sample from the largest client.
Partition dirichlet_partition(const Dataset& ds, std::size_t clients, double alpha,
                              const RngStream& rng);

struct ShiftSpec {
  // Cayley-transform scale of a random skew-symmetric generator; 0 = identity.
  double rotation_strength = 1.0;
  double bias_scale = 0.5;
  // Per-sample Gaussian noise added after the transform.
  double noise_scale = 0.0;
};

// x -> Q x + b with Q orthogonal.
struct DomainTransform {
  Matrix rotation;
  std::vector<double> bias;

  Matrix apply(const Matrix& X) const;
  Matrix invert(const Matrix& X) const;
};

DomainTransform make_domain_transform(std::size_t dim, const ShiftSpec& shift, const RngStream& rng);

struct FeatureShiftResult {
  Partition partition;
  std::vector<DomainTransform> transforms;
  std::vector<Dataset> views;
};

// IID split across clients; client k sees its samples through transform k.
FeatureShiftResult feature_shift_partition(const Dataset& ds, std::size_t clients,
                                           const ShiftSpec& shift, const RngStream& rng);

// Test rows assigned round-robin to domains and transformed accordingly.
Dataset apply_domains(const Dataset& ds, const std::vector<DomainTransform>& transforms);

// Stratified split; sizes per class are round(fraction * n_c), clamped so
// each side keeps at least one sample of each class.
std::pair<Dataset, Dataset> train_val_split(const Dataset& ds, double fraction, const RngStream& rng);
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> train_val_indices(const Dataset& ds,
                                                                                 double fraction,
                                                                                 const RngStream& rng);

// A fresh shuffle of 0..n-1 cut into batches; a final batch smaller than 2 is dropped.
std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size, RngStream& rng);

class IdxError : public std::runtime_error {
 public:
  enum class Kind { io, wrong_magic, truncated, count_mismatch, bad_shape };
  IdxError(Kind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

struct IdxInfo {
  std::size_t count = 0;
  std::size_t input_dim = 0;
  std::size_t classes = 0;
};

// Reads headers and labels only; validates like load_idx.
IdxInfo probe_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

// Pixels scaled to [0, 1]; images flattened row-major. Classes = max label + 1.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

}  // namespace univarfl
