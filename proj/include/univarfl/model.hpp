#pragma once

#include <cstddef>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "univarfl/numeric.hpp"
#include "univarfl/rng.hpp"

namespace univarfl {

enum class Normalization { batch_standardize, none };

// Which representation the hyperspherical energy acts on.
enum class FeatureSource { post_projector, pre_projector };

// Encoder (ReLU MLP) -> projector (linear, batch-standardize, ReLU, linear)
// -> l2 normalization -> linear classifier -> softmax.
struct ModelSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> encoder_widths;
  std::size_t projector_width = 0;
  std::size_t feature_dim = 0;
  std::size_t classes = 0;
  Normalization normalization = Normalization::batch_standardize;
  bool classifier_frozen = false;
  FeatureSource he_source = FeatureSource::post_projector;

  void validate() const;
  std::size_t encoder_output_dim() const {
    return encoder_widths.empty() ? input_dim : encoder_widths.back();
  }
  bool operator==(const ModelSpec&) const = default;
};

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kRunningStatMomentum = 0.1;

struct TensorInfo {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t offset = 0;
  // False for buffers (running statistics) and frozen tensors.
  bool trainable = true;

  std::size_t size() const { return rows * cols; }
};

class ParamLayout {
 public:
  explicit ParamLayout(const ModelSpec& spec);

  const ModelSpec& spec() const { return spec_; }
  const std::vector<TensorInfo>& tensors() const { return tensors_; }
  std::size_t size() const { return size_; }
  const TensorInfo& find(std::string_view name) const;
  bool has(std::string_view name) const;
  // Per-entry flag; entries with false never move under optimizer steps.
  const std::vector<char>& trainable_mask() const { return trainable_; }

 private:
  ModelSpec spec_;
  std::vector<TensorInfo> tensors_;
  std::vector<char> trainable_;
  std::size_t size_ = 0;
};

/// Flat, ordered parameter vector; the unit of broadcast and aggregation.
struct ParamVector {
  std::shared_ptr<const ParamLayout> layout;
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  const ModelSpec& spec() const { return layout->spec(); }
  bool trainable(std::size_t i) const { return layout->trainable_mask()[i] != 0; }

  std::span<double> tensor(std::string_view name);
  std::span<const double> tensor(std::string_view name) const;
  Matrix tensor_matrix(std::string_view name) const;

  ParamVector zeros_like() const { return {layout, std::vector<double>(values.size(), 0.0)}; }
  bool operator==(const ParamVector& other) const { return values == other.values; }
};

std::shared_ptr<const ParamLayout> make_layout(const ModelSpec& spec);

// Uniform +-sqrt(6 / fan_in) weights, zero biases. A frozen classifier gets
// orthonormal rows (or columns when classes > feature_dim) from a QR.
ParamVector init_model(const ModelSpec& spec, const RngStream& rng);

enum class Mode { train, eval };

struct ForwardTrace {
  Mode mode = Mode::train;
  // layer_inputs[l] is the input of encoder layer l; encoder_outputs[l] its ReLU output.
  std::vector<Matrix> layer_inputs;
  std::vector<Matrix> encoder_outputs;
  Matrix encoded;
  Matrix projector_pre;
  // Statistics used for standardization: batch values in train mode, running in eval.
  std::vector<double> norm_mean;
  std::vector<double> norm_var;
  Matrix projector_hat;
  Matrix projector_act;
  Matrix projected;
  std::vector<double> projected_norms;
  Matrix Z;
  // Unit-normalized encoder output; filled only for pre-projector energy.
  Matrix H;
  std::vector<double> encoded_norms;
  Matrix logits;
  Matrix P;

  std::size_t batch_size() const { return P.rows; }
  // Features the hyperspherical energy acts on.
  const Matrix& he_features(FeatureSource source) const {
    return source == FeatureSource::post_projector ? Z : H;
  }
};

ForwardTrace forward(const ParamVector& params, const Matrix& batch, Mode mode);

// Upstream gradients at the model heads; an empty matrix means zero.
struct HeadGrads {
  Matrix dlogits;
  Matrix dP;
  Matrix dZ;
  Matrix dH;
};

ParamVector backward(const ParamVector& params, const ForwardTrace& trace, const HeadGrads& heads);
ParamVector backward(const ParamVector& params, const ForwardTrace& trace, const Matrix& dL_dP,
                     const Matrix& dL_dZ);

// Folds the batch statistics of a train-mode trace into the running statistics.
void update_running_stats(ParamVector& params, const ForwardTrace& trace,
                          double momentum = kRunningStatMomentum);

struct OptimizerSettings {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-5;
  bool operator==(const OptimizerSettings&) const = default;
};

struct OptimizerState {
  OptimizerSettings settings;
  std::vector<double> velocity;
};

OptimizerState make_optimizer(const ParamVector& params, const OptimizerSettings& settings);

// v <- m v + (g + wd theta); theta <- theta - lr v, on trainable entries only.
void sgd_step(ParamVector& params, const ParamVector& grads, OptimizerState& state);

// Little-endian layout header followed by float64 values.
void write_params(std::ostream& out, const ParamVector& params);
ParamVector read_params(std::istream& in, const ModelSpec& spec);

}  // namespace univarfl
