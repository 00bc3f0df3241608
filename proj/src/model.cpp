#include "univarfl/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace univarfl {

namespace {

std::string encoder_name(std::size_t layer, const char* part) {
  return "encoder." + std::to_string(layer) + "." + part;
}

void add_bias_rows(Matrix& m, std::span<const double> bias) {
  for (std::size_t r = 0; r < m.rows; ++r) {
    auto row = m.row(r);
    for (std::size_t c = 0; c < m.cols; ++c) row[c] += bias[c];
  }
}

// y = x W^T + b, with W stored out x in.
Matrix affine(const Matrix& x, const ParamVector& p, const std::string& weight,
              const std::string* bias) {
  Matrix y = matmul_bt(x, p.tensor_matrix(weight));
  if (bias != nullptr) add_bias_rows(y, p.tensor(*bias));
  return y;
}

void relu_inplace(Matrix& m) {
  for (auto& v : m.data) v = v > 0.0 ? v : 0.0;
}

void accumulate(Matrix& into, const Matrix& add) {
  if (add.empty()) return;
  if (into.rows != add.rows || into.cols != add.cols)
    throw std::invalid_argument("backward: upstream gradient shape mismatch");
  for (std::size_t i = 0; i < into.data.size(); ++i) into.data[i] += add.data[i];
}

void check_shape(const Matrix& m, std::size_t rows, std::size_t cols, const char* what) {
  if (m.empty()) return;
  if (m.rows != rows || m.cols != cols)
    throw std::invalid_argument(std::string("backward: ") + what + " has wrong shape");
}

// dW = dy^T x (out x in), db = column sums of dy.
void linear_grads(ParamVector& grads, const Matrix& dy, const Matrix& x, const std::string& weight,
                  const std::string* bias) {
  const Matrix dw = matmul_at(dy, x);
  auto w = grads.tensor(weight);
  std::copy(dw.data.begin(), dw.data.end(), w.begin());
  if (bias != nullptr) {
    const auto db = column_sums(dy);
    auto b = grads.tensor(*bias);
    std::copy(db.begin(), db.end(), b.begin());
  }
}

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, 8);
}

std::uint64_t get_le(std::istream& in, int bytes) {
  unsigned char b[8] = {};
  in.read(reinterpret_cast<char*>(b), bytes);
  if (!in) throw std::runtime_error("read_params: truncated input");
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

const std::string kFc1W = "projector.fc1.weight";
const std::string kFc1B = "projector.fc1.bias";
const std::string kBnScale = "projector.bn.scale";
const std::string kBnShift = "projector.bn.shift";
const std::string kBnMean = "projector.bn.running_mean";
const std::string kBnVar = "projector.bn.running_var";
const std::string kFc2W = "projector.fc2.weight";
const std::string kFc2B = "projector.fc2.bias";
const std::string kClsW = "classifier.weight";
const std::string kClsB = "classifier.bias";

}  // namespace

void ModelSpec::validate() const {
  if (input_dim == 0) throw std::invalid_argument("ModelSpec: input_dim must be >= 1");
  for (auto w : encoder_widths)
    if (w == 0) throw std::invalid_argument("ModelSpec: encoder widths must be >= 1");
  if (projector_width == 0) throw std::invalid_argument("ModelSpec: projector width must be >= 1");
  if (feature_dim == 0) throw std::invalid_argument("ModelSpec: feature_dim must be >= 1");
  if (classes < 2) throw std::invalid_argument("ModelSpec: need at least 2 classes");
}

ParamLayout::ParamLayout(const ModelSpec& spec) : spec_(spec) {
  spec_.validate();
  auto add = [this](std::string name, std::size_t rows, std::size_t cols, bool trainable) {
    tensors_.push_back({std::move(name), rows, cols, size_, trainable});
    size_ += rows * cols;
  };
  std::size_t prev = spec.input_dim;
  for (std::size_t l = 0; l < spec.encoder_widths.size(); ++l) {
    const std::size_t w = spec.encoder_widths[l];
    add(encoder_name(l, "weight"), w, prev, true);
    add(encoder_name(l, "bias"), 1, w, true);
    prev = w;
  }
  const std::size_t p = spec.projector_width;
  add(kFc1W, p, prev, true);
  if (spec.normalization == Normalization::batch_standardize) {
    // A bias before standardization is cancelled by the mean; omitted.
    add(kBnScale, 1, p, true);
    add(kBnShift, 1, p, true);
    add(kBnMean, 1, p, false);
    add(kBnVar, 1, p, false);
  } else {
    add(kFc1B, 1, p, true);
  }
  add(kFc2W, spec.feature_dim, p, true);
  add(kFc2B, 1, spec.feature_dim, true);
  add(kClsW, spec.classes, spec.feature_dim, !spec.classifier_frozen);
  add(kClsB, 1, spec.classes, !spec.classifier_frozen);

  trainable_.assign(size_, 0);
  for (const auto& t : tensors_)
    std::fill_n(trainable_.begin() + static_cast<std::ptrdiff_t>(t.offset), t.size(),
                static_cast<char>(t.trainable));
}

const TensorInfo& ParamLayout::find(std::string_view name) const {
  for (const auto& t : tensors_)
    if (t.name == name) return t;
  throw std::out_of_range("ParamLayout: no tensor named " + std::string(name));
}

bool ParamLayout::has(std::string_view name) const {
  return std::any_of(tensors_.begin(), tensors_.end(), [&](const auto& t) { return t.name == name; });
}

std::span<double> ParamVector::tensor(std::string_view name) {
  const auto& t = layout->find(name);
  return {values.data() + t.offset, t.size()};
}

std::span<const double> ParamVector::tensor(std::string_view name) const {
  const auto& t = layout->find(name);
  return {values.data() + t.offset, t.size()};
}

Matrix ParamVector::tensor_matrix(std::string_view name) const {
  const auto& t = layout->find(name);
  const auto first = values.begin() + static_cast<std::ptrdiff_t>(t.offset);
  return Matrix(t.rows, t.cols, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(t.size())));
}

std::shared_ptr<const ParamLayout> make_layout(const ModelSpec& spec) {
  return std::make_shared<const ParamLayout>(spec);
}

ParamVector init_model(const ModelSpec& spec, const RngStream& rng) {
  ParamVector params{make_layout(spec), {}};
  params.values.assign(params.layout->size(), 0.0);
  const auto& tensors = params.layout->tensors();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& t = tensors[i];
    auto values = params.tensor(t.name);
    RngStream stream = derive_stream(rng, {i});
    if (t.name == kClsW && spec.classifier_frozen) {
      const Matrix q = random_orthonormal(t.rows, t.cols, stream);
      std::copy(q.data.begin(), q.data.end(), values.begin());
    } else if (t.name == kBnScale || t.name == kBnVar) {
      std::fill(values.begin(), values.end(), 1.0);
    } else if (t.name.ends_with(".weight")) {
      const double bound = std::sqrt(6.0 / static_cast<double>(t.cols));
      for (auto& v : values) v = (2.0 * stream.uniform() - 1.0) * bound;
    }
  }
  return params;
}

ForwardTrace forward(const ParamVector& params, const Matrix& batch, Mode mode) {
  const ModelSpec& spec = params.spec();
  if (batch.cols != spec.input_dim) throw std::invalid_argument("forward: batch width != input_dim");
  if (batch.rows == 0) throw std::invalid_argument("forward: empty batch");
  const bool standardize = spec.normalization == Normalization::batch_standardize;
  if (mode == Mode::train && standardize && batch.rows < 2)
    throw std::invalid_argument("forward: train mode with batch standardization needs n >= 2");

  ForwardTrace tr;
  tr.mode = mode;
  Matrix h = batch;
  for (std::size_t l = 0; l < spec.encoder_widths.size(); ++l) {
    const std::string b = encoder_name(l, "bias");
    Matrix out = affine(h, params, encoder_name(l, "weight"), &b);
    relu_inplace(out);
    tr.layer_inputs.push_back(std::move(h));
    h = out;
    tr.encoder_outputs.push_back(std::move(out));
  }
  tr.encoded = std::move(h);
  if (spec.he_source == FeatureSource::pre_projector) tr.H = normalize_rows(tr.encoded, tr.encoded_norms);

  const std::size_t n = batch.rows;
  const std::size_t p = spec.projector_width;
  if (standardize) {
    tr.projector_pre = affine(tr.encoded, params, kFc1W, nullptr);
    if (mode == Mode::train) {
      tr.norm_mean = column_sums(tr.projector_pre);
      for (auto& m : tr.norm_mean) m /= static_cast<double>(n);
      tr.norm_var = column_variance(tr.projector_pre, VarianceEstimator::population);
    } else {
      const auto rm = params.tensor(kBnMean);
      const auto rv = params.tensor(kBnVar);
      tr.norm_mean.assign(rm.begin(), rm.end());
      tr.norm_var.assign(rv.begin(), rv.end());
    }
    const auto scale = params.tensor(kBnScale);
    const auto shift = params.tensor(kBnShift);
    tr.projector_hat = Matrix(n, p);
    tr.projector_act = Matrix(n, p);
    for (std::size_t j = 0; j < p; ++j) {
      const double inv = 1.0 / std::sqrt(tr.norm_var[j] + kBatchNormEpsilon);
      for (std::size_t i = 0; i < n; ++i) {
        const double hat = (tr.projector_pre(i, j) - tr.norm_mean[j]) * inv;
        tr.projector_hat(i, j) = hat;
        tr.projector_act(i, j) = scale[j] * hat + shift[j];
      }
    }
  } else {
    tr.projector_pre = affine(tr.encoded, params, kFc1W, &kFc1B);
    tr.projector_act = tr.projector_pre;
  }
  relu_inplace(tr.projector_act);
  tr.projected = affine(tr.projector_act, params, kFc2W, &kFc2B);
  tr.Z = normalize_rows(tr.projected, tr.projected_norms);
  tr.logits = affine(tr.Z, params, kClsW, &kClsB);
  tr.P = softmax_rows(tr.logits);
  return tr;
}

ParamVector backward(const ParamVector& params, const ForwardTrace& tr, const HeadGrads& heads) {
  const ModelSpec& spec = params.spec();
  const std::size_t n = tr.batch_size();
  check_shape(heads.dlogits, n, spec.classes, "dL/dlogits");
  check_shape(heads.dP, n, spec.classes, "dL/dP");
  check_shape(heads.dZ, n, spec.feature_dim, "dL/dZ");
  check_shape(heads.dH, n, spec.encoder_output_dim(), "dL/dH");
  if (!heads.dH.empty() && spec.he_source != FeatureSource::pre_projector)
    throw std::invalid_argument("backward: dL/dH given but the model has no pre-projector features");

  ParamVector grads = params.zeros_like();

  Matrix dlogits(n, spec.classes);
  accumulate(dlogits, heads.dlogits);
  if (!heads.dP.empty()) accumulate(dlogits, softmax_rows_backward(tr.P, heads.dP));

  linear_grads(grads, dlogits, tr.Z, kClsW, &kClsB);
  Matrix dz = matmul(dlogits, params.tensor_matrix(kClsW));
  accumulate(dz, heads.dZ);
  const Matrix du = normalize_rows_backward(tr.Z, tr.projected_norms, dz);

  linear_grads(grads, du, tr.projector_act, kFc2W, &kFc2B);
  Matrix dact = matmul(du, params.tensor_matrix(kFc2W));
  for (std::size_t i = 0; i < dact.data.size(); ++i)
    if (tr.projector_act.data[i] <= 0.0) dact.data[i] = 0.0;

  const std::size_t p = spec.projector_width;
  Matrix dpre(n, p);
  if (spec.normalization == Normalization::batch_standardize) {
    const auto scale = params.tensor(kBnScale);
    auto dscale = grads.tensor(kBnScale);
    auto dshift = grads.tensor(kBnShift);
    const double nn = static_cast<double>(n);
    for (std::size_t j = 0; j < p; ++j) {
      const double inv = 1.0 / std::sqrt(tr.norm_var[j] + kBatchNormEpsilon);
      double sum_dhat = 0.0;
      double sum_dhat_hat = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double dy = dact(i, j);
        dscale[j] += dy * tr.projector_hat(i, j);
        dshift[j] += dy;
        const double dhat = dy * scale[j];
        sum_dhat += dhat;
        sum_dhat_hat += dhat * tr.projector_hat(i, j);
      }
      for (std::size_t i = 0; i < n; ++i) {
        const double dhat = dact(i, j) * scale[j];
        if (tr.mode == Mode::train) {
          dpre(i, j) = inv * (dhat - sum_dhat / nn - tr.projector_hat(i, j) * sum_dhat_hat / nn);
        } else {
          dpre(i, j) = inv * dhat;
        }
      }
    }
    linear_grads(grads, dpre, tr.encoded, kFc1W, nullptr);
  } else {
    dpre = std::move(dact);
    linear_grads(grads, dpre, tr.encoded, kFc1W, &kFc1B);
  }

  Matrix dh = matmul(dpre, params.tensor_matrix(kFc1W));
  if (!heads.dH.empty()) accumulate(dh, normalize_rows_backward(tr.H, tr.encoded_norms, heads.dH));

  for (std::size_t l = spec.encoder_widths.size(); l-- > 0;) {
    const Matrix& out = tr.encoder_outputs[l];
    for (std::size_t i = 0; i < dh.data.size(); ++i)
      if (out.data[i] <= 0.0) dh.data[i] = 0.0;
    const std::string w = encoder_name(l, "weight");
    const std::string b = encoder_name(l, "bias");
    linear_grads(grads, dh, tr.layer_inputs[l], w, &b);
    if (l > 0) dh = matmul(dh, params.tensor_matrix(w));
  }

  const auto& mask = params.layout->trainable_mask();
  for (std::size_t i = 0; i < grads.values.size(); ++i)
    if (!mask[i]) grads.values[i] = 0.0;
  return grads;
}

ParamVector backward(const ParamVector& params, const ForwardTrace& trace, const Matrix& dL_dP,
                     const Matrix& dL_dZ) {
  HeadGrads heads;
  heads.dP = dL_dP;
  heads.dZ = dL_dZ;
  return backward(params, trace, heads);
}

void update_running_stats(ParamVector& params, const ForwardTrace& trace, double momentum) {
  if (params.spec().normalization != Normalization::batch_standardize || trace.mode != Mode::train) return;
  auto rm = params.tensor(kBnMean);
  auto rv = params.tensor(kBnVar);
  for (std::size_t j = 0; j < rm.size(); ++j) {
    rm[j] = (1.0 - momentum) * rm[j] + momentum * trace.norm_mean[j];
    rv[j] = (1.0 - momentum) * rv[j] + momentum * trace.norm_var[j];
  }
}

OptimizerState make_optimizer(const ParamVector& params, const OptimizerSettings& settings) {
  return {settings, std::vector<double>(params.size(), 0.0)};
}

void sgd_step(ParamVector& params, const ParamVector& grads, OptimizerState& state) {
  if (grads.size() != params.size() || state.velocity.size() != params.size())
    throw std::invalid_argument("sgd_step: length mismatch");
  const auto& s = state.settings;
  const auto& mask = params.layout->trainable_mask();
  for (std::size_t i = 0; i < params.values.size(); ++i) {
    if (!mask[i]) continue;
    double& v = state.velocity[i];
    v = s.momentum * v + (grads.values[i] + s.weight_decay * params.values[i]);
    params.values[i] -= s.learning_rate * v;
  }
}

void write_params(std::ostream& out, const ParamVector& params) {
  const auto& tensors = params.layout->tensors();
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put_u64(out, t.rows);
    put_u64(out, t.cols);
  }
  for (const double v : params.values) put_u64(out, std::bit_cast<std::uint64_t>(v));
  if (!out) throw std::runtime_error("write_params: stream error");
}

ParamVector read_params(std::istream& in, const ModelSpec& spec) {
  ParamVector params{make_layout(spec), {}};
  const auto& tensors = params.layout->tensors();
  const auto count = get_le(in, 4);
  if (count != tensors.size()) throw std::runtime_error("read_params: tensor count does not match model spec");
  for (const auto& t : tensors) {
    const auto len = get_le(in, 4);
    std::string name(len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(len));
    if (!in) throw std::runtime_error("read_params: truncated input");
    const auto rows = get_le(in, 8);
    const auto cols = get_le(in, 8);
    if (name != t.name || rows != t.rows || cols != t.cols)
      throw std::runtime_error("read_params: layout mismatch at tensor " + t.name);
  }
  params.values.resize(params.layout->size());
  for (auto& v : params.values) v = std::bit_cast<double>(get_le(in, 8));
  return params;
}

}  // namespace univarfl
