#include "univarfl/objectives.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace univarfl {

Coefficients univarfl_coefficients(std::size_t classes, std::optional<double> mu,
                                   std::optional<double> lambda, double epsilon) {
  Coefficients c;
  c.mu = mu.value_or(kDefaultMu);
  c.lambda = lambda.value_or(static_cast<double>(classes) / 4.0);
  c.epsilon = epsilon;
  return c;
}

VarianceFloor variance_threshold(std::size_t classes) {
  if (classes == 0) throw std::invalid_argument("variance_threshold: class count must be >= 1");
  const auto var = column_variance(Matrix::identity(classes), VarianceEstimator::population);
  double c = 0.0;
  for (double v : var) c += v;
  return {classes, c / static_cast<double>(classes)};
}

MatrixLoss variance_regularizer(const Matrix& P, const VarianceFloor& floor) {
  const std::size_t n = P.rows;
  const std::size_t d = P.cols;
  if (n == 0) throw std::invalid_argument("variance_regularizer: empty batch");
  if (d != floor.classes) throw std::invalid_argument("variance_regularizer: P width != class count");
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (double v : P.row(i)) s += v;
    if (std::abs(s - 1.0) > 1e-6)
      throw std::invalid_argument("variance_regularizer: row " + std::to_string(i) + " does not sum to 1");
  }
  std::vector<double> mean = column_sums(P);
  for (auto& m : mean) m /= static_cast<double>(n);
  const auto var = column_variance(P, VarianceEstimator::population);

  MatrixLoss out{0.0, Matrix(n, d)};
  const double dd = static_cast<double>(d);
  const double scale = -(1.0 / dd) * (2.0 / static_cast<double>(n));
  for (std::size_t j = 0; j < d; ++j) {
    const double gap = floor.c - var[j];
    // Hinge at equality is inactive.
    if (gap <= 0.0) continue;
    out.loss += gap;
    for (std::size_t i = 0; i < n; ++i) out.grad(i, j) = scale * (P(i, j) - mean[j]);
  }
  out.loss /= dd;
  return out;
}

MatrixLoss hyperspherical_energy(const Matrix& Z, double epsilon) {
  const std::size_t n = Z.rows;
  if (n < 2) throw std::invalid_argument("hyperspherical_energy: needs at least 2 features");
  if (!(epsilon > 0.0)) throw std::invalid_argument("hyperspherical_energy: epsilon must be positive");
  for (std::size_t i = 0; i < n; ++i) {
    const double norm = std::sqrt(dot(Z.row(i), Z.row(i)));
    if (std::abs(norm - 1.0) > 1e-6)
      throw std::invalid_argument("hyperspherical_energy: row " + std::to_string(i) + " is not unit norm");
  }
  const double inv_n2 = 1.0 / (static_cast<double>(n) * static_cast<double>(n));
  MatrixLoss out{0.0, Matrix(n, Z.cols)};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double denom = 1.0 - dot(Z.row(i), Z.row(j)) + epsilon;
      const double inv = 1.0 / denom;
      // Pairs (i, j) and (j, i) both count.
      out.loss += 2.0 * inv;
      const double g = 2.0 * inv * inv * inv_n2;
      for (std::size_t c = 0; c < Z.cols; ++c) {
        out.grad(i, c) += g * Z(j, c);
        out.grad(j, c) += g * Z(i, c);
      }
    }
  }
  out.loss *= inv_n2;
  return out;
}

MatrixLoss cross_entropy(const Matrix& P, std::span<const int> labels) {
  const std::size_t n = P.rows;
  if (labels.size() != n) throw std::invalid_argument("cross_entropy: label count != batch size");
  if (n == 0) throw std::invalid_argument("cross_entropy: empty batch");
  MatrixLoss out{0.0, P};
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= P.cols)
      throw std::invalid_argument("cross_entropy: label " + std::to_string(y) + " out of range");
    out.loss -= std::log(P(i, static_cast<std::size_t>(y)));
    out.grad(i, static_cast<std::size_t>(y)) -= 1.0;
  }
  for (auto& g : out.grad.data) g *= inv_n;
  out.loss *= inv_n;
  return out;
}

VectorLoss proximal_term(const ParamVector& theta, const ParamVector& theta_global, double mu_prox) {
  if (theta.size() != theta_global.size()) throw std::invalid_argument("proximal_term: length mismatch");
  VectorLoss out{0.0, std::vector<double>(theta.size(), 0.0)};
  if (mu_prox == 0.0) return out;
  double sq = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    if (!theta.trainable(i)) continue;
    const double d = theta.values[i] - theta_global.values[i];
    sq += d * d;
    out.grad[i] = mu_prox * d;
  }
  out.loss = 0.5 * mu_prox * sq;
  return out;
}

CompositeResult composite_loss(const ForwardTrace& trace, std::span<const int> labels,
                               const Coefficients& coeffs, const VarianceFloor& floor,
                               FeatureSource source, const ParamVector& theta,
                               const ParamVector* theta_global) {
  CompositeResult out;
  auto& b = out.breakdown;
  b.mu = coeffs.mu;
  b.lambda = coeffs.lambda;
  b.mu_prox = coeffs.mu_prox;

  auto ce = cross_entropy(trace.P, labels);
  b.ce = ce.loss;
  out.heads.dlogits = std::move(ce.grad);

  auto var = variance_regularizer(trace.P, floor);
  b.var = var.loss;
  if (coeffs.lambda != 0.0) {
    for (auto& g : var.grad.data) g *= coeffs.lambda;
    out.heads.dP = std::move(var.grad);
  }

  const Matrix& features = trace.he_features(source);
  if (features.rows >= 2) {
    auto he = hyperspherical_energy(features, coeffs.epsilon);
    b.he = he.loss;
    if (coeffs.mu != 0.0) {
      for (auto& g : he.grad.data) g *= coeffs.mu;
      if (source == FeatureSource::post_projector) {
        out.heads.dZ = std::move(he.grad);
      } else {
        out.heads.dH = std::move(he.grad);
      }
    }
  }

  if (coeffs.mu_prox != 0.0) {
    if (theta_global == nullptr) throw std::invalid_argument("composite_loss: proximal term needs global parameters");
    auto prox = proximal_term(theta, *theta_global, coeffs.mu_prox);
    b.prox = prox.loss;
    out.direct = std::move(prox.grad);
  }

  b.total = b.ce + coeffs.mu * b.he + coeffs.lambda * b.var + b.prox;
  return out;
}

}  // namespace univarfl
