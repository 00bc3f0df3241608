#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "univarfl/model.hpp"
#include "univarfl/numeric.hpp"

namespace univarfl {

// Per-term values of the local objective. `prox` already carries its
// mu_prox / 2 factor; total = ce + mu * he + lambda * var + prox.
struct LossBreakdown {
  double ce = 0.0;
  double he = 0.0;
  double var = 0.0;
  double prox = 0.0;
  double total = 0.0;
  double mu = 0.0;
  double lambda = 0.0;
  double mu_prox = 0.0;
};

struct VarianceFloor {
  std::size_t classes = 0;
  double c = 0.0;
};

inline constexpr double kDefaultEnergyEpsilon = 1e-4;
inline constexpr double kDefaultMu = 0.5;

struct Coefficients {
  double mu = 0.0;
  double lambda = 0.0;
  double mu_prox = 0.0;
  double epsilon = kDefaultEnergyEpsilon;
};

// Fills unset UniVarFL coefficients: mu = 0.5, lambda = D / 4.
Coefficients univarfl_coefficients(std::size_t classes, std::optional<double> mu = std::nullopt,
                                   std::optional<double> lambda = std::nullopt,
                                   double epsilon = kDefaultEnergyEpsilon);

// Mean population variance of the columns of the D x D identity.
VarianceFloor variance_threshold(std::size_t classes);

struct MatrixLoss {
  double loss = 0.0;
  Matrix grad;
};

struct VectorLoss {
  double loss = 0.0;
  std::vector<double> grad;
};

// (1/D) sum_j max(0, c - Var_pop(P^j)); gradient w.r.t. P.
MatrixLoss variance_regularizer(const Matrix& P, const VarianceFloor& floor);

// (1/n^2) sum_{i != j} 1 / (1 - z_i.z_j + eps); gradient w.r.t. Z.
MatrixLoss hyperspherical_energy(const Matrix& Z, double epsilon);

// -(1/n) sum log P_{i,y_i}; gradient w.r.t. logits, (P - onehot) / n.
MatrixLoss cross_entropy(const Matrix& P, std::span<const int> labels);

// (mu_prox / 2) |theta - theta_g|^2 over trainable entries.
VectorLoss proximal_term(const ParamVector& theta, const ParamVector& theta_global, double mu_prox);

struct CompositeResult {
  LossBreakdown breakdown;
  HeadGrads heads;
  // Proximal gradient in parameter space; empty when mu_prox == 0.
  std::vector<double> direct;
};

// Cross-entropy plus weighted energy and variance terms and the optional
// proximal term. Energy and variance values are always reported; their
// gradients are produced only for nonzero coefficients.
CompositeResult composite_loss(const ForwardTrace& trace, std::span<const int> labels,
                               const Coefficients& coeffs, const VarianceFloor& floor,
                               FeatureSource source, const ParamVector& theta,
                               const ParamVector* theta_global);

}  // namespace univarfl
