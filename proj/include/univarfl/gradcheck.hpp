#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "univarfl/model.hpp"

namespace univarfl {

struct GradientComparison {
  // Largest |a - n| / max(|a|, |n|) over entries with max(|a|, |n|) >= small.
  double max_rel_error = 0.0;
  // Largest |a - n| over the remaining entries.
  double max_abs_error = 0.0;
  std::size_t entries = 0;
  // Entry behind max_rel_error.
  std::size_t worst = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

GradientComparison compare_gradients(std::span<const double> analytic, std::span<const double> numeric,
                                     double small = 1e-8);

struct GradcheckOptions {
  std::uint64_t seed = 1;
  double step = 1e-5;
  double tolerance = 1e-5;
  double small = 1e-8;
  std::size_t batch = 5;
  // Encoder 3 -> 4, projector 4 -> 4, two classes.
  ModelSpec model{3, {4}, 4, 4, 2, Normalization::batch_standardize, false, FeatureSource::post_projector};
  // Test hook: negates the analytic gradient of this term in its own check.
  std::string fault;
};

struct GradcheckTerm {
  std::string name;
  GradientComparison comparison;
  bool passed = false;
};

// Central finite differences for ce, he, var, prox and the composite
// objective through the full model, in that order.
std::vector<GradcheckTerm> run_gradcheck(const GradcheckOptions& options);

}  // namespace univarfl
