#include "univarfl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

#include "univarfl/objectives.hpp"
#include "univarfl/rng.hpp"

namespace univarfl {

namespace {

std::vector<double> central_differences(std::vector<double> x, double h,
                                        const std::function<double(const std::vector<double>&)>& f,
                                        const std::vector<char>* mask = nullptr) {
  std::vector<double> g(x.size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (mask != nullptr && !(*mask)[i]) continue;
    const double orig = x[i];
    x[i] = orig + h;
    const double up = f(x);
    x[i] = orig - h;
    const double down = f(x);
    x[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

Matrix gaussian(std::size_t rows, std::size_t cols, RngStream& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (auto& v : m.data) v = scale * rng.normal();
  return m;
}

std::vector<int> random_labels(std::size_t n, std::size_t classes, RngStream& rng) {
  std::vector<int> y(n);
  for (auto& v : y) v = static_cast<int>(rng.below(classes));
  return y;
}

bool well_conditioned(const ParamVector& params, const ForwardTrace& tr, double margin) {
  const ModelSpec& spec = params.spec();
  auto clear = [&](double v) { return std::abs(v) >= margin; };
  for (std::size_t l = 0; l < spec.encoder_widths.size(); ++l) {
    const std::string prefix = "encoder." + std::to_string(l) + ".";
    const Matrix pre = matmul_bt(tr.layer_inputs[l], params.tensor_matrix(prefix + "weight"));
    const auto bias = params.tensor(prefix + "bias");
    for (std::size_t r = 0; r < pre.rows; ++r)
      for (std::size_t c = 0; c < pre.cols; ++c)
        if (!clear(pre(r, c) + bias[c])) return false;
  }
  if (spec.normalization == Normalization::batch_standardize) {
    const auto scale = params.tensor("projector.bn.scale");
    const auto shift = params.tensor("projector.bn.shift");
    for (std::size_t r = 0; r < tr.projector_hat.rows; ++r)
      for (std::size_t c = 0; c < tr.projector_hat.cols; ++c)
        if (!clear(scale[c] * tr.projector_hat(r, c) + shift[c])) return false;
  } else {
    for (double v : tr.projector_pre.data)
      if (!clear(v)) return false;
  }
  for (std::size_t i = 0; i < tr.Z.rows; ++i)
    for (std::size_t j = i + 1; j < tr.Z.rows; ++j)
      if (dot(tr.Z.row(i), tr.Z.row(j)) > 0.9) return false;
  return true;
}

// Random model with batch-standardization and bias parameters moved off
// their initial values.
ParamVector probe_model(const ModelSpec& spec, const RngStream& root, std::uint64_t attempt) {
  ParamVector theta = init_model(spec, derive_stream(root, {4, attempt}));
  RngStream rng = derive_stream(root, {5, attempt});
  for (const auto& t : theta.layout->tensors()) {
    if (!t.trainable) continue;
    if (t.name.ends_with(".bias") || t.name.ends_with(".shift")) {
      for (auto& v : theta.tensor(t.name)) v = 0.3 * rng.normal();
    } else if (t.name.ends_with(".scale")) {
      for (auto& v : theta.tensor(t.name)) v = 1.0 + 0.3 * rng.normal();
    }
  }
  return theta;
}

GradcheckTerm finish(std::string name, std::vector<double> analytic, const std::vector<double>& numeric,
                     const GradcheckOptions& opt) {
  if (opt.fault == name)
    for (auto& v : analytic) v = -v;
  GradcheckTerm t;
  t.name = std::move(name);
  t.comparison = compare_gradients(analytic, numeric, opt.small);
  t.passed = t.comparison.max_rel_error < opt.tolerance && t.comparison.max_abs_error < opt.small;
  return t;
}

}  // namespace

GradientComparison compare_gradients(std::span<const double> analytic, std::span<const double> numeric,
                                     double small) {
  if (analytic.size() != numeric.size()) throw std::invalid_argument("compare_gradients: length mismatch");
  GradientComparison c;
  c.entries = analytic.size();
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i];
    const double n = numeric[i];
    const double scale = std::max(std::abs(a), std::abs(n));
    const double diff = std::abs(a - n);
    if (!std::isfinite(diff)) {
      c.max_rel_error = INFINITY;
    } else if (scale >= small) {
      if (diff / scale > c.max_rel_error) {
        c.max_rel_error = diff / scale;
        c.worst = i;
        c.worst_analytic = a;
        c.worst_numeric = n;
      }
    } else {
      c.max_abs_error = std::max(c.max_abs_error, diff);
    }
  }
  return c;
}

std::vector<GradcheckTerm> run_gradcheck(const GradcheckOptions& opt) {
  const ModelSpec& spec = opt.model;
  spec.validate();
  if (!opt.fault.empty() && opt.fault != "ce" && opt.fault != "he" && opt.fault != "var" && opt.fault != "prox" &&
      opt.fault != "composite")
    throw std::invalid_argument("gradcheck: unknown fault term '" + opt.fault + "'");
  const std::size_t n = opt.batch;
  const std::size_t classes = spec.classes;
  const RngStream root(opt.seed);
  std::vector<GradcheckTerm> terms;

  {
    RngStream rng = derive_stream(root, {1});
    const Matrix logits = gaussian(n, classes, rng);
    const auto y = random_labels(n, classes, rng);
    auto f = [&](const std::vector<double>& v) {
      return cross_entropy(softmax_rows(Matrix(n, classes, v)), y).loss;
    };
    const auto analytic = cross_entropy(softmax_rows(logits), y).grad.data;
    terms.push_back(finish("ce", analytic, central_differences(logits.data, opt.step, f), opt));
  }
  {
    RngStream rng = derive_stream(root, {2});
    const Matrix u = gaussian(n, spec.feature_dim, rng);
    auto f = [&](const std::vector<double>& v) {
      std::vector<double> norms;
      return hyperspherical_energy(normalize_rows(Matrix(n, spec.feature_dim, v), norms), kDefaultEnergyEpsilon).loss;
    };
    std::vector<double> norms;
    const Matrix z = normalize_rows(u, norms);
    const auto he = hyperspherical_energy(z, kDefaultEnergyEpsilon);
    const auto analytic = normalize_rows_backward(z, norms, he.grad).data;
    terms.push_back(finish("he", analytic, central_differences(u.data, opt.step, f), opt));
  }
  {
    RngStream rng = derive_stream(root, {3});
    const Matrix logits = gaussian(n, classes, rng);
    const VarianceFloor floor = variance_threshold(classes);
    auto f = [&](const std::vector<double>& v) {
      return variance_regularizer(softmax_rows(Matrix(n, classes, v)), floor).loss;
    };
    const Matrix P = softmax_rows(logits);
    const auto analytic = softmax_rows_backward(P, variance_regularizer(P, floor).grad).data;
    terms.push_back(finish("var", analytic, central_differences(logits.data, opt.step, f), opt));
  }

  ParamVector theta = probe_model(spec, root, 0);
  ParamVector theta_global = theta;
  {
    RngStream rng = derive_stream(root, {6});
    for (auto& v : theta_global.values) v += 0.5 * rng.normal();
  }
  const auto& mask = theta.layout->trainable_mask();
  {
    const double mu_prox = 0.7;
    auto f = [&](const std::vector<double>& v) {
      return proximal_term(ParamVector{theta.layout, v}, theta_global, mu_prox).loss;
    };
    const auto analytic = proximal_term(theta, theta_global, mu_prox).grad;
    terms.push_back(finish("prox", analytic, central_differences(theta.values, opt.step, f, &mask), opt));
  }
  {
    // Redraw model and batch until finite differences are meaningful: no
    // ReLU input within reach of the step, no nearly coincident features.
    Matrix X;
    std::vector<int> y;
    for (std::uint64_t attempt = 0; attempt < 1000; ++attempt) {
      const ParamVector candidate = probe_model(spec, root, attempt);
      RngStream rng = derive_stream(root, {7, attempt});
      X = gaussian(n, spec.input_dim, rng);
      y = random_labels(n, classes, rng);
      if (well_conditioned(candidate, forward(candidate, X, Mode::train), 100.0 * opt.step)) {
        for (std::size_t i = 0; i < theta.size(); ++i) theta_global.values[i] += candidate.values[i] - theta.values[i];
        theta = candidate;
        break;
      }
    }
    Coefficients coeffs = univarfl_coefficients(classes);
    coeffs.mu_prox = 0.1;
    const VarianceFloor floor = variance_threshold(classes);
    auto f = [&](const std::vector<double>& v) {
      const ParamVector p{theta.layout, v};
      const auto trace = forward(p, X, Mode::train);
      return composite_loss(trace, y, coeffs, floor, spec.he_source, p, &theta_global).breakdown.total;
    };
    const auto trace = forward(theta, X, Mode::train);
    const auto res = composite_loss(trace, y, coeffs, floor, spec.he_source, theta, &theta_global);
    auto analytic = backward(theta, trace, res.heads).values;
    for (std::size_t i = 0; i < analytic.size(); ++i) analytic[i] += res.direct[i];
    terms.push_back(finish("composite", analytic, central_differences(theta.values, opt.step, f, &mask), opt));
  }
  return terms;
}

}  // namespace univarfl
