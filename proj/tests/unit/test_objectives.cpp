#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "univarfl/objectives.hpp"

using namespace univarfl;

namespace {

Matrix random_probabilities(std::size_t n, std::size_t d, std::uint64_t seed, double scale = 1.0) {
  return softmax_rows(oracle::random_matrix(n, d, seed, scale));
}

Matrix random_unit_rows(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::vector<double> norms;
  return normalize_rows(oracle::random_matrix(n, d, seed), norms);
}

}  // namespace

TEST_CASE("variance floor equals (D - 1) / D^2") {
  for (std::size_t d : {1, 2, 5, 10, 100, 512}) {
    const double c = variance_threshold(d).c;
    const double closed = (static_cast<double>(d) - 1.0) / (static_cast<double>(d) * static_cast<double>(d));
    CAPTURE(d);
    CHECK(std::abs(c - closed) <= 1e-12);
  }
  CHECK_THROWS(variance_threshold(0));
}

TEST_CASE("default coefficients") {
  const auto c = univarfl_coefficients(10);
  CHECK(c.mu == 0.5);
  CHECK(c.lambda == 2.5);
  CHECK(c.mu_prox == 0.0);
  const auto d = univarfl_coefficients(100, 0.1, 3.0);
  CHECK(d.mu == 0.1);
  CHECK(d.lambda == 3.0);
}

TEST_CASE("variance regularizer values") {
  // One-hot predictions of every class: each column variance equals the floor.
  const Matrix eye = Matrix::identity(4);
  const auto at_floor = variance_regularizer(eye, variance_threshold(4));
  CHECK(at_floor.loss == 0.0);
  for (double g : at_floor.grad.data) CHECK(g == 0.0);

  // Identical rows: every variance is zero, loss is exactly c.
  Matrix uniform(6, 5, 0.2);
  const auto floor = variance_threshold(5);
  const auto collapsed = variance_regularizer(uniform, floor);
  CHECK(collapsed.loss == doctest::Approx(floor.c).epsilon(1e-14));

  const Matrix P = random_probabilities(7, 5, 1);
  const auto r = variance_regularizer(P, floor);
  double ref = 0;
  for (std::size_t j = 0; j < 5; ++j) ref += std::max(0.0, floor.c - oracle::variance_two_pass(oracle::column(P, j)));
  CHECK(r.loss == doctest::Approx(ref / 5).epsilon(1e-13));
  CHECK(r.loss >= 0.0);

  Matrix bad = P;
  bad(0, 0) += 0.1;
  CHECK_THROWS(variance_regularizer(bad, floor));
  CHECK_THROWS(variance_regularizer(P, variance_threshold(4)));
}

TEST_CASE("variance regularizer gradient matches finite differences") {
  const auto floor = variance_threshold(4);
  const Matrix P = random_probabilities(6, 4, 2, 0.3);
  const auto r = variance_regularizer(P, floor);
  // The loss is defined for any matrix; differentiate it directly in P.
  auto f = [&](const std::vector<double>& v) {
    const Matrix m(6, 4, v);
    double acc = 0;
    for (std::size_t j = 0; j < 4; ++j) acc += std::max(0.0, floor.c - oracle::variance_two_pass(oracle::column(m, j)));
    return acc / 4;
  };
  CHECK(oracle::max_abs_diff(r.grad.data, oracle::numeric_gradient(P.data, f)) < 1e-9);
}

TEST_CASE("hyperspherical energy values") {
  // Antipodal pair: each off-diagonal term is 1 / (2 + eps).
  const Matrix pair(2, 3, std::vector<double>{1, 0, 0, -1, 0, 0});
  const double eps = 1e-4;
  CHECK(hyperspherical_energy(pair, eps).loss == doctest::Approx(2.0 / (4.0 * (2.0 + eps))).epsilon(1e-14));

  // Orthogonal and coincident pairs.
  const Matrix ortho(2, 2, std::vector<double>{1, 0, 0, 1});
  CHECK(hyperspherical_energy(ortho, eps).loss == doctest::Approx(0.49995).epsilon(1e-6));
  const Matrix same(2, 2, std::vector<double>{1, 0, 1, 0});
  CHECK(hyperspherical_energy(same, eps).loss == doctest::Approx(5000.0).epsilon(1e-10));

  // Orthonormal set: every off-diagonal similarity is zero.
  const Matrix eye = Matrix::identity(5);
  CHECK(hyperspherical_energy(eye, eps).loss == doctest::Approx(20.0 / (25.0 * (1.0 + eps))).epsilon(1e-14));

  // Spread features have lower energy than clustered ones.
  Matrix clustered(5, 5, 0.0);
  for (std::size_t i = 0; i < 5; ++i) {
    clustered(i, 0) = std::sqrt(1.0 - 0.01);
    clustered(i, (i % 4) + 1) = 0.1;
  }
  CHECK(hyperspherical_energy(clustered, eps).loss > hyperspherical_energy(eye, eps).loss);

  const Matrix z = random_unit_rows(6, 4, 3);
  double ref = 0;
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j)
      if (i != j) ref += 1.0 / (1.0 - dot(z.row(i), z.row(j)) + eps);
  CHECK(hyperspherical_energy(z, eps).loss == doctest::Approx(ref / 36).epsilon(1e-13));

  CHECK_THROWS(hyperspherical_energy(Matrix(1, 3, std::vector<double>{1, 0, 0}), eps));
  CHECK_THROWS(hyperspherical_energy(Matrix(2, 2, std::vector<double>{1, 0, 0, 2}), eps));
  CHECK_THROWS(hyperspherical_energy(eye, 0.0));
}

TEST_CASE("hyperspherical energy gradient matches finite differences") {
  const double eps = 1e-4;
  const Matrix z = random_unit_rows(5, 3, 4);
  const auto r = hyperspherical_energy(z, eps);
  // Off-sphere extension of the same formula, so the unit check does not apply.
  auto f = [&](const std::vector<double>& v) {
    const Matrix m(5, 3, v);
    double acc = 0;
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 5; ++j)
        if (i != j) acc += 1.0 / (1.0 - dot(m.row(i), m.row(j)) + eps);
    return acc / 25;
  };
  CHECK(oracle::max_abs_diff(r.grad.data, oracle::numeric_gradient(z.data, f)) < 1e-7);
}

TEST_CASE("cross entropy value and gradient") {
  const Matrix logits = oracle::random_matrix(4, 3, 5);
  const Matrix P = softmax_rows(logits);
  const std::vector<int> y{0, 2, 1, 2};
  const auto r = cross_entropy(P, y);
  double ref = 0;
  for (std::size_t i = 0; i < 4; ++i) ref -= std::log(oracle::softmax_ld(std::vector<double>(logits.row(i).begin(), logits.row(i).end()))[y[i]]);
  CHECK(r.loss == doctest::Approx(ref / 4).epsilon(1e-13));
  auto f = [&](const std::vector<double>& v) {
    const Matrix p = softmax_rows(Matrix(4, 3, v));
    double acc = 0;
    for (std::size_t i = 0; i < 4; ++i) acc -= std::log(p(i, y[i]));
    return acc / 4;
  };
  CHECK(oracle::max_abs_diff(r.grad.data, oracle::numeric_gradient(logits.data, f)) < 1e-9);
  const std::vector<int> bad{0, 3, 1, 2};
  CHECK_THROWS(cross_entropy(P, bad));
}

TEST_CASE("proximal term") {
  const ModelSpec spec{3, {4}, 4, 2, 3, Normalization::batch_standardize, true, FeatureSource::post_projector};
  const ParamVector a = init_model(spec, RngStream(1));
  ParamVector b = a;
  for (std::size_t i = 0; i < b.size(); ++i) b.values[i] += 0.5;
  const auto r = proximal_term(a, b, 0.2);
  std::size_t trainable = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    trainable += a.trainable(i);
    CHECK(r.grad[i] == (a.trainable(i) ? doctest::Approx(-0.1) : doctest::Approx(0.0)));
  }
  CHECK(r.loss == doctest::Approx(0.1 * 0.25 * static_cast<double>(trainable)).epsilon(1e-14));
  CHECK(proximal_term(a, a, 0.2).loss == 0.0);
  CHECK(proximal_term(a, b, 0.0).loss == 0.0);
}

TEST_CASE("composite loss totals and gradient gating") {
  const ModelSpec spec{4, {5}, 6, 3, 3};
  const ParamVector theta = init_model(spec, RngStream(2));
  ParamVector global = theta;
  global.values[0] += 1.0;
  const Matrix x = oracle::random_matrix(6, 4, 6);
  const std::vector<int> y{0, 1, 2, 0, 1, 2};
  const ForwardTrace tr = forward(theta, x, Mode::train);
  const auto floor = variance_threshold(3);

  Coefficients c{0.5, 0.75, 0.1};
  const auto full = composite_loss(tr, y, c, floor, FeatureSource::post_projector, theta, &global);
  const auto& b = full.breakdown;
  CHECK(b.total == doctest::Approx(b.ce + 0.5 * b.he + 0.75 * b.var + b.prox).epsilon(1e-12));
  CHECK(b.prox == doctest::Approx(0.05).epsilon(1e-14));
  CHECK(b.ce >= 0.0);
  CHECK(b.he >= 0.0);
  CHECK(b.var >= 0.0);
  CHECK_FALSE(full.heads.dZ.empty());
  CHECK_FALSE(full.direct.empty());

  const auto plain = composite_loss(tr, y, Coefficients{}, floor, FeatureSource::post_projector, theta, nullptr);
  CHECK(plain.breakdown.total == plain.breakdown.ce);
  CHECK(plain.breakdown.he == b.he);
  CHECK(plain.breakdown.var == b.var);
  CHECK(plain.heads.dZ.empty());
  CHECK(plain.heads.dP.empty());
  CHECK(plain.direct.empty());
  CHECK_THROWS(composite_loss(tr, y, c, floor, FeatureSource::post_projector, theta, nullptr));
}
