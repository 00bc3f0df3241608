#include <doctest.h>

#include <cmath>
#include <cstring>
#include <sstream>

#include "oracles.hpp"
#include "univarfl/model.hpp"
#include "univarfl/objectives.hpp"

using namespace univarfl;

namespace {

ModelSpec small_spec(Normalization norm = Normalization::batch_standardize, bool frozen = false) {
  return {5, {6, 4}, 7, 3, 4, norm, frozen, FeatureSource::post_projector};
}

// Straight-line loops over the named tensors; no shared code with forward().
std::vector<double> naive_logits(const ParamVector& p, const std::vector<double>& x_all, std::size_t n) {
  const ModelSpec& s = p.spec();
  auto lin = [&](const std::vector<double>& in, std::size_t in_dim, const std::string& w, const std::string& b) {
    const auto W = p.tensor(w);
    const std::size_t out_dim = W.size() / in_dim;
    std::vector<double> out(n * out_dim, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t o = 0; o < out_dim; ++o) {
        double acc = b.empty() ? 0.0 : p.tensor(b)[o];
        for (std::size_t k = 0; k < in_dim; ++k) acc += W[o * in_dim + k] * in[i * in_dim + k];
        out[i * out_dim + o] = acc;
      }
    return out;
  };
  auto relu = [](std::vector<double> v) {
    for (auto& x : v) x = x > 0 ? x : 0;
    return v;
  };
  std::vector<double> h = x_all;
  std::size_t dim = s.input_dim;
  for (std::size_t l = 0; l < s.encoder_widths.size(); ++l) {
    const std::string pre = "encoder." + std::to_string(l) + ".";
    h = relu(lin(h, dim, pre + "weight", pre + "bias"));
    dim = s.encoder_widths[l];
  }
  std::vector<double> a = lin(h, dim, "projector.fc1.weight", "");
  const std::size_t pw = s.projector_width;
  for (std::size_t j = 0; j < pw; ++j) {
    double mean = 0, var = 0;
    for (std::size_t i = 0; i < n; ++i) mean += a[i * pw + j] / n;
    for (std::size_t i = 0; i < n; ++i) var += (a[i * pw + j] - mean) * (a[i * pw + j] - mean) / n;
    for (std::size_t i = 0; i < n; ++i)
      a[i * pw + j] = p.tensor("projector.bn.scale")[j] * (a[i * pw + j] - mean) / std::sqrt(var + 1e-5) +
                      p.tensor("projector.bn.shift")[j];
  }
  a = relu(a);
  std::vector<double> z = lin(a, pw, "projector.fc2.weight", "projector.fc2.bias");
  for (std::size_t i = 0; i < n; ++i) {
    double norm = 0;
    for (std::size_t j = 0; j < s.feature_dim; ++j) norm += z[i * s.feature_dim + j] * z[i * s.feature_dim + j];
    for (std::size_t j = 0; j < s.feature_dim; ++j) z[i * s.feature_dim + j] /= std::sqrt(norm);
  }
  return lin(z, s.feature_dim, "classifier.weight", "classifier.bias");
}

ParamVector perturbed_model(const ModelSpec& spec, std::uint64_t seed) {
  ParamVector p = init_model(spec, RngStream(seed));
  RngStream rng(seed, 5);
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p.trainable(i)) p.values[i] += 0.1 * rng.normal();
  return p;
}

}  // namespace

TEST_CASE("layout names, shapes and masks") {
  const auto layout = make_layout(small_spec());
  std::vector<std::string> names;
  for (const auto& t : layout->tensors()) names.push_back(t.name);
  const std::vector<std::string> expected{
      "encoder.0.weight", "encoder.0.bias", "encoder.1.weight", "encoder.1.bias", "projector.fc1.weight",
      "projector.bn.scale", "projector.bn.shift", "projector.bn.running_mean", "projector.bn.running_var",
      "projector.fc2.weight", "projector.fc2.bias", "classifier.weight", "classifier.bias"};
  CHECK(names == expected);
  CHECK(layout->find("encoder.0.weight").rows == 6);
  CHECK(layout->find("encoder.0.weight").cols == 5);
  CHECK(layout->find("classifier.weight").rows == 4);
  CHECK(layout->find("classifier.weight").cols == 3);
  CHECK_FALSE(layout->find("projector.bn.running_var").trainable);
  std::size_t total = 0;
  for (const auto& t : layout->tensors()) {
    CHECK(t.offset == total);
    total += t.size();
  }
  CHECK(total == layout->size());

  const auto plain = make_layout(small_spec(Normalization::none));
  CHECK(plain->has("projector.fc1.bias"));
  CHECK_FALSE(plain->has("projector.bn.scale"));
  CHECK_THROWS(make_layout(ModelSpec{5, {6}, 7, 3, 1}));
  CHECK_THROWS(make_layout(ModelSpec{5, {0}, 7, 3, 4}));
}

TEST_CASE("init is deterministic and fan-in bounded") {
  const auto spec = small_spec();
  const ParamVector a = init_model(spec, RngStream(3));
  CHECK(a == init_model(spec, RngStream(3)));
  CHECK_FALSE(a == init_model(spec, RngStream(4)));
  for (const auto& t : a.layout->tensors()) {
    const auto v = a.tensor(t.name);
    if (t.name.ends_with("weight")) {
      const double bound = std::sqrt(6.0 / static_cast<double>(t.cols));
      for (double x : v) CHECK(std::abs(x) <= bound);
    } else if (t.name.ends_with("bias") || t.name.ends_with("shift") || t.name.ends_with("running_mean")) {
      for (double x : v) CHECK(x == 0.0);
    } else {
      for (double x : v) CHECK(x == 1.0);
    }
  }
}

TEST_CASE("frozen classifier has orthonormal rows and is masked") {
  const ParamVector p = init_model(small_spec(Normalization::batch_standardize, true), RngStream(5));
  const Matrix w = p.tensor_matrix("classifier.weight");
  // 4 classes > 3 features: columns are orthonormal instead.
  const Matrix g = matmul_at(w, w);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(g(i, j) == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-12));
  CHECK_FALSE(p.layout->find("classifier.weight").trainable);
  CHECK_FALSE(p.layout->find("classifier.bias").trainable);

  ModelSpec wide = small_spec(Normalization::batch_standardize, true);
  wide.classes = 2;
  const Matrix w2 = init_model(wide, RngStream(6)).tensor_matrix("classifier.weight");
  const Matrix g2 = matmul_bt(w2, w2);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) CHECK(g2(i, j) == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-12));
}

TEST_CASE("forward matches a naive reference and keeps its invariants") {
  const ParamVector p = perturbed_model(small_spec(), 7);
  const Matrix x = oracle::random_matrix(6, 5, 8);
  const ForwardTrace tr = forward(p, x, Mode::train);
  const auto ref = naive_logits(p, x.data, 6);
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(tr.logits.data[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  for (std::size_t i = 0; i < 6; ++i) {
    double zn = 0, ps = 0;
    for (double v : tr.Z.row(i)) zn += v * v;
    for (double v : tr.P.row(i)) ps += v;
    CHECK(std::abs(std::sqrt(zn) - 1.0) < 1e-10);
    CHECK(std::abs(ps - 1.0) < 1e-10);
  }
  CHECK_THROWS(forward(p, oracle::random_matrix(1, 5, 9), Mode::train));
  CHECK_NOTHROW(forward(p, oracle::random_matrix(1, 5, 9), Mode::eval));
  CHECK_THROWS(forward(p, oracle::random_matrix(3, 4, 9), Mode::eval));
}

TEST_CASE("batch standardization output has zero mean and shrunken unit variance") {
  ParamVector p = init_model(small_spec(), RngStream(10));
  const Matrix x = oracle::random_matrix(8, 5, 11);
  const ForwardTrace tr = forward(p, x, Mode::train);
  const auto var = column_variance(tr.projector_hat);
  for (std::size_t j = 0; j < var.size(); ++j) {
    double mean = 0;
    for (std::size_t i = 0; i < 8; ++i) mean += tr.projector_hat(i, j) / 8;
    CHECK(std::abs(mean) < 1e-12);
    // Exactly var / (var + eps) by construction.
    const double raw = tr.norm_var[j];
    CHECK(var[j] == doctest::Approx(raw / (raw + kBatchNormEpsilon)).epsilon(1e-12));
  }
  // With a wide input spread the shrink factor is negligible.
  const Matrix big = oracle::random_matrix(8, 5, 12, 100.0);
  const ForwardTrace tr2 = forward(p, big, Mode::train);
  for (double v : column_variance(tr2.projector_hat)) CHECK(std::abs(v - 1.0) < 1e-6);
}

TEST_CASE("running statistics update and feed eval mode") {
  ParamVector p = init_model(small_spec(), RngStream(13));
  const Matrix x = oracle::random_matrix(10, 5, 14);
  const ForwardTrace tr = forward(p, x, Mode::train);
  update_running_stats(p, tr);
  const auto rm = p.tensor("projector.bn.running_mean");
  const auto rv = p.tensor("projector.bn.running_var");
  const auto pop = column_variance(tr.projector_pre);
  for (std::size_t j = 0; j < rm.size(); ++j) {
    CHECK(rm[j] == doctest::Approx(0.1 * tr.norm_mean[j]).epsilon(1e-14));
    CHECK(rv[j] == doctest::Approx(0.9 + 0.1 * pop[j]).epsilon(1e-14));
  }
  const ForwardTrace ev = forward(p, x, Mode::eval);
  for (std::size_t j = 0; j < rm.size(); ++j) CHECK(ev.norm_mean[j] == rm[j]);
}

TEST_CASE("backward matches finite differences of a linear functional") {
  for (auto norm : {Normalization::batch_standardize, Normalization::none}) {
    ModelSpec spec = small_spec(norm);
    for (auto src : {FeatureSource::post_projector, FeatureSource::pre_projector}) {
      spec.he_source = src;
      const ParamVector p = perturbed_model(spec, 15);
      const Matrix x = oracle::random_matrix(5, 5, 16);
      const ForwardTrace tr = forward(p, x, Mode::train);
      HeadGrads heads;
      heads.dP = oracle::random_matrix(5, 4, 17);
      heads.dZ = oracle::random_matrix(5, 3, 18);
      heads.dlogits = oracle::random_matrix(5, 4, 19);
      if (src == FeatureSource::pre_projector) heads.dH = oracle::random_matrix(5, 4, 20);
      const ParamVector g = backward(p, tr, heads);
      auto f = [&](const std::vector<double>& v) {
        ParamVector q{p.layout, v};
        const ForwardTrace t = forward(q, x, Mode::train);
        double acc = 0;
        for (std::size_t i = 0; i < t.P.data.size(); ++i) acc += heads.dP.data[i] * t.P.data[i];
        for (std::size_t i = 0; i < t.Z.data.size(); ++i) acc += heads.dZ.data[i] * t.Z.data[i];
        for (std::size_t i = 0; i < t.logits.data.size(); ++i) acc += heads.dlogits.data[i] * t.logits.data[i];
        for (std::size_t i = 0; i < heads.dH.data.size(); ++i) acc += heads.dH.data[i] * t.H.data[i];
        return acc;
      };
      const auto num = oracle::numeric_gradient(p.values, f);
      for (std::size_t i = 0; i < num.size(); ++i) {
        CAPTURE(i);
        if (!p.trainable(i)) {
          CHECK(g.values[i] == 0.0);
          continue;
        }
        CHECK(std::abs(g.values[i] - num[i]) <= 1e-6 * std::max(1.0, std::abs(num[i])));
      }
    }
  }
}

TEST_CASE("sgd step follows the momentum recurrence and respects the mask") {
  ParamVector p = init_model(small_spec(Normalization::batch_standardize, true), RngStream(21));
  const ParamVector start = p;
  ParamVector g = p.zeros_like();
  for (std::size_t i = 0; i < g.size(); ++i) g.values[i] = 0.01 * static_cast<double>(i % 7) - 0.03;
  OptimizerState opt = make_optimizer(p, {0.1, 0.9, 0.01});
  sgd_step(p, g, opt);
  sgd_step(p, g, opt);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!p.trainable(i)) {
      CHECK(p.values[i] == start.values[i]);
      continue;
    }
    const double t0 = start.values[i];
    const double v1 = g.values[i] + 0.01 * t0;
    const double t1 = t0 - 0.1 * v1;
    const double v2 = 0.9 * v1 + g.values[i] + 0.01 * t1;
    CHECK(p.values[i] == doctest::Approx(t1 - 0.1 * v2).epsilon(1e-14));
  }
}

TEST_CASE("parameter serialization round-trips and has a fixed byte layout") {
  const ParamVector p = perturbed_model(small_spec(), 22);
  std::stringstream buf;
  write_params(buf, p);
  const std::string bytes = buf.str();
  const ParamVector q = read_params(buf, small_spec());
  CHECK(q == p);

  // u32 tensor count, then the first name length and name, little-endian.
  auto u32 = [&](std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[at + i])) << (8 * i);
    return v;
  };
  CHECK(u32(0) == p.layout->tensors().size());
  CHECK(u32(4) == std::string("encoder.0.weight").size());
  CHECK(bytes.substr(8, 16) == "encoder.0.weight");
  // Values trail the header as raw float64.
  double last = 0;
  std::memcpy(&last, bytes.data() + bytes.size() - 8, 8);
  CHECK(last == p.values.back());

  std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS(read_params(truncated, small_spec()));
  std::stringstream other(bytes);
  CHECK_THROWS(read_params(other, small_spec(Normalization::none)));
}
