#include "univarfl/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace univarfl {

void Dataset::validate() const {
  if (X.rows != y.size()) throw std::invalid_argument("Dataset: row count != label count");
  for (int label : y)
    if (label < 0 || static_cast<std::size_t>(label) >= classes)
      throw std::invalid_argument("Dataset: label out of range");
}

Dataset subset(const Dataset& ds, std::span<const std::size_t> indices) {
  auto [X, y] = gather(ds, indices);
  return {std::move(X), std::move(y), ds.classes, ds.provenance};
}

std::pair<Matrix, std::vector<int>> gather(const Dataset& ds, std::span<const std::size_t> indices) {
  Matrix X(indices.size(), ds.X.cols);
  std::vector<int> y(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto src = ds.X.row(indices[r]);
    std::copy(src.begin(), src.end(), X.row(r).begin());
    y[r] = ds.y[indices[r]];
  }
  return {std::move(X), std::move(y)};
}

std::vector<std::size_t> class_histogram(const Dataset& ds) {
  std::vector<std::size_t> h(ds.classes, 0);
  for (int label : ds.y) ++h[static_cast<std::size_t>(label)];
  return h;
}

void SyntheticTaskSpec::validate() const {
  if (classes < 1 || input_dim < 1 || per_class < 1)
    throw std::invalid_argument("SyntheticTaskSpec: counts must be >= 1");
  if (!(noise_sigma > 0.0)) throw std::invalid_argument("SyntheticTaskSpec: sigma must be positive");
  if (confusability < 0.0 || confusability >= 1.0)
    throw std::invalid_argument("SyntheticTaskSpec: confusability must be in [0, 1)");
}

Matrix synthetic_centers(const SyntheticTaskSpec& spec, const RngStream& rng) {
  spec.validate();
  RngStream stream = derive_stream(rng, {0});
  Matrix dirs(spec.classes, spec.input_dim);
  for (std::size_t j = 0; j < spec.classes; ++j) {
    auto row = dirs.row(j);
    double norm = 0.0;
    while (norm == 0.0) {
      for (auto& v : row) v = stream.normal();
      norm = std::sqrt(dot(row, row));
    }
    for (auto& v : row) v /= norm;
  }
  Matrix centers = dirs;
  if (spec.confusability > 0.0) {
    for (std::size_t j = 1; j < spec.classes; j += 2) {
      auto row = centers.row(j);
      const auto partner = dirs.row(j - 1);
      for (std::size_t c = 0; c < spec.input_dim; ++c)
        row[c] = (1.0 - spec.confusability) * row[c] + spec.confusability * partner[c];
      const double norm = std::sqrt(dot(row, row));
      for (auto& v : row) v /= norm;
    }
  }
  for (auto& v : centers.data) v *= spec.center_scale;
  return centers;
}

Dataset generate_synthetic(const SyntheticTaskSpec& spec, const RngStream& rng, std::uint64_t split) {
  const Matrix centers = synthetic_centers(spec, rng);
  RngStream stream = derive_stream(rng, {1, split});
  Dataset ds;
  ds.classes = spec.classes;
  ds.provenance = "synthetic";
  ds.X = Matrix(spec.classes * spec.per_class, spec.input_dim);
  ds.y.resize(ds.X.rows);
  std::size_t r = 0;
  for (std::size_t j = 0; j < spec.classes; ++j) {
    for (std::size_t s = 0; s < spec.per_class; ++s, ++r) {
      auto row = ds.X.row(r);
      for (std::size_t c = 0; c < spec.input_dim; ++c) row[c] = centers(j, c) + spec.noise_sigma * stream.normal();
      ds.y[r] = static_cast<int>(j);
    }
  }
  return ds;
}

std::size_t Partition::total() const {
  std::size_t t = 0;
  for (const auto& a : assignment) t += a.size();
  return t;
}

Partition make_partition(const Dataset& ds, std::vector<std::vector<std::size_t>> assignment) {
  Partition p;
  p.clients = assignment.size();
  p.assignment = std::move(assignment);
  p.histograms.assign(p.clients, std::vector<std::size_t>(ds.classes, 0));
  for (std::size_t k = 0; k < p.clients; ++k) {
    std::sort(p.assignment[k].begin(), p.assignment[k].end());
    for (auto idx : p.assignment[k]) ++p.histograms[k][static_cast<std::size_t>(ds.y[idx])];
  }
  return p;
}

namespace {

// Largest-remainder apportionment of `total` over `shares`; ties favour lower index.
std::vector<std::size_t> apportion(std::size_t total, const std::vector<double>& shares) {
  const std::size_t k = shares.size();
  std::vector<std::size_t> counts(k, 0);
  std::vector<double> remainder(k, 0.0);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double ideal = shares[i] * static_cast<double>(total);
    counts[i] = static_cast<std::size_t>(std::floor(ideal));
    remainder[i] = ideal - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  // Rounding can push the floor sum past total when shares sum slightly above 1.
  while (assigned > total) {
    const auto it = std::max_element(counts.begin(), counts.end());
    --*it;
    --assigned;
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t i = 0; assigned < total; i = (i + 1) % k) {
    ++counts[order[i]];
    ++assigned;
  }
  return counts;
}

}  // namespace

Partition dirichlet_partition(const Dataset& ds, std::size_t clients, double alpha, const RngStream& rng) {
  if (clients == 0) throw std::invalid_argument("dirichlet_partition: need at least one client");
  if (!(alpha > 0.0)) throw std::invalid_argument("dirichlet_partition: alpha must be positive");
  std::vector<std::vector<std::size_t>> by_class(ds.classes);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[static_cast<std::size_t>(ds.y[i])].push_back(i);

  std::vector<std::vector<std::size_t>> assignment(clients);
  for (std::size_t c = 0; c < ds.classes; ++c) {
    auto& members = by_class[c];
    if (members.empty()) continue;
    RngStream stream = derive_stream(rng, {c});
    const auto shares = dirichlet(clients, alpha, stream);
    shuffle(members, stream);
    const auto counts = apportion(members.size(), shares);
    std::size_t pos = 0;
    for (std::size_t k = 0; k < clients; ++k)
      for (std::size_t s = 0; s < counts[k]; ++s) assignment[k].push_back(members[pos++]);
  }

  // Repair: each empty client takes the highest index of the currently largest client.
  for (std::size_t k = 0; k < clients; ++k) {
    if (!assignment[k].empty()) continue;
    std::size_t donor = 0;
    for (std::size_t j = 1; j < clients; ++j)
      if (assignment[j].size() > assignment[donor].size()) donor = j;
    if (assignment[donor].size() < 2) break;
    auto& from = assignment[donor];
    const auto it = std::max_element(from.begin(), from.end());
    assignment[k].push_back(*it);
    from.erase(it);
  }
  return make_partition(ds, std::move(assignment));
}

Matrix DomainTransform::apply(const Matrix& X) const {
  Matrix out = matmul_bt(X, rotation);
  for (std::size_t r = 0; r < out.rows; ++r)
    for (std::size_t c = 0; c < out.cols; ++c) out(r, c) += bias[c];
  return out;
}

Matrix DomainTransform::invert(const Matrix& X) const {
  Matrix centered = X;
  for (std::size_t r = 0; r < centered.rows; ++r)
    for (std::size_t c = 0; c < centered.cols; ++c) centered(r, c) -= bias[c];
  return matmul(centered, rotation);
}

DomainTransform make_domain_transform(std::size_t dim, const ShiftSpec& shift, const RngStream& rng) {
  RngStream stream = rng;
  DomainTransform t;
  t.bias.assign(dim, 0.0);
  if (shift.rotation_strength == 0.0) {
    t.rotation = Matrix::identity(dim);
  } else {
    // Cayley transform (I - tS)^{-1} (I + tS) of a skew-symmetric S is orthogonal.
    Matrix s(dim, dim);
    const double scale = shift.rotation_strength / std::sqrt(static_cast<double>(dim));
    for (std::size_t i = 0; i < dim; ++i)
      for (std::size_t j = i + 1; j < dim; ++j) {
        const double v = scale * stream.normal();
        s(i, j) = v;
        s(j, i) = -v;
      }
    Matrix lhs = Matrix::identity(dim);
    Matrix rhs = Matrix::identity(dim);
    for (std::size_t i = 0; i < dim * dim; ++i) {
      lhs.data[i] -= s.data[i];
      rhs.data[i] += s.data[i];
    }
    t.rotation = solve(std::move(lhs), std::move(rhs));
  }
  if (shift.bias_scale != 0.0)
    for (auto& b : t.bias) b = shift.bias_scale * stream.normal();
  return t;
}

FeatureShiftResult feature_shift_partition(const Dataset& ds, std::size_t clients, const ShiftSpec& shift,
                                           const RngStream& rng) {
  if (clients == 0) throw std::invalid_argument("feature_shift_partition: need at least one client");
  RngStream split_stream = derive_stream(rng, {0});
  const auto perm = random_permutation(ds.size(), split_stream);
  std::vector<std::vector<std::size_t>> assignment(clients);
  for (std::size_t i = 0; i < perm.size(); ++i) assignment[i % clients].push_back(perm[i]);

  FeatureShiftResult out;
  out.partition = make_partition(ds, std::move(assignment));
  for (std::size_t k = 0; k < clients; ++k) {
    out.transforms.push_back(make_domain_transform(ds.input_dim(), shift, derive_stream(rng, {1, k})));
    Dataset view = subset(ds, out.partition.assignment[k]);
    view.X = out.transforms[k].apply(view.X);
    if (shift.noise_scale != 0.0) {
      RngStream noise = derive_stream(rng, {2, k});
      for (auto& v : view.X.data) v += shift.noise_scale * noise.normal();
    }
    out.views.push_back(std::move(view));
  }
  return out;
}

Dataset apply_domains(const Dataset& ds, const std::vector<DomainTransform>& transforms) {
  if (transforms.empty()) return ds;
  Dataset out = ds;
  for (std::size_t r = 0; r < ds.size(); ++r) {
    const auto& t = transforms[r % transforms.size()];
    Matrix row(1, ds.input_dim(), std::vector<double>(ds.X.row(r).begin(), ds.X.row(r).end()));
    const Matrix moved = t.apply(row);
    std::copy(moved.data.begin(), moved.data.end(), out.X.row(r).begin());
  }
  return out;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> train_val_indices(const Dataset& ds,
                                                                                 double fraction,
                                                                                 const RngStream& rng) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw std::invalid_argument("train_val_split: fraction must be in (0, 1)");
  std::vector<std::vector<std::size_t>> by_class(ds.classes);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[static_cast<std::size_t>(ds.y[i])].push_back(i);
  std::vector<std::size_t> train, val;
  for (std::size_t c = 0; c < ds.classes; ++c) {
    auto& members = by_class[c];
    if (members.empty()) continue;
    if (members.size() < 2)
      throw std::invalid_argument("train_val_split: class " + std::to_string(c) + " has fewer than 2 samples");
    RngStream stream = derive_stream(rng, {c});
    shuffle(members, stream);
    auto n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(members.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, members.size() - 1);
    train.insert(train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_train));
    val.insert(val.end(), members.begin() + static_cast<std::ptrdiff_t>(n_train), members.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  return {std::move(train), std::move(val)};
}

std::pair<Dataset, Dataset> train_val_split(const Dataset& ds, double fraction, const RngStream& rng) {
  const auto [train, val] = train_val_indices(ds, fraction, rng);
  return {subset(ds, train), subset(ds, val)};
}

std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size, RngStream& rng) {
  if (batch_size == 0) throw std::invalid_argument("batches: batch size must be positive");
  const auto perm = random_permutation(n, rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    if (end - start < 2) break;
    out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start), perm.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

}  // namespace univarfl
