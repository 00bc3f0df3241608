#include "univarfl/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "univarfl/rng.hpp"

namespace univarfl {

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> values)
    : rows(r), cols(c), data(std::move(values)) {
  if (data.size() != r * c) throw std::invalid_argument("Matrix: data length != rows * cols");
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

void require_finite(const Matrix& m, const char* what) {
  if (!all_finite(m.data)) throw std::invalid_argument(std::string(what) + ": non-finite entries");
}

Matrix transpose(const Matrix& m) {
  Matrix t(m.cols, m.rows);
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) t(c, r) = m(r, c);
  return t;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw std::invalid_argument("matmul: inner dimensions differ");
  Matrix out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    double* o = out.data.data() + i * out.cols;
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double s = a(i, k);
      const double* br = b.data.data() + k * b.cols;
      for (std::size_t j = 0; j < b.cols; ++j) o[j] += s * br[j];
    }
  }
  return out;
}

Matrix matmul_bt(const Matrix& a, const Matrix& b) {
  if (a.cols != b.cols) throw std::invalid_argument("matmul_bt: inner dimensions differ");
  Matrix out(a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const auto ar = a.row(i);
    for (std::size_t j = 0; j < b.rows; ++j) out(i, j) = dot(ar, b.row(j));
  }
  return out;
}

Matrix matmul_at(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows) throw std::invalid_argument("matmul_at: inner dimensions differ");
  Matrix out(a.cols, b.cols);
  for (std::size_t k = 0; k < a.rows; ++k) {
    const double* ar = a.data.data() + k * a.cols;
    const double* br = b.data.data() + k * b.cols;
    for (std::size_t i = 0; i < a.cols; ++i) {
      const double s = ar[i];
      double* o = out.data.data() + i * out.cols;
      for (std::size_t j = 0; j < b.cols; ++j) o[j] += s * br[j];
    }
  }
  return out;
}

std::vector<double> column_sums(const Matrix& m) {
  std::vector<double> s(m.cols, 0.0);
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) s[c] += m(r, c);
  return s;
}

double frobenius_norm_sq(const Matrix& m) { return dot(m.data, m.data); }

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("softmax: empty input");
  if (!all_finite(logits)) throw std::invalid_argument("softmax: non-finite logit");
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - top);
    total += p[i];
  }
  for (auto& v : p) v /= total;
  return p;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows, logits.cols);
  for (std::size_t r = 0; r < logits.rows; ++r) {
    const auto row = softmax(logits.row(r));
    std::copy(row.begin(), row.end(), p.row(r).begin());
  }
  return p;
}

Matrix softmax_rows_backward(const Matrix& P, const Matrix& dP) {
  if (P.rows != dP.rows || P.cols != dP.cols) throw std::invalid_argument("softmax_rows_backward: shape mismatch");
  Matrix out(P.rows, P.cols);
  for (std::size_t i = 0; i < P.rows; ++i) {
    const double s = dot(P.row(i), dP.row(i));
    for (std::size_t k = 0; k < P.cols; ++k) out(i, k) = P(i, k) * (dP(i, k) - s);
  }
  return out;
}

Matrix normalize_rows(const Matrix& u, std::vector<double>& norms) {
  Matrix z(u.rows, u.cols);
  norms.assign(u.rows, 0.0);
  for (std::size_t r = 0; r < u.rows; ++r) {
    const double n = std::sqrt(dot(u.row(r), u.row(r)));
    norms[r] = n;
    if (n == 0.0) {
      // No direction to keep; pin to the first axis so the row stays unit.
      if (u.cols > 0) z(r, 0) = 1.0;
      continue;
    }
    for (std::size_t c = 0; c < u.cols; ++c) z(r, c) = u(r, c) / n;
  }
  return z;
}

Matrix normalize_rows_backward(const Matrix& z, const std::vector<double>& norms, const Matrix& dz) {
  Matrix du(z.rows, z.cols);
  for (std::size_t r = 0; r < z.rows; ++r) {
    if (norms[r] == 0.0) continue;
    const double proj = dot(z.row(r), dz.row(r));
    for (std::size_t c = 0; c < z.cols; ++c) du(r, c) = (dz(r, c) - z(r, c) * proj) / norms[r];
  }
  return du;
}

std::vector<double> column_variance(const Matrix& m, VarianceEstimator estimator) {
  const std::size_t n = m.rows;
  if (n == 0) throw std::invalid_argument("column_variance: no rows");
  if (estimator == VarianceEstimator::sample && n < 2)
    throw std::invalid_argument("column_variance: sample estimator needs at least 2 rows");
  std::vector<double> mean = column_sums(m);
  for (auto& v : mean) v /= static_cast<double>(n);
  std::vector<double> var(m.cols, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) {
      const double d = m(r, c) - mean[c];
      var[c] += d * d;
    }
  const double denom = static_cast<double>(estimator == VarianceEstimator::population ? n : n - 1);
  for (auto& v : var) v /= denom;
  return var;
}

std::vector<double> singular_values(const Matrix& m) {
  if (m.rows == 0 || m.cols == 0) throw std::invalid_argument("singular_values: empty matrix");
  require_finite(m, "singular_values");
  // Work on columns of a tall matrix: a is rows x cols with rows >= cols.
  Matrix a = m.rows >= m.cols ? m : transpose(m);
  const std::size_t n = a.rows;
  const std::size_t k = a.cols;
  constexpr double kTol = 1e-12;
  constexpr int kMaxSweeps = 60;

  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < k; ++p) {
      for (std::size_t q = p + 1; q < k; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double ap = a(i, p);
          const double aq = a(i, q);
          alpha += ap * ap;
          beta += aq * aq;
          gamma += ap * aq;
        }
        if (gamma == 0.0 || std::abs(gamma) <= kTol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < n; ++i) {
          const double ap = a(i, p);
          const double aq = a(i, q);
          a(i, p) = c * ap - s * aq;
          a(i, q) = s * ap + c * aq;
        }
      }
    }
    if (!rotated) break;
  }

  std::vector<double> sv(k);
  for (std::size_t j = 0; j < k; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a(i, j) * a(i, j);
    sv[j] = std::sqrt(s);
  }
  std::sort(sv.begin(), sv.end(), std::greater<>());
  return sv;
}

Matrix householder_q(const Matrix& a) {
  const std::size_t m = a.rows;
  const std::size_t n = a.cols;
  if (m < n) throw std::invalid_argument("householder_q: needs rows >= cols");
  Matrix r = a;
  std::vector<std::vector<double>> reflectors;
  reflectors.reserve(n);
  for (std::size_t j = 0; j < n; ++j) {
    std::vector<double> v(m, 0.0);
    double norm = 0.0;
    for (std::size_t i = j; i < m; ++i) {
      v[i] = r(i, j);
      norm += v[i] * v[i];
    }
    norm = std::sqrt(norm);
    // Sign choice keeps diag(R) >= 0 so Q is unique for full-rank input.
    const double alpha = v[j] > 0.0 ? -norm : norm;
    v[j] -= alpha;
    double vnorm = 0.0;
    for (std::size_t i = j; i < m; ++i) vnorm += v[i] * v[i];
    if (vnorm > 0.0) {
      for (std::size_t c = j; c < n; ++c) {
        double s = 0.0;
        for (std::size_t i = j; i < m; ++i) s += v[i] * r(i, c);
        s = 2.0 * s / vnorm;
        for (std::size_t i = j; i < m; ++i) r(i, c) -= s * v[i];
      }
    }
    reflectors.push_back(std::move(v));
  }
  // Q = H_0 H_1 ... H_{n-1} applied to the first n columns of I.
  Matrix q(m, n);
  for (std::size_t i = 0; i < n; ++i) q(i, i) = 1.0;
  for (std::size_t jj = n; jj-- > 0;) {
    const auto& v = reflectors[jj];
    double vnorm = 0.0;
    for (std::size_t i = jj; i < m; ++i) vnorm += v[i] * v[i];
    if (vnorm == 0.0) continue;
    for (std::size_t c = 0; c < n; ++c) {
      double s = 0.0;
      for (std::size_t i = jj; i < m; ++i) s += v[i] * q(i, c);
      s = 2.0 * s / vnorm;
      for (std::size_t i = jj; i < m; ++i) q(i, c) -= s * v[i];
    }
  }
  // Flip column signs so that diag(R) is non-negative.
  for (std::size_t j = 0; j < n; ++j) {
    if (r(j, j) < 0.0)
      for (std::size_t i = 0; i < m; ++i) q(i, j) = -q(i, j);
  }
  return q;
}

Matrix random_orthonormal(std::size_t rows, std::size_t cols, RngStream& rng) {
  const std::size_t tall = std::max(rows, cols);
  const std::size_t wide = std::min(rows, cols);
  Matrix g(tall, wide);
  for (auto& v : g.data) v = rng.normal();
  Matrix q = householder_q(g);
  return rows >= cols ? q : transpose(q);
}

Matrix solve(Matrix a, Matrix b) {
  const std::size_t n = a.rows;
  if (a.cols != n || b.rows != n) throw std::invalid_argument("solve: shape mismatch");
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a(r, col)) > std::abs(a(pivot, col))) pivot = r;
    if (a(pivot, col) == 0.0) throw std::runtime_error("solve: singular matrix");
    if (pivot != col) {
      for (std::size_t c = 0; c < n; ++c) std::swap(a(pivot, c), a(col, c));
      for (std::size_t c = 0; c < b.cols; ++c) std::swap(b(pivot, c), b(col, c));
    }
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a(r, col) / a(col, col);
      if (f == 0.0) continue;
      for (std::size_t c = col; c < n; ++c) a(r, c) -= f * a(col, c);
      for (std::size_t c = 0; c < b.cols; ++c) b(r, c) -= f * b(col, c);
    }
  }
  for (std::size_t col = n; col-- > 0;) {
    for (std::size_t c = 0; c < b.cols; ++c) {
      double s = b(col, c);
      for (std::size_t k = col + 1; k < n; ++k) s -= a(col, k) * b(k, c);
      b(col, c) = s / a(col, col);
    }
  }
  return b;
}

}  // namespace univarfl
