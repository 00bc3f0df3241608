#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace univarfl {

class RngStream;

/// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> values);

  static Matrix identity(std::size_t n);

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  bool empty() const { return data.empty(); }
  bool operator==(const Matrix&) const = default;
};

enum class VarianceEstimator { population, sample };

bool all_finite(std::span<const double> values);
void require_finite(const Matrix& m, const char* what);

Matrix transpose(const Matrix& m);
// a * b
Matrix matmul(const Matrix& a, const Matrix& b);
// a * b^T
Matrix matmul_bt(const Matrix& a, const Matrix& b);
// a^T * b
Matrix matmul_at(const Matrix& a, const Matrix& b);

std::vector<double> column_sums(const Matrix& m);
double frobenius_norm_sq(const Matrix& m);
double dot(std::span<const double> a, std::span<const double> b);

// Numerically stable softmax (max subtraction). Rejects non-finite input.
std::vector<double> softmax(std::span<const double> logits);
Matrix softmax_rows(const Matrix& logits);

// Per-column variance. Population divides by n, sample by n - 1.
std::vector<double> column_variance(const Matrix& m,
                                    VarianceEstimator estimator = VarianceEstimator::population);

// Backward of softmax_rows: dlogits = P * (dP - rowsum(dP * P)).
Matrix softmax_rows_backward(const Matrix& P, const Matrix& dP);

// Scales each row to unit l2 norm; a zero row maps to e_0 and passes no
// gradient back. Norms are returned.
Matrix normalize_rows(const Matrix& u, std::vector<double>& norms);
// du = (dz - z (z . dz)) / |u|
Matrix normalize_rows_backward(const Matrix& z, const std::vector<double>& norms, const Matrix& dz);

// Singular values in descending order via one-sided Jacobi rotations.
std::vector<double> singular_values(const Matrix& m);

// Q factor of a Householder QR of a (rows >= cols); columns orthonormal.
Matrix householder_q(const Matrix& a);

// Matrix of the given shape whose rows (rows <= cols) or columns
// (rows > cols) are orthonormal, from QR of a Gaussian matrix.
Matrix random_orthonormal(std::size_t rows, std::size_t cols, RngStream& rng);

// Solves a * x = b by Gaussian elimination with partial pivoting.
Matrix solve(Matrix a, Matrix b);

}  // namespace univarfl
