#pragma once

// Deterministic dense linear algebra in float64: PCA through a one-sided
// Jacobi SVD, Householder QR, normalisation and subspace projection.
// Everything here is a pure function over value types.

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace sdls {

using Vector = std::vector<double>;

/// Row-major dense matrix of finite doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);
  /// Builds a matrix whose columns are the given vectors (all same length).
  static Matrix from_columns(std::span<const Vector> columns);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  const std::vector<double>& data() const noexcept { return data_; }

  Vector column(std::size_t c) const;
  void set_column(std::size_t c, std::span<const double> values);
  Matrix transposed() const;

  bool all_finite() const;
  double frobenius_norm() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Vector matvec(const Matrix& a, std::span<const double> x);
/// aᵀx
Vector matvec_transposed(const Matrix& a, std::span<const double> x);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);
bool all_finite(std::span<const double> v);

/// Mean over columns (one entry per row).
Vector column_mean(const Matrix& m);
/// Subtracts the column mean from every column.
Matrix center_columns(const Matrix& m);

struct PcaBasis {
  Matrix components;              // rows × effective_k, orthonormal columns
  std::size_t effective_k = 0;    // < requested k when the data is rank-deficient
  std::vector<double> singular_values;  // all of them, descending
};

/// Top-k left singular vectors of an already-centred sample matrix (one
/// sample per column). Columns are ordered by descending singular value and
/// each column's largest-magnitude entry is non-negative.
PcaBasis pca_top_k(const Matrix& centered, std::size_t k);

/// First principal component of the samples in the columns of `samples`
/// (centring is done here). Unit norm, same sign convention as pca_top_k.
Vector first_principal_component(const Matrix& samples);

struct QrFactors {
  Matrix q;  // rows × cols, orthonormal columns
  Matrix r;  // cols × cols, upper triangular with non-negative diagonal
  /// First column whose |R_ii| fell below 1e-12·‖V‖_F, if any.
  std::optional<std::size_t> dependent_column;
};

/// Thin Householder QR. Requires cols ≤ rows.
QrFactors qr_orthonormal_basis(const Matrix& v);

Vector l2_normalize(std::span<const double> v);

/// v − U(Uᵀv). U must have orthonormal columns (‖UᵀU − I‖∞ ≤ 1e-8).
Vector project_out_subspace(std::span<const double> v, const Matrix& basis);

}  // namespace sdls
