#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace uoro {

using Vector = std::vector<double>;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NotPsdError : public NumericError {
 public:
  using NumericError::NumericError;
};

class SingularityError : public NumericError {
 public:
  using NumericError::NumericError;
};

// Dense real matrix, row-major.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> entries);

  static DenseMatrix identity(std::size_t n);
  static DenseMatrix diagonal(std::span<const double> d);
  static DenseMatrix from_rows(const std::vector<std::vector<double>>& rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  bool is_square() const { return rows_ == cols_; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }
  Vector column(std::size_t j) const;
  void set_column(std::size_t j, std::span<const double> v);

  std::span<double> flat() { return data_; }
  std::span<const double> flat() const { return data_; }
  const std::vector<double>& data() const { return data_; }

  DenseMatrix transposed() const;
  Vector diagonal_entries() const;
  bool all_finite() const;

  DenseMatrix& operator+=(const DenseMatrix& other);
  DenseMatrix& operator-=(const DenseMatrix& other);
  DenseMatrix& operator*=(double s);

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

DenseMatrix operator+(DenseMatrix a, const DenseMatrix& b);
DenseMatrix operator-(DenseMatrix a, const DenseMatrix& b);
DenseMatrix operator*(double s, DenseMatrix a);

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
Vector matvec(const DenseMatrix& a, std::span<const double> x);
// x^T A
Vector vecmat(std::span<const double> x, const DenseMatrix& a);
DenseMatrix outer(std::span<const double> x, std::span<const double> y);
DenseMatrix hadamard(const DenseMatrix& a, const DenseMatrix& b);
// Keeps only the diagonal of a square matrix: (M ⊙ I).
DenseMatrix diagonal_part(const DenseMatrix& m);
DenseMatrix symmetrized(const DenseMatrix& m);

double frob_inner(const DenseMatrix& a, const DenseMatrix& b);
double frob_norm(const DenseMatrix& a);
double trace(const DenseMatrix& a);
double max_abs(const DenseMatrix& a);
// Infinity norm: maximum absolute row sum.
double inf_norm(const DenseMatrix& a);

double dot(std::span<const double> x, std::span<const double> y);
double norm(std::span<const double> x);
double squared_norm(std::span<const double> x);
void axpy(double a, std::span<const double> x, std::span<double> y);
Vector scaled(std::span<const double> x, double s);
Vector add(std::span<const double> x, std::span<const double> y);
Vector subtract(std::span<const double> x, std::span<const double> y);
bool all_finite(std::span<const double> x);

// Solves A x = b by LU with partial pivoting.
Vector solve(const DenseMatrix& a, std::span<const double> b);
DenseMatrix inverse(const DenseMatrix& a);

bool is_symmetric(const DenseMatrix& m, double rel_tol = 1e-8);

struct SymEig {
  Vector eigenvalues;        // descending
  DenseMatrix eigenvectors;  // orthonormal columns, column k pairs with eigenvalues[k]
};

// Cyclic Jacobi rotations; stops once the off-diagonal Frobenius mass drops
// below 1e-12 * ||M||_F or after 100 sweeps.
SymEig sym_eig(const DenseMatrix& m);

// U diag(lambda^p) U^T for symmetric PSD M. Eigenvalues in [-1e-10 ||M||, 0)
// are clamped to zero; anything more negative is rejected.
DenseMatrix psd_frac_power(const DenseMatrix& m, double p);

// 2-norm condition number via the eigenvalues of A^T A.
double condition_number(const DenseMatrix& a);

}  // namespace uoro
