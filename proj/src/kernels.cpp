#include "uoro/kernels.hpp"

#include <algorithm>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace uoro::kernels {

namespace {

void check_gemm(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& c) {
  if (a.cols() != b.rows()) {
    throw DimensionError("gemm: inner dimensions " + std::to_string(a.cols()) + " and " +
                         std::to_string(b.rows()));
  }
  if (c.rows() != a.rows() || c.cols() != b.cols()) c = DenseMatrix(a.rows(), b.cols());
}

inline void gemm_row(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& c, std::size_t i) {
  auto ci = c.row(i);
  std::fill(ci.begin(), ci.end(), 0.0);
  const std::size_t n = b.cols();
  for (std::size_t k = 0; k < a.cols(); ++k) {
    const double aik = a(i, k);
    if (aik == 0.0) continue;
    const double* bk = b.row(k).data();
    double* cp = ci.data();
    for (std::size_t j = 0; j < n; ++j) cp[j] += aik * bk[j];
  }
}

}  // namespace

void gemm_serial(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& c) {
  check_gemm(a, b, c);
  for (std::size_t i = 0; i < a.rows(); ++i) gemm_row(a, b, c, i);
}

void gemm_parallel(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& c) {
  check_gemm(a, b, c);
  const auto rows = static_cast<std::ptrdiff_t>(a.rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i) gemm_row(a, b, c, static_cast<std::size_t>(i));
}

DenseMatrix gemm(const DenseMatrix& a, const DenseMatrix& b, Execution exec) {
  DenseMatrix c(a.rows(), b.cols());
  if (exec == Execution::Parallel) {
    gemm_parallel(a, b, c);
  } else {
    gemm_serial(a, b, c);
  }
  return c;
}

Vector vecmat_serial(std::span<const double> x, const DenseMatrix& a) {
  if (x.size() != a.rows()) throw DimensionError("vecmat: length mismatch");
  Vector y(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double xi = x[i];
    const double* ai = a.row(i).data();
    for (std::size_t j = 0; j < a.cols(); ++j) y[j] += xi * ai[j];
  }
  return y;
}

Vector vecmat_parallel(std::span<const double> x, const DenseMatrix& a) {
  if (x.size() != a.rows()) throw DimensionError("vecmat: length mismatch");
  Vector y(a.cols(), 0.0);
  constexpr std::size_t tile = 256;
  const auto tiles = static_cast<std::ptrdiff_t>((a.cols() + tile - 1) / tile);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t t = 0; t < tiles; ++t) {
    const std::size_t lo = static_cast<std::size_t>(t) * tile;
    const std::size_t hi = std::min(a.cols(), lo + tile);
    for (std::size_t i = 0; i < a.rows(); ++i) {
      const double xi = x[i];
      const double* ai = a.row(i).data();
      for (std::size_t j = lo; j < hi; ++j) y[j] += xi * ai[j];
    }
  }
  return y;
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace uoro::kernels
