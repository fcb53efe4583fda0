#pragma once

#include "uoro/linalg.hpp"

namespace uoro {

enum class Execution { Serial, Parallel };

namespace kernels {

// c = a * b. Both variants visit each output row in the same order, so they
// produce bit-identical results.
void gemm_serial(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& c);
void gemm_parallel(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& c);

DenseMatrix gemm(const DenseMatrix& a, const DenseMatrix& b, Execution exec);

// y = x^T A, split over column tiles in the parallel variant.
Vector vecmat_serial(std::span<const double> x, const DenseMatrix& a);
Vector vecmat_parallel(std::span<const double> x, const DenseMatrix& a);

int max_threads();

}  // namespace kernels
}  // namespace uoro
