#pragma once

#include <cstdint>
#include <random>

#include "uoro/linalg.hpp"

namespace gen {

inline std::mt19937_64 rng(std::uint64_t seed) { return std::mt19937_64(seed * 0x9E3779B97F4A7C15ULL + 17); }

inline uoro::Vector vec(std::size_t n, std::mt19937_64& r, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  uoro::Vector v(n);
  for (double& x : v) x = g(r);
  return v;
}

inline uoro::DenseMatrix mat(std::size_t rows, std::size_t cols, std::mt19937_64& r, double scale = 1.0) {
  return uoro::DenseMatrix(rows, cols, vec(rows * cols, r, scale));
}

// G G^T + shift I, well conditioned for shift ~ 1.
inline uoro::DenseMatrix pd(std::size_t n, std::mt19937_64& r, double shift = 0.5) {
  const uoro::DenseMatrix g = mat(n, n, r);
  uoro::DenseMatrix m = uoro::matmul(g, g.transposed());
  for (std::size_t i = 0; i < n; ++i) m(i, i) += shift;
  return m;
}

inline uoro::DenseMatrix positive(std::size_t rows, std::size_t cols, std::mt19937_64& r) {
  std::uniform_real_distribution<double> u(0.05, 2.0);
  uoro::DenseMatrix m(rows, cols);
  for (double& x : m.flat()) x = u(r);
  return m;
}

inline double rel_err(std::span<const double> a, std::span<const double> b) {
  return uoro::norm(uoro::subtract(a, b)) / std::max(uoro::norm(b), 1e-300);
}

inline double max_abs_diff(const uoro::DenseMatrix& a, const uoro::DenseMatrix& b) {
  return uoro::max_abs(a - b);
}

}  // namespace gen
