#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "uoro/kernels.hpp"
#include "uoro/linalg.hpp"

namespace uoro {

// Running mean / second central moment per coordinate (Welford), with Chan's
// pairwise merge.
class SampleStats {
 public:
  SampleStats() = default;
  explicit SampleStats(std::size_t dim) : mean_(dim, 0.0), m2_(dim, 0.0) {}

  void add(std::span<const double> x);
  void merge(const SampleStats& other);

  std::size_t dim() const { return mean_.size(); }
  std::size_t count() const { return count_; }
  const Vector& mean() const { return mean_; }
  // Unbiased sample variance.
  Vector variance() const;
  Vector standard_error() const;

 private:
  Vector mean_;
  Vector m2_;
  std::size_t count_ = 0;
};

struct MonteCarloOptions {
  std::size_t block_size = 256;
  Execution exec = Execution::Parallel;
};

// Merges block results in a fixed binary-tree order.
SampleStats combine_blocks(std::vector<SampleStats> blocks);

// Draws `n` replicates of `sample(index, out)`, which must fill `out` (length
// dim) deterministically from the replicate index. Blocks of consecutive
// indices are reduced sequentially and then merged pairwise, so serial and
// parallel runs agree bit for bit.
template <class Sampler>
SampleStats monte_carlo(std::size_t n, std::size_t dim, Sampler&& sample, MonteCarloOptions opts = {}) {
  const std::size_t bs = opts.block_size == 0 ? 256 : opts.block_size;
  const std::size_t nblocks = (n + bs - 1) / bs;
  std::vector<SampleStats> blocks(nblocks, SampleStats(dim));
  auto run_block = [&](std::size_t b) {
    Vector out(dim);
    const std::size_t lo = b * bs;
    const std::size_t hi = std::min(n, lo + bs);
    for (std::size_t i = lo; i < hi; ++i) {
      std::fill(out.begin(), out.end(), 0.0);
      sample(static_cast<std::uint64_t>(i), out);
      blocks[b].add(out);
    }
  };
  if (opts.exec == Execution::Parallel) {
    const auto nb = static_cast<std::ptrdiff_t>(nblocks);
#pragma omp parallel for schedule(dynamic, 1)
    for (std::ptrdiff_t b = 0; b < nb; ++b) run_block(static_cast<std::size_t>(b));
  } else {
    for (std::size_t b = 0; b < nblocks; ++b) run_block(b);
  }
  return combine_blocks(std::move(blocks));
}

// Sums vectors in a fixed pairwise tree order.
Vector pairwise_sum(const std::vector<Vector>& parts);

}  // namespace uoro
