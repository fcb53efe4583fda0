#include "uoro/montecarlo.hpp"

namespace uoro {

void SampleStats::add(std::span<const double> x) {
  if (x.size() != mean_.size()) throw DimensionError("SampleStats::add: dimension mismatch");
  ++count_;
  const double inv = 1.0 / static_cast<double>(count_);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double delta = x[i] - mean_[i];
    mean_[i] += delta * inv;
    m2_[i] += delta * (x[i] - mean_[i]);
  }
}

void SampleStats::merge(const SampleStats& other) {
  if (other.count_ == 0) return;
  if (count_ == 0) {
    *this = other;
    return;
  }
  if (other.dim() != dim()) throw DimensionError("SampleStats::merge: dimension mismatch");
  const double na = static_cast<double>(count_);
  const double nb = static_cast<double>(other.count_);
  const double n = na + nb;
  for (std::size_t i = 0; i < mean_.size(); ++i) {
    const double delta = other.mean_[i] - mean_[i];
    mean_[i] += delta * nb / n;
    m2_[i] += other.m2_[i] + delta * delta * na * nb / n;
  }
  count_ += other.count_;
}

Vector SampleStats::variance() const {
  Vector v(mean_.size(), 0.0);
  if (count_ < 2) return v;
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = m2_[i] / static_cast<double>(count_ - 1);
  return v;
}

Vector SampleStats::standard_error() const {
  Vector se = variance();
  for (double& s : se) s = std::sqrt(s / static_cast<double>(std::max<std::size_t>(count_, 1)));
  return se;
}

SampleStats combine_blocks(std::vector<SampleStats> blocks) {
  if (blocks.empty()) return {};
  std::size_t stride = 1;
  while (stride < blocks.size()) {
    for (std::size_t i = 0; i + stride < blocks.size(); i += 2 * stride) blocks[i].merge(blocks[i + stride]);
    stride *= 2;
  }
  return std::move(blocks.front());
}

Vector pairwise_sum(const std::vector<Vector>& parts) {
  if (parts.empty()) return {};
  std::vector<Vector> work = parts;
  std::size_t stride = 1;
  while (stride < work.size()) {
    for (std::size_t i = 0; i + stride < work.size(); i += 2 * stride) axpy(1.0, work[i + stride], work[i]);
    stride *= 2;
  }
  return std::move(work.front());
}

}  // namespace uoro
