#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "uoro/linalg.hpp"

namespace uoro {

// SignGaussian: tau is a random sign, nu standard normal, u = tau * nu.
// Gaussian: u = nu directly and tau is a standard normal scalar.
enum class NoiseMode { SignGaussian, Gaussian };

std::string to_string(NoiseMode mode);
NoiseMode parse_noise_mode(const std::string& text);

enum class StreamId : std::uint64_t { Tau = 1, Nu = 2, Sigma = 3, Mu = 4, Extra = 5 };

std::uint64_t mix_seed(std::uint64_t base_seed, std::uint64_t episode, std::uint64_t stream);

class NoiseStream {
 public:
  NoiseStream(std::uint64_t base_seed, std::uint64_t episode, StreamId stream);

  double gaussian() { return gauss_(rng_); }
  double sign() { return (rng_() >> 63) ? 1.0 : -1.0; }
  void fill_gaussian(std::span<double> out);

 private:
  std::mt19937_64 rng_;
  std::normal_distribution<double> gauss_{0.0, 1.0};
};

struct StepNoise {
  double tau = 1.0;
  Vector nu;
  Vector u;
  // replicas for the online B estimator
  double sigma = 0.0;
  Vector mu;
};

// Per-episode bundle of independent streams; step draws are taken in order.
class EpisodeNoise {
 public:
  EpisodeNoise(std::uint64_t base_seed, std::uint64_t episode, NoiseMode mode, std::size_t dim,
               bool replicas = false);

  StepNoise next();
  NoiseMode mode() const { return mode_; }
  std::size_t dim() const { return dim_; }
  bool has_replicas() const { return replicas_; }

 private:
  NoiseMode mode_;
  std::size_t dim_;
  bool replicas_;
  NoiseStream tau_;
  NoiseStream nu_;
  NoiseStream sigma_;
  NoiseStream mu_;
};

}  // namespace uoro
