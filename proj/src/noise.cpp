#include "uoro/noise.hpp"

#include <stdexcept>

namespace uoro {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::string to_string(NoiseMode mode) { return mode == NoiseMode::Gaussian ? "gaussian" : "sign-gaussian"; }

NoiseMode parse_noise_mode(const std::string& text) {
  if (text == "gaussian") return NoiseMode::Gaussian;
  if (text == "sign-gaussian" || text == "sign") return NoiseMode::SignGaussian;
  throw std::invalid_argument("unknown noise mode '" + text + "'");
}

std::uint64_t mix_seed(std::uint64_t base_seed, std::uint64_t episode, std::uint64_t stream) {
  return splitmix64(splitmix64(splitmix64(base_seed) ^ episode) ^ (stream * 0xd1b54a32d192ed03ULL));
}

NoiseStream::NoiseStream(std::uint64_t base_seed, std::uint64_t episode, StreamId stream)
    : rng_(mix_seed(base_seed, episode, static_cast<std::uint64_t>(stream))) {}

void NoiseStream::fill_gaussian(std::span<double> out) {
  for (double& x : out) x = gauss_(rng_);
}

EpisodeNoise::EpisodeNoise(std::uint64_t base_seed, std::uint64_t episode, NoiseMode mode, std::size_t dim,
                           bool replicas)
    : mode_(mode),
      dim_(dim),
      replicas_(replicas),
      tau_(base_seed, episode, StreamId::Tau),
      nu_(base_seed, episode, StreamId::Nu),
      sigma_(base_seed, episode, StreamId::Sigma),
      mu_(base_seed, episode, StreamId::Mu) {}

StepNoise EpisodeNoise::next() {
  StepNoise n;
  n.nu.resize(dim_);
  nu_.fill_gaussian(n.nu);
  if (mode_ == NoiseMode::SignGaussian) {
    n.tau = tau_.sign();
    n.u = scaled(n.nu, n.tau);
  } else {
    n.tau = tau_.gaussian();
    n.u = n.nu;
  }
  if (replicas_) {
    n.sigma = mode_ == NoiseMode::SignGaussian ? sigma_.sign() : sigma_.gaussian();
    n.mu.resize(dim_);
    mu_.fill_gaussian(n.mu);
  }
  return n;
}

}  // namespace uoro
