#pragma once

#include "uoro/linalg.hpp"

namespace uoro {

struct AdamState {
  Vector m;
  Vector v;
  std::size_t t = 0;
  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

struct AdamConfig {
  double lr = 1e-3;
  double momentum = 0.9;  // beta1
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam step applied in place.
void adam_update(std::span<double> params, std::span<const double> grad, AdamState& state, const AdamConfig& cfg);

}  // namespace uoro
