#include "uoro/optim.hpp"

#include <cmath>

namespace uoro {

void adam_update(std::span<double> params, std::span<const double> grad, AdamState& state, const AdamConfig& cfg) {
  if (grad.size() != params.size() || state.m.size() != params.size()) {
    throw DimensionError("adam_update: parameter, gradient and state sizes differ");
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(cfg.momentum, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = cfg.momentum * state.m[i] + (1.0 - cfg.momentum) * grad[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

}  // namespace uoro
