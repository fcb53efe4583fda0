#pragma once

#include <vector>

#include "uoro/kernels.hpp"
#include "uoro/rnn.hpp"

namespace uoro {

struct GradientVector {
  Vector g;
  double loss = 0.0;
};

GradientVector bptt_gradient(const EpisodeTape& tape);

struct RtrlResult {
  std::vector<DenseMatrix> jacobians;  // J^{s_t}_{theta}, one per step
  GradientVector gradient;
};

RtrlResult rtrl_jacobians(const EpisodeTape& tape, Execution exec = Execution::Parallel);

// Gradient of the summed loss by central differences over theta.
Vector finite_difference_gradient(const RnnParams& params, const ReadoutHead& head, const Episode& episode,
                                  double eps = 1e-5);

// b(t, s) = dL_t / dz_s (zero for s > t); indices are 0-based.
struct EpisodeTensors {
  CutVertex cut = CutVertex::Preactivation;
  std::size_t T = 0;
  std::size_t dim = 0;
  std::vector<std::vector<Vector>> b;  // b[t][s]
  Vector a_sq_norms;                   // ||a_s||^2
  std::vector<Vector> a;               // augmented inputs
  std::vector<DenseMatrix> J;          // J^{z_s}_{theta} when the cut is not the preactivation

  const Vector& at(std::size_t t, std::size_t s) const { return b[t][s]; }
};

inline constexpr std::size_t kTensorLimit = 100'000;

EpisodeTensors episode_tensors(const EpisodeTape& tape, CutVertex cut);

}  // namespace uoro
