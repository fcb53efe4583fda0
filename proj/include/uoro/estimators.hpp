#pragma once

#include <string>
#include <vector>

#include "uoro/exact.hpp"
#include "uoro/noise.hpp"
#include "uoro/rnn.hpp"

namespace uoro {

enum class ScheduleMode { Gir, FixedAlpha };

// Per-step temporal coefficients and the spatial matrix Q0. In fixed-alpha
// mode beta and gamma have one entry per step; gamma[0] is unused.
struct ScalingSchedule {
  ScheduleMode mode = ScheduleMode::Gir;
  DenseMatrix q0;  // empty means identity
  DenseMatrix q0_inv;
  Vector beta;
  Vector gamma;
  // Common rescaling of gamma^2 and beta^2 under GIR. It moves mass between
  // h~ and w~ without changing their product.
  double gir_scale = 1.0;

  static ScalingSchedule gir(double scale = 1.0);
  static ScalingSchedule fixed_alpha(const Vector& alpha);
  static ScalingSchedule unit(std::size_t T);

  void set_q0(const DenseMatrix& q0);
  bool identity_q0() const { return q0.empty(); }
  Vector apply_q0(std::span<const double> u) const;        // Q0 u
  Vector apply_q0_inv_t(std::span<const double> u) const;  // Q0^{-T} u
};

struct BetaGamma {
  Vector beta;   // length T
  Vector gamma;  // length T-1: gamma_2 .. gamma_T
};

BetaGamma alpha_to_beta_gamma(const Vector& alpha);
// alpha_s = beta_s * gamma_{s+1} * ... * gamma_T, evaluated in log space.
// `gamma` has length T with gamma[0] ignored.
Vector beta_gamma_to_alpha(const Vector& beta, const Vector& gamma);

struct RankOneState {
  Vector h;
  Vector w;
  static RankOneState zeros(std::size_t state_dim, std::size_t param_dim);
};

struct PreUoroState {
  DenseMatrix H;  // state_dim x preact_dim
  Vector w;       // aug_dim
  static PreUoroState zeros(const RnnParams& params);
};

struct GirCoefficients {
  double gamma = 1.0;
  double beta = 1.0;
};

GirCoefficients gir_coefficients(const RankOneState& prev, const StepCache& cache, CutVertex cut,
                                 std::span<const double> u, const ScalingSchedule& schedule);

RankOneState uoro_step(const RankOneState& prev, const StepCache& cache, CutVertex cut, std::span<const double> u,
                       const ScalingSchedule& schedule, std::size_t t, GirCoefficients* used = nullptr);

// (dL_t/ds_t . h~_t) w~_t
Vector uoro_contribution(const RankOneState& state, std::span<const double> dl_ds);

PreUoroState preuoro_step(const PreUoroState& prev, const StepCache& cache, double tau,
                          const ScalingSchedule& schedule, std::size_t t, GirCoefficients* used = nullptr);
Vector preuoro_contribution(const PreUoroState& state, std::span<const double> dl_ds);

struct EstimatorOptions {
  CutVertex cut = CutVertex::Preactivation;
  ScalingSchedule schedule;
  // Original split: exact local gradient plus the forwarded sketch at t-1.
  bool lagged_split = false;
  bool keep_contributions = false;
};

struct EstimateResult {
  Vector gradient;
  std::vector<Vector> contributions;
  Vector gammas;
  Vector betas;
  std::vector<Vector> u;  // spatial noise per step (uoro, spatial)
  Vector taus;            // temporal noise per step (preuoro)
};

EstimateResult run_uoro(const EpisodeTape& tape, const EstimatorOptions& opts, EpisodeNoise& noise);
EstimateResult run_preuoro(const EpisodeTape& tape, const EstimatorOptions& opts, EpisodeNoise& noise);
// Dense forward accumulation with a fresh rank-one spatial projection per step.
EstimateResult run_spatial(const EpisodeTape& tape, const EstimatorOptions& opts, EpisodeNoise& noise);

struct ReinforceOptions {
  double sigma = 1e-2;
  bool use_baseline = true;
  ScalingSchedule schedule;  // Q_t = alpha_t Q0; GIR mode means alpha = 1
};

struct ReinforceResult {
  Vector estimate;
  Vector uoro_same_noise;  // state-cut UORO on the clean system, same u
  Vector noisy_losses;
  Vector baseline;
};

ReinforceResult reinforce_episode(const RnnParams& params, const ReadoutHead& head, const Episode& episode,
                                  const ReinforceOptions& opts, EpisodeNoise& noise,
                                  std::span<const double> s0 = {});

// Dense Jacobians needed by the matrix-valued recursions.
DenseMatrix state_jacobian(const StepCache& cache);
DenseMatrix cut_jacobian(const StepCache& cache, CutVertex cut);

}  // namespace uoro
