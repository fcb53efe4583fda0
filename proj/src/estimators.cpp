#include "uoro/estimators.hpp"

#include <cmath>

#include "uoro/kernels.hpp"

namespace uoro {

namespace {

// Ratio num/den, or nothing usable when either side is degenerate.
bool usable_ratio(double num, double den, double& out) {
  if (!(num > 0.0) || !(den > 0.0)) return false;
  out = num / den;
  return std::isfinite(out);
}

void check_finite(const Vector& v, const char* what, std::size_t t) {
  if (!all_finite(v)) throw NumericError(std::string(what) + ": non-finite value at step " + std::to_string(t));
}

GirCoefficients gir_from_parts(double w_norm, double forwarded_norm, double w_new_norm, double spatial_norm,
                               double scale) {
  GirCoefficients c;
  double r = 0.0;
  if (usable_ratio(w_norm, forwarded_norm, r)) c.gamma = std::sqrt(scale * r);
  if (usable_ratio(w_new_norm, spatial_norm, r)) c.beta = std::sqrt(scale * r);
  return c;
}

GirCoefficients fixed_coefficients(const ScalingSchedule& s, std::size_t t) {
  if (t >= s.beta.size()) {
    throw DimensionError("schedule: fixed coefficients cover " + std::to_string(s.beta.size()) +
                         " steps, step " + std::to_string(t) + " requested");
  }
  return {t == 0 ? 1.0 : s.gamma[t], s.beta[t]};
}

}  // namespace

ScalingSchedule ScalingSchedule::gir(double scale) {
  ScalingSchedule s;
  s.mode = ScheduleMode::Gir;
  s.gir_scale = scale;
  return s;
}

ScalingSchedule ScalingSchedule::fixed_alpha(const Vector& alpha) {
  const BetaGamma bg = alpha_to_beta_gamma(alpha);
  ScalingSchedule s;
  s.mode = ScheduleMode::FixedAlpha;
  s.beta = bg.beta;
  s.gamma.assign(alpha.size(), 1.0);
  for (std::size_t i = 0; i < bg.gamma.size(); ++i) s.gamma[i + 1] = bg.gamma[i];
  return s;
}

ScalingSchedule ScalingSchedule::unit(std::size_t T) { return fixed_alpha(Vector(T, 1.0)); }

void ScalingSchedule::set_q0(const DenseMatrix& m) {
  if (!m.is_square()) throw DimensionError("set_q0: Q0 must be square");
  if (condition_number(m) > 1e8) throw SingularityError("set_q0: Q0 condition number exceeds 1e8");
  q0 = m;
  q0_inv = inverse(m);
}

Vector ScalingSchedule::apply_q0(std::span<const double> u) const {
  if (q0.empty()) return Vector(u.begin(), u.end());
  return matvec(q0, u);
}

Vector ScalingSchedule::apply_q0_inv_t(std::span<const double> u) const {
  if (q0.empty()) return Vector(u.begin(), u.end());
  return vecmat(u, q0_inv);
}

BetaGamma alpha_to_beta_gamma(const Vector& alpha) {
  const std::size_t T = alpha.size();
  if (T == 0) throw DimensionError("alpha_to_beta_gamma: empty alpha");
  for (double a : alpha)
    if (!(a > 0.0) || !std::isfinite(a)) throw std::invalid_argument("alpha_to_beta_gamma: alpha must be positive");
  BetaGamma out;
  if (T == 1) {
    out.beta = alpha;
    return out;
  }
  const double log_g = (std::log(alpha.back()) - std::log(alpha.front())) / static_cast<double>(T - 1);
  out.gamma.assign(T - 1, std::exp(log_g));
  out.beta.resize(T);
  for (std::size_t s = 0; s < T; ++s) out.beta[s] = std::exp(std::log(alpha[s]) - static_cast<double>(T - 1 - s) * log_g);
  return out;
}

Vector beta_gamma_to_alpha(const Vector& beta, const Vector& gamma) {
  const std::size_t T = beta.size();
  if (gamma.size() != T) throw DimensionError("beta_gamma_to_alpha: gamma must have one entry per step");
  Vector alpha(T);
  double log_tail = 0.0;
  for (std::size_t s = T; s-- > 0;) {
    alpha[s] = std::exp(std::log(beta[s]) + log_tail);
    log_tail += std::log(gamma[s]);
  }
  return alpha;
}

RankOneState RankOneState::zeros(std::size_t state_dim, std::size_t param_dim) {
  return {Vector(state_dim, 0.0), Vector(param_dim, 0.0)};
}

PreUoroState PreUoroState::zeros(const RnnParams& params) {
  return {DenseMatrix(params.state_dim(), params.preact_dim()), Vector(params.aug_dim(), 0.0)};
}

GirCoefficients gir_coefficients(const RankOneState& prev, const StepCache& cache, CutVertex cut,
                                 std::span<const double> u, const ScalingSchedule& schedule) {
  const Vector forwarded = jvp_state(cache, prev.h);
  const Vector spatial = jvp_cut(cache, cut, schedule.apply_q0(u));
  const Vector w_new = vjp_cut(cache, cut, schedule.apply_q0_inv_t(u));
  return gir_from_parts(norm(prev.w), norm(forwarded), norm(w_new), norm(spatial), schedule.gir_scale);
}

RankOneState uoro_step(const RankOneState& prev, const StepCache& cache, CutVertex cut, std::span<const double> u,
                       const ScalingSchedule& schedule, std::size_t t, GirCoefficients* used) {
  if (u.size() != cut_dim(cache, cut)) throw DimensionError("uoro_step: noise dimension does not match the cut");
  const Vector forwarded = jvp_state(cache, prev.h);
  const Vector spatial = jvp_cut(cache, cut, schedule.apply_q0(u));
  const Vector w_new = vjp_cut(cache, cut, schedule.apply_q0_inv_t(u));
  const GirCoefficients c = schedule.mode == ScheduleMode::Gir
                                ? gir_from_parts(norm(prev.w), norm(forwarded), norm(w_new), norm(spatial), schedule.gir_scale)
                                : fixed_coefficients(schedule, t);
  if (used) *used = c;
  RankOneState next{scaled(forwarded, c.gamma), scaled(prev.w, 1.0 / c.gamma)};
  axpy(c.beta, spatial, next.h);
  axpy(1.0 / c.beta, w_new, next.w);
  check_finite(next.h, "uoro_step", t);
  check_finite(next.w, "uoro_step", t);
  return next;
}

Vector uoro_contribution(const RankOneState& state, std::span<const double> dl_ds) {
  return scaled(state.w, dot(dl_ds, state.h));
}

DenseMatrix state_jacobian(const StepCache& cache) {
  const RnnParams& p = *cache.params;
  const std::size_t S = p.state_dim();
  DenseMatrix J(S, S);
  if (p.cell != CellKind::Lstm) {
    for (std::size_t i = 0; i < S; ++i)
      for (std::size_t k = 0; k < S; ++k) J(i, k) = cache.dact[i] * p.W(i, k);
    return J;
  }
  Vector e(S, 0.0);
  for (std::size_t j = 0; j < S; ++j) {
    e[j] = 1.0;
    J.set_column(j, jvp_state(cache, e));
    e[j] = 0.0;
  }
  return J;
}

DenseMatrix cut_jacobian(const StepCache& cache, CutVertex cut) {
  const std::size_t S = cache.params->state_dim();
  const std::size_t Z = cut_dim(cache, cut);
  DenseMatrix J(S, Z);
  if (cut == CutVertex::Preactivation && cache.params->cell != CellKind::Lstm) {
    for (std::size_t i = 0; i < S; ++i) J(i, i) = cache.dact[i];
    return J;
  }
  Vector e(Z, 0.0);
  for (std::size_t j = 0; j < Z; ++j) {
    e[j] = 1.0;
    J.set_column(j, jvp_cut(cache, cut, e));
    e[j] = 0.0;
  }
  return J;
}

PreUoroState preuoro_step(const PreUoroState& prev, const StepCache& cache, double tau,
                          const ScalingSchedule& schedule, std::size_t t, GirCoefficients* used) {
  const DenseMatrix Jss = state_jacobian(cache);
  const DenseMatrix Jsz = cut_jacobian(cache, CutVertex::Preactivation);
  DenseMatrix forwarded(Jss.rows(), prev.H.cols());
  kernels::gemm_serial(Jss, prev.H, forwarded);
  GirCoefficients c;
  if (schedule.mode == ScheduleMode::Gir) {
    c = gir_from_parts(norm(prev.w), frob_norm(forwarded), norm(cache.a), frob_norm(Jsz), schedule.gir_scale);
  } else {
    c = fixed_coefficients(schedule, t);
  }
  if (used) *used = c;
  PreUoroState next;
  next.H = c.gamma * std::move(forwarded);
  DenseMatrix fresh = (c.beta * tau) * Jsz;
  next.H += fresh;
  next.w = scaled(prev.w, 1.0 / c.gamma);
  axpy(tau / c.beta, cache.a, next.w);
  if (!next.H.all_finite()) throw NumericError("preuoro_step: non-finite value at step " + std::to_string(t));
  check_finite(next.w, "preuoro_step", t);
  return next;
}

Vector preuoro_contribution(const PreUoroState& state, std::span<const double> dl_ds) {
  const Vector gz = vecmat(dl_ds, state.H);
  return outer(gz, state.w).data();
}

EstimateResult run_uoro(const EpisodeTape& tape, const EstimatorOptions& opts, EpisodeNoise& noise) {
  const RnnParams& p = *tape.params;
  const std::size_t T = tape.length();
  if (noise.dim() != cut_dim(p, opts.cut)) throw DimensionError("run_uoro: noise dimension does not match the cut");
  EstimateResult out;
  out.gradient.assign(p.param_count(), 0.0);
  out.gammas.resize(T);
  out.betas.resize(T);
  RankOneState state = RankOneState::zeros(p.state_dim(), p.param_count());
  for (std::size_t t = 0; t < T; ++t) {
    const StepCache& c = tape.steps[t];
    StepNoise n = noise.next();
    GirCoefficients used;
    RankOneState next = uoro_step(state, c, opts.cut, n.u, opts.schedule, t, &used);
    out.gammas[t] = used.gamma;
    out.betas[t] = used.beta;
    Vector contrib;
    if (opts.lagged_split) {
      contrib = vjp_cut(c, CutVertex::Preactivation, vjp_to_cut(c, CutVertex::Preactivation, tape.loss_grads[t]));
      if (t > 0) axpy(dot(tape.loss_grads[t], jvp_state(c, state.h)), state.w, contrib);
    } else {
      contrib = uoro_contribution(next, tape.loss_grads[t]);
    }
    axpy(1.0, contrib, out.gradient);
    if (opts.keep_contributions) out.contributions.push_back(std::move(contrib));
    out.u.push_back(std::move(n.u));
    state = std::move(next);
  }
  return out;
}

EstimateResult run_preuoro(const EpisodeTape& tape, const EstimatorOptions& opts, EpisodeNoise& noise) {
  if (opts.cut != CutVertex::Preactivation) throw std::invalid_argument("run_preuoro: requires the preactivation cut");
  const RnnParams& p = *tape.params;
  const std::size_t T = tape.length();
  EstimateResult out;
  out.gradient.assign(p.param_count(), 0.0);
  out.gammas.resize(T);
  out.betas.resize(T);
  out.taus.resize(T);
  PreUoroState state = PreUoroState::zeros(p);
  for (std::size_t t = 0; t < T; ++t) {
    const double tau = noise.next().tau;
    GirCoefficients used;
    state = preuoro_step(state, tape.steps[t], tau, opts.schedule, t, &used);
    out.gammas[t] = used.gamma;
    out.betas[t] = used.beta;
    out.taus[t] = tau;
    Vector contrib = preuoro_contribution(state, tape.loss_grads[t]);
    axpy(1.0, contrib, out.gradient);
    if (opts.keep_contributions) out.contributions.push_back(std::move(contrib));
  }
  return out;
}

EstimateResult run_spatial(const EpisodeTape& tape, const EstimatorOptions& opts, EpisodeNoise& noise) {
  const RnnParams& p = *tape.params;
  const std::size_t T = tape.length();
  const std::size_t S = p.state_dim();
  const std::size_t P = p.param_count();
  if (S * P > kDenseJacobianLimit) throw DimensionError("run_spatial: size guard exceeded (|theta| * dim > 1e7)");
  if (noise.dim() != cut_dim(p, opts.cut)) throw DimensionError("run_spatial: noise dimension does not match the cut");
  EstimateResult out;
  out.gradient.assign(P, 0.0);
  DenseMatrix J(S, P);
  DenseMatrix next(S, P);
  for (std::size_t t = 0; t < T; ++t) {
    const StepCache& c = tape.steps[t];
    StepNoise n = noise.next();
    const Vector left = jvp_cut(c, opts.cut, opts.schedule.apply_q0(n.u));
    const Vector right = vjp_cut(c, opts.cut, opts.schedule.apply_q0_inv_t(n.u));
    if (t > 0) {
      kernels::gemm_parallel(state_jacobian(c), J, next);
    } else {
      next = DenseMatrix(S, P);
    }
    for (std::size_t i = 0; i < S; ++i) axpy(left[i], right, next.row(i));
    std::swap(J, next);
    Vector contrib = kernels::vecmat_serial(tape.loss_grads[t], J);
    axpy(1.0, contrib, out.gradient);
    if (opts.keep_contributions) out.contributions.push_back(std::move(contrib));
    out.u.push_back(std::move(n.u));
  }
  return out;
}

ReinforceResult reinforce_episode(const RnnParams& params, const ReadoutHead& head, const Episode& episode,
                                  const ReinforceOptions& opts, EpisodeNoise& noise, std::span<const double> s0) {
  if (!(opts.sigma > 0.0)) throw std::invalid_argument("reinforce_episode: sigma must be positive");
  const std::size_t T = episode.length();
  const std::size_t S = params.state_dim();
  const std::size_t H = params.hidden;
  const std::size_t P = params.param_count();
  if (noise.dim() != S) throw DimensionError("reinforce_episode: noise dimension must equal the state dimension");
  auto shared = std::make_shared<const RnnParams>(params);
  const EpisodeTape clean = run_episode(shared, head, episode, s0);

  Vector alpha(T, 1.0);
  if (opts.schedule.mode == ScheduleMode::FixedAlpha) alpha = beta_gamma_to_alpha(opts.schedule.beta, opts.schedule.gamma);
  ScalingSchedule uoro_sched = opts.schedule;
  if (uoro_sched.mode != ScheduleMode::FixedAlpha) {
    const ScalingSchedule unit = ScalingSchedule::unit(T);
    uoro_sched.mode = unit.mode;
    uoro_sched.beta = unit.beta;
    uoro_sched.gamma = unit.gamma;
  }

  ReinforceResult out;
  out.estimate.assign(P, 0.0);
  out.uoro_same_noise.assign(P, 0.0);
  out.noisy_losses.resize(T);
  out.baseline.assign(T, 0.0);
  if (opts.use_baseline) out.baseline = clean.losses;

  Vector s_bar = clean.s0;
  Vector w_bar(P, 0.0);
  RankOneState uoro = RankOneState::zeros(S, P);
  for (std::size_t t = 0; t < T; ++t) {
    const StepNoise n = noise.next();
    StepCache c = step(shared, s_bar, episode.inputs[t]);
    const Vector qu = opts.schedule.apply_q0(n.u);
    s_bar = c.s;
    axpy(opts.sigma * alpha[t], qu, s_bar);
    const LossGrad lg = loss_grad(head, std::span<const double>(s_bar).first(H), episode.targets[t]);
    out.noisy_losses[t] = lg.loss;
    const Vector score = vjp_cut(c, CutVertex::State, opts.schedule.apply_q0_inv_t(n.u));
    axpy(1.0 / (opts.sigma * alpha[t]), score, w_bar);
    axpy(lg.loss - out.baseline[t], w_bar, out.estimate);

    uoro = uoro_step(uoro, clean.steps[t], CutVertex::State, n.u, uoro_sched, t);
    axpy(1.0, uoro_contribution(uoro, clean.loss_grads[t]), out.uoro_same_noise);
  }
  if (!all_finite(out.estimate)) throw NumericError("reinforce_episode: non-finite estimate");
  return out;
}

}  // namespace uoro
