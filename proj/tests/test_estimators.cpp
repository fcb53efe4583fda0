#include <gtest/gtest.h>

#include <cmath>

#include "gen.hpp"
#include "uoro/estimators.hpp"
#include "uoro/harness.hpp"
#include "uoro/montecarlo.hpp"
#include "uoro/variance.hpp"

using namespace uoro;

namespace {

struct Case {
  Instance inst;
  EpisodeTape tape;
  Vector exact;
};

Case make_case(CellKind cell, std::size_t H, std::size_t T, std::uint64_t seed) {
  Case c{make_instance(cell, H, 2, T, seed), {}, {}};
  c.tape = run_episode(c.inst.params, c.inst.head, c.inst.episode);
  c.exact = bptt_gradient(c.tape).g;
  return c;
}

Vector positive_alpha(std::size_t T, std::uint64_t seed) {
  auto r = gen::rng(seed);
  std::uniform_real_distribution<double> u(0.3, 3.0);
  Vector a(T);
  for (double& x : a) x = u(r);
  return a;
}

// Max |mean - exact| / se over coordinates.
double max_z(const SampleStats& s, const Vector& exact) {
  const Vector se = s.standard_error();
  double z = 0.0;
  for (std::size_t i = 0; i < exact.size(); ++i)
    if (se[i] > 0) z = std::max(z, std::abs(s.mean()[i] - exact[i]) / se[i]);
  return z;
}

}  // namespace

TEST(Noise, DeterministicAndIndependentStreams) {
  EpisodeNoise a(7, 3, NoiseMode::SignGaussian, 4, true), b(7, 3, NoiseMode::SignGaussian, 4, true);
  EpisodeNoise c(7, 4, NoiseMode::SignGaussian, 4, true);
  for (int i = 0; i < 5; ++i) {
    const StepNoise x = a.next(), y = b.next(), z = c.next();
    EXPECT_EQ(x.u, y.u);
    EXPECT_EQ(x.mu, y.mu);
    EXPECT_NE(x.nu, z.nu);
    EXPECT_TRUE(x.tau == 1.0 || x.tau == -1.0);
    for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(x.u[k], x.tau * x.nu[k]);
  }
}

TEST(Noise, SecondMomentIsIdentity) {
  const SampleStats s = monte_carlo(40000, 9, [](std::uint64_t i, Vector& out) {
    EpisodeNoise n(1, i, NoiseMode::SignGaussian, 3);
    const Vector u = n.next().u;
    for (std::size_t a = 0; a < 3; ++a)
      for (std::size_t b = 0; b < 3; ++b) out[a * 3 + b] = u[a] * u[b];
  });
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = 0; b < 3; ++b)
      EXPECT_LT(std::abs(s.mean()[a * 3 + b] - (a == b ? 1.0 : 0.0)), 5 * s.standard_error()[a * 3 + b]);
}

TEST(Schedule, AlphaBetaGammaRoundTrip) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Vector alpha = positive_alpha(1 + s, s);
    const ScalingSchedule sch = ScalingSchedule::fixed_alpha(alpha);
    const Vector back = beta_gamma_to_alpha(sch.beta, sch.gamma);
    EXPECT_LT(gen::rel_err(back, alpha), 1e-13);
    for (double b : sch.beta) EXPECT_GT(b, 0.0);
  }
}

TEST(Schedule, IllConditionedQ0Rejected) {
  ScalingSchedule s = ScalingSchedule::gir();
  EXPECT_THROW(s.set_q0(DenseMatrix::diagonal(Vector{1.0, 1e-9})), NumericError);
  s.set_q0(DenseMatrix::diagonal(Vector{2.0, 0.5}));
  const Vector u{1.0, 1.0};
  EXPECT_EQ(s.apply_q0(u), (Vector{2.0, 0.5}));
  EXPECT_EQ(s.apply_q0_inv_t(u), (Vector{0.5, 2.0}));
}

TEST(Uoro, GirFallsBackToOneOnZeroState) {
  const Case c = make_case(CellKind::VanillaTanh, 3, 2, 1);
  const RankOneState zero = RankOneState::zeros(3, c.inst.params->param_count());
  const Vector u{0.3, -1.0, 0.5};
  const GirCoefficients g = gir_coefficients(zero, c.tape.steps[0], CutVertex::Preactivation, u, ScalingSchedule::gir());
  EXPECT_EQ(g.gamma, 1.0);
  EXPECT_GT(g.beta, 0.0);
}

TEST(Uoro, GirEqualizesCrossTermNorms) {
  const Case c = make_case(CellKind::VanillaTanh, 3, 4, 2);
  EpisodeNoise noise(3, 0, NoiseMode::SignGaussian, 3);
  RankOneState st = RankOneState::zeros(3, c.inst.params->param_count());
  const ScalingSchedule gir = ScalingSchedule::gir();
  for (std::size_t t = 0; t < 4; ++t) {
    const StepCache& sc = c.tape.steps[t];
    const Vector u = noise.next().u;
    GirCoefficients g;
    const RankOneState next = uoro_step(st, sc, CutVertex::Preactivation, u, gir, t, &g);
    if (t > 0) {
      EXPECT_NEAR(g.gamma * g.gamma, norm(st.w) / norm(jvp_state(sc, st.h)), 1e-12 * g.gamma * g.gamma);
    }
    const double left = g.beta * norm(jvp_cut(sc, CutVertex::Preactivation, u));
    const double right = norm(vjp_cut(sc, CutVertex::Preactivation, u)) / g.beta;
    EXPECT_NEAR(left, right, 1e-12 * left);
    st = next;
  }
}

TEST(Uoro, OnlineMatchesOfflineForFixedAlpha) {
  for (CutVertex cut : {CutVertex::Preactivation, CutVertex::State}) {
    for (CellKind cell : {CellKind::VanillaTanh, CellKind::Lstm}) {
      const Case c = make_case(cell, 3, 7, 5);
      const EpisodeTensors et = episode_tensors(c.tape, cut);
      auto r = gen::rng(6);
      const DenseMatrix q0 = gen::pd(et.dim, r, 1.0);
      EstimatorOptions opts;
      opts.cut = cut;
      opts.schedule = ScalingSchedule::fixed_alpha(positive_alpha(7, 9));
      opts.schedule.set_q0(q0);
      EpisodeNoise noise(11, 2, NoiseMode::SignGaussian, et.dim);
      const EstimateResult res = run_uoro(c.tape, opts, noise);
      const Vector alpha = beta_gamma_to_alpha(opts.schedule.beta, opts.schedule.gamma);
      EXPECT_LT(gen::rel_err(res.gradient, offline_total_estimate(et, res.u, alpha, q0)), 1e-9);
    }
  }
}

TEST(Uoro, OnlineMatchesOfflineUnderGir) {
  const Case c = make_case(CellKind::Lstm, 3, 9, 8);
  const EpisodeTensors et = episode_tensors(c.tape, CutVertex::Preactivation);
  EstimatorOptions opts;
  opts.schedule = ScalingSchedule::gir(1.7);
  EpisodeNoise noise(2, 2, NoiseMode::Gaussian, et.dim);
  const EstimateResult res = run_uoro(c.tape, opts, noise);
  const Vector alpha = beta_gamma_to_alpha(res.betas, res.gammas);
  EXPECT_LT(gen::rel_err(res.gradient, offline_total_estimate(et, res.u, alpha)), 1e-9);
}

TEST(Uoro, UnbiasedSmallInstance) {
  const Case c = make_case(CellKind::VanillaTanh, 2, 3, 12);
  for (bool lagged : {false, true}) {
    EstimatorOptions opts;
    opts.schedule = ScalingSchedule::gir();
    opts.lagged_split = lagged;
    const SampleStats s = monte_carlo(20000, c.exact.size(), [&](std::uint64_t i, Vector& out) {
      EpisodeNoise n(4, i, NoiseMode::SignGaussian, 2);
      out = run_uoro(c.tape, opts, n).gradient;
    });
    EXPECT_LT(max_z(s, c.exact), 5.0) << "lagged " << lagged;
  }
}

TEST(Uoro, LaggedSplitEqualsDefaultInExpectationOnly) {
  const Case c = make_case(CellKind::VanillaTanh, 2, 4, 13);
  EstimatorOptions a, b;
  a.schedule = b.schedule = ScalingSchedule::unit(4);
  b.lagged_split = true;
  EpisodeNoise n1(1, 1, NoiseMode::SignGaussian, 2), n2(1, 1, NoiseMode::SignGaussian, 2);
  const Vector ga = run_uoro(c.tape, a, n1).gradient, gb = run_uoro(c.tape, b, n2).gradient;
  EXPECT_GT(gen::rel_err(ga, gb), 1e-6);
}

TEST(PreUoro, SingleStepIsExactForEitherTau) {
  const Case c = make_case(CellKind::VanillaTanh, 3, 1, 14);
  EstimatorOptions opts;
  opts.schedule = ScalingSchedule::gir();
  EpisodeNoise n(1, 0, NoiseMode::SignGaussian, 3);
  EXPECT_LT(gen::rel_err(run_preuoro(c.tape, opts, n).gradient, c.exact), 1e-12);
}

TEST(PreUoro, MatchesOfflineDoubleSum) {
  const Case c = make_case(CellKind::Lstm, 2, 5, 15);
  const EpisodeTensors et = episode_tensors(c.tape, CutVertex::Preactivation);
  const Vector alpha = positive_alpha(5, 3);
  EstimatorOptions opts;
  opts.schedule = ScalingSchedule::fixed_alpha(alpha);
  EpisodeNoise n(5, 1, NoiseMode::Gaussian, c.inst.params->preact_dim());
  const EstimateResult r = run_preuoro(c.tape, opts, n);
  Vector offline(c.exact.size(), 0.0);
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t rr = 0; rr <= t; ++rr)
      for (std::size_t q = 0; q <= t; ++q)
        axpy(alpha[rr] / alpha[q] * r.taus[rr] * r.taus[q], outer(et.at(t, rr), et.a[q]).data(), offline);
  EXPECT_LT(gen::rel_err(r.gradient, offline), 1e-9);
}

TEST(PreUoro, RejectsNonPreactivationCut) {
  const Case c = make_case(CellKind::VanillaTanh, 2, 2, 1);
  EstimatorOptions opts;
  opts.cut = CutVertex::State;
  EpisodeNoise n(1, 0, NoiseMode::SignGaussian, 2);
  EXPECT_THROW(run_preuoro(c.tape, opts, n), std::invalid_argument);
}

TEST(PreUoro, UnbiasedSmallInstance) {
  const Case c = make_case(CellKind::VanillaTanh, 2, 4, 16);
  EstimatorOptions opts;
  opts.schedule = ScalingSchedule::gir();
  const SampleStats s = monte_carlo(20000, c.exact.size(), [&](std::uint64_t i, Vector& out) {
    EpisodeNoise n(4, i, NoiseMode::SignGaussian, 2);
    out = run_preuoro(c.tape, opts, n).gradient;
  });
  EXPECT_LT(max_z(s, c.exact), 5.0);
}

TEST(Spatial, UnbiasedSmallInstance) {
  const Case c = make_case(CellKind::VanillaTanh, 2, 4, 17);
  EstimatorOptions opts;
  opts.schedule = ScalingSchedule::unit(4);
  const SampleStats s = monte_carlo(20000, c.exact.size(), [&](std::uint64_t i, Vector& out) {
    EpisodeNoise n(4, i, NoiseMode::Gaussian, 2);
    out = run_spatial(c.tape, opts, n).gradient;
  });
  EXPECT_LT(max_z(s, c.exact), 5.0);
}

TEST(Reinforce, ApproachesSameNoiseUoroAsSigmaShrinks) {
  const Case c = make_case(CellKind::VanillaTanh, 3, 4, 18);
  double prev = 0.0;
  for (double sigma : {1e-1, 1e-2, 1e-3}) {
    ReinforceOptions o;
    o.sigma = sigma;
    o.schedule = ScalingSchedule::unit(4);
    EpisodeNoise n(9, 0, NoiseMode::SignGaussian, 3);
    const ReinforceResult r = reinforce_episode(*c.inst.params, c.inst.head, c.inst.episode, o, n);
    const double d = norm(subtract(r.estimate, r.uoro_same_noise));
    if (prev > 0.0) EXPECT_LT(d, 0.3 * prev);
    prev = d;
  }
}

TEST(Reinforce, RejectsBadSigma) {
  const Case c = make_case(CellKind::VanillaTanh, 2, 2, 1);
  ReinforceOptions o;
  o.sigma = 0.0;
  EpisodeNoise n(1, 0, NoiseMode::SignGaussian, 2);
  EXPECT_THROW(reinforce_episode(*c.inst.params, c.inst.head, c.inst.episode, o, n), std::invalid_argument);
}
