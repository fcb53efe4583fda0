#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "uoro/config.hpp"
#include "uoro/estimators.hpp"
#include "uoro/exact.hpp"
#include "uoro/harness.hpp"
#include "uoro/montecarlo.hpp"
#include "uoro/variance.hpp"

using namespace uoro;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::mt19937_64 rng(std::uint64_t seed) { return std::mt19937_64(seed * 0x9E3779B97F4A7C15ULL + 99); }

DenseMatrix random_pd(std::size_t n, std::mt19937_64& r, double shift = 1.0) {
  std::normal_distribution<double> g;
  DenseMatrix m(n, n);
  for (double& x : m.flat()) x = g(r);
  DenseMatrix p = matmul(m, m.transposed());
  for (std::size_t i = 0; i < n; ++i) p(i, i) += shift;
  return p;
}

DenseMatrix random_matrix(std::size_t n, std::mt19937_64& r) {
  std::normal_distribution<double> g;
  DenseMatrix m(n, n);
  for (double& x : m.flat()) x = g(r);
  return m;
}

double rel(std::span<const double> a, std::span<const double> b) {
  return norm(subtract(a, b)) / std::max(norm(b), 1e-300);
}

double max_z(const SampleStats& s, std::span<const double> exact) {
  const Vector se = s.standard_error();
  double z = 0.0;
  for (std::size_t i = 0; i < exact.size(); ++i) {
    const double d = std::abs(s.mean()[i] - exact[i]);
    if (se[i] > 0) z = std::max(z, d / se[i]);
    else if (d > 1e-12 * (1 + std::abs(exact[i]))) z = INFINITY;
  }
  return z;
}

double fit_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

struct Problem {
  Instance inst;
  EpisodeTape tape;
  EpisodeTensors tensors;
  Vector exact;
};

Problem problem(std::size_t H, std::size_t T, std::uint64_t seed) {
  Problem p;
  p.inst = make_instance(CellKind::VanillaTanh, H, 2, T, seed);
  p.tape = run_episode(p.inst.params, p.inst.head, p.inst.episode);
  p.tensors = episode_tensors(p.tape, CutVertex::Preactivation);
  p.exact = bptt_gradient(p.tape).g;
  return p;
}

// Estimates laid out as (gradient..., squared error) for summarize_variance.
template <class Run>
SampleStats error_stats(const Problem& p, std::size_t n, Run&& run) {
  const std::size_t P = p.exact.size();
  return monte_carlo(n, P + 1, [&](std::uint64_t i, Vector& out) {
    const Vector g = run(i);
    std::copy(g.begin(), g.end(), out.begin());
    out[P] = squared_norm(subtract(g, p.exact));
  });
}

VarianceMeasurement measure_uoro(const Problem& p, const ScalingSchedule& sched, std::size_t n, std::uint64_t base) {
  EstimatorOptions o;
  o.schedule = sched;
  const SampleStats s = error_stats(p, n, [&](std::uint64_t i) {
    EpisodeNoise noise(base, i, NoiseMode::SignGaussian, p.tensors.dim);
    return run_uoro(p.tape, o, noise).gradient;
  });
  return summarize_variance(s, p.exact, pairing_offset(p.tensors));
}

Outcome oracle_agreement() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t Hs[] = {2, 6}, Ts[] = {1, 5, 20};
  double worst_rtrl = 0, worst_fd = 0;
  for (std::uint64_t k = 0; k < 20; ++k) {
    const std::size_t H = Hs[k % 2], T = Ts[(k / 2) % 3];
    const CellKind cell = k % 4 < 2 ? CellKind::VanillaTanh : CellKind::Lstm;
    const Instance inst = make_instance(cell, H, 3, T, 1000 + k);
    const EpisodeTape tape = run_episode(inst.params, inst.head, inst.episode);
    const Vector g = bptt_gradient(tape).g;
    const Vector gr = rtrl_jacobians(tape).gradient.g;
    const Vector fd = finite_difference_gradient(*inst.params, inst.head, inst.episode);
    worst_rtrl = std::max(worst_rtrl, rel(gr, g));
    worst_fd = std::max({worst_fd, rel(g, fd), rel(gr, fd)});
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {worst_rtrl <= 1e-8 && worst_fd <= 1e-5 && secs < 10.0,
          fmt("max rel bptt/rtrl %.2e, max rel vs finite differences %.2e, %.1fs", worst_rtrl, worst_fd, secs)};
}

Outcome unbiasedness() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t n = 100000;
  const Problem p = problem(4, 6, 2024);
  auto r = rng(5);
  const DenseMatrix q0 = random_pd(4, r);
  std::vector<std::pair<std::string, double>> z;

  for (bool pd : {false, true}) {
    EstimatorOptions o;
    o.schedule = ScalingSchedule::gir();
    if (pd) o.schedule.set_q0(q0);
    const SampleStats s = monte_carlo(n, p.exact.size(), [&](std::uint64_t i, Vector& out) {
      EpisodeNoise noise(11, i, NoiseMode::SignGaussian, 4);
      out = run_uoro(p.tape, o, noise).gradient;
    });
    z.emplace_back(pd ? "uoro q0=pd" : "uoro q0=I", max_z(s, p.exact));
  }
  {
    EstimatorOptions o;
    o.schedule = ScalingSchedule::gir();
    const SampleStats s = monte_carlo(n, p.exact.size(), [&](std::uint64_t i, Vector& out) {
      EpisodeNoise noise(12, i, NoiseMode::SignGaussian, 4);
      out = run_preuoro(p.tape, o, noise).gradient;
    });
    z.emplace_back("preuoro", max_z(s, p.exact));
  }
  {
    ReinforceOptions o;
    o.sigma = 1e-3;
    o.schedule = ScalingSchedule::unit(6);
    const SampleStats s = monte_carlo(n, p.exact.size(), [&](std::uint64_t i, Vector& out) {
      EpisodeNoise noise(13, i, NoiseMode::SignGaussian, 4);
      out = reinforce_episode(*p.inst.params, p.inst.head, p.inst.episode, o, noise).estimate;
    });
    z.emplace_back("reinforce", max_z(s, p.exact));
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  bool ok = secs < 300.0;
  std::string d;
  for (const auto& [name, v] : z) {
    ok = ok && v <= 4.0;
    d += fmt("%s max z %.2f; ", name.c_str(), v);
  }
  return {ok, d + fmt("%.1fs", secs)};
}

Outcome moment_lemmas() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t n = 1000000;
  double worst_q = 0, worst_c = 0;
  for (double kappa : {0.0, -2.0}) {
    for (std::size_t d : {2, 4, 8}) {
      auto r = rng(d * 10 + (kappa == 0 ? 0 : 1));
      const DenseMatrix A = random_matrix(d, r), B = random_matrix(d, r), C = random_matrix(d, r),
                        D = random_matrix(d, r);
      const DenseMatrix BC = matmul(B, C), Dt = D.transposed();
      auto draw = [&](std::uint64_t i) {
        NoiseStream ns(31 + d, i, StreamId::Extra);
        Vector u(d);
        for (double& x : u) x = kappa == 0.0 ? ns.gaussian() : ns.sign();
        return u;
      };
      const DenseMatrix closed = quartic_moment_closed(A, B, C, D, kappa);
      const SampleStats sq = monte_carlo(n, d * d, [&](std::uint64_t i, Vector& out) {
        const Vector u = draw(i);
        const DenseMatrix m = dot(u, matvec(BC, u)) * outer(matvec(A, u), matvec(Dt, u));
        std::copy(m.flat().begin(), m.flat().end(), out.begin());
      });
      worst_q = std::max(worst_q, max_z(sq, closed.flat()));

      std::normal_distribution<double> g;
      Vector x(d), y(d);
      for (double& v : x) v = g(r);
      for (double& v : y) v = g(r);
      const DenseMatrix V = random_matrix(d, r), W = random_matrix(d, r);
      // E[(x^T u u^T V)^T (y^T u u^T W)] minus the product of the means x^T V, y^T W.
      DenseMatrix cov = covariance_closed(x, y, V, W, kappa);
      cov += outer(vecmat(x, V), vecmat(y, W));
      const SampleStats sc = monte_carlo(n, d * d, [&](std::uint64_t i, Vector& out) {
        const Vector u = draw(i);
        const DenseMatrix m = outer(scaled(vecmat(u, V), dot(x, u)), scaled(vecmat(u, W), dot(y, u)));
        std::copy(m.flat().begin(), m.flat().end(), out.begin());
      });
      worst_c = std::max(worst_c, max_z(sc, cov.flat()));
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {worst_q <= 4.0 && worst_c <= 4.0 && secs < 120.0,
          fmt("quartic max z %.2f, covariance max z %.2f, %.1fs", worst_q, worst_c, secs)};
}

Outcome variance_prediction() {
  const Problem p = problem(4, 6, 77);
  const Vector newton = solve_alpha_newton(compute_C(p.tensors)).alpha;
  double worst = 0;
  std::string d;
  for (const auto& [name, alpha] : {std::pair<const char*, Vector>{"unit", Vector(6, 1.0)}, {"newton", newton}}) {
    const VarianceMeasurement m = measure_uoro(p, ScalingSchedule::fixed_alpha(alpha), 10000, 41);
    const double pred = predicted_VQ(p.tensors, alpha, {}, VQFlavor::General);
    const double e = std::abs(m.actual_vq - pred) / pred;
    worst = std::max(worst, e);
    d += fmt("%s predicted %.4g measured %.4g (se %.2g) rel %.3f; ", name, pred, m.actual_vq, m.mse_se, e);
  }
  return {worst <= 0.05, d};
}

Outcome variance_ordering() {
  int wins = 0;
  double worst_pred = 0;
  bool bound_ok = true;
  for (std::uint64_t k = 0; k < 20; ++k) {
    const Problem p = problem(4, 6, 500 + k);
    const JointOptimum j = optimize_alpha_q0(p.tensors, 4, 0.0);
    ScalingSchedule ours = ScalingSchedule::fixed_alpha(j.alpha);
    ours.set_q0(j.q0);
    const double base = measure_uoro(p, ScalingSchedule::unit(6), 10000, 60 + k).actual_vq;
    const double opt = measure_uoro(p, ours, 10000, 60 + k).actual_vq;
    if (opt < base) ++wins;
    const double pred = predicted_VQ(p.tensors, j.alpha, j.q0, VQFlavor::General);
    const double bound = std::pow(trace(psd_frac_power(j.B, 0.5)), 2);
    worst_pred = std::max(worst_pred, std::abs(pred - bound) / bound);
    bound_ok = bound_ok && bound <= trace(j.B) * static_cast<double>(p.tensors.dim) * (1 + 1e-12);
  }
  return {wins >= 18 && worst_pred <= 1e-6 && bound_ok,
          fmt("optimum lower on %d/20, max rel |pred - tr(B^1/2)^2| %.2e, bound %s", wins, worst_pred,
              bound_ok ? "holds" : "violated")};
}

Outcome preuoro_ratio() {
  bool ok = true;
  std::string d;
  for (std::uint64_t k = 0; k < 5; ++k) {
    const Problem p = problem(4, 6, 900 + k);
    const ScalingSchedule unit = ScalingSchedule::unit(6);
    const VarianceMeasurement mu = measure_uoro(p, unit, 20000, 70 + k);
    const double vu = mu.actual_vq;
    EstimatorOptions o;
    o.schedule = unit;
    const SampleStats s = error_stats(p, 20000, [&](std::uint64_t i) {
      EpisodeNoise noise(80 + k, i, NoiseMode::SignGaussian, 4);
      return run_preuoro(p.tape, o, noise).gradient;
    });
    const double off = pairing_offset(p.tensors) - 2.0 * preuoro_kurtosis_term(p.tensors);
    const VarianceMeasurement mp = summarize_variance(s, p.exact, off);
    const double ratio = vu / mp.actual_vq;
    ok = ok && std::abs(ratio - 4.0) <= 0.25 * 4.0;
    d += fmt("%.3f (mse ratio %.3f) ", ratio, mu.mse / mp.mse);
  }
  return {ok, "V(Q) ratios vs N_z=4: " + d};
}

Outcome alpha_machinery() {
  double worst = 0;
  bool converged = true;
  for (std::uint64_t k = 0; k < 50; ++k) {
    auto r = rng(300 + k);
    std::uniform_real_distribution<double> u(0.05, 2.0);
    const std::size_t n = 2 + k % 12;
    DenseMatrix C(n, n);
    for (double& x : C.flat()) x = u(r);
    const AlphaSolution s = solve_alpha_newton(C);
    converged = converged && s.converged;
    worst = std::max(worst, newton_residual(C, s.zeta) / inf_norm(C));
  }
  double worst_rank1 = 0;
  for (std::uint64_t k = 0; k < 20; ++k) {
    auto r = rng(400 + k);
    std::uniform_real_distribution<double> u(0.05, 2.0);
    Vector m(8), nv(8);
    for (double& x : m) x = u(r);
    for (double& x : nv) x = u(r);
    const Vector closed = alpha_closed_form_rank1(m, nv);
    const Vector a = solve_alpha_newton(outer(m, nv)).alpha;
    worst_rank1 = std::max(worst_rank1, rel(a, closed));
  }
  return {converged && worst <= 1e-8 && worst_rank1 <= 1e-6,
          fmt("max residual/||C|| %.2e, rank-one rel %.2e", worst, worst_rank1)};
}

Outcome trace_product() {
  bool checks = true;
  double worst_val = 0, worst_beat = 0;
  for (std::uint64_t k = 0; k < 20; ++k) {
    auto r = rng(600 + k);
    const std::size_t n = 2 + k % 5;
    const DenseMatrix X = random_pd(n, r, 0.5), Y = random_pd(n, r, 0.5);
    const DenseMatrix A = trace_product_minimizer(X, Y);
    checks = checks && check_minimizer(A, X, Y);
    const double c = trace_product_c(A, X, Y);
    worst_val = std::max(worst_val, std::abs(c - trace_product_min_value(X, Y)) / c);
    for (int j = 0; j < 100; ++j) {
      DenseMatrix Ap = random_pd(n, r, 0.1);
      if (j % 2 == 0) {
        DenseMatrix P = random_matrix(n, r);
        P *= 0.05;
        P += DenseMatrix::identity(n);
        Ap = matmul(matmul(P, A), P.transposed());
      }
      worst_beat = std::max(worst_beat, (c - trace_product_c(Ap, X, Y)) / c);
    }
  }
  return {checks && worst_val <= 1e-8 && worst_beat <= 1e-9,
          fmt("check_minimizer %s, max rel value error %.2e, best perturbation gain %.2e", checks ? "ok" : "failed",
              worst_val, worst_beat)};
}

Outcome online_b() {
  const Instance inst = make_instance(CellKind::VanillaTanh, 1, 1, 2, 15);
  const EpisodeTape tape = run_episode(inst.params, inst.head, inst.episode);
  const EpisodeTensors et = episode_tensors(tape, CutVertex::Preactivation);
  const SampleStats s = monte_carlo(100000, 2, [&](std::uint64_t i, Vector& out) {
    EpisodeNoise n(5, i, NoiseMode::SignGaussian, 1, true);
    const auto est = estimate_B_online(tape, n, ScalingSchedule::gir(), OnlineBMode::Unit);
    out[0] = est[0](0, 0);
    out[1] = est[1](0, 0);
  });
  const Vector exact{compute_B_prefix(et, Vector(2, 1.0), 1)(0, 0), compute_B_prefix(et, Vector(2, 1.0), 2)(0, 0)};
  const Vector se = s.standard_error();
  const double z0 = std::abs(s.mean()[0] - exact[0]) / se[0], z1 = std::abs(s.mean()[1] - exact[1]) / se[1];
  return {z0 <= 4.0 && z1 <= 4.0, fmt("k=1 z %.2f, k=2 z %.2f", z0, z1)};
}

Outcome reinforce_limit() {
  const Problem p = problem(4, 6, 31);
  const std::vector<double> sigmas{1e-1, 1e-2, 1e-3};
  std::vector<double> gap, var;
  const std::size_t n = 4000, P = p.exact.size();
  for (double sigma : sigmas) {
    ReinforceOptions o;
    o.sigma = sigma;
    o.schedule = ScalingSchedule::unit(6);
    const SampleStats g = monte_carlo(n, 1, [&](std::uint64_t i, Vector& out) {
      EpisodeNoise noise(21, i, NoiseMode::SignGaussian, 4);
      const ReinforceResult r = reinforce_episode(*p.inst.params, p.inst.head, p.inst.episode, o, noise);
      out[0] = norm(subtract(r.estimate, r.uoro_same_noise));
    });
    gap.push_back(g.mean()[0]);
    o.use_baseline = false;
    const SampleStats v = monte_carlo(n, P, [&](std::uint64_t i, Vector& out) {
      EpisodeNoise noise(22, i, NoiseMode::SignGaussian, 4);
      out = reinforce_episode(*p.inst.params, p.inst.head, p.inst.episode, o, noise).estimate;
    });
    double tv = 0;
    for (double x : v.variance()) tv += x;
    var.push_back(tv);
  }
  const double s1 = fit_slope(sigmas, gap), s2 = fit_slope(sigmas, var);
  return {std::abs(s1 - 1.0) <= 0.2 && std::abs(s2 + 2.0) <= 0.3,
          fmt("gap slope %.3f, no-baseline variance slope %.3f", s1, s2)};
}

Outcome queue_training(std::size_t updates) {
  const auto t0 = std::chrono::steady_clock::now();
  const EstimatorKind kinds[] = {EstimatorKind::Rtrl, EstimatorKind::PreUoro, EstimatorKind::Uoro};
  double mean[3] = {0, 0, 0};
  double worst_neither = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    for (int e = 0; e < 3; ++e) {
      ExperimentConfig cfg;
      cfg.task = TaskKind::Queue;
      cfg.estimator = kinds[e];
      cfg.seed = seed;
      cfg.episodes = updates;
      cfg.audit_every = updates + 1;
      apply_preset(cfg);
      const double f = run_training(cfg).final_loss;
      mean[e] += f / 10.0;
      if (e == 0) worst_neither = std::max(worst_neither, f);
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {worst_neither < 0.1 && mean[0] <= mean[1] && mean[1] <= mean[2],
          fmt("%zu updates: mean final loss neither %.4g temporal %.4g both %.4g, worst neither %.4g, %.0fs",
              updates, mean[0], mean[1], mean[2], worst_neither, secs)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance suite"};
  int only = 0;
  std::size_t updates = 300;
  app.add_option("--criterion", only, "run a single criterion (1-11)")->check(CLI::Range(0, 11));
  app.add_option("--updates", updates, "optimizer updates per queue training run")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"oracle agreement", oracle_agreement},
      {"unbiasedness", unbiasedness},
      {"moment lemmas", moment_lemmas},
      {"variance prediction", variance_prediction},
      {"variance reduction ordering", variance_ordering},
      {"preuoro ratio", preuoro_ratio},
      {"alpha machinery", alpha_machinery},
      {"trace product", trace_product},
      {"online B", online_b},
      {"reinforce limit", reinforce_limit},
      {"queue training", [&] { return queue_training(updates); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (only != 0 && static_cast<std::size_t>(only) != i + 1) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    std::printf("%s criterion %zu (%s): %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) ++failed;
  }
  return failed == 0 ? 0 : 1;
}
