#include <cmath>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "uoro/config.hpp"
#include "uoro/harness.hpp"

using namespace uoro;

namespace {

struct CommonFlags {
  std::string config;
  std::string out = "out";
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string estimator;
  std::string task;
  std::vector<std::string> sets;
};

void add_common(CLI::App* sub, CommonFlags& f) {
  sub->add_option("--config", f.config, "flat key = value config file")->check(CLI::ExistingFile);
  sub->add_option("--out", f.out, "output directory");
  sub->add_option("--seed", f.seed, "base seed")->each([&f](const std::string&) { f.seed_set = true; });
  sub->add_option("--estimator", f.estimator, "bptt|neither|spatial|temporal|both|reinforce");
  sub->add_option("--task", f.task, "queue|digits|random");
  sub->add_option("--set", f.sets, "extra key=value overrides");
}

// Command-line values are appended after the file so presets see them.
ExperimentConfig resolve(const CommonFlags& f) {
  std::string text;
  if (!f.config.empty()) {
    std::ifstream in(f.config);
    std::ostringstream ss;
    ss << in.rdbuf();
    text = ss.str() + "\n";
  }
  if (f.seed_set) text += "seed = " + std::to_string(f.seed) + "\n";
  if (!f.estimator.empty()) text += "estimator = " + f.estimator + "\n";
  if (!f.task.empty()) text += "task = " + f.task + "\n";
  for (const std::string& kv : f.sets) {
    if (kv.find('=') == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    text += kv + "\n";
  }
  return parse_config_text(text);
}

DenseMatrix random_matrix(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  DenseMatrix m(n, n);
  for (double& x : m.flat()) x = g(rng);
  return m;
}

int cmd_train(const CommonFlags& f) {
  const ExperimentConfig cfg = resolve(f);
  TrainingHooks hooks;
  hooks.on_update = [&](std::size_t k, double loss) {
    if (k % 50 == 0 || k + 1 == cfg.episodes) std::cerr << "update " << k << " loss " << loss << "\n";
  };
  const TrainingResult r = run_training(cfg, hooks);
  write_text(std::filesystem::path(f.out) / "metrics.csv", metrics_csv(r.rows));
  write_text(std::filesystem::path(f.out) / "summary.json", training_summary_json(r, cfg));
  write_text(std::filesystem::path(f.out) / "config.txt", to_text(cfg));
  std::cout << "final_loss " << r.final_loss << " updates " << r.loss_curve.size() << " audits " << r.audits
            << " worst_audit " << r.worst_audit << "\n";
  return 0;
}

int cmd_variance(const CommonFlags& f) {
  ExperimentConfig cfg = resolve(f);
  const VarianceReport rep = run_variance_report(cfg);
  write_text(std::filesystem::path(f.out) / "variance.csv", variance_report_csv(rep));
  write_text(std::filesystem::path(f.out) / "variance.json", variance_report_json(rep, cfg));
  std::cout << "intrinsic " << rep.intrinsic << "\n";
  for (const VarianceCell& c : rep.cells) {
    std::cout << c.grid << " " << c.cell << " predicted " << c.predicted_vq << " actual "
              << c.measured.actual_vq << " (se " << c.measured.mse_se << ")\n";
  }
  return 0;
}

int cmd_moment(std::size_t dim, double kappa, std::size_t samples, std::uint64_t seed) {
  if (kappa != 0.0 && kappa != -2.0) throw std::invalid_argument("moment-check: kappa must be 0 or -2");
  std::mt19937_64 rng(seed);
  const DenseMatrix A = random_matrix(dim, rng), B = random_matrix(dim, rng), C = random_matrix(dim, rng),
                    D = random_matrix(dim, rng);
  const DenseMatrix closed = quartic_moment_closed(A, B, C, D, kappa);
  const DenseMatrix BC = matmul(B, C);
  const DenseMatrix Dt = D.transposed();
  const SampleStats stats = monte_carlo(samples, dim * dim, [&](std::uint64_t idx, Vector& out) {
    NoiseStream s(seed, idx, StreamId::Extra);
    Vector u(dim);
    for (double& x : u) x = kappa == 0.0 ? s.gaussian() : s.sign();
    const double q = dot(u, matvec(BC, u));
    const DenseMatrix m = outer(matvec(A, u), matvec(Dt, u));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = q * m.flat()[i];
  });
  const Vector se = stats.standard_error();
  double worst = 0.0;
  for (std::size_t i = 0; i < se.size(); ++i)
    worst = std::max(worst, std::abs(stats.mean()[i] - closed.flat()[i]) / std::max(se[i], 1e-300));
  std::cout << "dim " << dim << " kappa " << kappa << " samples " << samples << " max_z " << worst << "\n";
  return worst <= 4.0 ? 0 : 1;
}

int cmd_compare(const CommonFlags& f) {
  ExperimentConfig cfg = resolve(f);
  const Instance inst = make_instance(cfg, cfg.seed);
  const EpisodeTape tape = run_episode(inst.params, inst.head, inst.episode);
  const Vector exact = bptt_gradient(tape).g;
  const std::size_t P = exact.size();
  std::ostringstream csv;
  csv << "estimator,metric,value\n";
  for (const EstimatorKind e : {EstimatorKind::Spatial, EstimatorKind::PreUoro, EstimatorKind::Uoro,
                                EstimatorKind::Reinforce}) {
    ExperimentConfig c = cfg;
    c.estimator = e;
    c.cut = e == EstimatorKind::PreUoro ? CutVertex::Preactivation : cfg.cut;
    const ScalingSchedule sched = ScalingSchedule::unit(tape.length());
    const SampleStats stats = monte_carlo(c.mc_samples, P + 1, [&](std::uint64_t idx, Vector& out) {
      const GradientReport r = estimate_gradient(c, tape, inst.head, inst.episode, sched, idx);
      std::copy(r.gradient.begin(), r.gradient.end(), out.begin());
      out[P] = squared_norm(subtract(r.gradient, exact));
    });
    const VarianceMeasurement m = summarize_variance(stats, exact, 0.0);
    double max_z = 0.0;
    for (std::size_t i = 0; i < P; ++i)
      if (m.mean_se[i] > 0.0) max_z = std::max(max_z, std::abs(m.mean[i] - exact[i]) / m.mean_se[i]);
    csv << to_string(e) << ",max_bias_z," << max_z << "\n" << to_string(e) << ",mse," << m.mse << "\n";
    std::cout << to_string(e) << " max_bias_z " << max_z << " mse " << m.mse << "\n";
  }
  write_text(std::filesystem::path(f.out) / "compare.csv", csv.str());
  return 0;
}

int cmd_alpha(const CommonFlags& f) {
  ExperimentConfig cfg = resolve(f);
  const Instance inst = make_instance(cfg, cfg.seed);
  const EpisodeTape tape = run_episode(inst.params, inst.head, inst.episode);
  const EpisodeTensors tensors = episode_tensors(tape, cfg.cut);
  const DenseMatrix C = compute_C(tensors);
  const AlphaSolution sol = solve_alpha_newton(C);
  const Vector ones(tensors.T, 1.0);
  std::cout << "iterations " << sol.iterations << " converged " << (sol.converged ? "yes" : "no") << " residual "
            << sol.residual << "\nobjective unit " << alpha_objective(C, ones) << " newton "
            << alpha_objective(C, sol.alpha) << "\nalpha";
  for (double a : sol.alpha) std::cout << " " << a;
  std::cout << "\n";
  return sol.converged ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"uoro_lab: exact and stochastic RNN gradients with variance analysis"};
  app.require_subcommand(1);

  CommonFlags train_f, var_f, cmp_f, alpha_f;
  auto* train = app.add_subcommand("train", "train on the queue, digits or random task");
  add_common(train, train_f);
  auto* var = app.add_subcommand("variance-report", "predicted vs measured variance grids");
  add_common(var, var_f);
  auto* cmp = app.add_subcommand("estimator-compare", "bias and error of each estimator on one instance");
  add_common(cmp, cmp_f);
  auto* alpha = app.add_subcommand("alpha-solve", "Newton alpha for one random instance");
  add_common(alpha, alpha_f);

  std::size_t m_dim = 4, m_samples = 1'000'000;
  double m_kappa = 0.0;
  std::uint64_t m_seed = 1;
  auto* moment = app.add_subcommand("moment-check", "closed-form quartic moments vs Monte Carlo");
  moment->add_option("--dim", m_dim);
  moment->add_option("--kappa", m_kappa, "0 (Gaussian) or -2 (signs)");
  moment->add_option("--samples", m_samples);
  moment->add_option("--seed", m_seed);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(train_f);
    if (*var) return cmd_variance(var_f);
    if (*cmp) return cmd_compare(cmp_f);
    if (*alpha) return cmd_alpha(alpha_f);
    if (*moment) return cmd_moment(m_dim, m_kappa, m_samples, m_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
