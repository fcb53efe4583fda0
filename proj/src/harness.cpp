#include "uoro/harness.hpp"

#include <omp.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "uoro/exact.hpp"
#include "uoro/optim.hpp"
#include "uoro/tasks.hpp"

namespace uoro {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double json_number(double v) { return std::isfinite(v) ? v : 0.0; }

nlohmann::json json_value(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}

struct TaskShape {
  std::size_t input = 1;
  HeadKind head = HeadKind::Bernoulli;
  std::size_t outputs = 1;
};

TaskShape task_shape(const ExperimentConfig& cfg) {
  switch (cfg.task) {
    case TaskKind::Queue: return {1, HeadKind::Bernoulli, 1};
    case TaskKind::Digits: return {kDigitSide, HeadKind::Softmax, kDigitClasses};
    case TaskKind::Random: return {cfg.input_dim, HeadKind::Softmax, 3};
  }
  return {};
}

void validate(const ExperimentConfig& cfg) {
  if (cfg.hidden == 0) throw std::invalid_argument("config: hidden must be positive");
  if (cfg.minibatch == 0) throw std::invalid_argument("config: minibatch must be positive");
  if (cfg.length == 0) throw std::invalid_argument("config: length must be positive");
  if (cfg.task == TaskKind::Queue && cfg.delay == 0) throw std::invalid_argument("config: delay must be at least 1");
  if (cfg.task == TaskKind::Queue && cfg.length <= cfg.delay)
    throw std::invalid_argument("config: queue length must exceed the delay");
  if (!(cfg.bbar_decay >= 0.0 && cfg.bbar_decay < 1.0)) throw std::invalid_argument("config: bbar_decay must lie in [0, 1)");
  if (cfg.q0 == Q0Mode::Ours) {
    if (cfg.cut != CutVertex::Preactivation)
      throw std::invalid_argument("config: q0=ours needs the preactivation cut");
    if (cfg.estimator != EstimatorKind::Uoro && cfg.estimator != EstimatorKind::Spatial)
      throw std::invalid_argument("config: q0=ours needs an estimator with a spatial projection");
  }
  if (cfg.estimator == EstimatorKind::PreUoro && cfg.cut != CutVertex::Preactivation)
    throw std::invalid_argument("config: temporal (preUORO) estimator needs the preactivation cut");
}

std::size_t noise_dim(const ExperimentConfig& cfg, const RnnParams& p) {
  switch (cfg.estimator) {
    case EstimatorKind::Reinforce: return p.state_dim();
    case EstimatorKind::PreUoro: return p.preact_dim();
    default: return cut_dim(p, cfg.cut);
  }
}

bool uses_schedule(EstimatorKind e) {
  return e == EstimatorKind::Uoro || e == EstimatorKind::PreUoro || e == EstimatorKind::Reinforce;
}

// Schedule of Q_t = alpha_t Q0 for one episode.
ScalingSchedule episode_schedule(const ExperimentConfig& cfg, std::size_t T, const EpisodeTensors* tensors,
                                 const DenseMatrix& q0) {
  ScalingSchedule s;
  switch (cfg.alpha) {
    case AlphaMode::Gir: s = ScalingSchedule::gir(cfg.gir_scale); break;
    case AlphaMode::Unit: s = ScalingSchedule::unit(T); break;
    case AlphaMode::Ours: s = ScalingSchedule::fixed_alpha(solve_alpha_newton(compute_C(*tensors, q0)).alpha); break;
    case AlphaMode::Greedy: {
      const GreedyCoefficients g = greedy_coefficients(*tensors, q0);
      s.mode = ScheduleMode::FixedAlpha;
      s.beta = g.beta;
      s.gamma = g.gamma;
      break;
    }
  }
  if (!q0.empty()) s.set_q0(q0);
  return s;
}

Vector realized_alpha(const ScalingSchedule& s, const EstimateResult& r) {
  if (s.mode == ScheduleMode::FixedAlpha) return beta_gamma_to_alpha(s.beta, s.gamma);
  return beta_gamma_to_alpha(r.betas, r.gammas);
}

std::vector<Episode> make_batch(const ExperimentConfig& cfg, const DigitsDataset* digits, const ReadoutHead& head,
                                std::size_t update) {
  const std::uint64_t seed = mix_seed(cfg.seed, update, 11);
  switch (cfg.task) {
    case TaskKind::Queue: return make_queue_batch({cfg.delay, cfg.length}, seed, cfg.minibatch);
    case TaskKind::Digits: {
      std::mt19937_64 rng(seed);
      std::uniform_int_distribution<std::size_t> pick(0, digits->size() - 1);
      std::vector<Episode> out;
      for (std::size_t i = 0; i < cfg.minibatch; ++i) out.push_back(digits_episode(*digits, pick(rng)));
      return out;
    }
    case TaskKind::Random: {
      std::vector<Episode> out;
      for (std::size_t i = 0; i < cfg.minibatch; ++i)
        out.push_back(make_random_episode(cfg.length, cfg.input_dim, head, mix_seed(seed, i, 1)));
      return out;
    }
  }
  return {};
}

double rel_diff(std::span<const double> a, std::span<const double> b) {
  return norm(subtract(a, b)) / std::max(norm(b), 1e-300);
}

}  // namespace

std::string metrics_csv(const std::vector<MetricRow>& rows) {
  std::ostringstream out;
  out << "episode,seed,metric,value\n";
  for (const MetricRow& r : rows) out << r.episode << ',' << r.seed << ',' << r.metric << ',' << fmt(r.value) << '\n';
  return out.str();
}

Instance make_instance(CellKind cell, std::size_t hidden, std::size_t input_dim, std::size_t T, std::uint64_t seed,
                       HeadKind head) {
  Instance inst;
  inst.params = std::make_shared<const RnnParams>(init_params(cell, hidden, input_dim, mix_seed(seed, 0, 21)));
  inst.head = init_head(head, head == HeadKind::Bernoulli ? 1 : 3, hidden, mix_seed(seed, 0, 22));
  inst.episode = make_random_episode(T, input_dim, inst.head, mix_seed(seed, 0, 23));
  return inst;
}

Instance make_instance(const ExperimentConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  if (cfg.task == TaskKind::Random) return make_instance(cfg.cell, cfg.hidden, cfg.input_dim, cfg.length, seed);
  const TaskShape shape = task_shape(cfg);
  Instance inst;
  inst.params = std::make_shared<const RnnParams>(init_params(cfg.cell, cfg.hidden, shape.input, mix_seed(seed, 0, 21)));
  inst.head = init_head(shape.head, shape.outputs, cfg.hidden, mix_seed(seed, 0, 22));
  if (cfg.task == TaskKind::Queue) {
    inst.episode = make_queue_batch({cfg.delay, cfg.length}, mix_seed(seed, 0, 23), 1).front();
  } else {
    const DigitsDataset data = load_rowwise_digits({cfg.digits_images, cfg.digits_labels, 64, seed});
    inst.episode = digits_episode(data, 0);
  }
  return inst;
}

GradientReport estimate_gradient(const ExperimentConfig& cfg, const EpisodeTape& tape, const ReadoutHead& head,
                                 const Episode& episode, const ScalingSchedule& schedule, std::uint64_t noise_index) {
  const auto start = Clock::now();
  const RnnParams& p = *tape.params;
  GradientReport rep;
  rep.estimator = to_string(cfg.estimator);
  rep.seed = cfg.seed;
  rep.predicted_vq = kNaN;
  rep.error_vs_oracle = kNaN;
  EstimatorOptions opts;
  opts.cut = cfg.cut;
  opts.schedule = schedule;
  opts.lagged_split = cfg.lagged_split;
  switch (cfg.estimator) {
    case EstimatorKind::Bptt:
    case EstimatorKind::Rtrl:
      // Frozen parameters make forward and reverse accumulation identical; the
      // reverse sweep is used for both.
      rep.gradient = bptt_gradient(tape).g;
      break;
    case EstimatorKind::Uoro:
    case EstimatorKind::PreUoro:
    case EstimatorKind::Spatial: {
      EpisodeNoise noise(cfg.seed, noise_index, cfg.noise, noise_dim(cfg, p));
      EstimateResult r = cfg.estimator == EstimatorKind::Uoro      ? run_uoro(tape, opts, noise)
                         : cfg.estimator == EstimatorKind::PreUoro ? run_preuoro(tape, opts, noise)
                                                                   : run_spatial(tape, opts, noise);
      rep.gradient = std::move(r.gradient);
      if (cfg.estimator != EstimatorKind::Spatial) rep.alpha_used = realized_alpha(schedule, r);
      rep.u = std::move(r.u);
      break;
    }
    case EstimatorKind::Reinforce: {
      EpisodeNoise noise(cfg.seed, noise_index, cfg.noise, noise_dim(cfg, p));
      ReinforceOptions ro;
      ro.sigma = cfg.sigma;
      ro.schedule = schedule;
      rep.gradient = reinforce_episode(p, head, episode, ro, noise, tape.s0).estimate;
      break;
    }
  }
  rep.wall_seconds = seconds_since(start);
  return rep;
}

JointOptimum optimize_alpha_q0(const EpisodeTensors& tensors, int rounds, double damping) {
  if (rounds < 1) throw std::invalid_argument("optimize_alpha_q0: at least one round");
  JointOptimum out;
  for (int r = 0; r < rounds; ++r) {
    out.alpha = solve_alpha_newton(compute_C(tensors, out.q0)).alpha;
    out.B = compute_B(tensors, out.alpha);
    out.q0 = optimal_Q0(out.B, damping);
  }
  return out;
}

TrainingResult run_training(const ExperimentConfig& cfg, const TrainingHooks& hooks) {
  validate(cfg);
  const auto start = Clock::now();
  const TaskShape shape = task_shape(cfg);
  RnnParams params = init_params(cfg.cell, cfg.hidden, shape.input, cfg.seed);
  ReadoutHead head = init_head(shape.head, shape.outputs, cfg.hidden, mix_seed(cfg.seed, 0, 7));
  DigitsDataset digits;
  if (cfg.task == TaskKind::Digits)
    digits = load_rowwise_digits({cfg.digits_images, cfg.digits_labels, cfg.synthetic_count, cfg.seed});

  const std::size_t P = params.param_count();
  AdamState adam_w(P);
  AdamState adam_v(head.V.size());
  const AdamConfig adam{cfg.lr, cfg.momentum};
  const bool stochastic = cfg.estimator != EstimatorKind::Bptt && cfg.estimator != EstimatorKind::Rtrl;
  const bool q0_ours = cfg.q0 == Q0Mode::Ours;
  const bool tensor_alpha = uses_schedule(cfg.estimator) &&
                            (cfg.alpha == AlphaMode::Ours || cfg.alpha == AlphaMode::Greedy);

  DenseMatrix bbar;
  TrainingResult result;
  const std::size_t mb = cfg.minibatch;

  for (std::size_t k = 0; k < cfg.episodes; ++k) {
    try {
      const std::vector<Episode> batch = make_batch(cfg, &digits, head, k);
      const auto shared = std::make_shared<const RnnParams>(params);
      const DenseMatrix q0 = q0_ours && !bbar.empty() ? optimal_Q0(bbar, cfg.damping) : DenseMatrix{};
      const bool audit = cfg.estimator == EstimatorKind::Uoro && !cfg.lagged_split && cfg.audit_every > 0 &&
                         cfg.cut != CutVertex::Parameter && k % cfg.audit_every == 0;

      std::vector<Vector> grads(mb), head_grads(mb);
      std::vector<DenseMatrix> bs(mb);
      Vector losses(mb, 0.0), supervised(mb, 0.0);
      double audit_err = kNaN;
      std::vector<std::exception_ptr> errors(mb);

#pragma omp parallel for schedule(static)
      for (std::size_t i = 0; i < mb; ++i) {
        try {
          const Episode& ep = batch[i];
          const EpisodeTape tape = run_episode(shared, head, ep);
          std::size_t n_sup = 0;
          for (const Target& tg : ep.targets) n_sup += tg.masked ? 0 : 1;
          losses[i] = tape.total_loss();
          supervised[i] = static_cast<double>(n_sup);
          head_grads[i] = tape.head_grad.data();

          EpisodeTensors tensors;
          const bool need_tensors = tensor_alpha || q0_ours || (audit && i == 0);
          if (need_tensors && stochastic) tensors = episode_tensors(tape, cfg.cut);
          ScalingSchedule sched = ScalingSchedule::unit(tape.length());
          if (uses_schedule(cfg.estimator)) {
            sched = episode_schedule(cfg, tape.length(), &tensors, q0);
          } else if (!q0.empty()) {
            sched.set_q0(q0);
          }
          GradientReport rep = estimate_gradient(cfg, tape, head, ep, sched, k * mb + i);
          if (q0_ours) {
            const Vector alpha = rep.alpha_used.empty() ? Vector(tape.length(), 1.0) : rep.alpha_used;
            bs[i] = compute_B(tensors, alpha);
          }
          if (audit && i == 0) {
            const Vector offline = offline_total_estimate(tensors, rep.u, rep.alpha_used, q0);
            audit_err = rel_diff(rep.gradient, offline);
          }
          grads[i] = std::move(rep.gradient);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
      for (const auto& e : errors)
        if (e) std::rethrow_exception(e);

      const std::size_t T = batch.front().length();
      const double denom = static_cast<double>(mb * T);
      const Vector g = scaled(pairwise_sum(grads), 1.0 / denom);
      const Vector gv = scaled(pairwise_sum(head_grads), 1.0 / denom);
      if (!all_finite(g) || !all_finite(gv)) throw NumericError("non-finite gradient");

      if (q0_ours) {
        DenseMatrix bavg = bs.front();
        for (std::size_t i = 1; i < mb; ++i) bavg += bs[i];
        bavg *= 1.0 / static_cast<double>(mb);
        if (bbar.empty()) {
          bbar = bavg;
        } else {
          bbar *= cfg.bbar_decay;
          bbar += (1.0 - cfg.bbar_decay) * bavg;
        }
      }

      adam_update(params.theta(), g, adam_w, adam);
      adam_update(head.V.flat(), gv, adam_v, adam);

      double loss_sum = 0.0, sup_sum = 0.0;
      for (std::size_t i = 0; i < mb; ++i) {
        loss_sum += losses[i];
        sup_sum += supervised[i];
      }
      const double mean_loss = loss_sum / std::max(sup_sum, 1.0);
      result.loss_curve.push_back(mean_loss);
      result.rows.push_back({k, cfg.seed, "loss", mean_loss});
      result.rows.push_back({k, cfg.seed, "grad_norm", norm(g)});
      if (q0_ours) result.rows.push_back({k, cfg.seed, "bbar_trace", trace(bbar)});
      if (audit) {
        result.rows.push_back({k, cfg.seed, "audit_rel_error", audit_err});
        ++result.audits;
        result.worst_audit = std::max(result.worst_audit, audit_err);
      }
      if (hooks.on_update) hooks.on_update(k, mean_loss);
    } catch (const std::exception& e) {
      throw std::runtime_error("episode " + std::to_string(k) + ": " + e.what());
    }
  }
  const std::size_t n = result.loss_curve.size();
  const std::size_t tail = std::max<std::size_t>(1, n / 10);
  double s = 0.0;
  for (std::size_t i = n - tail; i < n; ++i) s += result.loss_curve[i];
  result.final_loss = n ? s / static_cast<double>(tail) : kNaN;
  result.wall_seconds = seconds_since(start);
  return result;
}

namespace {

struct McSetup {
  const ExperimentConfig* cfg;
  const EpisodeTape* tape;
  const Instance* inst;
  Vector exact;
};

VarianceMeasurement measure(const McSetup& m, EstimatorKind kind, const ScalingSchedule& sched, double offset) {
  ExperimentConfig cfg = *m.cfg;
  cfg.estimator = kind;
  const std::size_t P = m.exact.size();
  const SampleStats stats = monte_carlo(cfg.mc_samples, P + 1, [&](std::uint64_t idx, Vector& out) {
    const GradientReport r = estimate_gradient(cfg, *m.tape, m.inst->head, m.inst->episode, sched, idx);
    std::copy(r.gradient.begin(), r.gradient.end(), out.begin());
    out[P] = squared_norm(subtract(r.gradient, m.exact));
  });
  return summarize_variance(stats, m.exact, offset);
}

}  // namespace

VarianceReport run_variance_report(const ExperimentConfig& cfg_in) {
  ExperimentConfig cfg = cfg_in;
  cfg.cut = CutVertex::Preactivation;
  const Instance inst = make_instance(cfg, cfg.seed);
  const EpisodeTape tape = run_episode(inst.params, inst.head, inst.episode);
  if (tape.length() * inst.params->preact_dim() > kTensorLimit)
    throw DimensionError("variance report: size guard exceeded (T * dim > 1e5)");
  const EpisodeTensors tensors = episode_tensors(tape, CutVertex::Preactivation);
  McSetup m{&cfg, &tape, &inst, bptt_gradient(tape).g};
  const std::size_t T = tape.length();

  VarianceReport rep;
  rep.intrinsic = squared_norm(m.exact);
  const Vector ones(T, 1.0);

  const DenseMatrix q0_ours = optimize_alpha_q0(tensors, 3, cfg.damping).q0;
  const double offset = pairing_offset(tensors);
  for (const Q0Mode qm : {Q0Mode::Identity, Q0Mode::Ours}) {
    for (const AlphaMode am : {AlphaMode::Gir, AlphaMode::Ours}) {
      const DenseMatrix q0 = qm == Q0Mode::Ours ? q0_ours : DenseMatrix{};
      ScalingSchedule sched = ScalingSchedule::gir(cfg.gir_scale);
      double predicted = kNaN;
      if (am == AlphaMode::Ours) {
        const Vector alpha = solve_alpha_newton(compute_C(tensors, q0)).alpha;
        sched = ScalingSchedule::fixed_alpha(alpha);
        predicted = predicted_VQ(tensors, alpha, q0, VQFlavor::General);
      }
      if (!q0.empty()) sched.set_q0(q0);
      rep.cells.push_back({"q0_alpha", "q0=" + to_string(qm) + "/alpha=" + to_string(am), predicted,
                           measure(m, EstimatorKind::Uoro, sched, offset)});
    }
  }

  const ScalingSchedule unit = ScalingSchedule::unit(T);
  VarianceMeasurement exact_cell;
  exact_cell.runs = 1;
  exact_cell.mean = m.exact;
  exact_cell.mean_se.assign(m.exact.size(), 0.0);
  exact_cell.intrinsic = rep.intrinsic;
  rep.cells.push_back({"ablation", to_string(EstimatorKind::Rtrl), 0.0, exact_cell});
  rep.cells.push_back({"ablation", to_string(EstimatorKind::Spatial),
                       predicted_VQ(tensors, ones, {}, VQFlavor::Spatial),
                       measure(m, EstimatorKind::Spatial, unit, pairing_offset(tensors, VQFlavor::Spatial))});
  const double kappa = cfg.noise == NoiseMode::SignGaussian ? -2.0 : 0.0;
  rep.cells.push_back({"ablation", to_string(EstimatorKind::PreUoro), predicted_VQ(tensors, ones, {}, VQFlavor::PreUoro),
                       measure(m, EstimatorKind::PreUoro, unit, offset + kappa * preuoro_kurtosis_term(tensors))});
  rep.cells.push_back({"ablation", to_string(EstimatorKind::Uoro), predicted_VQ(tensors, ones, {}, VQFlavor::General),
                       measure(m, EstimatorKind::Uoro, unit, offset)});
  return rep;
}

std::string variance_report_csv(const VarianceReport& report) {
  std::ostringstream out;
  out << "grid,cell,metric,value\n";
  for (const VarianceCell& c : report.cells) {
    const std::string pre = c.grid + ',' + c.cell + ',';
    const double actual = c.measured.actual_vq;
    out << pre << "predicted_vq," << fmt(c.predicted_vq) << '\n';
    out << pre << "actual_vq," << fmt(actual) << '\n';
    out << pre << "mse," << fmt(c.measured.mse) << '\n';
    out << pre << "mse_se," << fmt(c.measured.mse_se) << '\n';
    out << pre << "offset," << fmt(c.measured.offset) << '\n';
    out << pre << "intrinsic," << fmt(c.measured.intrinsic) << '\n';
    out << pre << "runs," << c.measured.runs << '\n';
  }
  return out.str();
}

std::string variance_report_json(const VarianceReport& report, const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["seed"] = cfg.seed;
  j["hidden"] = cfg.hidden;
  j["length"] = cfg.length;
  j["intrinsic"] = report.intrinsic;
  j["cells"] = nlohmann::json::array();
  for (const VarianceCell& c : report.cells) {
    j["cells"].push_back({{"grid", c.grid},
                          {"cell", c.cell},
                          {"predicted_vq", json_value(c.predicted_vq)},
                          {"actual_vq", c.measured.actual_vq},
                          {"offset", c.measured.offset},
                          {"mse", c.measured.mse},
                          {"mse_se", c.measured.mse_se},
                          {"runs", c.measured.runs}});
  }
  return j.dump(2) + "\n";
}

std::string training_summary_json(const TrainingResult& result, const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["estimator"] = to_string(cfg.estimator);
  j["task"] = to_string(cfg.task);
  j["seed"] = cfg.seed;
  j["updates"] = result.loss_curve.size();
  j["final_loss"] = json_number(result.final_loss);
  j["audits"] = result.audits;
  j["worst_audit_rel_error"] = result.worst_audit;
  return j.dump(2) + "\n";
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

}  // namespace uoro
