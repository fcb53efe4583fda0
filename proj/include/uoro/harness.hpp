#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "uoro/config.hpp"
#include "uoro/estimators.hpp"
#include "uoro/variance.hpp"

namespace uoro {

struct MetricRow {
  std::size_t episode = 0;
  std::uint64_t seed = 0;
  std::string metric;
  double value = 0.0;
};

std::string metrics_csv(const std::vector<MetricRow>& rows);

struct GradientReport {
  std::string estimator;
  std::uint64_t seed = 0;
  Vector gradient;
  std::vector<Vector> contributions;
  double predicted_vq = 0.0;
  double error_vs_oracle = 0.0;  // squared distance, NaN without an oracle
  double wall_seconds = 0.0;
  Vector alpha_used;     // realized alpha_s, empty for exact engines
  std::vector<Vector> u;  // spatial noise per step, when drawn
};

// A single random desk-scale problem: parameters, readout and one episode.
struct Instance {
  std::shared_ptr<const RnnParams> params;
  ReadoutHead head;
  Episode episode;
};

Instance make_instance(CellKind cell, std::size_t hidden, std::size_t input_dim, std::size_t T,
                       std::uint64_t seed, HeadKind head = HeadKind::Softmax);
Instance make_instance(const ExperimentConfig& cfg, std::uint64_t seed);

// The estimate of one episode under `cfg`. `noise_index` selects the noise
// draw; the schedule must already carry Q0.
GradientReport estimate_gradient(const ExperimentConfig& cfg, const EpisodeTape& tape, const ReadoutHead& head,
                                 const Episode& episode, const ScalingSchedule& schedule,
                                 std::uint64_t noise_index);

// Alternates Newton alpha on C(Q0) with Q0 = B(alpha)^{-1/4}, finishing on a
// Q0 update. Returns the final pair.
struct JointOptimum {
  Vector alpha;
  DenseMatrix q0;
  DenseMatrix B;
};
JointOptimum optimize_alpha_q0(const EpisodeTensors& tensors, int rounds, double damping);

struct TrainingResult {
  std::vector<MetricRow> rows;
  std::vector<double> loss_curve;  // per-update mean loss per supervised step
  double final_loss = 0.0;         // mean of the last tenth of the curve
  std::size_t audits = 0;
  double worst_audit = 0.0;
  double wall_seconds = 0.0;
};

struct TrainingHooks {
  // Called after each update with (update index, mean loss).
  std::function<void(std::size_t, double)> on_update;
};

TrainingResult run_training(const ExperimentConfig& cfg, const TrainingHooks& hooks = {});

struct VarianceCell {
  std::string grid;
  std::string cell;
  double predicted_vq = 0.0;  // NaN when alpha depends on the noise
  VarianceMeasurement measured;
};

struct VarianceReport {
  std::vector<VarianceCell> cells;
  double intrinsic = 0.0;
};

VarianceReport run_variance_report(const ExperimentConfig& cfg);
std::string variance_report_csv(const VarianceReport& report);
std::string variance_report_json(const VarianceReport& report, const ExperimentConfig& cfg);
std::string training_summary_json(const TrainingResult& result, const ExperimentConfig& cfg);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace uoro
