#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "uoro/noise.hpp"
#include "uoro/rnn.hpp"

namespace uoro {

// "neither" is exact RTRL, "temporal" is preUORO, "both" is UORO.
enum class EstimatorKind { Bptt, Rtrl, Spatial, PreUoro, Uoro, Reinforce };
enum class TaskKind { Queue, Digits, Random };
enum class AlphaMode { Gir, Ours, Unit, Greedy };
enum class Q0Mode { Identity, Ours };

std::string to_string(EstimatorKind e);
std::string to_string(TaskKind t);
std::string to_string(AlphaMode a);
std::string to_string(Q0Mode q);
EstimatorKind parse_estimator(const std::string& s);
TaskKind parse_task(const std::string& s);
AlphaMode parse_alpha_mode(const std::string& s);
Q0Mode parse_q0_mode(const std::string& s);

struct ExperimentConfig {
  TaskKind task = TaskKind::Queue;
  EstimatorKind estimator = EstimatorKind::Uoro;
  CutVertex cut = CutVertex::Preactivation;
  AlphaMode alpha = AlphaMode::Gir;
  Q0Mode q0 = Q0Mode::Identity;
  NoiseMode noise = NoiseMode::SignGaussian;
  CellKind cell = CellKind::VanillaTanh;
  std::size_t hidden = 50;
  std::size_t input_dim = 3;  // random task only
  std::size_t delay = 4;
  std::size_t length = 20;
  std::size_t minibatch = 100;
  std::size_t episodes = 200;  // optimizer updates
  std::uint64_t seed = 1;
  double lr = 0.002;
  double momentum = 0.5;
  double bbar_decay = 0.9;
  double damping = 0.005;
  double sigma = 1e-2;
  double gir_scale = 1.0;
  bool lagged_split = false;
  std::size_t audit_every = 100;
  std::size_t mc_samples = 10000;
  std::string digits_images;
  std::string digits_labels;
  std::size_t synthetic_count = 2000;
  bool preset = false;
};

// Learning-rate presets: the rowwise-digits table keyed by (Q0, alpha) and the
// queue ablation keyed by estimator.
void apply_preset(ExperimentConfig& cfg);

std::string to_text(const ExperimentConfig& cfg);
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);

}  // namespace uoro
