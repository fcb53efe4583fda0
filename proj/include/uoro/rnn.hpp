#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "uoro/linalg.hpp"

namespace uoro {

enum class CellKind { VanillaTanh, Lstm, Linear };
enum class CutVertex { State, Preactivation, Parameter };

std::string to_string(CellKind kind);
std::string to_string(CutVertex cut);
CellKind parse_cell_kind(const std::string& text);
CutVertex parse_cut_vertex(const std::string& text);

// W acts on the augmented input a = (h_prev, x, 1). For the LSTM the rows are
// stacked gate blocks [input, forget, cell, output] and the recurrent state is
// s = (h, c).
struct RnnParams {
  CellKind cell = CellKind::VanillaTanh;
  std::size_t hidden = 0;
  std::size_t input = 0;
  DenseMatrix W;

  RnnParams() = default;
  RnnParams(CellKind cell, std::size_t hidden, std::size_t input);

  std::size_t aug_dim() const { return hidden + input + 1; }
  std::size_t preact_dim() const { return cell == CellKind::Lstm ? 4 * hidden : hidden; }
  std::size_t state_dim() const { return cell == CellKind::Lstm ? 2 * hidden : hidden; }
  std::size_t param_count() const { return preact_dim() * aug_dim(); }

  std::span<const double> theta() const { return W.flat(); }
  std::span<double> theta() { return W.flat(); }
};

// Orthogonal recurrent block, uniform(+-1/sqrt(fan_in)) input block, zero
// biases except +1 on the forget gate.
RnnParams init_params(CellKind cell, std::size_t hidden, std::size_t input, std::uint64_t seed);

struct StepCache {
  std::shared_ptr<const RnnParams> params;
  Vector a;       // (s_prev hidden part, x, 1)
  Vector z;       // preactivation W a
  Vector s_prev;  // full previous state
  Vector s;       // full new state
  Vector dact;    // elementwise activation derivatives at z
  Vector gate;    // lstm: activated gates [i, f, g, o]
  Vector tanh_c;  // lstm: tanh(c)
};

std::size_t cut_dim(const RnnParams& params, CutVertex cut);
inline std::size_t cut_dim(const StepCache& cache, CutVertex cut) { return cut_dim(*cache.params, cut); }

// One transition. `z_offset`, when non-empty, is added to the preactivation
// before the nonlinearity (used by finite-difference oracles).
StepCache step(const std::shared_ptr<const RnnParams>& params, std::span<const double> s_prev,
               std::span<const double> x, std::span<const double> z_offset = {});
StepCache step(const RnnParams& params, std::span<const double> s_prev, std::span<const double> x);

// J^{s_t}_{s_{t-1}} v and lambda^T J^{s_t}_{s_{t-1}}.
Vector jvp_state(const StepCache& cache, std::span<const double> v);
Vector vjp_state(const StepCache& cache, std::span<const double> lambda);
// J^{s_t}_{z_t} v; the parameter cut is not supported here.
Vector jvp_cut(const StepCache& cache, CutVertex cut, std::span<const double> v);
// lambda^T J^{s_t}_{z_t}
Vector vjp_to_cut(const StepCache& cache, CutVertex cut, std::span<const double> lambda);
// v^T J^{z_t}_{theta}
Vector vjp_cut(const StepCache& cache, CutVertex cut, std::span<const double> v);
// J^{z_t}_{theta} dtheta
Vector jvp_param(const StepCache& cache, CutVertex cut, std::span<const double> dtheta);

struct DenseJacobians {
  DenseMatrix state;    // J^{s_t}_{s_{t-1}}
  DenseMatrix cut;      // J^{s_t}_{z_t}
  DenseMatrix param;    // J^{z_t}_{theta}
};

inline constexpr std::size_t kDenseJacobianLimit = 10'000'000;

DenseJacobians dense_jacobians(const StepCache& cache, CutVertex cut);

enum class HeadKind { Softmax, Bernoulli, Linear, Squared };

std::string to_string(HeadKind kind);

// y = V (h, 1). Softmax: cross-entropy against a label. Bernoulli: summed
// per-output binary cross-entropy on logits. Linear: L = values . y.
// Squared: L = 0.5 ||y - values||^2.
struct ReadoutHead {
  HeadKind kind = HeadKind::Softmax;
  DenseMatrix V;
  std::size_t outputs() const { return V.rows(); }
};

ReadoutHead init_head(HeadKind kind, std::size_t outputs, std::size_t hidden, std::uint64_t seed,
                      double scale = 0.5);

struct Target {
  int label = -1;
  Vector values;
  bool masked = false;
};

struct LossGrad {
  double loss = 0.0;
  Vector grad;            // dL/dh
  DenseMatrix head_grad;  // dL/dV
};

LossGrad loss_grad(const ReadoutHead& head, std::span<const double> h, const Target& target);

struct Episode {
  std::vector<Vector> inputs;
  std::vector<Target> targets;
  std::size_t length() const { return inputs.size(); }
};

struct StepPerturbation {
  std::size_t step = 0;
  CutVertex cut = CutVertex::State;
  Vector delta;
};

struct EpisodeTape {
  std::shared_ptr<const RnnParams> params;
  Vector s0;
  std::vector<StepCache> steps;
  Vector losses;
  std::vector<Vector> loss_grads;  // dL_t/ds_t over the full state
  DenseMatrix head_grad;

  std::size_t length() const { return steps.size(); }
  double total_loss() const;
};

EpisodeTape run_episode(const RnnParams& params, const ReadoutHead& head, const Episode& episode,
                        std::span<const double> s0 = {}, const StepPerturbation* perturb = nullptr);
EpisodeTape run_episode(std::shared_ptr<const RnnParams> params, const ReadoutHead& head,
                        const Episode& episode, std::span<const double> s0 = {},
                        const StepPerturbation* perturb = nullptr);

}  // namespace uoro
