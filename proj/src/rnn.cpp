#include "uoro/rnn.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace uoro {

namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

void require_len(std::size_t got, std::size_t want, const char* what) {
  if (got != want) {
    throw DimensionError(std::string(what) + ": length " + std::to_string(got) + ", expected " +
                         std::to_string(want));
  }
}

// ds = J^{s}_{z} dz (+ forget-gate carry of dc_prev for the lstm)
Vector preact_jvp(const StepCache& c, std::span<const double> dz, std::span<const double> dc_prev) {
  const RnnParams& p = *c.params;
  const std::size_t H = p.hidden;
  if (p.cell != CellKind::Lstm) {
    Vector ds(H);
    for (std::size_t k = 0; k < H; ++k) ds[k] = c.dact[k] * dz[k];
    return ds;
  }
  Vector ds(2 * H);
  for (std::size_t k = 0; k < H; ++k) {
    const double i = c.gate[k], g = c.gate[2 * H + k], o = c.gate[3 * H + k];
    const double cp = c.s_prev[H + k];
    double dc = c.dact[k] * dz[k] * g + c.dact[H + k] * dz[H + k] * cp + i * c.dact[2 * H + k] * dz[2 * H + k];
    if (!dc_prev.empty()) dc += c.gate[H + k] * dc_prev[k];
    const double t = c.tanh_c[k];
    ds[k] = c.dact[3 * H + k] * dz[3 * H + k] * t + o * (1.0 - t * t) * dc;
    ds[H + k] = dc;
  }
  return ds;
}

struct PreactAdjoint {
  Vector bar_z;
  Vector bar_c_prev;  // lstm only
};

PreactAdjoint preact_vjp(const StepCache& c, std::span<const double> lambda) {
  const RnnParams& p = *c.params;
  const std::size_t H = p.hidden;
  PreactAdjoint out;
  if (p.cell != CellKind::Lstm) {
    out.bar_z.resize(H);
    for (std::size_t k = 0; k < H; ++k) out.bar_z[k] = lambda[k] * c.dact[k];
    return out;
  }
  out.bar_z.assign(4 * H, 0.0);
  out.bar_c_prev.assign(H, 0.0);
  for (std::size_t k = 0; k < H; ++k) {
    const double i = c.gate[k], f = c.gate[H + k], g = c.gate[2 * H + k], o = c.gate[3 * H + k];
    const double t = c.tanh_c[k];
    const double lh = lambda[k];
    const double bar_c = lambda[H + k] + lh * o * (1.0 - t * t);
    out.bar_z[k] = bar_c * g * c.dact[k];
    out.bar_z[H + k] = bar_c * c.s_prev[H + k] * c.dact[H + k];
    out.bar_z[2 * H + k] = bar_c * i * c.dact[2 * H + k];
    out.bar_z[3 * H + k] = lh * t * c.dact[3 * H + k];
    out.bar_c_prev[k] = bar_c * f;
  }
  return out;
}

Vector outer_vec(std::span<const double> v, std::span<const double> a) {
  Vector out(v.size() * a.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    for (std::size_t j = 0; j < a.size(); ++j) out[i * a.size() + j] = v[i] * a[j];
  return out;
}

Vector weight_times_aug(std::span<const double> dtheta, std::size_t rows, std::span<const double> a) {
  Vector z(rows, 0.0);
  const std::size_t D = a.size();
  for (std::size_t i = 0; i < rows; ++i) z[i] = dot(dtheta.subspan(i * D, D), a);
  return z;
}

DenseMatrix orthogonal(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  DenseMatrix q(n, n);
  for (double& x : q.flat()) x = gauss(rng);
  // modified Gram-Schmidt on rows
  for (std::size_t i = 0; i < n; ++i) {
    auto ri = q.row(i);
    for (std::size_t j = 0; j < i; ++j) {
      const double d = dot(ri, q.row(j));
      axpy(-d, q.row(j), ri);
    }
    const double nrm = norm(ri);
    for (double& x : ri) x /= nrm;
  }
  return q;
}

}  // namespace

std::string to_string(CellKind kind) {
  switch (kind) {
    case CellKind::VanillaTanh: return "vanilla";
    case CellKind::Lstm: return "lstm";
    case CellKind::Linear: return "linear";
  }
  return "?";
}

std::string to_string(CutVertex cut) {
  switch (cut) {
    case CutVertex::State: return "state";
    case CutVertex::Preactivation: return "preactivation";
    case CutVertex::Parameter: return "parameter";
  }
  return "?";
}

std::string to_string(HeadKind kind) {
  switch (kind) {
    case HeadKind::Softmax: return "softmax";
    case HeadKind::Bernoulli: return "bernoulli";
    case HeadKind::Linear: return "linear";
    case HeadKind::Squared: return "squared";
  }
  return "?";
}

CellKind parse_cell_kind(const std::string& text) {
  if (text == "vanilla" || text == "vanilla-tanh" || text == "tanh") return CellKind::VanillaTanh;
  if (text == "lstm") return CellKind::Lstm;
  if (text == "linear") return CellKind::Linear;
  throw std::invalid_argument("unknown cell kind '" + text + "'");
}

CutVertex parse_cut_vertex(const std::string& text) {
  if (text == "state") return CutVertex::State;
  if (text == "preactivation" || text == "preact") return CutVertex::Preactivation;
  if (text == "parameter" || text == "param") return CutVertex::Parameter;
  throw std::invalid_argument("unknown cut vertex '" + text + "'");
}

RnnParams::RnnParams(CellKind cell_, std::size_t hidden_, std::size_t input_)
    : cell(cell_), hidden(hidden_), input(input_), W(preact_dim(), aug_dim()) {
  if (hidden == 0) throw DimensionError("RnnParams: hidden size must be positive");
}

RnnParams init_params(CellKind cell, std::size_t hidden, std::size_t input, std::uint64_t seed) {
  RnnParams p(cell, hidden, input);
  std::mt19937_64 rng(seed);
  const std::size_t blocks = cell == CellKind::Lstm ? 4 : 1;
  const double scale = input > 0 ? 1.0 / std::sqrt(static_cast<double>(input)) : 0.0;
  std::uniform_real_distribution<double> uni(-scale, scale);
  for (std::size_t b = 0; b < blocks; ++b) {
    const DenseMatrix q = orthogonal(hidden, rng);
    for (std::size_t i = 0; i < hidden; ++i) {
      const std::size_t r = b * hidden + i;
      for (std::size_t j = 0; j < hidden; ++j) p.W(r, j) = q(i, j);
      for (std::size_t j = 0; j < input; ++j) p.W(r, hidden + j) = uni(rng);
      p.W(r, hidden + input) = (cell == CellKind::Lstm && b == 1) ? 1.0 : 0.0;
    }
  }
  return p;
}

std::size_t cut_dim(const RnnParams& params, CutVertex cut) {
  switch (cut) {
    case CutVertex::State: return params.state_dim();
    case CutVertex::Preactivation: return params.preact_dim();
    case CutVertex::Parameter: return params.param_count();
  }
  return 0;
}

StepCache step(const std::shared_ptr<const RnnParams>& params, std::span<const double> s_prev,
               std::span<const double> x, std::span<const double> z_offset) {
  const RnnParams& p = *params;
  const std::size_t H = p.hidden;
  require_len(s_prev.size(), p.state_dim(), "step: state");
  require_len(x.size(), p.input, "step: input");
  if (!z_offset.empty()) require_len(z_offset.size(), p.preact_dim(), "step: offset");

  StepCache c;
  c.params = params;
  c.s_prev.assign(s_prev.begin(), s_prev.end());
  c.a.resize(p.aug_dim());
  std::copy(s_prev.begin(), s_prev.begin() + static_cast<std::ptrdiff_t>(H), c.a.begin());
  std::copy(x.begin(), x.end(), c.a.begin() + static_cast<std::ptrdiff_t>(H));
  c.a.back() = 1.0;
  c.z = matvec(p.W, c.a);
  if (!z_offset.empty()) axpy(1.0, z_offset, c.z);

  switch (p.cell) {
    case CellKind::VanillaTanh:
      c.s.resize(H);
      c.dact.resize(H);
      for (std::size_t k = 0; k < H; ++k) {
        c.s[k] = std::tanh(c.z[k]);
        c.dact[k] = 1.0 - c.s[k] * c.s[k];
      }
      break;
    case CellKind::Linear:
      c.s = c.z;
      c.dact.assign(H, 1.0);
      break;
    case CellKind::Lstm:
      c.gate.resize(4 * H);
      c.dact.resize(4 * H);
      c.tanh_c.resize(H);
      c.s.resize(2 * H);
      for (std::size_t k = 0; k < 4 * H; ++k) {
        if (k >= 2 * H && k < 3 * H) {
          c.gate[k] = std::tanh(c.z[k]);
          c.dact[k] = 1.0 - c.gate[k] * c.gate[k];
        } else {
          c.gate[k] = sigmoid(c.z[k]);
          c.dact[k] = c.gate[k] * (1.0 - c.gate[k]);
        }
      }
      for (std::size_t k = 0; k < H; ++k) {
        const double cell_state = c.gate[H + k] * s_prev[H + k] + c.gate[k] * c.gate[2 * H + k];
        c.tanh_c[k] = std::tanh(cell_state);
        c.s[k] = c.gate[3 * H + k] * c.tanh_c[k];
        c.s[H + k] = cell_state;
      }
      break;
  }
  if (!all_finite(c.s)) throw NumericError("step: non-finite state (numeric overflow)");
  return c;
}

StepCache step(const RnnParams& params, std::span<const double> s_prev, std::span<const double> x) {
  return step(std::make_shared<const RnnParams>(params), s_prev, x);
}

Vector jvp_state(const StepCache& c, std::span<const double> v) {
  const RnnParams& p = *c.params;
  const std::size_t H = p.hidden;
  require_len(v.size(), p.state_dim(), "jvp_state");
  Vector dz(p.preact_dim(), 0.0);
  for (std::size_t i = 0; i < dz.size(); ++i) dz[i] = dot(p.W.row(i).first(H), v.first(H));
  return preact_jvp(c, dz, p.cell == CellKind::Lstm ? v.subspan(H, H) : std::span<const double>{});
}

Vector vjp_state(const StepCache& c, std::span<const double> lambda) {
  const RnnParams& p = *c.params;
  const std::size_t H = p.hidden;
  require_len(lambda.size(), p.state_dim(), "vjp_state");
  const PreactAdjoint adj = preact_vjp(c, lambda);
  Vector out(p.state_dim(), 0.0);
  for (std::size_t i = 0; i < p.preact_dim(); ++i) {
    const double bz = adj.bar_z[i];
    if (bz == 0.0) continue;
    auto wi = p.W.row(i);
    for (std::size_t k = 0; k < H; ++k) out[k] += bz * wi[k];
  }
  if (p.cell == CellKind::Lstm) std::copy(adj.bar_c_prev.begin(), adj.bar_c_prev.end(), out.begin() + static_cast<std::ptrdiff_t>(H));
  return out;
}

Vector jvp_cut(const StepCache& c, CutVertex cut, std::span<const double> v) {
  require_len(v.size(), cut_dim(c, cut), "jvp_cut");
  switch (cut) {
    case CutVertex::State: return Vector(v.begin(), v.end());
    case CutVertex::Preactivation: return preact_jvp(c, v, {});
    case CutVertex::Parameter: break;
  }
  throw std::logic_error("jvp_cut: unsupported for the parameter cut; compose jvp_param with the preactivation cut");
}

Vector vjp_to_cut(const StepCache& c, CutVertex cut, std::span<const double> lambda) {
  require_len(lambda.size(), c.params->state_dim(), "vjp_to_cut");
  switch (cut) {
    case CutVertex::State: return Vector(lambda.begin(), lambda.end());
    case CutVertex::Preactivation: return preact_vjp(c, lambda).bar_z;
    case CutVertex::Parameter: return outer_vec(preact_vjp(c, lambda).bar_z, c.a);
  }
  return {};
}

Vector vjp_cut(const StepCache& c, CutVertex cut, std::span<const double> v) {
  require_len(v.size(), cut_dim(c, cut), "vjp_cut");
  switch (cut) {
    case CutVertex::State: return outer_vec(preact_vjp(c, v).bar_z, c.a);
    case CutVertex::Preactivation: return outer_vec(v, c.a);
    case CutVertex::Parameter: return Vector(v.begin(), v.end());
  }
  return {};
}

Vector jvp_param(const StepCache& c, CutVertex cut, std::span<const double> dtheta) {
  const RnnParams& p = *c.params;
  require_len(dtheta.size(), p.param_count(), "jvp_param");
  switch (cut) {
    case CutVertex::State: return preact_jvp(c, weight_times_aug(dtheta, p.preact_dim(), c.a), {});
    case CutVertex::Preactivation: return weight_times_aug(dtheta, p.preact_dim(), c.a);
    case CutVertex::Parameter: return Vector(dtheta.begin(), dtheta.end());
  }
  return {};
}

DenseJacobians dense_jacobians(const StepCache& c, CutVertex cut) {
  const RnnParams& p = *c.params;
  const std::size_t S = p.state_dim();
  const std::size_t P = p.param_count();
  const std::size_t Nz = p.preact_dim();
  const std::size_t D = p.aug_dim();
  const std::size_t zdim = cut_dim(p, cut);
  if (S * P > kDenseJacobianLimit || zdim * P > kDenseJacobianLimit) {
    throw DimensionError("dense_jacobians: size guard exceeded (|theta| * dim > 1e7)");
  }
  DenseJacobians out;
  out.state = DenseMatrix(S, S);
  Vector e(S, 0.0);
  for (std::size_t j = 0; j < S; ++j) {
    e[j] = 1.0;
    out.state.set_column(j, jvp_state(c, e));
    e[j] = 0.0;
  }
  DenseMatrix sz(S, Nz);
  Vector ez(Nz, 0.0);
  for (std::size_t j = 0; j < Nz; ++j) {
    ez[j] = 1.0;
    sz.set_column(j, preact_jvp(c, ez, {}));
    ez[j] = 0.0;
  }
  DenseMatrix s_theta(S, P);
  for (std::size_t r = 0; r < S; ++r)
    for (std::size_t i = 0; i < Nz; ++i)
      for (std::size_t j = 0; j < D; ++j) s_theta(r, i * D + j) = sz(r, i) * c.a[j];

  switch (cut) {
    case CutVertex::State:
      out.cut = DenseMatrix::identity(S);
      out.param = std::move(s_theta);
      break;
    case CutVertex::Preactivation:
      out.cut = std::move(sz);
      out.param = DenseMatrix(Nz, P);
      for (std::size_t i = 0; i < Nz; ++i)
        for (std::size_t j = 0; j < D; ++j) out.param(i, i * D + j) = c.a[j];
      break;
    case CutVertex::Parameter:
      out.cut = std::move(s_theta);
      out.param = DenseMatrix::identity(P);
      break;
  }
  return out;
}

ReadoutHead init_head(HeadKind kind, std::size_t outputs, std::size_t hidden, std::uint64_t seed, double scale) {
  ReadoutHead head{kind, DenseMatrix(outputs, hidden + 1)};
  std::mt19937_64 rng(seed);
  const double s = scale / std::sqrt(static_cast<double>(hidden));
  std::uniform_real_distribution<double> uni(-s, s);
  for (std::size_t i = 0; i < outputs; ++i)
    for (std::size_t j = 0; j < hidden; ++j) head.V(i, j) = uni(rng);
  return head;
}

LossGrad loss_grad(const ReadoutHead& head, std::span<const double> h, const Target& target) {
  const std::size_t K = head.outputs();
  const std::size_t H = h.size();
  if (head.V.cols() != H + 1) throw DimensionError("loss_grad: head expects hidden size " + std::to_string(head.V.cols() - 1));
  LossGrad out;
  out.grad.assign(H, 0.0);
  out.head_grad = DenseMatrix(K, H + 1);
  if (target.masked) return out;

  Vector y(K);
  for (std::size_t k = 0; k < K; ++k) y[k] = dot(head.V.row(k).first(H), h) + head.V(k, H);
  Vector dy(K);
  switch (head.kind) {
    case HeadKind::Softmax: {
      if (target.label < 0 || static_cast<std::size_t>(target.label) >= K) {
        throw std::out_of_range("loss_grad: label " + std::to_string(target.label) + " outside [0, " +
                                std::to_string(K) + ")");
      }
      const double mx = *std::max_element(y.begin(), y.end());
      double z = 0.0;
      for (double v : y) z += std::exp(v - mx);
      const double lse = mx + std::log(z);
      out.loss = lse - y[static_cast<std::size_t>(target.label)];
      for (std::size_t k = 0; k < K; ++k) dy[k] = std::exp(y[k] - lse);
      dy[static_cast<std::size_t>(target.label)] -= 1.0;
      break;
    }
    case HeadKind::Bernoulli:
      require_len(target.values.size(), K, "loss_grad: bits");
      for (std::size_t k = 0; k < K; ++k) {
        const double b = target.values[k];
        if (b < 0.0 || b > 1.0) throw std::out_of_range("loss_grad: bit target outside [0, 1]");
        out.loss += softplus(y[k]) - b * y[k];
        dy[k] = sigmoid(y[k]) - b;
      }
      break;
    case HeadKind::Linear:
      require_len(target.values.size(), K, "loss_grad: weights");
      out.loss = dot(target.values, y);
      dy = target.values;
      break;
    case HeadKind::Squared:
      require_len(target.values.size(), K, "loss_grad: values");
      for (std::size_t k = 0; k < K; ++k) {
        dy[k] = y[k] - target.values[k];
        out.loss += 0.5 * dy[k] * dy[k];
      }
      break;
  }
  for (std::size_t k = 0; k < K; ++k) {
    axpy(dy[k], head.V.row(k).first(H), out.grad);
    auto gk = out.head_grad.row(k);
    for (std::size_t j = 0; j < H; ++j) gk[j] = dy[k] * h[j];
    gk[H] = dy[k];
  }
  return out;
}

double EpisodeTape::total_loss() const {
  double s = 0.0;
  for (double l : losses) s += l;
  return s;
}

EpisodeTape run_episode(const RnnParams& params, const ReadoutHead& head, const Episode& episode,
                        std::span<const double> s0, const StepPerturbation* perturb) {
  return run_episode(std::make_shared<const RnnParams>(params), head, episode, s0, perturb);
}

EpisodeTape run_episode(std::shared_ptr<const RnnParams> params, const ReadoutHead& head,
                        const Episode& episode, std::span<const double> s0, const StepPerturbation* perturb) {
  const std::size_t T = episode.length();
  if (T == 0) throw DimensionError("run_episode: empty episode");
  if (episode.targets.size() != T) throw DimensionError("run_episode: inputs and targets differ in length");
  const std::size_t S = params->state_dim();
  const std::size_t H = params->hidden;
  EpisodeTape tape;
  tape.params = params;
  tape.s0 = s0.empty() ? Vector(S, 0.0) : Vector(s0.begin(), s0.end());
  require_len(tape.s0.size(), S, "run_episode: initial state");
  tape.steps.reserve(T);
  tape.losses.resize(T);
  tape.loss_grads.resize(T);
  tape.head_grad = DenseMatrix(head.V.rows(), head.V.cols());

  const Vector* s_prev = &tape.s0;
  for (std::size_t t = 0; t < T; ++t) {
    std::span<const double> offset;
    if (perturb && perturb->step == t && perturb->cut == CutVertex::Preactivation) offset = perturb->delta;
    StepCache c;
    try {
      c = step(params, *s_prev, episode.inputs[t], offset);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " at step " + std::to_string(t));
    }
    if (perturb && perturb->step == t && perturb->cut == CutVertex::State) axpy(1.0, perturb->delta, c.s);
    tape.steps.push_back(std::move(c));
    const Vector& s = tape.steps.back().s;
    LossGrad lg = loss_grad(head, std::span<const double>(s).first(H), episode.targets[t]);
    tape.losses[t] = lg.loss;
    tape.loss_grads[t].assign(S, 0.0);
    std::copy(lg.grad.begin(), lg.grad.end(), tape.loss_grads[t].begin());
    tape.head_grad += lg.head_grad;
    s_prev = &tape.steps.back().s;
  }
  return tape;
}

}  // namespace uoro
