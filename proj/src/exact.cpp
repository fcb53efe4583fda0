#include "uoro/exact.hpp"

namespace uoro {

GradientVector bptt_gradient(const EpisodeTape& tape) {
  const std::size_t T = tape.length();
  if (T == 0) throw DimensionError("bptt_gradient: empty tape");
  const RnnParams& p = *tape.params;
  GradientVector out{Vector(p.param_count(), 0.0), tape.total_loss()};
  Vector lambda(p.state_dim(), 0.0);
  for (std::size_t t = T; t-- > 0;) {
    axpy(1.0, tape.loss_grads[t], lambda);
    const StepCache& c = tape.steps[t];
    axpy(1.0, vjp_cut(c, CutVertex::Preactivation, vjp_to_cut(c, CutVertex::Preactivation, lambda)), out.g);
    lambda = vjp_state(c, lambda);
  }
  return out;
}

RtrlResult rtrl_jacobians(const EpisodeTape& tape, Execution exec) {
  const std::size_t T = tape.length();
  if (T == 0) throw DimensionError("rtrl_jacobians: empty tape");
  const RnnParams& p = *tape.params;
  const std::size_t S = p.state_dim();
  const std::size_t P = p.param_count();
  if (S * P > kDenseJacobianLimit) throw DimensionError("rtrl_jacobians: size guard exceeded (|theta| * dim > 1e7)");
  RtrlResult out;
  out.gradient = {Vector(P, 0.0), tape.total_loss()};
  out.jacobians.reserve(T);
  DenseMatrix J(S, P);
  DenseMatrix next(S, P);
  for (std::size_t t = 0; t < T; ++t) {
    const DenseJacobians local = dense_jacobians(tape.steps[t], CutVertex::Parameter);
    if (t > 0) {
      if (exec == Execution::Parallel) {
        kernels::gemm_parallel(local.state, J, next);
      } else {
        kernels::gemm_serial(local.state, J, next);
      }
      next += local.cut;
      std::swap(J, next);
    } else {
      J = local.cut;
    }
    const Vector contrib = exec == Execution::Parallel ? kernels::vecmat_parallel(tape.loss_grads[t], J)
                                                       : kernels::vecmat_serial(tape.loss_grads[t], J);
    axpy(1.0, contrib, out.gradient.g);
    out.jacobians.push_back(J);
  }
  return out;
}

Vector finite_difference_gradient(const RnnParams& params, const ReadoutHead& head, const Episode& episode, double eps) {
  RnnParams probe = params;
  Vector g(params.param_count());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double orig = probe.W.flat()[i];
    probe.W.flat()[i] = orig + eps;
    const double up = run_episode(probe, head, episode).total_loss();
    probe.W.flat()[i] = orig - eps;
    const double down = run_episode(probe, head, episode).total_loss();
    probe.W.flat()[i] = orig;
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

EpisodeTensors episode_tensors(const EpisodeTape& tape, CutVertex cut) {
  const std::size_t T = tape.length();
  if (T == 0) throw DimensionError("episode_tensors: empty tape");
  const RnnParams& p = *tape.params;
  EpisodeTensors out;
  out.cut = cut;
  out.T = T;
  out.dim = cut_dim(p, cut);
  if (T * p.state_dim() > kTensorLimit) throw DimensionError("episode_tensors: size guard exceeded (T * dim > 1e5)");
  out.b.assign(T, std::vector<Vector>(T, Vector(out.dim, 0.0)));
  out.a_sq_norms.resize(T);
  out.a.resize(T);
  for (std::size_t s = 0; s < T; ++s) {
    out.a[s] = tape.steps[s].a;
    out.a_sq_norms[s] = squared_norm(tape.steps[s].a);
    if (cut != CutVertex::Preactivation) out.J.push_back(dense_jacobians(tape.steps[s], cut).param);
  }
  for (std::size_t t = 0; t < T; ++t) {
    Vector lambda = tape.loss_grads[t];
    for (std::size_t s = t + 1; s-- > 0;) {
      out.b[t][s] = vjp_to_cut(tape.steps[s], cut, lambda);
      if (s > 0) lambda = vjp_state(tape.steps[s], lambda);
    }
  }
  return out;
}

}  // namespace uoro
