#include "uoro/variance.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace uoro {

namespace {

void require_pd(const DenseMatrix& m, const char* what) {
  if (!m.is_square() || !is_symmetric(m, 1e-8)) throw DimensionError(std::string(what) + ": expected a symmetric matrix");
  const SymEig e = sym_eig(m);
  if (!(e.eigenvalues.back() > 0.0)) throw NotPsdError(std::string(what) + ": matrix is not positive definite");
}

void require_preact(const EpisodeTensors& t, const char* what) {
  if (t.cut != CutVertex::Preactivation) throw std::invalid_argument(std::string(what) + ": requires the preactivation cut");
}

void require_alpha(const EpisodeTensors& t, std::span<const double> alpha, const char* what) {
  if (alpha.size() != t.T) throw DimensionError(std::string(what) + ": alpha must have one entry per step");
  for (double a : alpha)
    if (!(a > 0.0)) throw std::invalid_argument(std::string(what) + ": alpha must be positive");
}

// ||Q0^{-1} J_q||_F^2 per step.
Vector jacobian_weights(const EpisodeTensors& t, const DenseMatrix& q0_inv) {
  Vector out(t.T);
  if (t.cut == CutVertex::Preactivation) {
    const double scale = q0_inv.empty() ? static_cast<double>(t.dim) : squared_norm(q0_inv.flat());
    for (std::size_t q = 0; q < t.T; ++q) out[q] = scale * t.a_sq_norms[q];
  } else {
    for (std::size_t q = 0; q < t.T; ++q) {
      const double f = q0_inv.empty() ? frob_norm(t.J[q]) : frob_norm(matmul(q0_inv, t.J[q]));
      out[q] = f * f;
    }
  }
  return out;
}

// suffix[r][q] = sum_{t=q}^{k-1} b_r^(t)
std::vector<std::vector<Vector>> suffix_sums(const EpisodeTensors& t, std::size_t k) {
  std::vector<std::vector<Vector>> out(t.T, std::vector<Vector>(t.T, Vector(t.dim, 0.0)));
  for (std::size_t r = 0; r < t.T; ++r) {
    Vector acc(t.dim, 0.0);
    for (std::size_t q = k; q-- > 0;) {
      axpy(1.0, t.b[q][r], acc);
      out[r][q] = acc;
    }
  }
  return out;
}

double objective_normalized(const DenseMatrix& C, std::span<const double> zeta) {
  double f = 0.0;
  for (std::size_t q = 0; q < C.rows(); ++q)
    for (std::size_t r = 0; r < C.cols(); ++r)
      if (C(q, r) != 0.0) f += std::exp(zeta[r] - zeta[q]) * C(q, r);
  return f;
}

DenseMatrix conjugated(const DenseMatrix& C, std::span<const double> zeta) {
  DenseMatrix Cb(C.rows(), C.cols());
  for (std::size_t q = 0; q < C.rows(); ++q)
    for (std::size_t r = 0; r < C.cols(); ++r) Cb(q, r) = C(q, r) == 0.0 ? 0.0 : std::exp(zeta[r] - zeta[q]) * C(q, r);
  return Cb;
}

// df/dzeta = (Cb^T 1 - Cb 1)
Vector objective_gradient(const DenseMatrix& Cb) {
  const std::size_t T = Cb.rows();
  Vector g(T, 0.0);
  for (std::size_t q = 0; q < T; ++q)
    for (std::size_t r = 0; r < T; ++r) {
      g[r] += Cb(q, r);
      g[q] -= Cb(q, r);
    }
  return g;
}

DenseMatrix hessian_of(const DenseMatrix& Cb) {
  const std::size_t T = Cb.rows();
  DenseMatrix S = Cb + Cb.transposed();
  DenseMatrix H(T, T);
  for (std::size_t i = 0; i < T; ++i) {
    double rs = 0.0;
    for (std::size_t j = 0; j < T; ++j) {
      rs += S(i, j);
      H(i, j) = -S(i, j);
    }
    H(i, i) += rs;
  }
  return H;
}

double max_abs_vec(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace

DenseMatrix quartic_moment_closed(const DenseMatrix& A, const DenseMatrix& B, const DenseMatrix& C,
                                  const DenseMatrix& D, double kappa) {
  const DenseMatrix BC = matmul(B, C);
  if (!BC.is_square() || A.cols() != BC.rows() || BC.cols() != D.rows()) {
    throw DimensionError("quartic_moment_closed: shapes are not conformable");
  }
  DenseMatrix out = trace(BC) * matmul(A, D);
  out += matmul(matmul(A, BC), D);
  out += matmul(matmul(A, BC.transposed()), D);
  if (kappa != 0.0) out += kappa * matmul(matmul(A, diagonal_part(BC)), D);
  return out;
}

DenseMatrix covariance_closed(std::span<const double> x, std::span<const double> y, const DenseMatrix& V,
                              const DenseMatrix& W, double kappa) {
  if (x.size() != V.rows() || y.size() != W.rows() || x.size() != y.size()) {
    throw DimensionError("covariance_closed: shapes are not conformable");
  }
  const DenseMatrix Vt = V.transposed();
  const DenseMatrix xy = outer(x, y);
  DenseMatrix out = dot(x, y) * matmul(Vt, W);
  out += matmul(matmul(Vt, xy.transposed()), W);
  if (kappa != 0.0) out += kappa * matmul(matmul(Vt, diagonal_part(xy)), W);
  return out;
}

double covariance_trace(std::span<const double> x, std::span<const double> y, const DenseMatrix& V,
                        const DenseMatrix& W, double kappa) {
  return trace(covariance_closed(x, y, V, W, kappa));
}

DenseMatrix compute_C(const EpisodeTensors& t, const DenseMatrix& q0) {
  const DenseMatrix q0_inv = q0.empty() ? DenseMatrix{} : inverse(q0);
  const Vector jw = jacobian_weights(t, q0_inv);
  const auto suffix = suffix_sums(t, t.T);
  DenseMatrix C(t.T, t.T);
  for (std::size_t q = 0; q < t.T; ++q)
    for (std::size_t r = 0; r < t.T; ++r) {
      const Vector& c = suffix[r][q];
      const double bn = q0.empty() ? squared_norm(c) : squared_norm(vecmat(c, q0));
      C(q, r) = bn * jw[q];
    }
  return C;
}

double alpha_objective(const DenseMatrix& C, std::span<const double> alpha) {
  if (!C.is_square() || alpha.size() != C.rows()) throw DimensionError("alpha_objective: shape mismatch");
  double f = 0.0;
  for (std::size_t q = 0; q < C.rows(); ++q)
    for (std::size_t r = 0; r < C.cols(); ++r) f += (alpha[r] * alpha[r]) / (alpha[q] * alpha[q]) * C(q, r);
  return f;
}

double newton_residual(const DenseMatrix& C, std::span<const double> zeta) {
  return max_abs_vec(objective_gradient(conjugated(C, zeta)));
}

DenseMatrix newton_hessian(const DenseMatrix& C, std::span<const double> zeta) {
  return hessian_of(conjugated(C, zeta));
}

AlphaSolution solve_alpha_newton(const DenseMatrix& C, const NewtonOptions& opts) {
  if (!C.is_square() || C.rows() == 0) throw DimensionError("solve_alpha_newton: C must be square and non-empty");
  for (double v : C.flat())
    if (v < 0.0 || !std::isfinite(v)) throw std::invalid_argument("solve_alpha_newton: C must be finite and nonnegative");
  const double scale = inf_norm(C);
  if (!(scale > 0.0)) throw std::invalid_argument("solve_alpha_newton: C is identically zero");
  const std::size_t T = C.rows();
  const DenseMatrix Cn = (1.0 / scale) * DenseMatrix(C);

  AlphaSolution sol;
  sol.zeta.assign(T, 0.0);
  double f = objective_normalized(Cn, sol.zeta);
  for (int it = 0;; ++it) {
    const DenseMatrix Cb = conjugated(Cn, sol.zeta);
    const Vector g = objective_gradient(Cb);
    sol.residual = max_abs_vec(g) * scale;
    sol.iterations = it;
    if (max_abs_vec(g) <= opts.tolerance) {
      sol.converged = true;
      break;
    }
    if (it >= opts.max_iterations) break;
    DenseMatrix H = hessian_of(Cb);
    for (std::size_t i = 0; i < T; ++i) H(i, i) += opts.damping;
    Vector delta;
    try {
      delta = solve(H, g);
    } catch (const SingularityError&) {
      break;
    }
    double eta = opts.eta;
    Vector trial(T);
    double f_trial = f;
    bool accepted = false;
    while (eta > 1e-12) {
      for (std::size_t i = 0; i < T; ++i) trial[i] = sol.zeta[i] - eta * delta[i];
      f_trial = objective_normalized(Cn, trial);
      if (std::isfinite(f_trial) && f_trial <= f * (1.0 + 1e-14)) {
        accepted = true;
        break;
      }
      eta *= 0.5;
    }
    if (!accepted) {
      sol.iterations = it + 1;
      break;
    }
    sol.zeta = trial;
    f = f_trial;
  }
  const double mn = *std::min_element(sol.zeta.begin(), sol.zeta.end());
  for (double& z : sol.zeta) z -= mn;
  sol.alpha.resize(T);
  for (std::size_t i = 0; i < T; ++i) sol.alpha[i] = std::exp(0.5 * sol.zeta[i]);
  return sol;
}

Vector alpha_closed_form_rank1(std::span<const double> m, std::span<const double> n) {
  if (m.size() != n.size() || m.empty()) throw DimensionError("alpha_closed_form_rank1: m and n must match");
  Vector alpha(m.size());
  for (std::size_t k = 0; k < m.size(); ++k) {
    if (!(m[k] > 0.0) || !(n[k] > 0.0)) throw std::invalid_argument("alpha_closed_form_rank1: entries must be positive");
    alpha[k] = std::pow(m[k] / n[k], 0.25);
  }
  const double mn = *std::min_element(alpha.begin(), alpha.end());
  for (double& a : alpha) a /= mn;
  return alpha;
}

GreedyCoefficients greedy_coefficients(const EpisodeTensors& t, const DenseMatrix& q0) {
  const DenseMatrix q0_inv = q0.empty() ? DenseMatrix{} : inverse(q0);
  const Vector jw = jacobian_weights(t, q0_inv);
  auto bq = [&](std::size_t time, std::size_t r) {
    const Vector& b = t.b[time][r];
    return q0.empty() ? squared_norm(b) : squared_norm(vecmat(b, q0));
  };
  auto fourth_root_ratio = [](double num, double den) {
    if (!(num > 0.0) || !(den > 0.0)) return 1.0;
    const double r = std::pow(num / den, 0.25);
    return std::isfinite(r) ? r : 1.0;
  };
  GreedyCoefficients out{Vector(t.T, 1.0), Vector(t.T, 1.0)};
  for (std::size_t s = 0; s < t.T; ++s) {
    out.beta[s] = fourth_root_ratio(jw[s], bq(s, s));
    if (s == 0) continue;
    double num = 0.0, den = 0.0;
    for (std::size_t q = 0; q < s; ++q) {
      // beta_q * gamma_{q+1} * ... * gamma_{s-1}
      double p = out.beta[q];
      for (std::size_t k = q + 1; k < s; ++k) p *= out.gamma[k];
      num += jw[q] / (p * p);
      den += p * p * bq(s, q);
    }
    out.gamma[s] = fourth_root_ratio(num, den);
  }
  return out;
}

DenseMatrix compute_B_prefix(const EpisodeTensors& t, std::span<const double> alpha, std::size_t k) {
  require_preact(t, "compute_B");
  require_alpha(t, alpha, "compute_B");
  if (k > t.T) throw DimensionError("compute_B_prefix: k exceeds the episode length");
  const auto suffix = suffix_sums(t, k);
  DenseMatrix B(t.dim, t.dim);
  for (std::size_t q = 0; q < k; ++q)
    for (std::size_t r = 0; r < k; ++r) {
      const Vector& c = suffix[r][q];
      const double w = (alpha[r] * alpha[r]) / (alpha[q] * alpha[q]) * t.a_sq_norms[q];
      for (std::size_t i = 0; i < t.dim; ++i) {
        if (c[i] == 0.0) continue;
        axpy(w * c[i], c, B.row(i));
      }
    }
  return symmetrized(B);
}

DenseMatrix compute_B(const EpisodeTensors& t, std::span<const double> alpha, BForm form) {
  if (form == BForm::QR) return compute_B_prefix(t, alpha, t.T);
  require_preact(t, "compute_B");
  require_alpha(t, alpha, "compute_B");
  Vector w(t.T);
  double acc = 0.0;
  for (std::size_t q = 0; q < t.T; ++q) {
    acc += t.a_sq_norms[q] / (alpha[q] * alpha[q]);
    w[q] = acc;
  }
  DenseMatrix B(t.dim, t.dim);
  for (std::size_t s = 0; s < t.T; ++s)
    for (std::size_t u = 0; u < t.T; ++u) {
      const double ws = w[std::min(s, u)];
      for (std::size_t r = 0; r <= std::min(s, u); ++r) {
        const Vector& bs = t.b[s][r];
        const Vector& bt = t.b[u][r];
        const double coef = ws * alpha[r] * alpha[r];
        for (std::size_t i = 0; i < t.dim; ++i) {
          if (bs[i] == 0.0) continue;
          axpy(coef * bs[i], bt, B.row(i));
        }
      }
    }
  return symmetrized(B);
}

DenseMatrix optimal_Q0(const DenseMatrix& B, double damping) {
  if (!B.is_square()) throw DimensionError("optimal_Q0: B must be square");
  DenseMatrix M = symmetrized(B);
  const double shift = damping * trace(M) / static_cast<double>(M.rows());
  for (std::size_t i = 0; i < M.rows(); ++i) M(i, i) += shift;
  return psd_frac_power(M, -0.25);
}

double predicted_VQ(const EpisodeTensors& t, std::span<const double> alpha, const DenseMatrix& q0, VQFlavor flavor) {
  switch (flavor) {
    case VQFlavor::General:
      require_alpha(t, alpha, "predicted_VQ");
      return alpha_objective(compute_C(t, q0), alpha);
    case VQFlavor::Spatial:
      return trace(compute_C(t, q0));
    case VQFlavor::Structured: {
      require_preact(t, "predicted_VQ");
      const DenseMatrix B = compute_B(t, alpha);
      if (q0.empty()) return trace(B) * static_cast<double>(t.dim);
      const DenseMatrix qq = matmul(q0, q0.transposed());
      return trace(matmul(B, qq)) * trace(inverse(qq));
    }
    case VQFlavor::PreUoro:
      require_preact(t, "predicted_VQ");
      return trace(compute_B(t, alpha));
  }
  return 0.0;
}

double preuoro_kurtosis_term(const EpisodeTensors& t) {
  require_preact(t, "preuoro_kurtosis_term");
  const auto suffix = suffix_sums(t, t.T);
  double s = 0.0;
  for (std::size_t r = 0; r < t.T; ++r) s += t.a_sq_norms[r] * squared_norm(suffix[r][r]);
  return s;
}

double trace_product_c(const DenseMatrix& A, const DenseMatrix& X, const DenseMatrix& Y) {
  return trace(matmul(X, A)) * trace(matmul(Y, inverse(A)));
}

DenseMatrix trace_product_minimizer(const DenseMatrix& X, const DenseMatrix& Y) {
  require_pd(X, "trace_product_minimizer");
  require_pd(Y, "trace_product_minimizer");
  const DenseMatrix xh = psd_frac_power(X, 0.5);
  const DenseMatrix xmh = psd_frac_power(X, -0.5);
  const DenseMatrix mid = psd_frac_power(symmetrized(matmul(matmul(xh, Y), xh)), 0.5);
  return symmetrized(matmul(matmul(xmh, mid), xmh));
}

double trace_product_min_value(const DenseMatrix& X, const DenseMatrix& Y) {
  require_pd(X, "trace_product_min_value");
  require_pd(Y, "trace_product_min_value");
  const DenseMatrix xh = psd_frac_power(X, 0.5);
  const double s = trace(psd_frac_power(symmetrized(matmul(matmul(xh, Y), xh)), 0.5));
  return s * s;
}

bool check_minimizer(const DenseMatrix& A, const DenseMatrix& X, const DenseMatrix& Y, double rel_tol) {
  require_pd(A, "check_minimizer");
  require_pd(X, "check_minimizer");
  require_pd(Y, "check_minimizer");
  const DenseMatrix XA = matmul(X, A);
  const DenseMatrix AiY = matmul(inverse(A), Y);
  const double gamma = trace(XA) / trace(AiY);
  if (!(gamma > 0.0)) return false;
  return frob_norm(XA - gamma * DenseMatrix(AiY)) <= rel_tol * frob_norm(XA);
}

std::vector<DenseMatrix> estimate_B_online(const EpisodeTape& tape, EpisodeNoise& noise,
                                           const ScalingSchedule& schedule, OnlineBMode mode) {
  if (!noise.has_replicas()) throw std::invalid_argument("estimate_B_online: noise has no replica streams");
  const RnnParams& p = *tape.params;
  const std::size_t T = tape.length();
  const std::size_t S = p.state_dim();
  const std::size_t Nz = p.preact_dim();
  if (noise.dim() != Nz) throw DimensionError("estimate_B_online: noise must live in the preactivation space");
  const bool fixed = schedule.mode == ScheduleMode::FixedAlpha;
  if (fixed && schedule.beta.size() < T) throw DimensionError("estimate_B_online: schedule shorter than the episode");

  struct Replica {
    Vector h, nu_acc, m;
  };
  Replica rm{Vector(S, 0.0), Vector(Nz, 0.0), Vector(Nz, 0.0)};
  Replica rn = rm;
  double a_acc = 0.0;

  auto advance = [&](Replica& rep, const StepCache& c, std::span<const double> spatial_noise, double tau, double gamma,
                     double beta, std::span<const double> dl, double a_t) {
    const Vector fw = scaled(jvp_state(c, rep.h), gamma);
    const Vector sp = scaled(jvp_cut(c, CutVertex::Preactivation, spatial_noise), tau * beta);
    double eta = 1.0, zeta = 1.0;
    if (mode == OnlineBMode::Gir) {
      const double nf = norm(fw), nn = norm(rep.nu_acc), ns = norm(sp), nv = norm(spatial_noise);
      if (nf > 0.0 && nn > 0.0) eta = std::sqrt(nn / nf);
      if (ns > 0.0 && nv > 0.0) zeta = std::sqrt(nv / ns);
    }
    rep.h = scaled(fw, eta);
    axpy(zeta, sp, rep.h);
    rep.nu_acc = scaled(rep.nu_acc, 1.0 / eta);
    axpy(1.0 / zeta, spatial_noise, rep.nu_acc);
    axpy(a_t * dot(dl, rep.h), rep.nu_acc, rep.m);
  };

  std::vector<DenseMatrix> out;
  out.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    const StepCache& c = tape.steps[t];
    const StepNoise n = noise.next();
    const double gamma = fixed && t > 0 ? schedule.gamma[t] : 1.0;
    const double beta = fixed ? schedule.beta[t] : 1.0;
    a_acc = a_acc / gamma + n.sigma * std::sqrt(squared_norm(c.a)) / beta;
    advance(rm, c, n.nu, n.tau, gamma, beta, tape.loss_grads[t], a_acc);
    advance(rn, c, n.mu, n.tau, gamma, beta, tape.loss_grads[t], a_acc);
    DenseMatrix est = outer(rm.m, rn.m);
    est = symmetrized(est);
    out.push_back(std::move(est));
  }
  return out;
}

double pairing_offset(const EpisodeTensors& t, VQFlavor flavor) {
  const auto suffix = suffix_sums(t, t.T);
  const bool preact = t.cut == CutVertex::Preactivation;
  std::vector<std::vector<Vector>> pulled;
  if (!preact) {
    pulled.assign(t.T, std::vector<Vector>(t.T));
    for (std::size_t r = 0; r < t.T; ++r)
      for (std::size_t q = 0; q < t.T; ++q) pulled[r][q] = vecmat(suffix[r][q], t.J[r]);
  }
  double s = 0.0;
  for (std::size_t r = 0; r < t.T; ++r)
    for (std::size_t q = 0; q < t.T; ++q) {
      if (flavor == VQFlavor::Spatial && q != r) continue;
      s += preact ? dot(suffix[r][q], suffix[q][r]) * dot(t.a[r], t.a[q]) : dot(pulled[r][q], pulled[q][r]);
    }
  return s;
}

VarianceMeasurement empirical_variance(const std::vector<Vector>& estimates, std::span<const double> exact,
                                       double offset) {
  if (estimates.empty()) throw std::invalid_argument("empirical_variance: no runs");
  SampleStats stats(exact.size() + 1);
  Vector row(exact.size() + 1);
  for (const Vector& e : estimates) {
    if (e.size() != exact.size()) throw DimensionError("empirical_variance: estimate length mismatch");
    double sq = 0.0;
    for (std::size_t i = 0; i < e.size(); ++i) {
      row[i] = e[i];
      sq += (e[i] - exact[i]) * (e[i] - exact[i]);
    }
    row.back() = sq;
    stats.add(row);
  }
  return summarize_variance(stats, exact, offset);
}

VarianceMeasurement summarize_variance(const SampleStats& stats, std::span<const double> exact, double offset) {
  if (stats.dim() != exact.size() + 1) throw DimensionError("summarize_variance: layout mismatch");
  if (stats.count() == 0) throw std::invalid_argument("summarize_variance: no runs");
  VarianceMeasurement m;
  const Vector se = stats.standard_error();
  m.runs = stats.count();
  m.mean.assign(stats.mean().begin(), stats.mean().end() - 1);
  m.mean_se.assign(se.begin(), se.end() - 1);
  m.mse = stats.mean().back();
  m.mse_se = se.back();
  m.intrinsic = squared_norm(exact);
  m.offset = offset;
  m.actual_vq = m.mse - offset;
  return m;
}

Vector offline_total_estimate(const EpisodeTensors& t, const std::vector<Vector>& u, std::span<const double> alpha,
                              const DenseMatrix& q0) {
  require_alpha(t, alpha, "offline_total_estimate");
  if (u.size() != t.T) throw DimensionError("offline_total_estimate: one noise vector per step required");
  const DenseMatrix q0_inv = q0.empty() ? DenseMatrix{} : inverse(q0);
  std::vector<Vector> qu(t.T), rows(t.T);
  std::size_t P = 0;
  for (std::size_t s = 0; s < t.T; ++s) {
    qu[s] = q0.empty() ? u[s] : matvec(q0, u[s]);
    const Vector v = q0.empty() ? u[s] : vecmat(u[s], q0_inv);
    if (t.cut == CutVertex::Preactivation) {
      rows[s] = outer(v, t.a[s]).data();
    } else {
      rows[s] = vecmat(v, t.J[s]);
    }
    P = rows[s].size();
  }
  Vector est(P, 0.0);
  Vector y(P, 0.0);
  for (std::size_t k = 0; k < t.T; ++k) {
    axpy(1.0 / alpha[k], rows[k], y);
    double x = 0.0;
    for (std::size_t r = 0; r <= k; ++r) x += alpha[r] * dot(t.b[k][r], qu[r]);
    axpy(x, y, est);
  }
  return est;
}

}  // namespace uoro
