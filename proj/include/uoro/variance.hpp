#pragma once

#include <vector>

#include "uoro/estimators.hpp"
#include "uoro/exact.hpp"
#include "uoro/montecarlo.hpp"

namespace uoro {

// E[A u u^T B C u u^T D] for a standard random vector u with excess kurtosis kappa.
// Keeps BC and (BC)^T separate so non-symmetric BC is handled.
DenseMatrix quartic_moment_closed(const DenseMatrix& A, const DenseMatrix& B, const DenseMatrix& C,
                                  const DenseMatrix& D, double kappa);

// Cov[x^T u u^T V, y^T u u^T W] = E[(.)^T (.)] - (mean)^T (mean), and its trace.
// The middle term is V^T y x^T W; it reduces to V^T x y^T W only when x = y.
DenseMatrix covariance_closed(std::span<const double> x, std::span<const double> y, const DenseMatrix& V,
                              const DenseMatrix& W, double kappa);
double covariance_trace(std::span<const double> x, std::span<const double> y, const DenseMatrix& V,
                        const DenseMatrix& W, double kappa);

// C[q][r] = ||sum_{t>=q} b_r^(t)T Q0||^2 ||Q0^{-1} J_q||_F^2. An empty q0 means identity.
DenseMatrix compute_C(const EpisodeTensors& tensors, const DenseMatrix& q0 = {});

// sum_{q,r} (alpha_r^2 / alpha_q^2) C[q][r]
double alpha_objective(const DenseMatrix& C, std::span<const double> alpha);

struct NewtonOptions {
  double eta = 1.0;
  double damping = 1e-8;
  int max_iterations = 200;
  double tolerance = 1e-8;
};

struct AlphaSolution {
  Vector zeta;   // alpha_s^2 = exp(zeta_s), min zeta = 0
  Vector alpha;
  double residual = 0.0;  // ||(Cb - Cb^T) 1||_inf with Cb = Z^{-1} C Z
  int iterations = 0;
  bool converged = false;
};

AlphaSolution solve_alpha_newton(const DenseMatrix& C, const NewtonOptions& opts = {});
double newton_residual(const DenseMatrix& C, std::span<const double> zeta);
DenseMatrix newton_hessian(const DenseMatrix& C, std::span<const double> zeta);

// Minimizer for C[q][r] = m_q n_r: alpha_k = (m_k / n_k)^{1/4}, min alpha = 1.
Vector alpha_closed_form_rank1(std::span<const double> m, std::span<const double> n);

struct GreedyCoefficients {
  Vector beta;
  Vector gamma;  // gamma[0] = 1
};

GreedyCoefficients greedy_coefficients(const EpisodeTensors& tensors, const DenseMatrix& q0 = {});

enum class BForm { QR, MinST };

DenseMatrix compute_B(const EpisodeTensors& tensors, std::span<const double> alpha, BForm form = BForm::QR);
// B^(k): the same sums restricted to the first k steps.
DenseMatrix compute_B_prefix(const EpisodeTensors& tensors, std::span<const double> alpha, std::size_t k);

// (B + damping * tr(B)/n * I)^{-1/4}
DenseMatrix optimal_Q0(const DenseMatrix& B, double damping);

enum class VQFlavor { General, Structured, PreUoro, Spatial };

double predicted_VQ(const EpisodeTensors& tensors, std::span<const double> alpha, const DenseMatrix& q0,
                    VQFlavor flavor);
// Coefficient of kappa in the preUORO total variance (temporal noise kurtosis).
double preuoro_kurtosis_term(const EpisodeTensors& tensors);

double trace_product_c(const DenseMatrix& A, const DenseMatrix& X, const DenseMatrix& Y);
DenseMatrix trace_product_minimizer(const DenseMatrix& X, const DenseMatrix& Y);
// tr((XY)^{1/2})^2
double trace_product_min_value(const DenseMatrix& X, const DenseMatrix& Y);
bool check_minimizer(const DenseMatrix& A, const DenseMatrix& X, const DenseMatrix& Y, double rel_tol = 1e-8);

enum class OnlineBMode { Unit, Gir };

// One symmetric estimate of B^(k) per step k. The schedule supplies beta and
// gamma (fixed mode) or uses unit coefficients (GIR mode).
std::vector<DenseMatrix> estimate_B_online(const EpisodeTape& tape, EpisodeNoise& noise,
                                           const ScalingSchedule& schedule, OnlineBMode mode);

// Part of E||estimate - exact||^2 coming from the pairing that swaps the
// two noise factors between terms (r, q) and (q, r). It does not depend on
// alpha or Q0: mse = V(Q) + offset (+ kappa * preuoro_kurtosis_term for
// the temporal estimator). Spatial keeps only the r = q terms.
double pairing_offset(const EpisodeTensors& tensors, VQFlavor flavor = VQFlavor::General);

struct VarianceMeasurement {
  double mse = 0.0;        // mean ||estimate - exact||^2
  double mse_se = 0.0;
  double offset = 0.0;
  double actual_vq = 0.0;  // mse - offset
  double intrinsic = 0.0;  // ||exact||^2
  std::size_t runs = 0;
  Vector mean;
  Vector mean_se;
};

VarianceMeasurement empirical_variance(const std::vector<Vector>& estimates, std::span<const double> exact,
                                       double offset);
// `stats` holds samples laid out as (estimate..., squared error).
VarianceMeasurement summarize_variance(const SampleStats& stats, std::span<const double> exact, double offset);

// Total estimate assembled from the tensors and recorded noise:
// sum_t sum_{r,q<=t} (alpha_r/alpha_q) (b_r^(t)T Q0 u_r)(u_q^T Q0^{-1} J_q).
Vector offline_total_estimate(const EpisodeTensors& tensors, const std::vector<Vector>& u,
                              std::span<const double> alpha, const DenseMatrix& q0 = {});

}  // namespace uoro
