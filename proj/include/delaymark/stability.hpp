#pragma once

#include <vector>

#include "delaymark/system.hpp"

namespace delaymark {

// Matrix magnitude |.| used in the certificate bounds; spectral by default,
// Frobenius kept as a knob for experimentation.
enum class MatrixNormKind { spectral, frobenius };

double matrix_norm(const Mat& M, MatrixNormKind kind);

// Sufficient-condition certificate for exponential decay of the noise-free
// mean dynamics x_{t+1} = A x_t + B x_{t-tau_t} under arbitrary bounded
// delays: alpha + beta < 1 with
//   alpha = |eta_hi - c + |A^T H B||/eta_hi   if c >  |A^T H B|
//           |eta_lo - c + |A^T H B||/eta_lo   if c <= |A^T H B|
//   beta  = (|A^T H B| + |B^T H B|) / eta_lo
// where A^T H A - H = -C_lyap, c = lambda_min(C_lyap), eta_lo/eta_hi the
// extreme eigenvalues of H.
struct StabilityCertificate {
  Mat H;
  Mat C_lyap;
  double c = 0.0;
  double eta_min = 0.0;
  double eta_max = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
  double rho_A = 0.0;
  bool passes = false;
};

StabilityCertificate theorem1_certificate(const AugmentedSystem& aug,
                                          const Mat& C_lyap,
                                          MatrixNormKind norm = MatrixNormKind::spectral);
StabilityCertificate theorem1_certificate(const AugmentedSystem& aug,
                                          MatrixNormKind norm = MatrixNormKind::spectral);

struct RolloutReport {
  std::vector<double> sup_norms;  // ||x_t||_inf per step
  double fitted_rate = 0.0;       // exp(slope) of the tail-half log-norm fit
};

// Noise-free rollout of the mean dynamics with a caller-supplied delay
// sequence (delays[t] used at step t, cycled if shorter than the horizon).
RolloutReport mean_dynamics_rollout(const AugmentedSystem& aug,
                                    const std::vector<int>& delay_sequence,
                                    const Vec& x0, long horizon);

struct UpliftedSpectralReport {
  double rho_A_bar = 0.0;
  double rho_A2 = 0.0;        // rho(E[A (x) A])
  bool explicit_A2 = false;   // materialized vs power iteration
  bool transition_decay = false;
  double worst_final_ratio = 0.0;  // max over sampled products of ||A_{t:0} x||/||x||
};

// Proposition-style checks on the uplift: rho of the mean matrix, rho of the
// second-moment operator, and empirical decay of sampled transition products
// (50 products of length 500, a few random probes each).
UpliftedSpectralReport uplifted_spectral_check(const UpliftedSystem& up,
                                               std::uint64_t seed = 0x5EED5EEDULL,
                                               Index explicit_cap = 20);

}  // namespace delaymark
