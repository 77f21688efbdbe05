#pragma once

#include "delaymark/system.hpp"

namespace delaymark {

// Second moments of the stacked drive-response noise
// n_t = (D w, D w', v'_t, v'_{t-tau_t}, v'_{t-tau'_t}).
//
// Q is the unconditional lag-0 moment E[n_t n_t^T]. S holds the unit-lag
// covariance pattern between a delayed slot and the v' slot it points back to
// (sigma_v at blocks (3,2) and (4,2)); R(l, tau, tau') is the lag-l cross
// moment E[n_t n_{t+l}^T] conditioned on the earlier step's delays
// (tau_t, tau'_t) = (tau, tau'), averaged over the later ones.
struct NoiseMomentSet {
  Mat Q;  // (2nx + 3ny)^2
  Mat S;
  Mat sigma_v;
  Index nx = 0, ny = 0;
  DelayDistribution delays;         // pmf p
  DelayDistribution attack_delays;  // pmf p'

  Mat R_of(int l, int tau, int tau_prime) const;
  Index dim() const { return 2 * nx + 3 * ny; }
};

NoiseMomentSet build_noise_moments(const LtiPlant& plant, const NoiseModel& noise,
                                   const DelayDistribution& delays,
                                   const DelayDistribution& attack_delays);

// Source term of the stationary second-moment fixed point
//   vec(C) = E[A (x) A] vec(C) + omega.
//
// omega = vec(G Q G^T + Phi + Phi^T) with
//   Phi = sum_{tau,tau'} p_tau p'_tau' A_{tau,tau'} F(tau,tau'),
//   F   = Abar^{tau-1} G E23 G^T + Abar^{tau'-1} G E24 G^T
//       + sum_{j>=1} Abar^{j-1} G [ p_{tau-j} E33 + p_{tau'-j} E34
//                                 + p'_{tau-j} E43 + p'_{tau'-j} E44 ] G^T,
// where E_rc places sigma_v at noise block (r, c) and p_k = 0 outside
// {1..tau_bar}. The pairing of powers and weights to delay indices is easy to
// get wrong (e.g. Abar^{tau-1} on both E2* pieces, or lag weights indexed
// l + tau); the form above is the one that survives Monte-Carlo validation
// against simulated ensembles (see tests). Each E2* factor carries the delay
// of the slot it conditions on, and the E3*/E4* weights range over the
// earlier step's delay distribution.
Vec compute_omega(const UpliftedSystem& up, const NoiseMomentSet& moments);

struct CovarianceResult {
  Mat C;                        // ambient x ambient, symmetrized
  Vec omega;
  long iterations = 0;
  double residual = 0.0;
  double presym_asymmetry = 0.0;  // max |C - C^T| before symmetrization
};

// Stationary covariance of the uplifted state via fixed-point iteration on
// V -> E[A V A^T] + unvec(omega). Refuses above the ambient cap: the memory
// and per-iteration cost are quadratic in 4 nx (tau_bar + 1).
CovarianceResult asymptotic_covariance(const UpliftedSystem& up,
                                       const NoiseMomentSet& moments,
                                       const SolverOptions& opts = {},
                                       Index ambient_cap = 400);

// Selectors on the top slot of the uplifted state:
// P X = xhat' - xhat, Q X = x' - xhat'.
struct ResidualProjections {
  Mat P;
  Mat Q;
};

ResidualProjections residual_projections(Index nx, int tau_bar);

struct AttackStatisticBreakdown {
  double per_term_clean = 0.0;   // trace[(C Qp C Qp^T ... ) ...] + sigma_v part, ~ ny
  double per_term_excess = 0.0;  // trace[(P C P^T + 2 P C Q^T) C^T Sigma_R^-1 C]
  double predicted_mean = 0.0;   // T ny + T * per_term_excess
};

// Closed-form limit of E[g'_kappa(T)] under a sustained replay attack.
double predicted_attack_statistic(const CovarianceResult& cov,
                                  const ResidualProjections& proj,
                                  const KalmanGains& gains,
                                  const LtiPlant& plant, int T);
AttackStatisticBreakdown predicted_attack_statistic_breakdown(
    const CovarianceResult& cov, const ResidualProjections& proj,
    const KalmanGains& gains, const LtiPlant& plant, int T);

}  // namespace delaymark
