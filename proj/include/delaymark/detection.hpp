#pragma once

#include <vector>

#include "delaymark/simulation.hpp"

namespace delaymark {

// chi-squared distribution with (possibly non-integer) dof, via the
// regularized incomplete gamma function.
double chi2_cdf(double x, double dof);
double chi2_quantile(double prob, double dof);

struct DetectorConfig {
  int T = 85;        // window length; the sum has T + 1 terms as printed
  double psi = 0.0;  // alarm threshold
  int stride = 1;

  void validate() const;
};

struct DetectorReport {
  std::vector<long> kappa;
  std::vector<double> g;
  std::vector<std::uint8_t> alarm;
  double mean_pre_attack = 0.0;   // windows fully before the attack onset
  double mean_post_attack = 0.0;  // windows starting at or after the onset
  long first_alarm_post = -1;     // first alarmed kappa >= onset, -1 if none
  long attack_onset = -1;         // -1 when the trace holds no attack
};

// Windowed whitened residual energy
//   g_kappa = sum_{t=kappa}^{kappa+T} (y_obs - C xhat_t)^T Sigma_R^-1 (...).
DetectorReport chi2_series(const Trace& trace, const KalmanGains& gains,
                           const LtiPlant& plant, const DetectorConfig& cfg);

// Threshold with a target per-window clean false-alarm probability; the
// clean statistic is chi-squared with (T + 1) ny degrees of freedom.
double calibrate_threshold(int T, Index ny, double false_alarm_rate);

struct RateCurve {
  std::vector<long> kappa;
  std::vector<double> rate;
};

// Fraction of ensemble members alarmed at each window start. All reports must
// share the same kappa grid.
RateCurve detection_rate_curve(const std::vector<DetectorReport>& reports);

// Time-averaged x^T Q_s x + u^T R u after burn-in.
double empirical_cost(const Trace& trace, const Mat& Q_s, const Mat& R,
                      long burn_in);

// trace[K_tau^T (B^T Delta B + R) K_tau], the dynamic-programming penalty of
// the delayed feedback term with a unit-covariance excitation assumption.
double analytic_cost_penalty(const LqgGains& gains, const LtiPlant& plant,
                             const Mat& K_tau);

// Exact stationary cost of the watermark-free LQG loop, from the closed-loop
// Lyapunov covariance.
double analytic_lqg_cost(const LtiPlant& plant, const NoiseModel& noise,
                         const SynthesisResult& gains);

struct CostReport {
  double empirical_J = 0.0;
  double analytic_J_star = 0.0;
  double penalty = 0.0;  // analytic watermark penalty
  double J_wm = 0.0;     // analytic_J_star + penalty
};

}  // namespace delaymark
