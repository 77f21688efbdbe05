#pragma once

#include "delaymark/config.hpp"
#include "delaymark/detection.hpp"

namespace delaymark {

// Stationary-cost comparison across watermark variants on one experiment.
// Empirical costs come from nominal runs of cost_horizon steps (after the
// config burn-in); analytic values from the closed-loop Lyapunov covariance
// and the dynamic-programming penalty traces.
struct CostComparison {
  double empirical_none = 0.0;
  double empirical_delay = 0.0;
  double empirical_gaussian = 0.0;
  double analytic_J_star = 0.0;
  double penalty_delay = 0.0;     // trace[K_tau^T (B^T Delta B + R) K_tau]
  double penalty_gaussian = 0.0;  // trace[sigma_gw (B^T Delta B + R)]
  long horizon = 0;
  long burn_in = 0;
};

CostComparison run_cost_comparison(const ExperimentConfig& cfg,
                                   const Mat& sigma_gw, long cost_horizon);

// Detection-rate comparison across {none, gaussian, delay} under the config's
// attack scenario, n_runs members each.
struct DetectionComparison {
  std::vector<long> kappa;
  RateCurve rate_none;
  RateCurve rate_gaussian;
  RateCurve rate_delay;
  std::vector<double> mean_g_delay;  // ensemble-mean attacked statistic
  double psi = 0.0;
  long t_prime = 0;
  int n_runs = 0;
  double pre_mean_delay = 0.0;   // ensemble means of the delay-variant g
  double post_mean_delay = 0.0;
  // first kappa >= t_prime where the rate reaches 1/2; -1 when never
  long t50_none = -1;
  long t50_gaussian = -1;
  long t50_delay = -1;
};

DetectionComparison run_detection_comparison(const ExperimentConfig& cfg,
                                             const Mat& sigma_gw, int n_runs);

void write_rate_curves_csv(std::ostream& os, const DetectionComparison& cmp);
void write_mean_statistic_csv(std::ostream& os, const DetectionComparison& cmp);
void write_costs_csv(std::ostream& os, const CostComparison& cmp,
                     bool with_references);

}  // namespace delaymark
