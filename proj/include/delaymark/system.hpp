#pragma once

#include <optional>
#include <vector>

#include "delaymark/numerics.hpp"

namespace delaymark {

// Discrete LTI plant x_{t+1} = A x_t + B u_t + D w_t, y_t = C x_t + v_t.
// D is the noise input map and defaults to the identity; the effective
// process noise covariance is D sigma_w D^T.
struct LtiPlant {
  Mat A;  // nx x nx
  Mat B;  // nx x nu
  Mat C;  // ny x nx
  Mat D;  // nx x nw, identity unless the user overrides it

  LtiPlant() = default;
  LtiPlant(Mat A_, Mat B_, Mat C_);
  LtiPlant(Mat A_, Mat B_, Mat C_, Mat D_);

  Index nx() const { return A.rows(); }
  Index nu() const { return B.cols(); }
  Index ny() const { return C.rows(); }
  Index nw() const { return D.cols(); }

  void validate() const;

  // The three-tank benchmark plant (levels of tanks 2 and 3, temperature of
  // tank 2; two pumps, valve and heater).
  static LtiPlant three_tank();
};

struct NoiseModel {
  Mat sigma_w;  // nw x nw, symmetric PSD
  Mat sigma_v;  // ny x ny, symmetric PD

  Mat sigma_w_eff(const LtiPlant& plant) const;  // D sigma_w D^T
  // require_pd_v: synthesis needs an invertible innovation covariance;
  // simulations accept degenerate (even zero) noise
  void validate(const LtiPlant& plant, bool require_pd_v = true) const;
};

struct KalmanGains {
  Mat P;        // prediction error covariance, filter DARE solution
  Mat L;        // A M
  Mat M;        // P C^T (C P C^T + sigma_v)^-1
  Mat sigma_r;  // innovation covariance C P C^T + sigma_v
};

struct LqgGains {
  Mat delta;  // control DARE solution
  Mat K;      // (R + B^T delta B)^-1 B^T delta A
  Mat Q;      // state cost weight
  Mat R;      // input cost weight
};

struct SynthesisResult {
  KalmanGains kalman;
  LqgGains lqg;
};

SynthesisResult synthesize(const LtiPlant& plant, const NoiseModel& noise,
                           const Mat& Q, const Mat& R,
                           const SolverOptions& opts = {});

// pmf over delays {1, ..., tau_bar}; pmf[k] = P(tau = k + 1).
struct DelayDistribution {
  int tau_bar = 0;
  std::vector<double> pmf;

  void validate() const;
  double prob(int tau) const {  // zero outside {1..tau_bar}
    return (tau >= 1 && tau <= tau_bar) ? pmf[static_cast<size_t>(tau - 1)] : 0.0;
  }
  // P(tau == tau') for independent draws from this and other.
  double coincidence_prob(const DelayDistribution& other) const;

  static DelayDistribution uniform(int lo, int hi);
  static DelayDistribution point_mass(int tau);
  // Pads both pmfs with zeros to a shared tau_bar.
  static void harmonize(DelayDistribution& a, DelayDistribution& b);
};

struct WatermarkConfig {
  enum class Kind { none, delay_feedback, gaussian_additive };

  Kind kind = Kind::none;
  Mat K_tau;                 // nu x nx, delay_feedback only
  DelayDistribution delays;  // delay_feedback only
  Mat sigma_gw;              // nu x nu PSD, gaussian_additive only

  static WatermarkConfig off();
  static WatermarkConfig delay_feedback(Mat K_tau, DelayDistribution delays);
  static WatermarkConfig gaussian(Mat sigma_gw);

  void validate(const LtiPlant& plant) const;
};

// x-bold_{t+1} = A x-bold_t + B x-bold_{t-tau_t} + Gamma n_t with
// x-bold = (x, xhat) and n = (D w, v_t, v_{t-tau_t}).
struct AugmentedSystem {
  Mat A;      // 2nx x 2nx
  Mat B;      // 2nx x 2nx
  Mat Gamma;  // 2nx x (nx + 2ny)
};

AugmentedSystem assemble_augmented(const LtiPlant& plant, const KalmanGains& kg,
                                   const LqgGains& lg, const Mat& K_tau);

// Drive-response stacking (x, xhat, x', xhat') under a replay attack with the
// real filter innovating on y'. Noise order (D w, D w', v', v'_{t-tau},
// v'_{t-tau'}).
struct DriveResponseSystem {
  Mat A;  // 4nx x 4nx
  Mat B;  // 4nx x 4nx, real-side watermark delay tau
  Mat C;  // 4nx x 4nx, attack-side watermark delay tau'
  Mat G;  // 4nx x (2nx + 3ny)
};

DriveResponseSystem assemble_drive_response(const LtiPlant& plant,
                                            const KalmanGains& kg,
                                            const LqgGains& lg,
                                            const Mat& K_tau);

// Delay-free uplift of the drive-response dynamics: the state stacks the last
// tau_bar + 1 drive-response states and evolves under the random matrix
// A_{tau, tau'} (top block row = drive-response recursion, identity shifts
// below).
struct UpliftedSystem {
  DriveResponseSystem drs;
  DelayDistribution delays;        // real system, pmf p
  DelayDistribution attack_delays; // attack system, pmf p'
  Index block = 0;                 // 4 nx
  Mat G;                           // ambient x (2nx + 3ny); top block row only
  Mat A_bar;                       // sum_{tau,tau'} p_tau p'_tau' A_{tau,tau'}

  Index ambient_dim() const { return block * (delays.tau_bar + 1); }
  Mat A_of(int tau, int tau_prime) const;

  // y = A_{tau,tau'} x without materializing the matrix.
  void apply_A(int tau, int tau_prime, const Vec& x, Vec& y) const;
  // Y = A_{tau,tau'} X for panel X (ambient x k).
  void apply_A_left(int tau, int tau_prime, const Mat& X, Mat& Y) const;
  // Z = Y A_{tau,tau'}^T.
  void apply_A_right(int tau, int tau_prime, const Mat& Y, Mat& Z) const;
};

UpliftedSystem assemble_uplifted(const DriveResponseSystem& drs,
                                 const DelayDistribution& delays,
                                 const DelayDistribution& attack_delays);

}  // namespace delaymark
