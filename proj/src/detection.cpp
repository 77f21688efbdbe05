#include "delaymark/detection.hpp"

#include <cmath>
#include <limits>

namespace delaymark {

namespace {

// regularized lower incomplete gamma P(a, x); series for x < a + 1,
// Lentz continued fraction for the complement otherwise
double gamma_p(double a, double x) {
  if (x < 0.0 || a <= 0.0) throw std::invalid_argument("gamma_p: bad arguments");
  if (x == 0.0) return 0.0;
  const double gln = std::lgamma(a);
  if (x < a + 1.0) {
    double ap = a, sum = 1.0 / a, del = sum;
    for (int n = 0; n < 500; ++n) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::abs(del) < std::abs(sum) * 1e-16) break;
    }
    return sum * std::exp(-x + a * std::log(x) - gln);
  }
  const double tiny = 1e-300;
  double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
  for (int i = 1; i < 500; ++i) {
    double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-16) break;
  }
  return 1.0 - std::exp(-x + a * std::log(x) - gln) * h;
}

}  // namespace

double chi2_cdf(double x, double dof) {
  if (dof <= 0.0) throw std::invalid_argument("chi2_cdf: dof must be positive");
  if (x <= 0.0) return 0.0;
  return gamma_p(0.5 * dof, 0.5 * x);
}

double chi2_quantile(double prob, double dof) {
  if (!(prob > 0.0 && prob < 1.0))
    throw std::invalid_argument("chi2_quantile: prob must be in (0,1)");
  double lo = 0.0;
  double hi = dof + 20.0 * std::sqrt(2.0 * dof) + 100.0;
  while (chi2_cdf(hi, dof) < prob) hi *= 2.0;
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    if (chi2_cdf(mid, dof) < prob)
      lo = mid;
    else
      hi = mid;
    if (hi - lo < 1e-12 * std::max(1.0, hi)) break;
  }
  return 0.5 * (lo + hi);
}

void DetectorConfig::validate() const {
  if (T < 1) throw std::invalid_argument("detector.T must be >= 1");
  if (psi <= 0.0) throw std::invalid_argument("detector.psi must be positive");
  if (stride < 1) throw std::invalid_argument("detector.stride must be >= 1");
}

DetectorReport chi2_series(const Trace& trace, const KalmanGains& gains,
                           const LtiPlant& plant, const DetectorConfig& cfg) {
  cfg.validate();
  const long len = trace.length();
  if (len < cfg.T + 1)
    throw std::invalid_argument("chi2_series: trace shorter than one window");

  Eigen::LDLT<Mat> sr(gains.sigma_r);
  if (sr.info() != Eigen::Success || !sr.isPositive())
    throw std::invalid_argument("chi2_series: sigma_r is not positive definite");

  // per-step whitened residual energy, then prefix sums
  Vec q(len);
  Mat resid = trace.y_obs - trace.xhat * plant.C.transpose();
  for (long t = 0; t < len; ++t) {
    Vec e = resid.row(t);
    q(t) = e.dot(sr.solve(e));
  }
  std::vector<double> prefix(static_cast<size_t>(len) + 1, 0.0);
  for (long t = 0; t < len; ++t)
    prefix[static_cast<size_t>(t) + 1] = prefix[static_cast<size_t>(t)] + q(t);

  DetectorReport rep;
  for (size_t t = 0; t < trace.attack_active.size(); ++t) {
    if (trace.attack_active[t]) {
      rep.attack_onset = static_cast<long>(t);
      break;
    }
  }

  double pre_sum = 0.0, post_sum = 0.0;
  long pre_n = 0, post_n = 0;
  for (long kappa = 0; kappa + cfg.T < len; kappa += cfg.stride) {
    double g = prefix[static_cast<size_t>(kappa + cfg.T) + 1] -
               prefix[static_cast<size_t>(kappa)];
    bool alarm = g > cfg.psi;
    rep.kappa.push_back(kappa);
    rep.g.push_back(g);
    rep.alarm.push_back(alarm ? 1 : 0);
    if (rep.attack_onset >= 0 && kappa >= rep.attack_onset) {
      post_sum += g;
      ++post_n;
      if (alarm && rep.first_alarm_post < 0) rep.first_alarm_post = kappa;
    } else if (rep.attack_onset < 0 || kappa + cfg.T < rep.attack_onset) {
      pre_sum += g;
      ++pre_n;
    }
  }
  rep.mean_pre_attack = pre_n > 0 ? pre_sum / pre_n : 0.0;
  rep.mean_post_attack =
      post_n > 0 ? post_sum / post_n : std::numeric_limits<double>::quiet_NaN();
  return rep;
}

double calibrate_threshold(int T, Index ny, double false_alarm_rate) {
  if (!(false_alarm_rate > 0.0 && false_alarm_rate < 1.0))
    throw std::invalid_argument("false_alarm_rate must be in (0,1)");
  return chi2_quantile(1.0 - false_alarm_rate,
                       static_cast<double>((T + 1) * ny));
}

RateCurve detection_rate_curve(const std::vector<DetectorReport>& reports) {
  if (reports.empty())
    throw std::invalid_argument("detection_rate_curve: empty ensemble");
  const auto& grid = reports.front().kappa;
  RateCurve curve;
  curve.kappa = grid;
  curve.rate.assign(grid.size(), 0.0);
  for (const auto& rep : reports) {
    if (rep.kappa != grid)
      throw std::invalid_argument("detection_rate_curve: mismatched kappa grids");
    for (size_t i = 0; i < grid.size(); ++i)
      curve.rate[i] += rep.alarm[i] ? 1.0 : 0.0;
  }
  for (auto& r : curve.rate) r /= static_cast<double>(reports.size());
  return curve;
}

double empirical_cost(const Trace& trace, const Mat& Q_s, const Mat& R,
                      long burn_in) {
  const long len = trace.length();
  if (burn_in < 0 || burn_in >= len)
    throw std::invalid_argument("empirical_cost: burn-in leaves no samples");
  double acc = 0.0;
  for (long t = burn_in; t < len; ++t) {
    Vec x = trace.x.row(t);
    Vec u = trace.u.row(t);
    acc += x.dot(Q_s * x) + u.dot(R * u);
  }
  return acc / static_cast<double>(len - burn_in);
}

double analytic_cost_penalty(const LqgGains& gains, const LtiPlant& plant,
                             const Mat& K_tau) {
  require_size(K_tau, plant.nu(), plant.nx(), "K_tau");
  Mat S = plant.B.transpose() * gains.delta * plant.B + gains.R;
  return (K_tau.transpose() * S * K_tau).trace();
}

double analytic_lqg_cost(const LtiPlant& plant, const NoiseModel& noise,
                         const SynthesisResult& gains) {
  const Index nx = plant.nx(), ny = plant.ny();
  AugmentedSystem aug = assemble_augmented(plant, gains.kalman, gains.lqg,
                                           Mat::Zero(plant.nu(), nx));
  Mat gamma0 = aug.Gamma.leftCols(nx + ny);  // the v_{t-tau} channel is zero
  Mat noise_cov = Mat::Zero(nx + ny, nx + ny);
  noise_cov.topLeftCorner(nx, nx) = noise.sigma_w_eff(plant);
  noise_cov.bottomRightCorner(ny, ny) = noise.sigma_v;
  Mat W = gamma0 * noise_cov * gamma0.transpose();
  Mat S = solve_discrete_lyapunov(aug.A.transpose(), W);

  Mat MC = gains.kalman.M * plant.C;
  Mat proj(nx, 2 * nx);
  proj << MC, Mat::Identity(nx, nx) - MC;
  Mat var_xupd = proj * S * proj.transpose() +
                 gains.kalman.M * noise.sigma_v * gains.kalman.M.transpose();
  double jx = (gains.lqg.Q * S.topLeftCorner(nx, nx)).trace();
  double ju = (gains.lqg.R * gains.lqg.K * var_xupd * gains.lqg.K.transpose()).trace();
  return jx + ju;
}

}  // namespace delaymark
