#include "delaymark/system.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace delaymark {

LtiPlant::LtiPlant(Mat A_, Mat B_, Mat C_)
    : A(std::move(A_)), B(std::move(B_)), C(std::move(C_)) {
  D = Mat::Identity(A.rows(), A.rows());
  validate();
}

LtiPlant::LtiPlant(Mat A_, Mat B_, Mat C_, Mat D_)
    : A(std::move(A_)), B(std::move(B_)), C(std::move(C_)), D(std::move(D_)) {
  validate();
}

void LtiPlant::validate() const {
  require_square(A, "plant.A");
  if (B.rows() != A.rows()) throw std::invalid_argument("plant.B rows must equal nx");
  if (C.cols() != A.rows()) throw std::invalid_argument("plant.C cols must equal nx");
  if (D.rows() != A.rows()) throw std::invalid_argument("plant.D rows must equal nx");
  if (!A.allFinite() || !B.allFinite() || !C.allFinite() || !D.allFinite())
    throw std::invalid_argument("plant matrices must be finite");
}

LtiPlant LtiPlant::three_tank() {
  Mat A(3, 3), B(3, 4);
  A << 0.96, 0, 0,
       0.04, 0.97, 0,
      -0.04, 0, 0.9;
  B << 8.8, -2.3, 0, 0,
       0.2, 2.2, 4.9, 0,
      -0.21, -2.2, 1.9, 21.0;
  return LtiPlant(A, B, Mat::Identity(3, 3));
}

Mat NoiseModel::sigma_w_eff(const LtiPlant& plant) const {
  return plant.D * sigma_w * plant.D.transpose();
}

void NoiseModel::validate(const LtiPlant& plant, bool require_pd_v) const {
  require_size(sigma_w, plant.nw(), plant.nw(), "noise.sigma_w");
  require_size(sigma_v, plant.ny(), plant.ny(), "noise.sigma_v");
  if (!is_symmetric(sigma_w) || !is_symmetric(sigma_v))
    throw std::invalid_argument("noise covariances must be symmetric");
  Eigen::SelfAdjointEigenSolver<Mat> ew(sigma_w), ev(sigma_v);
  if (ew.eigenvalues().minCoeff() < -1e-12)
    throw std::invalid_argument("sigma_w must be positive semidefinite");
  if (require_pd_v) {
    if (ev.eigenvalues().minCoeff() <= 0.0)
      throw std::invalid_argument("sigma_v must be positive definite");
  } else if (ev.eigenvalues().minCoeff() < -1e-12) {
    throw std::invalid_argument("sigma_v must be positive semidefinite");
  }
}

SynthesisResult synthesize(const LtiPlant& plant, const NoiseModel& noise,
                           const Mat& Q, const Mat& R,
                           const SolverOptions& opts) {
  plant.validate();
  noise.validate(plant);
  require_size(Q, plant.nx(), plant.nx(), "cost.Q");
  require_size(R, plant.nu(), plant.nu(), "cost.R");

  SynthesisResult out;
  Mat sw = noise.sigma_w_eff(plant);
  try {
    out.kalman.P = solve_filter_dare(plant.A, plant.C, sw, noise.sigma_v, opts);
  } catch (const SolverError& e) {
    throw SolverError(std::string("synthesize: filter DARE failed: ") + e.what());
  }
  out.kalman.sigma_r = plant.C * out.kalman.P * plant.C.transpose() + noise.sigma_v;
  out.kalman.M = out.kalman.P * plant.C.transpose() *
                 out.kalman.sigma_r.ldlt().solve(
                     Mat::Identity(plant.ny(), plant.ny()));
  out.kalman.L = plant.A * out.kalman.M;

  try {
    out.lqg.delta = solve_control_dare(plant.A, plant.B, Q, R, opts);
  } catch (const SolverError& e) {
    throw SolverError(std::string("synthesize: control DARE failed: ") + e.what());
  }
  Mat S = R + plant.B.transpose() * out.lqg.delta * plant.B;
  out.lqg.K = S.ldlt().solve(plant.B.transpose() * out.lqg.delta * plant.A);
  out.lqg.Q = Q;
  out.lqg.R = R;
  return out;
}

void DelayDistribution::validate() const {
  if (tau_bar < 1) throw std::invalid_argument("delay distribution: tau_bar must be >= 1");
  if (pmf.size() != static_cast<size_t>(tau_bar))
    throw std::invalid_argument("delay distribution: pmf length must equal tau_bar");
  double sum = 0.0;
  for (double p : pmf) {
    if (p < 0.0) throw std::invalid_argument("delay distribution: negative probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-12)
    throw std::invalid_argument("delay distribution: probabilities must sum to 1");
}

double DelayDistribution::coincidence_prob(const DelayDistribution& other) const {
  double s = 0.0;
  int upto = std::min(tau_bar, other.tau_bar);
  for (int tau = 1; tau <= upto; ++tau) s += prob(tau) * other.prob(tau);
  return s;
}

DelayDistribution DelayDistribution::uniform(int lo, int hi) {
  if (lo < 1 || hi < lo) throw std::invalid_argument("uniform delay range invalid");
  DelayDistribution d;
  d.tau_bar = hi;
  d.pmf.assign(static_cast<size_t>(hi), 0.0);
  double p = 1.0 / (hi - lo + 1);
  for (int tau = lo; tau <= hi; ++tau) d.pmf[static_cast<size_t>(tau - 1)] = p;
  return d;
}

DelayDistribution DelayDistribution::point_mass(int tau) {
  if (tau < 1) throw std::invalid_argument("point mass delay must be >= 1");
  DelayDistribution d;
  d.tau_bar = tau;
  d.pmf.assign(static_cast<size_t>(tau), 0.0);
  d.pmf.back() = 1.0;
  return d;
}

void DelayDistribution::harmonize(DelayDistribution& a, DelayDistribution& b) {
  int tb = std::max(a.tau_bar, b.tau_bar);
  a.pmf.resize(static_cast<size_t>(tb), 0.0);
  b.pmf.resize(static_cast<size_t>(tb), 0.0);
  a.tau_bar = b.tau_bar = tb;
}

WatermarkConfig WatermarkConfig::off() { return {}; }

WatermarkConfig WatermarkConfig::delay_feedback(Mat K_tau, DelayDistribution delays) {
  WatermarkConfig w;
  w.kind = Kind::delay_feedback;
  w.K_tau = std::move(K_tau);
  w.delays = std::move(delays);
  return w;
}

WatermarkConfig WatermarkConfig::gaussian(Mat sigma_gw) {
  WatermarkConfig w;
  w.kind = Kind::gaussian_additive;
  w.sigma_gw = std::move(sigma_gw);
  return w;
}

void WatermarkConfig::validate(const LtiPlant& plant) const {
  switch (kind) {
    case Kind::none:
      break;
    case Kind::delay_feedback:
      require_size(K_tau, plant.nu(), plant.nx(), "watermark.K_tau");
      delays.validate();
      break;
    case Kind::gaussian_additive: {
      require_size(sigma_gw, plant.nu(), plant.nu(), "watermark.sigma_gw");
      if (!is_symmetric(sigma_gw))
        throw std::invalid_argument("watermark.sigma_gw must be symmetric");
      Eigen::SelfAdjointEigenSolver<Mat> es(sigma_gw);
      if (es.eigenvalues().minCoeff() < -1e-12)
        throw std::invalid_argument("watermark.sigma_gw must be PSD");
      break;
    }
  }
}

AugmentedSystem assemble_augmented(const LtiPlant& plant, const KalmanGains& kg,
                                   const LqgGains& lg, const Mat& K_tau) {
  const Index nx = plant.nx(), ny = plant.ny();
  require_size(K_tau, plant.nu(), nx, "K_tau");
  const Mat& A = plant.A;
  const Mat& B = plant.B;
  const Mat& C = plant.C;
  const Mat I = Mat::Identity(nx, nx);
  const Mat MC = kg.M * C;

  Mat BKM = B * lg.K * kg.M;
  Mat BKMC = B * lg.K * MC;
  Mat BKI = B * lg.K * (I - MC);
  Mat BTM = B * K_tau * kg.M;
  Mat BTMC = B * K_tau * MC;
  Mat BTI = B * K_tau * (I - MC);
  Mat LC = kg.L * C;

  AugmentedSystem s;
  s.A.setZero(2 * nx, 2 * nx);
  s.A.topLeftCorner(nx, nx) = A - BKMC;
  s.A.topRightCorner(nx, nx) = -BKI;
  s.A.bottomLeftCorner(nx, nx) = LC - BKMC;
  s.A.bottomRightCorner(nx, nx) = A - LC - BKI;

  s.B.setZero(2 * nx, 2 * nx);
  s.B.topLeftCorner(nx, nx) = -BTMC;
  s.B.topRightCorner(nx, nx) = -BTI;
  s.B.bottomLeftCorner(nx, nx) = -BTMC;
  s.B.bottomRightCorner(nx, nx) = -BTI;

  s.Gamma.setZero(2 * nx, nx + 2 * ny);
  s.Gamma.block(0, 0, nx, nx) = I;
  s.Gamma.block(0, nx, nx, ny) = -BKM;
  s.Gamma.block(0, nx + ny, nx, ny) = -BTM;
  s.Gamma.block(nx, nx, nx, ny) = kg.L - BKM;
  s.Gamma.block(nx, nx + ny, nx, ny) = -BTM;
  return s;
}

DriveResponseSystem assemble_drive_response(const LtiPlant& plant,
                                            const KalmanGains& kg,
                                            const LqgGains& lg,
                                            const Mat& K_tau) {
  const Index nx = plant.nx(), ny = plant.ny();
  require_size(K_tau, plant.nu(), nx, "K_tau");
  const Mat& A = plant.A;
  const Mat& B = plant.B;
  const Mat& C = plant.C;
  const Mat I = Mat::Identity(nx, nx);
  const Mat MC = kg.M * C;

  Mat BKM = B * lg.K * kg.M;
  Mat BKMC = B * lg.K * MC;
  Mat BKI = B * lg.K * (I - MC);
  Mat BTM = B * K_tau * kg.M;
  Mat BTMC = B * K_tau * MC;
  Mat BTI = B * K_tau * (I - MC);
  Mat LC = kg.L * C;

  auto blk = [nx](Mat& M, int r, int c) {
    return M.block(r * nx, c * nx, nx, nx);
  };

  DriveResponseSystem s;
  // State order (x, xhat, x', xhat'). The real half innovates on y' and its
  // control law picks up the attacker's x', v' through the measurement path.
  s.A.setZero(4 * nx, 4 * nx);
  blk(s.A, 0, 0) = A;
  blk(s.A, 0, 1) = -BKI;
  blk(s.A, 0, 2) = -BKMC;
  blk(s.A, 1, 1) = A - LC - BKI;
  blk(s.A, 1, 2) = LC - BKMC;
  blk(s.A, 2, 2) = A - BKMC;
  blk(s.A, 2, 3) = -BKI;
  blk(s.A, 3, 2) = LC - BKMC;
  blk(s.A, 3, 3) = A - LC - BKI;

  s.B.setZero(4 * nx, 4 * nx);  // real watermark, delayed by tau
  blk(s.B, 0, 1) = -BTI;
  blk(s.B, 0, 2) = -BTMC;
  blk(s.B, 1, 1) = -BTI;
  blk(s.B, 1, 2) = -BTMC;

  s.C.setZero(4 * nx, 4 * nx);  // attack watermark, delayed by tau'
  blk(s.C, 2, 2) = -BTMC;
  blk(s.C, 2, 3) = -BTI;
  blk(s.C, 3, 2) = -BTMC;
  blk(s.C, 3, 3) = -BTI;

  s.G.setZero(4 * nx, 2 * nx + 3 * ny);
  s.G.block(0, 0, nx, nx) = I;                       // w -> x
  s.G.block(2 * nx, nx, nx, nx) = I;                 // w' -> x'
  s.G.block(0, 2 * nx, nx, ny) = -BKM;               // v' through control
  s.G.block(nx, 2 * nx, nx, ny) = kg.L - BKM;        // v' through filter
  s.G.block(2 * nx, 2 * nx, nx, ny) = -BKM;
  s.G.block(3 * nx, 2 * nx, nx, ny) = kg.L - BKM;
  s.G.block(0, 2 * nx + ny, nx, ny) = -BTM;          // v'_{t-tau}, real watermark
  s.G.block(nx, 2 * nx + ny, nx, ny) = -BTM;
  s.G.block(2 * nx, 2 * nx + 2 * ny, nx, ny) = -BTM; // v'_{t-tau'}, attack watermark
  s.G.block(3 * nx, 2 * nx + 2 * ny, nx, ny) = -BTM;
  return s;
}

UpliftedSystem assemble_uplifted(const DriveResponseSystem& drs,
                                 const DelayDistribution& delays,
                                 const DelayDistribution& attack_delays) {
  UpliftedSystem up;
  up.drs = drs;
  up.delays = delays;
  up.attack_delays = attack_delays;
  DelayDistribution::harmonize(up.delays, up.attack_delays);
  up.delays.validate();
  up.attack_delays.validate();
  up.block = drs.A.rows();

  const Index amb = up.ambient_dim();
  up.G.setZero(amb, drs.G.cols());
  up.G.topRows(up.block) = drs.G;

  up.A_bar.setZero(amb, amb);
  const int tb = up.delays.tau_bar;
  for (int tau = 1; tau <= tb; ++tau)
    for (int tp = 1; tp <= tb; ++tp) {
      double w = up.delays.prob(tau) * up.attack_delays.prob(tp);
      if (w == 0.0) continue;
      up.A_bar.topRows(up.block).middleCols(0, up.block) += w * drs.A;
      up.A_bar.topRows(up.block).middleCols(tau * up.block, up.block) += w * drs.B;
      up.A_bar.topRows(up.block).middleCols(tp * up.block, up.block) += w * drs.C;
    }
  for (int k = 0; k < tb; ++k)
    up.A_bar.block((k + 1) * up.block, k * up.block, up.block, up.block) =
        Mat::Identity(up.block, up.block);
  return up;
}

Mat UpliftedSystem::A_of(int tau, int tau_prime) const {
  const int tb = delays.tau_bar;
  if (tau < 1 || tau > tb || tau_prime < 1 || tau_prime > tb)
    throw std::invalid_argument("A_of: delay outside {1..tau_bar}");
  const Index amb = ambient_dim();
  Mat A = Mat::Zero(amb, amb);
  A.topRows(block).middleCols(0, block) = drs.A;
  A.topRows(block).middleCols(tau * block, block) += drs.B;
  A.topRows(block).middleCols(tau_prime * block, block) += drs.C;
  for (int k = 0; k < tb; ++k)
    A.block((k + 1) * block, k * block, block, block) = Mat::Identity(block, block);
  return A;
}

void UpliftedSystem::apply_A(int tau, int tau_prime, const Vec& x, Vec& y) const {
  const Index amb = ambient_dim();
  y.resize(amb);
  y.head(block) = drs.A * x.head(block) +
                  drs.B * x.segment(tau * block, block) +
                  drs.C * x.segment(tau_prime * block, block);
  y.tail(amb - block) = x.head(amb - block);
}

void UpliftedSystem::apply_A_left(int tau, int tau_prime, const Mat& X, Mat& Y) const {
  const Index amb = ambient_dim();
  Y.resize(amb, X.cols());
  Y.topRows(block) = drs.A * X.topRows(block) +
                     drs.B * X.middleRows(tau * block, block) +
                     drs.C * X.middleRows(tau_prime * block, block);
  Y.bottomRows(amb - block) = X.topRows(amb - block);
}

void UpliftedSystem::apply_A_right(int tau, int tau_prime, const Mat& Y, Mat& Z) const {
  const Index amb = ambient_dim();
  Z.resize(Y.rows(), amb);
  Z.leftCols(block) = Y.leftCols(block) * drs.A.transpose() +
                      Y.middleCols(tau * block, block) * drs.B.transpose() +
                      Y.middleCols(tau_prime * block, block) * drs.C.transpose();
  Z.rightCols(amb - block) = Y.leftCols(amb - block);
}

}  // namespace delaymark
