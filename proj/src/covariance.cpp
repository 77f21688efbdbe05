#include "delaymark/covariance.hpp"

#include <sstream>

namespace delaymark {

NoiseMomentSet build_noise_moments(const LtiPlant& plant, const NoiseModel& noise,
                                   const DelayDistribution& delays,
                                   const DelayDistribution& attack_delays) {
  plant.validate();
  noise.validate(plant);
  NoiseMomentSet m;
  m.nx = plant.nx();
  m.ny = plant.ny();
  m.delays = delays;
  m.attack_delays = attack_delays;
  DelayDistribution::harmonize(m.delays, m.attack_delays);
  m.delays.validate();
  m.attack_delays.validate();
  m.sigma_v = noise.sigma_v;

  const Index nx = m.nx, ny = m.ny, dim = m.dim();
  const Mat sw = noise.sigma_w_eff(plant);

  m.Q.setZero(dim, dim);
  m.Q.block(0, 0, nx, nx) = sw;
  m.Q.block(nx, nx, nx, nx) = sw;
  auto voff = [nx, ny](int slot) { return 2 * nx + (slot - 2) * ny; };
  for (int s = 2; s <= 4; ++s)
    m.Q.block(voff(s), voff(s), ny, ny) = m.sigma_v;
  // the two delayed slots coincide exactly when the independent draws agree
  double coin = m.delays.coincidence_prob(m.attack_delays);
  m.Q.block(voff(3), voff(4), ny, ny) = coin * m.sigma_v;
  m.Q.block(voff(4), voff(3), ny, ny) = coin * m.sigma_v;

  m.S.setZero(dim, dim);
  m.S.block(voff(3), voff(2), ny, ny) = m.sigma_v;
  m.S.block(voff(4), voff(2), ny, ny) = m.sigma_v;
  return m;
}

Mat NoiseMomentSet::R_of(int l, int tau, int tau_prime) const {
  if (l < 1) throw std::invalid_argument("R_of: lag must be >= 1");
  const Index dim_ = dim();
  Mat R = Mat::Zero(dim_, dim_);
  auto voff = [this](int slot) { return 2 * nx + (slot - 2) * ny; };
  R.block(voff(3), voff(3), ny, ny) = delays.prob(l + tau) * sigma_v;
  R.block(voff(3), voff(4), ny, ny) = attack_delays.prob(l + tau) * sigma_v;
  R.block(voff(4), voff(3), ny, ny) = delays.prob(l + tau_prime) * sigma_v;
  R.block(voff(4), voff(4), ny, ny) = attack_delays.prob(l + tau_prime) * sigma_v;
  return R;
}

namespace {

// G E_rc G^T restricted to its only nonzero block (top-left, 4nx x 4nx).
Mat top_block_GEG(const DriveResponseSystem& drs, Index nx, Index ny,
                  int r, int c, const Mat& sigma_v) {
  auto voff = [nx, ny](int slot) { return 2 * nx + (slot - 2) * ny; };
  Mat Gr = drs.G.middleCols(voff(r), ny);
  Mat Gc = drs.G.middleCols(voff(c), ny);
  return Gr * sigma_v * Gc.transpose();
}

}  // namespace

Vec compute_omega(const UpliftedSystem& up, const NoiseMomentSet& moments) {
  if (moments.delays.tau_bar != up.delays.tau_bar)
    throw std::invalid_argument("compute_omega: moment set and uplift disagree on tau_bar");
  const Index amb = up.ambient_dim();
  const Index blk = up.block;
  const Index nx = moments.nx, ny = moments.ny;
  const int tb = up.delays.tau_bar;
  const auto& p = up.delays;
  const auto& pp = up.attack_delays;

  // first blk columns of Abar^k, k = 0..tau_bar-1
  std::vector<Mat> pow_panel(static_cast<size_t>(tb));
  pow_panel[0] = Mat::Zero(amb, blk);
  pow_panel[0].topRows(blk) = Mat::Identity(blk, blk);
  for (int k = 1; k < tb; ++k) pow_panel[static_cast<size_t>(k)] = up.A_bar * pow_panel[static_cast<size_t>(k - 1)];

  const Mat ge23 = top_block_GEG(up.drs, nx, ny, 2, 3, moments.sigma_v);
  const Mat ge24 = top_block_GEG(up.drs, nx, ny, 2, 4, moments.sigma_v);
  const Mat ge33 = top_block_GEG(up.drs, nx, ny, 3, 3, moments.sigma_v);
  const Mat ge34 = top_block_GEG(up.drs, nx, ny, 3, 4, moments.sigma_v);
  const Mat ge43 = top_block_GEG(up.drs, nx, ny, 4, 3, moments.sigma_v);
  const Mat ge44 = top_block_GEG(up.drs, nx, ny, 4, 4, moments.sigma_v);

  // Phi lives in the first blk columns only.
  Mat phi_panel = Mat::Zero(amb, blk);
  Mat F(amb, blk), AF(amb, blk);
  for (int tau = 1; tau <= tb; ++tau) {
    for (int tp = 1; tp <= tb; ++tp) {
      double w = p.prob(tau) * pp.prob(tp);
      if (w == 0.0) continue;
      F.noalias() = pow_panel[static_cast<size_t>(tau - 1)] * ge23;
      F.noalias() += pow_panel[static_cast<size_t>(tp - 1)] * ge24;
      for (int j = 1; j <= tb; ++j) {
        double w33 = p.prob(tau - j), w34 = p.prob(tp - j);
        double w43 = pp.prob(tau - j), w44 = pp.prob(tp - j);
        if (w33 == 0.0 && w34 == 0.0 && w43 == 0.0 && w44 == 0.0) continue;
        const Mat& Pj = pow_panel[static_cast<size_t>(j - 1)];
        if (w33 != 0.0) F.noalias() += Pj * (w33 * ge33);
        if (w34 != 0.0) F.noalias() += Pj * (w34 * ge34);
        if (w43 != 0.0) F.noalias() += Pj * (w43 * ge43);
        if (w44 != 0.0) F.noalias() += Pj * (w44 * ge44);
      }
      up.apply_A_left(tau, tp, F, AF);
      phi_panel += w * AF;
    }
  }

  Mat omega_mat = Mat::Zero(amb, amb);
  omega_mat.topLeftCorner(blk, blk) = up.drs.G * moments.Q * up.drs.G.transpose();
  omega_mat.leftCols(blk) += phi_panel;
  omega_mat.topRows(blk) += phi_panel.transpose();
  return vec(omega_mat);
}

CovarianceResult asymptotic_covariance(const UpliftedSystem& up,
                                       const NoiseMomentSet& moments,
                                       const SolverOptions& opts,
                                       Index ambient_cap) {
  const Index amb = up.ambient_dim();
  if (amb > ambient_cap) {
    std::ostringstream os;
    os << "asymptotic_covariance: ambient dimension " << amb << " exceeds the cap "
       << ambient_cap << "; reduce tau_bar or the state dimension";
    throw SolverError(os.str());
  }
  CovarianceResult out;
  out.omega = compute_omega(up, moments);

  const int tb = up.delays.tau_bar;
  Mat Y, Z;
  auto apply = [&](const Vec& v) -> Vec {
    Mat V = unvec(v, amb, amb);
    Mat acc = Mat::Zero(amb, amb);
    for (int tau = 1; tau <= tb; ++tau)
      for (int tp = 1; tp <= tb; ++tp) {
        double w = up.delays.prob(tau) * up.attack_delays.prob(tp);
        if (w == 0.0) continue;
        up.apply_A_left(tau, tp, V, Y);
        up.apply_A_right(tau, tp, Y, Z);
        acc += w * Z;
      }
    return vec(acc);
  };
  LiftedSolve sol = solve_lifted_fixed_point(apply, out.omega, opts);
  out.iterations = sol.iterations;
  out.residual = sol.residual;
  Mat C = unvec(sol.v, amb, amb);
  out.presym_asymmetry = (C - C.transpose()).cwiseAbs().maxCoeff();
  out.C = 0.5 * (C + C.transpose());
  return out;
}

ResidualProjections residual_projections(Index nx, int tau_bar) {
  ResidualProjections pr;
  const Index amb = 4 * nx * (tau_bar + 1);
  pr.P.setZero(nx, amb);
  pr.Q.setZero(nx, amb);
  pr.P.middleCols(3 * nx, nx) = Mat::Identity(nx, nx);   // xhat'
  pr.P.middleCols(nx, nx) = -Mat::Identity(nx, nx);      // -xhat
  pr.Q.middleCols(2 * nx, nx) = Mat::Identity(nx, nx);   // x'
  pr.Q.middleCols(3 * nx, nx) = -Mat::Identity(nx, nx);  // -xhat'
  return pr;
}

AttackStatisticBreakdown predicted_attack_statistic_breakdown(
    const CovarianceResult& cov, const ResidualProjections& proj,
    const KalmanGains& gains, const LtiPlant& plant, int T) {
  const Mat sr_inv = gains.sigma_r.ldlt().solve(
      Mat::Identity(gains.sigma_r.rows(), gains.sigma_r.cols()));
  const Mat W = plant.C.transpose() * sr_inv * plant.C;

  AttackStatisticBreakdown br;
  Mat qq = proj.Q * cov.C * proj.Q.transpose();
  Mat sigma_v = gains.sigma_r - plant.C * gains.P * plant.C.transpose();
  br.per_term_clean = ((plant.C * qq * plant.C.transpose() + sigma_v) * sr_inv).trace();
  Mat excess = proj.P * cov.C * proj.P.transpose() +
               2.0 * proj.P * cov.C * proj.Q.transpose();
  br.per_term_excess = (excess * W).trace();
  br.predicted_mean = T * static_cast<double>(plant.ny()) + T * br.per_term_excess;
  return br;
}

double predicted_attack_statistic(const CovarianceResult& cov,
                                  const ResidualProjections& proj,
                                  const KalmanGains& gains,
                                  const LtiPlant& plant, int T) {
  return predicted_attack_statistic_breakdown(cov, proj, gains, plant, T)
      .predicted_mean;
}

}  // namespace delaymark
