#include "delaymark/stability.hpp"

#include <cmath>

#include "delaymark/simulation.hpp"

namespace delaymark {

double matrix_norm(const Mat& M, MatrixNormKind kind) {
  switch (kind) {
    case MatrixNormKind::spectral:
      return spectral_norm(M);
    case MatrixNormKind::frobenius:
      return M.norm();
  }
  return 0.0;
}

StabilityCertificate theorem1_certificate(const AugmentedSystem& aug,
                                          MatrixNormKind norm) {
  return theorem1_certificate(aug, Mat::Identity(aug.A.rows(), aug.A.cols()), norm);
}

StabilityCertificate theorem1_certificate(const AugmentedSystem& aug,
                                          const Mat& C_lyap,
                                          MatrixNormKind norm) {
  require_square(aug.A, "augmented A");
  require_size(C_lyap, aug.A.rows(), aug.A.cols(), "C_lyap");
  if (!is_symmetric(C_lyap))
    throw std::invalid_argument("C_lyap must be symmetric");

  StabilityCertificate cert;
  cert.rho_A = spectral_radius(aug.A);
  if (cert.rho_A >= 1.0)
    throw SolverError("theorem1_certificate: closed-loop A is not Schur stable (rho = " +
                      std::to_string(cert.rho_A) + ")");

  Eigen::SelfAdjointEigenSolver<Mat> ec(C_lyap);
  cert.c = ec.eigenvalues().minCoeff();
  if (cert.c <= 0.0)
    throw std::invalid_argument("C_lyap must be positive definite");
  cert.C_lyap = C_lyap;

  cert.H = solve_discrete_lyapunov(aug.A, C_lyap);
  Eigen::SelfAdjointEigenSolver<Mat> eh(cert.H);
  cert.eta_min = eh.eigenvalues().minCoeff();
  cert.eta_max = eh.eigenvalues().maxCoeff();

  const double ahb = matrix_norm(aug.A.transpose() * cert.H * aug.B, norm);
  const double bhb = matrix_norm(aug.B.transpose() * cert.H * aug.B, norm);
  if (cert.c > ahb) {
    cert.alpha = std::abs(cert.eta_max - cert.c + ahb) / cert.eta_max;
  } else {
    cert.alpha = std::abs(cert.eta_min - cert.c + ahb) / cert.eta_min;
  }
  cert.beta = (ahb + bhb) / cert.eta_min;
  cert.passes = cert.alpha + cert.beta < 1.0;
  return cert;
}

RolloutReport mean_dynamics_rollout(const AugmentedSystem& aug,
                                    const std::vector<int>& delay_sequence,
                                    const Vec& x0, long horizon) {
  if (delay_sequence.empty())
    throw std::invalid_argument("mean_dynamics_rollout: empty delay sequence");
  if (x0.size() != aug.A.rows())
    throw std::invalid_argument("mean_dynamics_rollout: x0 dimension mismatch");

  RolloutReport rep;
  rep.sup_norms.reserve(static_cast<size_t>(horizon));
  std::vector<Vec> history;  // x_0 .. x_t
  history.reserve(static_cast<size_t>(horizon) + 1);
  history.push_back(x0);
  Vec x = x0;
  for (long t = 0; t < horizon; ++t) {
    rep.sup_norms.push_back(x.cwiseAbs().maxCoeff());
    int tau = delay_sequence[static_cast<size_t>(t) % delay_sequence.size()];
    long ts = t - tau;
    Vec delayed = ts >= 0 ? history[static_cast<size_t>(ts)]
                          : Vec::Zero(x.size());
    x = aug.A * x + aug.B * delayed;
    history.push_back(x);
  }

  // least-squares exponential fit over the tail half
  long lo = horizon / 2;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  long n = 0;
  for (long t = lo; t < horizon; ++t) {
    double v = rep.sup_norms[static_cast<size_t>(t)];
    if (v <= 0.0) continue;
    double lx = static_cast<double>(t), ly = std::log(v);
    sx += lx; sy += ly; sxx += lx * lx; sxy += lx * ly;
    ++n;
  }
  if (n >= 2) {
    double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    rep.fitted_rate = std::exp(slope);
  } else {
    rep.fitted_rate = 0.0;  // trajectory hit exact zero
  }
  return rep;
}

UpliftedSpectralReport uplifted_spectral_check(const UpliftedSystem& up,
                                               std::uint64_t seed,
                                               Index explicit_cap) {
  UpliftedSpectralReport rep;
  rep.rho_A_bar = spectral_radius(up.A_bar);

  const Index amb = up.ambient_dim();
  const int tb = up.delays.tau_bar;
  if (amb <= explicit_cap) {
    Mat A2 = Mat::Zero(amb * amb, amb * amb);
    for (int tau = 1; tau <= tb; ++tau)
      for (int tp = 1; tp <= tb; ++tp) {
        double w = up.delays.prob(tau) * up.attack_delays.prob(tp);
        if (w == 0.0) continue;
        Mat Am = up.A_of(tau, tp);
        A2 += w * kron(Am, Am);
      }
    rep.rho_A2 = spectral_radius(A2);
    rep.explicit_A2 = true;
  } else {
    // power iteration on V -> E[A V A^T] from a PSD start; the dominant
    // eigenvalue of the second-moment operator is real and nonnegative.
    Mat V = Mat::Identity(amb, amb);
    double lambda = 0.0;
    Mat Y, Z, next;
    for (int it = 0; it < 500; ++it) {
      next = Mat::Zero(amb, amb);
      for (int tau = 1; tau <= tb; ++tau)
        for (int tp = 1; tp <= tb; ++tp) {
          double w = up.delays.prob(tau) * up.attack_delays.prob(tp);
          if (w == 0.0) continue;
          up.apply_A_left(tau, tp, V, Y);
          up.apply_A_right(tau, tp, Y, Z);
          next += w * Z;
        }
      double nrm = next.norm();
      if (nrm == 0.0) { lambda = 0.0; break; }
      double prev = lambda;
      lambda = nrm / V.norm();
      V = next / nrm;
      if (it > 10 && std::abs(lambda - prev) < 1e-10 * std::max(1.0, lambda)) break;
    }
    rep.rho_A2 = lambda;
    rep.explicit_A2 = false;
  }

  // sampled transition products applied to random probes
  NormalStream delays_rng(seed, NoiseStream::delay);
  NormalStream attack_rng(seed, NoiseStream::attack_delay);
  NormalStream probe_rng(seed, NoiseStream::process);
  DelaySampler ds(up.delays), dsp(up.attack_delays);
  const int n_products = 50, length = 500, n_probes = 4;
  double worst = 0.0;
  for (int s = 0; s < n_products; ++s) {
    Mat probes(amb, n_probes);
    for (Index i = 0; i < amb; ++i)
      for (int j = 0; j < n_probes; ++j) probes(i, j) = probe_rng.next();
    Vec norms0 = probes.colwise().norm();
    Mat cur = probes, nxt;
    for (int t = 0; t < length; ++t) {
      int tau = ds.sample(delays_rng);
      int tp = dsp.sample(attack_rng);
      up.apply_A_left(tau, tp, cur, nxt);
      cur.swap(nxt);
    }
    for (int j = 0; j < n_probes; ++j)
      worst = std::max(worst, cur.col(j).norm() / norms0(j));
  }
  rep.worst_final_ratio = worst;
  rep.transition_decay = worst < 1e-6;
  return rep;
}

}  // namespace delaymark
