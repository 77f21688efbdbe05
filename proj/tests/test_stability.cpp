#include <doctest.h>

#include "delaymark/stability.hpp"
#include "test_util.hpp"

using namespace delaymark;
using namespace delaymark::testing;

namespace {

AugmentedSystem toy_aug(double a, double b) {
  AugmentedSystem aug;
  aug.A = (Mat(1, 1) << a).finished();
  aug.B = (Mat(1, 1) << b).finished();
  aug.Gamma = Mat::Zero(1, 1);
  return aug;
}

}  // namespace

TEST_CASE("certificate: scalar arithmetic oracle") {
  StabilityCertificate cert = theorem1_certificate(toy_aug(0.5, 0.0));
  CHECK(cert.H(0, 0) == doctest::Approx(4.0 / 3.0).epsilon(1e-12));
  CHECK(cert.c == doctest::Approx(1.0));
  CHECK(cert.alpha == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(cert.beta == doctest::Approx(0.0));
  CHECK(cert.passes);
}

TEST_CASE("certificate: beta shrinks with the watermark gain") {
  double prev = 1e300;
  for (double s : {1.0, 0.5, 0.25, 0.1, 0.01}) {
    StabilityCertificate cert = theorem1_certificate(toy_aug(0.5, 0.3 * s));
    CHECK(cert.beta < prev);
    prev = cert.beta;
  }
  CHECK(theorem1_certificate(toy_aug(0.5, 0.0)).beta == 0.0);
}

TEST_CASE("certificate refuses an unstable loop and a bad C_lyap") {
  CHECK_THROWS_AS(theorem1_certificate(toy_aug(1.01, 0.0)), SolverError);
  AugmentedSystem aug = toy_aug(0.5, 0.0);
  CHECK_THROWS_AS(theorem1_certificate(aug, (Mat(1, 1) << -1.0).finished()),
                  std::invalid_argument);
}

TEST_CASE("certificate invariant under orthonormal re-coordinates") {
  RandomInstance inst = random_instance(301, 2, 2, 2);
  Mat K_tau = 0.05 * Mat::Identity(2, 2);
  AugmentedSystem aug = assemble_augmented(inst.plant, inst.gains.kalman,
                                           inst.gains.lqg, K_tau);
  std::mt19937_64 rng(302);
  Mat raw = random_matrix(rng, 4, 4);
  Eigen::HouseholderQR<Mat> qr(raw);
  Mat U = qr.householderQ();
  AugmentedSystem rot;
  rot.A = U.transpose() * aug.A * U;
  rot.B = U.transpose() * aug.B * U;
  rot.Gamma = aug.Gamma;
  std::mt19937_64 rng2(303);
  Mat C_lyap = random_spd(rng2, 4, 0.5);
  StabilityCertificate c1 = theorem1_certificate(aug, C_lyap);
  StabilityCertificate c2 = theorem1_certificate(rot, U.transpose() * C_lyap * U);
  CHECK(c1.alpha == doctest::Approx(c2.alpha).epsilon(1e-8));
  CHECK(c1.beta == doctest::Approx(c2.beta).epsilon(1e-8));
}

TEST_CASE("three-tank benchmark gain is certified stable") {
  LtiPlant plant = LtiPlant::three_tank();
  NoiseModel noise{0.5 * Mat::Identity(3, 3), 0.1 * Mat::Identity(3, 3)};
  Vec qd(3);
  qd << 0.3, 0.3, 2.4;
  SynthesisResult g = synthesize(plant, noise, qd.asDiagonal(), Mat::Identity(4, 4));
  Mat k_tau = Mat::Zero(4, 3);
  k_tau.topLeftCorner(3, 3) = 0.0713 * Mat::Identity(3, 3);
  AugmentedSystem aug = assemble_augmented(plant, g.kalman, g.lqg, k_tau);
  StabilityCertificate cert = theorem1_certificate(aug);
  CHECK(cert.passes);
  CHECK(cert.alpha + cert.beta == doctest::Approx(0.963755).epsilon(1e-4));
}

TEST_CASE("rollout: zero start stays zero; pure-A decay matches rho") {
  AugmentedSystem aug;
  aug.A = (Mat(2, 2) << 0.9, 0.0, 0.0, 0.5).finished();
  aug.B = Mat::Zero(2, 2);
  aug.Gamma = Mat::Zero(2, 2);

  RolloutReport zero = mean_dynamics_rollout(aug, {1, 2, 3}, Vec::Zero(2), 100);
  for (double v : zero.sup_norms) CHECK(v == 0.0);

  RolloutReport rep = mean_dynamics_rollout(aug, {2}, Vec::Ones(2), 400);
  CHECK(rep.fitted_rate == doctest::Approx(0.9).epsilon(1e-2));
}

TEST_CASE("rollout decays on certificate-passing instances") {
  // worst-of-sampled adversarial delays on a passing instance
  RandomInstance inst = random_instance(304, 2, 2, 2, 0.6);
  for (double s = 0.2; s >= 0.0; s -= 0.05) {
    Mat K_tau = s * Mat::Identity(2, 2);
    AugmentedSystem aug = assemble_augmented(inst.plant, inst.gains.kalman,
                                             inst.gains.lqg, K_tau);
    StabilityCertificate cert = theorem1_certificate(aug);
    if (!cert.passes) continue;
    std::mt19937_64 rng(305);
    std::uniform_int_distribution<int> pick(1, 6);
    double worst_rate = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<int> seq(64);
      for (auto& d : seq) d = pick(rng);
      RolloutReport rep = mean_dynamics_rollout(aug, seq, Vec::Ones(4), 600);
      worst_rate = std::max(worst_rate, rep.fitted_rate);
    }
    CHECK(worst_rate < 1.0);
    return;  // one passing instance suffices here; the acceptance suite does 50
  }
  FAIL("no certificate-passing gain found for the test instance");
}

TEST_CASE("uplifted check: watermark off, tau_bar 1, Kronecker identity") {
  RandomInstance inst = random_instance(306, 1, 1, 1);
  DriveResponseSystem drs = assemble_drive_response(
      inst.plant, inst.gains.kalman, inst.gains.lqg, Mat::Zero(1, 1));
  UpliftedSystem up = assemble_uplifted(drs, DelayDistribution::point_mass(1),
                                        DelayDistribution::point_mass(1));
  UpliftedSpectralReport rep = uplifted_spectral_check(up);
  double rho_a = spectral_radius(up.A_of(1, 1));
  CHECK(rep.rho_A2 == doctest::Approx(rho_a * rho_a).epsilon(1e-9));
  CHECK(rep.transition_decay);
}

TEST_CASE("uplifted check: scalar unstable block") {
  DriveResponseSystem drs;
  drs.A = (Mat(1, 1) << 1.1).finished();
  drs.B = Mat::Zero(1, 1);
  drs.C = Mat::Zero(1, 1);
  drs.G = Mat::Ones(1, 5);
  UpliftedSystem up = assemble_uplifted(drs, DelayDistribution::point_mass(1),
                                        DelayDistribution::point_mass(1));
  UpliftedSpectralReport rep = uplifted_spectral_check(up);
  CHECK(rep.rho_A2 == doctest::Approx(1.21).epsilon(1e-9));
  CHECK_FALSE(rep.transition_decay);
}

TEST_CASE("uplifted check: explicit operator agrees with power iteration") {
  RandomInstance inst = random_instance(307, 1, 1, 1);
  DriveResponseSystem drs = assemble_drive_response(
      inst.plant, inst.gains.kalman, inst.gains.lqg, 0.15 * Mat::Identity(1, 1));
  DelayDistribution d;
  d.tau_bar = 2;
  d.pmf = {0.4, 0.6};
  UpliftedSystem up = assemble_uplifted(drs, d, d);
  UpliftedSpectralReport explicit_rep = uplifted_spectral_check(up, 1, 20);
  UpliftedSpectralReport power_rep = uplifted_spectral_check(up, 1, 4);
  CHECK(explicit_rep.explicit_A2);
  CHECK_FALSE(power_rep.explicit_A2);
  CHECK(explicit_rep.rho_A2 == doctest::Approx(power_rep.rho_A2).epsilon(1e-6));
}
