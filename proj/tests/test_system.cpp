#include <doctest.h>

#include "delaymark/simulation.hpp"
#include "test_util.hpp"

using namespace delaymark;
using namespace delaymark::testing;

TEST_CASE("synthesize: scalar closed forms") {
  RandomInstance inst = scalar_instance();
  const double z = kScalarDareRoot;
  CHECK(inst.gains.kalman.P(0, 0) == doctest::Approx(z).epsilon(1e-12));
  CHECK(inst.gains.lqg.delta(0, 0) == doctest::Approx(z).epsilon(1e-12));
  CHECK(inst.gains.lqg.K(0, 0) == doctest::Approx(0.5 * z / (1.0 + z)).epsilon(1e-12));
  CHECK(inst.gains.kalman.M(0, 0) == doctest::Approx(z / (z + 1.0)).epsilon(1e-12));
  CHECK(inst.gains.kalman.L(0, 0) ==
        doctest::Approx(0.5 * z / (z + 1.0)).epsilon(1e-12));
}

namespace {

void check_gain_identities(const LtiPlant& plant, const NoiseModel& noise,
                           const SynthesisResult& g, double tol) {
  CHECK((g.kalman.L - plant.A * g.kalman.M).cwiseAbs().maxCoeff() < tol);
  Mat sr = plant.C * g.kalman.P * plant.C.transpose() + noise.sigma_v;
  CHECK((g.kalman.sigma_r - sr).cwiseAbs().maxCoeff() < tol);
  CHECK((g.kalman.M - g.kalman.P * plant.C.transpose() * sr.inverse())
            .cwiseAbs()
            .maxCoeff() < tol);
  Mat S = g.lqg.R + plant.B.transpose() * g.lqg.delta * plant.B;
  CHECK((g.lqg.K - S.inverse() * plant.B.transpose() * g.lqg.delta * plant.A)
            .cwiseAbs()
            .maxCoeff() < tol);
  CHECK(is_symmetric(g.kalman.P, 1e-10));
  CHECK(is_symmetric(g.lqg.delta, 1e-10));
  Eigen::SelfAdjointEigenSolver<Mat> es(g.kalman.sigma_r);
  CHECK(es.eigenvalues().minCoeff() > 0.0);
}

}  // namespace

TEST_CASE("synthesize: gain identities hold on the three-tank plant") {
  LtiPlant plant = LtiPlant::three_tank();
  NoiseModel noise{0.5 * Mat::Identity(3, 3), 0.1 * Mat::Identity(3, 3)};
  Vec qd(3);
  qd << 0.3, 0.3, 2.4;
  SynthesisResult g = synthesize(plant, noise, qd.asDiagonal(), Mat::Identity(4, 4));
  check_gain_identities(plant, noise, g, 1e-9);
  // frozen reference (independent Schur-based solver)
  CHECK(g.kalman.P(0, 0) == doctest::Approx(0.578577996195023).epsilon(1e-9));
  CHECK(g.lqg.delta(2, 2) == doctest::Approx(2.4018034524160137).epsilon(1e-9));
}

TEST_CASE("synthesize: zero actuator column keeps the gain identity") {
  std::mt19937_64 rng(41);
  Mat A = random_stable(rng, 3, 0.7);
  Mat B = random_matrix(rng, 3, 3);
  B.col(1).setZero();
  LtiPlant plant(A, B, Mat::Identity(3, 3));
  NoiseModel noise{Mat::Identity(3, 3), Mat::Identity(3, 3)};
  SynthesisResult g = synthesize(plant, noise, Mat::Identity(3, 3), Mat::Identity(3, 3));
  check_gain_identities(plant, noise, g, 1e-9);
}

TEST_CASE("synthesize reports which equation failed") {
  LtiPlant plant((Mat(1, 1) << 1.5).finished(), (Mat(1, 1) << 1.0).finished(),
                 (Mat(1, 1) << 0.0).finished());
  NoiseModel noise{Mat::Identity(1, 1), Mat::Identity(1, 1)};
  SolverOptions opts;
  opts.max_iterations = 5000;
  try {
    synthesize(plant, noise, Mat::Identity(1, 1), Mat::Identity(1, 1), opts);
    FAIL("expected SolverError");
  } catch (const SolverError& e) {
    CHECK(std::string(e.what()).find("filter DARE") != std::string::npos);
  }
}

TEST_CASE("augmented blocks: watermark off reduces to the LQG loop") {
  RandomInstance inst = random_instance(101, 3, 2, 2);
  const auto& p = inst.plant;
  const auto& kg = inst.gains.kalman;
  const auto& lg = inst.gains.lqg;
  AugmentedSystem aug = assemble_augmented(p, kg, lg, Mat::Zero(2, 3));
  CHECK(aug.B.cwiseAbs().maxCoeff() == 0.0);

  Mat MC = kg.M * p.C;
  Mat expect(6, 6);
  expect << p.A - p.B * lg.K * MC, -p.B * lg.K * (Mat::Identity(3, 3) - MC),
      kg.L * p.C - p.B * lg.K * MC,
      p.A - kg.L * p.C - p.B * lg.K * (Mat::Identity(3, 3) - MC);
  CHECK((aug.A - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("augmented blocks: open loop is block diagonal") {
  RandomInstance inst = random_instance(102, 2, 2, 2);
  KalmanGains kg;
  kg.P = Mat::Zero(2, 2);
  kg.L = Mat::Zero(2, 2);
  kg.M = Mat::Zero(2, 2);
  kg.sigma_r = Mat::Identity(2, 2);
  LqgGains lg;
  lg.K = Mat::Zero(2, 2);
  lg.delta = Mat::Zero(2, 2);
  lg.Q = Mat::Zero(2, 2);
  lg.R = Mat::Identity(2, 2);
  AugmentedSystem aug = assemble_augmented(inst.plant, kg, lg, Mat::Zero(2, 2));
  Mat expect = Mat::Zero(4, 4);
  expect.topLeftCorner(2, 2) = inst.plant.A;
  expect.bottomRightCorner(2, 2) = inst.plant.A;
  CHECK((aug.A - expect).cwiseAbs().maxCoeff() == 0.0);
  CHECK(aug.B.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("drive-response blocks: delay off recovers the replay closed loop") {
  RandomInstance inst = random_instance(103, 2, 1, 2);
  DriveResponseSystem drs = assemble_drive_response(
      inst.plant, inst.gains.kalman, inst.gains.lqg, Mat::Zero(1, 2));
  CHECK(drs.B.cwiseAbs().maxCoeff() == 0.0);
  CHECK(drs.C.cwiseAbs().maxCoeff() == 0.0);
  // delayed-noise columns vanish with the delay gain
  CHECK(drs.G.rightCols(4).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("drive-response blocks: decoupling structure") {
  // Re-pointing the real filter from y' to y must decouple the halves: the
  // (real rows, attack columns) blocks are exactly the couplings introduced
  // through the measurement path.
  RandomInstance inst = random_instance(104, 2, 2, 2);
  Mat K_tau = 0.1 * Mat::Identity(2, 2);
  DriveResponseSystem drs = assemble_drive_response(inst.plant, inst.gains.kalman,
                                                    inst.gains.lqg, K_tau);
  AugmentedSystem aug = assemble_augmented(inst.plant, inst.gains.kalman,
                                           inst.gains.lqg, K_tau);
  const Index nx = 2;
  // attack half evolves exactly as a nominal closed loop
  CHECK((drs.A.block(2 * nx, 2 * nx, 2 * nx, 2 * nx) - aug.A).cwiseAbs().maxCoeff() <
        1e-12);
  CHECK((drs.C.block(2 * nx, 2 * nx, 2 * nx, 2 * nx) - aug.B).cwiseAbs().maxCoeff() <
        1e-12);
  // moving the coupling columns (x', v') back onto (x, v) reproduces the
  // nominal loop on the real half as well
  Mat real_self = drs.A.topLeftCorner(2 * nx, 2 * nx);
  Mat real_cross = drs.A.block(0, 2 * nx, 2 * nx, 2 * nx);
  Mat recoupled = real_self;
  recoupled.leftCols(nx) += real_cross.leftCols(nx);  // x' column onto x
  CHECK((recoupled - aug.A).cwiseAbs().maxCoeff() < 1e-12);
  Mat breal = drs.B.topLeftCorner(2 * nx, 2 * nx);
  Mat bcross = drs.B.block(0, 2 * nx, 2 * nx, 2 * nx);
  Mat brecoupled = breal;
  brecoupled.leftCols(nx) += bcross.leftCols(nx);
  CHECK((brecoupled - aug.B).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("uplift: point-mass delay collapses to a constant matrix") {
  RandomInstance inst = random_instance(105, 1, 1, 1);
  DriveResponseSystem drs = assemble_drive_response(
      inst.plant, inst.gains.kalman, inst.gains.lqg, 0.2 * Mat::Identity(1, 1));
  UpliftedSystem up =
      assemble_uplifted(drs, DelayDistribution::point_mass(1),
                        DelayDistribution::point_mass(1));
  CHECK((up.A_of(1, 1) - up.A_bar).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("uplift: row-sum action on a stacked constant vector") {
  RandomInstance inst = random_instance(106, 2, 2, 2);
  DriveResponseSystem drs = assemble_drive_response(
      inst.plant, inst.gains.kalman, inst.gains.lqg, 0.15 * Mat::Identity(2, 2));
  DelayDistribution d;
  d.tau_bar = 3;
  d.pmf = {0.2, 0.5, 0.3};
  UpliftedSystem up = assemble_uplifted(drs, d, d);
  std::mt19937_64 rng(55);
  Vec v = random_matrix(rng, 8, 1);
  Vec stacked(up.ambient_dim());
  for (int k = 0; k <= 3; ++k) stacked.segment(8 * k, 8) = v;
  Mat S = drs.A + drs.B + drs.C;
  for (int tau = 1; tau <= 3; ++tau)
    for (int tp = 1; tp <= 3; ++tp) {
      Vec y;
      up.apply_A(tau, tp, stacked, y);
      CHECK((y.head(8) - S * v).cwiseAbs().maxCoeff() < 1e-12);
      for (int k = 1; k <= 3; ++k)
        CHECK((y.segment(8 * k, 8) - v).cwiseAbs().maxCoeff() == 0.0);
      CHECK((up.A_of(tau, tp) * stacked - y).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("uplift: A_bar equals the sampled average") {
  RandomInstance inst = random_instance(107, 1, 1, 1);
  DriveResponseSystem drs = assemble_drive_response(
      inst.plant, inst.gains.kalman, inst.gains.lqg, 0.3 * Mat::Identity(1, 1));
  DelayDistribution d;
  d.tau_bar = 2;
  d.pmf = {0.35, 0.65};
  UpliftedSystem up = assemble_uplifted(drs, d, d);

  NormalStream s1(99, NoiseStream::delay), s2(99, NoiseStream::attack_delay);
  DelaySampler ds(d);
  Mat avg = Mat::Zero(up.ambient_dim(), up.ambient_dim());
  const int n = 100000;
  for (int i = 0; i < n; ++i) avg += up.A_of(ds.sample(s1), ds.sample(s2));
  avg /= n;
  // Bernoulli standard error on each structural entry is ~0.0015 * |block|
  CHECK((avg - up.A_bar).cwiseAbs().maxCoeff() <
        5e-3 * std::max(1.0, up.A_bar.cwiseAbs().maxCoeff()));
}
