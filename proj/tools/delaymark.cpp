// delaymark: time-delayed state-feedback watermarking toolkit.
// Subcommands: synthesize | simulate | attack | bench | analyze | reproduce-paper.

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "delaymark/bench.hpp"
#include "delaymark/covariance.hpp"
#include "delaymark/stability.hpp"

namespace fs = std::filesystem;
using namespace delaymark;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed_override;
  std::optional<int> runs_override;
  bool require_stable = false;
};

ExperimentConfig load_config(const CommonArgs& args) {
  ExperimentConfig cfg = args.config_path.empty()
                             ? ExperimentConfig::three_tank_benchmark()
                             : parse_config_file(args.config_path);
  if (args.seed_override) cfg.sim.seed = *args.seed_override;
  if (args.runs_override) cfg.sim.n_runs = *args.runs_override;
  return cfg;
}

void print_matrix(const std::string& name, const Mat& m) {
  std::printf("%s (%ldx%ld):\n", name.c_str(), static_cast<long>(m.rows()),
              static_cast<long>(m.cols()));
  for (Index r = 0; r < m.rows(); ++r) {
    std::printf(" ");
    for (Index c = 0; c < m.cols(); ++c) std::printf(" % .8g", m(r, c));
    std::printf("\n");
  }
}

fs::path ensure_out_dir(const std::string& out) {
  fs::path dir = out.empty() ? fs::path(".") : fs::path(out);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& path, const std::function<void(std::ostream&)>& emit) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string());
  emit(os);
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(clock::now() - start_).count();
  }

 private:
  using clock = std::chrono::steady_clock;
  clock::time_point start_ = clock::now();
};

Mat gaussian_baseline_sigma(const ExperimentConfig& cfg) {
  if (cfg.watermark.kind == WatermarkConfig::Kind::gaussian_additive)
    return cfg.watermark.sigma_gw;
  if (cfg.plant.nx() == 3 && cfg.plant.nu() == 4)
    return ExperimentConfig::three_tank_sigma_gw();
  // fallback baseline: match the delay watermark's injected power direction
  return 0.015 * Mat::Identity(cfg.plant.nu(), cfg.plant.nu());
}

StabilityCertificate certificate_for(const ExperimentConfig& cfg,
                                     const SynthesisResult& gains) {
  Mat k_tau = cfg.watermark.kind == WatermarkConfig::Kind::delay_feedback
                  ? cfg.watermark.K_tau
                  : Mat::Zero(cfg.plant.nu(), cfg.plant.nx());
  AugmentedSystem aug = assemble_augmented(cfg.plant, gains.kalman, gains.lqg, k_tau);
  return theorem1_certificate(aug);
}

void print_certificate(const StabilityCertificate& cert) {
  std::printf("stability certificate (C_lyap = I, spectral norm):\n");
  std::printf("  rho(closed-loop A)    = %.6g\n", cert.rho_A);
  std::printf("  c / eta_min / eta_max = %.6g / %.6g / %.6g\n", cert.c,
              cert.eta_min, cert.eta_max);
  std::printf("  alpha = %.6g, beta = %.6g, alpha+beta = %.6g\n", cert.alpha,
              cert.beta, cert.alpha + cert.beta);
  std::printf("  verdict: %s\n", cert.passes ? "PASS (alpha+beta < 1)"
                                             : "NOT CERTIFIED (alpha+beta >= 1)");
}

int cmd_synthesize(const CommonArgs& args) {
  ExperimentConfig cfg = load_config(args);
  SynthesisResult gains = synthesize(cfg.plant, cfg.noise, cfg.Q, cfg.R);

  Mat sw = cfg.noise.sigma_w_eff(cfg.plant);
  double filter_resid =
      (gains.kalman.P -
       filter_dare_map(gains.kalman.P, cfg.plant.A, cfg.plant.C, sw, cfg.noise.sigma_v))
          .cwiseAbs()
          .maxCoeff();
  double control_resid =
      (gains.lqg.delta -
       control_dare_map(gains.lqg.delta, cfg.plant.A, cfg.plant.B, cfg.Q, cfg.R))
          .cwiseAbs()
          .maxCoeff();

  print_matrix("P (prediction covariance)", gains.kalman.P);
  print_matrix("L (Kalman gain)", gains.kalman.L);
  print_matrix("M (innovation gain)", gains.kalman.M);
  print_matrix("Sigma_R (innovation covariance)", gains.kalman.sigma_r);
  print_matrix("Delta (control DARE)", gains.lqg.delta);
  print_matrix("K (state-feedback gain)", gains.lqg.K);
  std::printf("filter DARE residual  = %.3e\n", filter_resid);
  std::printf("control DARE residual = %.3e\n", control_resid);

  StabilityCertificate cert = certificate_for(cfg, gains);
  print_certificate(cert);
  if (args.require_stable && !cert.passes) return 1;
  return 0;
}

int run_traced_command(const CommonArgs& args, bool attack) {
  ExperimentConfig cfg = load_config(args);
  if (attack && !cfg.attack) {
    std::fprintf(stderr, "attack: config has no [attack] section\n");
    return 1;
  }
  SynthesisResult gains = synthesize(cfg.plant, cfg.noise, cfg.Q, cfg.R);
  fs::path dir = ensure_out_dir(args.out_dir);

  RunManifest manifest;
  manifest.command = attack ? "attack" : "simulate";
  manifest.config_echo = write_config(cfg);
  manifest.seed = cfg.sim.seed;
  manifest.n_runs = 1;
  bool virtual_mode = attack && cfg.attack &&
                      cfg.attack->mode == AttackScenario::Mode::virtual_system;
  manifest.outputs = {"trace.csv", "detector.csv"};
  if (virtual_mode) manifest.outputs.push_back("trace_virtual.csv");
  manifest.write((dir / "manifest.txt").string());

  Stopwatch watch;
  SimulationConfig sc = cfg.simulation(gains);
  if (!attack) sc.scenario.reset();

  Trace real, twin;
  try {
    if (attack) {
      ReplayRunResult rr = run_replay_attack(sc);
      real = std::move(rr.real);
      twin = std::move(rr.virtual_twin);
    } else {
      real = run_nominal(sc);
    }
  } catch (const SimulationError& e) {
    for (const auto& f : manifest.outputs) fs::remove(dir / f);
    manifest.outputs.clear();
    manifest.config_echo = std::string("# aborted: ") + e.what() + "\n" + manifest.config_echo;
    manifest.write((dir / "manifest.txt").string());
    std::fprintf(stderr, "%s\n", e.what());
    return 1;
  }

  DetectorConfig det{cfg.detector.T, cfg.resolved_psi(), cfg.detector.stride};
  DetectorReport rep = chi2_series(real, gains.kalman, cfg.plant, det);

  write_file(dir / "trace.csv", [&](std::ostream& os) { write_trace_csv(os, real); });
  if (virtual_mode)
    write_file(dir / "trace_virtual.csv",
               [&](std::ostream& os) { write_trace_csv(os, twin); });
  write_file(dir / "detector.csv", [&](std::ostream& os) {
    os << "kappa,g,alarm\n";
    char buf[64];
    for (size_t i = 0; i < rep.kappa.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%ld,%.17g,%d\n", rep.kappa[i], rep.g[i],
                    int(rep.alarm[i]));
      os << buf;
    }
  });

  manifest.timings_sec.emplace_back("total", watch.seconds());
  manifest.write((dir / "manifest.txt").string());

  std::printf("threshold psi = %.6g ((T+1) ny = %ld dof)\n", det.psi,
              static_cast<long>((cfg.detector.T + 1) * cfg.plant.ny()));
  std::printf("detector mean: pre-attack %.4f", rep.mean_pre_attack);
  if (rep.attack_onset >= 0) {
    std::printf(", post-attack %.4f, first alarm at kappa %ld", rep.mean_post_attack,
                rep.first_alarm_post);
  }
  std::printf("\noutputs in %s\n", dir.string().c_str());
  return 0;
}

int cmd_bench(const CommonArgs& args) {
  ExperimentConfig cfg = load_config(args);
  if (cfg.sim.n_runs < 100)
    std::fprintf(stderr, "warning: n_runs = %d; 100+ recommended for stable rate curves\n",
                 cfg.sim.n_runs);
  fs::path dir = ensure_out_dir(args.out_dir);
  Mat sigma_gw = gaussian_baseline_sigma(cfg);

  RunManifest manifest;
  manifest.command = "bench";
  manifest.config_echo = write_config(cfg);
  manifest.seed = cfg.sim.seed;
  manifest.n_runs = cfg.sim.n_runs;
  manifest.outputs = {"rate_curves.csv", "mean_statistic.csv", "costs.csv"};
  manifest.write((dir / "manifest.txt").string());

  Stopwatch watch;
  const long cost_horizon = std::max<long>(cfg.sim.horizon, 1000000);
  CostComparison costs = run_cost_comparison(cfg, sigma_gw, cost_horizon);
  manifest.timings_sec.emplace_back("costs", watch.seconds());

  Stopwatch watch2;
  DetectionComparison det = run_detection_comparison(cfg, sigma_gw, cfg.sim.n_runs);
  manifest.timings_sec.emplace_back("detection", watch2.seconds());

  write_file(dir / "rate_curves.csv",
             [&](std::ostream& os) { write_rate_curves_csv(os, det); });
  write_file(dir / "mean_statistic.csv",
             [&](std::ostream& os) { write_mean_statistic_csv(os, det); });
  write_file(dir / "costs.csv",
             [&](std::ostream& os) { write_costs_csv(os, costs, true); });
  manifest.write((dir / "manifest.txt").string());

  std::printf("empirical LQG cost over %ld steps (burn-in %ld), paper reference in ():\n",
              costs.horizon - costs.burn_in, costs.burn_in);
  std::printf("  none     %.4f  (0.7907)\n", costs.empirical_none);
  std::printf("  delay    %.4f  (0.8712)\n", costs.empirical_delay);
  std::printf("  gaussian %.4f  (1.0415)\n", costs.empirical_gaussian);
  std::printf("analytic: J* = %.4f, delay penalty = %.4f, gaussian penalty = %.4f\n",
              costs.analytic_J_star, costs.penalty_delay, costs.penalty_gaussian);
  std::printf("detection, %d runs, psi = %.4g: time to 50%% rate after t' — delay %ld, "
              "gaussian %ld, none %ld (-1: never)\n",
              det.n_runs, det.psi, det.t50_delay, det.t50_gaussian, det.t50_none);
  std::printf("outputs in %s\n", dir.string().c_str());
  return 0;
}

int cmd_analyze(const CommonArgs& args) {
  ExperimentConfig cfg = load_config(args);
  SynthesisResult gains = synthesize(cfg.plant, cfg.noise, cfg.Q, cfg.R);
  if (cfg.watermark.kind != WatermarkConfig::Kind::delay_feedback) {
    std::fprintf(stderr, "analyze: needs a delay watermark config\n");
    return 1;
  }
  const Index ambient = 4 * cfg.plant.nx() * (cfg.watermark.delays.tau_bar + 1);
  if (ambient > 400) {
    std::fprintf(stderr,
                 "analyze: ambient dimension %ld exceeds the cap 400; the asymptotic "
                 "covariance is desk-scale only — reduce tau_bar or nx\n",
                 static_cast<long>(ambient));
    return 1;
  }

  DriveResponseSystem drs = assemble_drive_response(cfg.plant, gains.kalman,
                                                    gains.lqg, cfg.watermark.K_tau);
  UpliftedSystem up = assemble_uplifted(drs, cfg.watermark.delays, cfg.watermark.delays);
  NoiseMomentSet moments = build_noise_moments(cfg.plant, cfg.noise,
                                               cfg.watermark.delays, cfg.watermark.delays);
  CovarianceResult cov = asymptotic_covariance(up, moments);
  ResidualProjections proj = residual_projections(cfg.plant.nx(),
                                                  up.delays.tau_bar);
  auto breakdown = predicted_attack_statistic_breakdown(cov, proj, gains.kalman,
                                                        cfg.plant, cfg.detector.T);
  double penalty = analytic_cost_penalty(gains.lqg, cfg.plant, cfg.watermark.K_tau);

  std::printf("asymptotic covariance: ambient %ld, %ld iterations, residual %.3e, "
              "pre-symmetrization asymmetry %.3e\n",
              static_cast<long>(ambient), cov.iterations, cov.residual,
              cov.presym_asymmetry);

  // Monte-Carlo side: the analytics describe the sustained attack, so the
  // ensemble couples the twin from step zero regardless of the config onset
  AttackScenario mc_sc;
  mc_sc.mode = AttackScenario::Mode::virtual_system;
  mc_sc.t_prime = 0;
  cfg.attack = mc_sc;
  SimulationConfig sim = cfg.simulation(gains);
  DetectorConfig det{cfg.detector.T, cfg.resolved_psi(), cfg.detector.stride};
  const long snap = sim.horizon - 1;
  const Index nx = cfg.plant.nx();

  struct RunStat {
    Vec top;      // (x, xhat, x', xhat') at the snapshot
    double gmean = 0.0;
  };
  std::function<RunStat(const SimulationConfig&, int)> fn =
      [&](const SimulationConfig& rc, int) {
        ReplayRunResult rr = run_replay_attack(rc);
        RunStat st;
        st.top.resize(4 * nx);
        st.top << rr.real.x.row(snap).transpose(), rr.real.xhat.row(snap).transpose(),
            rr.virtual_twin.x.row(snap).transpose(),
            rr.virtual_twin.xhat.row(snap).transpose();
        DetectorReport rep = chi2_series(rr.real, gains.kalman, cfg.plant, det);
        st.gmean = rep.mean_post_attack;
        return st;
      };
  auto stats = ensemble_map<RunStat>(sim, cfg.sim.n_runs, fn);

  Mat emp = Mat::Zero(4 * nx, 4 * nx);
  double emp_g = 0.0;
  for (const auto& st : stats) {
    emp += st.top * st.top.transpose();
    emp_g += st.gmean;
  }
  emp /= static_cast<double>(stats.size());
  emp_g /= static_cast<double>(stats.size());

  std::printf("\n%-34s %14s %14s\n", "quantity", "analytic", "monte-carlo");
  for (Index i = 0; i < 4 * nx; ++i)
    for (Index j = i; j < 4 * nx; ++j) {
      char name[64];
      std::snprintf(name, sizeof(name), "C[t-slot](%ld,%ld)", static_cast<long>(i),
                    static_cast<long>(j));
      std::printf("%-34s %14.6g %14.6g\n", name, cov.C(i, j), emp(i, j));
    }
  std::printf("%-34s %14.6g %14.6g\n", "E[g'] (attacked window mean)",
              breakdown.predicted_mean, emp_g);
  std::printf("%-34s %14.6g %14s\n", "per-term excess", breakdown.per_term_excess, "-");
  std::printf("%-34s %14.6g %14s\n", "watermark cost penalty (analytic)", penalty, "-");

  if (!args.out_dir.empty()) {
    fs::path dir = ensure_out_dir(args.out_dir);
    write_file(dir / "covariance_top_block.csv", [&](std::ostream& os) {
      char buf[32];
      for (Index r = 0; r < 4 * nx; ++r) {
        for (Index c = 0; c < 4 * nx; ++c) {
          std::snprintf(buf, sizeof(buf), "%.17g", cov.C(r, c));
          os << (c ? "," : "") << buf;
        }
        os << "\n";
      }
    });
    std::printf("covariance top block written to %s\n",
                (dir / "covariance_top_block.csv").string().c_str());
  }
  return 0;
}

int cmd_reproduce_paper(const CommonArgs& args) {
  ExperimentConfig cfg = ExperimentConfig::three_tank_benchmark();
  if (args.seed_override) cfg.sim.seed = *args.seed_override;
  if (args.runs_override) cfg.sim.n_runs = *args.runs_override;
  fs::path dir = ensure_out_dir(args.out_dir);
  Mat sigma_gw = ExperimentConfig::three_tank_sigma_gw();

  RunManifest manifest;
  manifest.command = "reproduce-paper";
  manifest.config_echo = write_config(cfg);
  manifest.seed = cfg.sim.seed;
  manifest.n_runs = cfg.sim.n_runs;
  manifest.outputs = {"rate_curves.csv", "mean_statistic.csv", "costs.csv",
                      "certificate.txt", "penalty_table.csv"};
  manifest.write((dir / "manifest.txt").string());

  SynthesisResult gains = synthesize(cfg.plant, cfg.noise, cfg.Q, cfg.R);

  // stability certificate for the chosen K_tau
  StabilityCertificate cert = certificate_for(cfg, gains);
  print_certificate(cert);
  write_file(dir / "certificate.txt", [&](std::ostream& os) {
    os << "rho_A " << cert.rho_A << "\nc " << cert.c << "\neta_min " << cert.eta_min
       << "\neta_max " << cert.eta_max << "\nalpha " << cert.alpha << "\nbeta "
       << cert.beta << "\npasses " << (cert.passes ? 1 : 0) << "\n";
  });

  Stopwatch watch;
  CostComparison costs = run_cost_comparison(cfg, sigma_gw, 1000000);
  manifest.timings_sec.emplace_back("costs", watch.seconds());
  write_file(dir / "costs.csv",
             [&](std::ostream& os) { write_costs_csv(os, costs, true); });

  Stopwatch watch2;
  DetectionComparison det = run_detection_comparison(cfg, sigma_gw, cfg.sim.n_runs);
  manifest.timings_sec.emplace_back("detection", watch2.seconds());
  write_file(dir / "rate_curves.csv",
             [&](std::ostream& os) { write_rate_curves_csv(os, det); });
  write_file(dir / "mean_statistic.csv",
             [&](std::ostream& os) { write_mean_statistic_csv(os, det); });

  double penalty = analytic_cost_penalty(gains.lqg, cfg.plant, cfg.watermark.K_tau);
  write_file(dir / "penalty_table.csv", [&](std::ostream& os) {
    os << "quantity,value\n";
    char buf[96];
    auto row = [&](const char* k, double v) {
      std::snprintf(buf, sizeof(buf), "%s,%.17g\n", k, v);
      os << buf;
    };
    row("analytic_J_star", costs.analytic_J_star);
    row("analytic_penalty_delay", penalty);
    row("analytic_J_wm", costs.analytic_J_star + penalty);
    row("empirical_J_star", costs.empirical_none);
    row("empirical_J_wm", costs.empirical_delay);
    row("empirical_gap", costs.empirical_delay - costs.empirical_none);
  });
  manifest.write((dir / "manifest.txt").string());

  // measured-vs-reference verdicts at the stated tolerances
  auto within = [](double v, double ref, double rel) {
    return std::abs(v - ref) <= rel * ref;
  };
  auto verdict = [](bool ok) { return ok ? "PASS" : "FAIL"; };
  std::printf("\n== paper reproduction report ==\n");
  std::printf("[%s] cost none: %.4f vs 0.7907 +-10%%\n",
              verdict(within(costs.empirical_none, 0.7907, 0.10)), costs.empirical_none);
  std::printf("[%s] cost delay: %.4f vs 0.8712 +-10%%\n",
              verdict(within(costs.empirical_delay, 0.8712, 0.10)), costs.empirical_delay);
  std::printf("[%s] cost gaussian: %.4f vs 1.0415 +-10%%\n",
              verdict(within(costs.empirical_gaussian, 1.0415, 0.10)),
              costs.empirical_gaussian);
  double clean_mean = static_cast<double>((cfg.detector.T + 1) * cfg.plant.ny());
  bool step_up = det.post_mean_delay > det.pre_mean_delay + 3.0 &&
                 det.post_mean_delay > clean_mean;
  std::printf("[%s] sustained post-attack increase of mean g' (delay): pre %.2f -> post %.2f\n",
              verdict(step_up), det.pre_mean_delay, det.post_mean_delay);
  bool t50_ok = det.t50_delay >= 0 &&
                (det.t50_gaussian < 0 || det.t50_delay <= det.t50_gaussian);
  std::printf("[%s] delay reaches 50%% detection no later than gaussian: %ld vs %ld\n",
              verdict(t50_ok), det.t50_delay, det.t50_gaussian);
  std::printf("[%s] certificate computed for section-VII K_tau (alpha+beta = %.4f)\n",
              verdict(true), cert.alpha + cert.beta);
  std::printf("note: the printed threshold psi = 110 sits below the clean-system mean "
              "(T+1) ny = %.0f (chi2 cdf of 110 at %.0f dof = %.1e), so it alarms on "
              "healthy data; the calibrated psi = %.2f at 1%% false alarm is used "
              "instead and both are reported here.\n",
              clean_mean, clean_mean, chi2_cdf(110.0, clean_mean), det.psi);
  std::printf("[%s] penalty comparison table emitted: analytic %.4f vs empirical gap %.4f"
              " (reported, not asserted)\n",
              verdict(true), penalty, costs.empirical_delay - costs.empirical_none);
  std::printf("outputs in %s\n", dir.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"time-delayed state-feedback watermarking toolkit"};
  app.require_subcommand(1);

  CommonArgs args;
  auto add_common = [&](CLI::App* cmd, bool needs_config) {
    auto* opt = cmd->add_option("--config", args.config_path, "experiment config file");
    if (needs_config) opt->required();
    cmd->add_option("--out", args.out_dir, "output directory");
    cmd->add_option("--seed", args.seed_override, "override sim.seed");
    cmd->add_option("--runs", args.runs_override, "override sim.n_runs");
    return cmd;
  };

  auto* synth = add_common(app.add_subcommand("synthesize",
                           "Kalman/LQG gains and the stability certificate"), true);
  synth->add_flag("--require-stable", args.require_stable,
                  "exit nonzero when the certificate fails");
  add_common(app.add_subcommand("simulate", "nominal closed-loop run"), true);
  add_common(app.add_subcommand("attack", "replay-attack run"), true);
  add_common(app.add_subcommand("bench",
             "cost and detection comparison across watermark variants"), true);
  add_common(app.add_subcommand("analyze",
             "analytic covariance predictions vs Monte Carlo (small instances)"), true);
  add_common(app.add_subcommand("reproduce-paper",
             "three-tank benchmark bundle with pass/fail report"), false);

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("synthesize")) return cmd_synthesize(args);
    if (app.got_subcommand("simulate")) return run_traced_command(args, false);
    if (app.got_subcommand("attack")) return run_traced_command(args, true);
    if (app.got_subcommand("bench")) return cmd_bench(args);
    if (app.got_subcommand("analyze")) return cmd_analyze(args);
    if (app.got_subcommand("reproduce-paper")) return cmd_reproduce_paper(args);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
