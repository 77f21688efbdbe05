#pragma once

#include <optional>
#include <string>

#include "delaymark/simulation.hpp"

namespace delaymark {

inline constexpr const char* kToolVersion = "delaymark 0.1.0";

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& origin, long line, const std::string& field,
              const std::string& message);
  const std::string field;
  const long line;
};

struct ExperimentConfig {
  LtiPlant plant;
  NoiseModel noise;
  Mat Q;  // state cost weight Q_s
  Mat R;
  WatermarkConfig watermark;

  struct DetectorSettings {
    int T = 85;
    std::optional<double> psi;       // explicit threshold, wins over the rate
    double false_alarm_rate = 0.01;  // used when psi is unset
    int stride = 1;
  } detector;

  struct SimSettings {
    long horizon = 10000;
    long burn_in = -1;  // -1: max(10 tau_bar, 1000)
    std::uint64_t seed = 1;
    int n_runs = 1;
  } sim;

  std::optional<AttackScenario> attack;

  double resolved_psi() const;  // psi if set, else the calibrated threshold
  SimulationConfig simulation(const SynthesisResult& gains) const;
  void validate() const;

  // The benchmark experiment: three-tank plant, sigma_w = 0.5 I,
  // sigma_v = 0.1 I, Q_s = diag(0.3, 0.3, 2.4), R = I4, delay watermark
  // K_tau = 0.0713 [I3; 0] with uniform delays on {50..200}, T = 85,
  // recording window [6000, 6300), attack onset 6500.
  static ExperimentConfig three_tank_benchmark();

  // Gaussian watermark used as the benchmark baseline: 0.015 blockdiag(I3, 0),
  // the same three actuators the delay gain drives.
  static Mat three_tank_sigma_gw();
};

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin);
ExperimentConfig parse_config_file(const std::string& path);

// Serializes the resolved configuration in the same key/value format the
// parser reads; used for the manifest echo.
std::string write_config(const ExperimentConfig& cfg);

struct RunManifest {
  std::string command;
  std::string config_echo;
  std::uint64_t seed = 0;
  int n_runs = 1;
  std::vector<std::string> outputs;
  std::vector<std::pair<std::string, double>> timings_sec;

  // Written once before outputs are produced (inventory first), then again
  // with timings after they are final.
  void write(const std::string& path) const;
};

}  // namespace delaymark
