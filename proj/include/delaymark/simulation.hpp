#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <random>
#include <thread>
#include <vector>

#include "delaymark/system.hpp"

namespace delaymark {

class SimulationError : public std::runtime_error {
 public:
  explicit SimulationError(const std::string& what) : std::runtime_error(what) {}
};

// splitmix64 step; used to derive stream and per-run seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

// Ensemble member i reuses the master seed for i = 0 (so a one-run ensemble
// reproduces the plain run) and mixes otherwise.
std::uint64_t per_run_seed(std::uint64_t master, int run_index);

// One independent stream per noise source. The generator is pinned for
// reproducibility across platforms: mt19937_64 + Box-Muller, nothing
// implementation-defined.
enum class NoiseStream : std::uint32_t {
  process = 0,         // w
  measurement,         // v
  attack_process,      // w'
  attack_measurement,  // v'
  delay,               // tau
  attack_delay,        // tau'
  watermark,           // Gaussian watermark, real system
  attack_watermark,    // Gaussian watermark, virtual system
};

class NormalStream {
 public:
  NormalStream(std::uint64_t run_seed, NoiseStream stream);

  double uniform();            // [0, 1)
  double next();               // N(0, 1)
  void fill_normal(Vec& out);  // iid N(0, 1) entries

 private:
  std::mt19937_64 eng_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

// Inverse-CDF sampler over {1..tau_bar}.
class DelaySampler {
 public:
  explicit DelaySampler(const DelayDistribution& d);
  int sample(NormalStream& stream) const;

 private:
  std::vector<double> cdf_;
};

struct AttackScenario {
  enum class Mode { recorded_loop, virtual_system };

  long t_start = 0;  // recording window [t_start, t_end), recorded_loop only
  long t_end = 0;
  long t_prime = 0;  // attack onset
  Mode mode = Mode::recorded_loop;

  void validate(long horizon) const;
};

struct SimulationConfig {
  long horizon = 0;
  LtiPlant plant;
  NoiseModel noise;
  SynthesisResult gains;
  WatermarkConfig watermark;
  std::uint64_t seed = 1;
  std::optional<AttackScenario> scenario;
  long burn_in = -1;  // -1: max(10 tau_bar, 1000)
  Vec x0;             // initial state/estimate; empty means zero (applies to
  Vec xhat0;          // the virtual copy as well)

  long effective_burn_in() const;
  void validate() const;
};

// Per-step records; row t of each matrix is the signal at time t.
struct Trace {
  Mat x;      // plant state
  Mat xhat;   // predicted estimate x_{t|t-1}
  Mat xupd;   // updated estimate x_{t|t}
  Mat u;      // control input
  Mat y;      // true output C x + v
  Mat y_obs;  // what the filter saw (y' during an attack)
  std::vector<int> tau;             // drawn delay, 0 if no delay watermark
  std::vector<std::uint8_t> attack_active;

  long length() const { return x.rows(); }
  bool empty() const { return x.rows() == 0; }
};

Trace run_nominal(const SimulationConfig& cfg);

struct ReplayRunResult {
  Trace real;
  // Live attacker copy in virtual_system mode; empty in recorded_loop mode
  // (the replayed signal is the real system's own recording).
  Trace virtual_twin;
};

ReplayRunResult run_replay_attack(const SimulationConfig& cfg);

// Number of worker threads: DELAYMARK_THREADS if set, hardware otherwise.
int ensemble_threads();

// Runs fn over n_runs independent members (seed = per_run_seed(master, i))
// and returns results ordered by run index. fn must be pure.
template <typename R>
std::vector<R> ensemble_map(const SimulationConfig& cfg, int n_runs,
                            const std::function<R(const SimulationConfig&, int)>& fn,
                            int threads = -1) {
  if (n_runs < 1) throw std::invalid_argument("ensemble: n_runs must be >= 1");
  if (threads <= 0) threads = ensemble_threads();
  threads = std::min<int>(threads, n_runs);
  std::vector<R> results(static_cast<size_t>(n_runs));
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto worker = [&]() {
    for (;;) {
      int i = next.fetch_add(1);
      if (i >= n_runs) return;
      try {
        SimulationConfig run_cfg = cfg;
        run_cfg.seed = per_run_seed(cfg.seed, i);
        results[static_cast<size_t>(i)] = fn(run_cfg, i);
      } catch (...) {
        std::lock_guard<std::mutex> lk(error_mu);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
  return results;
}

void write_trace_csv(std::ostream& os, const Trace& trace);

}  // namespace delaymark
