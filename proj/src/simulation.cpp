#include "delaymark/simulation.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numbers>

namespace delaymark {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  // splitmix64 on seed advanced by salt+1 golden-ratio increments
  std::uint64_t z = seed + (salt + 1) * 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t per_run_seed(std::uint64_t master, int run_index) {
  return run_index == 0 ? master
                        : mix_seed(master, 0xE115EED5ULL + static_cast<std::uint64_t>(run_index));
}

NormalStream::NormalStream(std::uint64_t run_seed, NoiseStream stream)
    : eng_(mix_seed(run_seed, 0x57AE0000ULL + static_cast<std::uint64_t>(stream))) {}

double NormalStream::uniform() {
  return static_cast<double>(eng_() >> 11) * 0x1.0p-53;  // [0,1), 53-bit
}

double NormalStream::next() {
  if (has_cached_) {
    has_cached_ = false;
    return cached_;
  }
  // Box-Muller; u1 in (0,1] so the log is finite.
  double u1 = (static_cast<double>(eng_() >> 11) + 1.0) * 0x1.0p-53;
  double u2 = static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 2.0 * std::numbers::pi * u2;
  cached_ = r * std::sin(a);
  has_cached_ = true;
  return r * std::cos(a);
}

void NormalStream::fill_normal(Vec& out) {
  for (Index i = 0; i < out.size(); ++i) out(i) = next();
}

DelaySampler::DelaySampler(const DelayDistribution& d) {
  d.validate();
  cdf_.resize(d.pmf.size());
  double acc = 0.0;
  for (size_t i = 0; i < d.pmf.size(); ++i) {
    acc += d.pmf[i];
    cdf_[i] = acc;
  }
  cdf_.back() = 1.0;
}

int DelaySampler::sample(NormalStream& stream) const {
  double u = stream.uniform();
  auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
  if (it == cdf_.end()) --it;
  return static_cast<int>(it - cdf_.begin()) + 1;
}

void AttackScenario::validate(long horizon) const {
  (void)horizon;
  if (t_prime < 0) throw std::invalid_argument("attack.t_prime must be >= 0");
  if (mode == Mode::recorded_loop) {
    if (!(t_start < t_end && t_end < t_prime))
      throw std::invalid_argument("attack: need t_start < t_end < t_prime for recorded replay");
    if (t_start < 0) throw std::invalid_argument("attack.t_start must be >= 0");
  }
}

long SimulationConfig::effective_burn_in() const {
  if (burn_in >= 0) return burn_in;
  long tb = watermark.kind == WatermarkConfig::Kind::delay_feedback
                ? watermark.delays.tau_bar
                : 0;
  return std::max(10 * tb, 1000L);
}

void SimulationConfig::validate() const {
  plant.validate();
  noise.validate(plant, /*require_pd_v=*/false);
  watermark.validate(plant);
  if (horizon <= 0) throw std::invalid_argument("sim.horizon must be positive");
  if (x0.size() && x0.size() != plant.nx())
    throw std::invalid_argument("x0 dimension mismatch");
  if (xhat0.size() && xhat0.size() != plant.nx())
    throw std::invalid_argument("xhat0 dimension mismatch");
  if (watermark.kind == WatermarkConfig::Kind::delay_feedback &&
      horizon <= watermark.delays.tau_bar)
    throw std::invalid_argument("sim.horizon must exceed tau_bar");
  if (scenario) scenario->validate(horizon);
}

namespace {

constexpr double kBlowupGuard = 1e12;

void allocate(Trace& tr, long horizon, Index nx, Index nu, Index ny) {
  tr.x.setZero(horizon, nx);
  tr.xhat.setZero(horizon, nx);
  tr.xupd.setZero(horizon, nx);
  tr.u.setZero(horizon, nu);
  tr.y.setZero(horizon, ny);
  tr.y_obs.setZero(horizon, ny);
  tr.tau.assign(static_cast<size_t>(horizon), 0);
  tr.attack_active.assign(static_cast<size_t>(horizon), 0);
}

// One closed-loop plant + filter with its own noise streams.
struct LoopSim {
  const SimulationConfig& cfg;
  Trace trace;
  Vec x, xhat;
  NormalStream w_stream, v_stream, gw_stream;
  NormalStream tau_stream;
  std::optional<DelaySampler> sampler;
  Mat Lw, Lv, Lgw;
  Vec zw, zv, zgw, w, v;
  bool delay_wm, gauss_wm;

  LoopSim(const SimulationConfig& c, NoiseStream w_id, NoiseStream v_id,
          NoiseStream tau_id, NoiseStream gw_id)
      : cfg(c),
        w_stream(c.seed, w_id),
        v_stream(c.seed, v_id),
        gw_stream(c.seed, gw_id),
        tau_stream(c.seed, tau_id) {
    const auto& p = cfg.plant;
    allocate(trace, cfg.horizon, p.nx(), p.nu(), p.ny());
    x = cfg.x0.size() ? cfg.x0 : Vec(Vec::Zero(p.nx()));
    xhat = cfg.xhat0.size() ? cfg.xhat0 : Vec(Vec::Zero(p.nx()));
    delay_wm = cfg.watermark.kind == WatermarkConfig::Kind::delay_feedback;
    gauss_wm = cfg.watermark.kind == WatermarkConfig::Kind::gaussian_additive;
    if (delay_wm) sampler.emplace(cfg.watermark.delays);
    Lw = psd_sqrt(cfg.noise.sigma_w);
    Lv = psd_sqrt(cfg.noise.sigma_v);
    if (gauss_wm) Lgw = psd_sqrt(cfg.watermark.sigma_gw);
    zw.resize(p.nw());
    zv.resize(p.ny());
    if (gauss_wm) zgw.resize(p.nu());
  }

  // Advances one step given the observed output; the caller decides what the
  // filter sees (y or the replayed y').
  void step(long t, const Vec& y_obs, bool attacked) {
    const auto& p = cfg.plant;
    const auto& kg = cfg.gains.kalman;
    const auto& lg = cfg.gains.lqg;

    Vec innovation = y_obs - p.C * xhat;
    Vec xupd = xhat + kg.M * innovation;
    Vec u = -(lg.K * xupd);
    if (delay_wm) {
      int tau = trace.tau[static_cast<size_t>(t)];
      long ts = t - tau;
      if (ts >= 0)
        u -= cfg.watermark.K_tau * trace.xupd.row(ts).transpose();
    }
    if (gauss_wm) {
      gw_stream.fill_normal(zgw);
      u += Lgw * zgw;
    }

    trace.xhat.row(t) = xhat;
    trace.xupd.row(t) = xupd;
    trace.u.row(t) = u;
    trace.y_obs.row(t) = y_obs;
    trace.attack_active[static_cast<size_t>(t)] = attacked ? 1 : 0;

    x = p.A * x + p.B * u + p.D * w;
    xhat = p.A * xhat + p.B * u + kg.L * innovation;
    if (x.cwiseAbs().maxCoeff() > kBlowupGuard) {
      throw SimulationError("simulation aborted: state norm exceeded 1e12 at step " +
                            std::to_string(t));
    }
  }

  // Draws this step's randomness and produces the true output.
  Vec begin_step(long t) {
    if (delay_wm) trace.tau[static_cast<size_t>(t)] = sampler->sample(tau_stream);
    w_stream.fill_normal(zw);
    w = Lw * zw;
    v_stream.fill_normal(zv);
    v = Lv * zv;
    trace.x.row(t) = x;
    Vec y = cfg.plant.C * x + v;
    trace.y.row(t) = y;
    return y;
  }
};

}  // namespace

Trace run_nominal(const SimulationConfig& cfg) {
  cfg.validate();
  if (cfg.scenario)
    throw std::invalid_argument("run_nominal: config carries an attack scenario");
  LoopSim sim(cfg, NoiseStream::process, NoiseStream::measurement,
              NoiseStream::delay, NoiseStream::watermark);
  for (long t = 0; t < cfg.horizon; ++t) {
    Vec y = sim.begin_step(t);
    sim.step(t, y, false);
  }
  return std::move(sim.trace);
}

ReplayRunResult run_replay_attack(const SimulationConfig& cfg) {
  cfg.validate();
  if (!cfg.scenario)
    throw std::invalid_argument("run_replay_attack: no attack scenario configured");
  const AttackScenario sc = *cfg.scenario;

  ReplayRunResult out;
  if (sc.mode == AttackScenario::Mode::recorded_loop) {
    LoopSim real(cfg, NoiseStream::process, NoiseStream::measurement,
                 NoiseStream::delay, NoiseStream::watermark);
    const long window = sc.t_end - sc.t_start;
    Mat recorded(window, cfg.plant.ny());
    for (long t = 0; t < cfg.horizon; ++t) {
      Vec y = real.begin_step(t);
      if (t >= sc.t_start && t < sc.t_end) recorded.row(t - sc.t_start) = y;
      bool attacked = t >= sc.t_prime;
      Vec y_obs = attacked ? Vec(recorded.row((t - sc.t_prime) % window).transpose())
                           : y;
      real.step(t, y_obs, attacked);
    }
    out.real = std::move(real.trace);
    return out;
  }

  // virtual_system: an independent attacker copy runs in parallel and feeds
  // its output to the real filter from t_prime onward.
  LoopSim real(cfg, NoiseStream::process, NoiseStream::measurement,
               NoiseStream::delay, NoiseStream::watermark);
  LoopSim twin(cfg, NoiseStream::attack_process, NoiseStream::attack_measurement,
               NoiseStream::attack_delay, NoiseStream::attack_watermark);
  for (long t = 0; t < cfg.horizon; ++t) {
    Vec y = real.begin_step(t);
    Vec y_twin = twin.begin_step(t);
    twin.step(t, y_twin, false);
    bool attacked = t >= sc.t_prime;
    real.step(t, attacked ? y_twin : y, attacked);
  }
  out.real = std::move(real.trace);
  out.virtual_twin = std::move(twin.trace);
  return out;
}

int ensemble_threads() {
  if (const char* env = std::getenv("DELAYMARK_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

void write_trace_csv(std::ostream& os, const Trace& trace) {
  auto emit_header = [&os](const char* base, Index n) {
    for (Index i = 0; i < n; ++i) os << ',' << base << i;
  };
  os << 't';
  emit_header("x", trace.x.cols());
  emit_header("xhat", trace.xhat.cols());
  emit_header("xupd", trace.xupd.cols());
  emit_header("u", trace.u.cols());
  emit_header("y", trace.y.cols());
  emit_header("y_obs", trace.y_obs.cols());
  os << ",tau,attack_active\n";
  char buf[32];
  auto emit_row = [&](const Mat& m, long t) {
    for (Index i = 0; i < m.cols(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", m(t, i));
      os << ',' << buf;
    }
  };
  for (long t = 0; t < trace.length(); ++t) {
    os << t;
    emit_row(trace.x, t);
    emit_row(trace.xhat, t);
    emit_row(trace.xupd, t);
    emit_row(trace.u, t);
    emit_row(trace.y, t);
    emit_row(trace.y_obs, t);
    os << ',' << trace.tau[static_cast<size_t>(t)] << ','
       << int(trace.attack_active[static_cast<size_t>(t)]) << '\n';
  }
}

}  // namespace delaymark
