#include "delaymark/config.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "delaymark/detection.hpp"

namespace delaymark {

ConfigError::ConfigError(const std::string& origin, long line_,
                         const std::string& field_, const std::string& message)
    : std::runtime_error(origin + (line_ > 0 ? ":" + std::to_string(line_) : "") +
                         ": [" + field_ + "] " + message),
      field(field_),
      line(line_) {}

namespace {

struct RawEntry {
  std::string value;
  long line = 0;
};

struct RawConfig {
  std::string origin;
  std::map<std::string, RawEntry> entries;  // "section.key" -> value

  const RawEntry* find(const std::string& key) const {
    auto it = entries.find(key);
    return it == entries.end() ? nullptr : &it->second;
  }
  [[noreturn]] void fail(const std::string& field, long line,
                         const std::string& msg) const {
    throw ConfigError(origin, line, field, msg);
  }
};

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

RawConfig tokenize(const std::string& text, const std::string& origin) {
  RawConfig raw;
  raw.origin = origin;
  std::istringstream is(text);
  std::string line, section;
  long lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    size_t hash = line.find_first_of("#;");
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError(origin, lineno, line, "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin, lineno, line, "expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (section.empty())
      throw ConfigError(origin, lineno, key, "key outside any [section]");
    std::string full = section + "." + key;
    if (raw.entries.count(full))
      throw ConfigError(origin, lineno, full, "duplicate key");
    raw.entries[full] = {value, lineno};
  }
  return raw;
}

std::vector<double> parse_numbers(const RawConfig& raw, const std::string& field,
                                  const RawEntry& e) {
  std::vector<double> out;
  std::istringstream is(e.value);
  std::string tok;
  while (is >> tok) {
    try {
      size_t pos = 0;
      out.push_back(std::stod(tok, &pos));
      if (pos != tok.size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      raw.fail(field, e.line, "cannot parse number '" + tok + "'");
    }
  }
  return out;
}

double get_scalar(const RawConfig& raw, const std::string& field,
                  const RawEntry& e) {
  auto nums = parse_numbers(raw, field, e);
  if (nums.size() != 1) raw.fail(field, e.line, "expected a single number");
  return nums[0];
}

long get_long(const RawConfig& raw, const std::string& field, const RawEntry& e) {
  double v = get_scalar(raw, field, e);
  long l = static_cast<long>(v);
  if (static_cast<double>(l) != v) raw.fail(field, e.line, "expected an integer");
  return l;
}

long require_long(const RawConfig& raw, const std::string& field) {
  const RawEntry* e = raw.find(field);
  if (!e) raw.fail(field, 0, "missing required key");
  return get_long(raw, field, *e);
}

// Matrix value: 'identity' | 'diag v1 v2 ...' | row-major numbers.
Mat parse_matrix(const RawConfig& raw, const std::string& field,
                 const RawEntry& e, Index rows, Index cols) {
  std::istringstream is(e.value);
  std::string head;
  is >> head;
  if (head == "identity") {
    if (rows != cols) raw.fail(field, e.line, "'identity' needs a square matrix");
    return Mat::Identity(rows, cols);
  }
  if (head == "diag") {
    if (rows != cols) raw.fail(field, e.line, "'diag' needs a square matrix");
    std::string rest;
    std::getline(is, rest);
    RawEntry sub{rest, e.line};
    auto nums = parse_numbers(raw, field, sub);
    if (static_cast<Index>(nums.size()) != rows)
      raw.fail(field, e.line, "diag needs " + std::to_string(rows) + " entries, got " +
                                  std::to_string(nums.size()));
    Mat m = Mat::Zero(rows, cols);
    for (Index i = 0; i < rows; ++i) m(i, i) = nums[static_cast<size_t>(i)];
    return m;
  }
  auto nums = parse_numbers(raw, field, e);
  if (static_cast<Index>(nums.size()) != rows * cols)
    raw.fail(field, e.line, "expected " + std::to_string(rows * cols) +
                                " row-major entries, got " + std::to_string(nums.size()));
  Mat m(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c)
      m(r, c) = nums[static_cast<size_t>(r * cols + c)];
  return m;
}

Mat require_matrix(const RawConfig& raw, const std::string& field, Index rows,
                   Index cols) {
  const RawEntry* e = raw.find(field);
  if (!e) raw.fail(field, 0, "missing required key");
  return parse_matrix(raw, field, *e, rows, cols);
}

// covariance given either as <prefix>_scale = s (s * I) or a full matrix
Mat parse_covariance(const RawConfig& raw, const std::string& section,
                     const std::string& name, Index dim) {
  std::string scale_key = section + "." + name + "_scale";
  std::string full_key = section + "." + name;
  const RawEntry* scale = raw.find(scale_key);
  const RawEntry* full = raw.find(full_key);
  if (scale && full)
    raw.fail(full_key, full->line, "give either " + name + " or " + name + "_scale");
  if (scale) return get_scalar(raw, scale_key, *scale) * Mat::Identity(dim, dim);
  if (full) return parse_matrix(raw, full_key, *full, dim, dim);
  raw.fail(full_key, 0, "missing " + name + " (or " + name + "_scale)");
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text,
                                   const std::string& origin) {
  RawConfig raw = tokenize(text, origin);
  ExperimentConfig cfg;

  const Index nx = require_long(raw, "plant.nx");
  const Index nu = require_long(raw, "plant.nu");
  const Index ny = require_long(raw, "plant.ny");
  if (nx < 1 || nu < 1 || ny < 1)
    raw.fail("plant.nx", 0, "dimensions must be positive");
  Index nw = nx;
  if (const RawEntry* e = raw.find("plant.nw")) nw = get_long(raw, "plant.nw", *e);

  cfg.plant.A = require_matrix(raw, "plant.A", nx, nx);
  cfg.plant.B = require_matrix(raw, "plant.B", nx, nu);
  cfg.plant.C = require_matrix(raw, "plant.C", ny, nx);
  cfg.plant.D = raw.find("plant.D")
                    ? parse_matrix(raw, "plant.D", *raw.find("plant.D"), nx, nw)
                    : Mat::Identity(nx, nw);

  cfg.noise.sigma_w = parse_covariance(raw, "noise", "sigma_w", nw);
  cfg.noise.sigma_v = parse_covariance(raw, "noise", "sigma_v", ny);

  cfg.Q = require_matrix(raw, "cost.Q", nx, nx);
  cfg.R = require_matrix(raw, "cost.R", nu, nu);

  const RawEntry* variant = raw.find("watermark.variant");
  std::string kind = variant ? variant->value : "none";
  if (kind == "none") {
    cfg.watermark = WatermarkConfig::off();
  } else if (kind == "delay") {
    Mat K_tau = require_matrix(raw, "watermark.k_tau", nu, nx);
    DelayDistribution d;
    if (const RawEntry* pmf = raw.find("watermark.pmf")) {
      auto nums = parse_numbers(raw, "watermark.pmf", *pmf);
      d.tau_bar = static_cast<int>(nums.size());
      d.pmf = nums;
    } else {
      long lo = require_long(raw, "watermark.tau_min");
      long hi = require_long(raw, "watermark.tau_max");
      if (lo < 1 || hi < lo)
        raw.fail("watermark.tau_min", 0, "need 1 <= tau_min <= tau_max");
      d = DelayDistribution::uniform(static_cast<int>(lo), static_cast<int>(hi));
    }
    try {
      d.validate();
    } catch (const std::exception& ex) {
      raw.fail("watermark.pmf", 0, ex.what());
    }
    cfg.watermark = WatermarkConfig::delay_feedback(K_tau, d);
  } else if (kind == "gaussian") {
    cfg.watermark = WatermarkConfig::gaussian(
        parse_covariance(raw, "watermark", "sigma_gw", nu));
  } else {
    raw.fail("watermark.variant", variant->line,
             "unknown variant '" + kind + "' (none | delay | gaussian)");
  }

  if (const RawEntry* e = raw.find("detector.T"))
    cfg.detector.T = static_cast<int>(get_long(raw, "detector.T", *e));
  if (const RawEntry* e = raw.find("detector.psi"))
    cfg.detector.psi = get_scalar(raw, "detector.psi", *e);
  if (const RawEntry* e = raw.find("detector.false_alarm_rate"))
    cfg.detector.false_alarm_rate = get_scalar(raw, "detector.false_alarm_rate", *e);
  if (const RawEntry* e = raw.find("detector.stride"))
    cfg.detector.stride = static_cast<int>(get_long(raw, "detector.stride", *e));

  if (const RawEntry* e = raw.find("sim.horizon"))
    cfg.sim.horizon = get_long(raw, "sim.horizon", *e);
  if (const RawEntry* e = raw.find("sim.burn_in"))
    cfg.sim.burn_in = get_long(raw, "sim.burn_in", *e);
  if (const RawEntry* e = raw.find("sim.seed"))
    cfg.sim.seed = static_cast<std::uint64_t>(get_long(raw, "sim.seed", *e));
  if (const RawEntry* e = raw.find("sim.n_runs"))
    cfg.sim.n_runs = static_cast<int>(get_long(raw, "sim.n_runs", *e));

  if (raw.find("attack.t_prime")) {
    AttackScenario sc;
    sc.t_prime = require_long(raw, "attack.t_prime");
    if (const RawEntry* e = raw.find("attack.t_start"))
      sc.t_start = get_long(raw, "attack.t_start", *e);
    if (const RawEntry* e = raw.find("attack.t_end"))
      sc.t_end = get_long(raw, "attack.t_end", *e);
    const RawEntry* mode = raw.find("attack.mode");
    std::string m = mode ? mode->value : "recorded";
    if (m == "recorded")
      sc.mode = AttackScenario::Mode::recorded_loop;
    else if (m == "virtual")
      sc.mode = AttackScenario::Mode::virtual_system;
    else
      raw.fail("attack.mode", mode->line, "unknown mode '" + m + "' (recorded | virtual)");
    cfg.attack = sc;
  }

  try {
    cfg.validate();
  } catch (const std::exception& ex) {
    throw ConfigError(origin, 0, "config", ex.what());
  }
  return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, 0, "file", "cannot open config file");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path);
}

void ExperimentConfig::validate() const {
  plant.validate();
  noise.validate(plant);
  require_size(Q, plant.nx(), plant.nx(), "cost.Q");
  require_size(R, plant.nu(), plant.nu(), "cost.R");
  watermark.validate(plant);
  if (sim.horizon <= 0) throw std::invalid_argument("sim.horizon must be positive");
  if (sim.n_runs < 1) throw std::invalid_argument("sim.n_runs must be >= 1");
  if (detector.T < 1) throw std::invalid_argument("detector.T must be >= 1");
  if (detector.psi && *detector.psi <= 0.0)
    throw std::invalid_argument("detector.psi must be positive");
  if (!(detector.false_alarm_rate > 0.0 && detector.false_alarm_rate < 1.0))
    throw std::invalid_argument("detector.false_alarm_rate must be in (0,1)");
  if (attack) attack->validate(sim.horizon);
}

double ExperimentConfig::resolved_psi() const {
  if (detector.psi) return *detector.psi;
  return calibrate_threshold(detector.T, plant.ny(), detector.false_alarm_rate);
}

SimulationConfig ExperimentConfig::simulation(const SynthesisResult& gains) const {
  SimulationConfig sc;
  sc.horizon = sim.horizon;
  sc.plant = plant;
  sc.noise = noise;
  sc.gains = gains;
  sc.watermark = watermark;
  sc.seed = sim.seed;
  sc.scenario = attack;
  sc.burn_in = sim.burn_in;
  return sc;
}

Mat ExperimentConfig::three_tank_sigma_gw() {
  Mat s = Mat::Zero(4, 4);
  s.topLeftCorner(3, 3) = 0.015 * Mat::Identity(3, 3);
  return s;
}

ExperimentConfig ExperimentConfig::three_tank_benchmark() {
  ExperimentConfig cfg;
  cfg.plant = LtiPlant::three_tank();
  cfg.noise.sigma_w = 0.5 * Mat::Identity(3, 3);
  cfg.noise.sigma_v = 0.1 * Mat::Identity(3, 3);
  Vec qd(3);
  qd << 0.3, 0.3, 2.4;
  cfg.Q = qd.asDiagonal();
  cfg.R = Mat::Identity(4, 4);

  // K_tau = 0.0713 I is not dimension-consistent for a 4-input plant; the
  // scaled identity goes on the first three actuators, the heater row is zero.
  Mat k_tau = Mat::Zero(4, 3);
  k_tau.topLeftCorner(3, 3) = 0.0713 * Mat::Identity(3, 3);
  cfg.watermark = WatermarkConfig::delay_feedback(
      k_tau, DelayDistribution::uniform(50, 200));

  cfg.detector.T = 85;
  cfg.detector.false_alarm_rate = 0.01;

  cfg.sim.horizon = 10000;
  cfg.sim.seed = 1;
  cfg.sim.n_runs = 200;

  AttackScenario sc;
  sc.t_start = 6000;
  sc.t_end = 6300;
  sc.t_prime = 6500;
  sc.mode = AttackScenario::Mode::recorded_loop;
  cfg.attack = sc;
  return cfg;
}

namespace {

void emit_matrix(std::ostream& os, const char* key, const Mat& m) {
  os << key << " =";
  char buf[32];
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", m(r, c));
      os << ' ' << buf;
    }
  os << '\n';
}

}  // namespace

std::string write_config(const ExperimentConfig& cfg) {
  std::ostringstream os;
  os << "[plant]\n";
  os << "nx = " << cfg.plant.nx() << "\nnu = " << cfg.plant.nu()
     << "\nny = " << cfg.plant.ny() << "\nnw = " << cfg.plant.nw() << '\n';
  emit_matrix(os, "A", cfg.plant.A);
  emit_matrix(os, "B", cfg.plant.B);
  emit_matrix(os, "C", cfg.plant.C);
  emit_matrix(os, "D", cfg.plant.D);
  os << "\n[noise]\n";
  emit_matrix(os, "sigma_w", cfg.noise.sigma_w);
  emit_matrix(os, "sigma_v", cfg.noise.sigma_v);
  os << "\n[cost]\n";
  emit_matrix(os, "Q", cfg.Q);
  emit_matrix(os, "R", cfg.R);
  os << "\n[watermark]\n";
  switch (cfg.watermark.kind) {
    case WatermarkConfig::Kind::none:
      os << "variant = none\n";
      break;
    case WatermarkConfig::Kind::delay_feedback: {
      os << "variant = delay\n";
      emit_matrix(os, "k_tau", cfg.watermark.K_tau);
      os << "pmf =";
      char buf[32];
      for (double p : cfg.watermark.delays.pmf) {
        std::snprintf(buf, sizeof(buf), "%.17g", p);
        os << ' ' << buf;
      }
      os << '\n';
      break;
    }
    case WatermarkConfig::Kind::gaussian_additive:
      os << "variant = gaussian\n";
      emit_matrix(os, "sigma_gw", cfg.watermark.sigma_gw);
      break;
  }
  os << "\n[detector]\n";
  os << "T = " << cfg.detector.T << '\n';
  if (cfg.detector.psi) os << "psi = " << *cfg.detector.psi << '\n';
  os << "false_alarm_rate = " << cfg.detector.false_alarm_rate << '\n';
  os << "stride = " << cfg.detector.stride << '\n';
  os << "\n[sim]\n";
  os << "horizon = " << cfg.sim.horizon << '\n';
  if (cfg.sim.burn_in >= 0) os << "burn_in = " << cfg.sim.burn_in << '\n';
  os << "seed = " << cfg.sim.seed << '\n';
  os << "n_runs = " << cfg.sim.n_runs << '\n';
  if (cfg.attack) {
    os << "\n[attack]\n";
    os << "t_start = " << cfg.attack->t_start << '\n';
    os << "t_end = " << cfg.attack->t_end << '\n';
    os << "t_prime = " << cfg.attack->t_prime << '\n';
    os << "mode = "
       << (cfg.attack->mode == AttackScenario::Mode::recorded_loop ? "recorded"
                                                                   : "virtual")
       << '\n';
  }
  return os.str();
}

void RunManifest::write(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write manifest: " + path);
  os << "tool = " << kToolVersion << '\n';
  os << "command = " << command << '\n';
  os << "seed = " << seed << '\n';
  os << "n_runs = " << n_runs << '\n';
  os << "outputs =";
  for (const auto& f : outputs) os << ' ' << f;
  os << '\n';
  for (const auto& [name, sec] : timings_sec)
    os << "timing." << name << " = " << sec << " s\n";
  os << "\n# resolved configuration\n" << config_echo;
}

}  // namespace delaymark
