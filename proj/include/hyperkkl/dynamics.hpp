#pragma once

// Benchmark systems, fixed-step RK4 and seeded noisy trajectory generation.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hyperkkl/binary_io.hpp"
#include "hyperkkl/error.hpp"
#include "hyperkkl/parallel.hpp"
#include "hyperkkl/param_store.hpp"
#include "hyperkkl/rng.hpp"
#include "hyperkkl/signals.hpp"

namespace hyperkkl {


struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  double width() const { return hi - lo; }
};

/// A nonlinear system x' = f(x) + G u, y = h(x) with scalar input entering
/// additively on `forced_coord`.
struct SystemSpec {
  std::string name;
  int n_x = 0;
  int n_y = 0;
  int m = 0;
  std::map<std::string, double> params;
  std::vector<Interval> domain;
  int forced_coord = 0;
  std::function<Vec(const Vec&)> drift;
  std::function<Vec(const Vec&)> output;

  /// Euclidean length of the domain-box diagonal.
  double domain_diameter() const {
    double s = 0.0;
    for (const auto& iv : domain) s += iv.width() * iv.width();
    return std::sqrt(s);
  }
};

namespace systems {

/// Reverse Duffing: x1' = x2^3, x2' = -x1, y = x1.
inline SystemSpec duffing() {
  SystemSpec s;
  s.name = "duffing";
  s.n_x = 2, s.n_y = 1, s.m = 1;
  s.domain = {{-1, 1}, {-1, 1}};
  s.forced_coord = 1;
  s.drift = [](const Vec& x) {
    Vec d(2);
    d << x[1] * x[1] * x[1], -x[0];
    return d;
  };
  s.output = [](const Vec& x) { return Vec::Constant(1, x[0]); };
  return s;
}

inline SystemSpec van_der_pol(double mu = 3.0) {
  SystemSpec s;
  s.name = "vanderpol";
  s.n_x = 2, s.n_y = 1, s.m = 1;
  s.params = {{"mu", mu}};
  s.domain = {{-2, 2}, {-2, 2}};
  s.forced_coord = 1;
  s.drift = [mu](const Vec& x) {
    Vec d(2);
    d << x[1], mu * (1.0 - x[0] * x[0]) * x[1] - x[0];
    return d;
  };
  s.output = [](const Vec& x) { return Vec::Constant(1, x[0]); };
  return s;
}

inline SystemSpec rossler(double a = 0.1, double b = 0.1, double c = 14.0) {
  SystemSpec s;
  s.name = "rossler";
  s.n_x = 3, s.n_y = 1, s.m = 1;
  s.params = {{"a", a}, {"b", b}, {"c", c}};
  s.domain = {{-10, 10}, {-10, 10}, {0, 20}};
  s.forced_coord = 1;
  s.drift = [a, b, c](const Vec& x) {
    Vec d(3);
    d << -x[1] - x[2], x[0] + a * x[1], b + x[2] * (x[0] - c);
    return d;
  };
  s.output = [](const Vec& x) { return Vec::Constant(1, x[1]); };
  return s;
}

inline SystemSpec lorenz(double p = 10.0, double q = 28.0, double r = 8.0 / 3.0) {
  SystemSpec s;
  s.name = "lorenz";
  s.n_x = 3, s.n_y = 1, s.m = 1;
  s.params = {{"p", p}, {"q", q}, {"r", r}};
  s.domain = {{-20, 20}, {-20, 20}, {0, 50}};
  s.forced_coord = 1;
  s.drift = [p, q, r](const Vec& x) {
    Vec d(3);
    d << p * (x[1] - x[0]), x[0] * (q - x[2]) - x[1], x[0] * x[1] - r * x[2];
    return d;
  };
  s.output = [](const Vec& x) { return Vec::Constant(1, x[1]); };
  return s;
}

inline SystemSpec by_name(const std::string& name) {
  if (name == "duffing") return duffing();
  if (name == "vanderpol" || name == "vdp") return van_der_pol();
  if (name == "rossler") return rossler();
  if (name == "lorenz") return lorenz();
  throw ConfigError("unknown system '" + name + "' (expected duffing|vanderpol|rossler|lorenz)");
}

/// Oscillators use 150-unit maps, chaotic systems 350 (and hypernet rank 32 vs 128).
inline bool is_chaotic(const std::string& name) { return name == "rossler" || name == "lorenz"; }

}  // namespace systems

inline bool all_finite(const Vec& v) { return v.allFinite(); }

inline Vec eval_vector_field(const SystemSpec& sys, const Vec& x, const Vec& u) {
  require(x.size() == sys.n_x, "state has length " + std::to_string(x.size()) + ", system " +
                                   sys.name + " expects " + std::to_string(sys.n_x));
  require(u.size() == sys.m, "input has length " + std::to_string(u.size()) + ", system " +
                                 sys.name + " expects " + std::to_string(sys.m));
  if (!all_finite(x)) throw NumericDomainError("non-finite state passed to " + sys.name + " vector field");
  Vec d = sys.drift(x);
  for (int j = 0; j < sys.m; ++j) d[sys.forced_coord] += u[j];
  return d;
}

using InputFn = std::function<Vec(double)>;

/// Classical four-stage Runge-Kutta step.
inline Vec rk4_step(const SystemSpec& sys, const Vec& x, const InputFn& u_of_t, double t, double dt) {
  require(dt > 0.0, "rk4_step needs dt > 0");
  auto stage = [&](int idx, const Vec& xs, double ts) {
    Vec k = eval_vector_field(sys, xs, u_of_t(ts));
    if (!all_finite(k))
      throw NumericDomainError("non-finite RK4 stage " + std::to_string(idx) + " at t=" + std::to_string(t));
    return k;
  };
  const Vec k1 = stage(1, x, t);
  const Vec k2 = stage(2, x + 0.5 * dt * k1, t + 0.5 * dt);
  const Vec k3 = stage(3, x + 0.5 * dt * k2, t + 0.5 * dt);
  const Vec k4 = stage(4, x + dt * k3, t + dt);
  return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

/// Seeded time series. Rows of `states`, `inputs` and `outputs` are samples k = 0..N.
struct Trajectory {
  double dt = 0.0;
  Vec times;
  Mat states;
  Mat inputs;
  Mat outputs;
  Vec x0;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  InputSignal signal;

  Eigen::Index length() const { return times.size(); }
};

/// Steps of a horizon, requiring horizon/dt to be a positive integer.
inline long step_count(double dt, double horizon) {
  require(dt > 0.0, "dt must be positive");
  const double q = horizon / dt;
  const long n = std::lround(q);
  require(n > 0 && std::abs(q - static_cast<double>(n)) < 1e-9 * std::max(1.0, q),
          "horizon/dt must be a positive integer");
  return n;
}

/// RK4 with additive process noise sigma*sqrt(dt)*xi after each step and
/// measurement noise sigma*eta on the outputs. Noise is keyed by (seed, step, coordinate).
inline Trajectory simulate(const SystemSpec& sys, const Vec& x0, const InputSignal& signal, double dt,
                           double horizon, double sigma, std::uint64_t seed) {
  require(x0.size() == sys.n_x, "initial state dimension mismatch");
  require(sigma >= 0.0, "noise sigma must be non-negative");
  const long n = step_count(dt, horizon);
  const CounterRng process(seed, Channel::process_noise);
  const CounterRng measure(seed, Channel::measurement_noise);
  const double guard = 1e3 * sys.domain_diameter();
  const InputFn u_of_t = [&](double t) { return Vec::Constant(sys.m, eval_signal(signal, t)); };

  Trajectory tr;
  tr.dt = dt;
  tr.x0 = x0;
  tr.noise_sigma = sigma;
  tr.seed = seed;
  tr.signal = signal;
  tr.times.resize(n + 1);
  tr.states.resize(n + 1, sys.n_x);
  tr.inputs.resize(n + 1, sys.m);
  tr.outputs.resize(n + 1, sys.n_y);

  Vec x = x0;
  const double proc_scale = sigma * std::sqrt(dt);
  for (long k = 0; k <= n; ++k) {
    const double t = static_cast<double>(k) * dt;
    tr.times[k] = t;
    tr.states.row(k) = x.transpose();
    for (int j = 0; j < sys.m; ++j) tr.inputs(k, j) = eval_signal(signal, t);
    Vec y = sys.output(x);
    if (sigma > 0.0)
      for (int j = 0; j < sys.n_y; ++j)
        y[j] += sigma * measure.normal_at(static_cast<std::uint64_t>(k * sys.n_y + j));
    tr.outputs.row(k) = y.transpose();
    if (k == n) break;
    x = rk4_step(sys, x, u_of_t, t, dt);
    if (sigma > 0.0)
      for (int i = 0; i < sys.n_x; ++i)
        x[i] += proc_scale * process.normal_at(static_cast<std::uint64_t>(k * sys.n_x + i));
    if (!all_finite(x) || x.cwiseAbs().maxCoeff() > guard)
      throw DivergenceError(sys.name + " trajectory diverged at step " + std::to_string(k + 1), k + 1);
  }
  return tr;
}

/// Uniform i.i.d. draws from the domain box. A zero-width interval is rejected
/// unless `allow_degenerate` (test mode) is set.
inline std::vector<Vec> sample_initial_conditions(const SystemSpec& sys, int count, std::uint64_t seed,
                                                  bool allow_degenerate = false) {
  require(count >= 1, "sample count must be at least 1");
  require(static_cast<int>(sys.domain.size()) == sys.n_x, "domain box must have n_x intervals");
  for (const auto& iv : sys.domain)
    require(iv.hi > iv.lo || (allow_degenerate && iv.hi == iv.lo), "degenerate domain interval");
  CounterRng rng(seed, Channel::initial_condition);
  std::vector<Vec> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int c = 0; c < count; ++c) {
    Vec x(sys.n_x);
    for (int i = 0; i < sys.n_x; ++i) x[i] = rng.uniform(sys.domain[i].lo, sys.domain[i].hi);
    out.push_back(std::move(x));
  }
  return out;
}

/// A generated dataset. Trajectory i uses the trajectory seed `seed + i` for its
/// initial condition, input signal and noise, so a set covers the seed range
/// [seed, seed + count - 1].
struct TrajectorySet {
  std::string system;
  int n_x = 0, n_y = 0, m = 0;
  double dt = 0.05;
  double horizon = 50.0;
  double sigma = 0.0;
  std::uint64_t seed = 0;
  std::vector<Trajectory> trajectories;

  std::uint64_t seed_lo() const { return seed; }
  std::uint64_t seed_hi() const { return seed + (trajectories.empty() ? 0 : trajectories.size() - 1); }
};

inline TrajectorySet generate_dataset(const SystemSpec& sys, SignalKind regime, int count, std::uint64_t seed,
                                      double dt, double horizon, double sigma, int threads = 1) {
  require(count >= 1, "dataset needs at least one trajectory");
  TrajectorySet set;
  set.system = sys.name;
  set.n_x = sys.n_x, set.n_y = sys.n_y, set.m = sys.m;
  set.dt = dt, set.horizon = horizon, set.sigma = sigma, set.seed = seed;
  set.trajectories.resize(static_cast<std::size_t>(count));
  parallel_for(set.trajectories.size(), threads, [&](std::size_t i) {
    const std::uint64_t ts = seed + i;
    const Vec x0 = sample_initial_conditions(sys, 1, ts).front();
    set.trajectories[i] = simulate(sys, x0, sample_signal(regime, ts), dt, horizon, sigma, ts);
  });
  return set;
}

// ---- HKKL container ---------------------------------------------------------

inline constexpr std::uint16_t kDatasetVersion = 1;

inline void write_signal(std::ostream& os, const InputSignal& s) {
  io::put<std::uint8_t>(os, static_cast<std::uint8_t>(s.kind));
  io::put<std::uint8_t>(os, static_cast<std::uint8_t>(s.components.size()));
  io::put<double>(os, s.offset);
  for (const auto& c : s.components) {
    io::put<double>(os, c.amplitude);
    io::put<double>(os, c.omega);
    io::put<double>(os, c.phase);
  }
}

inline InputSignal read_signal(std::istream& is) {
  InputSignal s;
  const auto kind = io::get<std::uint8_t>(is);
  if (kind > static_cast<std::uint8_t>(SignalKind::mixture)) throw IoError("bad signal kind in header");
  s.kind = static_cast<SignalKind>(kind);
  const auto count = io::get<std::uint8_t>(is);
  s.offset = io::get<double>(is);
  for (int c = 0; c < count; ++c) {
    SineComponent comp;
    comp.amplitude = io::get<double>(is);
    comp.omega = io::get<double>(is);
    comp.phase = io::get<double>(is);
    s.components.push_back(comp);
  }
  return s;
}

/// Layout: "HKKL", u16 version, u16 name length + name bytes, u16 n_x, n_y, m,
/// f64 dt, horizon, sigma, u32 count, u64 seed; then one signal record per
/// trajectory (u8 kind, u8 component count, f64 offset, f64 A/omega/phase per
/// component); then per trajectory the row-major f64 arrays states, inputs, outputs.
inline void write_dataset(std::ostream& os, const TrajectorySet& set) {
  io::put_magic(os, "HKKL");
  io::put<std::uint16_t>(os, kDatasetVersion);
  io::put_string16(os, set.system);
  io::put<std::uint16_t>(os, static_cast<std::uint16_t>(set.n_x));
  io::put<std::uint16_t>(os, static_cast<std::uint16_t>(set.n_y));
  io::put<std::uint16_t>(os, static_cast<std::uint16_t>(set.m));
  io::put<double>(os, set.dt);
  io::put<double>(os, set.horizon);
  io::put<double>(os, set.sigma);
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(set.trajectories.size()));
  io::put<std::uint64_t>(os, set.seed);
  for (const auto& tr : set.trajectories) write_signal(os, tr.signal);
  auto put_rows = [&](const Mat& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) io::put<double>(os, m(r, c));
  };
  for (const auto& tr : set.trajectories) {
    put_rows(tr.states);
    put_rows(tr.inputs);
    put_rows(tr.outputs);
  }
}

inline TrajectorySet read_dataset(std::istream& is) {
  io::expect_magic(is, "HKKL");
  const auto version = io::get<std::uint16_t>(is);
  if (version != kDatasetVersion) throw IoError("unsupported dataset version " + std::to_string(version));
  TrajectorySet set;
  set.system = io::get_string16(is);
  set.n_x = io::get<std::uint16_t>(is);
  set.n_y = io::get<std::uint16_t>(is);
  set.m = io::get<std::uint16_t>(is);
  set.dt = io::get<double>(is);
  set.horizon = io::get<double>(is);
  set.sigma = io::get<double>(is);
  const auto count = io::get<std::uint32_t>(is);
  set.seed = io::get<std::uint64_t>(is);
  long n = 0;
  try {
    n = step_count(set.dt, set.horizon);
  } catch (const ContractViolation& e) {
    throw IoError(std::string("corrupt dataset header: ") + e.what());
  }
  if (n > 100000000) throw IoError("corrupt dataset header: implausible step count");
  for (std::uint32_t i = 0; i < count; ++i) {
    Trajectory tr;
    tr.signal = read_signal(is);
    set.trajectories.push_back(std::move(tr));
  }
  auto get_rows = [&](Mat& m, int cols) {
    m.resize(n + 1, cols);
    for (long r = 0; r <= n; ++r)
      for (int c = 0; c < cols; ++c) m(r, c) = io::get<double>(is);
  };
  for (std::uint32_t i = 0; i < count; ++i) {
    auto& tr = set.trajectories[i];
    tr.dt = set.dt;
    tr.noise_sigma = set.sigma;
    tr.seed = set.seed + i;
    tr.times.resize(n + 1);
    for (long k = 0; k <= n; ++k) tr.times[k] = static_cast<double>(k) * set.dt;
    get_rows(tr.states, set.n_x);
    get_rows(tr.inputs, set.m);
    get_rows(tr.outputs, set.n_y);
    tr.x0 = tr.states.row(0).transpose();
  }
  return set;
}

inline void save_dataset(const std::string& path, const TrajectorySet& set) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_dataset(os, set);
  if (!os) throw IoError("write failed: " + path);
}

inline TrajectorySet load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open dataset " + path);
  return read_dataset(is);
}

/// Columns t, x1..x_nx, u1..u_m, y1..y_ny.
inline void write_trajectory_csv(std::ostream& os, const Trajectory& tr) {
  const auto nx = tr.states.cols(), m = tr.inputs.cols(), ny = tr.outputs.cols();
  os << "t";
  for (Eigen::Index i = 0; i < nx; ++i) os << ",x" << i + 1;
  for (Eigen::Index i = 0; i < m; ++i) os << ",u" << i + 1;
  for (Eigen::Index i = 0; i < ny; ++i) os << ",y" << i + 1;
  os << '\n';
  os.precision(17);
  for (Eigen::Index k = 0; k < tr.length(); ++k) {
    os << tr.times[k];
    for (Eigen::Index i = 0; i < nx; ++i) os << ',' << tr.states(k, i);
    for (Eigen::Index i = 0; i < m; ++i) os << ',' << tr.inputs(k, i);
    for (Eigen::Index i = 0; i < ny; ++i) os << ',' << tr.outputs(k, i);
    os << '\n';
  }
}

}  // namespace hyperkkl
