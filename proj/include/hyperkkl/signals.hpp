#pragma once

// Exogenous input families and their curriculum difficulty score.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "hyperkkl/error.hpp"
#include "hyperkkl/rng.hpp"

namespace hyperkkl {

enum class SignalKind : std::uint8_t { zero = 0, constant = 1, sinusoid = 2, square = 3, mixture = 4 };

inline std::string_view to_string(SignalKind k) {
  switch (k) {
    case SignalKind::zero: return "zero";
    case SignalKind::constant: return "constant";
    case SignalKind::sinusoid: return "sin";
    case SignalKind::square: return "square";
    case SignalKind::mixture: return "mixture";
  }
  return "?";
}

inline SignalKind parse_regime(std::string_view s) {
  if (s == "zero") return SignalKind::zero;
  if (s == "constant" || s == "const") return SignalKind::constant;
  if (s == "sin" || s == "sinusoid") return SignalKind::sinusoid;
  if (s == "square" || s == "sqr") return SignalKind::square;
  if (s == "mixture") return SignalKind::mixture;
  throw ConfigError("unknown input regime '" + std::string(s) +
                    "' (expected zero|constant|sin|square|mixture)");
}

struct SineComponent {
  double amplitude = 0.0;
  double omega = 0.0;  // rad/s
  double phase = 0.0;  // rad

  friend bool operator==(const SineComponent&, const SineComponent&) = default;
};

/// Parametric scalar input u(t). Sinusoid and square use exactly one entry in
/// `components`; mixture uses two or more; zero and constant use none.
struct InputSignal {
  SignalKind kind = SignalKind::zero;
  double offset = 0.0;
  std::vector<SineComponent> components;

  static InputSignal zero() { return {}; }
  static InputSignal constant(double c) { return {SignalKind::constant, c, {}}; }
  static InputSignal sinusoid(double a, double omega, double phase, double c = 0.0) {
    return {SignalKind::sinusoid, c, {{a, omega, phase}}};
  }
  static InputSignal square(double a, double omega, double phase, double c = 0.0) {
    return {SignalKind::square, c, {{a, omega, phase}}};
  }
  static InputSignal mixture(std::vector<SineComponent> comps) {
    require(comps.size() >= 2, "mixture needs at least two components");
    for (std::size_t i = 0; i < comps.size(); ++i)
      for (std::size_t j = i + 1; j < comps.size(); ++j)
        require(comps[i].omega != comps[j].omega, "mixture frequencies must be distinct");
    return {SignalKind::mixture, 0.0, std::move(comps)};
  }

  friend bool operator==(const InputSignal&, const InputSignal&) = default;
};

/// Point evaluation. Total for t >= 0; sign(0) is taken as +1 for square waves.
inline double eval_signal(const InputSignal& s, double t) {
  switch (s.kind) {
    case SignalKind::zero:
      return 0.0;
    case SignalKind::constant:
      return s.offset;
    case SignalKind::sinusoid: {
      const auto& c = s.components.front();
      return c.amplitude * std::sin(c.omega * t + c.phase) + s.offset;
    }
    case SignalKind::square: {
      const auto& c = s.components.front();
      const double v = std::sin(c.omega * t + c.phase);
      return (v >= 0.0 ? c.amplitude : -c.amplitude) + s.offset;
    }
    case SignalKind::mixture: {
      double u = 0.0;
      for (const auto& c : s.components) u += c.amplitude * std::sin(c.omega * t + c.phase);
      return u;
    }
  }
  return 0.0;
}

/// Draws a random signal of the requested family. Ranges: constant c ~ U[-1,1];
/// sinusoid/square A ~ U[0.2,1], omega ~ U[0.2,2], phase ~ U[0,2pi); mixture
/// has 2-4 components with omega ~ U[0.2,4] and amplitudes shrunk by the
/// component count.
inline InputSignal sample_signal(SignalKind regime, std::uint64_t seed) {
  CounterRng rng(seed, Channel::signal, static_cast<std::uint64_t>(regime));
  constexpr double two_pi = 2.0 * std::numbers::pi;
  switch (regime) {
    case SignalKind::zero:
      return InputSignal::zero();
    case SignalKind::constant:
      return InputSignal::constant(rng.uniform(-1.0, 1.0));
    case SignalKind::sinusoid:
    case SignalKind::square: {
      const double a = rng.uniform(0.2, 1.0);
      const double w = rng.uniform(0.2, 2.0);
      const double p = rng.uniform(0.0, two_pi);
      return regime == SignalKind::sinusoid ? InputSignal::sinusoid(a, w, p)
                                            : InputSignal::square(a, w, p);
    }
    case SignalKind::mixture: {
      const std::size_t count = 2 + rng.below(3);
      std::vector<SineComponent> comps;
      while (comps.size() < count) {
        SineComponent c{rng.uniform(0.2, 1.0) / static_cast<double>(count),
                        rng.uniform(0.2, 4.0), rng.uniform(0.0, two_pi)};
        const bool dup = std::any_of(comps.begin(), comps.end(),
                                     [&](const SineComponent& o) { return o.omega == c.omega; });
        if (!dup) comps.push_back(c);
      }
      return InputSignal::mixture(std::move(comps));
    }
  }
  return InputSignal::zero();
}

/// Samples u at t-(w-1)dt, ..., t (oldest first); negative times clamp to 0.
inline std::vector<double> signal_window(const InputSignal& s, double t, int w, double dt) {
  require(w >= 1, "signal window length must be positive");
  std::vector<double> out(static_cast<std::size_t>(w));
  for (int j = 0; j < w; ++j) {
    const double tj = t - static_cast<double>(w - 1 - j) * dt;
    out[static_cast<std::size_t>(j)] = eval_signal(s, std::max(0.0, tj));
  }
  return out;
}

struct DifficultyScore {
  double dominant_freq = 0.0;  // rad/s
  double mean_rate = 0.0;      // input units / s
  int level = 0;
};

/// Curriculum levels: 0 zero, 1 constant, 2 sinusoid with omega <= 1,
/// 3 faster sinusoid or square wave, 4 mixture.
inline int difficulty_level(SignalKind kind, double dominant_freq) {
  switch (kind) {
    case SignalKind::zero: return 0;
    case SignalKind::constant: return 1;
    case SignalKind::sinusoid: return dominant_freq <= 1.0 ? 2 : 3;
    case SignalKind::square: return 3;
    case SignalKind::mixture: return 4;
  }
  return 0;
}

inline constexpr int kCurriculumLevels = 4;

inline DifficultyScore difficulty(const InputSignal& s, double dt, double horizon) {
  require(dt > 0.0 && horizon > 0.0, "difficulty needs positive dt and horizon");
  DifficultyScore d;
  for (const auto& c : s.components) d.dominant_freq = std::max(d.dominant_freq, c.omega);
  const auto n = static_cast<long>(std::llround(horizon / dt));
  if (n >= 1 && s.kind != SignalKind::zero && s.kind != SignalKind::constant) {
    double acc = 0.0;
    double prev = eval_signal(s, 0.0);
    for (long k = 1; k <= n; ++k) {
      const double cur = eval_signal(s, static_cast<double>(k) * dt);
      acc += std::abs(cur - prev) / dt;
      prev = cur;
    }
    d.mean_rate = acc / static_cast<double>(n);
  }
  d.level = difficulty_level(s.kind, d.dominant_freq);
  return d;
}

}  // namespace hyperkkl
