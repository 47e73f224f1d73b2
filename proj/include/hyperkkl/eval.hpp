#pragma once

// Observer simulation for every variant, RMSE / SMAPE with transient discard,
// the benchmark grid and its CSV / SVG outputs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "hyperkkl/dynamics.hpp"
#include "hyperkkl/error.hpp"
#include "hyperkkl/hypernet.hpp"
#include "hyperkkl/kkl.hpp"
#include "hyperkkl/model.hpp"
#include "hyperkkl/parallel.hpp"
#include "hyperkkl/signals.hpp"

namespace hyperkkl {

struct Estimate {
  Mat z;  // latent, rows k = 0..N
  Mat x;  // decoded state
};

/// Simulates the latent observer from z(0) = 0 with the measured outputs and
/// decodes every step with the variant's decoder. Each step only reads samples
/// up to k, so estimates are causal.
inline Estimate run_observer(const ObserverModel& m, const Trajectory& tr) {
  const SystemSpec sys = m.system_spec();
  if (tr.outputs.cols() != sys.n_y || tr.states.cols() != sys.n_x || tr.inputs.cols() != sys.m)
    throw ContractViolation("trajectory dimensions do not match the '" + m.system + "' checkpoint");
  require(tr.length() >= 1 && tr.dt > 0.0, "trajectory is empty");
  const Eigen::Index n = tr.length();
  Estimate est;

  if (m.variant == Variant::static_hyper) {
    require(m.injection.has_value(), "static variant checkpoint has no injection network");
    const InjectionSpec& spec = *m.injection;
    std::vector<double> gates(static_cast<std::size_t>(n));
    std::vector<Vec> ctx(static_cast<std::size_t>(n));
    for (Eigen::Index k = 0; k < n; ++k) {
      const Mat w = window_at(tr.inputs, k, spec.window);
      gates[k] = input_gate(w, spec.tau);
      if (gates[k] != 0.0) ctx[k] = lstm_final_state(m.xi, kInjLstm, spec.lstm, w);
    }
    const double ls = m.maps.latent_scale;
    est.z = simulate_latent(m.obs, tr.outputs, tr.dt, [&](long k, const Vec& zs, Vec& dz) {
      if (gates[k] != 0.0) dz += static_injection(m.xi, spec, zs, ctx[k], gates[k], ls);
    });
  } else {
    est.z = simulate_latent(m.obs, tr.outputs, tr.dt);
  }

  est.x.resize(n, sys.n_x);
  for (Eigen::Index k = 0; k < n; ++k) {
    const Vec zk = est.z.row(k).transpose();
    Vec xk;
    if (m.variant == Variant::dynamic_hyper) {
      require(m.hyper.has_value(), "dynamic variant checkpoint has no hypernetwork");
      const HyperNetSpec& spec = *m.hyper;
      const Mat w = window_at(tr.inputs, k, spec.window);
      const double g = input_gate(w, spec.tau);
      if (g == 0.0) {
        xk = decode_row(m.maps, m.phi, zk);
      } else {
        const Vec delta = g * head_output(m.psi, spec, false, lstm_final_state(m.psi, kHyperLstm, spec.lstm, w));
        xk = decode_row(m.maps, m.phi, zk, delta.data());
      }
    } else {
      xk = decode_row(m.maps, m.phi, zk);
    }
    if (!xk.allFinite()) throw NumericDomainError("non-finite state estimate at step " + std::to_string(k));
    est.x.row(k) = xk.transpose();
  }
  return est;
}

// ---- metrics -----------------------------------------------------------------------

inline Eigen::Index transient_skip(Eigen::Index n, double frac) {
  require(frac >= 0.0 && frac < 1.0, "transient fraction must be in [0, 1)");
  const auto skip = static_cast<Eigen::Index>(std::ceil(frac * static_cast<double>(n)));
  if (skip >= n) throw ContractViolation("no samples left after the transient discard");
  return skip;
}

/// sqrt of the mean squared Euclidean error over the retained steps.
inline double rmse(const Mat& x, const Mat& x_hat, double transient_frac = 0.05) {
  require(x.rows() == x_hat.rows() && x.cols() == x_hat.cols(), "rmse: sequences are not aligned");
  const Eigen::Index s = transient_skip(x.rows(), transient_frac);
  const Eigen::Index n = x.rows() - s;
  return std::sqrt((x.bottomRows(n) - x_hat.bottomRows(n)).rowwise().squaredNorm().sum() / static_cast<double>(n));
}

/// 100 * mean over retained steps and coordinates of 2|x - x^| / (|x| + |x^| + 1e-8).
inline double smape(const Mat& x, const Mat& x_hat, double transient_frac = 0.05) {
  require(x.rows() == x_hat.rows() && x.cols() == x_hat.cols(), "smape: sequences are not aligned");
  const Eigen::Index s = transient_skip(x.rows(), transient_frac);
  const Eigen::Index n = x.rows() - s;
  const auto a = x.bottomRows(n).array();
  const auto b = x_hat.bottomRows(n).array();
  const double sum = (2.0 * (a - b).abs() / (a.abs() + b.abs() + 1e-8)).sum();
  return 100.0 * sum / static_cast<double>(a.size());
}

// ---- benchmark ------------------------------------------------------------------------

inline constexpr SignalKind kEvalRegimes[] = {SignalKind::zero, SignalKind::constant, SignalKind::sinusoid,
                                              SignalKind::square};

struct CellResult {
  std::string system;
  Variant variant = Variant::autonomous;
  SignalKind regime = SignalKind::zero;
  double rmse = 0.0, smape = 0.0;
  double rmse_std = 0.0, smape_std = 0.0;
  int n = 0;
  std::uint64_t seed_lo = 0, seed_hi = 0;
};

struct EvalReport {
  std::vector<CellResult> cells;
  double transient = 0.05;
};

struct BenchmarkConfig {
  std::vector<SignalKind> regimes{std::begin(kEvalRegimes), std::end(kEvalRegimes)};
  int n_test = 20;
  std::uint64_t seed = 1000000;  // first test seed; regime r uses [seed + r*n_test, ...]
  double dt = 0.05;
  double horizon = 50.0;
  double sigma = 0.01;
  double transient = 0.05;
  int threads = 1;
};

inline std::uint64_t regime_seed(const BenchmarkConfig& cfg, std::size_t r) {
  return cfg.seed + static_cast<std::uint64_t>(r) * static_cast<std::uint64_t>(cfg.n_test);
}

/// Test set for regime index r of the grid.
inline TrajectorySet test_set(const SystemSpec& sys, const BenchmarkConfig& cfg, std::size_t r) {
  return generate_dataset(sys, cfg.regimes.at(r), cfg.n_test, regime_seed(cfg, r), cfg.dt, cfg.horizon, cfg.sigma,
                          cfg.threads);
}

/// Refuses test seeds that intersect any training seed range of the model.
inline void check_seed_disjoint(const ObserverModel& m, const SeedRange& test) {
  for (const auto& tr : m.train_seeds)
    if (tr.intersects(test))
      throw ConfigError("test seeds [" + std::to_string(test.lo) + ", " + std::to_string(test.hi) +
                        "] intersect training seeds [" + std::to_string(tr.lo) + ", " + std::to_string(tr.hi) +
                        "] of the " + to_string(m.variant) + " checkpoint");
}

inline CellResult evaluate_cell(const ObserverModel& m, const TrajectorySet& set, SignalKind regime,
                                double transient, int threads = 1) {
  check_seed_disjoint(m, {set.seed_lo(), set.seed_hi()});
  const std::size_t n = set.trajectories.size();
  require(n >= 1, "evaluation set is empty");
  std::vector<double> r(n), s(n);
  parallel_for(n, threads, [&](std::size_t i) {
    const Trajectory& tr = set.trajectories[i];
    const Estimate e = run_observer(m, tr);
    r[i] = rmse(tr.states, e.x, transient);
    s[i] = smape(tr.states, e.x, transient);
  });
  auto mean_std = [](const std::vector<double>& v, double& mean, double& sd) {
    mean = 0.0;
    for (double a : v) mean += a;
    mean /= static_cast<double>(v.size());
    double acc = 0.0;
    for (double a : v) acc += (a - mean) * (a - mean);
    sd = v.size() > 1 ? std::sqrt(acc / static_cast<double>(v.size() - 1)) : 0.0;
  };
  CellResult c;
  c.system = m.system;
  c.variant = m.variant;
  c.regime = regime;
  mean_std(r, c.rmse, c.rmse_std);
  mean_std(s, c.smape, c.smape_std);
  c.n = static_cast<int>(n);
  c.seed_lo = set.seed_lo();
  c.seed_hi = set.seed_hi();
  return c;
}

/// Grid over the given models (one per variant, all for the same system) and
/// the configured regimes, in (variant, regime) order.
inline EvalReport benchmark(const std::vector<const ObserverModel*>& models, const BenchmarkConfig& cfg) {
  require(!models.empty(), "benchmark needs at least one checkpoint");
  require(cfg.n_test >= 1, "n_test must be at least 1");
  const std::string system = models.front()->system;
  for (const auto* m : models)
    if (m->system != system) throw ConfigError("benchmark checkpoints are for different systems");
  std::vector<const ObserverModel*> sorted = models;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const auto* a, const auto* b) { return static_cast<int>(a->variant) < static_cast<int>(b->variant); });
  for (std::size_t i = 1; i < sorted.size(); ++i)
    if (sorted[i]->variant == sorted[i - 1]->variant)
      throw ConfigError("two checkpoints given for variant " + to_string(sorted[i]->variant));
  const SystemSpec sys = systems::by_name(system);
  EvalReport rep;
  rep.transient = cfg.transient;
  std::vector<TrajectorySet> sets;
  for (std::size_t r = 0; r < cfg.regimes.size(); ++r) sets.push_back(test_set(sys, cfg, r));
  for (const auto* m : sorted)
    for (std::size_t r = 0; r < cfg.regimes.size(); ++r)
      rep.cells.push_back(evaluate_cell(*m, sets[r], cfg.regimes[r], cfg.transient, cfg.threads));
  return rep;
}

/// Models keyed by variant must cover `wanted`; otherwise a ConfigError lists the gaps.
inline void require_variants(const std::map<Variant, const ObserverModel*>& have, const std::vector<Variant>& wanted) {
  std::string gap;
  for (Variant v : wanted)
    if (!have.count(v)) gap += (gap.empty() ? "" : ", ") + to_string(v);
  if (!gap.empty()) throw ConfigError("missing checkpoint for variant(s): " + gap);
}

// ---- outputs ----------------------------------------------------------------------

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline void write_report_csv(std::ostream& os, const EvalReport& rep) {
  os << "system,variant,regime,rmse,smape,n,seed_lo,seed_hi\n";
  for (const auto& c : rep.cells)
    os << c.system << ',' << to_string(c.variant) << ',' << to_string(c.regime) << ',' << format_double(c.rmse) << ','
       << format_double(c.smape) << ',' << c.n << ',' << c.seed_lo << ',' << c.seed_hi << '\n';
}

/// Plain-text table with per-cell standard deviations.
inline void write_report_table(std::ostream& os, const EvalReport& rep) {
  os << std::left << std::setw(11) << "system" << std::setw(12) << "variant" << std::setw(10) << "regime"
     << std::setw(22) << "rmse (sd)" << "smape % (sd)\n";
  for (const auto& c : rep.cells) {
    std::ostringstream r, s;
    r << std::fixed << std::setprecision(4) << c.rmse << " (" << c.rmse_std << ")";
    s << std::fixed << std::setprecision(2) << c.smape << " (" << c.smape_std << ")";
    os << std::left << std::setw(11) << c.system << std::setw(12) << to_string(c.variant) << std::setw(10)
       << to_string(c.regime) << std::setw(22) << r.str() << s.str() << '\n';
  }
}

inline std::string plot_name(const std::string& system, Variant v, SignalKind regime) {
  return system + "_" + to_string(v) + "_" + std::string(to_string(regime)) + ".svg";
}

/// Stacked panels: one per state coordinate (truth and estimate polylines)
/// and a final input-trace panel.
inline void write_svg(std::ostream& os, const Trajectory& tr, const Mat& x_hat, const std::string& title) {
  require(x_hat.rows() == tr.states.rows() && x_hat.cols() == tr.states.cols(), "plot: estimate not aligned");
  const int nx = static_cast<int>(tr.states.cols());
  const double w = 720, ph = 140, left = 60, right = 20, top = 30, gap = 20;
  const int panels = nx + 1;
  const double height = top + panels * (ph + gap);
  const Eigen::Index n = tr.length();
  const double t0 = tr.times[0], t1 = std::max(tr.times[n - 1], t0 + 1e-12);
  auto fmt = [](double v) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << v;
    return s.str();
  };
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << height << "\" viewBox=\"0 0 "
     << w << ' ' << height << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << left << "\" y=\"18\" font-family=\"sans-serif\" font-size=\"13\">" << title << "</text>\n";
  auto panel = [&](int p, const std::vector<std::pair<Vec, std::string>>& series, const std::string& label) {
    const double y0 = top + p * (ph + gap);
    double lo = series.front().first.minCoeff(), hi = series.front().first.maxCoeff();
    for (const auto& s : series) {
      lo = std::min(lo, s.first.minCoeff());
      hi = std::max(hi, s.first.maxCoeff());
    }
    if (hi - lo < 1e-9) {
      lo -= 0.5;
      hi += 0.5;
    }
    os << "<g>\n<rect x=\"" << left << "\" y=\"" << y0 << "\" width=\"" << (w - left - right) << "\" height=\"" << ph
       << "\" fill=\"none\" stroke=\"#999\"/>\n"
       << "<text x=\"8\" y=\"" << fmt(y0 + ph / 2) << "\" font-family=\"sans-serif\" font-size=\"12\">" << label
       << "</text>\n";
    for (const auto& [v, color] : series) {
      os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1\" points=\"";
      for (Eigen::Index k = 0; k < n; ++k) {
        const double px = left + (tr.times[k] - t0) / (t1 - t0) * (w - left - right);
        const double py = y0 + ph - (v[k] - lo) / (hi - lo) * ph;
        os << fmt(px) << ',' << fmt(py) << (k + 1 < n ? " " : "");
      }
      os << "\"/>\n";
    }
    os << "</g>\n";
  };
  for (int i = 0; i < nx; ++i)
    panel(i, {{tr.states.col(i), "#1f77b4"}, {x_hat.col(i), "#d62728"}}, "x" + std::to_string(i + 1));
  panel(nx, {{tr.inputs.col(0), "#2ca02c"}}, "u");
  os << "</svg>\n";
}

}  // namespace hyperkkl
